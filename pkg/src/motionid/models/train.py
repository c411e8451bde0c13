"""Model configs, the mini-batch training protocol and the trained-model container."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..evaluation import mean_min_accuracy
from ..sampling import SampleSet, Scaler, apply_scaler, fit_scaler
from ..seeding import derive_seed
from . import forest, nn
from .optim import Adam, clip_global_norm

log = logging.getLogger(__name__)

FAMILIES = ("rf", "mlp") + nn.RNN_KINDS

# Allowed search ranges, checked when a config comes from a user or the sampler.
RF_RANGES = {"n_estimators": (50, 1000), "min_samples_leaf": (1, 1000)}
MLP_RANGES = {"layers": (1, 6), "layer_size": (10, 300), "learning_rate": (1e-5, 1e-2)}
RNN_RANGES = {"hidden_size": (20, 200), "layers": (1, 8), "dropout": (0.0, 0.6),
              "learning_rate": (1e-4, 1e-2)}


class TrainingDiverged(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


def _check_ranges(name: str, cfg, ranges: dict) -> None:
    for key, (lo, hi) in ranges.items():
        v = getattr(cfg, key)
        if not (lo <= v <= hi):
            raise ConfigError(f"{name}.{key}={v} outside allowed search range [{lo}, {hi}]")


@dataclass(frozen=True)
class RfConfig:
    n_estimators: int = 100
    min_samples_leaf: int = 1
    seed: int = 0
    family: str = field(default="rf", init=False)

    def validate(self) -> None:
        _check_ranges("rf", self, RF_RANGES)


@dataclass(frozen=True)
class MlpConfig:
    layers: int = 2
    layer_size: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    family: str = field(default="mlp", init=False)

    def validate(self) -> None:
        _check_ranges("mlp", self, MLP_RANGES)


@dataclass(frozen=True)
class RnnConfig:
    kind: str = "lstm"
    hidden_size: int = 64
    layers: int = 1
    dropout: float = 0.0
    learning_rate: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.kind not in nn.RNN_KINDS:
            raise ConfigError(f"unknown recurrent kind {self.kind!r}; expected one of {nn.RNN_KINDS}")

    @property
    def family(self) -> str:
        return self.kind

    def validate(self) -> None:
        _check_ranges(self.kind, self, RNN_RANGES)


ModelConfig = RfConfig | MlpConfig | RnnConfig


def config_to_json(cfg) -> dict:
    d = {k: v for k, v in asdict(cfg).items() if k != "family"}
    d["family"] = cfg.family
    return d


def config_from_json(d: dict):
    d = dict(d)
    family = d.pop("family")
    if family == "rf":
        return RfConfig(**d)
    if family == "mlp":
        return MlpConfig(**d)
    if family in nn.RNN_KINDS:
        d.setdefault("kind", family)
        return RnnConfig(**d)
    raise ConfigError(f"unknown model family {family!r}; expected one of {FAMILIES}")


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 300
    batch_size: int = 256
    grace_epochs: int = 20
    divergence_factor: float = 2.0
    clip_norm: float = 5.0
    patience: int | None = None  # optional stop after this many epochs without a new snapshot
    seed: int = 0
    dtype: str = "float64"

    def validate(self) -> None:
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.divergence_factor <= 1.0:
            raise ConfigError("divergence_factor must exceed 1")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1 when set")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mean_accuracy: float
    val_min_accuracy: float
    seconds: float
    val_loss: float = math.nan


@dataclass
class TrainedModel:
    """A fitted classifier. ``params`` holds the snapshot weights (neural
    families) and ``trees`` the forest; inputs are scaled internally."""

    family: str
    config: object
    classes: list[str]
    scaler: Scaler | None
    params: dict[str, np.ndarray] | None = None
    trees: list | None = None
    snapshot: dict = field(default_factory=dict)
    history: list[EpochRecord] = field(default_factory=list)
    pipeline: object = None

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def _prepare(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.scaler is not None:
            X = apply_scaler(self.scaler, X)
        if self.params is not None:
            X = X.astype(self.params["W_out"].dtype, copy=False)
        return X

    def predict_proba(self, X) -> np.ndarray:
        X = self._prepare(X)
        if self.family == "rf":
            return forest.forest_predict_proba(self.trees, X)
        logits = nn.predict_logits(self.family, self.params, X).astype(np.float64)
        return nn.softmax(logits)

    def predict(self, X) -> np.ndarray:
        X = self._prepare(X)
        if self.family == "rf":
            return forest.forest_predict_proba(self.trees, X).argmax(axis=1)
        return nn.predict_logits(self.family, self.params, X).argmax(axis=1)


def _init_params(cfg, n_in: int, n_classes: int, dtype) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(derive_seed(cfg.seed, "init"))
    if cfg.family == "mlp":
        params = nn.init_mlp(rng, n_in, cfg.layers, cfg.layer_size, n_classes)
    else:
        params = nn.init_rnn(rng, cfg.kind, n_in, cfg.hidden_size, cfg.layers, n_classes)
    return {k: v.astype(dtype) for k, v in params.items()}


def _check_input(cfg, X: np.ndarray) -> None:
    want = 2 if cfg.family in ("rf", "mlp") else 3
    if X.ndim != want:
        kind = "binned (n, features)" if want == 2 else "windowed (n, window, features)"
        raise ConfigError(f"{cfg.family} expects {kind} samples, got shape {X.shape}")


def train(cfg, train_set: SampleSet, val_set: SampleSet, train_cfg: TrainConfig = TrainConfig(),
          scaler: Scaler | None = None, n_jobs: int = 1, pipeline=None) -> TrainedModel:
    """Fit ``cfg`` on ``train_set``; neural families keep the parameters of the
    epoch with the best validation macro accuracy (lower validation loss, then
    the earlier epoch, on ties).

    The scaler is fitted on the training samples unless one is supplied.
    """
    train_cfg.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be non-empty")
    _check_input(cfg, train_set.X)
    classes = list(train_set.classes)
    S = len(classes)
    if scaler is None:
        scaler = fit_scaler(train_set.X)
    Xtr = apply_scaler(scaler, train_set.X)
    Xva = apply_scaler(scaler, val_set.X)
    ytr, yva = train_set.y, val_set.y

    if cfg.family == "rf":
        t0 = time.perf_counter()
        trees = forest.forest_fit(Xtr, ytr, S, cfg.n_estimators, cfg.min_samples_leaf,
                                  derive_seed(cfg.seed, "forest"), n_jobs=n_jobs)
        pred = forest.forest_predict_proba(trees, Xva).argmax(axis=1)
        mean_acc, min_acc = mean_min_accuracy(yva, pred, S)
        rec = EpochRecord(1, float("nan"), mean_acc, min_acc, time.perf_counter() - t0)
        return TrainedModel("rf", cfg, classes, scaler, trees=trees,
                            snapshot={"epoch": 1, "val_mean_accuracy": mean_acc, "val_min_accuracy": min_acc},
                            history=[rec], pipeline=pipeline)

    dtype = np.dtype(train_cfg.dtype)
    Xtr = Xtr.astype(dtype)
    Xva = Xva.astype(dtype)
    params = _init_params(cfg, Xtr.shape[-1], S, dtype)
    opt = Adam(params, cfg.learning_rate)
    shuffle_rng = np.random.default_rng(derive_seed(train_cfg.seed, "shuffle"))
    dropout_rng = np.random.default_rng(derive_seed(train_cfg.seed, "dropout"))
    dropout = getattr(cfg, "dropout", 0.0)
    is_rnn = cfg.family in nn.RNN_KINDS
    n = len(ytr)
    bs = train_cfg.batch_size

    best_params, best_key, best_epoch, best_min = None, (-1.0, -math.inf), 0, 0.0
    best_loss = math.inf
    history: list[EpochRecord] = []
    for epoch in range(1, train_cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss, grads = nn.loss_and_grads(cfg.family, params, Xtr[idx], ytr[idx],
                                            dropout=dropout, rng=dropout_rng if dropout > 0 else None)
            if not math.isfinite(loss):
                total = math.nan
                break
            total += loss * len(idx)
            if is_rnn:
                clip_global_norm(grads, train_cfg.clip_norm)
            opt.step(params, grads)
        epoch_loss = total / n
        if not math.isfinite(epoch_loss):
            if epoch == 1:
                raise TrainingDiverged("diverged immediately: non-finite loss in epoch 1")
            log.warning("epoch %d: non-finite loss, stopping", epoch)
            break
        logits = nn.predict_logits(cfg.family, params, Xva)
        val_loss, _ = nn.cross_entropy(logits.astype(np.float64), yva)
        mean_acc, min_acc = mean_min_accuracy(yva, logits.argmax(axis=1), S)
        history.append(EpochRecord(epoch, epoch_loss, mean_acc, min_acc, time.perf_counter() - t0, val_loss))
        log.debug("epoch %d loss %.5f val mean %.4f min %.4f loss %.5f", epoch, epoch_loss, mean_acc,
                  min_acc, val_loss)
        key = (mean_acc, -val_loss if math.isfinite(val_loss) else -math.inf)
        if key > best_key:
            best_key, best_min, best_epoch = key, min_acc, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        if epoch > train_cfg.grace_epochs and epoch_loss > train_cfg.divergence_factor * best_loss:
            log.info("epoch %d: train loss %.4g exceeds %.1fx best %.4g, stopping", epoch,
                     epoch_loss, train_cfg.divergence_factor, best_loss)
            break
        best_loss = min(best_loss, epoch_loss)
        if train_cfg.patience is not None and epoch - best_epoch >= train_cfg.patience:
            break

    return TrainedModel(cfg.family, cfg, classes, scaler, params=best_params,
                        snapshot={"epoch": best_epoch, "val_mean_accuracy": best_key[0],
                                  "val_min_accuracy": best_min},
                        history=history, pipeline=pipeline)


def select_snapshot(val_accuracies, val_losses=None) -> int:
    """1-based epoch with the highest validation accuracy. Ties go to the lower
    validation loss when losses are given, then to the earliest epoch."""
    if val_losses is None:
        val_losses = [0.0] * len(val_accuracies)
    keys = [(a, -l) for a, l in zip(val_accuracies, val_losses)]
    return max(range(len(keys)), key=lambda i: (keys[i], -i)) + 1
