"""Two-stage hyperparameter search: seeded random search over architecture
parameters with one-second data parameters, then a grid over data parameters."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .encoders import EncodingKind
from .models import nn
from .models.train import (MLP_RANGES, RF_RANGES, RNN_RANGES, ConfigError, MlpConfig, RfConfig,
                           RnnConfig, TrainingDiverged, config_from_json, config_to_json)
from .sampling import FPS_GRID, WINDOW_GRID, DataParams
from .seeding import derive_seed

log = logging.getLogger(__name__)

BINNED_GRID = (10, 30, 90, 180, 450, 700, 900, 1350)
WINDOWED_GRID = tuple((fps, w) for fps in FPS_GRID for w in WINDOW_GRID)
STAGE1_BINNED = DataParams.binned(90)
STAGE1_WINDOWED = DataParams.windowed(30, 30)


@dataclass(frozen=True)
class Combination:
    family: str
    encoding: EncodingKind

    def __post_init__(self):
        if self.family not in ("rf", "mlp") + nn.RNN_KINDS:
            raise ConfigError(f"unknown model family {self.family!r}")
        object.__setattr__(self, "encoding", EncodingKind(self.encoding))

    @property
    def windowed(self) -> bool:
        return self.family in nn.RNN_KINDS

    @property
    def tag(self) -> str:
        return f"{self.family}+{self.encoding.value}"

    @classmethod
    def parse(cls, tag: str) -> "Combination":
        family, _, enc = tag.partition("+")
        if not enc:
            raise ConfigError(f"combination must look like 'lstm+br', got {tag!r}")
        try:
            return cls(family.lower(), EncodingKind(enc.lower()))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _log_uniform(rng, lo, hi) -> float:
    return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))


def _int(rng, lo, hi) -> int:
    return int(rng.integers(lo, hi + 1))


def sample_config(family: str, rng: np.random.Generator, seed: int = 0):
    """One architecture config drawn from the allowed ranges: log-uniform
    learning rates, uniform integers, uniform dropout."""
    if family == "rf":
        return RfConfig(_int(rng, *RF_RANGES["n_estimators"]), _int(rng, *RF_RANGES["min_samples_leaf"]), seed)
    if family == "mlp":
        return MlpConfig(_int(rng, *MLP_RANGES["layers"]), _int(rng, *MLP_RANGES["layer_size"]),
                         _log_uniform(rng, *MLP_RANGES["learning_rate"]), seed)
    if family in nn.RNN_KINDS:
        return RnnConfig(family, _int(rng, *RNN_RANGES["hidden_size"]), _int(rng, *RNN_RANGES["layers"]),
                         float(rng.uniform(*RNN_RANGES["dropout"])),
                         _log_uniform(rng, *RNN_RANGES["learning_rate"]), seed)
    raise ConfigError(f"unknown model family {family!r}")


def stage1_params(comb: Combination) -> DataParams:
    return STAGE1_WINDOWED if comb.windowed else STAGE1_BINNED


def data_grid(comb: Combination) -> list[DataParams]:
    if comb.windowed:
        return [DataParams.windowed(fps, w) for fps, w in WINDOWED_GRID]
    return [DataParams.binned(f) for f in BINNED_GRID]


@dataclass
class Trial:
    index: int
    combination: str
    stage: int
    config: dict
    data_params: dict
    seed: int
    objective: float = -math.inf
    status: str = "pending"
    seconds: float = 0.0

    def to_json(self) -> dict:
        d = dict(vars(self))
        d["objective"] = self.objective if math.isfinite(self.objective) else None
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Trial":
        d = dict(d)
        d["objective"] = -math.inf if d.get("objective") is None else float(d["objective"])
        return cls(**d)


@dataclass
class StudyResult:
    stage: int
    combination: str
    trials: list[Trial] = field(default_factory=list)

    def best(self) -> Trial:
        """Highest objective; the earliest trial wins ties."""
        if not self.trials:
            raise ValueError("study has no trials")
        return max(sorted(self.trials, key=lambda t: t.index), key=lambda t: t.objective)

    def best_config(self):
        return config_from_json(self.best().config)

    def to_json(self) -> dict:
        best = self.best()
        return {"version": 1, "stage": self.stage, "combination": self.combination,
                "best_trial": best.index, "best_objective": best.to_json()["objective"],
                "config": best.config, "data_params": best.data_params}


Objective = Callable[[object, DataParams], float]


def read_log(path) -> list[Trial]:
    path = Path(path)
    if not path.exists():
        return []
    trials = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            trials.append(Trial.from_json(json.loads(line)))
        except (ValueError, TypeError, KeyError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed trial record ({exc})") from None
    return trials


def _append(path, trial: Trial) -> None:
    with open(path, "a") as fh:
        fh.write(json.dumps(trial.to_json(), sort_keys=True) + "\n")
        fh.flush()


def _run_trial(trial: Trial, objective: Objective) -> Trial:
    t0 = time.perf_counter()
    try:
        value = float(objective(config_from_json(trial.config), DataParams.from_json(trial.data_params)))
        trial.objective, trial.status = value, "complete"
    except (TrainingDiverged, FloatingPointError, ValueError) as exc:
        # ValueError covers data parameters that leave no samples
        log.warning("trial %d failed: %s", trial.index, exc)
        trial.objective, trial.status = -math.inf, "failed"
    trial.seconds = time.perf_counter() - t0
    return trial


def run_trials(planned: list[Trial], objective: Objective, log_path=None, n_jobs: int = 1) -> list[Trial]:
    """Run planned trials, skipping those already complete in ``log_path``.

    A logged trial must match its planned config exactly, otherwise the log
    belongs to a different study and an error is raised.
    """
    done: dict[tuple[str, int, int], Trial] = {}
    if log_path is not None:
        for t in read_log(log_path):
            done[(t.combination, t.stage, t.index)] = t
    results, pending = {}, []
    for t in planned:
        prev = done.get((t.combination, t.stage, t.index))
        if prev is None:
            pending.append(t)
            continue
        if prev.config != t.config or prev.data_params != t.data_params:
            raise ValueError(f"trial {t.index} in {log_path} does not match this study's seed")
        results[t.index] = prev
    if pending:
        if n_jobs == 1:
            finished = (_run_trial(t, objective) for t in pending)
        else:
            from joblib import Parallel, delayed

            finished = Parallel(n_jobs=n_jobs, return_as="generator")(
                delayed(_run_trial)(t, objective) for t in pending)
        for t in finished:
            if log_path is not None:
                _append(log_path, t)
            results[t.index] = t
    return [results[t.index] for t in planned]


def plan_stage1(comb: Combination, budget: int, seed: int) -> list[Trial]:
    if budget < 1:
        raise ValueError("budget must be >= 1")
    params = stage1_params(comb).to_json()
    trials = []
    for i in range(budget):
        rng = np.random.default_rng(derive_seed(seed, "hpo", comb.tag, i))
        cfg = sample_config(comb.family, rng, derive_seed(seed, "trial", comb.tag, i) % 2**31)
        trials.append(Trial(i, comb.tag, 1, config_to_json(cfg), params, cfg.seed))
    return trials


def plan_stage2(comb: Combination, best_config, seed: int) -> list[Trial]:
    cfg_json = config_to_json(best_config)
    return [Trial(i, comb.tag, 2, cfg_json, p.to_json(), best_config.seed)
            for i, p in enumerate(data_grid(comb))]


def stage1(comb: Combination, budget: int, seed: int, objective: Objective, log_path=None,
           n_jobs: int = 1) -> StudyResult:
    return StudyResult(1, comb.tag, run_trials(plan_stage1(comb, budget, seed), objective, log_path, n_jobs))


def stage2(comb: Combination, best_config, seed: int, objective: Objective, log_path=None,
           n_jobs: int = 1) -> StudyResult:
    return StudyResult(2, comb.tag, run_trials(plan_stage2(comb, best_config, seed), objective, log_path, n_jobs))


def make_objective(pipeline_for: Callable[[DataParams], object], train_takes, val_takes, classes,
                   train_cfg, train_stride: int | None = None) -> Objective:
    """Objective returning validation MinAcc of the trained snapshot. Sample
    sets are cached per data parameters."""
    from .models.train import train
    from .evaluation import score_samples

    cache: dict = {}

    def objective(cfg, params: DataParams) -> float:
        key = json.dumps(params.to_json(), sort_keys=True)
        if key not in cache:
            pipe = pipeline_for(params)
            stride = train_stride if params.mode == "windowed" else None
            cache[key] = (pipe, pipe.sample_set(train_takes, classes, stride), pipe.sample_set(val_takes, classes))
        pipe, tr, va = cache[key]
        model = train(cfg, tr, va, train_cfg, pipeline=pipe)
        return score_samples(model, va).min_accuracy

    return objective
