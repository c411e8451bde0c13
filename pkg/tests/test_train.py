import math

import numpy as np
import pytest

from motionid.encoders import EncodingKind
from motionid.models import nn
from motionid.models.io import dumps_model, load_model, save_model
from motionid.models.train import (ConfigError, MlpConfig, RfConfig, RnnConfig, TrainConfig,
                                   TrainingDiverged, config_from_json, config_to_json, select_snapshot,
                                   train)
from motionid.pipeline import Pipeline
from motionid.sampling import DataParams, SampleSet, Scaler


def _blobs(seed, n=60, width=5, classes=3, windowed=False):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % classes
    centers = np.random.default_rng(99).normal(scale=3, size=(classes, width))
    X = centers[y] + rng.normal(size=(n, width))
    if windowed:
        X = np.repeat(X[:, None, :], 4, axis=1) + rng.normal(scale=0.1, size=(n, 4, width))
    return SampleSet(X, y, [f"S{i}" for i in range(classes)])


@pytest.mark.parametrize("cfg", [RfConfig(20), MlpConfig(1, 16, 1e-2), RnnConfig("gru", 8, 1, 0.0, 1e-2),
                                 RnnConfig("lstm", 8, 2, 0.2, 1e-2), RnnConfig("frnn", 8, 1, 0.0, 1e-2)])
def test_learns_separable_blobs(cfg):
    windowed = cfg.family in nn.RNN_KINDS
    tr, va = _blobs(0, windowed=windowed), _blobs(1, windowed=windowed)
    model = train(cfg, tr, va, TrainConfig(max_epochs=40, batch_size=16))
    assert (model.predict(va.X) == va.y).mean() > 0.9
    assert model.snapshot["val_mean_accuracy"] > 0.9
    p = model.predict_proba(va.X)
    assert np.allclose(p.sum(1), 1.0)


def test_snapshot_is_best_epoch():
    tr, va = _blobs(0), _blobs(1)
    model = train(MlpConfig(1, 4, 1e-2), tr, va, TrainConfig(max_epochs=15, batch_size=8))
    accs = [r.val_mean_accuracy for r in model.history]
    assert model.snapshot["epoch"] == select_snapshot(accs, [r.val_loss for r in model.history])
    assert model.snapshot["val_mean_accuracy"] == max(accs)


def test_select_snapshot_ties():
    assert select_snapshot([0.2, 0.8, 0.5, 0.8]) == 2
    assert select_snapshot([0.2, 0.8, 0.5, 0.8], [1.0, 0.6, 0.5, 0.4]) == 4
    assert select_snapshot([0.2, 0.8, 0.8], [1.0, 0.5, 0.5]) == 2


def test_deterministic():
    tr, va = _blobs(0, windowed=True), _blobs(1, windowed=True)
    cfg = RnnConfig("lstm", 6, 2, 0.3, 1e-2, seed=3)
    a = train(cfg, tr, va, TrainConfig(max_epochs=3, batch_size=16))
    b = train(cfg, tr, va, TrainConfig(max_epochs=3, batch_size=16))
    assert dumps_model(a) == dumps_model(b)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_immediately():
    tr, va = _blobs(0), _blobs(1)
    tiny = Scaler(np.zeros(5), np.full(5, 1e-320))
    with pytest.raises(TrainingDiverged, match="diverged immediately"):
        train(MlpConfig(1, 4, 1e-2), tr, va, TrainConfig(max_epochs=3), scaler=tiny)


def test_divergence_stop_after_grace(monkeypatch):
    tr, va = _blobs(0), _blobs(1)
    losses = iter([1.0] * 5 + [1.5, 2.5, 0.1, 0.1])
    real = nn.loss_and_grads

    def fake(*args, **kw):
        _, grads = real(*args, **kw)
        return next(losses), {k: np.zeros_like(v) for k, v in grads.items()}

    monkeypatch.setattr(nn, "loss_and_grads", fake)
    model = train(MlpConfig(1, 4, 1e-2), tr, va, TrainConfig(max_epochs=9, grace_epochs=5, batch_size=1000))
    assert len(model.history) == 7


def test_patience_stops_early():
    # pure-noise labels: the net memorizes the training set and validation stops improving
    rng = np.random.default_rng(0)
    tr = SampleSet(rng.normal(size=(30, 5)), rng.integers(0, 3, 30), ["a", "b", "c"])
    va = SampleSet(rng.normal(size=(30, 5)), rng.integers(0, 3, 30), ["a", "b", "c"])
    model = train(MlpConfig(2, 50, 1e-2), tr, va, TrainConfig(max_epochs=200, patience=5))
    assert len(model.history) < 200
    assert len(model.history) - model.snapshot["epoch"] == 5


@pytest.mark.parametrize("bad", [
    lambda: RfConfig(10).validate(), lambda: RfConfig(100, 0).validate(),
    lambda: MlpConfig(7).validate(), lambda: MlpConfig(2, 100, 0.1).validate(),
    lambda: RnnConfig("gru", 64, 1, 0.9).validate(), lambda: RnnConfig("rnn"),
    lambda: TrainConfig(max_epochs=0).validate(), lambda: TrainConfig(dtype="float16").validate(),
])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        bad()


def test_range_message():
    with pytest.raises(ConfigError, match=r"outside allowed search range \[0.0, 0.6\]"):
        RnnConfig("gru", 64, 1, 0.9).validate()


def test_family_input_shape_checked():
    with pytest.raises(ConfigError):
        train(RnnConfig("gru", 8), _blobs(0), _blobs(1))


def test_config_json_round_trip():
    for cfg in (RfConfig(300, 5, 2), MlpConfig(3, 50, 1e-4, 1), RnnConfig("gru", 30, 2, 0.1, 1e-3, 4)):
        assert config_from_json(config_to_json(cfg)) == cfg
    assert TrainConfig.from_json(TrainConfig(patience=4).to_json()) == TrainConfig(patience=4)


@pytest.mark.parametrize("cfg", [RfConfig(5), MlpConfig(1, 6, 1e-2), RnnConfig("lstm", 5, 1, 0.0, 1e-2)])
def test_model_file_round_trip(tmp_path, cfg):
    windowed = cfg.family in nn.RNN_KINDS
    tr, va = _blobs(0, windowed=windowed), _blobs(1, windowed=windowed)
    params = DataParams.windowed(30, 4) if windowed else DataParams.binned(10)
    pipe = Pipeline(EncodingKind.BRV if windowed else EncodingKind.BR, params)
    model = train(cfg, tr, va, TrainConfig(max_epochs=3), pipeline=pipe)
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.predict_proba(va.X), model.predict_proba(va.X))
    assert back.pipeline == pipe and back.classes == model.classes
    assert dumps_model(back) == dumps_model(model)
    if cfg.family == "rf":
        assert math.isnan(back.history[0].train_loss)


def test_model_file_version_checked(tmp_path):
    (tmp_path / "m.json").write_text('{"version": 99}')
    with pytest.raises(ValueError):
        load_model(tmp_path / "m.json")


def test_single_epoch_snapshot():
    model = train(MlpConfig(1, 4, 1e-2), _blobs(0), _blobs(1), TrainConfig(max_epochs=1))
    assert model.snapshot["epoch"] == 1 and len(model.history) == 1
    assert select_snapshot([0.2, 0.5, 0.4]) == 2


def test_dropout_zero_and_inference_are_identity():
    rng = np.random.default_rng(0)
    params = nn.init_rnn(rng, "lstm", 3, 4, 3, 2)
    X = rng.normal(size=(5, 6, 3))
    plain = nn.forward("lstm", params, X)
    assert np.array_equal(nn.forward("lstm", params, X, dropout=0.0, rng=np.random.default_rng(1)), plain)
    assert np.array_equal(nn.forward("lstm", params, X, dropout=0.5), plain)
    assert not np.array_equal(nn.forward("lstm", params, X, dropout=0.5, rng=np.random.default_rng(1)), plain)
