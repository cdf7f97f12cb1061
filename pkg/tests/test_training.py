import json
import math

import numpy as np
import pytest

from pedfuse import data as D
from pedfuse import models as M
from pedfuse import tensor as tn
from pedfuse import training as T
from pedfuse.errors import CheckpointError, ConfigError, ContractError, NumericError


def test_bce_values_and_clamp():
    assert math.isclose(T.bce_loss([0.5], [1]).item(), math.log(2), rel_tol=1e-15)
    assert math.isclose(T.bce_value([0.9, 0.2], [1, 0]), -(math.log(0.9) + math.log(0.8)) / 2, rel_tol=1e-14)
    worst = T.bce_loss([0.0], [1]).item()
    assert math.isfinite(worst) and math.isclose(worst, -math.log(1e-12), rel_tol=1e-9)
    with pytest.raises(ContractError):
        T.bce_loss([0.5], [2])


def test_bce_gradient():
    p = tn.parameter([0.2, 0.7, 0.9])
    y = [0, 1, 1]
    T.bce_loss(p, y).backward()
    expected = (-np.array(y) / p.data + (1 - np.array(y)) / (1 - p.data)) / 3
    np.testing.assert_allclose(p.grad, expected, rtol=1e-14)
    assert tn.finite_diff_check(lambda: T.bce_loss(p, y), [p]) < 1e-7


def test_l2_gradient_shift():
    w = tn.parameter([[0.5, -1.0]])
    T.l2_penalty([w], 0.01).backward()
    np.testing.assert_allclose(w.grad, 2 * 0.01 * w.data, rtol=0, atol=1e-18)
    assert T.l2_penalty([w], 0.0).item() == 0.0
    with pytest.raises(ContractError):
        T.l2_penalty([w], -1.0)


def test_l2_only_touches_head_weight():
    m = M.build(M.ModelConfig(fusion="early", hidden_dim=4, feature_dim=4, seq_len=4))
    assert T.fc_weights(m) == [m.blocks["head"].weight]


def test_adam_first_step_is_lr_sign():
    hp = T.Hyperparams(learning_rate=0.1)
    params = {"w": np.array([1.0, -2.0, 3.0])}
    state = T.AdamState()
    T.adam_step(state, params, {"w": np.array([0.5, -4.0, 1e-3])}, hp)
    np.testing.assert_allclose(params["w"], [0.9, -1.9, 2.9], rtol=0, atol=1e-6)
    assert state.step == 1
    with pytest.raises(NumericError):
        T.adam_step(state, params, {"w": np.array([np.nan, 0.0, 0.0])}, hp)


def test_adam_minimizes_quadratic():
    w = tn.parameter([3.0, -2.0])
    opt = T.Adam({"w": w}, T.Hyperparams(learning_rate=0.05))
    for _ in range(500):
        opt.zero_grad()
        tn.sum(w * w).backward()
        opt.step()
    assert np.all(np.abs(w.data) < 1e-2)


def test_hyperparams_validation():
    assert T.Hyperparams.published().learning_rate == 5e-7
    for bad in (dict(learning_rate=-1), dict(beta1=1.0), dict(batch_size=0), dict(l2_lambda=-0.1)):
        with pytest.raises(ConfigError):
            T.Hyperparams(**bad).validate()


def _setup(seed=0, n=40):
    cfg = D.SynthConfig(n_samples=n, global_=1.0, noise_sigma=0.2, feature_dim=8, seed=seed)
    ws = D.prepare_windows(D.synth_generate(cfg), T=16, overlap=0.8)
    tr, va, te = D.split(ws, (0.6, 0.2, 0.2), seed=0)
    model = M.build(M.resolve_variant("Ours5", hidden_dim=8, feature_dim=8, seq_len=16))
    return model, tr, va, te


def test_training_lowers_loss_and_tracks_best():
    model, tr, va, _ = _setup()
    hist = T.train(model, tr, va, T.Hyperparams(epochs=6, batch_size=8, learning_rate=1e-2))
    assert len(hist) == 6 and hist.train_loss[-1] < hist.train_loss[0]
    assert hist.best_epoch == 1 + int(np.argmin(hist.val_loss))
    assert hist.to_csv().splitlines()[0] == ",".join(T.HISTORY_COLUMNS)


def test_zero_epochs_and_empty_set():
    model, tr, va, _ = _setup(n=10)
    hist = T.train(model, tr, va, T.Hyperparams(epochs=0))
    assert len(hist) == 0 and hist.to_csv() == ",".join(T.HISTORY_COLUMNS) + "\n"
    with pytest.raises(ContractError):
        T.train(model, [], va, T.Hyperparams(epochs=1))


def test_no_validation_set_selects_on_training_loss():
    model, tr, _, _ = _setup(n=10)
    hist = T.train(model, tr, [], T.Hyperparams(epochs=3, batch_size=4, learning_rate=1e-2))
    assert all(r["val_loss"] is None for r in hist.rows)
    assert hist.best_epoch == 1 + int(np.argmin(hist.train_loss))


def test_early_stop_callback():
    model, tr, va, _ = _setup(n=10)
    hist = T.train(model, tr, va, T.Hyperparams(epochs=10, batch_size=4), on_epoch=lambda e, m, r: e == 2)
    assert len(hist) == 2


def test_non_finite_loss_raises():
    model, tr, va, _ = _setup(n=10)
    model.blocks["head"].bias.data[:] = np.nan
    with pytest.raises(NumericError):
        T.train(model, tr, va, T.Hyperparams(epochs=1))


def test_checkpoint_round_trip(tmp_path):
    model, tr, _, te = _setup(n=10)
    path = T.save_checkpoint(model, tmp_path / "m.json", {"epoch": 3})
    again = T.load_checkpoint(path)
    bundle, _ = D.to_batch(te or tr)
    assert np.array_equal(model.predict(bundle), again.predict(bundle))
    assert T.checkpoint_meta(path) == {"epoch": 3}


def test_checkpoint_errors(tmp_path):
    model, *_ = _setup(n=4)
    path = T.save_checkpoint(model, tmp_path / "m.json")
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError, match="version"):
        T.load_checkpoint(path)
    doc["version"] = T.CHECKPOINT_VERSION
    doc["params"]["head.bias"]["values"] = [0.0, 1.0]
    path.write_text(json.dumps(doc))
    with pytest.raises(CheckpointError):
        T.load_checkpoint(path)
    path.write_text("garbage")
    with pytest.raises(CheckpointError):
        T.load_checkpoint(path)
