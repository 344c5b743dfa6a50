import os

import numpy as np
import pytest

from l1l1rnn.errors import DimensionError, NumericError, ParameterError
from l1l1rnn.network import ModelParams, forward_batch, stacked_forward_batch, StackedRNNWeights
from l1l1rnn.training import (
    AdamState,
    TrainConfig,
    TrainData,
    adam_step,
    backward,
    clip_gradients,
    gradient_check,
    init_params,
    init_stacked_params,
    loss,
    model_from_raw,
    overcomplete_dct,
    raw_from_model,
    sigmoid,
    softplus,
    softplus_inv,
    stacked_backward,
    train,
)

BETA = 0.01


# ---------------------------------------------------------------------------
# scalar reparameterization

def test_softplus_inverse_round_trip():
    for y in (1e-3, 0.1, 1.0, 5.0, 20.0, 700.0):
        assert softplus(softplus_inv(y)) == pytest.approx(y, rel=1e-12)
    assert softplus(0.0) == pytest.approx(np.log(2.0))
    assert sigmoid(0.0) == 0.5
    with pytest.raises(ParameterError):
        softplus_inv(0.0)
    with pytest.raises(ParameterError):
        softplus_inv(-1.0)


def test_softplus_large_inputs_do_not_overflow():
    assert softplus(1000.0) == pytest.approx(1000.0)
    assert softplus(-1000.0) == 0.0
    assert sigmoid(1000.0) == 1.0


# ---------------------------------------------------------------------------
# initialization

def test_init_params_deterministic_and_order_pinned():
    a = init_params((3, 6, 8), 5)
    b = init_params((3, 6, 8), 5)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.D, b.D)
    # switching the dictionary init must not shift A or G
    c = init_params((3, 6, 8), 5, dict_init="uniform")
    assert np.array_equal(a.A, c.A) and np.array_equal(a.G, c.G)
    assert not np.array_equal(a.D, c.D)
    d = init_params((3, 6, 8), 5, g_init="identity")
    assert np.array_equal(a.A, d.A)
    assert np.array_equal(d.G, np.eye(8))
    assert np.array_equal(a.D, d.D)


def test_overcomplete_dct_unit_columns():
    for n, dd in ((6, 8), (16, 36), (9, 25)):
        D = overcomplete_dct(n, dd)
        assert D.shape == (n, dd)
        assert np.allclose(np.linalg.norm(D, axis=0), 1.0, atol=1e-12)
    # perfect squares get the separable build
    C = overcomplete_dct(4, 9)
    assert np.allclose(np.linalg.norm(C, axis=0), 1.0, atol=1e-12)


def test_init_stacked_params_layout():
    p = init_stacked_params((3, 6, 8), 5, K=3)
    assert p["W"].shape == (3, 8, 8) and p["S"].shape == (3, 8, 8)
    assert np.all(p["S"][0] == 0.0)
    assert np.all(p["h_init"] == 0.0)
    q = init_stacked_params((3, 6, 8), 5, K=3)
    assert all(np.array_equal(p[k], q[k]) for k in p)


# ---------------------------------------------------------------------------
# loss

def test_loss_arithmetic():
    s = np.array([[1.0, 2.0]])
    shat = np.zeros((1, 2))
    theta = {"w": np.array([3.0])}
    assert loss(s, shat, theta, 0.1) == pytest.approx(5.0 + 0.1 * 9.0, abs=1e-14)
    with pytest.raises(DimensionError):
        loss(np.zeros((1, 2)), np.zeros((2, 1)), theta, 0.0)


def test_loss_counts_scalars_of_model():
    theta = init_params((2, 4, 5), 0, alpha=2.0, lambda1=0.5, lambda2=0.25)
    s = np.zeros((4, 3))
    base = loss(s, s, theta, 0.0)
    decayed = loss(s, s, theta, 1.0)
    sq = sum(float(np.sum(arr * arr)) for arr in (theta.A, theta.D, theta.G, theta.h0))
    assert base == 0.0
    assert decayed == pytest.approx(sq + 4.0 + 0.25 + 0.0625, rel=1e-12)


# ---------------------------------------------------------------------------
# gradients, unfolded model

def _separated_instance(seed, dims=(3, 6, 8), K=2, T=3, margin_min=2e-3):
    """Model and sequence whose prox inputs sit clear of case boundaries."""
    m, n, d = dims
    for attempt in range(60):
        rng = np.random.default_rng((seed, attempt))
        theta = ModelParams(
            A=rng.normal(0.0, 0.4, (m, n)),
            D=rng.normal(0.0, 0.4, (n, d)),
            G=rng.normal(0.0, 0.4, (d, d)),
            h0=rng.normal(0.0, 0.2, d),
            alpha=1.5, lambda1=0.05, lambda2=0.03, K=K, T=T,
        )
        s = rng.normal(0.0, 1.0, (n, T))
        x = theta.A @ s
        out = forward_batch(x.T[None], theta, want_margin=True)
        if out["margin"] >= margin_min:
            return theta, x, s
    raise AssertionError("no separated instance found")


def _theta_replace(theta, **kw):
    fields = dict(A=theta.A, D=theta.D, G=theta.G, h0=theta.h0,
                  alpha=theta.alpha, lambda1=theta.lambda1,
                  lambda2=theta.lambda2, K=theta.K, T=theta.T)
    fields.update(kw)
    return ModelParams(**fields)


def test_backward_matches_finite_differences():
    theta, x, s = _separated_instance(11)

    def loss_fn(th):
        out = forward_batch(x.T[None], th)
        return loss(s.T, out["shat"][0], th, BETA)

    value, grads = backward(x, s, theta, BETA)
    assert value == pytest.approx(loss_fn(theta), rel=1e-12)

    step = 1e-6
    for name in ("A", "D", "G", "h0"):
        base = getattr(theta, name)
        fd = np.zeros_like(base)
        flat = fd.reshape(-1)
        for i in range(base.size):
            bump = np.zeros(base.size)
            bump[i] = step
            up = loss_fn(_theta_replace(theta, **{name: base + bump.reshape(base.shape)}))
            dn = loss_fn(_theta_replace(theta, **{name: base - bump.reshape(base.shape)}))
            flat[i] = (up - dn) / (2.0 * step)
        g = np.asarray(grads[name])
        rel = np.abs(g - fd) / np.maximum(1.0, np.maximum(np.abs(g), np.abs(fd)))
        assert rel.max() < 1e-7, name
    for name in ("alpha", "lambda1", "lambda2"):
        base = getattr(theta, name)
        up = loss_fn(_theta_replace(theta, **{name: base + step}))
        dn = loss_fn(_theta_replace(theta, **{name: base - step}))
        fd = (up - dn) / (2.0 * step)
        g = grads[name]
        assert abs(g - fd) / max(1.0, abs(g), abs(fd)) < 1e-7, name


def test_backward_ignores_sensing_path():
    # with measurements held fixed, the A gradient covers only the
    # reconstruction weights; the check above already pins its value, here
    # we confirm A still matters at all (U, S, W1 depend on it)
    theta, x, s = _separated_instance(12)
    _, grads = backward(x, s, theta, 0.0)
    assert np.max(np.abs(grads["A"])) > 0.0


def test_backward_weight_decay_term():
    theta, x, s = _separated_instance(13)
    _, g0 = backward(x, s, theta, 0.0)
    _, g1 = backward(x, s, theta, 0.5)
    for name in ("A", "D", "G", "h0"):
        want = np.asarray(getattr(theta, name))
        assert np.allclose(g1[name] - g0[name], want, rtol=1e-9, atol=1e-12), name
    assert g1["alpha"] - g0["alpha"] == pytest.approx(theta.alpha, rel=1e-9)


def test_gradient_check_passes_and_flags_corruption():
    report = gradient_check(seed=0, dims=(3, 6, 8), K=2, T=3)
    assert report.passed
    assert report.max_rel_err <= 1e-4
    assert report.margin >= 1e-3
    assert set(report.per_param) == {"A", "D", "G", "h0", "rho_alpha",
                                     "rho_lambda1", "rho_lambda2"}
    bad = gradient_check(seed=0, dims=(3, 6, 8), K=2, T=3, corrupt=True)
    assert not bad.passed


# ---------------------------------------------------------------------------
# gradients, stacked baseline

def _separated_stacked(seed, activation, dims=(3, 6, 8), K=2, T=3):
    m, n, d = dims
    for attempt in range(60):
        rng = np.random.default_rng((seed, attempt, 3))
        params = init_stacked_params(dims, int(rng.integers(1 << 31)), K=K)
        params["h_init"] = rng.normal(0.0, 0.3, (K, d))
        s = rng.normal(0.0, 1.0, (2, T, n))
        x = s @ params["A"].T
        weights = StackedRNNWeights(W=params["W"], S=params["S"], U=params["U"],
                                    V=params["V"], b=params["b"])
        _, _, margin = stacked_forward_batch(x, weights, params["h_init"],
                                             activation, want_margin=True)
        if margin >= 1e-3:
            return params, x, s
    raise AssertionError("no separated instance found")


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_stacked_backward_matches_finite_differences(activation):
    params, x, s = _separated_stacked(17, activation)

    def loss_fn(p):
        weights = StackedRNNWeights(W=p["W"], S=p["S"], U=p["U"], V=p["V"], b=p["b"])
        _, shat = stacked_forward_batch(x, weights, p["h_init"], activation)
        sq = sum(float(np.sum(np.asarray(q) ** 2)) for k, q in p.items() if k != "A")
        return float(np.sum((shat - s) ** 2)) / s.shape[0] + BETA * sq

    value, grads = stacked_backward(x[0].T, s[0].T, params, BETA, activation)
    # the exported single-sequence call has batch 1; redo at batch 2 via the
    # same public function applied per sequence and average
    value2, grads2 = stacked_backward(x[1].T, s[1].T, params, BETA, activation)
    merged = {k: 0.5 * (grads[k] + grads2[k]) for k in grads}
    # decay enters each call fully, so averaging preserves it
    assert loss_fn(params) == pytest.approx(0.5 * (value + value2), rel=1e-12)

    step = 1e-6
    rng = np.random.default_rng(18)
    for name in sorted(merged):
        base = np.asarray(params[name], dtype=np.float64)
        g = np.asarray(merged[name]).reshape(-1)
        idxs = rng.choice(base.size, size=min(12, base.size), replace=False)
        for i in idxs:
            bump = np.zeros(base.size)
            bump[i] = step
            probe = dict(params)
            probe[name] = (base.reshape(-1) + bump).reshape(base.shape)
            up = loss_fn(probe)
            probe[name] = (base.reshape(-1) - bump).reshape(base.shape)
            dn = loss_fn(probe)
            fd = (up - dn) / (2.0 * step)
            assert abs(g[i] - fd) / max(1.0, abs(g[i]), abs(fd)) < 1e-6, (name, i)


# ---------------------------------------------------------------------------
# optimizer pieces

def test_adam_first_step_closed_form():
    cfg = TrainConfig(epochs=1, learning_rate=1e-3, batch_size=1, seed=0)
    params = {"w": np.array([1.0, -2.0, 0.5])}
    g = np.array([10.0, -3.0, 1e-8])
    state = AdamState.zeros_like(params)
    params, state = adam_step(params, {"w": g}, state, cfg)
    want = np.array([1.0, -2.0, 0.5]) - cfg.learning_rate * g / (np.abs(g) + cfg.adam_epsilon)
    assert np.allclose(params["w"], want, rtol=1e-12, atol=0.0)
    assert state.step == 1


def test_adam_key_mismatch():
    cfg = TrainConfig(epochs=1, batch_size=1)
    params = {"w": np.zeros(2)}
    state = AdamState.zeros_like(params)
    with pytest.raises(ParameterError):
        adam_step(params, {"v": np.zeros(2)}, state, cfg)


def test_clip_gradients():
    grads = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_gradients(grads, 2.5)
    assert norm == pytest.approx(5.0)
    total = np.sqrt(sum(float(np.sum(g**2)) for g in clipped.values()))
    assert total == pytest.approx(2.5, rel=1e-12)
    same, norm2 = clip_gradients(grads, 100.0)
    assert same["a"] is grads["a"] and norm2 == pytest.approx(5.0)
    off, _ = clip_gradients(grads, 0.0)
    assert off["b"] is grads["b"]


def test_clip_gradients_rejects_overflowing_norm():
    # The squared sum overflows to inf even though each entry is finite;
    # clipping by inf would silently zero the update.
    grads = {"a": np.full(4, 1e200), "b": np.array([1.0])}
    with pytest.raises(NumericError):
        clip_gradients(grads, 5.0)


# ---------------------------------------------------------------------------
# training loop

def _toy_data(seed=3, N=12, n=6, T=4):
    rng = np.random.default_rng(seed)
    return TrainData(train_signals=rng.normal(0.0, 1.0, (N, n, T)),
                     val_signals=rng.normal(0.0, 1.0, (4, n, T)))


def test_train_deterministic_and_curve_shape():
    data = _toy_data()
    cfg = TrainConfig(epochs=3, learning_rate=1e-3, batch_size=4, K=2, seed=1)
    a = train(data, "l1l1_rnn", cfg, m=3, d=8)
    b = train(data, "l1l1_rnn", cfg, m=3, d=8)
    assert a.curve == b.curve
    assert [row[0] for row in a.curve] == [0, 1, 2, 3]
    assert all(np.array_equal(np.asarray(a.params[k]), np.asarray(b.params[k]))
               for k in a.params)
    # training on this easy quadratic should not increase the loss
    assert a.curve[-1][1] < a.curve[0][1]


def test_train_epochs_zero_returns_init(tmp_path):
    data = _toy_data()
    cfg = TrainConfig(epochs=0, batch_size=4, K=2, seed=1)
    res = train(data, "l1l1_rnn", cfg, m=3, d=8, out_dir=str(tmp_path))
    assert res.curve == []
    init = raw_from_model(init_params((3, 6, 8), 1, K=2, alpha=cfg.alpha_init,
                                      lambda1=cfg.lambda1_init,
                                      lambda2=cfg.lambda2_init))
    for k, v in init.items():
        assert np.array_equal(np.asarray(res.params[k]), np.asarray(v)), k
    assert os.path.exists(res.checkpoint_last)


def test_train_resume_matches_uninterrupted(tmp_path):
    data = _toy_data()
    d1, d2 = str(tmp_path / "full"), str(tmp_path / "split")
    cfg4 = TrainConfig(epochs=4, learning_rate=1e-3, batch_size=4, K=2, seed=1)
    cfg2 = TrainConfig(epochs=2, learning_rate=1e-3, batch_size=4, K=2, seed=1)
    full = train(data, "l1l1_rnn", cfg4, m=3, d=8, out_dir=d1)
    train(data, "l1l1_rnn", cfg2, m=3, d=8, out_dir=d2)
    resumed = train(data, "l1l1_rnn", cfg4, m=3, d=8, out_dir=d2,
                    resume_from=os.path.join(d2, "checkpoint_last.ckpt"))
    assert full.curve == resumed.curve
    assert all(np.array_equal(np.asarray(full.params[k]), np.asarray(resumed.params[k]))
               for k in full.params)
    with open(os.path.join(d1, "learning_curve.csv")) as fh:
        c1 = fh.read()
    with open(os.path.join(d2, "learning_curve.csv")) as fh:
        c2 = fh.read()
    assert c1 == c2


def test_train_stacked_runs_and_keeps_dead_row_zero():
    data = _toy_data()
    cfg = TrainConfig(epochs=2, learning_rate=1e-3, batch_size=4, K=2, seed=1)
    res = train(data, "stacked_rnn", cfg, m=3, d=8)
    assert len(res.curve) == 3
    # layer 1 has no layer below, its S row stays exactly zero
    assert np.all(res.params["S"][0] == 0.0)


def test_train_best_checkpoint_tracks_validation(tmp_path):
    data = _toy_data()
    cfg = TrainConfig(epochs=3, learning_rate=1e-2, batch_size=4, K=2, seed=1)
    res = train(data, "l1l1_rnn", cfg, m=3, d=8, out_dir=str(tmp_path))
    assert res.best_val_psnr == pytest.approx(max(r[2] for r in res.curve))
    assert os.path.exists(res.checkpoint_best)
    from l1l1rnn.checkpoint import read_checkpoint
    from l1l1rnn.training import split_checkpoint_tensors
    _, tensors = read_checkpoint(res.checkpoint_best)
    raw, _, meta = split_checkpoint_tensors(tensors)
    assert meta["epoch"] == res.best_epoch
    for k in res.best_params:
        assert np.array_equal(np.asarray(raw[k]), np.asarray(res.best_params[k])), k


def test_train_divergence_raises():
    data = _toy_data()
    cfg = TrainConfig(epochs=3, learning_rate=1e60, batch_size=4, K=2, seed=1)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NumericError):
            train(data, "l1l1_rnn", cfg, m=3, d=8)


def test_train_rejects_unknown_kind():
    from l1l1rnn.errors import ConfigError
    data = _toy_data()
    cfg = TrainConfig(epochs=1, batch_size=4)
    with pytest.raises(ConfigError):
        train(data, "gru", cfg, m=3, d=8)


# ---------------------------------------------------------------------------
# validation

def test_train_config_validation():
    for kw in (dict(epochs=-1), dict(batch_size=0), dict(learning_rate=0.0),
               dict(weight_decay=-0.1), dict(K=0), dict(lambda1_init=0.0),
               dict(alpha_init=-1.0), dict(grad_clip=-1.0)):
        with pytest.raises(ParameterError):
            TrainConfig(**kw)


def test_train_data_validation():
    rng = np.random.default_rng(0)
    with pytest.raises(DimensionError):
        TrainData(rng.normal(size=(3, 4, 5)), rng.normal(size=(2, 4, 6)))
    with pytest.raises(DimensionError):
        TrainData(rng.normal(size=(3, 4)), rng.normal(size=(2, 4)))
