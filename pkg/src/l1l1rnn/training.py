"""End-to-end training of the unfolded network and the stacked baseline.

Gradients are computed by hand-rolled backpropagation-through-time. For the
unfolded model the chain runs through the prox's piecewise derivatives
(coefficients looked up from the case indices the forward pass recorded),
through the weight constructions U, W1, S as functions of (A, D, G, alpha),
through the reference path v = G h_{t-1}, and into h0 at the first frame.
The scalars alpha, lambda1, lambda2 are trained through a softplus
reparameterization so they stay in their domains without projection.

Two gradient entry points exist on purpose: ``backward`` treats the
measurements as fixed inputs (that is the contract its finite-difference
tests pin down), while the training loop recomputes x = A s inside each
step and adds the measurement-path term so the sensing matrix is trained
end to end.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import read_checkpoint, write_checkpoint
from .errors import ConfigError, DimensionError, NumericError, ParameterError
from .metrics import evaluate
from .network import (
    ModelParams,
    StackedRNNWeights,
    build_weights,
    forward_batch,
    stacked_forward_batch,
)
from .prox import _COEF

__all__ = [
    "TrainConfig",
    "TrainData",
    "TrainResult",
    "AdamState",
    "GradCheckReport",
    "MODEL_KINDS",
    "softplus",
    "softplus_inv",
    "sigmoid",
    "cosine_frame",
    "overcomplete_dct",
    "init_params",
    "init_stacked_params",
    "loss",
    "backward",
    "stacked_backward",
    "clip_gradients",
    "adam_step",
    "raw_from_model",
    "model_from_raw",
    "train",
    "gradient_check",
]

MODEL_KINDS = ("l1l1_rnn", "stacked_rnn")
_MODEL_CODES = {"l1l1_rnn": 0.0, "stacked_rnn": 1.0}
_ACTIVATION_CODES = {"tanh": 0.0, "relu": 1.0}


# ---------------------------------------------------------------------------
# scalar reparameterization

def softplus(x):
    """log(1 + exp(x)), overflow-safe."""
    return float(np.logaddexp(0.0, x))


def softplus_inv(y):
    """Pre-activation whose softplus equals y (> 0 required)."""
    y = float(y)
    if not np.isfinite(y) or y <= 0.0:
        raise ParameterError(f"softplus_inv needs y > 0, got {y!r}")
    # log(exp(y) - 1) without overflow for large y
    return y + math.log(-math.expm1(-y))


def sigmoid(x):
    """Derivative of softplus; evaluated through tanh for stability."""
    return 0.5 * (1.0 + math.tanh(0.5 * float(x)))


# ---------------------------------------------------------------------------
# configuration and containers

@dataclass
class TrainConfig:
    """Optimization hyperparameters.

    epochs = 0 is allowed and means evaluate-nothing/train-nothing (the
    caller gets the initial parameters back). grad_clip = 0 disables the
    global-norm clip; gradient checks run with it off.
    """

    epochs: int = 30
    learning_rate: float = 3e-4
    batch_size: int = 32
    weight_decay: float = 0.01
    K: int = 3
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    lambda1_init: float = 1.0
    lambda2_init: float = 0.01
    alpha_init: float = 1.0
    grad_clip: float = 5.0

    def __post_init__(self):
        if int(self.epochs) != self.epochs or self.epochs < 0:
            raise ParameterError(f"epochs must be a nonnegative integer, got {self.epochs!r}")
        if int(self.batch_size) != self.batch_size or self.batch_size < 1:
            raise ParameterError(f"batch_size must be a positive integer, got {self.batch_size!r}")
        if not np.isfinite(self.learning_rate) or self.learning_rate <= 0.0:
            raise ParameterError(f"learning_rate must be > 0, got {self.learning_rate!r}")
        if self.weight_decay < 0.0:
            raise ParameterError(f"weight_decay must be >= 0, got {self.weight_decay!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ParameterError(f"K must be a positive integer, got {self.K!r}")
        for name in ("lambda1_init", "lambda2_init", "alpha_init"):
            if getattr(self, name) <= 0.0:
                raise ParameterError(f"{name} must be > 0 (softplus-reparameterized), got {getattr(self, name)!r}")
        if self.grad_clip < 0.0:
            raise ParameterError(f"grad_clip must be >= 0, got {self.grad_clip!r}")


@dataclass
class TrainData:
    """Training and validation signals, each (N, n, T) with time as the
    trailing axis."""

    train_signals: np.ndarray
    val_signals: np.ndarray

    def __post_init__(self):
        self.train_signals = np.asarray(self.train_signals, dtype=np.float64)
        self.val_signals = np.asarray(self.val_signals, dtype=np.float64)
        for name in ("train_signals", "val_signals"):
            arr = getattr(self, name)
            if arr.ndim != 3 or arr.shape[0] < 1:
                raise DimensionError(f"{name} must be a non-empty (N, n, T) array, got {arr.shape}")
        if self.train_signals.shape[1:] != self.val_signals.shape[1:]:
            raise DimensionError("train and validation signals must share (n, T)")

    @property
    def n(self):
        return self.train_signals.shape[1]

    @property
    def T(self):
        return self.train_signals.shape[2]


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls(
            m={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
            v={k: np.zeros_like(np.asarray(p, dtype=np.float64)) for k, p in params.items()},
            step=0,
        )


@dataclass
class TrainResult:
    model_kind: str
    params: dict
    best_params: dict
    curve: list
    best_epoch: int
    best_val_psnr: float
    checkpoint_last: str | None = None
    checkpoint_best: str | None = None


# ---------------------------------------------------------------------------
# initialization

def cosine_frame(rows, cols):
    """rows x cols cosine frame C[p, q] = cos(pi (2p+1) q / (2 cols)),
    columns scaled to unit norm."""
    p = np.arange(rows)[:, None]
    q = np.arange(cols)[None, :]
    C = np.cos(np.pi * (2 * p + 1) * q / (2.0 * cols))
    return C / np.linalg.norm(C, axis=0, keepdims=True)


def overcomplete_dct(n, d):
    """Overcomplete DCT dictionary with unit-norm columns.

    Perfect-square (n, d) get the separable 2-D build kron(C, C) with C the
    sqrt(n) x sqrt(d) cosine frame; anything else falls back to a single
    1-D cosine frame of shape n x d.
    """
    rn, rd = math.isqrt(n), math.isqrt(d)
    if rn * rn == n and rd * rd == d:
        C = cosine_frame(rn, rd)
        return np.kron(C, C)
    return cosine_frame(n, d)


def init_params(dims, seed, dict_init="overcomplete_dct", g_init="uniform",
                K=3, T=0, alpha=1.0, lambda1=1.0, lambda2=0.01):
    """Seeded initial parameter set.

    dims is (m, n, d). A is uniform on [-1/sqrt(d), 1/sqrt(d)]; G likewise
    or the identity; D is the overcomplete DCT or uniform. The rng draws A,
    then G, then D, so changing one option never shifts another's values.
    """
    m, n, d = (int(v) for v in dims)
    if not (1 <= m and 1 <= n and 1 <= d):
        raise ParameterError(f"dims must be positive, got {dims!r}")
    if dict_init not in ("overcomplete_dct", "uniform"):
        raise ParameterError(f"unknown dict_init {dict_init!r}")
    if g_init not in ("uniform", "identity"):
        raise ParameterError(f"unknown g_init {g_init!r}")
    rng = np.random.default_rng(seed)
    c = 1.0 / math.sqrt(d)
    A = rng.uniform(-c, c, (m, n))
    G = rng.uniform(-c, c, (d, d)) if g_init == "uniform" else np.eye(d)
    D = rng.uniform(-c, c, (n, d)) if dict_init == "uniform" else overcomplete_dct(n, d)
    return ModelParams(A=A, D=D, G=G, h0=np.zeros(d), alpha=alpha,
                       lambda1=lambda1, lambda2=lambda2, K=K, T=T)


def init_stacked_params(dims, seed, K=3):
    """Seeded stacked-RNN parameter dict: keys A, U, V, b, W, S, h_init.

    All weights and the bias are uniform on [-1/sqrt(d), 1/sqrt(d)]; initial
    hidden states start at zero; S[0] is unused by the forward pass and kept
    zero. Draw order: A, U, V, b, W, S.
    """
    m, n, d = (int(v) for v in dims)
    rng = np.random.default_rng(seed)
    c = 1.0 / math.sqrt(d)
    params = {
        "A": rng.uniform(-c, c, (m, n)),
        "U": rng.uniform(-c, c, (d, m)),
        "V": rng.uniform(-c, c, (n, d)),
        "b": rng.uniform(-c, c, n),
        "W": rng.uniform(-c, c, (K, d, d)),
        "S": rng.uniform(-c, c, (K, d, d)),
        "h_init": np.zeros((K, d)),
    }
    params["S"][0] = 0.0
    return params


# ---------------------------------------------------------------------------
# loss

def _sqnorm(theta):
    if isinstance(theta, ModelParams):
        total = 0.0
        for arr in (theta.A, theta.D, theta.G, theta.h0):
            total += float(np.sum(arr * arr))
        return total + theta.alpha**2 + theta.lambda1**2 + theta.lambda2**2
    return sum(float(np.sum(np.asarray(p) ** 2)) for p in theta.values())


def loss(s_seq, shat_seq, theta, beta):
    """Sum of per-frame squared errors plus beta times ||theta||^2.

    theta may be a ModelParams or any dict of parameter arrays; every
    trainable (the scalars included, at their actual values) enters the
    decay term.
    """
    s_seq = np.asarray(s_seq, dtype=np.float64)
    shat_seq = np.asarray(shat_seq, dtype=np.float64)
    if s_seq.shape != shat_seq.shape:
        raise DimensionError(f"shape mismatch: {s_seq.shape} vs {shat_seq.shape}")
    return float(np.sum((s_seq - shat_seq) ** 2)) + beta * _sqnorm(theta)


# ---------------------------------------------------------------------------
# raw (trainable) parameter dictionaries

def raw_from_model(theta):
    """Trainable dict for the unfolded model; scalars stored as softplus
    pre-activations."""
    return {
        "A": theta.A.copy(),
        "D": theta.D.copy(),
        "G": theta.G.copy(),
        "h0": theta.h0.copy(),
        "rho_alpha": np.float64(softplus_inv(theta.alpha)),
        "rho_lambda1": np.float64(softplus_inv(theta.lambda1)),
        "rho_lambda2": np.float64(softplus_inv(theta.lambda2)),
    }


def model_from_raw(raw, K, T=0):
    return ModelParams(
        A=raw["A"], D=raw["D"], G=raw["G"], h0=raw["h0"],
        alpha=softplus(raw["rho_alpha"]),
        lambda1=softplus(raw["rho_lambda1"]),
        lambda2=softplus(raw["rho_lambda2"]),
        K=K, T=T,
    )


def _chain_to_raw(raw, grads_actual):
    """Map actual-value gradients onto the raw dict (softplus chain rule)."""
    out = {
        "A": grads_actual["A"],
        "D": grads_actual["D"],
        "G": grads_actual["G"],
        "h0": grads_actual["h0"],
        "rho_alpha": np.float64(grads_actual["alpha"] * sigmoid(raw["rho_alpha"])),
        "rho_lambda1": np.float64(grads_actual["lambda1"] * sigmoid(raw["rho_lambda1"])),
        "rho_lambda2": np.float64(grads_actual["lambda2"] * sigmoid(raw["rho_lambda2"])),
    }
    return out


# ---------------------------------------------------------------------------
# backward passes

def _l1l1_backward_batch(x, s, theta, beta, include_sensing):
    """Loss and actual-space gradients over a batch (means over sequences).

    x: (B, T, m), s: (B, T, n). With include_sensing the extra measurement
    path x = A s contributes to the A gradient (the signals s must then be
    the ones x was computed from).
    """
    weights = build_weights(theta)
    out = forward_batch(x, theta, weights=weights)
    h, v, shat, case = out["h"], out["v"], out["shat"], out["case"]
    B, T, K, d = h.shape
    scale = 1.0 / B
    diff = shat - s
    value = scale * float(np.sum(diff * diff)) + beta * _sqnorm(theta)

    coef = _COEF[case]  # (B, T, K, d, 4)
    g_shat = (2.0 * scale) * diff
    hK = h[:, :, K - 1, :]
    g_D = np.einsum("btn,btd->nd", g_shat, hK)
    g_h_direct = g_shat @ theta.D  # (B, T, d)

    g_S = np.zeros((d, d))
    g_U = np.zeros((d, theta.m))
    g_G = np.zeros((d, d))
    g_h0 = np.zeros(d)
    g_gamma1 = 0.0
    g_gamma2 = 0.0
    g_x = np.zeros_like(x) if include_sensing else None
    carry = np.zeros((B, d))
    for t in range(T - 1, -1, -1):
        gv = np.zeros((B, d))
        gh = g_h_direct[:, t] + carry
        for k in range(K - 1, -1, -1):
            ck = coef[:, t, k]
            gz = gh * ck[..., 0]
            gv += gh * ck[..., 1]
            g_gamma1 += float(np.sum(gh * ck[..., 2]))
            g_gamma2 += float(np.sum(gh * ck[..., 3]))
            if k > 0:
                g_S += gz.T @ h[:, t, k - 1]
                gh = gz @ weights.S
            else:
                g_S += gz.T @ v[:, t]
                gv += gz @ weights.S
            g_U += gz.T @ x[:, t]
            if include_sensing:
                g_x[:, t] += gz @ weights.U
        h_prev = h[:, t - 1, K - 1] if t > 0 else np.broadcast_to(theta.h0, (B, d))
        g_G += gv.T @ h_prev
        carry = gv @ theta.G
    g_h0 = carry.sum(axis=0)

    # weights back to the parameter set: S = I - B^T B / alpha, U = B^T / alpha
    B_mat = theta.A @ theta.D
    inv_a = 1.0 / theta.alpha
    g_B = -inv_a * (B_mat @ (g_S + g_S.T)) + inv_a * g_U.T
    g_alpha = inv_a * inv_a * (
        float(np.sum(g_S * (B_mat.T @ B_mat))) - float(np.sum(g_U * B_mat.T))
    )
    g_A = g_B @ theta.D.T
    g_D += theta.A.T @ g_B
    if include_sensing:
        g_A += np.einsum("btm,btn->mn", g_x, s)
    g_lambda1 = g_gamma1 * inv_a
    g_lambda2 = g_gamma2 * inv_a
    g_alpha -= (theta.lambda1 * g_gamma1 + theta.lambda2 * g_gamma2) * inv_a * inv_a

    grads = {
        "A": g_A + 2.0 * beta * theta.A,
        "D": g_D + 2.0 * beta * theta.D,
        "G": g_G + 2.0 * beta * theta.G,
        "h0": g_h0 + 2.0 * beta * theta.h0,
        "alpha": g_alpha + 2.0 * beta * theta.alpha,
        "lambda1": g_lambda1 + 2.0 * beta * theta.lambda1,
        "lambda2": g_lambda2 + 2.0 * beta * theta.lambda2,
    }
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return value, grads


def backward(x_seq, s_seq, theta, beta):
    """Loss and exact reverse-mode gradients for one sequence.

    x_seq (m, T) is a fixed input here: the gradients cover every path
    inside the reconstruction network (U, W1, S, V as functions of A, D, G,
    alpha; the prox's dependence on gamma1, gamma2 and v = G h_prev; h0 at
    t=1) but not the making of the measurements. Scalars are reported with
    respect to their actual values, not the pre-activations.
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    s_seq = np.asarray(s_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[0] != theta.m:
        raise DimensionError(f"x_seq must be ({theta.m}, T), got {x_seq.shape}")
    if s_seq.shape != (theta.n, x_seq.shape[1]):
        raise DimensionError(f"s_seq must be ({theta.n}, {x_seq.shape[1]}), got {s_seq.shape}")
    return _l1l1_backward_batch(
        x_seq.T[None], s_seq.T[None], theta, beta, include_sensing=False
    )


def _stacked_backward_batch(x, s, params, beta, activation, include_sensing):
    """Loss and gradients for the stacked baseline over a batch."""
    weights = StackedRNNWeights(W=params["W"], S=params["S"], U=params["U"],
                                V=params["V"], b=params["b"])
    h_init = np.asarray(params["h_init"], dtype=np.float64)
    h, shat = stacked_forward_batch(x, weights, h_init, activation)
    B, T, K, d = h.shape
    scale = 1.0 / B
    diff = shat - s
    decay_set = {k: v for k, v in params.items() if include_sensing or k != "A"}
    value = scale * float(np.sum(diff * diff)) + beta * _sqnorm(decay_set)

    if activation == "tanh":
        ap = 1.0 - h * h
    else:
        ap = (h > 0.0).astype(np.float64)
    g_shat = (2.0 * scale) * diff
    hK = h[:, :, K - 1, :]
    g_V = np.einsum("btn,btd->nd", g_shat, hK)
    g_b = g_shat.sum(axis=(0, 1))
    g_h_direct = g_shat @ weights.V

    g_W = np.zeros_like(weights.W)
    g_S = np.zeros_like(weights.S)
    g_U = np.zeros_like(weights.U)
    g_hinit = np.zeros_like(h_init)
    g_x = np.zeros_like(x) if include_sensing else None
    carry = [np.zeros((B, d)) for _ in range(K)]
    for t in range(T - 1, -1, -1):
        from_above = None
        for k in range(K - 1, -1, -1):
            g = carry[k] + (g_h_direct[:, t] if k == K - 1 else from_above)
            gz = g * ap[:, t, k]
            h_prev = h[:, t - 1, k] if t > 0 else np.broadcast_to(h_init[k], (B, d))
            g_W[k] += gz.T @ h_prev
            if k == 0:
                g_U += gz.T @ x[:, t]
                if include_sensing:
                    g_x[:, t] = gz @ weights.U
            else:
                g_S[k] += gz.T @ h[:, t, k - 1]
                from_above = gz @ weights.S[k]
            carry[k] = gz @ weights.W[k]
    for k in range(K):
        g_hinit[k] = carry[k].sum(axis=0)

    grads = {
        "U": g_U + 2.0 * beta * weights.U,
        "V": g_V + 2.0 * beta * weights.V,
        "b": g_b + 2.0 * beta * weights.b,
        "W": g_W + 2.0 * beta * weights.W,
        "S": g_S + 2.0 * beta * weights.S,
        "h_init": g_hinit + 2.0 * beta * h_init,
    }
    if include_sensing:
        grads["A"] = np.einsum("btm,btn->mn", g_x, s) + 2.0 * beta * np.asarray(params["A"])
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    return value, grads


def stacked_backward(x_seq, s_seq, params, beta, activation="tanh"):
    """Single-sequence gradients for the stacked baseline, measurements
    fixed (the A entry is then absent from the result)."""
    return _stacked_backward_batch(
        np.asarray(x_seq, dtype=np.float64).T[None],
        np.asarray(s_seq, dtype=np.float64).T[None],
        params, beta, activation, include_sensing=False,
    )


# ---------------------------------------------------------------------------
# optimizer

def clip_gradients(grads, max_norm):
    """Global-norm clip; returns (grads, pre-clip norm). max_norm = 0 is a
    no-op."""
    with np.errstate(over="ignore"):
        total = math.sqrt(sum(float(np.sum(np.asarray(g) ** 2)) for g in grads.values()))
    if not math.isfinite(total):
        # A finite loss can still overflow in the norm; dividing by inf would
        # zero every update and stall training silently.
        raise NumericError(f"gradient norm is not finite: {total!r}")
    if max_norm > 0.0 and total > max_norm:
        factor = max_norm / total
        grads = {k: np.asarray(g) * factor for k, g in grads.items()}
    return grads, total


def adam_step(params, grads, state, cfg):
    """One bias-corrected Adam update; mutates and returns (params, state)."""
    if set(params) != set(grads):
        raise ParameterError(
            f"parameter/gradient keys differ: {sorted(params)} vs {sorted(grads)}"
        )
    state.step += 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name in params:
        g = np.asarray(grads[name], dtype=np.float64)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / c1
        v_hat = state.v[name] / c2
        params[name] = params[name] - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


# ---------------------------------------------------------------------------
# training loop

def _init_raw(model_kind, cfg, dims, dict_init, g_init):
    if model_kind == "l1l1_rnn":
        theta = init_params(dims, cfg.seed, dict_init=dict_init, g_init=g_init,
                            K=cfg.K, alpha=cfg.alpha_init,
                            lambda1=cfg.lambda1_init, lambda2=cfg.lambda2_init)
        return raw_from_model(theta)
    return init_stacked_params(dims, cfg.seed, K=cfg.K)


def _eval_model(model_kind, raw, cfg, signals, T, activation):
    if model_kind == "l1l1_rnn":
        model = model_from_raw(raw, cfg.K, T)
    else:
        model = raw
    return evaluate(model, signals, activation=activation)


def _batch_loss_and_grads(model_kind, raw, cfg, s_rows, activation):
    """Forward/backward on one minibatch of signals (B, T, n); the sensing
    path is part of the computation, so A's gradient is complete."""
    A = raw["A"]
    x = s_rows @ A.T
    if model_kind == "l1l1_rnn":
        try:
            theta = model_from_raw(raw, cfg.K)
        except ParameterError as exc:
            # softplus underflows to exactly 0 once the optimizer has run
            # away; report that as a numeric failure, not a usage error
            raise NumericError(f"parameters left their domain: {exc}") from exc
        value, grads_actual = _l1l1_backward_batch(x, s_rows, theta, cfg.weight_decay,
                                                   include_sensing=True)
        return value, _chain_to_raw(raw, grads_actual)
    return _stacked_backward_batch(x, s_rows, raw, cfg.weight_decay, activation,
                                   include_sensing=True)


def _checkpoint_tensors(raw, state, epoch, model_kind, best_val, activation):
    tensors = dict(raw)
    for name, arr in state.m.items():
        tensors[f"opt.m.{name}"] = arr
    for name, arr in state.v.items():
        tensors[f"opt.v.{name}"] = arr
    tensors["meta.step"] = np.float64(state.step)
    tensors["meta.epoch"] = np.float64(epoch)
    tensors["meta.model_kind"] = np.float64(_MODEL_CODES[model_kind])
    tensors["meta.best_val_psnr"] = np.float64(best_val)
    tensors["meta.activation"] = np.float64(_ACTIVATION_CODES[activation])
    return tensors


def split_checkpoint_tensors(tensors):
    """Partition a checkpoint's tensor dict into (raw params, AdamState,
    meta dict)."""
    raw, m, v, meta = {}, {}, {}, {}
    for name, arr in tensors.items():
        if name.startswith("opt.m."):
            m[name[6:]] = arr
        elif name.startswith("opt.v."):
            v[name[6:]] = arr
        elif name.startswith("meta."):
            meta[name[5:]] = float(arr)
        else:
            raw[name] = arr if arr.ndim else np.float64(arr)
    state = AdamState(m=m, v=v, step=int(meta.get("step", 0)))
    return raw, state, meta


def model_kind_of(meta):
    code = meta.get("model_kind", 0.0)
    for kind, value in _MODEL_CODES.items():
        if value == code:
            return kind
    raise ConfigError(f"unknown model kind code {code!r}")


def activation_of(meta):
    code = meta.get("activation", 0.0)
    for kind, value in _ACTIVATION_CODES.items():
        if value == code:
            return kind
    raise ConfigError(f"unknown activation code {code!r}")


def _read_curve(path):
    rows = []
    if not os.path.exists(path):
        return rows
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        for row in reader:
            rows.append((int(row[0]), float(row[1]), float(row[2])))
    return rows


def _write_curve(path, rows):
    # repr round-trips float64 exactly, so a resumed run reads back the
    # precise values it would have held in memory
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_psnr_db"])
        for epoch, train_loss, val_psnr in rows:
            writer.writerow([epoch, repr(float(train_loss)), repr(float(val_psnr))])


def train(data, model_kind, cfg, m, d, out_dir=None, resume_from=None,
          dict_init="overcomplete_dct", g_init="uniform", activation="tanh",
          log=None):
    """Minibatch Adam over the chosen model.

    Parameters
    ----------
    data : TrainData
    model_kind : "l1l1_rnn" or "stacked_rnn"
    cfg : TrainConfig
    m, d : measurement count and code dimension (n and T come from data)
    out_dir : str, optional
        Receives learning_curve.csv plus checkpoint_last.ckpt and
        checkpoint_best.ckpt (best validation PSNR); without it nothing is
        persisted.
    resume_from : str, optional
        checkpoint to continue from; epochs already done are not repeated
        and the curve continues from the stored epoch.

    The learning curve starts with an epoch-0 row measuring the untrained
    model (unless epochs == 0, which trains nothing and records nothing).
    Every epoch reshuffles with a seed derived from (cfg.seed, epoch), so a
    resumed run replays the exact batch order the uninterrupted run would
    have used.
    """
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got {model_kind!r}")
    if activation not in _ACTIVATION_CODES:
        raise ConfigError(f"unknown activation {activation!r}")
    n, T = data.n, data.T
    dims = (int(m), n, int(d))
    curve = []
    best_val = -np.inf
    best_epoch = -1
    start_epoch = 1

    if resume_from is not None:
        ck_dims, tensors = read_checkpoint(resume_from)
        raw, state, meta = split_checkpoint_tensors(tensors)
        if model_kind_of(meta) != model_kind:
            raise ConfigError(
                f"checkpoint holds a {model_kind_of(meta)} model, requested {model_kind}"
            )
        if tuple(ck_dims[:4]) != (dims[0], dims[1], dims[2], cfg.K):
            raise ConfigError(
                f"checkpoint dims {tuple(ck_dims)} do not match requested "
                f"(m={dims[0]}, n={dims[1]}, d={dims[2]}, K={cfg.K})"
            )
        start_epoch = int(meta.get("epoch", 0)) + 1
        best_val = meta.get("best_val_psnr", -np.inf)
        if out_dir is not None:
            curve = _read_curve(os.path.join(out_dir, "learning_curve.csv"))
            curve = [row for row in curve if row[0] < start_epoch]
    else:
        raw = _init_raw(model_kind, cfg, dims, dict_init, g_init)
        state = AdamState.zeros_like(raw)

    best_raw = {k: np.copy(v) for k, v in raw.items()}
    paths = {"last": None, "best": None}
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        paths["last"] = os.path.join(out_dir, "checkpoint_last.ckpt")
        paths["best"] = os.path.join(out_dir, "checkpoint_best.ckpt")
        if resume_from is not None and os.path.exists(paths["best"]):
            _, best_tensors = read_checkpoint(paths["best"])
            best_raw, _, _ = split_checkpoint_tensors(best_tensors)

    def persist(epoch):
        if out_dir is None:
            return
        ck_dims = (dims[0], dims[1], dims[2], cfg.K, T)
        write_checkpoint(paths["last"], ck_dims,
                         _checkpoint_tensors(raw, state, epoch, model_kind, best_val, activation))
        _write_curve(os.path.join(out_dir, "learning_curve.csv"), curve)

    def persist_best(epoch):
        if out_dir is None:
            return
        ck_dims = (dims[0], dims[1], dims[2], cfg.K, T)
        write_checkpoint(paths["best"], ck_dims,
                         _checkpoint_tensors(best_raw, state, epoch, model_kind, best_val, activation))

    if cfg.epochs == 0:
        persist(0)
        persist_best(0)
        return TrainResult(model_kind=model_kind, params=raw, best_params=best_raw,
                           curve=[], best_epoch=0, best_val_psnr=best_val,
                           checkpoint_last=paths["last"], checkpoint_best=paths["best"])

    N = data.train_signals.shape[0]
    train_rows = np.swapaxes(data.train_signals, 1, 2)  # (N, T, n)

    def epoch_zero_row():
        total = 0.0
        for startb in range(0, N, cfg.batch_size):
            s_rows = train_rows[startb:startb + cfg.batch_size]
            value, _ = _batch_loss_and_grads(model_kind, raw, cfg, s_rows, activation)
            total += value * s_rows.shape[0]
        report = _eval_model(model_kind, raw, cfg, data.val_signals, T, activation)
        return (0, total / N, report.mean_psnr_db)

    if start_epoch == 1 and not curve:
        row = epoch_zero_row()
        curve.append(row)
        if row[2] > best_val:
            best_val = row[2]
            best_epoch = 0
            best_raw = {k: np.copy(v) for k, v in raw.items()}
            persist_best(0)

    for epoch in range(start_epoch, cfg.epochs + 1):
        order = np.random.default_rng((cfg.seed, 0xE60C, epoch)).permutation(N)
        total = 0.0
        for startb in range(0, N, cfg.batch_size):
            batch = order[startb:startb + cfg.batch_size]
            s_rows = train_rows[batch]
            value, grads = _batch_loss_and_grads(model_kind, raw, cfg, s_rows, activation)
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            grads, _ = clip_gradients(grads, cfg.grad_clip)
            raw, state = adam_step(raw, grads, state, cfg)
            total += value * s_rows.shape[0]
        report = _eval_model(model_kind, raw, cfg, data.val_signals, T, activation)
        curve.append((epoch, total / N, report.mean_psnr_db))
        if log is not None:
            log(f"epoch {epoch:4d}  train_loss {total / N:.6f}  val_psnr {report.mean_psnr_db:.3f} dB")
        if report.mean_psnr_db > best_val:
            best_val = report.mean_psnr_db
            best_epoch = epoch
            best_raw = {k: np.copy(v) for k, v in raw.items()}
            persist_best(epoch)
        persist(epoch)

    return TrainResult(model_kind=model_kind, params=raw, best_params=best_raw,
                       curve=curve, best_epoch=best_epoch, best_val_psnr=best_val,
                       checkpoint_last=paths["last"], checkpoint_best=paths["best"])


# ---------------------------------------------------------------------------
# gradient check

@dataclass
class GradCheckReport:
    per_param: dict
    max_rel_err: float
    margin: float
    seed: int
    passed: bool = field(init=False)
    tolerance: float = 1e-4

    def __post_init__(self):
        self.passed = self.max_rel_err <= self.tolerance


def _full_loss(raw, s_rows, cfg):
    """Training objective including the sensing path, as a pure function of
    the raw parameter dict (what finite differences perturb)."""
    theta = model_from_raw(raw, cfg.K)
    x = s_rows @ raw["A"].T
    out = forward_batch(x, theta)
    diff = out["shat"] - s_rows
    return float(np.sum(diff * diff)) / s_rows.shape[0] + cfg.weight_decay * _sqnorm(theta)


def gradient_check(seed=0, dims=(3, 6, 8), K=2, T=3, batch=2, step=1e-5,
                   margin_min=1e-3, beta=0.01, tolerance=1e-4, corrupt=False,
                   max_attempts=50):
    """Compare the analytic training gradient against central finite
    differences on a small random model.

    Draws data/model seeds until every prox input sits at least margin_min
    away from its nearest case boundary, so the piecewise-constant
    derivatives are valid over the whole FD stencil. Relative error is
    |analytic - fd| / max(1, |analytic|, |fd|), reported per parameter.
    corrupt=True perturbs one gradient entry first (negative-control hook).
    """
    m, n, d = dims
    cfg = TrainConfig(epochs=1, learning_rate=1e-3, batch_size=batch,
                      weight_decay=beta, K=K, seed=seed,
                      lambda1_init=0.05, lambda2_init=0.03, alpha_init=1.0,
                      grad_clip=0.0)
    attempt_seed = int(seed)
    raw = s_rows = None
    margin = -np.inf
    for _ in range(max_attempts):
        rng = np.random.default_rng((attempt_seed, 0x06AD))
        theta = init_params(dims, attempt_seed, dict_init="uniform",
                            g_init="uniform", K=K,
                            alpha=cfg.alpha_init, lambda1=cfg.lambda1_init,
                            lambda2=cfg.lambda2_init)
        theta = ModelParams(A=theta.A, D=theta.D, G=theta.G,
                            h0=rng.normal(0.0, 0.2, d), alpha=theta.alpha,
                            lambda1=theta.lambda1, lambda2=theta.lambda2,
                            K=K, T=T)
        s_rows = rng.normal(0.0, 1.0, (batch, T, n))
        x = s_rows @ theta.A.T
        out = forward_batch(x, theta, want_margin=True)
        margin = out["margin"]
        if margin >= margin_min:
            raw = raw_from_model(theta)
            break
        attempt_seed += 1
    if raw is None:
        raise NumericError(
            f"no well-separated instance found in {max_attempts} attempts "
            f"(last margin {margin:.3g})"
        )

    theta = model_from_raw(raw, K, T)
    x = s_rows @ raw["A"].T
    value, grads_actual = _l1l1_backward_batch(x, s_rows, theta, beta,
                                               include_sensing=True)
    grads = _chain_to_raw(raw, grads_actual)
    if corrupt:
        grads["D"] = grads["D"].copy()
        grads["D"][0, 0] = grads["D"][0, 0] * 1.01 + 1e-3

    per_param = {}
    max_rel = 0.0
    for name in sorted(raw):
        g = np.atleast_1d(np.asarray(grads[name], dtype=np.float64))
        base = np.array(raw[name], dtype=np.float64)
        def loss_with(i, delta):
            bumped = base.copy().reshape(-1)
            bumped[i] += delta
            probe = dict(raw)
            probe[name] = bumped.reshape(base.shape) if base.ndim else np.float64(bumped[0])
            return _full_loss(probe, s_rows, cfg)

        flat_fd = np.zeros(base.size)
        for i in range(base.size):
            flat_fd[i] = (loss_with(i, step) - loss_with(i, -step)) / (2.0 * step)
        g_flat = g.reshape(-1)
        rel = np.abs(g_flat - flat_fd) / np.maximum(
            1.0, np.maximum(np.abs(g_flat), np.abs(flat_fd))
        )
        per_param[name] = float(rel.max())
        max_rel = max(max_rel, per_param[name])

    return GradCheckReport(per_param=per_param, max_rel_err=max_rel,
                           margin=float(margin), seed=attempt_seed,
                           tolerance=tolerance)
