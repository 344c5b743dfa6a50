"""Unfolded recurrent network for sequential sparse recovery.

The forward pass replays the proximal-gradient solver with its constants
promoted to trainable parameters: layer 1 of time step t computes
``prox(W1 h_{t-1} + U x_t)`` and layers k>1 compute ``prox(S h^(k-1) + U x_t)``,
all against the reference ``v = G h_{t-1}``, with reconstructions
``shat_t = V h_t^(K)`` and V tied to the dictionary. The weights (U, W1, S, V)
are materialized once per forward pass from the parameter set; the iterative
solver in ``solvers`` keeps them factored, which is why the two routes agree
only to rounding (1e-10 scale) rather than bitwise.

A plain stacked RNN with tanh/relu activations is included as the trained
baseline; it propagates a hidden state per layer and sees the measurement
only in layer 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, NumericError, ParameterError
from .prox import _prox_eval, boundary_margin

__all__ = [
    "ModelParams",
    "UnfoldedWeights",
    "StackedRNNWeights",
    "HiddenStates",
    "build_weights",
    "sense",
    "forward_sequence",
    "forward_batch",
    "stacked_rnn_forward",
    "stacked_forward_batch",
]


def _as_float_array(name, arr, ndim):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != ndim:
        raise DimensionError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


@dataclass
class ModelParams:
    """Trainable parameter set of the unfolded network.

    Fields
    ------
    A : (m, n) sensing matrix
    D : (n, d) dictionary (also the reconstruction matrix V)
    G : (d, d) code transition operator
    h0 : (d,) code preceding the first frame
    alpha : step-size reciprocal, > 0
    lambda1, lambda2 : regularization weights, >= 0
    K : layers per time step
    T : nominal sequence length (informational; the forward pass accepts
        any T >= 1)
    """

    A: np.ndarray
    D: np.ndarray
    G: np.ndarray
    h0: np.ndarray
    alpha: float
    lambda1: float
    lambda2: float
    K: int
    T: int = 0

    def __post_init__(self):
        self.A = _as_float_array("A", self.A, 2)
        self.D = _as_float_array("D", self.D, 2)
        self.G = _as_float_array("G", self.G, 2)
        self.h0 = _as_float_array("h0", self.h0, 1)
        if self.D.shape[0] != self.n:
            raise DimensionError(f"D must have {self.n} rows, got {self.D.shape}")
        if self.G.shape != (self.d, self.d):
            raise DimensionError(f"G must be {self.d}x{self.d}, got {self.G.shape}")
        if self.h0.shape != (self.d,):
            raise DimensionError(f"h0 must have length {self.d}, got {self.h0.shape}")
        if not np.isfinite(self.alpha) or self.alpha <= 0.0:
            raise ParameterError(f"alpha must be finite and > 0, got {self.alpha!r}")
        for name in ("lambda1", "lambda2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ParameterError(f"{name} must be finite and >= 0, got {value!r}")
        if int(self.K) != self.K or self.K < 1:
            raise ParameterError(f"K must be a positive integer, got {self.K!r}")

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def d(self):
        return self.D.shape[1]


@dataclass
class UnfoldedWeights:
    """Materialized layer weights: U = D^T A^T / alpha, W1 = G - D^T A^T A D G / alpha,
    S = I - D^T A^T A D / alpha, V = D."""

    U: np.ndarray
    W1: np.ndarray
    S: np.ndarray
    V: np.ndarray


@dataclass
class StackedRNNWeights:
    """Weights of the stacked baseline.

    W : (K, d, d) recurrent weights per layer
    S : (K, d, d) layer-to-layer weights; row 0 is unused and kept zero
    U : (d, m) input weights (layer 1 only)
    V : (n, d) output weights
    b : (n,) output bias
    """

    W: np.ndarray
    S: np.ndarray
    U: np.ndarray
    V: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.S = np.asarray(self.S, dtype=np.float64)
        self.U = np.asarray(self.U, dtype=np.float64)
        self.V = np.asarray(self.V, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 3 or self.S.shape != self.W.shape:
            raise DimensionError(
                f"W and S must be (K, d, d) with matching shapes, got {self.W.shape} and {self.S.shape}"
            )


@dataclass
class HiddenStates:
    """All hidden codes of one sequence: h[t][k] is the layer-k code of
    frame t (shape (T, K, d)); shat holds reconstructions as n x T columns."""

    h: np.ndarray
    shat: np.ndarray
    case: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)


def build_weights(theta):
    """Materialize the unfolded weights from the parameter set.

    Each matrix follows its defining formula; tests reconstruct them
    independently, so no algebraic shortcuts are taken beyond sharing the
    product B = A D.
    """
    B = theta.A @ theta.D
    U = (theta.D.T @ theta.A.T) / theta.alpha
    S = np.eye(theta.d) - (B.T @ B) / theta.alpha
    W1 = theta.G - (B.T @ (B @ theta.G)) / theta.alpha
    return UnfoldedWeights(U=U, W1=W1, S=S, V=theta.D)


def sense(s_seq, A, noise_sigma=0.0, seed=None):
    """Measure signals: x_t = A s_t + eta_t with optional Gaussian noise.

    Accepts a single sequence (n, T) or a batch (..., n, T); the matrix
    applies to the second-to-last axis. noise_sigma = 0 adds nothing (the
    output is exactly A s), and a fixed seed makes noisy output bit-stable.
    """
    A = _as_float_array("A", A, 2)
    s_seq = np.asarray(s_seq, dtype=np.float64)
    if s_seq.ndim < 2 or s_seq.shape[-2] != A.shape[1]:
        raise DimensionError(
            f"s_seq must have {A.shape[1]} rows in its last-but-one axis, got {s_seq.shape}"
        )
    if not np.isfinite(noise_sigma) or noise_sigma < 0.0:
        raise ParameterError(f"noise_sigma must be finite and >= 0, got {noise_sigma!r}")
    x = A @ s_seq
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        x = x + rng.normal(0.0, noise_sigma, x.shape)
    return x


def forward_batch(x, theta, weights=None, want_margin=False):
    """Batched forward pass over measurements with shape (B, T, m).

    Returns a dict with h (B, T, K, d), v (B, T, d), shat (B, T, n), and the
    prox case indices (B, T, K, d) needed by backpropagation; with
    want_margin, also "margin", the smallest distance of any prox input to
    a case boundary (gradient checks filter on it). Raises NumericError
    naming the first (t, k) whose hidden state goes non-finite.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != theta.m:
        raise DimensionError(f"x must have shape (B, T, {theta.m}), got {x.shape}")
    batch, T, _ = x.shape
    if T < 1:
        raise DimensionError("need at least one frame")
    if weights is None:
        weights = build_weights(theta)
    gamma1 = theta.lambda1 / theta.alpha
    gamma2 = theta.lambda2 / theta.alpha
    d, K = theta.d, theta.K
    h = np.empty((batch, T, K, d))
    v = np.empty((batch, T, d))
    case = np.empty((batch, T, K, d), dtype=np.int8)
    shat = np.empty((batch, T, theta.n))
    h_prev = np.broadcast_to(theta.h0, (batch, d))
    margin = np.inf
    for t in range(T):
        xu = x[:, t] @ weights.U.T
        v[:, t] = h_prev @ theta.G.T
        z = h_prev @ weights.W1.T + xu
        h_cur = None
        for k in range(K):
            if k > 0:
                z = h_cur @ weights.S.T + xu
            h_cur, case_k = _prox_eval(z, v[:, t], gamma1, gamma2)
            if not np.all(np.isfinite(h_cur)):
                raise NumericError(f"non-finite hidden state at t={t + 1}, k={k + 1}")
            if want_margin:
                margin = min(margin, float(np.min(boundary_margin(z, v[:, t], gamma1, gamma2))))
            h[:, t, k] = h_cur
            case[:, t, k] = case_k
        shat[:, t] = h_cur @ weights.V.T
        h_prev = h_cur
    out = {"h": h, "v": v, "shat": shat, "case": case}
    if want_margin:
        out["margin"] = margin
    return out


def forward_sequence(x_seq, theta):
    """Run the unfolded network on one measurement sequence (m, T).

    Returns HiddenStates with h of shape (T, K, d) and reconstructions
    shat of shape (n, T), where shat[:, t] = V h[t, K-1].
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[0] != theta.m:
        raise DimensionError(f"x_seq must have shape ({theta.m}, T), got {x_seq.shape}")
    out = forward_batch(x_seq.T[None, :, :], theta)
    return HiddenStates(h=out["h"][0], shat=out["shat"][0].T, case=out["case"][0],
                        v=out["v"][0])


def _activation(z, kind):
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ParameterError(f"unknown activation {kind!r}")


def stacked_forward_batch(x, weights, h_init, activation="tanh", want_margin=False):
    """Batched stacked-RNN forward over measurements (B, T, m).

    Layer 1 sees W[0] h_prev^(1) + U x_t; deeper layers see their own
    recurrent state plus the layer below: W[k] h_prev^(k+1) + S[k] h^(k).
    Returns (h, shat), shapes (B, T, K, d) and (B, T, n); with want_margin,
    returns (h, shat, margin) where margin is the smallest |preactivation|
    (the relu kink distance; tanh has no kink but the value is still
    reported).
    """
    x = np.asarray(x, dtype=np.float64)
    K, d, _ = weights.W.shape
    h_init = np.asarray(h_init, dtype=np.float64)
    if h_init.shape != (K, d):
        raise DimensionError(f"h_init must be ({K}, {d}), got {h_init.shape}")
    if x.ndim != 3 or x.shape[2] != weights.U.shape[1]:
        raise DimensionError(f"x must have shape (B, T, {weights.U.shape[1]}), got {x.shape}")
    batch, T, _ = x.shape
    h = np.empty((batch, T, K, d))
    shat = np.empty((batch, T, weights.V.shape[0]))
    state = [np.broadcast_to(h_init[k], (batch, d)) for k in range(K)]
    margin = np.inf
    for t in range(T):
        h_below = None
        for k in range(K):
            z = state[k] @ weights.W[k].T
            if k == 0:
                z = z + x[:, t] @ weights.U.T
            else:
                z = z + h_below @ weights.S[k].T
            if want_margin:
                margin = min(margin, float(np.min(np.abs(z))))
            h_below = _activation(z, activation)
            if not np.all(np.isfinite(h_below)):
                raise NumericError(f"non-finite hidden state at t={t + 1}, k={k + 1}")
            state[k] = h_below
            h[:, t, k] = h_below
        shat[:, t] = h_below @ weights.V.T + weights.b
    if want_margin:
        return h, shat, margin
    return h, shat


def stacked_rnn_forward(x_seq, weights, h_init, activation="tanh"):
    """Stacked-RNN forward on one sequence (m, T); see stacked_forward_batch."""
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[0] != weights.U.shape[1]:
        raise DimensionError(
            f"x_seq must have shape ({weights.U.shape[1]}, T), got {x_seq.shape}"
        )
    h, shat = stacked_forward_batch(x_seq.T[None, :, :], weights, h_init, activation)
    return HiddenStates(h=h[0], shat=shat[0].T)
