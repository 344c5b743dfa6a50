"""Proximal-gradient solvers for frame-by-frame sparse recovery.

Given measurements ``x_t = A s_t`` of signals that are sparse in a
dictionary ``D`` (``s_t = D h_t``), three reference solvers are provided:

* ``ista``: plain iterative soft thresholding for a single frame,
* ``l1l1_solve_sequence``: proximal gradient on the double sparsity
  objective ``0.5*||x_t - A D h||^2 + lambda1*||h||_1 +
  lambda2*||h - G h_prev||_1`` with the previous frame's code propagated
  through the transition operator ``G`` and used to warm start,
* ``sista_solve_sequence``: the smooth-coupling baseline whose second
  regularizer is the quadratic ``0.5*lambda2*||D h - F D h_prev||^2``.

All of them run a fixed number of inner iterations (tolerance-based early
exit is opt-in) and use matrix-vector products only; the step constant
``alpha`` should be at least the squared spectral norm of ``A D``, see
``power_iteration_bound``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .prox import ProxParams, _prox_eval, soft_threshold

__all__ = [
    "Operators",
    "SolverConfig",
    "StepSizeWarning",
    "objective_l1",
    "objective_l1l1",
    "objective_sista",
    "ista",
    "l1l1_solve_sequence",
    "sista_solve_sequence",
    "power_iteration_bound",
]


class StepSizeWarning(UserWarning):
    """alpha is below the spectral bound, descent is not guaranteed."""


def _as_matrix(name, arr, shape=None):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != shape:
        raise DimensionError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


@dataclass
class Operators:
    """Measurement, dictionary, and coupling operators of one problem.

    Parameters
    ----------
    A : (m, n) array
        Sensing matrix.
    D : (n, d) array
        Dictionary, usually overcomplete (d >= n).
    G : (d, d) array, optional
        Code transition operator; required by the l1-l1 solver.
    F : (n, n) array, optional
        Signal correlation operator of the smooth-coupling baseline;
        ``None`` means identity.
    """

    A: np.ndarray
    D: np.ndarray
    G: np.ndarray | None = None
    F: np.ndarray | None = None

    def __post_init__(self):
        self.A = _as_matrix("A", self.A)
        self.D = _as_matrix("D", self.D, (self.A.shape[1], np.asarray(self.D).shape[-1]))
        if self.G is not None:
            self.G = _as_matrix("G", self.G, (self.d, self.d))
        if self.F is not None:
            self.F = _as_matrix("F", self.F, (self.n, self.n))

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
class SolverConfig:
    """Hyperparameters of one sequence solve.

    ``inner_iters`` is the per-frame iteration count K; ``tolerance`` > 0
    enables early exit when the max-norm change between successive inner
    iterates drops below it.
    """

    alpha: float
    lambda1: float
    lambda2: float
    inner_iters: int
    tolerance: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.alpha) or self.alpha <= 0.0:
            raise ParameterError(f"alpha must be finite and > 0, got {self.alpha!r}")
        for name in ("lambda1", "lambda2", "tolerance"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ParameterError(f"{name} must be finite and >= 0, got {value!r}")
        if int(self.inner_iters) != self.inner_iters or self.inner_iters < 0:
            raise ParameterError(f"inner_iters must be a nonnegative integer, got {self.inner_iters!r}")


def _check_vector(name, vec, size):
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (size,):
        raise DimensionError(f"{name} must have shape ({size},), got {vec.shape}")
    return vec


def objective_l1(h, x, ops, lam):
    """Value of ``0.5*||x - A D h||^2 + lam*||h||_1``."""
    h = _check_vector("h", h, ops.d)
    x = _check_vector("x", x, ops.m)
    residual = x - ops.A @ (ops.D @ h)
    return 0.5 * float(residual @ residual) + lam * float(np.sum(np.abs(h)))


def objective_l1l1(h_t, x_t, h_prev, ops, lambda1, lambda2):
    """Per-frame double sparsity objective.

    ``0.5*||x_t - A D h_t||^2 + lambda1*||h_t||_1
    + lambda2*||h_t - G h_prev||_1`` with the coupling reference
    ``G h_prev`` computed from the previous frame's code.
    """
    if ops.G is None:
        raise ParameterError("objective_l1l1 needs ops.G")
    h_t = _check_vector("h_t", h_t, ops.d)
    h_prev = _check_vector("h_prev", h_prev, ops.d)
    x_t = _check_vector("x_t", x_t, ops.m)
    residual = x_t - ops.A @ (ops.D @ h_t)
    coupling = h_t - ops.G @ h_prev
    return (
        0.5 * float(residual @ residual)
        + lambda1 * float(np.sum(np.abs(h_t)))
        + lambda2 * float(np.sum(np.abs(coupling)))
    )


def objective_sista(h_t, x_t, h_prev, ops, lambda1, lambda2):
    """Per-frame smooth-coupling objective.

    ``0.5*||x_t - A D h_t||^2 + lambda1*||h_t||_1
    + 0.5*lambda2*||D h_t - F D h_prev||^2``; ``ops.F is None`` means
    identity correlation.
    """
    h_t = _check_vector("h_t", h_t, ops.d)
    h_prev = _check_vector("h_prev", h_prev, ops.d)
    x_t = _check_vector("x_t", x_t, ops.m)
    residual = x_t - ops.A @ (ops.D @ h_t)
    prev_signal = ops.D @ h_prev
    if ops.F is not None:
        prev_signal = ops.F @ prev_signal
    coupling = ops.D @ h_t - prev_signal
    return (
        0.5 * float(residual @ residual)
        + lambda1 * float(np.sum(np.abs(h_t)))
        + 0.5 * lambda2 * float(coupling @ coupling)
    )


def power_iteration_bound(ops, iters=100):
    """Safe step constant: largest eigenvalue of ``(A D)^T (A D)`` times 1.01.

    Runs `iters` power iterations from a fixed-seed start vector, so the
    returned bound is deterministic for given operators.
    """
    if int(iters) != iters or iters < 1:
        raise ParameterError(f"iters must be a positive integer, got {iters!r}")
    rng = np.random.default_rng(0x5EED)
    y = rng.standard_normal(ops.d)
    norm = np.linalg.norm(y)
    if norm == 0.0:
        return 0.0
    y /= norm
    eig = 0.0
    for _ in range(int(iters)):
        w = ops.D.T @ (ops.A.T @ (ops.A @ (ops.D @ y)))
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        y = w / norm
        eig = float(y @ (ops.D.T @ (ops.A.T @ (ops.A @ (ops.D @ y)))))
    return 1.01 * eig


def _warn_if_step_small(ops, alpha):
    estimate = power_iteration_bound(ops, 32) / 1.01
    if alpha < estimate * (1.0 - 1e-9):
        warnings.warn(
            f"alpha={alpha:.6g} is below the spectral estimate {estimate:.6g}; "
            "descent is not guaranteed",
            StepSizeWarning,
            stacklevel=3,
        )


def ista(x, ops, lam, alpha, iters, h_init=None, tol=0.0, check_step=True):
    """Iterative soft thresholding for one frame.

    Runs ``h <- soft_threshold(h - D^T A^T (A D h - x) / alpha, lam / alpha)``
    for `iters` steps starting from `h_init` (zeros when omitted), with
    optional early exit when the max-norm iterate change drops below `tol`.

    Returns the final code vector of length ``ops.d``.
    """
    if not np.isfinite(alpha) or alpha <= 0.0:
        raise ParameterError(f"alpha must be finite and > 0, got {alpha!r}")
    if not np.isfinite(lam) or lam < 0.0:
        raise ParameterError(f"lam must be finite and >= 0, got {lam!r}")
    x = _check_vector("x", x, ops.m)
    h = np.zeros(ops.d) if h_init is None else _check_vector("h_init", h_init, ops.d).copy()
    if check_step:
        _warn_if_step_small(ops, alpha)
    threshold = lam / alpha
    for _ in range(int(iters)):
        grad = ops.D.T @ (ops.A.T @ (ops.A @ (ops.D @ h) - x))
        h_new = soft_threshold(h - grad / alpha, threshold)
        done = tol > 0.0 and float(np.max(np.abs(h_new - h))) < tol
        h = h_new
        if done:
            break
    return h


def l1l1_solve_sequence(x_seq, ops, cfg, h0=None, return_trace=False):
    """Frame-by-frame proximal gradient solve of the double sparsity model.

    For each frame t the reference ``v = G h_{t-1}`` is fixed, the inner
    iteration is warm started at ``v``, and K steps of

        u = h - D^T A^T (A D h - x_t) / alpha
        h = prox(u, v)  with thresholds (lambda1/alpha, lambda2/alpha)

    are applied. The coupling operator never enters the inner loop except
    through ``v``.

    Parameters
    ----------
    x_seq : (m, T) array
        One measurement vector per column.
    ops : Operators
        Must carry ``G``.
    cfg : SolverConfig
    h0 : (d,) array, optional
        Code preceding the first frame; zeros when omitted.
    return_trace : bool
        When true, also return a list of per-frame objective traces, each
        of length ``K+1`` with entry 0 the warm-start objective value.

    Returns
    -------
    (d, T) array, or ``(codes, traces)`` when tracing.
    """
    if ops.G is None:
        raise ParameterError("l1l1_solve_sequence needs ops.G")
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[0] != ops.m:
        raise DimensionError(f"x_seq must have shape ({ops.m}, T), got {x_seq.shape}")
    if x_seq.shape[1] < 1:
        raise DimensionError("x_seq must contain at least one frame")
    h_prev = np.zeros(ops.d) if h0 is None else _check_vector("h0", h0, ops.d)
    _warn_if_step_small(ops, cfg.alpha)
    params = ProxParams(cfg.lambda1 / cfg.alpha, cfg.lambda2 / cfg.alpha)
    T = x_seq.shape[1]
    codes = np.empty((ops.d, T))
    traces = []
    for t in range(T):
        x_t = x_seq[:, t]
        v = ops.G @ h_prev
        h = v.copy()
        trace = [objective_l1l1(h, x_t, h_prev, ops, cfg.lambda1, cfg.lambda2)]
        for _ in range(cfg.inner_iters):
            grad = ops.D.T @ (ops.A.T @ (ops.A @ (ops.D @ h) - x_t))
            h_new, _ = _prox_eval(h - grad / cfg.alpha, v, params.gamma1, params.gamma2)
            if return_trace:
                trace.append(objective_l1l1(h_new, x_t, h_prev, ops, cfg.lambda1, cfg.lambda2))
            done = cfg.tolerance > 0.0 and float(np.max(np.abs(h_new - h))) < cfg.tolerance
            h = h_new
            if done:
                break
        codes[:, t] = h
        traces.append(np.asarray(trace))
        h_prev = h
    if return_trace:
        return codes, traces
    return codes


def sista_solve_sequence(x_seq, ops, cfg, h0=None, return_trace=False):
    """Frame-by-frame proximal gradient solve of the smooth-coupling model.

    The quadratic coupling ``0.5*lambda2*||D h - F D h_prev||^2`` joins the
    data term in the gradient, so each inner step is a soft threshold at
    ``lambda1 / alpha``. The per-frame iteration is warm started at the
    previous frame's final code (`h0` for the first frame), which makes a
    ``lambda2 = 0`` run coincide with per-frame ISTA under the same starts.

    Same shapes and return conventions as ``l1l1_solve_sequence``.
    """
    x_seq = np.asarray(x_seq, dtype=np.float64)
    if x_seq.ndim != 2 or x_seq.shape[0] != ops.m:
        raise DimensionError(f"x_seq must have shape ({ops.m}, T), got {x_seq.shape}")
    if x_seq.shape[1] < 1:
        raise DimensionError("x_seq must contain at least one frame")
    h_prev = np.zeros(ops.d) if h0 is None else _check_vector("h0", h0, ops.d)
    _warn_if_step_small(ops, cfg.alpha)
    threshold = cfg.lambda1 / cfg.alpha
    T = x_seq.shape[1]
    codes = np.empty((ops.d, T))
    traces = []
    for t in range(T):
        x_t = x_seq[:, t]
        prev_signal = ops.D @ h_prev
        if ops.F is not None:
            prev_signal = ops.F @ prev_signal
        h = h_prev.copy()
        trace = [objective_sista(h, x_t, h_prev, ops, cfg.lambda1, cfg.lambda2)]
        for _ in range(cfg.inner_iters):
            grad = ops.D.T @ (ops.A.T @ (ops.A @ (ops.D @ h) - x_t))
            grad = grad + cfg.lambda2 * (ops.D.T @ (ops.D @ h - prev_signal))
            h_new = soft_threshold(h - grad / cfg.alpha, threshold)
            if return_trace:
                trace.append(objective_sista(h_new, x_t, h_prev, ops, cfg.lambda1, cfg.lambda2))
            done = cfg.tolerance > 0.0 and float(np.max(np.abs(h_new - h))) < cfg.tolerance
            h = h_new
            if done:
                break
        codes[:, t] = h
        traces.append(np.asarray(trace))
        h_prev = h
    if return_trace:
        return codes, traces
    return codes
