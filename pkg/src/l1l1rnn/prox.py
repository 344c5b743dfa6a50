"""Closed-form proximal operator of the double sparsity penalty.

For thresholds ``gamma1, gamma2 >= 0`` and a reference value ``v``, the
operator maps ``u`` to the unique minimizer of

    0.5 * (h - u)**2 + gamma1 * |h| + gamma2 * |h - v|

which promotes codes that are both sparse and close to ``v``. The objective
is strictly convex and piecewise quadratic, so the minimizer is piecewise
affine in ``u`` with five cases per sign of ``v``: two flat cases that clamp
the output to exactly ``0`` or exactly ``v``, and three shifted-identity
cases. Case intervals are half open: the lower bound belongs to the case,
the upper bound does not, which fixes the (sub)derivative reported exactly
on a boundary.

``prox_oracle`` recomputes the minimizer by direct objective evaluation
over the finite candidate set {0, v, u +- gamma1 +- gamma2} and exists so
the closed form can be checked against something that cannot share its
case analysis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

__all__ = [
    "ProxParams",
    "ProxDerivative",
    "soft_threshold",
    "l1l1_prox",
    "l1l1_prox_vec",
    "l1l1_prox_grad",
    "prox_oracle",
    "boundary_margin",
]


@dataclass(frozen=True)
class ProxParams:
    """Nonnegative shrinkage thresholds of the two penalty terms.

    In the solvers these are the regularization weights divided by the
    step-size constant alpha: ``gamma1 = lambda1 / alpha`` weights ``|h|``
    and ``gamma2 = lambda2 / alpha`` weights ``|h - v|``.
    """

    gamma1: float
    gamma2: float

    def __post_init__(self):
        for name in ("gamma1", "gamma2"):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value < 0.0:
                raise ParameterError(f"{name} must be finite and >= 0, got {value!r}")
            object.__setattr__(self, name, value)


@dataclass(frozen=True)
class ProxDerivative:
    """Partial derivatives of the prox output w.r.t. (u, v, gamma1, gamma2)."""

    d_u: float
    d_v: float
    d_gamma1: float
    d_gamma2: float


# One row per case: rows 0-4 are the v >= 0 branch top to bottom, rows 5-9
# the v < 0 branch. The output of case c is COEF[c] @ (u, v, gamma1, gamma2);
# because the operator is piecewise affine, the same row is also its exact
# partial-derivative vector on that case. The flat cases (all-zero row, or
# the rows selecting v) therefore return exactly 0.0 / exactly v.
_COEF = np.array(
    [
        [1.0, 0.0, -1.0, -1.0],  # u - g1 - g2
        [0.0, 1.0, 0.0, 0.0],    # v
        [1.0, 0.0, -1.0, 1.0],   # u - g1 + g2
        [0.0, 0.0, 0.0, 0.0],    # 0
        [1.0, 0.0, 1.0, 1.0],    # u + g1 + g2
        [1.0, 0.0, -1.0, -1.0],  # u - g1 - g2
        [0.0, 0.0, 0.0, 0.0],    # 0
        [1.0, 0.0, 1.0, -1.0],   # u + g1 - g2
        [0.0, 1.0, 0.0, 0.0],    # v
        [1.0, 0.0, 1.0, 1.0],    # u + g1 + g2
    ]
)


def _prox_case(u, v, gamma1, gamma2):
    """Case index (int, 0..9) of each element, half-open interval convention."""
    g1, g2 = gamma1, gamma2
    # np.select keeps the first matching condition, which implements the
    # lower-inclusive cascade for each branch.
    case_pos = np.select(
        [u >= v + g1 + g2, u >= v + g1 - g2, u >= g1 - g2, u >= -g1 - g2],
        [0, 1, 2, 3],
        default=4,
    )
    case_neg = np.select(
        [u >= g1 + g2, u >= -g1 + g2, u >= v - g1 + g2, u >= v - g1 - g2],
        [5, 6, 7, 8],
        default=9,
    )
    return np.where(np.asarray(v) >= 0.0, case_pos, case_neg)


def _prox_eval(u, v, gamma1, gamma2):
    """Vectorized closed form; returns (output, case index)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    case = _prox_case(u, v, gamma1, gamma2)
    coef = _COEF[case]
    out = coef[..., 0] * u + coef[..., 1] * v + coef[..., 2] * gamma1 + coef[..., 3] * gamma2
    return out, case


def soft_threshold(u, gamma):
    """Elementwise soft threshold ``sign(u) * max(|u| - gamma, 0)``.

    Parameters
    ----------
    u : scalar or array
    gamma : float
        Threshold, must be finite and >= 0.
    """
    if not np.isfinite(gamma) or gamma < 0.0:
        raise ParameterError(f"gamma must be finite and >= 0, got {gamma!r}")
    u = np.asarray(u, dtype=np.float64)
    out = np.sign(u) * np.maximum(np.abs(u) - gamma, 0.0)
    return float(out) if out.ndim == 0 else out


def l1l1_prox(u, v, params):
    """Scalar closed-form prox of ``gamma1*|h| + gamma2*|h - v|`` at ``u``.

    Parameters
    ----------
    u : float
        Point the operator is applied to.
    v : float
        Reference value of the second penalty term.
    params : ProxParams

    Returns
    -------
    float
        The unique minimizer of ``0.5*(h-u)**2 + gamma1*|h| + gamma2*|h-v|``.
        Flat cases return exactly ``0.0`` or exactly ``v``.
    """
    if not (np.isfinite(u) and np.isfinite(v)):
        raise ParameterError(f"u and v must be finite, got u={u!r}, v={v!r}")
    out, _ = _prox_eval(u, v, params.gamma1, params.gamma2)
    return float(out)


def l1l1_prox_vec(u, v, params):
    """Elementwise prox over matching 1-D (or same-shape) arrays.

    ``v`` holds the per-element reference values; shapes must match exactly.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionError(f"u and v must have the same shape, got {u.shape} and {v.shape}")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise ParameterError("u and v must be finite")
    out, _ = _prox_eval(u, v, params.gamma1, params.gamma2)
    return out


def l1l1_prox_grad(u, v, params):
    """Piecewise partial derivatives of the prox at a scalar point.

    On a case boundary the derivative of the case owning the boundary
    (lower bound inclusive) is reported. Values are always in {-1, 0, 1}.
    """
    if not (np.isfinite(u) and np.isfinite(v)):
        raise ParameterError(f"u and v must be finite, got u={u!r}, v={v!r}")
    case = int(_prox_case(u, v, params.gamma1, params.gamma2))
    cu, cv, cg1, cg2 = _COEF[case]
    return ProxDerivative(d_u=cu, d_v=cv, d_gamma1=cg1, d_gamma2=cg2)


def prox_oracle(u, v, params):
    """Exact minimizer by direct search, independent of the case analysis.

    The objective ``0.5*(h-u)**2 + gamma1*|h| + gamma2*|h-v|`` is strictly
    convex and piecewise quadratic with kinks only at 0 and v, so its
    minimizer is either a kink or a stationary point of one of the smooth
    pieces; all six candidates are evaluated and the best one returned.
    """
    g1, g2 = params.gamma1, params.gamma2
    u = float(u)
    v = float(v)
    candidates = np.array([0.0, v, u - g1 - g2, u - g1 + g2, u + g1 - g2, u + g1 + g2])
    objective = (
        0.5 * (candidates - u) ** 2
        + g1 * np.abs(candidates)
        + g2 * np.abs(candidates - v)
    )
    return float(candidates[np.argmin(objective)])


def boundary_margin(u, v, gamma1, gamma2):
    """Distance of each (u, v) pair to the nearest case boundary.

    Counts the four interval endpoints of the active sign branch and, since
    the branch itself flips at v = 0, also |v|. Gradient checks use this to
    reject points where a finite-difference step could change the case.
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    g1, g2 = gamma1, gamma2
    pos = v >= 0.0
    t0 = np.where(pos, v + g1 + g2, g1 + g2)
    t1 = np.where(pos, v + g1 - g2, -g1 + g2)
    t2 = np.where(pos, g1 - g2, v - g1 + g2)
    t3 = np.where(pos, -g1 - g2, v - g1 - g2)
    margin = np.abs(u - t0)
    for t in (t1, t2, t3):
        margin = np.minimum(margin, np.abs(u - t))
    return np.minimum(margin, np.abs(v))
