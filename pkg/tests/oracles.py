"""Independent test oracles: brute-force minimizers that share no code with
the solvers they check."""

import numpy as np


def grid_refine_minimize(f, dim, lo=-3.0, hi=3.0, coarse=0.1, kink_coords=None,
                         min_step=3e-7, max_rounds=200):
    """Minimize a convex function over a box by coarse gridding plus local
    refinement.

    Parameters
    ----------
    f : callable
        Maps an array of points with shape (P, dim) to objective values (P,).
    dim : int
    lo, hi : float
        Global box bounds (same for every axis).
    coarse : float
        Initial grid step.
    kink_coords : list of per-axis iterables, optional
        Coordinates (e.g. kinks of l1 terms) always injected into the grid
        of their axis so non-smooth minima are sampled exactly.
    min_step : float
        Refinement stops once the step drops below this.

    Returns
    -------
    (point, value)
    """
    if kink_coords is None:
        kink_coords = [() for _ in range(dim)]
    center = np.full(dim, 0.5 * (lo + hi))
    half = 0.5 * (hi - lo)
    step = coarse
    best_point = center.copy()
    best_value = float(f(best_point[None, :])[0])
    for _ in range(max_rounds):
        axes = []
        for a in range(dim):
            coords = np.arange(center[a] - half, center[a] + half + 0.5 * step, step)
            extra = [c for c in kink_coords[a] if center[a] - half <= c <= center[a] + half]
            extra.append(best_point[a])
            coords = np.unique(np.clip(np.concatenate([coords, np.asarray(extra)]), lo, hi))
            axes.append(coords)
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([g.ravel() for g in mesh], axis=1)
        values = f(points)
        i = int(np.argmin(values))
        point, value = points[i], float(values[i])
        if value < best_value:
            best_value, best_point = value, point.copy()
        on_face = False
        for a in range(dim):
            lo_face = center[a] - half
            hi_face = center[a] + half
            if (point[a] <= lo_face + 1e-15 and lo_face > lo + 1e-12) or (
                point[a] >= hi_face - 1e-15 and hi_face < hi - 1e-12
            ):
                on_face = True
        if on_face:
            # walk: recenter at the face minimizer, keep the current scale
            center = point.copy()
            continue
        if step <= min_step:
            break
        center = point.copy()
        step = step / 5.0
        half = 10.0 * step
    return best_point, best_value


def l1l1_objective_batch(ops, x_t, h_prev, lambda1, lambda2):
    """Vectorized per-frame double-sparsity objective over points (P, d)."""
    B = ops.A @ ops.D
    v = ops.G @ h_prev

    def f(points):
        residual = points @ B.T - x_t
        coupling = points - v
        return (
            0.5 * np.sum(residual**2, axis=1)
            + lambda1 * np.sum(np.abs(points), axis=1)
            + lambda2 * np.sum(np.abs(coupling), axis=1)
        )

    return f, v


def sista_objective_batch(ops, x_t, h_prev, lambda1, lambda2):
    """Vectorized per-frame smooth-coupling objective over points (P, d)."""
    B = ops.A @ ops.D
    prev_signal = ops.D @ h_prev
    if ops.F is not None:
        prev_signal = ops.F @ prev_signal

    def f(points):
        residual = points @ B.T - x_t
        coupling = points @ ops.D.T - prev_signal
        return (
            0.5 * np.sum(residual**2, axis=1)
            + lambda1 * np.sum(np.abs(points), axis=1)
            + 0.5 * lambda2 * np.sum(coupling**2, axis=1)
        )

    return f

def dense_spectral_bound(ops):
    """Largest eigenvalue of (AD)^T (AD) by dense symmetric eigendecomposition."""
    B = ops.A @ ops.D
    return float(np.linalg.eigvalsh(B.T @ B)[-1])
