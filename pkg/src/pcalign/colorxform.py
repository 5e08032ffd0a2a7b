"""Polynomial color lifting and the inlier-gated color transform fit.

Image colors are lifted with ``[1, R, G, B, RG, GB, RB, R^2, G^2, B^2]`` and
mapped into the point-cloud color space by a 3x10 matrix ``D``. A first-order
variant uses ``[1, R, G, B]`` with a 3x4 matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InlierSet",
    "lift",
    "poly_kernel",
    "poly_kernel_jacobian",
    "identity_transform",
    "solve_color_transform",
    "apply_color_transform",
    "color_transform_jacobian",
    "color_transform_vjp",
]

N_FEATURES = {1: 4, 2: 10}
RIDGE = 1e-8


def lift(rgb, order=2):
    """Features as rows: shape ``(n_features,) + rgb.shape[:-1]``."""
    rgb = np.asarray(rgb, dtype=float)
    if order not in N_FEATURES:
        raise ValueError(f"unsupported kernel order {order}")
    out = np.empty((N_FEATURES[order],) + rgb.shape[:-1])
    R, G, B = np.moveaxis(rgb, -1, 0)
    out[0] = 1.0
    out[1], out[2], out[3] = R, G, B
    if order == 2:
        out[4], out[5], out[6] = R * G, G * B, R * B
        out[7], out[8], out[9] = R * R, G * G, B * B
    return out


def poly_kernel(rgb, order=2):
    """Lift colors of shape (..., 3) to (..., 10), or (..., 4) for order 1."""
    return np.moveaxis(lift(rgb, order), 0, -1)


def poly_kernel_jacobian(rgb, order=2):
    """d(features)/d(rgb), shape (..., n_features, 3)."""
    rgb = np.asarray(rgb, dtype=float)
    R, G, B = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    Jk = np.zeros(rgb.shape[:-1] + (N_FEATURES[order], 3))
    Jk[..., 1, 0] = 1.0
    Jk[..., 2, 1] = 1.0
    Jk[..., 3, 2] = 1.0
    if order == 2:
        Jk[..., 4, 0], Jk[..., 4, 1] = G, R
        Jk[..., 5, 1], Jk[..., 5, 2] = B, G
        Jk[..., 6, 0], Jk[..., 6, 2] = B, R
        Jk[..., 7, 0] = 2 * R
        Jk[..., 8, 1] = 2 * G
        Jk[..., 9, 2] = 2 * B
    return Jk


def identity_transform(order=2):
    """The transform that returns the input color (row l selects feature l+1)."""
    D = np.zeros((3, N_FEATURES[order]))
    D[0, 1] = D[1, 2] = D[2, 3] = 1.0
    return D


def _order_of(D):
    for order, n in N_FEATURES.items():
        if D.shape == (3, n):
            return order
    raise ValueError(f"color transform must be 3x4 or 3x10, got {D.shape}")


@dataclass
class InlierSet:
    flags: np.ndarray
    beta_max: float
    degenerate: bool = False
    rounds: int = 0
    cost_trace: list = field(default_factory=list)
    """Truncated objective ``sum(min(res^2, beta^2)) + ridge*|D|^2`` per fit."""


REFINE_STEPS = 2


def _fit(Kt, Ct, ridge):
    A = Kt @ Kt.T
    A[np.diag_indices_from(A)] += ridge
    B = Kt @ Ct.T
    X = np.linalg.solve(A, B)
    # iterated Tikhonov: the ridge guards the solve, refinement removes its bias
    for _ in range(REFINE_STEPS):
        X += np.linalg.solve(A, B - (A @ X - ridge * X))
    return X.T


def _res2(D, Kt, Ct):
    diff = D @ Kt
    diff -= Ct
    diff *= diff
    return diff.sum(axis=0)


def _truncated_cost(res2, beta_max, D, ridge):
    return float(np.sum(np.minimum(res2, beta_max**2)) + ridge * np.sum(D * D))


def solve_color_transform(img_colors, pc_colors, beta_max=0.3, max_rounds=5,
                          order=2, ridge=RIDGE, features=None):
    """Fit ``D`` so that ``D @ K(img)`` matches ``pc_colors``.

    The first fit uses all points. Each following round flags inliers with
    ``|D k_j - c_j| < beta_max`` and refits on them, until the inlier set
    stops changing or ``max_rounds`` refits have run. Each step lowers the
    truncated quadratic cost recorded in ``InlierSet.cost_trace``.

    If fewer inliers than features remain, the previous ``D`` is kept and
    ``InlierSet.degenerate`` is set. The returned flags are always evaluated
    at the returned ``D``. ``features`` may pass ``lift(img_colors, order)``
    when the caller already has it.
    """
    img_colors = np.asarray(img_colors, dtype=float)
    pc_colors = np.asarray(pc_colors, dtype=float)
    if img_colors.shape != pc_colors.shape or img_colors.ndim != 2 or img_colors.shape[1] != 3:
        raise ValueError("color arrays must both have shape (n, 3)")
    if not (np.all(np.isfinite(img_colors)) and np.all(np.isfinite(pc_colors))):
        raise ValueError("color arrays must be finite")
    n_feat = N_FEATURES[order]
    Kt = lift(img_colors, order) if features is None else features
    Ct = np.ascontiguousarray(pc_colors.T)
    beta2 = beta_max**2

    if Kt.shape[1] < n_feat:
        D = identity_transform(order)
        return D, InlierSet(_res2(D, Kt, Ct) < beta2, beta_max, degenerate=True)

    D = _fit(Kt, Ct, ridge)
    res2 = _res2(D, Kt, Ct)
    flags = res2 < beta2
    info = InlierSet(flags, beta_max, cost_trace=[_truncated_cost(res2, beta_max, D, ridge)])

    for _ in range(max_rounds):
        if np.count_nonzero(flags) < n_feat:
            info.degenerate = True
            break
        D = _fit(Kt[:, flags], Ct[:, flags], ridge)
        info.rounds += 1
        res2 = _res2(D, Kt, Ct)
        info.cost_trace.append(_truncated_cost(res2, beta_max, D, ridge))
        new_flags = res2 < beta2
        if np.array_equal(new_flags, flags):
            break
        flags = new_flags
    info.flags = res2 < beta2
    return D, info


def apply_color_transform(D, rgb):
    """Transformed colors clipped to [0, 1] plus per-channel clip flags.

    Gradients downstream ignore the clip (straight-through); the flags only
    record where it was active.
    """
    D = np.asarray(D, dtype=float)
    raw = poly_kernel(rgb, _order_of(D)) @ D.T
    out = np.clip(raw, 0.0, 1.0)
    return out, out != raw


def _apply_lifted(D, Kt):
    raw = (D @ Kt).T
    out = np.clip(raw, 0.0, 1.0)
    return out, out != raw


def color_transform_jacobian(D, rgb):
    """d(D K(rgb))/d(rgb) of the unclipped transform, shape (..., 3, 3)."""
    D = np.asarray(D, dtype=float)
    return D @ poly_kernel_jacobian(rgb, _order_of(D))


def color_transform_vjp(D, rgb, a):
    """Row-wise ``a @ color_transform_jacobian(D, rgb)`` without forming the Jacobians.

    ``a`` and ``rgb`` have shape (m, 3); the result has shape (m, 3).
    """
    D = np.asarray(D, dtype=float)
    # work on (features, m) rows so every slice is contiguous
    e = D.T @ np.ascontiguousarray(a.T)
    g = e[1:4].copy()
    if D.shape[1] == 10:
        R, G, B = np.ascontiguousarray(np.asarray(rgb, dtype=float).T)
        g[0] += e[4] * G + e[6] * B + 2 * e[7] * R
        g[1] += e[4] * R + e[5] * B + 2 * e[8] * G
        g[2] += e[5] * G + e[6] * R + 2 * e[9] * B
    return g.T
