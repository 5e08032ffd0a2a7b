"""Photometric residuals with Student-t weights.

All reductions go through ``np.sum`` on contiguous arrays (pairwise
summation in a fixed order), so results do not depend on thread count.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "AlignmentError",
    "residuals",
    "t_weights",
    "sigma_fixed_point",
    "weighted_loss",
    "SIGMA_FLOOR",
]

SIGMA_FLOOR = 1e-6


class AlignmentError(RuntimeError):
    """The alignment cannot proceed (no visible points, non-finite loss, ...)."""


def residuals(transformed, pc_colors, mask=None):
    """Signed residuals ``transformed - pc_colors`` for the visible points.

    ``mask`` may be a boolean array or a VisibilityMask; rows it excludes
    are dropped from the result.
    """
    transformed = np.asarray(transformed, dtype=float)
    pc_colors = np.asarray(pc_colors, dtype=float)
    if transformed.shape != pc_colors.shape:
        raise ValueError("transformed and pc_colors must have the same shape")
    if mask is not None:
        mask = np.asarray(getattr(mask, "mask", mask), dtype=bool)
        transformed = transformed[mask]
        pc_colors = pc_colors[mask]
    if len(transformed) == 0:
        raise AlignmentError("no visible points")
    return transformed - pc_colors


def t_weights(r, sigma, nu=5.0):
    """``(nu + 1) / (nu + r^2 / sigma^2)`` elementwise."""
    if sigma <= 0 or nu <= 0:
        raise ValueError("sigma and nu must be positive")
    r = np.asarray(r, dtype=float)
    return (nu + 1.0) / (nu + (r / sigma) ** 2)


def sigma_fixed_point(r, nu=5.0, tol=1e-6, max_iter=50, full_output=False):
    """Robust scale from the fixed point of the weighted second moment.

    Iterates ``sigma^2 <- mean(r^2 * w(r, sigma))`` starting from the RMS of
    ``r`` until the relative change drops below ``tol``. The mean runs over
    every residual entry (visible points times channels). Returns
    SIGMA_FLOOR when all residuals vanish.

    With ``full_output`` the result is ``(sigma, iterations, converged)``.
    """
    r2 = np.square(np.asarray(r, dtype=float)).ravel()
    n = r2.size
    if n == 0:
        raise ValueError("no residuals")
    sigma2 = np.sum(r2) / n
    if not sigma2 > SIGMA_FLOOR**2:
        return (SIGMA_FLOOR, 0, True) if full_output else SIGMA_FLOOR
    sigma = np.sqrt(sigma2)
    buf = np.empty_like(r2)
    done = False
    it = 0
    while it < max_iter and not done:
        it += 1
        # buf = r2 * (nu + 1) / (nu + r2 / sigma2), without temporaries
        np.multiply(r2, 1.0 / sigma2, out=buf)
        buf += nu
        np.divide(nu + 1.0, buf, out=buf)
        buf *= r2
        sigma2 = np.sum(buf) / n
        new_sigma = max(np.sqrt(sigma2), SIGMA_FLOOR)
        done = abs(new_sigma - sigma) < tol * sigma
        sigma = new_sigma
        sigma2 = sigma * sigma
    if full_output:
        return float(sigma), it, done
    return float(sigma)


def weighted_loss(r, w):
    """``sum(w * r^2)`` over points and channels."""
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    if r.shape != w.shape:
        raise ValueError("r and w must have the same shape")
    return float(np.sum(w * r * r))
