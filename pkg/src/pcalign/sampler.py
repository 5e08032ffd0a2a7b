"""Sub-pixel color sampling and sub-pixel image gradients.

Images are ``(height, width, 3)`` float arrays indexed ``J[v, u]``; the
continuous coordinate ``u`` runs along columns and ``v`` along rows.

Two gradient definitions are provided:

* strategy ``"A"`` differentiates the bilinear interpolant itself, so the
  gradient is constant in ``u`` inside each cell;
* strategy ``"B"`` bilinearly interpolates precomputed central-difference
  images, which equals strategy A smoothed by a width-2 box window.

The ``*_1d`` functions are the scalar-signal versions of the same objects,
kept for the equivalence tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "DomainError",
    "SubpixelSample",
    "as_image",
    "bilinear_sample",
    "grad_strategy_a",
    "cell_indices",
    "sample_in_cells",
    "central_diff_images",
    "grad_strategy_b",
    "subpixel_sample",
    "linear_interp_1d",
    "grad_a_1d",
    "grad_b_1d",
    "grad_b_expansion_1d",
]

STRATEGIES = ("A", "B")


class DomainError(ValueError):
    """Sample coordinates outside the support a routine needs."""


def as_image(pixels):
    """Validate and return an image array of shape (height, width, 3)."""
    J = np.asarray(pixels, dtype=float)
    if J.ndim != 3 or J.shape[2] != 3:
        raise ValueError(f"image must have shape (height, width, 3), got {J.shape}")
    if J.shape[0] < 2 or J.shape[1] < 2:
        raise ValueError("image must be at least 2x2")
    if not np.all(np.isfinite(J)):
        raise ValueError("image values must be finite")
    if J.min() < 0.0 or J.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return J


def _cells(u, v, width, height, lo, hi_u, hi_v, strict):
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if strict:
        bad = ~((u >= lo) & (u < hi_u) & (v >= lo) & (v < hi_v))
    else:
        bad = ~((u >= lo) & (u <= hi_u) & (v >= lo) & (v <= hi_v))
    if np.any(bad):
        raise DomainError("sample coordinates outside the valid domain")
    # at u == width-1 the last cell is used with weight 1 on its right edge
    j = np.minimum(np.floor(u).astype(np.intp), width - 2)
    k = np.minimum(np.floor(v).astype(np.intp), height - 2)
    return j, k, u - j, v - k


def _corners(F, j, k):
    width = F.shape[1]
    flat = F.reshape(-1, F.shape[-1])
    idx = k * width + j
    return (flat.take(idx, axis=0), flat.take(idx + 1, axis=0),
            flat.take(idx + width, axis=0), flat.take(idx + width + 1, axis=0))


def _lerp(corners, du, dv):
    f00, f10, f01, f11 = corners
    du = du[..., None]
    dv = dv[..., None]
    return (1 - dv) * ((1 - du) * f00 + du * f10) + dv * ((1 - du) * f01 + du * f11)


def _blend(F, j, k, du, dv):
    return _lerp(_corners(F, j, k), du, dv)


def bilinear_sample(J, u, v):
    """Bilinear color at continuous coordinates, shape ``u.shape + (3,)``.

    Raises DomainError unless ``0 <= u <= width-1`` and ``0 <= v <= height-1``.
    """
    height, width = J.shape[:2]
    j, k, du, dv = _cells(u, v, width, height, 0.0, width - 1.0, height - 1.0, False)
    return _blend(J, j, k, du, dv)


def cell_indices(J, u, v):
    """Cell ``(j, k)`` that strategy A uses at each sample (forward cell at integers)."""
    height, width = J.shape[:2]
    j, k, _, _ = _cells(u, v, width, height, 0.0, width - 1.0, height - 1.0, True)
    return j, k


def sample_in_cells(J, u, v, j, k):
    """Evaluate the bilinear patch of cell ``(j, k)`` at ``(u, v)``.

    The patch polynomial is extended past the cell edges, so this is smooth
    in ``(u, v)`` for fixed cells. Used by the finite-difference oracles.
    """
    return _blend(J, j, k, np.asarray(u, dtype=float) - j, np.asarray(v, dtype=float) - k)


def grad_strategy_a(J, u, v):
    """Exact derivative of the bilinear interpolant.

    At integer coordinates the forward (right-hand) cell is used, so the
    domain is ``0 <= u < width-1`` and ``0 <= v < height-1``.
    """
    height, width = J.shape[:2]
    j, k, du, dv = _cells(u, v, width, height, 0.0, width - 1.0, height - 1.0, True)
    return _grad_a_from_corners(_corners(J, j, k), du, dv)


def _grad_a_from_corners(corners, du, dv):
    f00, f10, f01, f11 = corners
    du = du[..., None]
    dv = dv[..., None]
    grad_u = (1 - dv) * (f10 - f00) + dv * (f11 - f01)
    grad_v = (1 - du) * (f01 - f00) + du * (f11 - f10)
    return grad_u, grad_v


def central_diff_images(J):
    """Central differences along columns (``Ja``) and rows (``Jb``).

    Borders use replicate padding, so e.g. ``Ja[:, 0] = (J[:, 1] - J[:, 0]) / 2``.
    """
    P = np.pad(J, ((1, 1), (1, 1), (0, 0)), mode="edge")
    Ja = 0.5 * (P[1:-1, 2:] - P[1:-1, :-2])
    Jb = 0.5 * (P[2:, 1:-1] - P[:-2, 1:-1])
    return Ja, Jb


def grad_strategy_b(J, u, v, diffs=None):
    """Bilinear interpolation of the central-difference images.

    Needs ``1 <= u <= width-2`` and ``1 <= v <= height-2``. Pass
    ``diffs=central_diff_images(J)`` to avoid recomputing them per call.
    """
    height, width = J.shape[:2]
    Ja, Jb = central_diff_images(J) if diffs is None else diffs
    j, k, du, dv = _cells(u, v, width, height, 1.0, width - 2.0, height - 2.0, False)
    return _blend(Ja, j, k, du, dv), _blend(Jb, j, k, du, dv)


@dataclass(frozen=True)
class SubpixelSample:
    color: np.ndarray
    grad_u: np.ndarray
    grad_v: np.ndarray
    strategy: str


def subpixel_sample(J, u, v, strategy="A", diffs=None):
    """Color plus the strategy's sub-pixel gradients at ``(u, v)``."""
    height, width = J.shape[:2]
    if strategy == "A":
        j, k, du, dv = _cells(u, v, width, height, 0.0, width - 1.0, height - 1.0, True)
        corners = _corners(J, j, k)
        grad_u, grad_v = _grad_a_from_corners(corners, du, dv)
        color = _lerp(corners, du, dv)
    elif strategy == "B":
        grad_u, grad_v = grad_strategy_b(J, u, v, diffs)
        color = bilinear_sample(J, u, v)
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return SubpixelSample(color, grad_u, grad_v, strategy)


# 1-D reference versions


def linear_interp_1d(h, x):
    h = np.asarray(h, dtype=float)
    j = np.minimum(np.floor(x).astype(np.intp), len(h) - 2)
    d = x - j
    return (1 - d) * h[j] + d * h[j + 1]


def grad_a_1d(h, x):
    """Forward difference of the cell containing ``x``."""
    h = np.asarray(h, dtype=float)
    j = np.floor(x).astype(np.intp)
    return h[j + 1] - h[j]


def grad_b_1d(h, x):
    """Linear interpolation of the central differences ``(h[a+1]-h[a-1])/2``."""
    h = np.asarray(h, dtype=float)
    ha = np.empty_like(h)
    ha[1:-1] = 0.5 * (h[2:] - h[:-2])
    ha[0] = 0.5 * (h[1] - h[0])
    ha[-1] = 0.5 * (h[-1] - h[-2])
    return linear_interp_1d(ha, x)


def grad_b_expansion_1d(h, x):
    """Strategy B written through forward differences of neighbouring cells.

    ``((1-d) dh[j-1] + dh[j] + d dh[j+1]) / 2`` with ``dh[j] = h[j+1]-h[j]``;
    valid for ``1 <= x < len(h)-2``.
    """
    h = np.asarray(h, dtype=float)
    j = np.floor(x).astype(np.intp)
    d = x - j
    dh = np.diff(h)
    return 0.5 * ((1 - d) * dh[j - 1] + dh[j] + d * dh[j + 1])
