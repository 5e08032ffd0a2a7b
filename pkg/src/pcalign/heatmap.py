"""Point-cloud rendering and color-difference heatmaps."""

from __future__ import annotations

import numpy as np

from . import geometry

__all__ = ["render_point_cloud", "difference_heatmap", "colormap", "MAX_DIFFERENCE"]

MAX_DIFFERENCE = float(np.sqrt(3.0))


def render_point_cloud(pc, K, theta, depth_eps=None):
    """Splat each visible point into its nearest pixel.

    Returns ``(image, coverage)``. Where several points share a pixel the
    nearest one wins; ``coverage`` is False where no point landed.
    """
    p_cam = geometry.se3_transform(theta, pc.positions)
    if depth_eps is None:
        z = p_cam[:, 2]
        depth_eps = 1e-2 * float(np.median(z[z > 0])) if np.any(z > 0) else 1.0
    vis = geometry.zbuffer_mask(p_cam, K, depth_eps)
    idx = np.flatnonzero(vis.mask)
    image = np.zeros((K.height, K.width, 3))
    coverage = np.zeros((K.height, K.width), dtype=bool)
    if idx.size == 0:
        return image, coverage
    uv, _ = geometry.project(K, p_cam[idx])
    flat = np.rint(uv[:, 1]).astype(np.intp) * K.width + np.rint(uv[:, 0]).astype(np.intp)
    # sort by pixel, then depth; the first entry of each pixel is the nearest
    order = np.lexsort((p_cam[idx, 2], flat))
    pixels, first = np.unique(flat[order], return_index=True)
    image.reshape(-1, 3)[pixels] = pc.colors[idx[order[first]]]
    coverage.reshape(-1)[pixels] = True
    return image, coverage


def colormap(t):
    """Blue at 0 to yellow at 1; red and green rise while blue falls."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    return np.stack([t, t, 1.0 - t], axis=-1)


def difference_heatmap(a, b, coverage=None):
    """Per-pixel L2 color difference mapped onto ``[0, sqrt(3)]``.

    Pixels outside ``coverage`` are black.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    diff = np.linalg.norm(a - b, axis=-1)
    out = colormap(diff / MAX_DIFFERENCE)
    if coverage is not None:
        out[~np.asarray(coverage, dtype=bool)] = 0.0
    return out
