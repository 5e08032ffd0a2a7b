"""Rigid pose parameterization, pinhole projection and visibility.

Poses map world (point-cloud) coordinates into the camera frame::

    p_cam = R(omega) @ x + tau

with ``R`` the Rodrigues exponential of the axis-angle vector ``omega``.
Pixel centers sit at integer coordinates; ``u`` indexes columns and ``v``
indexes rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

__all__ = [
    "PoseParams",
    "CameraIntrinsics",
    "PointCloud",
    "VisibilityMask",
    "skew",
    "rodrigues",
    "left_jacobian",
    "se3_transform",
    "project",
    "projection_jacobian",
    "pose_point_jacobian",
    "zbuffer_mask",
    "compose",
]


def skew(w):
    """Cross-product matrix of one 3-vector or a stack of them."""
    w = np.asarray(w, dtype=float)
    S = np.zeros(w.shape[:-1] + (3, 3))
    S[..., 0, 1] = -w[..., 2]
    S[..., 0, 2] = w[..., 1]
    S[..., 1, 0] = w[..., 2]
    S[..., 1, 2] = -w[..., 0]
    S[..., 2, 0] = -w[..., 1]
    S[..., 2, 1] = w[..., 0]
    return S


def _rodrigues_coeffs(theta):
    # sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3 with series below 1e-4
    if theta < 1e-4:
        t2 = theta * theta
        a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0
        b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
        c = (theta - np.sin(theta)) / theta**3
    return a, b, c


def rodrigues(omega):
    """Rotation matrix exp([omega]_x) for an axis-angle vector."""
    omega = np.asarray(omega, dtype=float)
    a, b, _ = _rodrigues_coeffs(float(np.linalg.norm(omega)))
    S = skew(omega)
    return np.eye(3) + a * S + b * (S @ S)


def left_jacobian(omega):
    """Left Jacobian of SO(3): exp(omega + d) ~= exp(J_l d) exp(omega)."""
    omega = np.asarray(omega, dtype=float)
    _, b, c = _rodrigues_coeffs(float(np.linalg.norm(omega)))
    S = skew(omega)
    return np.eye(3) + b * S + c * (S @ S)


def _canonical_omega(omega):
    omega = np.asarray(omega, dtype=float)
    angle = float(np.linalg.norm(omega))
    if angle <= np.pi:
        return omega
    axis = omega / angle
    angle = np.mod(angle, 2.0 * np.pi)
    if angle > np.pi:
        angle -= 2.0 * np.pi
    return axis * angle


@dataclass(frozen=True)
class PoseParams:
    """Six pose parameters: axis-angle ``omega`` (rad) and translation ``tau``."""

    omega: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        omega = np.array(self.omega, dtype=float).reshape(3)
        tau = np.array(self.tau, dtype=float).reshape(3)
        if not (np.all(np.isfinite(omega)) and np.all(np.isfinite(tau))):
            raise ValueError("pose parameters must be finite")
        object.__setattr__(self, "omega", _canonical_omega(omega))
        object.__setattr__(self, "tau", tau)

    @classmethod
    def identity(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, theta):
        theta = np.asarray(theta, dtype=float).reshape(6)
        return cls(theta[:3], theta[3:])

    @classmethod
    def from_matrix(cls, T):
        T = np.asarray(T, dtype=float)
        omega = Rotation.from_matrix(T[:3, :3]).as_rotvec()
        return cls(omega, T[:3, 3])

    @property
    def vector(self):
        return np.concatenate([self.omega, self.tau])

    def rotation(self):
        return rodrigues(self.omega)

    def matrix(self):
        """4x4 homogeneous transform."""
        T = np.eye(4)
        T[:3, :3] = self.rotation()
        T[:3, 3] = self.tau
        return T

    def inverse(self):
        R = self.rotation()
        return PoseParams(-self.omega, -R.T @ self.tau)


def compose(a, b):
    """Pose of applying ``b`` first, then ``a``."""
    return PoseParams.from_matrix(a.matrix() @ b.matrix())


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = float(getattr(self, name))
            if not np.isfinite(value):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, value)
        for name in ("width", "height"):
            value = getattr(self, name)
            if float(value) != int(value):
                raise ValueError(f"{name} must be an integer")
            object.__setattr__(self, name, int(value))
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not (0 <= self.cx < self.width):
            raise ValueError("cx must lie in [0, width)")
        if not (0 <= self.cy < self.height):
            raise ValueError("cy must lie in [0, height)")

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PointCloud:
    """n positions (scene units) with RGB colors in [0, 1]."""

    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=float)
        colors = np.asarray(self.colors, dtype=float)
        if positions.ndim != 2 or positions.shape[1] != 3 or len(positions) < 1:
            raise ValueError("positions must have shape (n, 3) with n >= 1")
        if colors.shape != positions.shape:
            raise ValueError("colors must have the same shape as positions")
        if not np.all(np.isfinite(positions)):
            raise ValueError("positions must be finite")
        if not np.all((colors >= 0.0) & (colors <= 1.0)):
            raise ValueError("colors must lie in [0, 1]")
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "colors", colors)

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True)
class VisibilityMask:
    mask: np.ndarray
    """(n,) bool, True for points that survive the Z-buffer."""
    depth_buffer: np.ndarray
    """(height, width) nearest depth per pixel, inf where empty."""


def se3_transform(theta, points):
    """Apply ``theta`` to an (n, 3) array of points."""
    points = np.asarray(points, dtype=float)
    return points @ theta.rotation().T + theta.tau


def project(K, p_cam):
    """Pinhole projection.

    Returns ``(uv, valid)``; ``uv`` has shape (..., 2) and is NaN wherever
    the depth is not positive (``valid`` False there).
    """
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[..., 2]
    valid = z > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * p_cam[..., 0] / z + K.cx
        v = K.fy * p_cam[..., 1] / z + K.cy
    uv = np.stack([u, v], axis=-1)
    uv[~valid] = np.nan
    return uv, valid


def projection_jacobian(K, p_cam):
    """d(u, v)/d(p_cam), shape (..., 2, 3). Requires positive depth."""
    p_cam = np.asarray(p_cam, dtype=float)
    x, y, z = p_cam[..., 0], p_cam[..., 1], p_cam[..., 2]
    inv_z = 1.0 / z
    J = np.zeros(p_cam.shape[:-1] + (2, 3))
    J[..., 0, 0] = K.fx * inv_z
    J[..., 0, 2] = -K.fx * x * inv_z * inv_z
    J[..., 1, 1] = K.fy * inv_z
    J[..., 1, 2] = -K.fy * y * inv_z * inv_z
    return J


def pose_point_jacobian(theta, x):
    """d(p_cam)/d(omega, tau) for world point(s) ``x``, shape (..., 3, 6).

    The rotation block is ``-[R x]_x J_l(omega)``, which reduces to
    ``-[x]_x`` at the identity.
    """
    x = np.asarray(x, dtype=float)
    Rx = x @ theta.rotation().T
    J = np.zeros(x.shape[:-1] + (3, 6))
    J[..., :, :3] = -skew(Rx) @ left_jacobian(theta.omega)
    J[..., :, 3:] = np.eye(3)
    return J


def zbuffer_mask(points_cam, K, depth_eps):
    """Nearest-pixel Z-buffer over camera-frame points.

    A point is a candidate when its depth is positive and its projection
    lies in ``[1, width-2] x [1, height-2]``. Candidates are binned to the
    nearest pixel and survive if their depth is within ``depth_eps`` of the
    bin minimum.
    """
    if depth_eps <= 0:
        raise ValueError("depth_eps must be positive")
    points_cam = np.asarray(points_cam, dtype=float)
    uv, valid = project(K, points_cam)
    with np.errstate(invalid="ignore"):
        inside = (
            valid
            & (uv[:, 0] >= 1.0) & (uv[:, 0] <= K.width - 2.0)
            & (uv[:, 1] >= 1.0) & (uv[:, 1] <= K.height - 2.0)
        )
    depth = np.full((K.height, K.width), np.inf)
    mask = np.zeros(len(points_cam), dtype=bool)
    idx = np.flatnonzero(inside)
    if idx.size == 0:
        return VisibilityMask(mask, depth)
    cols = np.rint(uv[idx, 0]).astype(np.intp)
    rows = np.rint(uv[idx, 1]).astype(np.intp)
    flat = rows * K.width + cols
    z = points_cam[idx, 2]
    np.minimum.at(depth.reshape(-1), flat, z)
    mask[idx] = z <= depth.reshape(-1)[flat] + depth_eps
    return VisibilityMask(mask, depth)
