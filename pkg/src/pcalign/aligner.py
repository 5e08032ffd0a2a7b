"""Photometric point-cloud-to-image alignment.

Each iteration transforms the cloud, masks occluded points, projects and
samples the image, refits the color transform, and takes one Adam step on
the six pose parameters. The visibility mask, the robust weights, sigma and
the color transform are refreshed every iteration but held constant while
the pose gradient is formed.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import colorxform, geometry, robustloss, sampler
from .geometry import PoseParams
from .robustloss import AlignmentError

__all__ = [
    "AlignConfig",
    "AlignState",
    "AlignResult",
    "AdamState",
    "COLOR_MODES",
    "median_scene_depth",
    "forward_pass",
    "frozen_loss",
    "pose_gradient",
    "adam_step",
    "align",
]

COLOR_MODES = ("zero", "first", "second")
_KERNEL_ORDER = {"zero": 1, "first": 1, "second": 2}
MIN_VISIBLE_FRACTION = 0.01


@dataclass(frozen=True)
class AlignConfig:
    """Optimizer and model settings.

    ``lr_translation`` and ``depth_eps`` default to ``None``, meaning 1e-3
    and 1e-2 times the median scene depth at the initial pose.
    """

    strategy: str = "A"
    color_mode: str = "second"
    lr_translation: float | None = None
    lr_rotation: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_iters: int = 500
    param_tol: float = 1e-7
    grad_tol: float = 1e-10
    beta_max: float = 0.3
    nu: float = 5.0
    seed: int = 0
    depth_eps: float | None = None
    color_rounds: int = 5
    pivot: str = "centroid"
    lr_patience: int = 20
    lr_decay: float = 0.5

    def __post_init__(self):
        if self.strategy not in sampler.STRATEGIES:
            raise ValueError(f"strategy must be one of {sampler.STRATEGIES}")
        if self.color_mode not in COLOR_MODES:
            raise ValueError(f"color_mode must be one of {COLOR_MODES}")
        if self.lr_rotation <= 0 or (self.lr_translation is not None and self.lr_translation <= 0):
            raise ValueError("learning rates must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.param_tol <= 0 or self.grad_tol < 0:
            raise ValueError("param_tol must be positive and grad_tol non-negative")
        if self.depth_eps is not None and self.depth_eps <= 0:
            raise ValueError("depth_eps must be positive")
        if self.lr_patience < 0 or not (0 < self.lr_decay <= 1):
            raise ValueError("lr_patience must be >= 0 and lr_decay in (0, 1]")
        if self.pivot not in ("centroid", "origin"):
            raise ValueError("pivot must be 'centroid' or 'origin'")

    def resolved(self, scene_depth):
        """Copy with the depth-relative defaults filled in."""
        return dataclasses.replace(
            self,
            lr_translation=1e-3 * scene_depth if self.lr_translation is None else self.lr_translation,
            depth_eps=1e-2 * scene_depth if self.depth_eps is None else self.depth_eps,
        )


@dataclass
class AlignState:
    """Intermediates of one forward pass; per-point arrays cover visible points only."""

    theta: PoseParams
    K: geometry.CameraIntrinsics
    visibility: geometry.VisibilityMask
    index: np.ndarray
    points_world: np.ndarray
    points_cam: np.ndarray
    uv: np.ndarray
    sampled: np.ndarray
    grad_u: np.ndarray
    grad_v: np.ndarray
    D: np.ndarray
    transformed: np.ndarray
    clipped: np.ndarray
    inliers: colorxform.InlierSet | None
    r: np.ndarray
    sigma: float
    weights: np.ndarray
    loss: float
    visible_fraction: float


@dataclass
class AdamState:
    m: np.ndarray = field(default_factory=lambda: np.zeros(6))
    v: np.ndarray = field(default_factory=lambda: np.zeros(6))
    step_count: int = 0


@dataclass
class AlignResult:
    theta_final: PoseParams
    D_final: np.ndarray
    loss_trace: list
    inlier_counts: list
    iterations_run: int
    converged: bool
    visible_fraction: float
    theta_trace: list = field(default_factory=list)


def median_scene_depth(pc, theta):
    z = geometry.se3_transform(theta, pc.positions)[:, 2]
    z = z[z > 0]
    if z.size == 0:
        raise AlignmentError("no points in front of the camera")
    return float(np.median(z))


def _transform_colors(sampled, cfg, pc_colors, fixed=None):
    order = _KERNEL_ORDER[cfg.color_mode] if fixed is None else colorxform._order_of(fixed)
    Kt = colorxform.lift(sampled, order)
    if fixed is not None:
        D = np.array(fixed, dtype=float)
        inliers = None
    elif cfg.color_mode == "zero":
        D = colorxform.identity_transform(order)
        inliers = None
    else:
        D, inliers = colorxform.solve_color_transform(
            sampled, pc_colors, beta_max=cfg.beta_max, max_rounds=cfg.color_rounds,
            order=order, features=Kt)
    transformed, clipped = colorxform._apply_lifted(D, Kt)
    return D, inliers, transformed, clipped


def forward_pass(pc, J, K, theta, cfg, *, diffs=None, depth_eps=None, color_transform=None):
    """Evaluate the photometric model at pose ``theta``.

    ``diffs`` caches the central-difference images for strategy B;
    ``depth_eps`` overrides the Z-buffer tolerance from ``cfg``.
    ``color_transform`` (3x4 or 3x10) skips the solve and uses that ``D``.
    """
    if depth_eps is None:
        depth_eps = cfg.depth_eps
    if depth_eps is None:
        depth_eps = 1e-2 * median_scene_depth(pc, theta)
    p_all = geometry.se3_transform(theta, pc.positions)
    vis = geometry.zbuffer_mask(p_all, K, depth_eps)
    index = np.flatnonzero(vis.mask)
    visible_fraction = index.size / len(pc)
    if visible_fraction < MIN_VISIBLE_FRACTION:
        raise AlignmentError(f"only {visible_fraction:.2%} of the points are visible")

    p_cam = p_all[index]
    uv, _ = geometry.project(K, p_cam)
    u, v = uv[:, 0], uv[:, 1]
    sample = sampler.subpixel_sample(J, u, v, cfg.strategy, diffs)

    pc_colors = pc.colors[index]
    D, inliers, transformed, clipped = _transform_colors(sample.color, cfg, pc_colors, color_transform)
    r = robustloss.residuals(transformed, pc_colors)
    sigma = robustloss.sigma_fixed_point(r, cfg.nu)
    w = robustloss.t_weights(r, sigma, cfg.nu)
    loss = robustloss.weighted_loss(r, w)
    if not np.isfinite(loss):
        raise AlignmentError("non-finite loss")
    return AlignState(
        theta=theta, K=K, visibility=vis, index=index,
        points_world=pc.positions[index], points_cam=p_cam, uv=uv,
        sampled=sample.color, grad_u=sample.grad_u, grad_v=sample.grad_v,
        D=D, transformed=transformed, clipped=clipped, inliers=inliers,
        r=r, sigma=sigma, weights=w, loss=loss, visible_fraction=visible_fraction,
    )


def frozen_loss(theta, state, pc, J, clip="straight", freeze_cells=False):
    """Loss at ``theta`` with the mask, weights and ``D`` of ``state`` held fixed.

    ``clip`` selects how out-of-range colors are treated: ``"clip"`` clamps
    them, ``"none"`` leaves them raw, and ``"straight"`` adds the change of
    the raw value to the clipped value at ``state.theta``. The straight-through
    form is the function whose exact derivative the pose gradient returns.

    With ``freeze_cells`` each point keeps the bilinear cell it occupied at
    ``state.theta``, which removes the kinks at pixel-cell boundaries.
    """
    p_cam = geometry.se3_transform(theta, state.points_world)
    uv, _ = geometry.project(state.K, p_cam)
    if freeze_cells:
        j, k = sampler.cell_indices(J, state.uv[:, 0], state.uv[:, 1])
        sampled = sampler.sample_in_cells(J, uv[:, 0], uv[:, 1], j, k)
    else:
        sampled = sampler.bilinear_sample(J, uv[:, 0], uv[:, 1])
    order = colorxform._order_of(state.D)
    raw = colorxform.poly_kernel(sampled, order) @ state.D.T
    if clip == "clip":
        transformed = np.clip(raw, 0.0, 1.0)
    elif clip == "none":
        transformed = raw
    elif clip == "straight":
        raw0 = colorxform.poly_kernel(state.sampled, order) @ state.D.T
        transformed = state.transformed + (raw - raw0)
    else:
        raise ValueError(f"unknown clip mode {clip!r}")
    r = transformed - pc.colors[state.index]
    return robustloss.weighted_loss(r, state.weights)


def point_gradients(state):
    """Per-point contributions to dL/dtheta, shape (m, 6).

    Evaluated right to left (loss -> color -> pixel -> camera point -> pose)
    so no per-point Jacobian matrices are formed.
    """
    a = 2.0 * state.weights * state.r
    b = colorxform.color_transform_vjp(state.D, state.sampled, a)
    s_u = np.sum(b * state.grad_u, axis=1)
    s_v = np.sum(b * state.grad_v, axis=1)
    K = state.K
    x, y, z = state.points_cam.T
    inv_z = 1.0 / z
    gu = s_u * K.fx * inv_z
    gv = s_v * K.fy * inv_z
    q = np.stack([gu, gv, -(gu * x + gv * y) * inv_z], axis=1)
    c = np.cross(state.points_cam - state.theta.tau, q)
    Jl = geometry.left_jacobian(state.theta.omega)
    rot = c[:, 0:1] * Jl[0] + c[:, 1:2] * Jl[1] + c[:, 2:3] * Jl[2]
    return np.concatenate([rot, q], axis=1)


def pose_gradient(state, cfg=None):
    """dL/dtheta with the auxiliaries of ``state`` treated as constants.

    Clipped channels keep the derivative of their unclipped value.
    """
    contrib = point_gradients(state)
    # contiguous rows so np.sum reduces pairwise in a fixed order
    return np.ascontiguousarray(contrib.T).sum(axis=1)


def _learning_rates(cfg):
    if cfg.lr_translation is None:
        raise ValueError("lr_translation unresolved; call cfg.resolved(scene_depth)")
    return np.array([cfg.lr_rotation] * 3 + [cfg.lr_translation] * 3)


def adam_step(adam, grad, cfg, lr_scale=1.0):
    """One bias-corrected Adam step. Returns ``(theta_update, new_state)``.

    Rotation components use ``lr_rotation`` and translation components
    ``lr_translation``, both multiplied by ``lr_scale``.
    """
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise AlignmentError("non-finite gradient")
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    t = adam.step_count + 1
    m = b1 * adam.m + (1 - b1) * grad
    v = b2 * adam.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    update = -lr_scale * _learning_rates(cfg) * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return update, AdamState(m, v, t)


def align(pc, J, K, theta0, cfg=None, callback=None):
    """Refine ``theta0`` until the scaled parameter update drops below ``param_tol``.

    The rotation part of the update is multiplied by the median scene depth
    before taking its norm so both halves are in scene units. The loop also
    stops, without stepping, when the mean per-point gradient falls below
    ``grad_tol``. ``callback``, if given, is called as
    ``callback(iteration, state)`` after every forward pass.

    BLAS is limited to one thread for the duration, so the loss trace is
    reproducible bit for bit.
    """
    cfg = AlignConfig() if cfg is None else cfg
    J = sampler.as_image(J)
    depth = median_scene_depth(pc, theta0)
    cfg = cfg.resolved(depth)
    diffs = sampler.central_diff_images(J) if cfg.strategy == "B" else None
    scale = np.array([depth] * 3 + [1.0] * 3)

    with threadpool_limits(limits=1, user_api="blas"):
        return _align_loop(pc, J, K, theta0, cfg, callback, diffs, depth, scale)


def _align_loop(pc, J, K, theta0, cfg, callback, diffs, depth, scale):
    # Adam runs on (omega, delta) with the rotation taken about the cloud
    # centroid c_w: tau = anchor + delta - R(omega) c_w. This removes most
    # of the rotation/translation coupling of rotating about the camera.
    c_w = pc.positions.mean(axis=0) if cfg.pivot == "centroid" else np.zeros(3)
    anchor = theta0.rotation() @ c_w
    phi = np.concatenate([theta0.omega, theta0.tau - anchor + theta0.rotation() @ c_w])
    theta = theta0
    adam = AdamState()
    loss_trace, inlier_counts, theta_trace = [], [], []
    converged = False
    state = None
    lr_scale, best, stale = 1.0, np.inf, 0
    for it in range(cfg.max_iters):
        state = forward_pass(pc, J, K, theta, cfg, diffs=diffs)
        if callback is not None:
            callback(it, state)
        loss_trace.append(state.loss)
        inlier_counts.append(int(np.count_nonzero(state.inliers.flags))
                             if state.inliers is not None else len(state.index))
        grad = pose_gradient(state, cfg)
        # Adam normalizes the gradient, so a stationary point must be caught
        # before the step; rotation parts are divided by depth (per metre)
        if np.linalg.norm(grad / scale) < cfg.grad_tol * len(state.index):
            converged = True
            break
        R = theta.rotation()
        g_phi = grad.copy()
        g_phi[:3] -= geometry.left_jacobian(theta.omega).T @ np.cross(R @ c_w, grad[3:])
        if cfg.lr_patience:
            if state.loss < best * (1 - 1e-4):
                best, stale = state.loss, 0
            else:
                stale += 1
                if stale > cfg.lr_patience:
                    lr_scale *= cfg.lr_decay
                    stale = 0
        update, adam = adam_step(adam, g_phi, cfg, lr_scale)
        phi = phi + update
        omega = PoseParams(phi[:3], np.zeros(3)).omega
        phi[:3] = omega
        theta = PoseParams(omega, anchor + phi[3:] - geometry.rodrigues(omega) @ c_w)
        theta_trace.append(theta.vector)
        if np.linalg.norm(update * scale) < cfg.param_tol:
            converged = True
            break
    return AlignResult(
        theta_final=theta,
        D_final=state.D,
        loss_trace=loss_trace,
        inlier_counts=inlier_counts,
        iterations_run=len(loss_trace),
        converged=converged,
        visible_fraction=state.visible_fraction,
        theta_trace=theta_trace,
    )
