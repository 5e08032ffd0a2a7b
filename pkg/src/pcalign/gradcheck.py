"""Finite-difference checks for every analytic derivative in the pipeline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import colorxform, geometry
from .aligner import AlignConfig, forward_pass, frozen_loss, pose_gradient
from .geometry import CameraIntrinsics, PoseParams

__all__ = ["CheckResult", "run_gradcheck", "JACOBIAN_TOL", "CHAIN_TOL"]

JACOBIAN_TOL = 1e-5
CHAIN_TOL = 1e-3
TRANSLATION_STEP = 1e-5
ROTATION_STEP = 1e-6


@dataclass
class CheckResult:
    name: str
    configs: int
    worst: float
    tol: float

    @property
    def passed(self):
        return self.worst < self.tol

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.configs} configs, worst rel. err {self.worst:.2e} (tol {self.tol:.0e})"


def _rel(analytic, numeric):
    return float(np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-300))


def _central(f, x, h):
    """Columns of d f / d x by central differences; ``h`` may be per-coordinate."""
    x = np.asarray(x, dtype=float)
    h = np.broadcast_to(h, x.shape)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h[i]))
    return np.stack(cols, axis=-1)


def _random_intrinsics(rng):
    w, h = rng.integers(32, 640, size=2)
    return CameraIntrinsics(rng.uniform(50, 800), rng.uniform(50, 800),
                            rng.uniform(0, w - 1), rng.uniform(0, h - 1), int(w), int(h))


def _random_pose(rng):
    return PoseParams(rng.uniform(-1.5, 1.5, 3) / np.sqrt(3), rng.uniform(-2, 2, 3))


def check_projection(rng, n):
    worst = 0.0
    for _ in range(n):
        K = _random_intrinsics(rng)
        p = np.array([*rng.uniform(-2, 2, 2), rng.uniform(0.5, 5)])
        numeric = _central(lambda q: geometry.project(K, q)[0], p, 1e-6 * np.abs(p).max())
        worst = max(worst, _rel(geometry.projection_jacobian(K, p), numeric))
    return CheckResult("projection Jacobian", n, worst, JACOBIAN_TOL)


def check_pose(rng, n):
    worst = 0.0
    for _ in range(n):
        theta = _random_pose(rng)
        x = rng.uniform(-3, 3, 3)
        numeric = _central(lambda t: geometry.se3_transform(PoseParams.from_vector(t), x[None])[0],
                           theta.vector, 1e-6)
        worst = max(worst, _rel(geometry.pose_point_jacobian(theta, x), numeric))
    return CheckResult("pose Jacobian", n, worst, JACOBIAN_TOL)


def check_color_kernel(rng, n):
    worst = 0.0
    for i in range(n):
        order = 2 if i % 4 else 1
        D = rng.normal(size=(3, colorxform.N_FEATURES[order]))
        rgb = rng.uniform(0, 1, 3)
        numeric = _central(lambda c: D @ colorxform.poly_kernel(c, order), rgb, 1e-6)
        worst = max(worst, _rel(colorxform.color_transform_jacobian(D, rgb), numeric))
    return CheckResult("color-kernel Jacobian", n, worst, JACOBIAN_TOL)


def _chain_config(i, seed):
    from . import synthbench as sb

    rng = np.random.default_rng([seed, i])
    spec = sb.SceneSpec(seed=int(rng.integers(1 << 31)),
                        texture_profile=sb.TEXTURE_PROFILES[i % 3],
                        geometry=sb.GEOMETRIES[(i // 3) % 3],
                        image_size=(64, 64))
    scene = sb.generate_scene(spec)
    image = sb.apply_color_effects(scene.image, seed=int(rng.integers(1 << 31)))
    theta = sb.perturb_pose(scene.theta_gt, sb.PerturbationSpec(0.02, 1.0, int(rng.integers(1 << 31))))
    mode = ("zero", "first", "second")[i % 3]
    return scene, image, theta, AlignConfig(color_mode=mode, strategy="A")


def check_full_chain(seed, n):
    """Analytic pose gradient against central differences of the frozen loss.

    Strategy A only: strategy B's gradient is a smoothed image derivative,
    not the derivative of the bilinear loss, so no finite difference matches it.
    Each point keeps its interpolation cell across the stencil along with the
    mask, weights and ``D``; otherwise a step that crosses a pixel edge
    measures the kink rather than the derivative.
    """
    h = np.array([ROTATION_STEP] * 3 + [TRANSLATION_STEP] * 3)
    worst = 0.0
    for i in range(n):
        scene, image, theta, cfg = _chain_config(i, seed)
        state = forward_pass(scene.pc, image, scene.K, theta, cfg)
        numeric = _central(
            lambda t: frozen_loss(PoseParams.from_vector(t), state, scene.pc, image, freeze_cells=True),
            theta.vector, h)
        worst = max(worst, _rel(pose_gradient(state), numeric))
    return CheckResult("full-chain pose gradient", n, worst, CHAIN_TOL)


def run_gradcheck(seed=0, configs=100):
    """Run all four checks with ``configs`` random configurations each."""
    rng = np.random.default_rng(seed)
    return [
        check_projection(rng, configs),
        check_pose(rng, configs),
        check_color_kernel(rng, configs),
        check_full_chain(seed, configs),
    ]
