"""Procedural scenes and the pose-recovery benchmark.

A scene is ray-cast from a ground-truth camera: every pixel is textured from
its 3-D hit point and back-projected into a colored point cloud expressed in
a world frame. Aligning that cloud to the (color-distorted) image from a
perturbed start should recover the ground-truth pose.
"""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb, rgb_to_hsv
from scipy.ndimage import correlate1d
from scipy.spatial.transform import Rotation

from . import geometry
from .aligner import AlignConfig, align
from .geometry import CameraIntrinsics, PointCloud, PoseParams

__all__ = [
    "SceneSpec",
    "Scene",
    "PerturbationSpec",
    "ColorEffectParams",
    "TrialResult",
    "BenchmarkReport",
    "generate_scene",
    "sample_color_effects",
    "apply_color_effects",
    "gaussian_kernel",
    "perturb_pose",
    "translation_error",
    "rotation_error",
    "run_trial",
    "run_benchmark",
    "write_report",
    "parse_mode",
]

TEXTURE_PROFILES = ("smooth", "mixed", "high_frequency")
GEOMETRIES = ("plane", "two_planes", "box_room")
FOV_DEG = 60.0

# sinusoid frequency bands in cycles per scene-depth unit
_BANDS = {
    "smooth": [(0.9, 3.0, 6)],
    "mixed": [(0.9, 3.0, 4), (5.0, 14.0, 6)],
    "high_frequency": [(0.9, 3.0, 3), (30.0, 55.0, 8)],
}


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    texture_profile: str = "mixed"
    geometry: str = "box_room"
    image_size: tuple = (256, 256)
    scene_depth: float = 3.0

    def __post_init__(self):
        if self.texture_profile not in TEXTURE_PROFILES:
            raise ValueError(f"texture_profile must be one of {TEXTURE_PROFILES}")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")
        w, h = self.image_size
        if w < 64 or h < 64:
            raise ValueError("image_size must be at least 64x64")
        if self.scene_depth <= 0:
            raise ValueError("scene_depth must be positive")


@dataclass
class Scene:
    image: np.ndarray
    depth: np.ndarray
    pc: PointCloud
    K: CameraIntrinsics
    theta_gt: PoseParams


def _intrinsics(width, height):
    f = 0.5 * width / math.tan(math.radians(FOV_DEG) / 2)
    return CameraIntrinsics(f, f, (width - 1) / 2, (height - 1) / 2, width, height)


def _rays(K):
    u, v = np.meshgrid(np.arange(K.width, dtype=float), np.arange(K.height, dtype=float))
    return np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)


def _cast_planes(rays, planes):
    """Nearest positive hit of rays (origin at 0) against ``(normal, offset, ok)`` planes.

    A plane is ``normal . p = offset``; ``ok(points)`` limits its extent.
    Returns the ray parameter (equal to the z-depth for z=1 rays).
    """
    best = np.full(rays.shape[:-1], np.inf)
    for normal, offset, ok in planes:
        denom = rays @ normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = offset / denom
        hit = np.isfinite(t) & (t > 1e-9)
        if ok is not None:
            pts = rays * np.where(hit, t, 0.0)[..., None]
            hit &= ok(pts)
        best = np.where(hit & (t < best), t, best)
    return best


def _scene_depth_map(spec, K, rng):
    d = spec.scene_depth
    tilt = Rotation.from_rotvec(rng.uniform(-0.12, 0.12, 3)).as_matrix()
    rays = _rays(K) @ tilt
    if spec.geometry == "plane":
        n = np.array([0.0, 0.0, 1.0])
        planes = [(n, d, None)]
    elif spec.geometry == "two_planes":
        n = np.array([0.0, 0.0, 1.0])
        edge = rng.uniform(-0.1, 0.1) * d
        planes = [(n, d, None), (n, 0.6 * d, lambda p: p[..., 0] < edge)]
    else:
        hw, hh = 0.45 * d, 0.35 * d
        planes = [
            (np.array([0.0, 0.0, 1.0]), d, None),
            (np.array([1.0, 0.0, 0.0]), hw, None),
            (np.array([-1.0, 0.0, 0.0]), hw, None),
            (np.array([0.0, 1.0, 0.0]), hh, None),
            (np.array([0.0, -1.0, 0.0]), hh, None),
        ]
    t = _cast_planes(rays, planes)
    if not np.all(np.isfinite(t)):
        raise RuntimeError("scene geometry leaves pixels without a surface")
    # back to the camera frame: the tilt only rotates the scene
    hits_room = rays * t[..., None]
    hits_cam = hits_room @ tilt.T
    return hits_cam, hits_room


def _texture(points, profile, scale, rng):
    """Sum of oriented 3-D sinusoids plus smooth Gaussian blobs, per channel."""
    p = points / scale
    flat = p.reshape(-1, 3)
    out = np.empty((flat.shape[0], 3))
    shared = np.zeros(flat.shape[0])
    for lo, hi, count in _BANDS[profile]:
        for _ in range(count):
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            freq = rng.uniform(lo, hi)
            shared += rng.uniform(0.5, 1.0) * np.sin(
                2 * np.pi * freq * flat @ direction + rng.uniform(0, 2 * np.pi))
    for c in range(3):
        channel = 0.7 * shared
        for lo, hi, count in _BANDS[profile]:
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            channel += 0.5 * np.sin(2 * np.pi * rng.uniform(lo, hi) * flat @ direction
                                    + rng.uniform(0, 2 * np.pi))
        for _ in range(4):
            center = rng.uniform(-0.5, 0.5, 3) + np.array([0.0, 0.0, 0.8])
            width = rng.uniform(0.08, 0.25)
            channel += rng.uniform(-1.5, 1.5) * np.exp(
                -np.sum((flat - center) ** 2, axis=1) / (2 * width**2))
        lo_v, hi_v = channel.min(), channel.max()
        out[:, c] = 0.05 + 0.9 * (channel - lo_v) / (hi_v - lo_v)
    return out.reshape(points.shape)


def generate_scene(spec):
    """Render a textured scene and its colored point cloud.

    The image is exact at pixel centers for the cloud: projecting
    ``pc.positions`` through ``theta_gt`` and ``K`` lands every point on the
    pixel it came from, with that pixel's color.
    """
    rng = np.random.default_rng(spec.seed)
    width, height = spec.image_size
    K = _intrinsics(width, height)
    hits_cam, hits_room = _scene_depth_map(spec, K, rng)
    image = _texture(hits_room, spec.texture_profile, spec.scene_depth, rng)
    depth = hits_cam[..., 2]

    # exact back-projection of the pixel grid
    rays = _rays(K)
    p_cam = (rays * depth[..., None]).reshape(-1, 3)
    theta_gt = PoseParams(rng.uniform(-0.15, 0.15, 3), rng.uniform(-0.5, 0.5, 3))
    positions = geometry.se3_transform(theta_gt.inverse(), p_cam)
    pc = PointCloud(positions, image.reshape(-1, 3).copy())
    return Scene(image, depth, pc, K, theta_gt)


# color effects


@dataclass(frozen=True)
class ColorEffectParams:
    """Concrete jitter factors; ``order`` permutes (brightness, contrast, saturation, hue)."""

    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0
    order: tuple = (0, 1, 2, 3)
    gamma: float = 1.0
    blur_sigma: float = 0.0


def sample_color_effects(seed):
    """Draw jitter strengths, then factors within them, then gamma and blur."""
    rng = np.random.default_rng(seed)
    s_b, s_c, s_s = rng.uniform(0.0, 0.4, 3)
    s_h = rng.uniform(0.0, 0.06)
    brightness = rng.uniform(1 - s_b, 1 + s_b)
    contrast = rng.uniform(1 - s_c, 1 + s_c)
    saturation = rng.uniform(1 - s_s, 1 + s_s)
    hue = rng.uniform(-s_h, s_h)
    order = tuple(int(i) for i in rng.permutation(4))
    gamma = rng.uniform(0.5, 1.0) if rng.random() < 0.5 else rng.uniform(1.0, 2.0)
    blur_sigma = rng.uniform(0.0, 0.75)
    return ColorEffectParams(brightness, contrast, saturation, hue, order, gamma, blur_sigma)


def _luma(img):
    return img @ np.array([0.299, 0.587, 0.114])


def _jitter(img, op, p):
    if op == 0:
        return np.clip(img * p.brightness, 0, 1)
    if op == 1:
        mean = _luma(img).mean()
        return np.clip(p.contrast * img + (1 - p.contrast) * mean, 0, 1)
    if op == 2:
        gray = _luma(img)[..., None]
        return np.clip(p.saturation * img + (1 - p.saturation) * gray, 0, 1)
    if p.hue == 0.0:
        return img
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = np.mod(hsv[..., 0] + p.hue, 1.0)
    return hsv_to_rgb(hsv)


def gaussian_kernel(sigma):
    """Normalized 1-D Gaussian truncated at radius ceil(3 sigma)."""
    radius = int(math.ceil(3 * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def apply_color_effects(image, seed=0, params=None):
    """Jitter, gamma and blur, as a stand-in for a different camera.

    ``params`` overrides the draw from ``seed``.
    """
    p = sample_color_effects(seed) if params is None else params
    img = np.asarray(image, dtype=float)
    for op in p.order:
        img = _jitter(img, op, p)
    if p.gamma != 1.0:
        img = np.power(img, p.gamma)
    if p.blur_sigma > 0:
        k = gaussian_kernel(p.blur_sigma)
        img = correlate1d(img, k, axis=0, mode="nearest")
        img = correlate1d(img, k, axis=1, mode="nearest")
    return np.clip(img, 0.0, 1.0)


# perturbations and error metrics


@dataclass(frozen=True)
class PerturbationSpec:
    max_translation: float = 0.02
    max_rotation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.max_translation < 0 or self.max_rotation < 0:
            raise ValueError("perturbation maxima must be non-negative")


def _unit(rng):
    d = rng.normal(size=3)
    return d / np.linalg.norm(d)


def perturb_pose(theta_gt, spec):
    """Rotate by a random angle in [0, max_rotation] degrees about a random
    axis and shift the translation by a random vector of norm at most
    ``max_translation``.

    The result differs from ``theta_gt`` by exactly those amounts under
    ``rotation_error`` and ``translation_error``.
    """
    rng = np.random.default_rng(spec.seed)
    angle = math.radians(rng.uniform(0.0, spec.max_rotation))
    axis = _unit(rng)
    shift = rng.uniform(0.0, spec.max_translation) * _unit(rng)
    R = geometry.rodrigues(angle * axis) @ theta_gt.rotation()
    return PoseParams(Rotation.from_matrix(R).as_rotvec(), theta_gt.tau + shift)


def translation_error(theta_gt, theta_est):
    """Distance between the two translations, in millimetres."""
    return float(np.linalg.norm(theta_gt.tau - theta_est.tau) * 1000.0)


def rotation_error(theta_gt, theta_est):
    """Geodesic angle between the two rotations, in degrees."""
    rel = theta_gt.rotation().T @ theta_est.rotation()
    return float(np.degrees(Rotation.from_matrix(rel).magnitude()))


# benchmark


@dataclass
class TrialResult:
    trial: int
    mode: str
    translation_error_mm: float
    rotation_error_deg: float
    converged: bool
    iterations: int
    init_translation_mm: float = float("nan")
    init_rotation_deg: float = float("nan")
    failed: bool = False
    message: str = ""


@dataclass
class BenchmarkReport:
    trials: list
    modes: list
    summary: dict = field(default_factory=dict)
    cdf_edges: dict = field(default_factory=dict)
    cdf: dict = field(default_factory=dict)
    quantiles: dict = field(default_factory=dict)


def parse_mode(label):
    """``"second-A"`` -> AlignConfig(color_mode="second", strategy="A")."""
    color_mode, _, strategy = label.partition("-")
    return AlignConfig(color_mode=color_mode, strategy=strategy or "A")


def _trial_inputs(i, family, perturb, color_effects):
    spec = SceneSpec(family.seed + i, family.texture_profile, family.geometry,
                     family.image_size, family.scene_depth)
    scene = generate_scene(spec)
    image = apply_color_effects(scene.image, seed=10_000 + spec.seed) if color_effects else scene.image
    pspec = PerturbationSpec(perturb.max_translation, perturb.max_rotation, perturb.seed + i)
    theta0 = perturb_pose(scene.theta_gt, pspec)
    return scene, image, theta0


def run_trial(i, family, perturb, modes, color_effects=True):
    """Run every mode on trial ``i``; returns a list of TrialResult."""
    scene, image, theta0 = _trial_inputs(i, family, perturb, color_effects)
    t0 = translation_error(scene.theta_gt, theta0)
    r0 = rotation_error(scene.theta_gt, theta0)
    results = []
    for label, cfg in modes.items():
        try:
            res = align(scene.pc, image, scene.K, theta0, cfg)
        except (RuntimeError, ValueError) as exc:
            results.append(TrialResult(i, label, float("nan"), float("nan"), False, 0,
                                       t0, r0, failed=True, message=str(exc)))
            continue
        results.append(TrialResult(
            i, label,
            translation_error(scene.theta_gt, res.theta_final),
            rotation_error(scene.theta_gt, res.theta_final),
            res.converged, res.iterations_run, t0, r0))
    return results


def _run_trial_args(args):
    return run_trial(*args)


def _cdf(values, edges):
    values = np.sort(values)
    return np.searchsorted(values, edges, side="right") / len(values)


def _summarize(report, n_bins=50):
    for key in ("translation_error_mm", "rotation_error_deg"):
        ok = [getattr(t, key) for t in report.trials if not t.failed]
        top = max(ok) if ok else 1.0
        report.cdf_edges[key] = np.linspace(0.0, top if top > 0 else 1.0, n_bins + 1)
    for mode in report.modes:
        rows = [t for t in report.trials if t.mode == mode]
        ok = [t for t in rows if not t.failed]
        summary = {
            "trials": len(rows),
            "failure_rate": (len(rows) - len(ok)) / len(rows) if rows else 0.0,
            "convergence_rate": sum(t.converged for t in rows) / len(rows) if rows else 0.0,
        }
        for key in ("translation_error_mm", "rotation_error_deg"):
            values = np.array([getattr(t, key) for t in ok])
            if values.size:
                summary[f"median_{key}"] = float(np.median(values))
                report.quantiles[(mode, key)] = np.quantile(values, [0.0, 0.25, 0.5, 0.75, 1.0])
                report.cdf[(mode, key)] = _cdf(values, report.cdf_edges[key])
            else:
                summary[f"median_{key}"] = float("nan")
        report.summary[mode] = summary
    return report


def run_benchmark(n_trials, family=None, perturb=None, modes=None, color_effects=True, workers=1):
    """Run ``n_trials`` seeded trials for every mode on identical inputs.

    ``modes`` maps labels to AlignConfig (default: second-order, strategy A).
    Trials are independent; with ``workers > 1`` they run in separate
    processes and are merged in trial order, so the report is the same.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    family = SceneSpec() if family is None else family
    perturb = PerturbationSpec() if perturb is None else perturb
    modes = {"second-A": AlignConfig()} if modes is None else dict(modes)
    jobs = [(i, family, perturb, modes, color_effects) for i in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial = list(pool.map(_run_trial_args, jobs))
    else:
        per_trial = [_run_trial_args(job) for job in jobs]
    trials = [t for rows in per_trial for t in rows]
    return _summarize(BenchmarkReport(trials, list(modes)))


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv(header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows([[_fmt(x) for x in row] for row in rows])
    return buf.getvalue()


def write_report(report, out_dir):
    """Write ``report.txt`` plus plot-data CSVs into ``out_dir``; returns the report path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fields = list(asdict(report.trials[0]).keys()) if report.trials else list(TrialResult.__dataclass_fields__)
    trials_csv = _csv(fields, [list(asdict(t).values()) for t in report.trials])
    quant_rows = [[mode, key, *q] for (mode, key), q in report.quantiles.items()]
    quant_csv = _csv(["mode", "metric", "min", "q1", "median", "q3", "max"], quant_rows)
    cdf_files = {}
    for key, edges in report.cdf_edges.items():
        cols = [m for m in report.modes if (m, key) in report.cdf]
        rows = [[e, *[report.cdf[(m, key)][b] for m in cols]] for b, e in enumerate(edges)]
        cdf_files[key] = _csv(["edge", *cols], rows)

    lines = [f"modes = {','.join(report.modes)}",
             f"n_trials = {len({t.trial for t in report.trials})}"]
    for mode, summary in report.summary.items():
        for key, value in summary.items():
            lines.append(f"{mode}.{key} = {_fmt(value)}")
    text = "\n".join(lines) + "\n\n[trials]\n" + trials_csv + "\n[quantiles]\n" + quant_csv
    for key, body in cdf_files.items():
        text += f"\n[cdf {key}]\n" + body

    (out / "trials.csv").write_text(trials_csv)
    (out / "quantiles.csv").write_text(quant_csv)
    for key, body in cdf_files.items():
        (out / f"cdf_{key}.csv").write_text(body)
    path = out / "report.txt"
    path.write_text(text)
    return path


def default_workers():
    return max(1, os.cpu_count() or 1)
