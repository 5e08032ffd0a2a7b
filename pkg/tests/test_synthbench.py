import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from pcalign import synthbench as sb
from pcalign.aligner import AlignConfig
from pcalign.geometry import PoseParams, compose, project, se3_transform
from pcalign.sampler import central_diff_images

SMALL = (64, 64)


@pytest.mark.parametrize("geometry", sb.GEOMETRIES)
def test_scene_reprojects_onto_its_pixels(geometry):
    s = sb.generate_scene(sb.SceneSpec(seed=3, geometry=geometry, image_size=(80, 64)))
    assert s.image.shape == (64, 80, 3) and s.depth.shape == (64, 80)
    uv, ok = project(s.K, se3_transform(s.theta_gt, s.pc.positions))
    assert ok.all()
    v, u = np.mgrid[0:64, 0:80]
    np.testing.assert_allclose(uv[:, 0], u.ravel(), atol=1e-9)
    np.testing.assert_allclose(uv[:, 1], v.ravel(), atol=1e-9)
    np.testing.assert_array_equal(s.pc.colors, s.image.reshape(-1, 3))
    assert s.image.min() >= 0 and s.image.max() <= 1


def test_scene_is_deterministic():
    a = sb.generate_scene(sb.SceneSpec(seed=11, image_size=SMALL))
    b = sb.generate_scene(sb.SceneSpec(seed=11, image_size=SMALL))
    c = sb.generate_scene(sb.SceneSpec(seed=12, image_size=SMALL))
    assert np.array_equal(a.image, b.image) and np.array_equal(a.pc.positions, b.pc.positions)
    assert not np.array_equal(a.image, c.image)


def test_high_frequency_texture_is_busier():
    def busy(profile):
        vals = []
        for seed in range(5):
            img = sb.generate_scene(sb.SceneSpec(seed=seed, texture_profile=profile)).image
            Ja, Jb = central_diff_images(img)
            vals.append(np.mean(np.abs(Ja[1:-1, 1:-1])) + np.mean(np.abs(Jb[1:-1, 1:-1])))
        return np.mean(vals)

    assert busy("high_frequency") >= 3 * busy("smooth")


def test_scene_spec_validation():
    with pytest.raises(ValueError):
        sb.SceneSpec(image_size=(32, 64))
    with pytest.raises(ValueError):
        sb.SceneSpec(texture_profile="plaid")
    with pytest.raises(ValueError):
        sb.SceneSpec(scene_depth=0)


def test_color_effects_identity(rng):
    img = rng.uniform(size=(20, 30, 3))
    out = sb.apply_color_effects(img, params=sb.ColorEffectParams())
    np.testing.assert_allclose(out, img, atol=1e-15)


def test_gamma_power_law():
    out = sb.apply_color_effects(np.full((5, 5, 3), 0.5), params=sb.ColorEffectParams(gamma=2.0))
    np.testing.assert_allclose(out, 0.25, atol=1e-15)


def test_blur_preserves_mass():
    img = np.zeros((21, 21, 3))
    img[10, 10] = 1.0
    for sigma in (0.2, 0.5, 0.75):
        out = sb.apply_color_effects(img, params=sb.ColorEffectParams(blur_sigma=sigma))
        np.testing.assert_allclose(out.sum(axis=(0, 1)), 1.0, atol=1e-6)
        assert abs(sb.gaussian_kernel(sigma).sum() - 1) < 1e-12
        assert len(sb.gaussian_kernel(sigma)) == 2 * int(np.ceil(3 * sigma)) + 1


def test_effect_parameters_within_ranges():
    for seed in range(300):
        p = sb.sample_color_effects(seed)
        for f in (p.brightness, p.contrast, p.saturation):
            assert 0.6 <= f <= 1.4
        assert abs(p.hue) <= 0.06
        assert 0.5 <= p.gamma <= 2.0
        assert 0 <= p.blur_sigma <= 0.75
        assert sorted(p.order) == [0, 1, 2, 3]


@given(st.integers(0, 10_000))
def test_effects_stay_in_range(seed):
    img = np.random.default_rng(seed).uniform(size=(8, 8, 3))
    out = sb.apply_color_effects(img, seed=seed)
    assert out.min() >= 0 and out.max() <= 1
    assert np.array_equal(out, sb.apply_color_effects(img, seed=seed))


def test_hue_rotation_full_turn_is_identity(rng):
    img = rng.uniform(0.1, 0.9, (6, 6, 3))
    out = sb.apply_color_effects(img, params=sb.ColorEffectParams(hue=1.0))
    np.testing.assert_allclose(out, img, atol=1e-12)


def random_pose(rng):
    return PoseParams(rng.uniform(-1, 1, 3), rng.normal(size=3))


def test_perturbation_zero_is_identity(rng):
    th = random_pose(rng)
    out = sb.perturb_pose(th, sb.PerturbationSpec(0, 0, 5))
    np.testing.assert_allclose(out.vector, th.vector, atol=1e-12)


@given(st.integers(0, 2**31), st.floats(0, 0.1), st.floats(0, 5))
def test_perturbation_bounded_and_deterministic(seed, t, r):
    th = PoseParams(np.array([0.1, -0.2, 0.3]), np.array([0.5, 0.1, -0.2]))
    spec = sb.PerturbationSpec(t, r, seed)
    out = sb.perturb_pose(th, spec)
    assert sb.translation_error(th, out) <= 1000 * t + 1e-9
    assert sb.rotation_error(th, out) <= r + 1e-6
    assert np.array_equal(out.vector, sb.perturb_pose(th, spec).vector)


def test_perturbation_validation():
    with pytest.raises(ValueError):
        sb.PerturbationSpec(-1, 0)


def test_translation_error_examples(rng):
    th = random_pose(rng)
    assert sb.translation_error(th, th) == 0
    other = PoseParams(th.omega, th.tau + [0.003, 0.004, 0])
    assert sb.translation_error(th, other) == pytest.approx(5.0, abs=1e-9)


def test_errors_invariant_to_common_left_motion(rng):
    for _ in range(50):
        a, b, m = random_pose(rng), random_pose(rng), random_pose(rng)
        assert sb.translation_error(compose(m, a), compose(m, b)) == pytest.approx(
            sb.translation_error(a, b), rel=1e-9)
        assert sb.rotation_error(compose(m, a), compose(m, b)) == pytest.approx(
            sb.rotation_error(a, b), abs=1e-7)


def test_rotation_error_examples(rng):
    th = random_pose(rng)
    assert sb.rotation_error(th, th) == pytest.approx(0, abs=1e-6)
    R = Rotation.from_rotvec([0, 0, np.radians(10)]).as_matrix() @ th.rotation()
    other = PoseParams(Rotation.from_matrix(R).as_rotvec(), th.tau)
    assert sb.rotation_error(th, other) == pytest.approx(10.0, abs=1e-9)
    a, b = random_pose(rng), random_pose(rng)
    assert sb.rotation_error(a, b) == pytest.approx(sb.rotation_error(b, a), abs=1e-9)


def test_errors_zero_only_for_equal_poses(rng):
    a = random_pose(rng)
    b = PoseParams(a.omega + [1e-6, 0, 0], a.tau)
    assert sb.rotation_error(a, b) > 0
    assert sb.translation_error(a, PoseParams(a.omega, a.tau + [1e-9, 0, 0])) > 0


def test_parse_mode():
    cfg = sb.parse_mode("first-B")
    assert cfg.color_mode == "first" and cfg.strategy == "B"
    assert sb.parse_mode("zero").strategy == "A"
    with pytest.raises(ValueError):
        sb.parse_mode("fourth-A")


def tiny_modes(**kw):
    return {"second-A": dataclasses.replace(AlignConfig(**kw), max_iters=60)}


def test_noop_benchmark_has_zero_error():
    family = sb.SceneSpec(image_size=SMALL)
    report = sb.run_benchmark(2, family, sb.PerturbationSpec(0, 0), tiny_modes(), color_effects=False)
    s = report.summary["second-A"]
    assert s["median_translation_error_mm"] < 1e-6 and s["median_rotation_error_deg"] < 1e-6
    assert s["convergence_rate"] == 1.0 and s["failure_rate"] == 0.0


def test_benchmark_report_files(tmp_path):
    family = sb.SceneSpec(image_size=SMALL)
    modes = {"second-A": dataclasses.replace(AlignConfig(), max_iters=20),
             "zero-A": dataclasses.replace(AlignConfig(color_mode="zero"), max_iters=20)}
    report = sb.run_benchmark(3, family, sb.PerturbationSpec(0.01, 0.5), modes)
    assert len(report.trials) == 6
    for key, edges in report.cdf_edges.items():
        for mode in modes:
            cdf = report.cdf[(mode, key)]
            assert np.all(np.diff(cdf) >= 0) and cdf[-1] == 1.0
            q = report.quantiles[(mode, key)]
            assert np.all(np.diff(q) >= 0)
    path = sb.write_report(report, tmp_path)
    text = path.read_text()
    assert "second-A.median_translation_error_mm" in text
    rows = (tmp_path / "trials.csv").read_text().splitlines()
    assert len(rows) == 7
    assert sum(r.split(",")[1] == "zero-A" for r in rows[1:]) == 3
    assert (tmp_path / "quantiles.csv").exists()
    assert (tmp_path / "cdf_translation_error_mm.csv").exists()


def test_trial_failures_are_recorded():
    family = sb.SceneSpec(image_size=SMALL)
    # a perturbation this large moves the camera out of the room
    report = sb.run_benchmark(1, family, sb.PerturbationSpec(50.0, 0.0), tiny_modes())
    assert report.summary["second-A"]["failure_rate"] == 1.0
    assert report.trials[0].failed and report.trials[0].message
