import numpy as np
import pytest

from pcalign import cli, fileio
from pcalign import synthbench as sb


@pytest.fixture(scope="module")
def inputs(tmp_path_factory):
    d = tmp_path_factory.mktemp("inputs")
    scene = sb.generate_scene(sb.SceneSpec(seed=3, image_size=(96, 96)))
    fileio.save_ply(d / "cloud.ply", scene.pc, binary=True)
    fileio.save_image(d / "image.ppm", scene.image)
    K = scene.K
    (d / "K.txt").write_text(f"fx={K.fx!r}\nfy={K.fy!r}\ncx={K.cx!r}\ncy={K.cy!r}\n"
                             f"width={K.width}\nheight={K.height}\n")
    fileio.save_pose(d / "init.txt", sb.perturb_pose(scene.theta_gt, sb.PerturbationSpec(0.01, 0.5, 4)))
    return d, scene


def align_args(d, out, *extra):
    return ["align", "--cloud", str(d / "cloud.ply"), "--image", str(d / "image.ppm"),
            "--intrinsics", str(d / "K.txt"), "--init-pose", str(d / "init.txt"),
            "--out", str(out), *extra]


def test_usage_errors(capsys):
    assert cli.main([]) == 1
    assert cli.main(["align", "--bogus"]) == 1
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["--help"]) == 0


def test_missing_input_is_runtime_failure(tmp_path):
    assert cli.main(["heatmap", "--a", str(tmp_path / "nope.ppm"), "--b", str(tmp_path / "nope.ppm"),
                     "--out", str(tmp_path / "h.ppm")]) == 2


def test_corrupt_cloud_is_runtime_failure(inputs, tmp_path, capsys):
    d, _ = inputs
    (tmp_path / "cloud.ply").write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
    for name in ("image.ppm", "K.txt", "init.txt"):
        (tmp_path / name).write_bytes((d / name).read_bytes())
    assert cli.main(align_args(tmp_path, tmp_path / "out")) == 2
    assert "error:" in capsys.readouterr().err


def test_align_end_to_end(inputs, tmp_path):
    d, scene = inputs
    out = tmp_path / "run"
    assert cli.main(align_args(d, out, "--heatmap-interval", "25", "--threads", "1")) == 0
    theta = fileio.load_pose(out / "pose.txt")
    assert sb.translation_error(scene.theta_gt, theta) < 1.0
    assert sb.rotation_error(scene.theta_gt, theta) < 0.05
    rows = (out / "loss_trace.csv").read_text().splitlines()
    assert rows[0] == "iteration,loss,inliers" and len(rows) > 2
    maps = sorted(p.name for p in (out / "heatmaps").iterdir())
    assert maps[0] == "iter_00000.ppm"
    assert fileio.load_image(out / "heatmaps" / maps[0]).shape == (96, 96, 3)


def test_align_flags_override_config(inputs, tmp_path):
    d, _ = inputs
    (tmp_path / "cfg.txt").write_text("max_iters = 50\ncolor_mode = first\nheatmap_interval = 1\n")
    out = tmp_path / "run"
    assert cli.main(align_args(d, out, "--config", str(tmp_path / "cfg.txt"),
                               "--max-iters", "4", "--heatmap-interval", "0")) == 0
    assert len((out / "loss_trace.csv").read_text().splitlines()) == 5
    assert not (out / "heatmaps").exists()


def test_align_rejects_bad_config_value(inputs, tmp_path):
    d, _ = inputs
    (tmp_path / "cfg.txt").write_text("strategy = C\n")
    assert cli.main(align_args(d, tmp_path / "run", "--config", str(tmp_path / "cfg.txt"))) == 2


def test_align_is_thread_independent(inputs, tmp_path):
    d, _ = inputs
    for n in (1, 2):
        assert cli.main(align_args(d, tmp_path / f"t{n}", "--max-iters", "30", "--threads", str(n))) == 0
    for name in ("pose.txt", "loss_trace.csv"):
        assert (tmp_path / "t1" / name).read_bytes() == (tmp_path / "t2" / name).read_bytes()


def test_heatmap_command(inputs, tmp_path):
    d, scene = inputs
    fileio.save_pose(tmp_path / "gt.txt", scene.theta_gt)
    out = tmp_path / "h.ppm"
    assert cli.main(["heatmap", "--a", str(d / "image.ppm"), "--b", str(d / "cloud.ply"),
                     "--intrinsics", str(d / "K.txt"), "--pose", str(tmp_path / "gt.txt"),
                     "--out", str(out)]) == 0
    img = fileio.load_image(out)
    # cloud rendered at the true pose matches the image: mostly pure blue
    assert np.mean(np.all(img == [0, 0, 1], axis=-1)) > 0.9
    assert cli.main(["heatmap", "--a", str(d / "image.ppm"), "--b", str(d / "cloud.ply"),
                     "--out", str(out)]) == 1


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck", "--configs", "5"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4 and all(l.startswith("PASS") for l in lines)


def test_benchmark_command(tmp_path):
    args = ["benchmark", "--trials", "5", "--modes", "second-A,zero-A", "--image-size", "64",
            "--max-iters", "15", "--threads", "1", "--out", str(tmp_path / "b")]
    assert cli.main(args) == 0
    trials = (tmp_path / "b" / "trials.csv").read_text().splitlines()
    assert len(trials) == 1 + 10
    modes = [row.split(",") for row in trials[1:]]
    assert sum("second-A" in r for r in modes) == 5
    assert cli.main(["benchmark", "--trials", "0", "--out", str(tmp_path / "c")]) == 1
    assert cli.main(["benchmark", "--modes", "third-A", "--out", str(tmp_path / "c")]) == 1
