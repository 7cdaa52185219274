import json
import os

import numpy as np
import pytest

from uwstereo.cli import main
from uwstereo.depth import read_ply
from uwstereo.gcstereo import read_disparity
from uwstereo.imgcore import load_image, read_pfm
from uwstereo.pipeline import (
    ConfigError,
    PipelineConfig,
    StageError,
    disparity_accuracy,
    run_pipeline,
    set_dotted,
)
from uwstereo.tiepoints import TiePointSet


def synth(tmp_path, kind="shifted_texture", *extra):
    out = tmp_path / kind
    assert main(["synth", kind, "-o", str(out), *extra]) == 0
    return out


@pytest.fixture(scope="module")
def shifted_scene(tmp_path_factory):
    return synth(tmp_path_factory.mktemp("scene"), "shifted_texture", "--width", "96", "--height", "96")


def load_cfg(scene, out, **changes):
    with open(scene / "config.json") as fh:
        d = json.load(fh)
    d["output_dir"] = str(out)
    for k, v in changes.items():
        set_dotted(d, k, v)
    return PipelineConfig.from_dict(d, base_dir=str(scene))


def test_synth_writes_scene(shifted_scene):
    for name in ("left.png", "right.png", "truth_disparity.pfm", "scene.json", "config.json"):
        assert (shifted_scene / name).exists()
    cfg = json.loads((shifted_scene / "config.json").read_text())
    # the disparity search range is never taken from the ground truth
    assert cfg["gcstereo"]["disparity_min"] == "auto" and cfg["gcstereo"]["disparity_max"] == "auto"
    assert np.all(read_pfm(shifted_scene / "truth_disparity.pfm")[:, 5:] == 5)


def test_full_run(shifted_scene, tmp_path):
    report = run_pipeline(load_cfg(shifted_scene, tmp_path / "run"))
    run = tmp_path / "run"
    for name in (
        "enhanced_left.pfm", "enhanced_right.png", "tiepoints.txt", "rectification.json",
        "rectified_left.pfm", "disparity.pgm", "disparity.pfm", "depth.pfm", "mesh.ply",
        "mesh_texture.png", "report.json",
    ):
        assert (run / name).exists(), name
    acc = report["stages"]["gcstereo"]["accuracy"]
    assert acc["fraction_exact"] >= 0.95
    assert report["stages"]["rectify"]["identity"]
    assert report["stages"]["depth"]["mesh_triangles"] > 0
    on_disk = json.loads((run / "report.json").read_text())
    assert set(on_disk["timings"]) == set(report["stages"])
    assert read_ply(run / "mesh.ply").triangles.shape[1] == 3


def test_stage_gating_enhance_only(shifted_scene, tmp_path):
    out = tmp_path / "g"
    cfg = load_cfg(shifted_scene, out)
    cfg.stages_enabled.update(tiepoints=False, rectify=False, gcstereo=False, depth=False)
    run_pipeline(cfg)
    written = sorted(os.listdir(out))
    assert written == ["enhanced_left.pfm", "enhanced_left.png", "enhanced_right.pfm", "enhanced_right.png", "report.json"]


def test_downstream_consumes_persisted_outputs(shifted_scene, tmp_path):
    out = tmp_path / "r"
    run_pipeline(load_cfg(shifted_scene, out))
    first = (out / "mesh.ply").read_bytes()
    (out / "mesh.ply").unlink()
    cfg = load_cfg(shifted_scene, out)
    cfg.stages_enabled.update(enhance=False, tiepoints=False, rectify=False, gcstereo=False)
    run_pipeline(cfg)
    assert (out / "mesh.ply").read_bytes() == first


def test_missing_prerequisite_is_stage_error(shifted_scene, tmp_path):
    cfg = load_cfg(shifted_scene, tmp_path / "m")
    cfg.stages_enabled.update(tiepoints=False)
    with pytest.raises(StageError) as exc:
        run_pipeline(cfg)
    assert exc.value.stage == "rectify"
    assert (tmp_path / "m" / "report.json").exists()
    # partial outputs are kept
    assert (tmp_path / "m" / "enhanced_left.pfm").exists()


def test_determinism(shifted_scene, tmp_path):
    a = run_pipeline(load_cfg(shifted_scene, tmp_path / "a"))
    b = run_pipeline(load_cfg(shifted_scene, tmp_path / "b"))
    assert json.dumps(a["stages"], sort_keys=True) == json.dumps(b["stages"], sort_keys=True)
    for name in ("tiepoints.txt", "rectification.json", "disparity.pgm", "disparity.pfm", "depth.pfm", "mesh.ply"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_config_errors(shifted_scene, tmp_path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"stages_enabled": {"paint": True}})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"rig": {"focal_length": 100}})
    cfg = load_cfg(shifted_scene, tmp_path / "c", **{"gcstereo.smoothnes_weight": 1})
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = load_cfg(shifted_scene, tmp_path / "c", **{"depth.smooth_window": 4})
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = load_cfg(shifted_scene, tmp_path / "c")
    cfg.input_left = str(tmp_path / "nope.png")
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = load_cfg(shifted_scene, tmp_path / "c")
    cfg.rig = None
    with pytest.raises(ConfigError):
        cfg.validate()


def test_set_dotted_decodes_json():
    d = {}
    set_dotted(d, "gcstereo.smoothness_weight", "0.05")
    set_dotted(d, "enhance.homomorphic.r_high", "2")
    set_dotted(d, "tiepoints.note", "plain text")
    assert d == {"gcstereo": {"smoothness_weight": 0.05}, "enhance": {"homomorphic": {"r_high": 2}}, "tiepoints": {"note": "plain text"}}


def test_relative_paths_resolve_against_config(shifted_scene):
    cfg = PipelineConfig.load(shifted_scene / "config.json")
    assert os.path.isabs(cfg.input_left) and os.path.exists(cfg.input_left)


def test_disparity_accuracy_helper():
    from uwstereo.gcstereo import DisparityMap

    dm = DisparityMap(np.array([[1, 2, 3]]), np.array([[True, True, False]]), 0, 0, 4)
    acc = disparity_accuracy(dm, np.array([[1.2, 3.0, 3.0]]))
    assert acc == {"evaluated": 2, "exact": 1, "fraction_exact": 0.5}


# ---------------------------------------------------------------------------
# command line


def test_cli_run_with_override(shifted_scene, tmp_path, capsys):
    out = tmp_path / "cli"
    rc = main(["run", "--config", str(shifted_scene / "config.json"), "-o", str(out), "--gcstereo.smoothness_weight", "0.03"])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["gcstereo"]["smoothness_weight"] == 0.03


def test_cli_bad_override_exit_code(shifted_scene, tmp_path, capsys):
    rc = main(["run", "--config", str(shifted_scene / "config.json"), "-o", str(tmp_path / "x"), "--nonsense", "1"])
    assert rc == 2
    assert "uwstereo: error" in capsys.readouterr().err


def test_cli_stage_error_message(shifted_scene, tmp_path, capsys):
    rc = main([
        "run", "--config", str(shifted_scene / "config.json"), "-o", str(tmp_path / "e"),
        "--stages_enabled.tiepoints", "false",
    ])
    assert rc == 1
    assert "error in stage 'rectify'" in capsys.readouterr().err


@pytest.mark.parametrize("step", ["all", "moire", "homomorphic", "wavelet", "diffusion", "intensity", "colormeans"])
def test_cli_enhance_steps(shifted_scene, tmp_path, step):
    out = tmp_path / f"{step}.pfm"
    assert main(["enhance", str(shifted_scene / "left.png"), str(out), "--step", step]) == 0
    img = read_pfm(out)
    src = load_image(shifted_scene / "left.png")
    assert img.shape == src.data.shape and np.all(np.isfinite(img))


def test_cli_match_rectify_mesh(shifted_scene, tmp_path):
    left, right = str(shifted_scene / "left.png"), str(shifted_scene / "right.png")
    tp_file = tmp_path / "tp.txt"
    assert main(["match", left, right, str(tp_file)]) == 0
    tp = TiePointSet.load(tp_file)
    assert tp.inlier.sum() >= 8
    assert main(["rectify", left, right, "--tiepoints", str(tp_file), "-o", str(tmp_path / "rect")]) == 0
    assert (tmp_path / "rect" / "rectification.json").exists()
    # mesh from a stored disparity map
    run = tmp_path / "run"
    run_pipeline(load_cfg(shifted_scene, run))
    ply = tmp_path / "m.ply"
    assert main([
        "mesh", str(run / "disparity"), str(run / "rectified_left.png"), str(ply),
        "--focal-length", "200", "--baseline", "0.1",
    ]) == 0
    mesh = read_ply(ply)
    assert len(mesh.triangles) > 0
    # d = 5 -> z = 200 * 0.1 / 5; a few percent of labels are off
    z = mesh.vertices[:, 2]
    assert np.median(z) == pytest.approx(4.0)
    assert np.mean(np.abs(z - 4.0) < 1e-6) >= 0.9
    assert read_disparity(run / "disparity").labels.shape == (96, 96)


def test_cli_missing_input(tmp_path, capsys):
    rc = main(["enhance", str(tmp_path / "none.png"), str(tmp_path / "o.png")])
    assert rc == 1
    assert "uwstereo: error in stage 'enhance'" in capsys.readouterr().err


def test_cli_synth_degraded(tmp_path):
    out = synth(tmp_path, "two_plane", "--ramp", "0.4", "1.0", "--noise", "0.01", "--cast", "0.7", "0.9", "1.0")
    left = load_image(out / "left.png")
    # the ramp darkens the left edge relative to the right edge
    assert left.data[:, :8].mean() < left.data[:, -8:].mean()
