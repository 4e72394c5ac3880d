import json
from pathlib import Path

import numpy as np
import pytest

from desens import cli
from desens.cli import main
from desens.core import Category, parse_predictions, parse_sequence, serialize_sequence
from desens.harness import NoiseSpec, SceneSpec, corrupt, generate
from desens.metrics import evaluate_sequence
from desens.renderer import read_image

SMALL = {"scene": {"length": 6, "seed": 2}, "noise": {"seed": 2}}


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    spec = root / "spec.json"
    spec.write_text(json.dumps(SMALL))
    assert main(["simulate", str(spec), "--out", str(root / "out")]) == 0
    return root


def test_simulate_is_reproducible(sim, tmp_path):
    assert main(["simulate", str(sim / "spec.json"), "--out", str(tmp_path / "again")]) == 0
    assert tree(tmp_path / "again") == tree(sim / "out")
    assert sorted(tree(sim / "out"))[:3] == ["frames/000000.ppm", "frames/000001.ppm", "frames/000002.ppm"]


def test_simulate_matches_library(sim):
    gt, _ = generate(SceneSpec(length=6, seed=2))
    pred = corrupt(gt, NoiseSpec(seed=2))
    assert (sim / "out" / "gt.json").read_bytes() == serialize_sequence(gt)
    assert (sim / "out" / "pred.json").read_bytes() == serialize_sequence(pred)


def test_evaluate_identity_and_empty(sim, tmp_path, capsys):
    gt = str(sim / "out" / "gt.json")
    assert main(["evaluate", gt, gt, "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert rep["mioff"] == rep["ioff50"] == rep["ioff75"] == 1.0
    assert set(rep["ap"].values()) == {1.0}
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"sequence_id": "e", "width": 640, "height": 480, "frames": []}))
    assert main(["evaluate", gt, str(empty), "--out", str(tmp_path / "e.json")]) == 0
    rep = json.loads((tmp_path / "e.json").read_text())
    assert rep["mioff"] == 0.0 and set(rep["ap"].values()) == {0.0}
    assert "mioff" in capsys.readouterr().out


def test_evaluate_equals_library(sim, tmp_path):
    out = sim / "out"
    assert main(["evaluate", str(out / "gt.json"), str(out / "pred.json"), "--weights", "0.2,0.6,0.2",
                 "--out", str(tmp_path / "r.json")]) == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    from desens.metrics import RegionWeights
    lib = evaluate_sequence(parse_sequence((out / "gt.json").read_bytes()),
                            parse_predictions((out / "pred.json").read_bytes()), RegionWeights(0.2, 0.6, 0.2))
    want = lib.to_dict()
    want["weights"] = {"above": 0.2, "mid": 0.6, "below": 0.2}
    assert rep == json.loads(json.dumps(want))


def test_desensitize_empty_predictions_copies_frames(sim, tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text(json.dumps({"sequence_id": "e", "width": 640, "height": 480,
                                 "frames": [{"frame_index": 0, "objects": []}]}))
    assert main(["desensitize", str(sim / "out" / "frames"), str(empty), "--out", str(tmp_path / "red")]) == 0
    src = tree(sim / "out" / "frames")
    out = tree(tmp_path / "red")
    assert {k: out[k] for k in src} == src


def test_desensitize_is_deterministic_and_covers(sim, tmp_path):
    frames, pred = str(sim / "out" / "frames"), str(sim / "out" / "pred.json")
    for name in ("a", "b"):
        assert main(["desensitize", frames, pred, "--out", str(tmp_path / name), "--style", "icon"]) == 0
    assert tree(tmp_path / "a") == tree(tmp_path / "b")
    audit = json.loads((tmp_path / "a" / "audit.json").read_text())
    regions = [r for f in audit["frames"] for r in f["accepted"]]
    assert regions and all(r["coverage"] >= 0.5 for r in regions)


def test_desensitize_perfect_predictions_cover_ground_truth(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"scene": {"length": 4, "seed": 5}, "noise": {
        "drop_prob": 0, "drop_burst": None, "center_jitter_sigma": 0, "size_jitter_sigma": 0,
        "false_positive_rate": 0, "mask_noise_radius": 0, "seg_drop_prob": 0}}))
    assert main(["simulate", str(spec), "--out", str(tmp_path / "s")]) == 0
    assert main(["desensitize", str(tmp_path / "s" / "frames"), str(tmp_path / "s" / "pred.json"),
                 "--style", "solid:0,255,0", "--out", str(tmp_path / "r")]) == 0
    gt = parse_sequence((tmp_path / "s" / "gt.json").read_bytes())
    for f in gt.frames:
        before = read_image((tmp_path / "s" / "frames" / f.image_path).read_bytes()).pixels
        after = read_image((tmp_path / "r" / f.image_path).read_bytes()).pixels
        changed = np.any(before != after, axis=2)
        for o in f.of(Category.FACE, Category.PLATE):
            painted = np.all(after == (0, 255, 0), axis=2) & o.mask.to_dense()
            assert painted.sum() / o.mask.area == 1.0
        sens = np.zeros_like(changed)
        for o in f.of(Category.FACE, Category.PLATE):
            sens |= o.mask.to_dense()
        assert not (changed & ~sens).any()


def test_desensitize_data_errors(sim, tmp_path, capsys):
    pred = str(sim / "out" / "pred.json")
    assert main(["desensitize", str(tmp_path / "missing"), pred, "--out", str(tmp_path / "x")]) == 2
    frames = tmp_path / "frames"
    frames.mkdir()
    assert main(["desensitize", str(frames), pred, "--out", str(tmp_path / "x")]) == 2
    assert "missing frame file" in capsys.readouterr().err
    for p in (sim / "out" / "frames").iterdir():
        (frames / p.name).write_bytes(b"P6\n4 4\n255\n" + bytes(48))
    assert main(["desensitize", str(frames), pred, "--out", str(tmp_path / "x")]) == 2
    assert "does not match" in capsys.readouterr().err


def test_ablate_noiseless_rows_are_one(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"scene": {"length": 6, "hide_prob": 0}, "noise": {
        "drop_prob": 0, "drop_burst": None, "center_jitter_sigma": 0, "size_jitter_sigma": 0,
        "false_positive_rate": 0, "mask_noise_radius": 0, "seg_drop_prob": 0}, "seeds": 2}))
    assert main(["ablate", str(spec), "--out", str(tmp_path / "a.json")]) == 0
    assert main(["ablate", str(spec), "--out", str(tmp_path / "b.json")]) == 0
    a = (tmp_path / "a.json").read_bytes()
    assert a == (tmp_path / "b.json").read_bytes()
    assert {r["mioff"] for r in json.loads(a)["rows"]} == {1.0}


def test_losses_check(capsys, monkeypatch):
    assert main(["losses-check", "--seed", "4", "--seeds", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["max_fd_error"] < 1e-4
    monkeypatch.setattr(cli, "FD_TOLERANCE", 0.0)
    assert main(["losses-check"]) == 3


def test_print_config_defaults_and_overrides(tmp_path, capsys):
    assert main(["--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["weights"] == {"above": 0.25, "mid": 0.5, "below": 0.25}
    assert cfg["tracker"]["window"] == 4
    assert (cfg["loss"]["lambda_off"], cfg["loss"]["lambda_size"], cfg["loss"]["lambda_seg"]) == (1.0, 0.1, 0.5)
    assert (cfg["loss"]["alpha"], cfg["loss"]["beta"], cfg["loss"]["stride"]) == (2.0, 4.0, 4)
    assert cfg["joint"]["dsj_iou_threshold"] == 0.5 and cfg["joint"]["dj_high_confidence"] == 0.7

    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"tracker": {"window": 6}, "style": "solid"}))
    assert main(["evaluate", "a", "b", "--out", "c", "--config", str(path), "--window", "3",
                 "--dsj-method", "dual-confidence", "--print-config"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["tracker"]["window"] == 3 and cfg["style"] == "solid"
    assert cfg["joint"]["dsj_method"] == "dual-confidence"
    # the printed config reads back as the same config
    path.write_text(json.dumps(cfg))
    assert main(["--config", str(path), "--print-config"]) == 0
    assert json.loads(capsys.readouterr().out) == cfg


@pytest.mark.parametrize("argv,code", [
    ([], 1),
    (["--help"], 0),
    (["bogus"], 1),
    (["evaluate", "only-one"], 1),
    (["--weights", "1,2", "--print-config"], 1),
    (["--window", "0", "--print-config"], 2),
    (["evaluate", "nope.json", "nope.json", "--out", "x"], 2),
])
def test_exit_codes(argv, code, capsys):
    assert main(argv) == code


def test_bad_config_is_a_data_error(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"tracker": {"windw": 6}}))
    assert main(["--config", str(path), "--print-config"]) == 2
    assert "windw" in capsys.readouterr().err
