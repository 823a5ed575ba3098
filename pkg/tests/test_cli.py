import json

import numpy as np
import pytest

from nodulesynth.cli import main
from nodulesynth.imaging import load_image, load_mask, save_mask
from nodulesynth.masks import estimate_diameter


def run_cli(*argv) -> int:
    return main([str(a) for a in argv])


def test_phantom_command_writes_dataset(tmp_path, capsys):
    out = tmp_path / "ds"
    code = run_cli("phantom", "--out", out, "--normals", 1, "--nodules", 1,
                   "--seed", 7, "--size", 192)
    assert code == 0
    assert (out / "manifest.json").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert "wrote" in capsys.readouterr().out


def test_modulate_round_trip(tmp_path, capsys):
    from conftest import rasterized_disk

    src = tmp_path / "m.png"
    save_mask(src, rasterized_disk(20, 128))
    out = tmp_path / "m70.png"
    code = run_cli("modulate", "--in", src, "--d", 70, "--out", out)
    assert code == 0
    assert abs(estimate_diameter(load_mask(out)) - 70.0) <= 2.0
    assert "measured diameter" in capsys.readouterr().out


def test_modulate_missing_file_exits_nonzero(tmp_path, capsys):
    code = run_cli("modulate", "--in", tmp_path / "missing.png", "--d", 40,
                   "--out", tmp_path / "o.png")
    assert code == 1


def test_bad_config_key_exits_two(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"phantom": {"not_a_key": 1}}))
    code = run_cli("phantom", "--out", tmp_path / "d", "--normals", 0,
                   "--nodules", 0, "--config", cfg)
    assert code == 2
    err = capsys.readouterr().err
    assert "phantom.not_a_key" in err


def test_froc_command(tmp_path):
    from nodulesynth.datasets import save_annotation, save_predictions, ImageAnnotation
    from nodulesynth.froc import Box

    ann_dir = tmp_path / "ann"
    pred_dir = tmp_path / "pred"
    ann_dir.mkdir()
    pred_dir.mkdir()
    for i in range(3):
        ann = ImageAnnotation(f"img{i}", [Box(10, 10, 40, 40)])
        save_annotation(ann_dir / f"img{i}.json", ann)
        save_predictions(pred_dir / f"img{i}.json", f"img{i}", [Box(10, 10, 40, 40, score=0.9)])
    out = tmp_path / "froc.json"
    code = run_cli("froc", "--predictions", pred_dir, "--annotations", ann_dir, "--out", out)
    assert code == 0
    summary = json.loads(out.read_text())
    assert summary["auc"] == pytest.approx(1.0)
    assert summary["node21_score"] == pytest.approx(1.0)


def test_eval_command_reports_scopes(tmp_path):
    from nodulesynth.imaging import save_image

    real, synth, masks = tmp_path / "real", tmp_path / "synth", tmp_path / "masks"
    for d in (real, synth, masks):
        d.mkdir()
    rng = np.random.default_rng(0)
    for i in range(3):
        img = rng.random((64, 64)).astype(np.float32)
        save_image(real / f"p{i}.png", img)
        noisy = np.clip(img + rng.normal(0, 0.01, img.shape), 0, 1)
        save_image(synth / f"p{i}.png", noisy)
        m = np.zeros((64, 64), np.uint8)
        m[16:48, 16:48] = 1
        save_mask(masks / f"p{i}.png", m)
    out = tmp_path / "report.json"
    code = run_cli("eval", "--real", real, "--synth", synth, "--masks", masks, "--out", out)
    assert code == 0
    reports = json.loads(out.read_text())
    assert [r["scope"] for r in reports] == ["full_patch", "masked_region"]
    assert reports[0]["fid"] >= 0.0
    assert reports[1]["fid"] is None
    assert 0 < reports[0]["mae"] < 0.05


@pytest.mark.slow
def test_generate_grid_from_trained_checkpoint(tmp_path, shape_corpus):
    from nodulesynth.shape_gan import ShapeGanConfig, train_shape_gan

    cfg = ShapeGanConfig(base_channels=32, disc_channels=32, epochs=2, checkpoint_every=5)
    result = train_shape_gan(shape_corpus[:6], cfg, out_dir=tmp_path / "run", seed=0)
    out = tmp_path / "grid.png"
    code = run_cli(
        "generate", "--shape-ckpt", result.final_checkpoint,
        "--grid", "2x3", "--diameters", "40,70,100", "--seed", 1, "--out", out,
    )
    assert code == 0
    grid = load_image(out)
    assert grid.shape == (512, 768)  # 2x3 tiles of 256
    # each tile holds a binary mask of roughly the requested diameter
    for r in range(2):
        for c, want in enumerate((40.0, 70.0, 100.0)):
            tile = grid[r * 256 : (r + 1) * 256, c * 256 : (c + 1) * 256]
            mask = (tile > 0.5).astype(np.uint8)
            if mask.sum():
                assert abs(estimate_diameter(mask) - want) <= 2.0


def test_unknown_command_exits_with_usage_error(capsys):
    with pytest.raises(SystemExit):
        run_cli("not-a-command")
