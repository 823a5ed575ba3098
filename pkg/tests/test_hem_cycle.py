"""End-to-end mining/finetuning cycle on a small phantom world."""

import numpy as np
import pytest
import torch

from nodulesynth.detector import DetectorConfig, ReferenceDetector
from nodulesynth.hem import HemConfig, run_hem_cycle
from nodulesynth.phantom import PhantomConfig, phantom_world_in_memory
from nodulesynth.shape_gan import ShapeGenerator
from nodulesynth.texture_gan import TextureGenerator


@pytest.fixture(scope="module")
def small_world():
    cfg = PhantomConfig(
        image_size=384, diameter_range=(16, 48), nodule_amplitude=(0.08, 0.28), seed=13
    )
    normals, nodules, _ = phantom_world_in_memory(cfg, 6, 40)
    return normals, nodules


@pytest.fixture(scope="module")
def pretrained(small_world):
    _, nodules = small_world
    train = nodules[10:]
    det = ReferenceDetector(DetectorConfig(channels=12, epochs_fit=10, seed=0))
    det.fit([r.pixels for r in train], [r.annotation for r in train])
    return det


@pytest.fixture(scope="module")
def generators():
    torch.manual_seed(1)
    return ShapeGenerator(base_channels=32), TextureGenerator(width=4)


@pytest.mark.slow
def test_cycle_report_bookkeeping(small_world, pretrained, generators, tmp_path):
    normals, nodules = small_world
    shape_gen, texture_gen = generators
    eval_set, train_set = nodules[:10], nodules[10:]
    det = ReferenceDetector.load(pretrained.save(tmp_path / "det.pt"))
    cfg = HemConfig(
        n_synthesized=6,
        seed=0,
        finetune=DetectorConfig(channels=12, epochs_finetune=2, seed=1),
    )
    det, report = run_hem_cycle(
        det, train_set, train_set, normals, eval_set, shape_gen, texture_gen, cfg
    )
    assert report.n_real == len(train_set)
    assert 0 <= report.n_synthesized <= 6
    assert report.n_real + report.n_synthesized == len(train_set) + report.n_synthesized
    assert len(report.diameters) == 6
    assert sum(report.histogram["counts"]) >= 1
    assert 0.0 <= report.pre.node21_score <= 1.0
    assert 0.0 <= report.post.node21_score <= 1.0
    assert 0.0 < report.conf_threshold < 1.0
    payload = report.to_json()
    assert set(payload) >= {"pre", "post", "histogram", "diameters", "conf_threshold"}
    # sampled diameters come from the mined support
    if not report.used_fallback_pool:
        mined = {round(d, 6) for d in np.asarray(report.histogram["bin_edges"])}
        assert all(d > 0 for d in report.diameters)


@pytest.mark.slow
def test_zero_synthesis_is_pure_real_control(small_world, pretrained, generators, tmp_path):
    normals, nodules = small_world
    shape_gen, texture_gen = generators
    eval_set, train_set = nodules[:10], nodules[10:]
    cfg = HemConfig(
        n_synthesized=0,
        seed=0,
        finetune=DetectorConfig(channels=12, epochs_finetune=2, seed=1),
    )
    det_a = ReferenceDetector.load(pretrained.save(tmp_path / "a.pt"))
    _, report = run_hem_cycle(
        det_a, train_set, train_set, normals, eval_set, shape_gen, texture_gen, cfg
    )
    assert report.n_synthesized == 0
    assert report.diameters == []

    # control: direct finetune on the same real data, same seeds
    det_b = ReferenceDetector.load(pretrained.save(tmp_path / "b.pt"))
    det_b.finetune(
        [r.pixels for r in train_set],
        [r.annotation for r in train_set],
        DetectorConfig(channels=12, epochs_finetune=2, seed=1),
    )
    preds_a = det_a.predict(eval_set[0].pixels)
    preds_b = det_b.predict(eval_set[0].pixels)
    assert [p.as_list() for p in preds_a] == [p.as_list() for p in preds_b]
