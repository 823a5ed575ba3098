"""Command-line surface tying the modules together.

Every subcommand accepts ``--config cfg.json``; flags passed on the command
line override config values. Invalid configuration exits with code 2 and the
offending key path, runtime failures exit with code 1, success with 0.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import phantom as phantom_mod
from .datasets import (
    extract_nodule_patches,
    load_annotation,
    load_phantom_dataset,
    load_predictions,
    save_annotation,
)
from .errors import ConfigError, NoduleSynthError
from .features import create_feature_extractor
from .froc import froc_summary
from .hem import HemConfig, run_hem_cycle
from .imaging import atomic_write_text, from_network, load_image, load_mask, save_image, save_mask
from .masks import clean_mask, estimate_diameter, modulate_size, upsample_nn
from .metrics import MetricReport, fid_score, pixel_metrics
from .detector import DetectorConfig, ReferenceDetector
from .shape_gan import (
    ShapeGanConfig,
    generate_shape,
    load_shape_generator,
    sample_latent,
    train_shape_gan,
)
from .texture_gan import (
    TextureGanConfig,
    composite,
    load_texture_generator,
    synthesize_texture,
    train_texture_gan,
)

_CONFIG_TYPES = {
    "shape": ShapeGanConfig,
    "texture": TextureGanConfig,
    "detector": DetectorConfig,
    "hem": HemConfig,
    "phantom": phantom_mod.PhantomConfig,
}


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ConfigError("<root>", "config file must contain a JSON object")
    return obj


def _build_dataclass(cls, overrides: dict, key_prefix: str):
    """Instantiate a config dataclass from a JSON dict with path-aware errors."""
    valid = {f.name: f.type for f in cls.__dataclass_fields__.values()}
    kwargs = {}
    for key, value in overrides.items():
        if key not in valid:
            raise ConfigError(f"{key_prefix}.{key}", "unknown key")
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(key_prefix, str(exc)) from exc


def _section(config: dict, name: str):
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(name, "must be a JSON object")
    return _build_dataclass(_CONFIG_TYPES[name], section, name)


def _cmd_phantom(args) -> int:
    config = _load_config(args.config)
    section = config.get("phantom", {})
    if args.size is not None:
        section["image_size"] = args.size
    section["seed"] = args.seed
    cfg = _build_dataclass(phantom_mod.PhantomConfig, section, "phantom")
    manifest = phantom_mod.generate_phantom_dataset(cfg, args.normals, args.nodules, args.out)
    print(f"wrote {len(manifest['files'])} files to {args.out}")
    return 0


def _cmd_modulate(args) -> int:
    mask = load_mask(args.input)
    out = modulate_size(mask, args.d, canvas=args.canvas)
    save_mask(args.out, out)
    print(f"measured diameter: {estimate_diameter(out):.2f} px")
    return 0


def _load_shape_corpus(data_dir: Path) -> list[np.ndarray]:
    mask_dir = data_dir / "nodule_masks"
    files = sorted(mask_dir.glob("*.png")) if mask_dir.is_dir() else sorted(data_dir.glob("*.png"))
    return [load_mask(p) for p in files]


def _cmd_train_shape(args) -> int:
    config = _load_config(args.config)
    section = config.get("shape", {})
    if args.epochs is not None:
        section["epochs"] = args.epochs
    if args.width is not None:
        section["base_channels"] = args.width
        section["disc_channels"] = args.width
    cfg = _build_dataclass(ShapeGanConfig, section, "shape")
    masks = _load_shape_corpus(Path(args.data))
    result = train_shape_gan(masks, cfg, out_dir=args.out, seed=args.seed)
    print(f"final checkpoint: {result.final_checkpoint}")
    return 0


def _cmd_train_texture(args) -> int:
    config = _load_config(args.config)
    section = config.get("texture", {})
    if args.width is not None:
        section["width"] = args.width
    if args.max_steps is not None:
        section["max_steps_per_phase"] = args.max_steps
    cfg = _build_dataclass(TextureGanConfig, section, "texture")
    _, nodules, shape_masks = load_phantom_dataset(args.data)
    pairs = extract_nodule_patches(nodules, shape_masks)
    result = train_texture_gan(pairs, cfg, out_dir=args.out, seed=args.seed)
    print(f"final checkpoint: {result.final_checkpoint} after {result.steps} steps")
    return 0


def _cmd_fit_detector(args) -> int:
    config = _load_config(args.config)
    section = config.get("detector", {})
    if args.epochs is not None:
        section["epochs_fit"] = args.epochs
    section.setdefault("seed", args.seed)
    cfg = _build_dataclass(DetectorConfig, section, "detector")
    _, nodules, _ = load_phantom_dataset(args.data)
    det = ReferenceDetector(cfg)
    det.fit([r.pixels for r in nodules], [r.annotation for r in nodules])
    det.save(args.out)
    print(f"saved detector to {args.out}")
    return 0


def _parse_grid(text: str) -> tuple[int, int]:
    rows, _, cols = text.partition("x")
    return int(rows), int(cols)


def _cmd_generate(args) -> int:
    rng = np.random.default_rng(args.seed)
    rows, cols = _parse_grid(args.grid)
    diameters = [float(d) for d in args.diameters.split(",")]
    if len(diameters) != cols:
        raise ConfigError("generate.diameters", f"need {cols} diameters for a {rows}x{cols} grid")
    generator = load_shape_generator(args.shape_ckpt)
    texture = load_texture_generator(args.texture_ckpt) if args.texture_ckpt else None

    if args.mode == "image":
        return _generate_full_images(args, generator, texture, rng)

    backgrounds = []
    if args.backgrounds:
        backgrounds = [load_image(p) for p in sorted(Path(args.backgrounds).glob("*.png"))]
    if args.mode == "patch" and (texture is None or not backgrounds):
        raise ConfigError("generate.mode", "mode 'patch' needs --texture-ckpt and --backgrounds")

    cell = 256
    canvas = np.zeros((rows * cell, cols * cell), dtype=np.float32)
    for r in range(rows):
        prob = generate_shape(generator, sample_latent(rng))
        base_mask = upsample_nn(clean_mask(prob), cell)
        background = backgrounds[r % len(backgrounds)] if backgrounds else None
        for c, d in enumerate(diameters):
            mask = modulate_size(base_mask, d, cell)
            if args.mode == "mask":
                tile = mask.astype(np.float32)
            else:
                patch = background[:cell, :cell]
                _, refined = synthesize_texture(texture, patch.astype(np.float32), mask)
                tile = composite(patch, mask, from_network(refined))
            canvas[r * cell : (r + 1) * cell, c * cell : (c + 1) * cell] = tile
    save_image(args.out, canvas)
    print(f"wrote {rows}x{cols} grid (diameters {diameters}) to {args.out}")
    return 0


def _generate_full_images(args, shape_gen, texture_gen, rng) -> int:
    """Whole synthesized chest images: one per grid cell, written to a directory."""
    from .hem import AugmentationPlan, synthesize_augmentation_set

    if texture_gen is None or not args.backgrounds:
        raise ConfigError("generate.mode", "mode 'image' needs --texture-ckpt and --backgrounds")
    rows, cols = _parse_grid(args.grid)
    diameters = [float(d) for d in args.diameters.split(",")]
    normals, _, _ = load_phantom_dataset(args.backgrounds)
    if not normals:
        raise ConfigError("generate.backgrounds", "dataset has no normal images")
    by_id = {img.image_id: img for img in normals}
    ids = sorted(by_id)
    plan = AugmentationPlan(
        diameters=np.asarray(diameters * rows, dtype=float),
        latent_seeds=[int(s) for s in rng.integers(0, 2**31 - 1, size=rows * cols)],
        normal_image_ids=[ids[int(i)] for i in rng.integers(0, len(ids), size=rows * cols)],
    )
    items = synthesize_augmentation_set(plan, shape_gen, texture_gen, by_id)
    out = Path(args.out)
    (out / "annotations").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for item in items:
        save_image(out / "images" / f"{item.annotation.image_id}.png", item.image.pixels)
        save_annotation(out / "annotations" / f"{item.annotation.image_id}.json", item.annotation)
    print(f"wrote {len(items)} synthesized images to {out}")
    return 0


def _cmd_eval(args) -> int:
    real_paths = sorted(Path(args.real).glob("*.png"))
    synth_paths = sorted(Path(args.synth).glob("*.png"))
    if len(real_paths) != len(synth_paths):
        raise ConfigError("eval", f"{len(real_paths)} real vs {len(synth_paths)} synth images")
    reals = [load_image(p) for p in real_paths]
    synths = [load_image(p) for p in synth_paths]
    masks = None
    if args.masks:
        masks = [load_mask(Path(args.masks) / p.name) for p in real_paths]

    extractor = create_feature_extractor(args.extractor, seed=args.seed)
    full = [pixel_metrics(a, b) for a, b in zip(reals, synths)]
    reports = [
        MetricReport(
            scope="full_patch",
            mae=float(np.mean([m["mae"] for m in full])),
            psnr=float(np.mean([m["psnr"] for m in full])),
            ssim=float(np.mean([m["ssim"] for m in full])),
            fid=fid_score(reals, synths, extractor),
        )
    ]
    if masks is not None:
        masked = [pixel_metrics(a, b, region=m) for a, b, m in zip(reals, synths, masks)]
        reports.append(
            MetricReport(
                scope="masked_region",
                mae=float(np.mean([m["mae"] for m in masked])),
                psnr=float(np.mean([m["psnr"] for m in masked])),
                ssim=float(np.mean([m["ssim"] for m in masked])),
            )
        )
    payload = json.dumps([r.to_json() for r in reports], indent=1)
    if args.out:
        atomic_write_text(args.out, payload)
    print(payload)
    return 0


def _cmd_froc(args) -> int:
    from .froc import match_detections

    ann_dir, pred_dir = Path(args.annotations), Path(args.predictions)
    records = []
    for ann_path in sorted(ann_dir.glob("*.json")):
        ann = load_annotation(ann_path)
        pred_path = pred_dir / ann_path.name
        preds = load_predictions(pred_path)[1] if pred_path.exists() else []
        records.append(
            match_detections(preds, ann.boxes, args.iou, 0.5, ann.image_id)
        )
    summary = froc_summary(records, iou_thresh=args.iou, fp_max=args.fp_max)
    payload = json.dumps(summary.to_json(), indent=1)
    if args.out:
        atomic_write_text(args.out, payload)
    print(payload)
    return 0


def _cmd_augment(args) -> int:
    config = _load_config(args.config)
    section = config.get("hem", {})
    section["n_synthesized"] = args.n
    section["seed"] = args.seed
    cfg = _build_dataclass(HemConfig, section, "hem")

    normals, nodules, _ = load_phantom_dataset(args.data)
    n_eval = max(len(nodules) // 4, 1)
    eval_set, train_set = nodules[:n_eval], nodules[n_eval:]

    detector = ReferenceDetector.load(args.detector_ckpt)
    shape_gen = load_shape_generator(args.shape_ckpt)
    texture_gen = load_texture_generator(args.texture_ckpt)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    detector, report = run_hem_cycle(
        detector, train_set, train_set, normals, eval_set, shape_gen, texture_gen, cfg
    )
    detector.save(out / "detector_finetuned.pt")
    atomic_write_text(out / "report.json", json.dumps(report.to_json(), indent=1))
    print(
        f"pre node21={report.pre.node21_score:.4f} -> post node21={report.post.node21_score:.4f} "
        f"({report.n_synthesized} synthesized)"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nodulesynth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a reproducible phantom dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--normals", type=int, required=True)
    p.add_argument("--nodules", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("modulate", help="rescale a shape mask to a target diameter")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--d", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--canvas", type=int, default=256)
    p.set_defaults(func=_cmd_modulate)

    p = sub.add_parser("train-shape", help="train the shape-mask GAN")
    p.add_argument("--data", required=True, help="dataset dir or a dir of mask PNGs")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_train_shape)

    p = sub.add_parser("train-texture", help="train the texture inpainting GAN")
    p.add_argument("--data", required=True, help="phantom dataset dir")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_train_texture)

    p = sub.add_parser("fit-detector", help="pretrain the reference detector")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_fit_detector)

    p = sub.add_parser("generate", help="render a grid of masks or synthesized patches")
    p.add_argument("--shape-ckpt", required=True)
    p.add_argument("--texture-ckpt", default=None)
    p.add_argument("--backgrounds", default=None, help="dir of background patch PNGs")
    p.add_argument("--mode", choices=("mask", "patch", "image"), default="mask")
    p.add_argument("--grid", default="2x3", help="ROWSxCOLS; one shape per row")
    p.add_argument("--diameters", default="40,70,100")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("eval", help="image-quality metrics between two patch dirs")
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--masks", default=None)
    p.add_argument("--extractor", choices=("random", "pretrained", "auto"), default="random")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("froc", help="score prediction JSONs against annotations")
    p.add_argument("--predictions", required=True, help="dir of per-image prediction JSONs")
    p.add_argument("--annotations", required=True, help="dir of per-image annotation JSONs")
    p.add_argument("--iou", type=float, default=0.2)
    p.add_argument("--fp-max", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_froc)

    p = sub.add_parser("augment", help="run one mine/synthesize/finetune cycle")
    p.add_argument("--detector-ckpt", required=True)
    p.add_argument("--shape-ckpt", required=True)
    p.add_argument("--texture-ckpt", required=True)
    p.add_argument("--data", required=True, help="phantom dataset dir")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_augment)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error at {exc}", file=sys.stderr)
        return 2
    except NoduleSynthError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
