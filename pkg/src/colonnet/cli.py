"""``colonnet`` command line: synth, train, evaluate, predict."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .cam import compute_cam, overlay, upsample_map
from .config import ConfigError, RunConfig, describe_keys
from .dataset import DatasetError, ImageSample, load_dataset, split_dataset
from .metrics import evaluate
from .model import load_checkpoint, save_checkpoint
from .synthgen import SynthConfig, generate, write_dataset
from .trainer import TrainingError, run_full_schedule

log = logging.getLogger("colonnet")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


# --------------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        cfg = SynthConfig(n_samples=args.n, image_size=args.size,
                          bleeding_fraction=args.fraction, seed=args.seed)
        write_dataset(generate(cfg), args.out)
    except (ValueError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    print(f"wrote {args.n} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    try:
        cfg = RunConfig.from_file(args.config)
        if args.dataset:
            cfg.set("dataset.root", args.dataset)
        if args.out:
            cfg.set("output.dir", args.out)
        schedule = cfg.build_schedule()
        model = cfg.build_model()
    except ConfigError as exc:
        log.error("config error%s: %s", f" [{exc.key}]" if exc.key else "", exc)
        return EXIT_CONFIG

    out_dir = Path(cfg["output.dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        samples = load_dataset(cfg["dataset.root"])
        report, _ = run_full_schedule(model, samples, schedule)
    except TrainingError as exc:
        log.error("training failed: %s", exc)
        if exc.partial_report is not None:
            _write_json(out_dir / "report.json", {**exc.partial_report.to_dict(), "error": str(exc)})
        return EXIT_FAIL
    except (DatasetError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_FAIL

    save_checkpoint(model, out_dir / "checkpoint.bin", cfg["seed"], extra={"run_config": cfg.values})
    _write_json(out_dir / "report.json", {**report.to_dict(), "config": cfg.values})
    print(f"checkpoint: {out_dir / 'checkpoint.bin'}\nreport: {out_dir / 'report.json'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        model, blob = load_checkpoint(args.checkpoint)
        samples = load_dataset(args.dataset)
        run_cfg = blob.get("extra", {}).get("run_config", {})
        if args.split != "all":
            train, val = split_dataset(samples, run_cfg.get("dataset.train_fraction", 0.8),
                                       run_cfg.get("seed", blob.get("seed", 0)))
            samples = train if args.split == "train" else val
        report = evaluate(
            model, samples,
            cls_threshold=run_cfg.get("eval.cls_threshold", 0.5),
            mask_threshold=run_cfg.get("eval.mask_threshold", 0.5),
            iou_threshold=run_cfg.get("eval.iou_threshold", 0.5),
        )
    except (ValueError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_FAIL

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = report.render_table()
    _write_json(out_dir / "metrics.json", report.to_dict())
    (out_dir / "metrics.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def cmd_predict(args) -> int:
    try:
        model, blob = load_checkpoint(args.checkpoint)
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    run_cfg = blob.get("extra", {}).get("run_config", {})
    threshold = run_cfg.get("eval.cls_threshold", 0.5)
    mask_threshold = run_cfg.get("eval.mask_threshold", 0.5)
    alpha = run_cfg.get("predict.cam_alpha", 0.4)

    path = Path(args.image)
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except (OSError, ValueError) as exc:
        log.error("cannot read image %s: %s", path, exc)
        return EXIT_FAIL

    sid = path.stem
    sample = ImageSample(sid, rgb, 0)
    pred = model.predict([sample])[0]
    is_bleeding = pred.bleed_prob >= threshold
    h, w = rgb.shape[:2]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    box_img = Image.fromarray(_to_uint8(rgb))
    if is_bleeding:
        b = pred.bbox
        draw = ImageDraw.Draw(box_img)
        draw.rectangle([b.x_min * w, b.y_min * h, b.x_max * w - 1, b.y_max * h - 1],
                       outline=(0, 255, 0), width=max(1, round(min(h, w) / 100)))
    box_img.save(out_dir / f"{sid}_bbox.png")

    mask = (pred.mask_prob >= mask_threshold).astype(np.uint8) * 255
    Image.fromarray(mask, mode="L").resize((w, h), Image.NEAREST).save(out_dir / f"{sid}_mask.png")

    try:
        heat = compute_cam(model, sample).values
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_FAIL
    heat_full = np.asarray(
        Image.fromarray(upsample_map(heat, model.input_size).astype(np.float32), mode="F")
        .resize((w, h), Image.BILINEAR)
    )
    cam_rgb = overlay(rgb, np.clip(heat_full, 0.0, 1.0), alpha=alpha)
    Image.fromarray(_to_uint8(cam_rgb)).save(out_dir / f"{sid}_cam.png")

    _write_json(out_dir / f"{sid}.json", {
        "id": sid,
        "bleed_prob": pred.bleed_prob,
        "label": int(is_bleeding),
        "bbox": list(pred.bbox.as_tuple()),
        "bbox_drawn": bool(is_bleeding),
    })
    print(json.dumps({"id": sid, "bleed_prob": round(pred.bleed_prob, 6)}))
    return EXIT_OK


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    keys_help = "config keys (key = default):\n" + describe_keys()
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="colonnet", description=__doc__, epilog=keys_help,
                                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset", epilog=keys_help, formatter_class=fmt)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run the staged schedule", epilog=keys_help, formatter_class=fmt)
    p.add_argument("--config", required=True, help="key = value config file")
    p.add_argument("--dataset", help="overrides dataset.root")
    p.add_argument("--out", help="overrides output.dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint", epilog=keys_help, formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=("all", "train", "val"), default="all")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="bbox, mask and CAM for one image", epilog=keys_help,
                       formatter_class=fmt)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
