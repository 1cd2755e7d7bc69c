"""Command-line entry point.

Subcommands: synth, train, infer, eval, ablate. Exit codes: 0 success,
1 usage/config error, 2 data error, 3 numerical failure. Setting
NDELS_DETERMINISTIC=1 forces single-threaded deterministic numerics.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .checkpoint import load_checkpoint, load_params, params_from_arrays
from .dehaze import DhmParams
from .errors import ConfigError, DataError, NumericalError
from .image import load_image, save_image
from .metrics import QualityReport
from .retinex import RetinexConfig, ndels_stages
from .synth import build_dataset, load_dataset, load_pairs_dir
from .train import TrainConfig, apply_determinism_env, evaluate, mean_report, train_dhm, train_llm

IMAGE_EXTS = {".png", ".jpg", ".jpeg"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map argparse usage errors onto exit code 1
        raise ConfigError(message)


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise ConfigError(f"expected WxH, got {text!r}") from exc


def _parse_scales(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated scales, got {text!r}") from exc


def _load_train_config(path: str | None) -> TrainConfig:
    if path is None:
        return TrainConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return TrainConfig.from_json_dict(raw)


def _load_llm_ckpt(path: str | None):
    return None if path is None else load_params(path, namespace="net")


def _load_dhm_ckpt(path: str | None) -> DhmParams | None:
    if path is None:
        return None
    meta, arrays = load_checkpoint(path)
    return DhmParams(
        upper=params_from_arrays(meta, arrays, "upper"),
        lower=params_from_arrays(meta, arrays, "lower"),
        head=params_from_arrays(meta, arrays, "head"),
    )


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def cmd_synth(args) -> int:
    if (args.pairs_dir is None) == (args.builtin_scenes is None):
        raise ConfigError("exactly one of --pairs-dir or --builtin-scenes is required")
    if args.pairs_dir is not None:
        pairs = load_pairs_dir(args.pairs_dir)
        if args.count is not None:
            pairs = pairs[: args.count]
        manifest = build_dataset(args.out, pairs=pairs, seed=args.seed,
                                 val_fraction=args.val_fraction)
    else:
        count = args.builtin_scenes if args.count is None else min(args.count, args.builtin_scenes)
        w, h = args.scene_size
        manifest = build_dataset(args.out, builtin_count=count, seed=args.seed,
                                 val_fraction=args.val_fraction, scene_size=(w, h))
    print(manifest)
    return 0


def cmd_train(args) -> int:
    cfg = _load_train_config(args.config)
    if args.epochs is not None:
        cfg = TrainConfig.from_json_dict({**cfg.to_json_dict(), "total_epochs": args.epochs})
    if args.seed is not None:
        cfg = TrainConfig.from_json_dict({**cfg.to_json_dict(), "seed": args.seed})
    dataset = load_dataset(args.data, split=args.split)
    if not dataset:
        raise DataError(f"no triplets in {args.data} (split={args.split})")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.module == "llm":
        train_llm(dataset, cfg, out_dir=out_dir, resume=args.resume, log=print)
    else:
        train_dhm(dataset, cfg, out_dir=out_dir, resume=args.resume, log=print)
    final = out_dir / f"epoch_{cfg.total_epochs}.ckpt"
    print(final)
    return 0


def _iter_input_images(path: Path):
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_EXTS)
        if not files:
            raise DataError(f"no images in {path}")
        yield from files
    elif path.is_file():
        yield path
    else:
        raise DataError(f"input not found: {path}")


def cmd_infer(args) -> int:
    apply_determinism_env()
    llm = None if args.identity else _load_llm_ckpt(args.llm)
    dhm = None if args.identity else _load_dhm_ckpt(args.dhm)
    cfg = RetinexConfig(scales=args.scales, zero_bin_ratio=args.zero_bin_ratio)
    in_path = Path(args.input)
    out_path = Path(args.out)
    multi = in_path.is_dir()
    if multi:
        out_path.mkdir(parents=True, exist_ok=True)
    for src in _iter_input_images(in_path):
        try:
            img = load_image(src)
        except OSError as exc:
            raise DataError(f"cannot read {src}: {exc}") from exc
        final, stages = ndels_stages(img, llm, dhm, cfg=cfg, use_emsr=args.emsr,
                                     alpha=args.alpha, use_enhance=True)
        dst = out_path / src.name if multi else out_path
        dst.parent.mkdir(parents=True, exist_ok=True)
        save_image(final, dst)
        if args.dump_stages:
            for i, (stage, image) in enumerate(stages.items(), start=1):
                save_image(image, dst.with_name(f"{dst.stem}_stage{i}_{stage}{dst.suffix}"))
        print(dst)
    return 0


def cmd_eval(args) -> int:
    llm = _load_llm_ckpt(args.llm)
    dhm = _load_dhm_ckpt(args.dhm)
    dataset = load_dataset(args.data, split=args.split)
    if not dataset:
        raise DataError(f"no triplets in {args.data} (split={args.split})")
    reports, notes = evaluate(
        llm, dhm, dataset,
        use_emsr=args.emsr,
        use_enhance=not args.no_enhance,
        retinex_cfg=RetinexConfig(scales=args.scales),
        alpha=args.alpha,
        resize_to=args.resize,
    )
    payload = {
        "images": [r.to_json_dict() for r in reports],
        "mean": mean_report(reports).to_json_dict() if reports else None,
        "skipped": notes,
    }
    _write_json(Path(args.out), payload)
    for note in notes:
        print(f"note: {note}", file=sys.stderr)
    print(args.out)
    return 0


ABLATE_ROWS = ("llm", "dhm", "llm_dhm")
ABLATE_COLS = ("base", "emsr", "enhancement")


def cmd_ablate(args) -> int:
    llm = None if args.identity else _load_llm_ckpt(args.llm)
    dhm = None if args.identity else _load_dhm_ckpt(args.dhm)
    dataset = load_dataset(args.data, split=args.split)
    if not dataset:
        raise DataError(f"no triplets in {args.data} (split={args.split})")
    if args.limit is not None:
        dataset = dataset[: args.limit]
    cfg = RetinexConfig(scales=args.scales)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    row_nets = {"llm": (llm, None), "dhm": (None, dhm), "llm_dhm": (llm, dhm)}
    col_flags = {
        "base": {"use_enhance": False, "use_emsr": False},
        "emsr": {"use_enhance": False, "use_emsr": True},
        "enhancement": {"use_enhance": True, "use_emsr": False},
    }
    grid: dict[str, dict[str, dict]] = {}
    for row in ABLATE_ROWS:
        l, d = row_nets[row]
        grid[row] = {}
        for col in ABLATE_COLS:
            reports, _ = evaluate(l, d, dataset, retinex_cfg=cfg, alpha=args.alpha,
                                  **col_flags[col])
            mean = mean_report(reports)
            grid[row][col] = {
                "psnr": "inf" if math.isinf(mean.psnr) else mean.psnr,
                "ssim": mean.ssim,
            }
    _write_json(out_dir / "ablation.json", grid)

    sheet_dir = out_dir / "sheets"
    sheet_dir.mkdir(exist_ok=True)
    for i, t in enumerate(dataset):
        name = t.name or f"item_{i:05d}"
        panels = [("input", t.dark_hazy)]
        for row in ABLATE_ROWS:
            l, d = row_nets[row]
            out, _ = _infer_cell(t.dark_hazy, l, d, cfg, args.alpha, col_flags["base"])
            panels.append((f"{row}", out))
        final, _ = _infer_cell(t.dark_hazy, *row_nets["llm_dhm"], cfg, args.alpha,
                               {"use_enhance": True, "use_emsr": True})
        panels.append(("final", final))
        if t.bright is not None:
            panels.append(("target", t.bright))
        _contact_sheet(panels).save(sheet_dir / f"{name}.png")
    print(out_dir / "ablation.json")
    return 0


def _infer_cell(img, llm, dhm, cfg, alpha, flags):
    return ndels_stages(img, llm, dhm, cfg=cfg, alpha=alpha, **flags)[0], None


def _contact_sheet(panels: list[tuple[str, np.ndarray]], label_h: int = 14) -> Image.Image:
    h = max(p.shape[0] for _, p in panels)
    widths = [p.shape[1] for _, p in panels]
    sheet = Image.new("RGB", (sum(widths) + 2 * (len(panels) - 1), h + label_h), "black")
    draw = ImageDraw.Draw(sheet)
    x = 0
    for label, img in panels:
        q = np.floor(np.clip(img, 0, 1) * 255 + 0.5).astype(np.uint8)
        sheet.paste(Image.fromarray(q, mode="RGB"), (x, label_h))
        draw.text((x + 2, 1), label, fill="white")
        x += img.shape[1] + 2
    return sheet


def build_parser() -> _Parser:
    parser = _Parser(prog="ndels", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate training triplets")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs-dir")
    p.add_argument("--builtin-scenes", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.0)
    p.add_argument("--scene-size", type=_parse_size, default=(128, 96))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one module")
    p.add_argument("module", choices=["llm", "dhm"])
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resume")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--split", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="run the pipeline on images")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--llm")
    p.add_argument("--dhm")
    p.add_argument("--emsr", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--scales", type=_parse_scales, default=(5.0, 130.0, 255.0))
    p.add_argument("--zero-bin-ratio", type=float, default=0.10)
    p.add_argument("--dump-stages", action="store_true")
    p.add_argument("--identity", action="store_true",
                   help="bypass both networks (passthrough test mode)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate pipeline quality on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--llm")
    p.add_argument("--dhm")
    p.add_argument("--emsr", action=argparse.BooleanOptionalAction, default=False)
    p.add_argument("--no-enhance", action="store_true")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--scales", type=_parse_scales, default=(5.0, 130.0, 255.0))
    p.add_argument("--split", default=None)
    p.add_argument("--resize", type=_parse_size, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="module x post-process ablation grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--llm")
    p.add_argument("--dhm")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--scales", type=_parse_scales, default=(5.0, 130.0, 255.0))
    p.add_argument("--split", default=None)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--identity", action="store_true")
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
