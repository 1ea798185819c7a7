"""``ctpnet`` command line: generate, train, eval, sweep, gradcheck, predict.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kvconfig
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .model import ConfigError, ModelConfig, build_model

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODEL_PRESETS = {"tiny": ModelConfig.tiny, "desk": ModelConfig.desk}
OVERLAY_RED = (255, 0, 0)


class DataError(Exception):
    pass


def _load_values(args) -> Dict[str, str]:
    values = kvconfig.read_kv(args.config) if args.config else {}
    for item in args.set or []:
        values.update(kvconfig.parse_kv(item, "--set"))
    return values


def _check_keys(values: Dict[str, str], classes: Sequence[type], extra: Sequence[str] = ()) -> None:
    unknown = [k for k in kvconfig.unknown_keys(values, classes) if k not in extra]
    if unknown:
        raise kvconfig.ConfigFileError(f"unknown config keys: {', '.join(unknown)}")


def _model_config(values: Dict[str, str], input_size: int) -> ModelConfig:
    preset = values.get("model", "tiny")
    if preset not in MODEL_PRESETS:
        raise kvconfig.ConfigFileError(f"model must be one of {sorted(MODEL_PRESETS)}, got {preset!r}")
    return MODEL_PRESETS[preset](input_size)


def _require_path(path: Optional[str], what: str) -> Path:
    if not path:
        raise kvconfig.ConfigFileError(f"{what} is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"{what} {p} does not exist")
    return p


def _load_dataset(path: Optional[str]):
    from .synth import load_samples

    p = _require_path(path, "--data")
    try:
        samples = load_samples(p)
    except (KeyError, json.JSONDecodeError) as exc:
        raise DataError(f"malformed manifest under {p}: {exc}") from exc
    if not samples:
        raise DataError(f"no samples in {p}")
    return samples


def _select(samples, part: str, seed: int):
    from .trainer import split_dataset

    if part == "all":
        return samples
    sp = split_dataset(samples, seed)
    return {"train": sp.train, "val": sp.val, "test": sp.test, "heldout": sp.val + sp.test}[part]


def _load_model(path: Optional[str]):
    p = _require_path(path, "--checkpoint")
    return load_checkpoint(p)


def cmd_generate(args) -> int:
    from .synth import GenerationConfig, generate_dataset

    values = _load_values(args)
    _check_keys(values, [GenerationConfig])
    cfg = kvconfig.build(GenerationConfig, values)
    if args.count < 1:
        raise kvconfig.ConfigFileError("--count must be at least 1")
    records = generate_dataset(cfg, args.count, args.seed or 0, args.out)
    print(f"wrote {len(records)} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import TrainConfig, split_dataset, train

    values = _load_values(args)
    _check_keys(values, [TrainConfig], extra=("model",))
    out = Path(args.out)
    values.setdefault("checkpoint_path", str(out / "best.ckpt"))
    fixed = {}
    if args.seed is not None:
        fixed["seed"] = args.seed
    if args.checkpoint:
        fixed["checkpoint_path"] = args.checkpoint
    if args.input_size:
        fixed["input_size"] = args.input_size
    cfg = kvconfig.build(TrainConfig, values, **fixed)
    if args.from_checkpoint:
        model = _load_model(args.from_checkpoint)
        if model.config.input_size != (cfg.input_size, cfg.input_size):
            raise kvconfig.ConfigFileError(
                f"checkpoint input size {model.config.input_size} differs from input_size {cfg.input_size}"
            )
    else:
        try:
            model = build_model(_model_config(values, cfg.input_size), seed=cfg.seed)
        except ConfigError as exc:
            raise kvconfig.ConfigFileError(str(exc)) from exc
    samples = _load_dataset(args.data)
    split = split_dataset(samples, cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    (out / "split.json").write_text(json.dumps({k: [s.id for s in v] for k, v in split._asdict().items()}))
    (out / "train.cfg").write_text(kvconfig.dump(cfg))
    model, history = train(model, split, cfg, on_epoch=lambda e, loss: print(f"epoch {e} loss {loss:.5f}", flush=True))
    history.write(out / "history.jsonl")
    save_checkpoint(model, out / "final.ckpt")
    best = f" (best val f1 {history.best_f1:.4f} at epoch {history.best_epoch})" if history.best_epoch else ""
    print(f"trained {cfg.epochs} epochs; checkpoint {cfg.checkpoint_path}{best}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate

    model = _load_model(args.checkpoint)
    samples = _select(_load_dataset(args.data), args.split, args.seed or 0)
    report = evaluate(model, samples, args.input_size, pooled_auc=args.pooled_auc)
    print(report.table())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.jsonl").write_text(report.to_jsonl())
        (out / "metrics.txt").write_text(report.table() + "\n")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .robustness import DEFAULT_GRID, parse_grid, robustness_sweep, rows_to_jsonl

    try:
        grid = parse_grid(args.grid) if args.grid else DEFAULT_GRID
    except ValueError as exc:
        raise kvconfig.ConfigFileError(f"--grid: {exc}") from exc
    model = _load_model(args.checkpoint)
    samples = _select(_load_dataset(args.data), args.split, args.seed or 0)
    rows = robustness_sweep(model, samples, grid, seed=args.seed or 0, input_size=args.input_size, pooled_auc=args.pooled_auc)
    print(f"{'kind':<12} {'factor':>7} {'auc':>7} {'f1':>7} {'iou':>7} {'mcc':>7}")
    for r in rows:
        a = "n/a" if r.auc is None else f"{r.auc:.4f}"
        print(f"{r.kind:<12} {r.factor:7.2f} {a:>7} {r.f1:7.4f} {r.iou:7.4f} {r.mcc:7.4f}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(rows_to_jsonl(rows))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_suite

    results, seconds = run_suite(instances=args.instances, seed=args.seed or 0)
    for r in results:
        status = "ok  " if r.passed else "FAIL"
        print(f"{status} {r.name:<24} max rel err {r.max_rel_error:.2e}  checked {r.n_checked}  failed {r.n_failed}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed ({seconds:.1f}s)")
        return EXIT_NUMERIC
    print(f"all {len(results)} checks passed ({seconds:.1f}s)")
    return EXIT_OK


def _read_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def overlay(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.asarray(image, dtype=np.uint8).copy()
    out[np.asarray(mask) != 0] = OVERLAY_RED
    return out


def cmd_predict(args) -> int:
    from .data import DocumentSample, prepare_batch, resize_bilinear
    from .engine import Tensor
    from .model import predict_mask

    model = _load_model(args.checkpoint)
    image_path = _require_path(args.image, "--image")
    image = _read_rgb(image_path)
    h, w = image.shape[:2]
    size = args.input_size or model.config.input_size[0]
    sample = DocumentSample(image_path.stem, image, np.zeros((h, w), np.uint8))
    batch, _ = prepare_batch([sample], size)
    prob, _ = predict_mask(model, Tensor(batch.astype(model.dtype)))
    prob_full = np.clip(resize_bilinear(prob[0], h, w), 0.0, 1.0)
    mask = (prob_full > 0.5).astype(np.uint8)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = image_path.stem
    np.save(out / f"{stem}_prob.npy", prob_full.astype(np.float32))
    Image.fromarray(np.rint(prob_full * 255).astype(np.uint8), "L").save(out / f"{stem}_prob.png")
    Image.fromarray(mask * 255, "L").save(out / f"{stem}_mask.png")
    Image.fromarray(overlay(image, mask), "RGB").save(out / f"{stem}_overlay.png")
    print(f"forged pixels {int(mask.sum())} of {mask.size}; outputs in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctpnet", description="Document forgery localization toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p: argparse.ArgumentParser, config: bool = True) -> None:
        p.add_argument("--seed", type=int, help="random seed (default 0, or the config's seed)")
        if config:
            p.add_argument("--config", help="key = value config file")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    def data_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--checkpoint", required=True, help="model checkpoint")
        p.add_argument("--data", required=True, help="generated dataset directory")
        p.add_argument("--split", choices=("all", "train", "val", "test", "heldout"), default="all",
                       help="part of the 8:1:1 split (by --seed) to use")
        p.add_argument("--input-size", type=int, help="model input side (default: checkpoint's)")
        p.add_argument("--pooled-auc", action="store_true", help="one AUC over all pixels instead of per-sample mean")

    p = sub.add_parser("generate", help="synthesize a forged-document dataset")
    common(p)
    p.add_argument("--count", type=int, default=100, help="number of samples")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    common(p)
    p.add_argument("--data", required=True, help="generated dataset directory")
    p.add_argument("--out", required=True, help="run directory for history and checkpoints")
    p.add_argument("--checkpoint", help="best-validation checkpoint path (default OUT/best.ckpt)")
    p.add_argument("--from-checkpoint", help="start from these weights instead of a fresh model")
    p.add_argument("--input-size", type=int, help="override input_size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    common(p, config=False)
    data_args(p)
    p.add_argument("--out", help="directory for metrics.jsonl and metrics.txt")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="robustness sweep over perturbations")
    common(p, config=False)
    data_args(p)
    p.add_argument("--grid", help='e.g. "resize=0.5,1.0;crop=0.8;gauss_noise=0,25" (default: built-in grid)')
    p.add_argument("--out", help="JSONL output path")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    common(p, config=False)
    p.add_argument("--instances", type=int, default=20, help="random instances per op")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("predict", help="predict the forged-region mask of one image")
    common(p, config=False)
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--image", required=True, help="input image")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--input-size", type=int, help="model input side (default: checkpoint's)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if getattr(args, "input_size", None) is not None and (args.input_size < 8 or args.input_size % 8):
        print("error: --input-size must be a positive multiple of 8", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (kvconfig.ConfigFileError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
