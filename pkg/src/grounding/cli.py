"""Command-line entry point: ``grounding {gen-data,train,eval,infer,viz-attn,bench}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ModelConfig, TrainConfig
from .dataio import (DatasetError, SyntheticConfig, generate_synthetic, load_dataset, read_ppm, rle_encode,
                     save_dataset, write_pgm)
from .encoders import GridFeatureMap
from .model import Attention, CheckpointMismatch, GroundingModel
from .numeric import CheckpointError, no_grad
from .trainer import NumericFailure, evaluate, train, write_trace

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC, EXIT_CHECKPOINT, EXIT_CONFIG = 0, 2, 3, 4, 5, 6
MANIFEST = "manifest.json"

log = logging.getLogger("grounding")


class UsageError(Exception):
    pass


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir: Path, command: str, argv: list[str], config: dict, started: str, **paths) -> None:
    manifest = {"command": command, "argv": argv, "version": __version__, "config": config,
                "seed": config.get("seed"), "started": started, "finished": _now()}
    manifest.update({k: (None if v is None else str(v)) for k, v in paths.items()})
    (out_dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in ("seed", "steps", "batch_size", "lr", "stop_at_ar")
                 if getattr(args, k, None) is not None}
    cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _model_config(args) -> ModelConfig:
    """Architecture from --config, else the manifest written next to the checkpoint, else defaults."""
    if args.config:
        return TrainConfig.load(args.config).model
    manifest = Path(args.ckpt).parent / MANIFEST
    if manifest.is_file():
        try:
            raw = json.loads(manifest.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{manifest}: {exc}") from None
        if "config" in raw:
            return TrainConfig.from_dict(raw["config"]).model
    return ModelConfig()


def _load_model(args) -> GroundingModel:
    cfg = _model_config(args)
    model = GroundingModel(cfg)
    model.load(args.ckpt)
    return model


def _phrases(raw: list[str]) -> tuple[list[str], list[tuple[int, int]]]:
    """Each argument is one phrase, given as space-separated tokens."""
    tokens, spans = [], []
    for phrase in raw:
        words = phrase.split()
        if not words:
            raise UsageError("empty phrase")
        spans.append((len(tokens), len(tokens) + len(words)))
        tokens.extend(words)
    return tokens, spans


def _check_threshold(t: float) -> None:
    if not 0 < t < 1:
        raise UsageError(f"--threshold must lie in (0, 1), got {t}")


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be >= 1")
    if args.size < 32 or args.size % 32:
        raise UsageError("--size must be a positive multiple of 32")
    cfg = SyntheticConfig(image_size=args.size, n_samples=args.samples, max_shapes=args.max_shapes)
    save_dataset(generate_synthetic(args.seed, cfg), args.out)
    print(f"wrote {args.samples} samples to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    cfg = _train_config(args)
    data = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = train(data, cfg)
    elapsed = time.perf_counter() - t0
    ckpt = out / "checkpoint.bin"
    result.model.save(ckpt)
    write_trace(result.trace, out / "trace.csv")
    metrics = evaluate(data, result.model, cfg.threshold)
    metrics.update(steps=result.steps, seconds=round(elapsed, 3))
    (out / "train_metrics.json").write_text(json.dumps(metrics, indent=2) + "\n")
    write_manifest(out, "train", sys.argv[1:], cfg.to_dict(), started, dataset=Path(args.data).resolve(),
                   checkpoint=ckpt.resolve())
    print(json.dumps(metrics))
    return EXIT_OK


def cmd_eval(args) -> int:
    _check_threshold(args.threshold)
    model = _load_model(args)
    metrics = evaluate(load_dataset(args.data), model, args.threshold)
    text = json.dumps(metrics, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_infer(args) -> int:
    started = _now()
    _check_threshold(args.threshold)
    tokens, spans = _phrases(args.phrases)
    model = _load_model(args)
    image = read_ppm(args.image)
    with no_grad():
        masks = model.predict(image, tokens, spans, args.threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w") as fh:
        for i, (phrase, prob, binary) in enumerate(zip(args.phrases, masks.probabilities, masks.binaries)):
            name = f"mask_{i:03d}.pgm"
            write_pgm(out / name, np.rint(prob * 255).astype(np.uint8))
            fh.write(json.dumps({"phrase": phrase, "span": list(spans[i]), "pgm": name,
                                 "height": binary.shape[0], "width": binary.shape[1],
                                 "rle": rle_encode(binary)}) + "\n")
    write_manifest(out, "infer", sys.argv[1:], {"model": dataclasses.asdict(model.cfg), "seed": None,
                                                "threshold": args.threshold, "phrases": args.phrases},
                   started, image=Path(args.image).resolve(), checkpoint=Path(args.ckpt).resolve())
    print(f"wrote {len(spans)} masks to {out}")
    return EXIT_OK


def attention_row(attn: Attention, layer: int, head: int, cell: tuple[int, int], grid: tuple[int, int]) -> np.ndarray:
    """One LPA attention row A^j[cell, :] as a (h, w) map."""
    maps = attn.lpa[layer][head]
    row = maps[cell[0] * grid[1] + cell[1]]
    if abs(row.sum() - 1.0) > 1e-9:
        raise NumericFailure(f"attention row sums to {row.sum():.12g}, expected 1")
    return row.reshape(grid)


def cmd_viz_attn(args) -> int:
    started = _now()
    tokens, spans = _phrases(args.phrases)
    model = _load_model(args)
    cfg = model.cfg
    image = read_ppm(args.image)
    if image.shape[0] % 32 or image.shape[1] % 32:
        raise UsageError(f"image extents must be multiples of 32, got {image.shape[0]}x{image.shape[1]}")
    grid = (image.shape[0] // 16, image.shape[1] // 16)
    try:
        cell = tuple(int(v) for v in args.cell.split(","))
    except ValueError:
        cell = ()
    if len(cell) != 2:
        raise UsageError("--cell must be ROW,COL")
    if not 0 <= args.layer < cfg.layers:
        raise UsageError(f"--layer must be in [0, {cfg.layers})")
    if not 0 <= args.head < cfg.heads:
        raise UsageError(f"--head must be in [0, {cfg.heads})")
    if not (0 <= cell[0] < grid[0] and 0 <= cell[1] < grid[1]):
        raise UsageError(f"--cell must lie in the {grid[0]}x{grid[1]} grid")
    attn = Attention([], [])
    with no_grad():
        model.predict(image, tokens, spans, attention=attn)
    row = attention_row(attn, args.layer, args.head, cell, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    name = f"attn_l{args.layer}_h{args.head}_r{cell[0]}_c{cell[1]}.pgm"
    write_pgm(out / name, np.rint(row / row.max() * 255).astype(np.uint8))
    np.savetxt(out / (name[:-4] + ".txt"), row, fmt="%.17g")
    write_manifest(out, "viz-attn", sys.argv[1:], {"model": dataclasses.asdict(cfg), "seed": None,
                                                   "layer": args.layer, "head": args.head, "cell": list(cell)},
                   started, image=Path(args.image).resolve(), checkpoint=Path(args.ckpt).resolve())
    print(out / name)
    return EXIT_OK


def bench(size: int, phrases: int, repeats: int, batch: int = 1, cfg: ModelConfig | None = None) -> dict:
    """Mean and standard deviation of per-image forward time, after one warm-up pass."""
    if repeats < 3:
        raise UsageError("--repeats must be >= 3")
    if size < 32 or size % 32:
        raise UsageError("--size must be a positive multiple of 32")
    if phrases < 1 or batch < 1:
        raise UsageError("--phrases and --batch must be >= 1")
    model = GroundingModel(cfg or ModelConfig())
    rng = np.random.default_rng(0)
    images = rng.random((batch, size, size, 3))
    tokens = ["the", "red", "disk"] * phrases
    spans = [(3 * i + 1, 3 * i + 3) for i in range(phrases)]
    times = []
    with no_grad():
        for r in range(repeats + 1):
            t0 = time.perf_counter()
            visual = model.encode_images(images)
            for i in range(batch):
                model.forward_one(GridFeatureMap(visual.features[i], visual.stride), tokens, spans)
            if r:
                times.append((time.perf_counter() - t0) / batch)
    return {"size": size, "phrases": phrases, "batch": batch, "repeats": repeats,
            "mean_ms": 1e3 * float(np.mean(times)), "std_ms": 1e3 * float(np.std(times)),
            "params": model.parameter_count()}


def cmd_bench(args) -> int:
    cfg = TrainConfig.load(args.config).model if args.config else ModelConfig()
    for size in args.size:
        print(json.dumps(bench(size, args.phrases, args.repeats, args.batch, cfg)))
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="grounding", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic grounding dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--samples", type=int, default=20)
    g.add_argument("--max-shapes", type=int, default=3)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--stop-at-ar", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--config")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    for name, func, help_ in (("infer", cmd_infer, "predict one mask per phrase"),
                              ("viz-attn", cmd_viz_attn, "dump one locality-attention row")):
        c = sub.add_parser(name, help=help_)
        c.add_argument("--image", required=True)
        c.add_argument("--phrases", nargs="+", required=True, help='one argument per phrase, e.g. "red disk"')
        c.add_argument("--ckpt", required=True)
        c.add_argument("--config")
        c.add_argument("--out", required=True)
        c.set_defaults(func=func)
    sub.choices["infer"].add_argument("--threshold", type=float, default=0.5)
    v = sub.choices["viz-attn"]
    v.add_argument("--layer", type=int, default=0)
    v.add_argument("--head", type=int, default=0)
    v.add_argument("--cell", default="0,0", help="ROW,COL on the stride-16 grid")

    b = sub.add_parser("bench", help="time the forward pass")
    b.add_argument("--size", type=int, nargs="+", default=[64])
    b.add_argument("--phrases", type=int, default=4)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--batch", type=int, default=1)
    b.add_argument("--config")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointMismatch, CheckpointError) as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
