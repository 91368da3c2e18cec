"""Command-line entry point: ``pqvit {gen,render,train,eval,infer}``.

Results go to stdout, diagnostics to stderr.  Any handled error exits with
status 1 (argparse usage errors exit with 2).
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import metrics, trainer, vit
from .checkpoint import CheckpointError
from .dataset import DataError, DatasetSpec, class_counts, generate_dataset, grid_of, load_manifest, split_sizes
from .raster import ImageSpec, RasterDataError, rasterize, to_model_input, write_pgm
from .signals import CLASS_NAMES, DisturbanceClass, ParameterError, RangeError, TimeGrid

log = logging.getLogger("pqvit")


class ConfigError(ValueError):
    """Flags or files disagree about geometry or configuration."""


def _classes(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in text.split(",") if c.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated class ids, got {text!r}") from None


def _add_grid(p):
    g = TimeGrid()
    p.add_argument("--fs", type=float, default=g.fs, help="sampling rate in Hz")
    p.add_argument("--f0", type=float, default=g.f0, help="fundamental frequency in Hz")
    p.add_argument("--n-samples", type=int, default=g.n_samples)


def _add_image(p, geometry=True):
    s = ImageSpec()
    if geometry:
        p.add_argument("--height", type=int, default=s.height)
        p.add_argument("--width", type=int, default=s.width)
    p.add_argument("--amp-min", type=float, default=s.amp_range[0])
    p.add_argument("--amp-max", type=float, default=s.amp_range[1])


def _add_model(p):
    c = vit.ViTConfig()
    p.add_argument("--patch", type=int, default=c.patch)
    p.add_argument("--dim", type=int, default=c.dim)
    p.add_argument("--depth", type=int, default=c.depth)
    p.add_argument("--heads", type=int, default=c.heads)
    p.add_argument("--mlp-ratio", type=int, default=c.mlp_ratio)
    p.add_argument("--ln-eps", type=float, default=c.ln_eps)
    p.add_argument("--no-final-norm", action="store_true", help="drop the LayerNorm before the head")
    p.add_argument("--init-seed", type=int, default=c.seed)


def _add_train(p):
    t = trainer.TrainConfig()
    p.add_argument("--epochs", type=int, default=t.epochs)
    p.add_argument("--batch-size", type=int, default=t.batch_size)
    p.add_argument("--eval-batch-size", type=int, default=t.eval_batch_size)
    p.add_argument("--lr", type=float, default=t.lr)
    p.add_argument("--weight-decay", type=float, default=t.weight_decay)
    p.add_argument("--beta1", type=float, default=t.beta1)
    p.add_argument("--beta2", type=float, default=t.beta2)
    p.add_argument("--eps", type=float, default=t.eps)
    p.add_argument("--seed", type=int, default=t.seed, help="shuffle seed")
    p.add_argument("--checkpoint-every", type=int, default=t.checkpoint_every)
    p.add_argument("--dtype", choices=("float32", "float64"), default=t.dtype)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pqvit", description="Power-quality disturbance classification with a ViT")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize a labelled dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr-db", type=float, default=30.0)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--classes", type=_classes, default=tuple(range(len(DisturbanceClass))))
    _add_grid(p)

    p = sub.add_parser("render", help="write one PGM image per signal")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_image(p)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--classes", type=_classes, default=None,
                   help="dataset classes the model predicts, in output order (default: all in the dataset)")
    p.add_argument("--resume", type=Path, default=None)
    _add_image(p)
    _add_model(p)
    _add_train(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--weighting", choices=("uniform", "support"), default="uniform")
    p.add_argument("--height", type=int, default=None, help="expected image height; must match the checkpoint")
    p.add_argument("--width", type=int, default=None, help="expected image width; must match the checkpoint")
    p.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("infer", help="classify one signal")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("signal", type=Path, help=".npy array or whitespace/comma separated text")
    return parser


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    grid = TimeGrid(fs=args.fs, f0=args.f0, n_samples=args.n_samples)
    spec = DatasetSpec(per_class=args.per_class, seed=args.seed, snr_db=args.snr_db,
                       test_fraction=args.test_fraction, classes=args.classes, grid=grid)
    m = generate_dataset(spec, args.out)
    print(f"wrote {len(m)} samples to {args.out}")
    for cid, n in class_counts(m).items():
        print(f"  C{cid:<2d} {DisturbanceClass(cid).label:28s} {n}")
    sizes = split_sizes(m)
    print(f"train {sizes.get('train', 0)}  test {sizes.get('test', 0)}")
    return 0


def _image_spec(args) -> ImageSpec:
    return ImageSpec(height=args.height, width=args.width, amp_range=(args.amp_min, args.amp_max))


def cmd_render(args) -> int:
    m = load_manifest(args.data)
    spec = _image_spec(args)
    args.out.mkdir(parents=True, exist_ok=True)
    samples = m.load_samples()
    for rec, x in zip(m.records, samples):
        img = rasterize(x.astype(np.float64), spec, rec["class_id"])
        write_pgm(args.out / f"{rec['index']:06d}_c{rec['class_id']:02d}.pgm", img)
    print(f"wrote {len(m)} images to {args.out}")
    return 0


def cmd_train(args) -> int:
    m = load_manifest(args.data)
    class_ids = args.classes if args.classes is not None else tuple(class_counts(m))
    cfg = vit.ViTConfig(height=args.height, width=args.width, patch=args.patch, dim=args.dim,
                        depth=args.depth, heads=args.heads, mlp_ratio=args.mlp_ratio,
                        n_classes=len(class_ids), final_norm=not args.no_final_norm,
                        ln_eps=args.ln_eps, seed=args.init_seed)
    names = {f.name for f in fields(trainer.TrainConfig)}
    tcfg = trainer.TrainConfig(**{k: v for k, v in vars(args).items() if k in names})
    spec = trainer.image_spec_for(cfg, (args.amp_min, args.amp_max))
    _, history = trainer.train(m, cfg, tcfg, out_dir=args.out, spec=spec, resume=args.resume, class_ids=class_ids)
    print(f"checkpoint {args.out / 'final.pqvt'}")
    if history.records:
        print(f"final eval accuracy {history.records[-1].eval_acc:.4f}")
    return 0


def _class_names(class_ids) -> list[str]:
    return [f"C{c} {DisturbanceClass(c).label}" for c in class_ids]


def cmd_eval(args) -> int:
    m = load_manifest(args.data)
    params, cfg, header, _ = trainer.read_checkpoint(args.checkpoint)
    for flag, value in (("height", args.height), ("width", args.width)):
        if value is not None and value != getattr(cfg, flag):
            raise ConfigError(f"--{flag} {value} does not match the checkpoint ({getattr(cfg, flag)})")
    grid = grid_of(m)
    ckpt_grid = header.get("grid") or {}
    if ckpt_grid and int(ckpt_grid["n_samples"]) != grid.n_samples:
        raise ConfigError(f"dataset signals have {grid.n_samples} samples, checkpoint expects {ckpt_grid['n_samples']}")
    spec = trainer.image_spec_from_header(header)
    if (spec.height, spec.width, spec.channels) != (cfg.height, cfg.width, cfg.channels):
        raise ConfigError("checkpoint image geometry does not match its model config")
    class_ids = header.get("class_ids", list(range(cfg.n_classes)))
    records = m.split(args.split)
    if not records:
        raise DataError(f"split {args.split!r} is empty")
    x = trainer.render_records(m, records, spec)
    truth = trainer.class_index(records, class_ids)
    pred = trainer.evaluate(x, params, cfg, args.batch_size)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", metrics.UndefinedMetricWarning)
        rep = metrics.report(truth, pred, cfg.n_classes, args.weighting)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    metrics.write_reports(rep, args.out, _class_names(class_ids))
    print(f"accuracy {rep.accuracy:.4f}  precision_w {rep.precision_w:.4f}  "
          f"recall_w {rep.recall_w:.4f}  f1_w {rep.f1_w:.4f}")
    return 0


def _read_signal(path: Path) -> np.ndarray:
    try:
        if path.suffix == ".npy":
            return np.load(path).astype(np.float64).reshape(-1)
        return np.array(path.read_text().replace(",", " ").split(), dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: cannot parse signal ({exc})") from None


def cmd_infer(args) -> int:
    params, cfg, header, _ = trainer.read_checkpoint(args.checkpoint)
    x = _read_signal(args.signal)
    expected = int((header.get("grid") or {}).get("n_samples", TimeGrid().n_samples))
    if x.size != expected:
        raise DataError(f"signal has {x.size} samples, expected {expected}")
    spec = trainer.image_spec_from_header(header)
    probs = vit.forward(to_model_input(rasterize(x, spec)), params, cfg)
    class_ids = header.get("class_ids", list(range(cfg.n_classes)))
    best = int(np.argmax(probs))
    cid = class_ids[best]
    print(f"class {cid} {CLASS_NAMES[DisturbanceClass(cid)]}")
    for c, p in zip(class_ids, probs):
        print(f"  C{c:<2d} {p:.6f}")
    return 0


COMMANDS = {"gen": cmd_gen, "render": cmd_render, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer}
_HANDLED = (ConfigError, DataError, CheckpointError, RasterDataError, ParameterError, RangeError,
            trainer.DivergenceError, metrics.MetricsDataError, metrics.DegenerateMetricsError,
            vit.ShapeError, ValueError, OSError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except _HANDLED as exc:
        print(f"pqvit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
