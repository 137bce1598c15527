"""Command-line entry point: ``gvt {train,eval,ablate,flops,spectrum,make-data}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_run_config
from .data import DatasetSpec, iterate_batches, load_splits, make_synthetic, write_packed
from .errors import GvtError
from .model import count_params, flop_estimate_gvt, flop_estimate_vit, measured_block_macs
from .train import evaluate, load_model_from_checkpoint, run_ablation, spectrum_report, train


def _spec_for(run: RunConfig, data: str) -> DatasetSpec:
    m = run.model
    layout = "class-folders" if Path(data).is_dir() and not any(Path(data).glob("*.gvtd")) else "packed"
    return DatasetSpec(data, layout, image_size=m.image_size, channels=m.in_channels,
                       eval_fraction=run.eval_fraction)


def _load(run: RunConfig, data: str):
    train_set, eval_set, _ = load_splits(_spec_for(run, data), seed=run.seed)
    if train_set.num_classes != run.model.num_classes:
        raise GvtError(f"dataset has {train_set.num_classes} classes, config says {run.model.num_classes}")
    return train_set, eval_set


def _run_config(args) -> RunConfig:
    run = load_run_config(args.config) if args.config else RunConfig()
    overrides = {}
    for key in ("epochs", "batch_size", "seed", "out"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if "seed" in overrides:
        run = replace(run, model=replace(run.model, seed=overrides["seed"]))
    return replace(run, **overrides)


def cmd_train(args) -> int:
    run = _run_config(args)
    train_set, eval_set = _load(run, args.data)
    res = train(run, train_set, eval_set, run.out, log_every=args.log_every)
    print(f"params {count_params(res.model)}  best eval_acc {res.best_acc:.4f} (epoch {res.best_epoch})")
    print(f"checkpoint {res.checkpoint}  metrics {res.metrics_path}")
    return 0


def cmd_eval(args) -> int:
    model, run = load_model_from_checkpoint(args.checkpoint, args.config)
    _, eval_set = _load(run, args.data)
    print(f"eval_acc {evaluate(model, eval_set):.4f} on {len(eval_set)} samples")
    return 0


def cmd_ablate(args) -> int:
    run = _run_config(args)
    train_set, eval_set = _load(run, args.data)
    table = run_ablation(run, train_set, eval_set, run.out)
    print(f"{'variant':<12} {'params':>9} {'final_acc':>10}")
    for row in table:
        print(f"{row['variant']:<12} {row['params']:>9} {row['final_acc']:>10.4f}")
    return 0


def cmd_flops(args) -> int:
    n, d = args.tokens, args.hidden
    g, v = flop_estimate_gvt(n, d), flop_estimate_vit(n, d)
    print(f"gvt {g}\nvit {v}\nratio {g / v:.6f}")
    if args.measured:
        print(f"measured_macs {measured_block_macs(n, d, args.heads)}")
    return 0


def cmd_spectrum(args) -> int:
    _, run = load_model_from_checkpoint(args.checkpoint, args.config)
    _, eval_set = _load(run, args.data)
    batches = [eval_set.images[idx] for idx, _ in
               zip(iterate_batches(len(eval_set), args.samples), range(args.batches))]
    rows = spectrum_report(args.checkpoint, batches, args.config, max_samples=args.samples)
    print(f"{'batch':>5} {'block':>5} {'head':>4} {'min_eig':>10} {'max_eig':>10} {'low_pass':>9}")
    for r in rows:
        print(f"{r['batch']:>5} {r['block']:>5} {r['head']:>4} {r['min_eig']:>10.6f} "
              f"{r['max_eig']:>10.6f} {r['low_pass_fraction']:>9.4f}")
    return 0


def cmd_make_data(args) -> int:
    out = Path(args.out)
    for split, count, seed in (("train", args.train, args.seed), ("test", args.test, args.seed + 1)):
        images, labels = make_synthetic(count, args.classes, args.size, args.channels, seed=seed)
        write_packed(out / f"{split}.gvtd", images, labels, args.classes)
    print(f"wrote {out / 'train.gvtd'} ({args.train}) and {out / 'test.gvtd'} ({args.test})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gvt", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the four ablation variants")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("flops", help="analytic per-block cost model")
    p.add_argument("--tokens", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--measured", action="store_true", help="also count MACs of a real block forward")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("spectrum", help="relation-matrix Laplacian spectra of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--batches", type=int, default=1)
    p.add_argument("--samples", type=int, default=4)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("make-data", help="write a synthetic packed dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=5000)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--channels", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_make_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except GvtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
