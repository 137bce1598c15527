"""Training loop, evaluation, ablation battery and spectral diagnostics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, load_into, save_checkpoint
from .config import RunConfig, dump_run_config, load_run_config
from .data import Dataset, iterate_batches
from .errors import ContractError, NumericError
from .graph import laplacian_spectrum
from .model import Model, build_model, count_params
from .optim import AdamWState, adamw_step, cosine_lr
from .tensor import Tensor, cross_entropy, no_grad, zero_grad

log = logging.getLogger(__name__)

METRICS_HEADER = ["epoch", "step", "lr", "train_loss", "train_acc", "eval_acc", "wall_ms"]
CHECKPOINT_NAME = "best.ckpt"
CONFIG_NAME = "run.cfg"
SPECTRUM_TOL = 1e-6


@dataclass
class TrainResult:
    rows: list[dict]
    best_acc: float
    best_epoch: int
    checkpoint: Path
    metrics_path: Path
    model: Model


def evaluate(model: Model, data: Dataset, batch_size: int = 256) -> float:
    if len(data) == 0:
        return 0.0
    correct = 0
    for idx in iterate_batches(len(data), batch_size):
        pred = model.predict(Tensor(data.images[idx]))
        correct += int(np.sum(pred == data.labels[idx]))
    return correct / len(data)


def param_norm_table(model: Model) -> str:
    lines = [f"{'parameter':<32} {'l2 norm':>14} {'finite':>7}"]
    for name, p in model.named_parameters().items():
        finite = bool(np.all(np.isfinite(p.data)))
        norm = float(np.linalg.norm(p.data)) if finite else float("nan")
        lines.append(f"{name:<32} {norm:>14.6g} {str(finite):>7}")
    return "\n".join(lines)


def _fmt_row(row: dict) -> list[str]:
    return [str(row["epoch"]), str(row["step"]), f"{row['lr']:.10g}", f"{row['train_loss']:.10g}",
            f"{row['train_acc']:.10g}", f"{row['eval_acc']:.10g}", str(row["wall_ms"])]


def train(run: RunConfig, train_set: Dataset, eval_set: Dataset, out_dir=None,
          model: Model | None = None, log_every: int = 0) -> TrainResult:
    """Train with AdamW and per-step cosine decay; keep the best-eval-accuracy checkpoint.

    Writes ``metrics.csv`` (one row per epoch), ``best.ckpt`` and ``run.cfg``
    into ``out_dir``. Ties on eval accuracy keep the earlier epoch.
    """
    out = Path(out_dir or run.out)
    out.mkdir(parents=True, exist_ok=True)
    model = model or build_model(run.model)
    params = model.named_parameters()
    opt = AdamWState(lr=run.lr0, weight_decay=run.weight_decay)
    rng = np.random.default_rng(run.seed)
    steps_per_epoch = -(-len(train_set) // run.batch_size)
    total = run.epochs * steps_per_epoch

    (out / CONFIG_NAME).write_text(dump_run_config(run), encoding="utf-8")
    ckpt = out / CHECKPOINT_NAME
    metrics_path = out / "metrics.csv"
    save_checkpoint(ckpt, params)
    best_acc, best_epoch = -1.0, 0
    rows: list[dict] = []
    start = time.perf_counter()
    step = 0

    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)
        fh.flush()
        for epoch in range(1, run.epochs + 1):
            loss_sum, correct, seen = 0.0, 0, 0
            for batch_idx, idx in enumerate(iterate_batches(len(train_set), run.batch_size, rng)):
                images = train_set.images[idx]
                if run.flip:
                    flip = rng.random(len(idx)) < 0.5
                    images = np.where(flip[:, None, None, None], images[..., ::-1], images)
                labels = train_set.labels[idx]
                lr = cosine_lr(step, total, run.lr0)
                try:
                    logits = model(Tensor(images))
                    loss = cross_entropy(logits, labels)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NumericError("loss is not finite")
                    zero_grad(params.values())
                    loss.backward()
                except NumericError as exc:
                    dump = out / "nan_dump.txt"
                    dump.write_text(
                        f"epoch {epoch} batch {batch_idx} step {step}: {exc}\n\n{param_norm_table(model)}\n",
                        encoding="utf-8")
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, batch {batch_idx} (step {step}); "
                        f"parameter norms written to {dump}") from exc
                adamw_step(params, {k: p.grad for k, p in params.items()}, opt, lr=lr)
                model.clamp()
                step += 1
                loss_sum += value * len(idx)
                correct += int(np.sum(np.argmax(logits.data, axis=-1) == labels))
                seen += len(idx)
                if log_every and step % log_every == 0:
                    log.info("step %d loss %.4f lr %.3g", step, value, lr)
            eval_acc = evaluate(model, eval_set)
            wall = int((time.perf_counter() - start) * 1000) if run.wall_clock else 0
            row = dict(epoch=epoch, step=step, lr=cosine_lr(step, total, run.lr0),
                       train_loss=loss_sum / max(seen, 1), train_acc=correct / max(seen, 1),
                       eval_acc=eval_acc, wall_ms=wall)
            rows.append(row)
            writer.writerow(_fmt_row(row))
            fh.flush()
            log.info("epoch %d loss %.4f train_acc %.4f eval_acc %.4f", epoch, row["train_loss"],
                     row["train_acc"], eval_acc)
            if eval_acc > best_acc:
                best_acc, best_epoch = eval_acc, epoch
                save_checkpoint(ckpt, params)
    return TrainResult(rows, max(best_acc, 0.0), best_epoch, ckpt, metrics_path, model)


def train_steps(model: Model, images: np.ndarray, labels: np.ndarray, steps: int,
                lr0: float = 5e-4, weight_decay: float = 0.05, schedule: bool = True) -> list[float]:
    """Repeatedly fit one fixed batch; returns the loss before each update."""
    params = model.named_parameters()
    opt = AdamWState(lr=lr0, weight_decay=weight_decay)
    x = Tensor(images)
    losses = []
    for step in range(steps):
        loss = cross_entropy(model(x), labels)
        losses.append(loss.item())
        zero_grad(params.values())
        loss.backward()
        lr = cosine_lr(step, steps, lr0) if schedule else lr0
        adamw_step(params, {k: p.grad for k, p in params.items()}, opt, lr=lr)
        model.clamp()
    return losses


# -- ablation -----------------------------------------------------------------------------------

ABLATION_VARIANTS = {
    "gvt": dict(talking="gvt", residual=True),
    "none": dict(talking="none", residual=True),
    "shazeer": dict(talking="shazeer", residual=True),
    "no-residual": dict(talking="gvt", residual=False),
}


def ablation_configs(base: RunConfig) -> dict[str, RunConfig]:
    return {name: replace(base, model=base.model.with_flags(**kw)) for name, kw in ABLATION_VARIANTS.items()}


def run_ablation(base: RunConfig, train_set: Dataset, eval_set: Dataset, out_dir=None) -> list[dict]:
    """Train the four architecture variants with identical seed and data order."""
    out = Path(out_dir or base.out)
    table = []
    for name, cfg in ablation_configs(base).items():
        res = train(cfg, train_set, eval_set, out / name)
        final = res.rows[-1]["eval_acc"] if res.rows else evaluate(res.model, eval_set)
        table.append(dict(variant=name, params=count_params(res.model), final_acc=final))
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["variant", "params", "final_acc"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(table)
    return table


# -- spectral diagnostics -------------------------------------------------------------------


def relation_spectra(model: Model, images: np.ndarray, max_samples: int = 4) -> list[dict]:
    """Eigenvalues of I - normalized symmetrized relation matrix, per block and head.

    Raises ContractError if any eigenvalue leaves [-1e-6, 2 + 1e-6].
    """
    with no_grad():
        _, states = model.forward_tokens(Tensor(images[:max_samples]), return_states=True)
    report = []
    for b, st in enumerate(states):
        R = st.R_norm.data
        if R.ndim == 3:
            R = R[None]
        for head in range(R.shape[1]):
            lams = np.concatenate([laplacian_spectrum(r) for r in R[:, head]])
            lo, hi = float(lams.min()), float(lams.max())
            if lo < -SPECTRUM_TOL or hi > 2 + SPECTRUM_TOL:
                raise ContractError(f"block {b} head {head}: eigenvalue outside [0, 2] ({lo}, {hi})")
            report.append(dict(block=b, head=head, min_eig=lo, max_eig=hi,
                               mean_eig=float(lams.mean()),
                               low_pass_fraction=float(np.mean(1.0 - lams > 0))))
    return report


def load_model_from_checkpoint(checkpoint, config=None) -> tuple[Model, RunConfig]:
    """Rebuild a model from ``best.ckpt`` and its ``run.cfg`` (sidecar unless given)."""
    checkpoint = Path(checkpoint)
    run = load_run_config(config or checkpoint.with_name(CONFIG_NAME))
    model = build_model(run.model)
    load_into(model.named_parameters(), load_checkpoint(checkpoint))
    return model, run


def spectrum_report(checkpoint, batches: list[np.ndarray], config=None, max_samples: int = 4) -> list[dict]:
    model, _ = load_model_from_checkpoint(checkpoint, config)
    rows = []
    for i, images in enumerate(batches):
        for r in relation_spectra(model, images, max_samples):
            rows.append(dict(batch=i, **r))
    return rows
