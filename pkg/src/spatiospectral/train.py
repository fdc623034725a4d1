"""Training and evaluation driver: losses, metrics, early stopping and
checkpoints.

Runs are deterministic for a fixed seed: the only randomness is the
parameter initialization and the per-epoch shuffle, both drawn from
generators seeded by ``train.seed``.
"""
from __future__ import annotations

import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import s2gr
from .config import ExperimentConfig
from .datasets import DatasetSpec, LabeledDataset, generate
from .errors import ConfigError, NanLoss, TaskMismatch
from .models import Model, ModelConfig, build_model, forward, graph_evd, graph_pe, make_batch
from .optim import AdamWState, adamw_step, clip_grad_norm, cosine_warmup_lr

LOSS_BY_TASK = {
    "lr_cluster": "weighted_ce",
    "cluster_sbm": "weighted_ce",
    "tree_dist": "l2",
    "dag_dist": "l2",
    "assoc_recall": "ce",
    "oversquash": "ce",
}


def loss_kind(task: str) -> str:
    if task not in LOSS_BY_TASK:
        raise ConfigError(f"unknown task {task!r}")
    return LOSS_BY_TASK[task]


# metrics ---------------------------------------------------------------------


def class_weights(targets: np.ndarray, num_classes: int) -> np.ndarray:
    """(N - N_c) / N per class, the usual weighting for the clustering tasks."""
    counts = np.bincount(targets, minlength=num_classes).astype(np.float64)
    total = counts.sum()
    return (total - counts) / total if total else np.ones(num_classes)


def weighted_accuracy(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean per-class recall over the classes present in ``target``."""
    classes = np.unique(target)
    if classes.size == 0:
        return float("nan")
    return float(np.mean([np.mean(pred[target == c] == c) for c in classes]))


def accuracy(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(pred == target)) if len(target) else float("nan")


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(pred - target)))


def rmse(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def r2_score(pred: np.ndarray, target: np.ndarray) -> float:
    ss_res = np.sum((target - pred) ** 2)
    ss_tot = np.sum((target - target.mean()) ** 2)
    if ss_tot == 0:
        return 1.0 if ss_res == 0 else float("-inf")
    return float(1.0 - ss_res / ss_tot)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def numpy_loss(kind: str, out: np.ndarray, target: np.ndarray, num_classes: int = 0) -> float:
    if kind == "l2":
        return float(np.mean((out[:, 0] - target) ** 2))
    target = target.astype(np.int64)
    nll = -_log_softmax(out)[np.arange(len(target)), target]
    if kind == "weighted_ce":
        w = class_weights(target, num_classes)[target]
        return float((w * nll).sum() / w.sum())
    return float(nll.mean())


def score(kind: str, out: np.ndarray, target: np.ndarray, num_classes: int = 0) -> dict:
    """Loss plus the metrics that apply to the task kind."""
    res = {"loss": numpy_loss(kind, out, target, num_classes)}
    if kind == "l2":
        pred = out[:, 0]
        res.update(mae=mae(pred, target), rmse=rmse(pred, target), r2=r2_score(pred, target))
    else:
        pred = out.argmax(axis=1)
        t = target.astype(np.int64)
        res.update(accuracy=accuracy(pred, t), weighted_accuracy=weighted_accuracy(pred, t))
    return res


@dataclass
class MetricsReport:
    """Loss curves, the selected epoch and final metrics per split."""

    task: str
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def test(self) -> dict:
        return self.metrics.get("test", {})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# data ------------------------------------------------------------------------


@dataclass(eq=False)
class PreparedData:
    """A dataset with decompositions and encodings computed once per model setting."""

    dataset: LabeledDataset
    evds: list
    pes: list

    def subset(self, idx: Sequence[int]):
        return ([self.dataset.graphs[i] for i in idx], [self.evds[i] for i in idx],
                [self.pes[i] for i in idx])


def load_dataset(cfg: ExperimentConfig) -> tuple[LabeledDataset, list | None]:
    d = cfg.data
    if d.path:
        return s2gr.read(d.path)
    try:
        return generate(DatasetSpec(d.task, d.count, d.seed, d.scale)), None
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _evd_matches(evd, g, mcfg: ModelConfig) -> bool:
    if evd is None or evd.n != g.n:
        return False
    return evd.kind == mcfg.laplacian_kind and evd.k_requested == mcfg.k and evd.q == mcfg.potential(g.n)


def prepare(ds: LabeledDataset, mcfg: ModelConfig, stored_evds: list | None = None) -> PreparedData:
    """Decompose every graph once (reusing stored decompositions when they fit)."""
    evds, pes = [], []
    for i, g in enumerate(ds.graphs):
        e = None
        if mcfg.needs_evd:
            stored = stored_evds[i] if stored_evds is not None else None
            e = stored if (_evd_matches(stored, g, mcfg) and not mcfg.undirected) else graph_evd(g, mcfg)
        evds.append(e)
        pes.append(graph_pe(g, e, mcfg) if (mcfg.pe and e is not None) else None)
    return PreparedData(ds, evds, pes)


def resolve_model_config(mcfg: ModelConfig, ds: LabeledDataset) -> ModelConfig:
    """Fill the input vocabulary and output width from the dataset metadata."""
    task = ds.task
    kind = loss_kind(task)
    out_dim = 1 if kind == "l2" else ds.num_classes
    num_tokens = int(ds.meta.get("num_tokens", mcfg.num_tokens))
    return dataclasses.replace(mcfg, num_tokens=num_tokens, out_dim=out_dim)


def _batch(prep: PreparedData, idx, mcfg: ModelConfig):
    graphs, evds, pes = prep.subset(idx)
    return make_batch(graphs, mcfg, evds if mcfg.needs_evd else None, pes if mcfg.pe else None)


def predict(model: Model, prep: PreparedData, idx: Sequence[int], batch_size: int = 50):
    """Outputs and targets on the labeled nodes of the given graphs."""
    outs, targets = [], []
    with ad.no_grad():
        for start in range(0, len(idx), batch_size):
            b = _batch(prep, idx[start:start + batch_size], model.cfg)
            out = forward(model, b).data
            outs.append(out[b.mask])
            targets.append(b.labels[b.mask])
    if not outs:
        return np.zeros((0, model.cfg.out_dim)), np.zeros(0)
    return np.vstack(outs), np.concatenate(targets)


def evaluate_split(model: Model, prep: PreparedData, split: str, batch_size: int = 50) -> dict:
    ds = prep.dataset
    idx = ds.splits.get(split, [])
    if not idx:
        return {}
    out, target = predict(model, prep, idx, batch_size)
    return score(loss_kind(ds.task), out, target, ds.num_classes)


def _batch_loss(kind: str, out: ad.Tensor, b, num_classes: int) -> ad.Tensor:
    rows = np.flatnonzero(b.mask)
    picked = ad.index(out, rows)
    target = b.labels[rows]
    if kind == "l2":
        return ad.mse(ad.reshape(picked, (len(rows),)), target)
    target = target.astype(np.int64)
    weights = class_weights(target, num_classes) if kind == "weighted_ce" else None
    return ad.cross_entropy(picked, target, weights)


# training --------------------------------------------------------------------


def train(cfg: ExperimentConfig, dataset: LabeledDataset | None = None, evds: list | None = None,
          prepared: PreparedData | None = None, log=None) -> tuple[MetricsReport, Model]:
    """Train with AdamW and a warmup+cosine schedule; keep the best-validation weights.

    Raises:
        ConfigError: on an invalid configuration or dataset.
        NanLoss: when a training loss becomes non-finite.
    """
    t0 = time.perf_counter()
    if prepared is None:
        if dataset is None:
            dataset, evds = load_dataset(cfg)
    else:
        dataset = prepared.dataset
    kind = loss_kind(dataset.task)
    mcfg = resolve_model_config(cfg.model, dataset)
    if prepared is None:
        prepared = prepare(dataset, mcfg, evds)
    train_idx = list(dataset.splits.get("train", []))
    if not train_idx:
        raise ConfigError("dataset has no training split")
    val_split = "val" if dataset.splits.get("val") else "train"
    model = build_model(mcfg, cfg.train.seed)
    params = model.parameters()
    o = cfg.optim
    state = AdamWState(lr=o.lr, betas=tuple(o.betas), eps=o.eps, weight_decay=o.weight_decay)
    s = cfg.schedule
    steps_per_epoch = -(-len(train_idx) // s.batch_size)
    total = s.epochs * steps_per_epoch
    warm = s.warmup * steps_per_epoch
    rng = np.random.default_rng(cfg.train.seed)
    report = MetricsReport(dataset.task)

    best_val = evaluate_split(model, prepared, val_split, s.batch_size)["loss"]
    best_state = model.state_dict()
    report.best_epoch = 0
    stale = 0
    step = 0
    for epoch in range(1, s.epochs + 1):
        order = rng.permutation(len(train_idx))
        losses, weights = [], []
        for start in range(0, len(order), s.batch_size):
            idx = [train_idx[i] for i in order[start:start + s.batch_size]]
            b = _batch(prepared, idx, mcfg)
            if not b.mask.any():
                continue
            loss = _batch_loss(kind, forward(model, b), b, dataset.num_classes)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NanLoss(f"non-finite loss {value} at epoch {epoch}, step {step} "
                              f"(lr {cosine_warmup_lr(step + 1, total, warm, o.lr):.3g})")
            ad.zero_grad(params)
            grads, _ = clip_grad_norm(ad.backward(loss, params), o.clip)
            step += 1
            adamw_step(state, params, grads, lr=cosine_warmup_lr(step, total, warm, o.lr))
            losses.append(value)
            weights.append(int(b.mask.sum()))
        train_loss = float(np.average(losses, weights=weights)) if losses else float("nan")
        val_loss = evaluate_split(model, prepared, val_split, s.batch_size)["loss"]
        report.train_loss.append(train_loss)
        report.val_loss.append(val_loss)
        if not np.isfinite(val_loss):
            raise NanLoss(f"non-finite validation loss at epoch {epoch}")
        if val_loss < best_val:
            best_val, best_state, report.best_epoch, stale = val_loss, model.state_dict(), epoch, 0
        else:
            stale += 1
        if log is not None and cfg.train.log_every and epoch % cfg.train.log_every == 0:
            print(f"epoch {epoch} train {train_loss:.5f} val {val_loss:.5f}", file=log)
        if s.patience and stale >= s.patience:
            break
    model.load_state_dict(best_state)
    for split in ("train", "val", "test"):
        m = evaluate_split(model, prepared, split, s.batch_size)
        if m:
            report.metrics[split] = m
    report.seconds = time.perf_counter() - t0
    if cfg.train.checkpoint:
        save_checkpoint(cfg.train.checkpoint, model, cfg, dataset.task)
    return report, model


# checkpoints -------------------------------------------------------------------


def save_checkpoint(path, model: Model, cfg: ExperimentConfig, task: str) -> None:
    flat = cfg.to_flat()
    flat.update({f"model.{k}": v for k, v in dataclasses.asdict(model.cfg).items()})
    flat["model.layers"] = ",".join(model.cfg.layers)
    meta = json.dumps({"task": task, "config": flat}, sort_keys=True)
    arrays = {f"p:{k}": v for k, v in model.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(meta.encode(), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> tuple[Model, ExperimentConfig, str]:
    try:
        with np.load(path) as z:
            meta = json.loads(bytes(z["__meta__"]).decode())
            state = {k[2:]: z[k] for k in z.files if k.startswith("p:")}
    except (OSError, KeyError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    flat = {k: tuple(v) if isinstance(v, list) else v for k, v in meta["config"].items()}
    cfg = ExperimentConfig.from_flat(flat, check_files=False)
    model = build_model(cfg.model, cfg.train.seed)
    model.load_state_dict(state)
    return model, cfg, meta["task"]


def evaluate(checkpoint, dataset: LabeledDataset, split: str = "test", evds: list | None = None,
             batch_size: int = 50) -> MetricsReport:
    """Metrics of a stored model on one split; parameters are not modified.

    Raises:
        TaskMismatch: if the dataset's task differs from the checkpoint's.
    """
    if isinstance(checkpoint, (str, Path)):
        model, _, task = load_checkpoint(checkpoint)
    else:
        model, task = checkpoint
    if dataset.task != task:
        raise TaskMismatch(f"checkpoint was trained on {task!r}, dataset is {dataset.task!r}")
    if split not in dataset.splits:
        raise ConfigError(f"dataset has no split {split!r}")
    prep = prepare(dataset, model.cfg, evds)
    report = MetricsReport(task)
    report.metrics[split] = evaluate_split(model, prep, split, batch_size)
    return report


def print_report(report: MetricsReport, stream=None) -> None:
    stream = stream or sys.stdout
    for split, m in report.metrics.items():
        parts = " ".join(f"{k}={v:.17g}" for k, v in sorted(m.items()))
        print(f"{split} {parts}", file=stream)
