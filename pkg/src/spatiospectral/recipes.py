"""Named experiment recipes that regenerate the CSV behind each check.

Every recipe returns its rows (a list of dicts with a fixed column order)
and, given an output directory, writes ``<name>.csv`` with floats printed
to 17 significant digits.  Hyperparameters live in the flat config texts
below so the chosen values are recorded next to the code that uses them.
"""
from __future__ import annotations

import csv
import inspect
import os
import time
import timeit
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import analysis, datasets
from .autodiff import Tensor, spmm
from .config import ExperimentConfig, parse_config
from .eigensolver import decompose, partial_evd
from .errors import UnknownRecipe
from .graph import Graph, build_laplacian, clique_path, path
from .models import ModelConfig, graph_evd
from .posenc import PEConfig, compute_pe
from .spatial import GCNParams, gcn_forward, gcn_operator
from .train import evaluate, predict, prepare, train


def max_workers() -> int:
    """Parallel runs allowed by ``S2_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("S2_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn: Callable, items: Sequence) -> list:
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, items))


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    return str(v)


def write_csv_stream(fh, rows: list[dict], columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])


def write_csv(path, rows: list[dict], columns: Sequence[str] | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        write_csv_stream(fh, rows, columns)
    return path


# analysis experiments -------------------------------------------------------------

APPROX_COLUMNS = ("target", "method", "degree", "grid_error", "op_error")
ELECTRO_COLUMNS = ("lam", "g_inf", "inv_lam", "abs_err", "sigma", "g_sigma", "dg_sigma", "bound")
RINGING_COLUMNS = ("node", "signal", "plain", "windowed")
SENSITIVITY_COLUMNS = ("graph", "u", "v", "distance", "layers", "gcn", "spectral", "closed_form")

APPROX_DEGREES = tuple(range(1, 65))


def approx_rows(degrees: Sequence[int] = APPROX_DEGREES, lam_cut: float = 0.3) -> list[dict]:
    rows = []
    for name, target in (("poly_jump", analysis.PolyPlusJump()), ("power_kink", analysis.PowerKink())):
        reps = analysis.approximation_sweep(target, degrees, lam_cut)
        for method, rep in reps.items():
            for p, ge, oe in zip(rep.degrees, rep.grid_errors, rep.op_errors):
                rows.append({"target": name, "method": method, "degree": p, "grid_error": ge, "op_error": oe})
    return rows


def electro_rows(num: int = 200, sigma: float = 3.0) -> list[dict]:
    lam = np.linspace(0.05, 2.0, num)
    g_inf = analysis.electrostatic_filter(lam)
    g_sig = analysis.electrostatic_filter(lam, sigma)
    dg = analysis.electrostatic_derivative(lam, sigma)
    return [{"lam": l, "g_inf": a, "inv_lam": 1 / l, "abs_err": abs(a - 1 / l), "sigma": sigma,
             "g_sigma": b, "dg_sigma": d, "bound": 1 / l ** 2}
            for l, a, b, d in zip(lam, g_inf, g_sig, dg)]


def ringing_rows(n: int = 100, cutoff_k: int = 25) -> list[dict]:
    res = analysis.ringing_demo(n, cutoff_k)
    return [{"node": i, "signal": s, "plain": p, "windowed": w}
            for i, (s, p, w) in enumerate(zip(res.signal, res.plain, res.windowed))]


def _linear_spectral_model(evd, K: float, layers: int):
    """ℓ indicator-filter layers V diag(1_{λ=0}) Vᵀ H W with W = K·I."""
    v0 = evd.eigvecs[:, :1]
    proj = v0 @ v0.T

    def model(x):
        for _ in range(layers):
            x = spmm(proj, x) * K
        return x

    return model


def sensitivity_rows(layers: int = 3, d: int = 4, K: float = 1.0) -> list[dict]:
    """Jacobian L1 sensitivity of a node pair versus distance.

    gcn: ℓ linear GCN layers with W = K·I; spectral: ℓ indicator-filter
    layers (the virtual-node model) with W = K·I; closed_form: the
    K^ℓ √(d_u d_v) d / (2|E|) expression for the latter.
    """
    rows = []
    for name, g in (("path30", path(30)), ("clique_path", clique_path(10, 20))):
        evd = decompose(build_laplacian(g, "sym"), 1)
        op = gcn_operator(g)
        w = GCNParams(Tensor(K * np.eye(d)), Tensor(np.zeros(d)))
        h0 = np.random.default_rng(0).normal(size=(g.n, d))

        def gcn_model(x):
            for _ in range(layers):
                x = gcn_forward(x, op, w, activation=None)
            return x

        spec_model = _linear_spectral_model(evd, K, layers)
        dist = datasets.bfs_distances(g, 0)
        for v in range(0, g.n, 3):
            rows.append({"graph": name, "u": 0, "v": v, "distance": int(dist[v]), "layers": layers,
                         "gcn": analysis.jacobian_sensitivity(gcn_model, h0, 0, v),
                         "spectral": analysis.jacobian_sensitivity(spec_model, h0, 0, v),
                         "closed_form": analysis.virtual_node_sensitivity(g, 0, v, d, K, layers)})
    return rows


ANALYSES = {
    "approx": (approx_rows, APPROX_COLUMNS),
    "electro": (electro_rows, ELECTRO_COLUMNS),
    "ringing": (ringing_rows, RINGING_COLUMNS),
    "sensitivity": (sensitivity_rows, SENSITIVITY_COLUMNS),
}


# training experiments ---------------------------------------------------------------

OVERSQUASH_SPECTRAL = """
data.task = oversquash
model.layers = spectral
model.k = 8
model.width = 32
model.transform = narccos
model.lam_cut = 10
model.window = tukey
model.blank_token = 0
model.spectral_residual = false
model.norm = rms
schedule.epochs = 30
schedule.warmup = 2
schedule.batch_size = 25
optim.lr = 0.01
optim.weight_decay = 0.0001
"""

OVERSQUASH_GCN = """
data.task = oversquash
model.layers = gcn,gcn,gcn,gcn,gcn
model.k = 0
model.width = 32
model.blank_token = 0
schedule.epochs = 30
schedule.warmup = 2
schedule.batch_size = 25
optim.lr = 0.01
optim.weight_decay = 0.0001
"""

LRCLUSTER = """
data.task = lr_cluster
model.layers = gcn,gcn,gcn,gcn,spectral
model.width = 64
model.lam_cut = 2.0
model.window = tukey
model.blank_token = 0
model.branch_norm = rms
schedule.epochs = 12
schedule.warmup = 1
schedule.batch_size = 10
optim.lr = 0.0003
optim.weight_decay = 0.0001
"""

LRCLUSTER_PAPER = """
data.task = lr_cluster
model.layers = gcn,gcn,gcn,gcn,spectral
model.width = 128
model.k = 10
model.lam_cut = 0.05
model.window = tukey
model.blank_token = 0
model.branch_norm = rms
schedule.epochs = 50
schedule.warmup = 5
schedule.batch_size = 50
optim.lr = 0.003
optim.weight_decay = 0.0001
"""

RECALL = """
data.task = assoc_recall
model.layers = dirgcn,dirgcn,spectral
model.k = 10
model.width = 96
model.laplacian = magnetic
model.q = 0.25
model.q_scaled = true
model.transform = narccos
model.lam_cut = 10
model.window = exp
model.spectral_mlp = false
model.norm = rms
schedule.epochs = 30
schedule.warmup = 1
schedule.batch_size = 20
optim.lr = 0.003
optim.weight_decay = 0.01
"""

OVERFIT = """
data.task = lr_cluster
model.layers = gcn,gcn,gcn,gcn,spectral
model.k = 16
model.width = 128
model.pe = true
model.blank_token = 0
model.branch_norm = rms
schedule.epochs = 200
schedule.warmup = 5
schedule.batch_size = 2
optim.lr = 0.01
optim.weight_decay = 0.0
"""

# published hyperparameters, applied by ``s2 train --paper-scale``
PAPER_OVERRIDES = {
    "lr_cluster": parse_config(LRCLUSTER_PAPER),
    "oversquash": parse_config("""
model.layers = spectral
model.width = 16
model.k = 20
model.lam_cut = 0.05
"""),
    "assoc_recall": parse_config("""
model.layers = gcn,spectral,gcn,spectral,gcn,spectral
model.width = 224
model.k = 10
model.laplacian = magnetic
model.transform = narccos
model.lam_cut = 10
model.window = exp
model.spectral_mlp = true
schedule.epochs = 200
"""),
}


def recipe_config(text: str, **overrides) -> ExperimentConfig:
    flat = parse_config(text)
    flat.update(overrides)
    return ExperimentConfig.from_flat(flat, check_files=False)


def _per_size_accuracy(model, prep, idx) -> dict:
    out, target = predict(model, prep, idx)
    sizes = np.array([prep.dataset.graphs[i].n for i in idx])
    correct = out.argmax(axis=1) == target
    return {int(n): float(correct[sizes == n].mean()) for n in np.unique(sizes)}


def oversquash_experiment(seed: int = 0, epochs: int | None = None) -> dict:
    """Spectral vs 5-layer GCN on clique-path graphs; returns test accuracies and per-size rows."""
    ds = datasets.gen_oversquash(seed=seed)
    result = {"rows": []}
    for name, text in (("spectral", OVERSQUASH_SPECTRAL), ("gcn5", OVERSQUASH_GCN)):
        over = {"train.seed": seed}
        if epochs is not None:
            over["schedule.epochs"] = epochs
        cfg = recipe_config(text, **over)
        report, model = train(cfg, ds)
        result[name] = report.test["accuracy"]
        prep = prepare(ds, model.cfg)
        for n, acc in _per_size_accuracy(model, prep, ds.splits["test"]).items():
            c = min(n // 2, 15)
            result["rows"].append({"model": name, "n": n, "distance": n - c, "accuracy": acc})
        result[f"{name}_seconds"] = report.seconds
    return result


def lrcluster_data(scale: float = 0.1, seed: int = 0, k_max: int = 6):
    """The LR-CLUSTER splits at ``scale`` of 10k/1k/1k with one k_max decomposition per graph."""
    n_train, n_val, n_test = (max(1, int(round(s * scale))) for s in datasets.LR_CLUSTER_SPLITS)
    total = n_train + n_val + n_test
    ds = datasets.gen_lr_cluster(total, seed, (n_train / total, n_val / total, n_test / total))
    mcfg = ModelConfig(k=k_max, layers=("spectral",))
    evds = [graph_evd(g, mcfg) for g in ds.graphs]
    return ds, evds


def lrcluster_k_sweep(ks: Sequence[int] = (0, 1, 6), scale: float = 0.1, seed: int = 0,
                      epochs: int | None = None, paper_scale: bool = False, data=None) -> list[dict]:
    """Weighted test accuracy per k; k = 0 leaves only the message-passing layers."""
    text = LRCLUSTER_PAPER if paper_scale else LRCLUSTER
    k_max = max(ks)
    ds, evds = data if data is not None else lrcluster_data(scale, seed, k_max)

    def run(k):
        over = {"model.k": k, "train.seed": seed}
        if epochs is not None:
            over["schedule.epochs"] = epochs
        cfg = recipe_config(text, **over)
        stored = [e.truncate(k) for e in evds] if k > 0 else None
        report, _ = train(cfg, ds, stored)
        t = report.test
        return {"k": k, "weighted_accuracy": t["weighted_accuracy"], "accuracy": t["accuracy"],
                "val_loss": min(report.val_loss) if report.val_loss else float("nan"),
                "best_epoch": report.best_epoch, "seconds": report.seconds}

    return _map(run, list(ks))


def assoc_recall_experiment(train_count: int = 5000, seed: int = 0, epochs: int | None = None,
                            ood_count: int = 500, variants=("directed", "undirected")) -> list[dict]:
    """Accuracy in distribution (lengths 20-200) and at lengths 200-400."""
    total = int(round(train_count / 0.8))
    ds = datasets.gen_assoc_recall(total, (20, 200), 10, seed)
    ood = datasets.gen_assoc_recall(ood_count, (200, 400), 10, seed + 10 ** 7, fractions=(0.0, 0.0, 1.0))

    def run(variant):
        over = {"train.seed": seed, "model.undirected": variant == "undirected"}
        if epochs is not None:
            over["schedule.epochs"] = epochs
        cfg = recipe_config(RECALL, **over)
        report, model = train(cfg, ds)
        ood_rep = evaluate((model, ds.task), ood, "test")
        return {"variant": variant, "id_accuracy": report.test["accuracy"],
                "ood_accuracy": ood_rep.metrics["test"]["accuracy"],
                "best_epoch": report.best_epoch, "seconds": report.seconds}

    return _map(run, list(variants))


def overfit_experiment(seed: int = 0, epochs: int = 200) -> dict:
    ds = datasets.gen_lr_cluster(10, seed, fractions=(1.0, 0.0, 0.0))
    cfg = recipe_config(OVERFIT, **{"train.seed": seed, "schedule.epochs": epochs})
    report, _ = train(cfg, ds)
    return {"train_weighted_accuracy": report.metrics["train"]["weighted_accuracy"],
            "epochs": epochs, "seconds": report.seconds}


def chord_graph(m: int, seed: int = 0) -> Graph:
    """Connected graph with exactly m undirected edges: a cycle on n = m/4
    nodes plus random chords (average degree 8, a wide spectral gap)."""
    n = max(8, m // 4)
    rng = np.random.default_rng(seed)
    ring = np.stack([np.arange(n), (np.arange(n) + 1) % n], axis=1)
    edges = {tuple(sorted(e)) for e in ring.tolist()}
    while len(edges) < m:
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((min(u, v), max(u, v)))
    return Graph.from_edges(n, np.array(sorted(edges)))


def pe_scaling(ms: Sequence[int] = (3_000, 10_000, 30_000, 100_000, 300_000), k: int = 16,
               repeats: int = 3, seed: int = 0) -> dict:
    """Wall time of the encoding (decomposition excluded) against edge count."""
    rows = []
    for m in ms:
        g = chord_graph(int(m), seed)
        evd = partial_evd(build_laplacian(g, "sym"), k)
        cfg = PEConfig(k=k)
        compute_pe(evd, g, cfg)
        timer = timeit.Timer(lambda: compute_pe(evd, g, cfg))
        number, _ = timer.autorange()
        best = min(timer.repeat(repeat=repeats, number=number)) / number
        rows.append({"m": int(m), "n": g.n, "seconds": best})
    x = np.log([r["m"] for r in rows])
    y = np.log([r["seconds"] for r in rows])
    return {"rows": rows, "exponent": float(np.polyfit(x, y, 1)[0])}


def _oversquash_rows(seed: int = 0, epochs: int | None = None) -> list[dict]:
    return oversquash_experiment(seed, epochs)["rows"]


def _overfit_rows(seed: int = 0, epochs: int = 200) -> list[dict]:
    return [overfit_experiment(seed, epochs)]


def _pe_rows(seed: int = 0) -> list[dict]:
    res = pe_scaling(seed=seed)
    return [dict(r, exponent=res["exponent"]) for r in res["rows"]]


RECIPES = {
    "approx": (approx_rows, APPROX_COLUMNS),
    "electro": (electro_rows, ELECTRO_COLUMNS),
    "ringing": (ringing_rows, RINGING_COLUMNS),
    "sensitivity": (sensitivity_rows, SENSITIVITY_COLUMNS),
    "oversquash": (_oversquash_rows, ("model", "n", "distance", "accuracy")),
    "lrcluster-k-sweep": (lrcluster_k_sweep,
                          ("k", "weighted_accuracy", "accuracy", "val_loss", "best_epoch", "seconds")),
    "assoc-recall": (assoc_recall_experiment, ("variant", "id_accuracy", "ood_accuracy", "best_epoch", "seconds")),
    "overfit": (_overfit_rows, ("train_weighted_accuracy", "epochs", "seconds")),
    "pe-scaling": (_pe_rows, ("m", "n", "seconds", "exponent")),
}


def run_recipe(name: str, out_dir=None, **kwargs) -> tuple[list[dict], Path | None]:
    """Run a named recipe; writes ``<out_dir>/<name>.csv`` when a directory is given.

    Raises:
        UnknownRecipe: for names not in ``RECIPES``.
    """
    if name not in RECIPES:
        raise UnknownRecipe(f"unknown recipe {name!r}; available: {', '.join(sorted(RECIPES))}")
    fn, columns = RECIPES[name]
    accepted = inspect.signature(fn).parameters
    rows = fn(**{k: v for k, v in kwargs.items() if k in accepted})
    path = write_csv(Path(out_dir) / f"{name}.csv", rows, columns) if out_dir is not None else None
    return rows, path
