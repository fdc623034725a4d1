"""Command line driver: ``s2 gen|evd|train|eval|analyze|recipe``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
``S2_THREADS`` caps the BLAS threads and the number of parallel runs.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _cap_threads() -> None:
    # must run before numpy is first imported to take effect
    threads = os.environ.get("S2_THREADS")
    if threads:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, threads)


def _overrides(pairs):
    from .config import parse_config

    return parse_config("\n".join(pairs or []))


def cmd_gen(args) -> int:
    import numpy as np

    from . import s2gr
    from .datasets import DatasetSpec, LabeledDataset, generate
    from .models import ModelConfig, graph_evd, graph_pe

    ds = generate(DatasetSpec(args.task, args.count, args.seed, args.scale))
    if args.with_pe:
        mcfg = ModelConfig(k=args.pe_k, laplacian=args.laplacian, q=args.q, pe=True)
        graphs = []
        for g in ds.graphs:
            pe = graph_pe(g, graph_evd(g, mcfg), mcfg)
            x = pe if g.node_features is None else np.hstack([g.node_features, pe])
            meta = dict(g.meta, pe_columns=int(pe.shape[1]))
            graphs.append(g.replace(node_features=x, meta=meta))
        ds = LabeledDataset(graphs, ds.splits, ds.meta)
    s2gr.write(args.out, ds)
    print(f"wrote {len(ds.graphs)} graphs to {args.out}")
    return EXIT_OK


def cmd_evd(args) -> int:
    from . import s2gr
    from .eigensolver import LanczosConfig, decompose
    from .graph import build_laplacian

    ds, _ = s2gr.read(args.input)
    lanczos = LanczosConfig(tol=args.tol)
    evds = []
    for g in ds.graphs:
        lap = build_laplacian(g, args.laplacian, args.q)
        evds.append(decompose(lap, args.k, lanczos))
    out = args.out or args.input
    s2gr.write(out, ds, evds)
    print(f"decomposed {len(evds)} graphs (k={args.k}, {args.laplacian}) into {out}")
    return EXIT_OK


def _load_config(args):
    from .config import ExperimentConfig, parse_config
    from .errors import ConfigError
    from .recipes import PAPER_OVERRIDES

    try:
        with open(args.config) as fh:
            flat = parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    if args.paper_scale:
        flat.update(PAPER_OVERRIDES.get(flat.get("data.task", ""), {}))
    flat.update(_overrides(args.set))
    if args.data:
        flat["data.path"] = args.data
    if args.checkpoint:
        flat["train.checkpoint"] = args.checkpoint
    return ExperimentConfig.from_flat(flat)


def cmd_train(args) -> int:
    from .train import print_report, train

    cfg = _load_config(args)
    report, _ = train(cfg, log=sys.stderr)
    print_report(report)
    if args.metrics:
        with open(args.metrics, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    return EXIT_OK


def cmd_eval(args) -> int:
    from . import s2gr
    from .train import evaluate, print_report

    ds, evds = s2gr.read(args.data)
    report = evaluate(args.checkpoint, ds, args.split, evds=evds)
    print_report(report)
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .recipes import ANALYSES, write_csv, write_csv_stream

    fn, columns = ANALYSES[args.experiment]
    rows = fn()
    if args.out:
        write_csv(args.out, rows, columns)
    else:
        write_csv_stream(sys.stdout, rows, columns)
    return EXIT_OK


def cmd_recipe(args) -> int:
    from .recipes import run_recipe

    kwargs = {}
    if args.paper_scale:
        kwargs["paper_scale"] = True
    if args.seed is not None:
        kwargs["seed"] = args.seed
    rows, path = run_recipe(args.name, args.out_dir, **kwargs)
    print(f"{args.name}: {len(rows)} rows" + (f" -> {path}" if path else ""))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="s2", description="Spatio-spectral graph network toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a dataset into an S2GR file")
    g.add_argument("--task", required=True,
                   choices=["lr_cluster", "cluster_sbm", "tree_dist", "dag_dist", "assoc_recall", "oversquash"])
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--scale", type=float, default=1.0, help="divides --count")
    g.add_argument("--with-pe", action="store_true", help="append encodings as feature columns")
    g.add_argument("--pe-k", type=int, default=8)
    g.add_argument("--laplacian", default="sym", choices=["sym", "magnetic"])
    g.add_argument("--q", type=float, default=0.0)
    g.add_argument("--out", required=True)
    g.set_defaults(fn=cmd_gen)

    e = sub.add_parser("evd", help="append partial eigendecompositions to an S2GR file")
    e.add_argument("input")
    e.add_argument("--k", type=int, required=True)
    e.add_argument("--laplacian", default="sym", choices=["sym", "rw", "unnormalized", "magnetic"])
    e.add_argument("--q", type=float, default=0.0)
    e.add_argument("--tol", type=float, default=1e-10)
    e.add_argument("--out", help="write here instead of rewriting the input")
    e.set_defaults(fn=cmd_evd)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("config")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--data", help="S2GR dataset (sets data.path)")
    t.add_argument("--checkpoint", help="where to save the best model")
    t.add_argument("--metrics", help="write the report as JSON")
    t.add_argument("--paper-scale", action="store_true", help="use the published hyperparameters")
    t.set_defaults(fn=cmd_train)

    v = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    v.add_argument("checkpoint")
    v.add_argument("data")
    v.add_argument("--split", default="test")
    v.set_defaults(fn=cmd_eval)

    a = sub.add_parser("analyze", help="emit analysis data as CSV")
    a.add_argument("--experiment", required=True, choices=["approx", "electro", "ringing", "sensitivity"])
    a.add_argument("--out", help="CSV path (default stdout)")
    a.set_defaults(fn=cmd_analyze)

    r = sub.add_parser("recipe", help="run a named experiment recipe")
    r.add_argument("name")
    r.add_argument("--out-dir", default=".")
    r.add_argument("--seed", type=int)
    r.add_argument("--paper-scale", action="store_true")
    r.set_defaults(fn=cmd_recipe)
    return p


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    from .errors import ConfigError, EigenError, FormatError, GraphError, NanLoss, S2Error

    try:
        return args.fn(args)
    except BrokenPipeError:
        return EXIT_OK
    except (NanLoss, EigenError, FloatingPointError) as exc:
        print(f"s2: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, GraphError, S2Error, OSError, ValueError) as exc:
        print(f"s2: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
