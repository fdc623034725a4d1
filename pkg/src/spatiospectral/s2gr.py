"""The S2GR binary container (little-endian).

Layout::

    magic  b"S2GR"
    u16    version (1)
    u32    graph count
    per graph:
        u64 n, u64 m, u32 flags, u32 feature_dim
        i64[n+1] indptr, i64[m] indices
        f64[m]            weights      (FLAG_WEIGHTS)
        f64[n*dim]        features     (FLAG_FEATURES, row-major)
        i64[n] | f64[n]   labels       (FLAG_LABELS; f64 with FLAG_FLOAT_LABELS)
        u32 len, bytes    JSON meta    (FLAG_META)
        EVD section                    (FLAG_EVD)
    u32 len, bytes        dataset JSON (task metadata and splits)

EVD section: u32 k_requested, u32 k_eff, u8 kind code, u8 complex flag,
f64 q, f64[k_eff] eigenvalues, eigenvectors as f64[n*k_eff] (row-major) or
as interleaved (re, im) pairs f64[2*n*k_eff] when complex.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .datasets import LabeledDataset
from .eigensolver import PartialEVD
from .errors import FormatError
from .graph import Graph, symmetrize

MAGIC = b"S2GR"
VERSION = 1

FLAG_DIRECTED = 1
FLAG_WEIGHTS = 2
FLAG_FEATURES = 4
FLAG_LABELS = 8
FLAG_FLOAT_LABELS = 16
FLAG_EVD = 32
FLAG_META = 64

KIND_CODES = {"sym": 0, "rw": 1, "unnormalized": 2, "magnetic": 3, "matrix": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o)}")


def _dump_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, default=_json_default, separators=(",", ":")).encode()


def _write_arr(buf, arr, dtype):
    buf.write(np.ascontiguousarray(arr, dtype=np.dtype(dtype).newbyteorder("<")).tobytes())


def _write_graph(buf, g: Graph, evd: PartialEVD | None):
    flags = 0
    if g.directed:
        flags |= FLAG_DIRECTED
    if g.weights is not None:
        flags |= FLAG_WEIGHTS
    if g.node_features is not None:
        flags |= FLAG_FEATURES
    if g.labels is not None:
        flags |= FLAG_LABELS
        if np.issubdtype(g.labels.dtype, np.floating):
            flags |= FLAG_FLOAT_LABELS
    if g.meta:
        flags |= FLAG_META
    if evd is not None:
        flags |= FLAG_EVD
    buf.write(struct.pack("<QQII", g.n, g.m, flags, g.feature_dim))
    _write_arr(buf, g.indptr, "i8")
    _write_arr(buf, g.indices, "i8")
    if g.weights is not None:
        _write_arr(buf, g.weights, "f8")
    if g.node_features is not None:
        _write_arr(buf, g.node_features, "f8")
    if g.labels is not None:
        _write_arr(buf, g.labels, "f8" if flags & FLAG_FLOAT_LABELS else "i8")
    if g.meta:
        blob = _dump_json(g.meta)
        buf.write(struct.pack("<I", len(blob)))
        buf.write(blob)
    if evd is not None:
        cplx = evd.is_complex
        buf.write(struct.pack("<IIBBd", evd.k_requested, evd.k_eff, KIND_CODES.get(evd.kind, 4), int(cplx), evd.q))
        _write_arr(buf, evd.eigvals, "f8")
        if cplx:
            pairs = np.stack([evd.eigvecs.real, evd.eigvecs.imag], axis=-1)
            _write_arr(buf, pairs, "f8")
        else:
            _write_arr(buf, evd.eigvecs, "f8")


def dumps(ds: LabeledDataset | list, evds: list | None = None) -> bytes:
    """Serialize a dataset (or a plain list of graphs) to bytes."""
    if isinstance(ds, list):
        ds = LabeledDataset(ds)
    if evds is not None and len(evds) != len(ds.graphs):
        raise FormatError("need one decomposition per graph")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HI", VERSION, len(ds.graphs)))
    for i, g in enumerate(ds.graphs):
        _write_graph(buf, g, None if evds is None else evds[i])
    blob = _dump_json({"meta": ds.meta, "splits": ds.splits})
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    return buf.getvalue()


def write(path, ds: LabeledDataset | list, evds: list | None = None) -> None:
    Path(path).write_bytes(dumps(ds, evds))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise FormatError("unexpected end of S2GR data")
        out = self.data[self.pos:self.pos + size]
        self.pos += size
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, count: int, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).astype(np.dtype(dtype))


def _read_graph(r: _Reader):
    n, m, flags, dim = r.unpack("<QQII")
    if flags & ~127:
        raise FormatError(f"unknown flag bits {flags:#x}")
    indptr = r.array(n + 1, "i8")
    indices = r.array(m, "i8")
    weights = r.array(m, "f8") if flags & FLAG_WEIGHTS else None
    feats = r.array(n * dim, "f8").reshape(n, dim) if flags & FLAG_FEATURES else None
    labels = None
    if flags & FLAG_LABELS:
        labels = r.array(n, "f8" if flags & FLAG_FLOAT_LABELS else "i8")
    meta = {}
    if flags & FLAG_META:
        (size,) = r.unpack("<I")
        meta = json.loads(r.take(size))
    try:
        g = Graph(int(n), indptr, indices, weights, bool(flags & FLAG_DIRECTED), feats, labels, meta)
    except Exception as exc:
        raise FormatError(f"invalid graph record: {exc}") from exc
    evd = None
    if flags & FLAG_EVD:
        k_req, k_eff, code, cplx, q = r.unpack("<IIBBd")
        vals = r.array(k_eff, "f8")
        if cplx:
            pairs = r.array(2 * n * k_eff, "f8").reshape(n, k_eff, 2)
            vecs = pairs[..., 0] + 1j * pairs[..., 1]
        else:
            vecs = r.array(n * k_eff, "f8").reshape(n, k_eff)
        kind = KIND_NAMES.get(code, "matrix")
        analysis = None
        if kind == "rw":
            deg = symmetrize(g).degrees()
            analysis = (vecs * deg[:, None]).conj().T
        evd = PartialEVD(vals, vecs, int(k_req), int(k_eff), np.zeros(k_eff), kind, float(q), analysis)
    return g, evd


def loads(data: bytes) -> tuple[LabeledDataset, list | None]:
    """Parse bytes into a dataset and its decompositions (None if absent)."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError("not an S2GR container (bad magic)")
    version, count = r.unpack("<HI")
    if version != VERSION:
        raise FormatError(f"unsupported S2GR version {version}")
    graphs, evds = [], []
    for _ in range(count):
        g, e = _read_graph(r)
        graphs.append(g)
        evds.append(e)
    (size,) = r.unpack("<I")
    info = json.loads(r.take(size))
    if r.pos != len(data):
        raise FormatError("trailing bytes after S2GR data")
    splits = {k: list(v) for k, v in info.get("splits", {}).items()}
    ds = LabeledDataset(graphs, splits, info.get("meta", {}))
    return ds, (evds if any(e is not None for e in evds) else None)


def read(path) -> tuple[LabeledDataset, list | None]:
    return loads(Path(path).read_bytes())
