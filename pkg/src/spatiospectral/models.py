"""Model assembly: token embedding, a stack of spatial / spectral layers and
a node-level decoder, plus the batch preparation those layers need.

A model is described by a ``ModelConfig`` whose ``layers`` tuple names the
layer types in order:

    gcn       residual GCN layer on the symmetrized graph
    dirgcn    residual directed GCN layer (separate in/out aggregation)
    spectral  residual spectral filter layer
    s2        additive block: GCN branch + spectral branch + residual
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from . import autodiff as ad
from .autodiff import Tensor
from .eigensolver import LanczosConfig, PartialEVD, decompose
from .errors import ConfigError, ShapeMismatch
from .graph import Graph, batch, build_laplacian, symmetrize
from .optim import uniform_init
from .posenc import PEConfig, compute_pe
from .spatial import (dir_gcn_forward, dir_operators, gcn_forward, gcn_operator, init_dir_gcn,
                      init_gcn)
from .spectral import (ComplexMix, SpectralBasis, init_filter, init_gating, init_spectral_mlp,
                       spectral_forward)

LAYER_TYPES = ("gcn", "dirgcn", "spectral", "s2")
NORMS = ("none", "rms")


@dataclass
class ModelConfig:
    """Topology and spectral settings of a node-level model."""

    num_tokens: int = 2
    out_dim: int = 2
    width: int = 64
    layers: tuple = ("gcn", "gcn", "gcn", "gcn", "spectral")
    k: int = 16
    laplacian: str = "sym"
    q: float = 0.0
    q_scaled: bool = False
    lam_cut: float = 2.0
    window: str = "tukey"
    taper: float = 0.2
    transform: str = "none"
    smearing: int = 32
    filters: int = 0
    gating: bool = True
    spectral_mlp: bool = False
    pe: bool = False
    activation: str = "gelu"
    norm: str = "none"
    spectral_residual: bool = True
    branch_norm: str = "none"
    decoder_layers: int = 2
    blank_token: int = -1
    undirected: bool = False

    def __post_init__(self):
        if isinstance(self.layers, str):
            self.layers = tuple(s.strip() for s in self.layers.split(",") if s.strip())
        self.layers = tuple(self.layers)
        for name in self.layers:
            if name not in LAYER_TYPES:
                raise ConfigError(f"unknown layer type {name!r}; choose from {LAYER_TYPES}")
        if self.width < 1 or self.out_dim < 1 or self.num_tokens < 1:
            raise ConfigError("width, out_dim and num_tokens must be positive")
        if self.k < 0:
            raise ConfigError("k must be nonnegative")
        if self.norm not in NORMS or self.branch_norm not in NORMS:
            raise ConfigError(f"unknown norm {self.norm!r} / {self.branch_norm!r}")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.filters < 0 or self.filters > self.width:
            raise ConfigError("filters must lie in [0, width] (0 means one per channel)")
        if self.decoder_layers < 1:
            raise ConfigError("decoder needs at least one layer")
        if self.uses_spectral and self.lam_cut <= 0:
            raise ConfigError("lam_cut must be positive")

    @property
    def uses_spectral(self) -> bool:
        return any(name in ("spectral", "s2") for name in self.layers)

    @property
    def needs_evd(self) -> bool:
        return (self.uses_spectral or self.pe) and self.k > 0

    @property
    def laplacian_kind(self) -> str:
        return "sym" if self.undirected and self.laplacian == "magnetic" else self.laplacian

    def potential(self, n: int) -> float:
        """Magnetic potential for an n-node graph (q/n when ``q_scaled``)."""
        if self.laplacian_kind != "magnetic":
            return 0.0
        return self.q / n if self.q_scaled else self.q

    @property
    def pe_dim(self) -> int:
        return 2 * self.k if self.laplacian_kind == "magnetic" else self.k


# parameters ------------------------------------------------------------------


@dataclass(eq=False)
class Model:
    """Parameters by name plus the layer objects built from them."""

    cfg: ModelConfig
    params: dict
    layers: list = field(default_factory=list)

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise ShapeMismatch(f"checkpoint lacks parameters {sorted(missing)}")
        for k, v in self.params.items():
            if state[k].shape != v.data.shape:
                raise ShapeMismatch(f"parameter {k}: {state[k].shape} != {v.data.shape}")
            v.data[...] = state[k]


def _register(params: dict, prefix: str, obj, names: Sequence[str]):
    for name in names:
        t = getattr(obj, name)
        if t is not None:
            params[f"{prefix}.{name}"] = t


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    rng = np.random.default_rng(seed)
    w = cfg.width
    params: dict = {}
    emb = ad.parameter(rng.normal(0.0, 1.0, size=(cfg.num_tokens, w)))
    params["embed"] = emb
    if cfg.pe:
        params["pe.weight"] = uniform_init(rng, max(cfg.pe_dim, 1), (cfg.pe_dim, w))
    layers = []
    cplx = cfg.laplacian_kind == "magnetic"
    for i, name in enumerate(cfg.layers):
        layer = {"type": name}
        if name in ("gcn", "s2"):
            layer["gcn"] = init_gcn(rng, w, w)
            _register(params, f"l{i}.gcn", layer["gcn"], ("weight", "bias"))
        if name == "dirgcn":
            layer["dirgcn"] = init_dir_gcn(rng, w, w)
            _register(params, f"l{i}.dirgcn", layer["dirgcn"], ("w_out", "w_in", "bias"))
        if name in ("spectral", "s2"):
            filt = init_filter(rng, w, cfg.filters or w, cfg.smearing, cfg.lam_cut, cfg.window,
                               transform=None if cfg.transform == "none" else cfg.transform,
                               taper=cfg.taper)
            layer["filter"] = filt
            params[f"l{i}.filter.weight"] = filt.weight
            if cfg.gating:
                layer["gating"] = init_gating(rng, w, "silu")
                _register(params, f"l{i}.gate", layer["gating"], ("weight", "bias"))
            if cfg.spectral_mlp:
                layer["mlp"] = init_spectral_mlp(rng, w)
                for j, (a, b) in enumerate(zip(layer["mlp"].weights, layer["mlp"].gate_weights)):
                    params[f"l{i}.smlp.w{j}"] = a
                    params[f"l{i}.smlp.k{j}"] = b
            if cplx:
                layer["mix"] = ComplexMix.init(w)
                _register(params, f"l{i}.mix", layer["mix"], ("w_re", "w_im"))
            layer["proj"] = uniform_init(rng, w, (w, w))
            params[f"l{i}.proj"] = layer["proj"]
        layers.append(layer)
    for j in range(cfg.decoder_layers):
        d_out = cfg.out_dim if j == cfg.decoder_layers - 1 else w
        params[f"dec{j}.weight"] = uniform_init(rng, w, (w, d_out))
        params[f"dec{j}.bias"] = ad.parameter(np.zeros(d_out))
    return Model(cfg, params, layers)


# batches ---------------------------------------------------------------------


@dataclass(eq=False)
class Batch:
    """Everything a forward pass over a set of graphs needs."""

    tokens: np.ndarray
    gcn: sp.csr_matrix | None
    dir_ops: tuple | None
    basis: SpectralBasis | None
    pe: np.ndarray | None
    labels: np.ndarray
    mask: np.ndarray
    graph_index: np.ndarray

    @property
    def n(self) -> int:
        return len(self.tokens)


def prepare_graph(g: Graph, cfg: ModelConfig) -> Graph:
    """Apply the forced-undirected switch."""
    return symmetrize(g) if cfg.undirected and g.directed else g


def graph_evd(g: Graph, cfg: ModelConfig, lanczos: LanczosConfig | None = None) -> PartialEVD | None:
    """Decomposition the model's spectral layers and encodings use."""
    if not cfg.needs_evd:
        return None
    g = prepare_graph(g, cfg)
    lap = build_laplacian(g, cfg.laplacian_kind, cfg.potential(g.n))
    return decompose(lap, cfg.k, lanczos)


def graph_pe(g: Graph, evd: PartialEVD, cfg: ModelConfig) -> np.ndarray:
    return compute_pe(evd, prepare_graph(g, cfg), PEConfig(k=cfg.k))


def make_batch(graphs: Sequence[Graph], cfg: ModelConfig, evds: Sequence | None = None,
               pes: Sequence | None = None) -> Batch:
    graphs = [prepare_graph(g, cfg) for g in graphs]
    bg = batch(graphs)
    tokens = np.concatenate([np.asarray(g.node_features[:, 0], dtype=np.int64) if g.node_features is not None
                             else np.zeros(g.n, dtype=np.int64) for g in graphs])
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.num_tokens):
        raise ShapeMismatch(f"token ids must lie in [0, {cfg.num_tokens})")
    labels = np.concatenate([g.labels if g.labels is not None else np.full(g.n, -1) for g in graphs])
    if np.issubdtype(labels.dtype, np.floating):
        mask = ~np.isnan(labels)
    else:
        mask = labels >= 0
    names = set(cfg.layers)
    gcn = gcn_operator(bg) if names & {"gcn", "s2"} else None
    dops = dir_operators(bg) if "dirgcn" in names else None
    basis = None
    if cfg.uses_spectral:
        if cfg.k > 0:
            if evds is None:
                evds = [graph_evd(g, cfg) for g in graphs]
            basis = SpectralBasis.from_evds(list(evds))
    pe = None
    if cfg.pe:
        if cfg.k == 0:
            pe = np.zeros((bg.n, 0))
        else:
            if pes is None:
                if evds is None:
                    evds = [graph_evd(g, cfg) for g in graphs]
                pes = [graph_pe(g, e, cfg) for g, e in zip(graphs, evds)]
            pe = np.vstack(list(pes))
    return Batch(tokens, gcn, dops, basis, pe, labels, mask, bg.node_graph_index())


# forward ---------------------------------------------------------------------


def rms_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    ms = ad.scale(ad.tsum(ad.square(x), axis=1, keepdims=True), 1.0 / x.shape[1])
    return x * ad.reciprocal(ad.sqrt(ms + eps))


def _spectral_branch(h: Tensor, layer: dict, b: Batch, act, branch_norm: str = "none") -> Tensor:
    if b.basis is None:
        return h * 0.0
    y = spectral_forward(h, b.basis, layer["filter"], layer.get("gating"), layer.get("mlp"),
                         mix=layer.get("mix"))
    if branch_norm == "rms":
        y = rms_norm(y)
    return act(y @ layer["proj"])


def forward(model: Model, b: Batch) -> Tensor:
    """Node-level outputs (n × out_dim)."""
    cfg = model.cfg
    act = ad.ACTIVATIONS[cfg.activation]
    h = ad.index(model.params["embed"], b.tokens)
    if cfg.blank_token >= 0:
        h = h * Tensor((b.tokens != cfg.blank_token).astype(np.float64)[:, None])
    if cfg.pe and b.pe is not None and b.pe.shape[1]:
        h = h + Tensor(b.pe) @ model.params["pe.weight"]
    for layer in model.layers:
        kind = layer["type"]
        if kind == "gcn":
            h = h + gcn_forward(h, b.gcn, layer["gcn"], cfg.activation)
        elif kind == "dirgcn":
            h = h + dir_gcn_forward(h, b.dir_ops, layer["dirgcn"], cfg.activation)
        elif kind == "spectral":
            y = _spectral_branch(h, layer, b, act, cfg.branch_norm)
            h = h + y if cfg.spectral_residual else y
        elif kind == "s2":
            h = h + gcn_forward(h, b.gcn, layer["gcn"], cfg.activation) + _spectral_branch(h, layer, b, act, cfg.branch_norm)
        if cfg.norm == "rms":
            h = rms_norm(h)
    for j in range(cfg.decoder_layers):
        h = h @ model.params[f"dec{j}.weight"] + model.params[f"dec{j}.bias"]
        if j < cfg.decoder_layers - 1:
            h = act(h)
    return h


def config_dict(cfg: ModelConfig) -> dict:
    d = asdict(cfg)
    d["layers"] = ",".join(cfg.layers)
    return d
