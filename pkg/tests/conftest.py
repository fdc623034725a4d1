import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spatiospectral import autodiff as ad
from spatiospectral.graph import Graph

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_connected_graph(n: int, rng: np.random.Generator, extra: float = 0.3,
                           weighted: bool = False, directed: bool = False) -> Graph:
    """Random spanning tree plus about ``extra * n`` chords."""
    parent = [int(rng.integers(0, i)) for i in range(1, n)]
    edges = {(p, i) for i, p in zip(range(1, n), parent)}
    for _ in range(int(extra * n)):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            edges.add((int(min(u, v)), int(max(u, v))))
    edges = sorted(edges)
    if directed:
        edges = [(v, u) if rng.random() < 0.5 else (u, v) for u, v in edges]
    w = rng.uniform(0.5, 2.0, size=len(edges)) if weighted else None
    return Graph.from_edges(n, edges, weights=w, directed=directed)


def fd_gradients(fn, params, h=1e-5):
    """Central finite differences of a scalar function of parameter tensors."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = float(fn().data)
            flat[i] = old - h
            down = float(fn().data)
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def grad_rel_error(fn, params, h=1e-5) -> float:
    """Largest per-parameter relative error between autodiff and finite differences."""
    ad.zero_grad(params)
    auto = ad.backward(fn(), params)
    num = fd_gradients(fn, params, h)
    worst = 0.0
    for a, b in zip(auto, num):
        scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
        worst = max(worst, float(np.linalg.norm(a - b) / scale))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
