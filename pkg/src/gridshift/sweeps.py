"""
Seeded randomized cross-checks.

Two sweeps back the solvers with independent evidence:

* the per-node gain criterion against the eigenvalues of the delayed
  consensus loop on random connected graphs;
* the allocation heuristic against exhaustive enumeration on instances small
  enough to enumerate.

All randomness comes from a ``numpy.random.Generator`` built from the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .control import ControllerGains, Verdict, check_gains, spectral_radius_oracle
from .graph import CommGraph
from .wireless import (
    MAX_ORACLE_CARRIERS,
    ChannelParams,
    RadioRegion,
    allocate,
    brute_force_allocate,
    channel_gain,
)

DEFAULT_SEED = 2022


def random_connected_graph(rng: np.random.Generator, n: int, extra_p: float = 0.3) -> CommGraph:
    """Random spanning tree on ``n`` nodes plus each other pair with probability ``extra_p``."""
    order = rng.permutation(n)
    edges = set()
    for k in range(1, n):
        parent = order[rng.integers(0, k)]
        edges.add((int(min(order[k], parent)), int(max(order[k], parent))))
    for i in range(n):
        for j in range(i + 1, n):
            if (i, j) not in edges and rng.random() < extra_p:
                edges.add((i, j))
    return CommGraph.from_edges(n, edges)


def _open_uniform(rng: np.random.Generator, hi: np.ndarray | float, size=None) -> np.ndarray:
    # strictly inside (0, hi): the criterion excludes both ends
    u = rng.uniform(0.0, 1.0, size)
    u = np.clip(u, 1e-6, 1.0 - 1e-6)
    return u * hi


def random_sufficient_gains(rng: np.random.Generator, g: CommGraph) -> ControllerGains:
    """Gains drawn uniformly from the region allowed by the per-node criterion."""
    n = g.n
    return ControllerGains(
        _open_uniform(rng, 2.0, n),
        _open_uniform(rng, 1.0 / g.degrees),
        _open_uniform(rng, 2.0, n),
    )


@dataclass(frozen=True)
class StabilityCase:
    graph: CommGraph
    gains: ControllerGains
    verdict: Verdict
    second_radius: float


def stability_sweep(trials: int, seed: int = DEFAULT_SEED, max_nodes: int = 8) -> list[StabilityCase]:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(trials):
        n = int(rng.integers(2, max_nodes + 1))
        g = random_connected_graph(rng, n)
        gains = random_sufficient_gains(rng, g)
        if not check_gains(gains, g).stable:
            raise AssertionError("sampler produced gains outside the criterion")
        res = spectral_radius_oracle(g, gains.K_P)
        out.append(StabilityCase(g, gains, res.verdict, res.second_radius))
    return out


# shapes with at most three links, so enumeration stays cheap
_SHAPES = {
    "link": (2, ((0, 1),)),
    "path2": (3, ((0, 1), (1, 2))),
    "path3": (4, ((0, 1), (1, 2), (2, 3))),
    "star": (4, ((0, 1), (0, 2), (0, 3))),
    "triangle": (3, ((0, 1), (1, 2), (0, 2))),
}
SYMMETRIC_SHAPES = ("link", "path2", "star", "triangle")


@dataclass(frozen=True)
class AllocationCase:
    shape: str
    symmetric: bool
    S: int
    heuristic: float
    optimum: float

    @property
    def ratio(self) -> float:
        return self.heuristic / self.optimum


def random_allocation_instance(rng: np.random.Generator, symmetric: bool = False,
                               base: ChannelParams | None = None) -> tuple[str, RadioRegion, ChannelParams]:
    """One small region; symmetric instances share one distance and one budget."""
    base = base or ChannelParams(length_scale=1000.0)
    names = SYMMETRIC_SHAPES if symmetric else tuple(_SHAPES)
    shape = names[int(rng.integers(0, len(names)))]
    n, edges = _SHAPES[shape]
    g = CommGraph.from_edges(n, edges)
    S = int(rng.integers(len(edges), MAX_ORACLE_CARRIERS + 1))
    params = replace(base, S=S)
    if symmetric:
        d = float(rng.uniform(0.2, 1.5))
        gains = [channel_gain(d, params)] * len(edges)
        p_max = [params.p_max] * n
    else:
        gains = [channel_gain(float(rng.uniform(0.2, 1.5)), params) for _ in edges]
        p_max = [params.p_max * float(rng.uniform(0.3, 1.0)) for _ in range(n)]
    return shape, RadioRegion.build(g, gains, params, p_max=p_max), params


def allocation_sweep(trials: int, seed: int = DEFAULT_SEED, symmetric_every: int = 4,
                     base: ChannelParams | None = None) -> list[AllocationCase]:
    """Every ``symmetric_every``-th instance is drawn symmetric.

    ``base`` supplies the channel constants; its carrier count is redrawn
    per instance to stay within the enumeration cap.
    """
    rng = np.random.default_rng(seed)
    out = []
    for k in range(trials):
        sym = symmetric_every > 0 and k % symmetric_every == 0
        shape, region, params = random_allocation_instance(rng, sym, base)
        heuristic = allocate([region], params).regions[0].min_rate
        optimum = brute_force_allocate(region, params).regions[0].min_rate
        if not (math.isfinite(heuristic) and math.isfinite(optimum)):
            raise AssertionError("non-finite rate in allocation sweep")
        out.append(AllocationCase(shape, sym, params.S, heuristic, optimum))
    return out
