"""
Channel model and pre-event sub-carrier / power scheduling.

Every region is solved independently and may reuse the whole band. Inside
a region each undirected link owns an exclusive set of sub-carriers, both
directions run on that set with the same per-carrier power, and each
endpoint pays for its own outgoing direction out of its power budget
``p_max - p_cst``.

Because the gain of a link does not depend on the sub-carrier, an optimal
plan spreads a link's power evenly over its carriers. The search space is
therefore the integer carrier count per link plus the per-carrier power of
each link, and for fixed counts the best max-min rate is found exactly by
bisection (``max_min_rate``).
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .graph import CommGraph, Edge, GeoLocation, is_connected

log = logging.getLogger(__name__)

LN2 = math.log(2.0)

# brute_force_allocate limits
MAX_ORACLE_LINKS = 3
MAX_ORACLE_CARRIERS = 8


class AllocationError(ValueError):
    """The region cannot be scheduled (budget, connectivity or carrier shortage)."""


class UnschedulableLink(AllocationError):
    pass


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Cyber-layer constants. Powers are linear mW.

    ``length_scale`` multiplies location distances before they enter the
    path-loss law; 1.0 evaluates ``h * d**-alpha`` with ``d`` in km, 1000.0
    with ``d`` in metres.
    """

    w: float = 25e3
    S: int = 40
    sigma2: float = dbm_to_mw(-62.0)
    h: float = 0.09
    alpha: float = 3.0
    p_max: float = dbm_to_mw(24.0)
    p_cst: float = dbm_to_mw(0.1)
    packet_bits: int = 256
    length_scale: float = 1.0

    def __post_init__(self) -> None:
        for name in ("w", "sigma2", "h", "p_max", "p_cst", "packet_bits", "length_scale"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.S < 1:
            raise ValueError("S must be at least 1")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not self.p_cst < self.p_max:
            raise ValueError("p_cst must be below p_max")


def channel_gain(d: float, params: ChannelParams) -> float:
    if not d > 0:
        raise ValueError(f"distance must be positive, got {d}")
    return params.h * (d * params.length_scale) ** (-params.alpha)


def snr(p: float, g: float, sigma2: float) -> float:
    if not sigma2 > 0:
        raise ValueError("noise power must be positive")
    if p < 0:
        raise ValueError("power must be non-negative")
    return p * g / sigma2


def link_rate(carrier_count: int, p_per_carrier: float, g: float, params: ChannelParams) -> float:
    if carrier_count < 0:
        raise ValueError("carrier count must be non-negative")
    if carrier_count == 0:
        return 0.0
    return params.w * carrier_count * math.log1p(snr(p_per_carrier, g, params.sigma2)) / LN2


def link_delay(rate: float, params: ChannelParams) -> float:
    if not rate > 0:
        raise UnschedulableLink(f"link rate {rate} bit/s cannot carry a packet")
    return params.packet_bits / rate


def sampling_interval(tau_max: float, grid: float, safety: float = 1.0) -> float:
    """Smallest multiple of ``grid`` not below ``safety * tau_max``."""
    if not (tau_max > 0 and grid > 0 and safety >= 1):
        raise ValueError("need tau_max > 0, grid > 0, safety >= 1")
    k = max(1, math.ceil(round(safety * tau_max / grid, 9)))
    while k * grid < tau_max:
        k += 1
    return k * grid


# ---------------------------------------------------------------------------
# Problem description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadioRegion:
    """One region's topology with per-link gains and per-node budgets (mW)."""

    graph: CommGraph
    gains: tuple[float, ...]
    p_max: tuple[float, ...]
    p_cst: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.gains) != len(self.graph.edges):
            raise ValueError("one gain per edge required")
        if len(self.p_max) != self.graph.n or len(self.p_cst) != self.graph.n:
            raise ValueError("one budget per node required")

    @classmethod
    def build(
        cls,
        graph: CommGraph,
        gains: Mapping[Edge, float] | Sequence[float],
        params: ChannelParams,
        p_max: Sequence[float] | None = None,
        p_cst: Sequence[float] | None = None,
    ) -> RadioRegion:
        if isinstance(gains, Mapping):
            g = tuple(float(gains[e]) for e in graph.edges)
        else:
            g = tuple(float(x) for x in gains)
        pm = tuple(p_max) if p_max is not None else (params.p_max,) * graph.n
        pc = tuple(p_cst) if p_cst is not None else (params.p_cst,) * graph.n
        return cls(graph, g, pm, pc)

    @classmethod
    def from_locations(
        cls,
        graph: CommGraph,
        locations: Sequence[GeoLocation],
        params: ChannelParams,
        p_max: Sequence[float] | None = None,
        p_cst: Sequence[float] | None = None,
    ) -> RadioRegion:
        gains = [channel_gain(locations[i].distance(locations[j]), params) for i, j in graph.edges]
        return cls.build(graph, gains, params, p_max, p_cst)

    @property
    def budgets(self) -> tuple[float, ...]:
        return tuple(pm - pc for pm, pc in zip(self.p_max, self.p_cst))


@dataclass(frozen=True)
class LinkAllocation:
    link: Edge
    carriers: tuple[int, ...]
    power_per_carrier: float
    gain: float
    rate: float
    delay: float


@dataclass(frozen=True)
class RegionAllocation:
    graph: CommGraph
    links: tuple[LinkAllocation, ...]

    @property
    def min_rate(self) -> float:
        return min(l.rate for l in self.links)

    @property
    def tau_max(self) -> float:
        return max(l.delay for l in self.links)


@dataclass(frozen=True)
class AllocationPlan:
    regions: tuple[RegionAllocation, ...]

    @property
    def per_region_max_delay(self) -> list[float]:
        return [r.tau_max for r in self.regions]

    @property
    def min_rate_per_region(self) -> list[float]:
        return [r.min_rate for r in self.regions]

    def to_dict(self) -> dict:
        return {
            "regions": [
                {
                    "region": k,
                    "nodes": r.graph.n,
                    "tau_max_s": r.tau_max,
                    "min_rate_bps": r.min_rate,
                    "links": [
                        {
                            "link": list(l.link),
                            "carriers": list(l.carriers),
                            "power_per_carrier_mw": l.power_per_carrier,
                            "gain": l.gain,
                            "rate_bps": l.rate,
                            "delay_s": l.delay,
                        }
                        for l in r.links
                    ],
                }
                for k, r in enumerate(self.regions)
            ]
        }


# ---------------------------------------------------------------------------
# Power step: exact max-min rate for fixed carrier counts
# ---------------------------------------------------------------------------


def _power_for_rate(t: float, n: int, g: float, params: ChannelParams) -> float:
    """Per-carrier power that lets ``n`` carriers reach rate ``t``."""
    x = t * LN2 / (params.w * n)
    if x > 700.0:
        return math.inf
    return math.expm1(x) * params.sigma2 / g


def _feasible(t: float, counts: Sequence[int], region: RadioRegion, params: ChannelParams,
              incidence: Sequence[Sequence[int]]) -> bool:
    spend = [c * _power_for_rate(t, c, g, params) for c, g in zip(counts, region.gains)]
    for node, links in enumerate(incidence):
        # fsum keeps the check independent of the order links are listed in
        if region.p_cst[node] + math.fsum(spend[e] for e in links) > region.p_max[node]:
            return False
    return True


def max_min_rate(counts: Sequence[int], region: RadioRegion, params: ChannelParams) -> tuple[float, list[float]]:
    """Best common rate for the given carrier counts and the per-carrier powers achieving it.

    Every link is driven to the same rate ``t``; the link power needed for
    ``t`` is increasing in ``t`` so feasibility is monotone and bisection
    converges to the largest feasible ``t`` to float resolution.
    """
    if len(counts) != len(region.gains):
        raise ValueError("one count per link required")
    if any(c < 1 for c in counts):
        raise AllocationError("every link needs at least one sub-carrier")
    incidence = [region.graph.incident_edges(i) for i in range(region.graph.n)]
    budgets = region.budgets
    if any(b <= 0 for b in budgets):
        raise AllocationError("a node's budget does not cover its circuit power")

    hi = math.inf
    for (i, j), c, g in zip(region.graph.edges, counts, region.gains):
        cap = min(budgets[i], budgets[j]) / c
        hi = min(hi, params.w * c * math.log1p(cap * g / params.sigma2) / LN2)
    lo = 0.0
    hi = hi * (1 + 1e-12)
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        if _feasible(mid, counts, region, params, incidence):
            lo = mid
        else:
            hi = mid
    powers = [_power_for_rate(lo, c, g, params) for c, g in zip(counts, region.gains)]
    return lo, powers


def _to_region_allocation(counts: Sequence[int], powers: Sequence[float], region: RadioRegion,
                          params: ChannelParams) -> RegionAllocation:
    links = []
    start = 0
    for e, c, p, g in zip(region.graph.edges, counts, powers, region.gains):
        rate = link_rate(c, p, g, params)
        links.append(LinkAllocation(e, tuple(range(start, start + c)), p, g, rate, link_delay(rate, params)))
        start += c
    return RegionAllocation(region.graph, tuple(links))


def _check_region(region: RadioRegion, params: ChannelParams) -> None:
    if not is_connected(region.graph) or region.graph.n < 2:
        raise AllocationError("region communication graph is not connected")
    if any(b <= 0 for b in region.budgets):
        bad = [i for i, b in enumerate(region.budgets) if b <= 0]
        raise AllocationError(f"nodes {bad}: p_max does not cover p_cst")
    if any(not g > 0 for g in region.gains):
        raise AllocationError("every link needs a positive gain")
    if len(region.graph.edges) > params.S:
        raise AllocationError(f"{len(region.graph.edges)} links but only {params.S} sub-carriers")


# ---------------------------------------------------------------------------
# Carrier step and the alternating scheduler
# ---------------------------------------------------------------------------


def _greedy_counts(link_power: Sequence[float], region: RadioRegion, params: ChannelParams) -> list[int]:
    """Max-min carrier counts for fixed total power per link.

    Each link rate is increasing in its count, so handing the next carrier
    to the current bottleneck is optimal for max-min.
    """
    E = len(link_power)
    counts = [1] * E

    def rate(e: int) -> float:
        return link_rate(counts[e], link_power[e] / counts[e], region.gains[e], params)

    for _ in range(params.S - E):
        e = min(range(E), key=lambda k: (rate(k), k))
        counts[e] += 1
    return counts


def _equal_split(region: RadioRegion) -> list[float]:
    """Total power per link when every node divides its budget evenly."""
    g = region.graph
    share = [b / max(1, len(g.incident_edges(i))) for i, b in enumerate(region.budgets)]
    return [min(share[i], share[j]) for i, j in g.edges]


def _allocate_region(region: RadioRegion, params: ChannelParams, max_iter: int = 50,
                     eps: float = 1e-12) -> RegionAllocation:
    _check_region(region, params)
    E = len(region.graph.edges)

    link_power = _equal_split(region)
    counts = _greedy_counts(link_power, region, params)
    t, powers = max_min_rate(counts, region, params)
    prev_tau = params.packet_bits / t
    for _ in range(max_iter):
        link_power = [c * p for c, p in zip(counts, powers)]
        new_counts = _greedy_counts(link_power, region, params)
        t_new, p_new = max_min_rate(new_counts, region, params)
        if t_new > t:
            counts, t, powers = new_counts, t_new, p_new
        tau = params.packet_bits / t
        if new_counts == counts and abs(tau - prev_tau) <= eps * tau:
            break
        prev_tau = tau

    # integer coordinate descent: move carriers between links while min-rate improves
    improved = True
    while improved:
        improved = False
        best = (t, counts, powers)
        for a, b in itertools.permutations(range(E), 2):
            for step in (1, 2, 4, 8):
                if counts[a] - step < 1:
                    break
                trial = list(counts)
                trial[a] -= step
                trial[b] += step
                tt, pp = max_min_rate(trial, region, params)
                if tt > best[0] * (1 + 1e-12):
                    best = (tt, trial, pp)
        if best[0] > t:
            t, counts, powers = best
            improved = True
    return _to_region_allocation(counts, powers, region, params)


def allocate(regions: Sequence[RadioRegion], params: ChannelParams) -> AllocationPlan:
    """Schedule every region, maximising its minimum per-direction link rate."""
    out = []
    for k, region in enumerate(regions):
        try:
            out.append(_allocate_region(region, params))
        except AllocationError as exc:
            raise AllocationError(f"region {k}: {exc}") from exc
        log.debug("region %d: tau_max = %.6g s", k, out[-1].tau_max)
    return AllocationPlan(tuple(out))


def _compositions(total_max: int, parts: int):
    for counts in itertools.product(range(1, total_max - parts + 2), repeat=parts):
        if sum(counts) <= total_max:
            yield counts


def brute_force_allocate(region: RadioRegion, params: ChannelParams) -> AllocationPlan:
    """Exhaustive optimum over all carrier counts (small instances only)."""
    E = len(region.graph.edges)
    if E > MAX_ORACLE_LINKS or params.S > MAX_ORACLE_CARRIERS:
        raise ValueError(f"oracle limited to E <= {MAX_ORACLE_LINKS}, S <= {MAX_ORACLE_CARRIERS}")
    _check_region(region, params)
    best = None
    for counts in _compositions(params.S, E):
        t, powers = max_min_rate(counts, region, params)
        if best is None or t > best[0]:
            best = (t, counts, powers)
    _, counts, powers = best
    return AllocationPlan((_to_region_allocation(counts, powers, region, params),))


def node_power_use(alloc: RegionAllocation, node: int) -> float:
    """Transmit power (mW) a node spends on its outgoing directions."""
    return math.fsum(len(l.carriers) * l.power_per_carrier for l in alloc.links if node in l.link)
