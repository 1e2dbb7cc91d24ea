import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from gridshift.graph import CommGraph, GeoLocation, build_chain_from_locations
from gridshift.wireless import (
    AllocationError,
    ChannelParams,
    RadioRegion,
    UnschedulableLink,
    allocate,
    brute_force_allocate,
    channel_gain,
    dbm_to_mw,
    link_delay,
    link_rate,
    max_min_rate,
    node_power_use,
    sampling_interval,
    snr,
)

from test_graph import R1, R2, R3

METRES = ChannelParams(length_scale=1000.0)


def test_dbm_conversion():
    assert dbm_to_mw(0.0) == 1.0
    assert dbm_to_mw(24.0) == pytest.approx(251.18864315, rel=1e-9)
    assert dbm_to_mw(-62.0) == pytest.approx(6.309573e-7, rel=1e-6)


def test_gain_matches_log_domain():
    p = ChannelParams()
    expected = math.exp(math.log(0.09) - 3 * math.log(0.64))
    assert channel_gain(0.64, p) == pytest.approx(expected, rel=1e-12)
    assert channel_gain(0.64, p) == pytest.approx(0.09 / 0.64**3, rel=1e-12)


def test_gain_length_scale():
    assert channel_gain(0.64, METRES) == pytest.approx(0.09 / 640.0**3, rel=1e-12)


def test_snr_matches_db_domain():
    p, g, s2 = 17.9, 7.09e-10, dbm_to_mw(-62)
    db = 10 * math.log10(p) + 10 * math.log10(g) - (-62.0)
    assert 10 * math.log10(snr(p, g, s2)) == pytest.approx(db, abs=1e-9)


def test_rate_is_shannon_sum_over_carriers():
    p = ChannelParams()
    g = 1e-9
    r = link_rate(7, 20.0, g, p)
    assert r == pytest.approx(7 * p.w * math.log2(1 + 20.0 * g / p.sigma2), rel=1e-12)
    assert link_rate(0, 20.0, g, p) == 0.0


def test_delay_formula_example():
    p = ChannelParams()
    assert link_delay(5087.8, p) == pytest.approx(0.0503, abs=5e-5)
    with pytest.raises(UnschedulableLink):
        link_delay(0.0, p)


@pytest.mark.parametrize(
    "tau, grid, safety, expected",
    [
        (0.0446, 0.01, 1.0, 0.05),
        (0.0875, 0.01, 1.0, 0.09),
        (0.05, 0.01, 1.0, 0.05),
        (0.0508552, 0.01, 1.9, 0.1),
        (0.003, 0.01, 1.0, 0.01),
    ],
)
def test_sampling_interval_examples(tau, grid, safety, expected):
    assert sampling_interval(tau, grid, safety) == pytest.approx(expected, abs=1e-15)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-4, 1.0), st.sampled_from([0.001, 0.005, 0.01, 0.02]), st.floats(1.0, 3.0))
def test_sampling_interval_covers_delay(tau, grid, safety):
    ts = sampling_interval(tau, grid, safety)
    assert ts >= tau
    k = round(ts / grid)
    assert ts == k * grid
    assert (k - 1) * grid < safety * tau * (1 + 1e-9) or k == 1


def test_sampling_interval_rejects_bad_input():
    with pytest.raises(ValueError):
        sampling_interval(0.0, 0.01)
    with pytest.raises(ValueError):
        sampling_interval(0.05, 0.01, 0.5)


def _region(edges, n, gains, p_max=None, params=ChannelParams()):
    return RadioRegion.build(CommGraph.from_edges(n, edges), gains, params, p_max=p_max)


def test_power_step_single_link_closed_form():
    p = ChannelParams(S=8)
    g = 3e-9
    region = _region([(0, 1)], 2, [g])
    for n in (1, 3, 8):
        t, powers = max_min_rate([n], region, p)
        budget = p.p_max - p.p_cst
        assert powers[0] == pytest.approx(budget / n, rel=1e-12)
        assert t == pytest.approx(p.w * n * math.log2(1 + budget / n * g / p.sigma2), rel=1e-12)


def test_power_step_two_links_against_root_finder():
    p = ChannelParams(S=8)
    g = [2e-9, 5e-10]
    counts = [3, 5]
    pm = [200.0, 150.0, 250.0]
    region = _region([(0, 1), (1, 2)], 3, g, p_max=pm)

    def need(t, c, gain):
        return c * (2 ** (t / (p.w * c)) - 1) * p.sigma2 / gain

    b = [x - p.p_cst for x in pm]
    # middle node binds when both links share its budget; an end node binds alone
    t_mid = brentq(lambda t: need(t, 3, g[0]) + need(t, 5, g[1]) - b[1], 1.0, 1e7, xtol=1e-12, rtol=1e-15)
    t_end0 = brentq(lambda t: need(t, 3, g[0]) - b[0], 1.0, 1e7, xtol=1e-12, rtol=1e-15)
    t_end2 = brentq(lambda t: need(t, 5, g[1]) - b[2], 1.0, 1e7, xtol=1e-12, rtol=1e-15)
    t, powers = max_min_rate(counts, region, p)
    assert t == pytest.approx(min(t_mid, t_end0, t_end2), rel=1e-9)
    rates = [link_rate(c, pw, gg, p) for c, pw, gg in zip(counts, powers, g)]
    assert rates == pytest.approx([t, t], rel=1e-9)


def _three_regions(params):
    out = []
    for xy in (R1, R2, R3):
        locs = [GeoLocation(x, y) for x, y in xy]
        out.append(RadioRegion.from_locations(build_chain_from_locations(locs), locs, params))
    return out


def _assert_plan_invariants(plan, regions, params):
    for alloc, region in zip(plan.regions, regions):
        used = [c for link in alloc.links for c in link.carriers]
        assert len(used) == len(set(used))
        assert len(used) <= params.S
        assert all(0 <= c < params.S for c in used)
        assert all(len(link.carriers) >= 1 for link in alloc.links)
        for node in range(region.graph.n):
            spend = node_power_use(alloc, node)
            assert region.p_cst[node] + spend <= region.p_max[node]
        for link in alloc.links:
            assert link.rate == pytest.approx(link_rate(len(link.carriers), link.power_per_carrier, link.gain, params))
            assert link.delay * link.rate == pytest.approx(params.packet_bits, rel=1e-12)


def test_three_regions_delay_scale():
    regions = _three_regions(METRES)
    plan = allocate(regions, METRES)
    _assert_plan_invariants(plan, regions, METRES)
    tau_ms = [1e3 * t for t in plan.per_region_max_delay]
    # reference delays of this layout: 87.5, 55.4 and 44.6 ms
    for got, ref in zip(tau_ms, [87.5, 55.4, 44.6]):
        assert 0.1 * ref < got < 10 * ref
    assert tau_ms[0] == pytest.approx(87.5, rel=0.01)
    assert tau_ms[1] == pytest.approx(55.4, rel=0.01)


def test_regions_reuse_the_band_independently():
    regions = _three_regions(METRES)
    together = allocate(regions, METRES)
    for k, region in enumerate(regions):
        alone = allocate([region], METRES)
        assert alone.regions[0].links == together.regions[k].links


def test_single_link_gets_every_carrier():
    region = _region([(0, 1)], 2, [1e-9])
    plan = allocate([region], ChannelParams())
    assert plan.regions[0].links[0].carriers == tuple(range(40))


def test_heuristic_matches_enumeration_on_small_layouts():
    params = ChannelParams(S=8, length_scale=1000.0)
    for region in _three_regions(params)[:2]:
        h = allocate([region], params).regions[0].min_rate
        b = brute_force_allocate(region, params).regions[0].min_rate
        assert h == pytest.approx(b, rel=1e-12)


def test_brute_force_rejects_oversized():
    p = ChannelParams(S=9)
    with pytest.raises(ValueError):
        brute_force_allocate(_region([(0, 1)], 2, [1e-9]), p)
    with pytest.raises(ValueError):
        brute_force_allocate(_region([(0, 1), (1, 2), (2, 3), (3, 4)], 5, [1e-9] * 4), ChannelParams(S=8))


def test_infeasible_regions():
    with pytest.raises(AllocationError):
        allocate([_region([(0, 1), (1, 2), (2, 3)], 4, [1e-9] * 3)], ChannelParams(S=2))
    with pytest.raises(AllocationError):
        allocate([_region([(0, 1)], 3, [1e-9])], ChannelParams())
    with pytest.raises(AllocationError):
        allocate([RadioRegion(CommGraph.from_edges(2, [(0, 1)]), (1e-9,), (1.0, 1.0), (1.0, 1.0))], ChannelParams())


def test_plan_dict_is_json_ready():
    import json

    plan = allocate(_three_regions(METRES), METRES)
    doc = json.loads(json.dumps(plan.to_dict()))
    assert [r["tau_max_s"] for r in doc["regions"]] == plan.per_region_max_delay


def test_channel_params_validation():
    with pytest.raises(ValueError):
        ChannelParams(S=0)
    with pytest.raises(ValueError):
        ChannelParams(p_max=1.0, p_cst=2.0)
    with pytest.raises(ValueError):
        ChannelParams(sigma2=0.0)


@settings(max_examples=40, deadline=None)
@given(
    st.sampled_from([[(0, 1)], [(0, 1), (1, 2)], [(0, 1), (0, 2), (0, 3)], [(0, 1), (1, 2), (0, 2)]]),
    st.integers(3, 8),
    st.lists(st.floats(0.2, 1.5), min_size=3, max_size=3),
    st.lists(st.floats(0.3, 1.0), min_size=4, max_size=4),
)
def test_allocation_invariants_and_optimality(edges, S, dists, scales):
    params = ChannelParams(S=S, length_scale=1000.0)
    n = 1 + max(max(e) for e in edges)
    gains = [channel_gain(d, params) for d in dists[: len(edges)]]
    region = _region(edges, n, gains, p_max=[params.p_max * s for s in scales[:n]], params=params)
    plan = allocate([region], params)
    _assert_plan_invariants(plan, [region], params)
    best = brute_force_allocate(region, params).regions[0].min_rate
    got = plan.regions[0].min_rate
    assert got <= best * (1 + 1e-12)
    assert got >= 0.95 * best


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.floats(1e-11, 1e-8), st.floats(1.0, 1e6))
def test_delay_times_rate_is_packet(n, g, p):
    params = ChannelParams()
    r = link_rate(n, p, g, params)
    assert link_delay(r, params) * r == pytest.approx(256, rel=1e-12)
    assert np.isfinite(r)
