"""Randomized invariants over the pure helpers."""

import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from compsim.backhaul import iq_noise_factor, reallocate_shares
from compsim.channel import quantize_uniform
from compsim.config import ScenarioConfig, parse_config, serialize_config, with_overrides
from compsim.kqi import download_ratio, new_session, step_playback
from compsim.phy import bs_loads, jt_precoder, validate_plan, water_filling
from compsim.scheduler import UserQueue, update_queues
from compsim.sync import ici_factors

from helpers import random_group

finite = st.floats(-1e3, 1e3, allow_nan=False)
gains = st.lists(st.floats(1e-3, 1e3), min_size=1, max_size=8)
LADDER = (1e6, 2e6, 4e6, 8e6)


@given(st.lists(finite, min_size=1, max_size=50), st.integers(1, 10), st.floats(0.1, 100))
def test_quantizer_error_bounded_inside_clip(xs, bits, clip):
    x = np.array(xs)
    q, idx, n_clip = quantize_uniform(x, bits, clip)
    step = 2 * clip / 2 ** bits
    inside = np.abs(x) <= clip
    assert np.all(np.abs(q[inside] - x[inside]) <= step / 2 * (1 + 1e-9))
    assert np.all((idx >= 0) & (idx < 2 ** bits))
    assert n_clip == int(np.count_nonzero(~inside))


@given(gains, st.floats(1e-3, 10))
def test_water_filling_budget_and_kkt(g, p_total):
    g = np.array(g)
    p = water_filling(g, p_total)
    assert np.all(p >= 0)
    assert math.isclose(p.sum(), p_total, rel_tol=1e-9)
    on = p > 0
    level = p[on] + 1 / g[on]
    assert np.allclose(level, level[0], rtol=1e-6)
    assert np.all(1 / g[~on] >= level[0] * (1 - 1e-6))


@given(st.lists(st.floats(0, 1e9), min_size=1, max_size=6), st.floats(0, 1))
def test_shares_sum_to_one(b, frac):
    floor = frac / len(b)
    s = reallocate_shares(b, floor)
    assert math.isclose(sum(s), 1.0, rel_tol=1e-12)
    assert all(x >= floor - 1e-12 for x in s)


@given(st.integers(1, 16))
def test_iq_noise_quarters_per_bit(bits):
    assert math.isclose(iq_noise_factor(bits) / iq_noise_factor(bits + 1), 4.0)


@given(st.floats(-5e4, 5e4), st.floats(1e3, 1e6))
def test_ici_split_conserves_power(df, spacing):
    gain, leak = ici_factors(df, spacing)
    assert 0.0 <= gain <= 1.0
    assert math.isclose(gain + leak, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(1, 4))
def test_jt_respects_per_bs_power(seed, k):
    _, reps = random_group(np.random.default_rng(seed), k)
    plan = jt_precoder(reps, 0.1)
    loads = bs_loads(plan.w, plan.power, plan.n_t)
    assert validate_plan(plan, 0.1) == []
    assert math.isclose(loads.max(), 0.1, rel_tol=1e-9)


@given(st.lists(st.tuples(st.floats(0, 1e7), st.floats(0, 1e7), st.floats(0, 1e7)),
                min_size=1, max_size=5))
def test_queue_update_is_lindley(rows):
    qs = [UserQueue(q) for q, _, _ in rows]
    out = update_queues(qs, None, [s for _, s, _ in rows], [a for _, _, a in rows])
    for (q, s, a), new in zip(rows, out):
        assert new.q_bits == max(q - s, 0.0) + a


@given(st.lists(st.floats(0, 5e5), min_size=1, max_size=60), st.integers(0, 3))
def test_playback_invariants(deliveries, level):
    s = new_session(4e6, level)
    prev = s
    for d in deliveries:
        s = step_playback(s, d, 0.1, LADDER)
        assert prev.downloaded_bits <= s.downloaded_bits <= s.file_size_bits
        assert 0.0 <= download_ratio(s) <= 1.0
        assert s.buffer_s >= 0.0 and s.stall_count >= prev.stall_count
        prev = s
    assert s.played_bits <= s.downloaded_bits * (1 + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.integers(1, 16), st.floats(0.0, 300.0), st.floats(1.0, 1000.0))
def test_config_round_trip(n_users, bits, doppler, isd):
    c = with_overrides(ScenarioConfig(), {"n_users": n_users, "channel.csi_bits": bits,
                                          "channel.doppler_hz": doppler, "geometry.isd_m": isd})
    back = parse_config(serialize_config(c))
    assert back == c
