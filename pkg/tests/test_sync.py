import math

import numpy as np
import pytest

from compsim.sync import (ClockModel, SyncError, cluster_offset_hz, draw_clocks, ici_factors,
                          master_slave_sync, offset_hz, timing_penalty_db)


def test_offset_hz_reproduces_field_trial_range():
    assert offset_hz(20, 3.5e9) == 70.0
    assert offset_hz(75, 3.5e9) == 262.5
    assert offset_hz(0, 1e9) == 0.0


def test_offset_hz_rejects_bad_carrier():
    with pytest.raises(ValueError):
        offset_hz(20, 0.0)


def test_draw_clocks_within_accuracy_range():
    c = draw_clocks(1000, np.random.default_rng(0))
    assert np.all((np.abs(c.freq_offset_ppb) >= 20) & (np.abs(c.freq_offset_ppb) <= 75))
    assert np.all(np.abs(c.time_offset_us) < 3)
    assert (c.freq_offset_ppb > 0).any() and (c.freq_offset_ppb < 0).any()


def _clocks():
    return ClockModel(np.array([30.0, -50.0, 70.0]), np.array([1.0, -2.0, 0.5]))


def test_sync_with_infinite_snr_is_exact():
    s = master_slave_sync(_clocks(), math.inf, np.random.default_rng(0))
    assert np.all(s.freq_offset_hz == 0.0)
    assert np.all(s.time_offset_us == 0.0)


def test_sync_single_bs_unchanged():
    c = ClockModel(np.array([40.0]), np.array([1.0]))
    assert master_slave_sync(c, 10.0) is c


def test_sync_without_beacon_fails():
    with pytest.raises(SyncError):
        master_slave_sync(_clocks(), -math.inf)


def test_residual_std_matches_estimator_model():
    rng = np.random.default_rng(1)
    res = []
    for _ in range(5000):
        s = master_slave_sync(_clocks(), 20.0, rng)
        res.extend(s.freq_offset_hz[1:])
    assert np.std(res) == pytest.approx(5.0 / np.sqrt(100.0), rel=0.1)


def test_sync_shrinks_offsets_on_average():
    rng = np.random.default_rng(2)
    before, after = [], []
    for _ in range(200):
        c = draw_clocks(3, rng)
        s = master_slave_sync(c, 10.0, rng)
        before.append(cluster_offset_hz(c))
        after.append(cluster_offset_hz(s))
    assert np.mean(after) < np.mean(before)


@pytest.mark.parametrize("df,expected", [(0.0, (1.0, 0.0)), (15e3, (0.0, 1.0))])
def test_ici_endpoints(df, expected):
    assert ici_factors(df, 15e3) == expected


def test_ici_half_spacing():
    g, i = ici_factors(7.5e3, 15e3)
    assert g == pytest.approx((2 / np.pi) ** 2, abs=1e-15)
    assert g == pytest.approx(0.405, abs=5e-4)


def test_ici_sums_to_one_and_decreases():
    d = np.linspace(0, 1, 201)
    pairs = [ici_factors(x, 1.0) for x in d]
    assert all(g + i == 1.0 for g, i in pairs)
    gains = [g for g, _ in pairs]
    assert all(b <= a for a, b in zip(gains, gains[1:]))


def test_ici_rejects_bad_spacing():
    with pytest.raises(ValueError):
        ici_factors(1.0, 0.0)


def test_cluster_offset_is_max_pairwise():
    c = _clocks()
    f = c.freq_offset_hz
    assert cluster_offset_hz(c) == pytest.approx(f.max() - f.min())
    assert cluster_offset_hz(c, [0]) == 0.0
    assert cluster_offset_hz(c, [0, 1]) == pytest.approx(abs(f[0] - f[1]))


def test_timing_penalty_only_beyond_cyclic_prefix():
    c = _clocks()
    assert timing_penalty_db(c, cp_us=4.7) == 0.0
    assert timing_penalty_db(c, cp_us=1.5) == -10.0
    assert timing_penalty_db(c, cp_us=1.5, members=[0, 2]) == 0.0
