import math

import pytest

from compsim.backhaul import (BackhaulBudget, backhaul_latency_contribution,
                              csi_bits_per_report, csi_required_gbps, cscb_required_gbps,
                              fit_iq_bits, iq_noise_factor, jt_required_gbps,
                              reallocate_shares)

FS = 30.725e6


def test_budget_invariants():
    BackhaulBudget(10.0, per_bs_share=(0.5, 0.25, 0.25))
    with pytest.raises(ValueError):
        BackhaulBudget(10.0, per_bs_share=(0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        BackhaulBudget(241.0)
    with pytest.raises(ValueError):
        BackhaulBudget(-1.0)
    b = BackhaulBudget.equal(9.0, 3)
    assert b.n_bs == 3 and b.share_gbps(1) == pytest.approx(3.0)


def test_jt_requirement_field_trial_sampling():
    assert jt_required_gbps(1, FS, 16) == pytest.approx(2 * 16 * FS / 1e9)
    assert jt_required_gbps(1, FS, 16) == pytest.approx(0.983, abs=5e-4)


def test_jt_requirement_csi_only_and_linear():
    csi = csi_required_gbps(512, 4)
    assert jt_required_gbps(0, FS, 16, 512, 4) == pytest.approx(csi)
    one = jt_required_gbps(3, FS, 8)
    assert jt_required_gbps(6, FS, 8) == 2 * one


def test_csi_cost_model():
    assert csi_bits_per_report(8, 4, 1) == 64
    assert csi_required_gbps(64e6, 1, 1e-3) == pytest.approx(64.0)
    assert cscb_required_gbps(64e6, 2) == pytest.approx(32.0)


def test_fit_iq_bits_full_precision():
    assert fit_iq_bits(BackhaulBudget(240.0), 4, FS) == 16


def test_fit_iq_bits_starved():
    assert fit_iq_bits(BackhaulBudget(0.001), 4, FS) == 0
    assert fit_iq_bits(BackhaulBudget(0.0), 1, FS) == 0


def test_fit_iq_bits_boundary():
    cap = jt_required_gbps(4, FS, 8)
    assert fit_iq_bits(BackhaulBudget(cap), 4, FS) == 8
    assert fit_iq_bits(BackhaulBudget(cap * (1 - 1e-6)), 4, FS) == 7


def test_fit_iq_bits_monotone():
    bits = [fit_iq_bits(BackhaulBudget(c), 3, FS) for c in [0.1 * k for k in range(0, 40)]]
    assert all(b >= a for a, b in zip(bits, bits[1:]))


def test_latency_propagation_only():
    b = BackhaulBudget(10.0, latency_ms=0.7)
    assert backhaul_latency_contribution(b, 0) == 0.7
    inf = BackhaulBudget(math.inf, latency_ms=0.7, max_gbps=math.inf)
    assert backhaul_latency_contribution(inf, 10**9) == 0.7


def test_latency_arithmetic():
    b = BackhaulBudget(1.0, latency_ms=1.0)
    assert backhaul_latency_contribution(b, 10**6) == pytest.approx(9.0)


def test_latency_per_bs_share():
    b = BackhaulBudget(3.0, latency_ms=0.0)
    assert backhaul_latency_contribution(b, 1000, bs=0) == pytest.approx(
        3 * backhaul_latency_contribution(b, 1000))


def test_iq_noise_factor():
    assert iq_noise_factor(4) == pytest.approx(16 / (3 * 256))
    assert iq_noise_factor(0) == math.inf
    f = [iq_noise_factor(b) for b in range(1, 17)]
    assert all(y < x for x, y in zip(f, f[1:]))


def test_reallocate_shares():
    assert reallocate_shares([0, 0, 0]) == pytest.approx((1 / 3,) * 3)
    assert reallocate_shares([2, 1, 1]) == pytest.approx((0.5, 0.25, 0.25))
    s = reallocate_shares([1, 0, 0], floor=0.1)
    assert sum(s) == pytest.approx(1.0)
    assert min(s) == pytest.approx(0.1)
