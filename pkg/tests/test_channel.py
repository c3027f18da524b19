import math

import numpy as np
import pytest
from scipy.special import j0

from compsim.channel import (ChannelState, DegenerateInputError, adapt_feedback_interval,
                             channel_sequence, correlation_coefficient,
                             doppler_for_correlation, estimate_coherence, generate_channel,
                             quantize_csi, quantize_uniform)
from compsim.config import ConfigError, with_overrides


def _state(h, slot=0):
    h = np.asarray(h, dtype=complex).reshape(1, 1, 1, -1)
    return ChannelState(slot, h, 0.0, np.zeros((1, 1)))


def test_shapes_follow_config(cfg):
    s = generate_channel(cfg, 0, 0)
    assert s.h.shape == (cfg.n_users, 3, 1, 4)
    assert s.stacked(0).shape == (1, 12)
    assert s.rows().shape == (cfg.n_users, 1, 12)


def test_zero_doppler_is_static(cfg):
    c = with_overrides(cfg, {"channel.doppler_hz": 0.0})
    a = generate_channel(c, 3, 0)
    b = generate_channel(c, 3, 7)
    assert np.array_equal(a.h, b.h)


def test_deterministic_per_seed(cfg):
    a = [s.h for _, s in zip(range(5), channel_sequence(cfg, 11))]
    b = [s.h for _, s in zip(range(5), channel_sequence(cfg, 11))]
    c = generate_channel(cfg, 12, 4).h
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert np.array_equal(generate_channel(cfg, 11, 4).h, a[4])
    assert not np.array_equal(a[4], c)


def test_correlation_coefficient_is_bessel():
    assert correlation_coefficient(50.0, 1e-3) == pytest.approx(j0(2 * math.pi * 50e-3))
    assert correlation_coefficient(0.0, 1e-3) == 1.0
    fd = doppler_for_correlation(0.9, 1e-3)
    assert correlation_coefficient(fd, 1e-3) == pytest.approx(0.9, abs=1e-12)


def _lag1(cfg, fd, n=10_000):
    c = with_overrides(cfg, {"n_users": n // 12 + 1, "channel.doppler_hz": fd,
                             "geometry.user_positions": None})
    seq = channel_sequence(c, 5)
    h0 = next(seq).h
    h1 = next(seq).h
    # remove the deterministic path-loss scale before correlating
    a = (h0 / np.abs(h0).mean(axis=(2, 3), keepdims=True)).ravel()[:n]
    b = (h1 / np.abs(h0).mean(axis=(2, 3), keepdims=True)).ravel()[:n]
    return float(np.real(np.vdot(a, b)) / np.sqrt(np.vdot(a, a).real * np.vdot(b, b).real))


def test_lag_one_correlation_matches_gauss_markov(cfg):
    fd = doppler_for_correlation(0.9, cfg.slot_duration_s)
    assert _lag1(cfg, fd) == pytest.approx(0.9, abs=0.03)


def test_uncorrelated_when_a_is_zero(cfg):
    # first zero of J0
    fd = 2.404825557695773 / (2 * math.pi * cfg.slot_duration_s)
    assert abs(_lag1(cfg, fd)) < 0.05


def test_invalid_dimensions_raise(cfg):
    with pytest.raises(ConfigError):
        with_overrides(cfg, {"radio.n_tx_antennas": 0})


def test_quantizer_32_bits_is_near_lossless(rng):
    x = rng.uniform(-1, 1, 1000)
    q, _, _ = quantize_uniform(x, 32, 1.0)
    assert np.max(np.abs(q - x)) < 1e-6


def test_quantizer_one_bit_levels(rng):
    q, _, _ = quantize_uniform(rng.normal(size=1000), 1, 2.0)
    assert set(np.unique(q)) <= {-1.0, 1.0}


def test_quantizer_mse_matches_uniform_noise(rng):
    c = 4.0
    x = rng.normal(size=(10_000, 4))
    q, _, _ = quantize_uniform(x, 4, c)
    delta = 2 * c / 2 ** 4
    assert np.mean((q - x) ** 2) == pytest.approx(delta ** 2 / 12, rel=0.2)


def test_quantizer_counts_clipping():
    _, idx, n = quantize_uniform(np.array([-5.0, 0.1, 5.0]), 3, 1.0)
    assert n == 2
    assert idx.tolist() == [0, 4, 7]


def test_quantize_csi_report_fields(cfg):
    s = generate_channel(cfg, 1, 0)
    r = quantize_csi(s, 6, 2, tx_power_w=cfg.tx_power_w, noise_var=cfg.noise_var_w,
                     mcs_thresholds_db=tuple(m.min_sinr_db for m in cfg.radio.mcs))
    assert r.user == 2 and r.quant_bits == 6 and r.age_slots == 0
    assert 1 <= r.ri <= min(1, 12)
    assert 0 <= r.cqi <= 3
    # every component sits on the quantizer grid of its BS
    sigma = np.sqrt(10 ** (-s.pathloss_db[2] / 10) / 2)
    for b in range(3):
        c = 4 * sigma[b]
        step = 2 * c / 2 ** 6
        for part in (r.h_hat[b].real, r.h_hat[b].imag):
            k = (part + c) / step - 0.5
            assert np.allclose(k, np.round(k), atol=1e-9)
    c = 4 * sigma[:, None, None]
    err = r.h_hat - s.h[2]
    assert r.clip_count == 0
    assert np.all(np.abs(err.real) <= c * 2.0 ** (1 - 6))
    assert np.all(np.abs(err.imag) <= c * 2.0 ** (1 - 6))


def test_pmi_indexes_the_quantized_coefficients(cfg):
    s = generate_channel(cfg, 1, 0)
    r = quantize_csi(s, 3, 0)
    _, i_re, _ = quantize_uniform(s.h[0].real, 3, 4 * np.sqrt(10 ** (-s.pathloss_db[0] / 10) / 2)[:, None, None])
    _, i_im, _ = quantize_uniform(s.h[0].imag, 3, 4 * np.sqrt(10 ** (-s.pathloss_db[0] / 10) / 2)[:, None, None])
    digits = np.stack([i_re, i_im], axis=-1).ravel()
    assert r.pmi == sum(int(d) * 8 ** k for k, d in enumerate(digits))


def test_quantization_mse_non_increasing_in_bits(cfg):
    states = [generate_channel(cfg, s, 0) for s in range(20)]
    mse = []
    for bits in range(1, 11):
        e = [np.mean(np.abs(quantize_csi(st, bits, u).h_hat - st.h[u]) ** 2
                     / 10 ** (-st.pathloss_db[u][:, None, None] / 10))
             for st in states for u in range(st.n_users)]
        mse.append(np.mean(e))
    assert all(b <= a for a, b in zip(mse, mse[1:]))


def test_aged_report_counts_slots(cfg):
    r = quantize_csi(generate_channel(cfg, 0, 0), 4, 0, feedback_interval_slots=4)
    assert r.aged(3).age_slots == 3
    assert r.aged(3).h_hat is r.h_hat


def test_coherence_identity_and_negation(rng):
    h = rng.normal(size=4) + 1j * rng.normal(size=4)
    assert estimate_coherence(_state(h), _state(h), 0) == pytest.approx(1.0)
    assert estimate_coherence(_state(h), _state(-h), 0) == pytest.approx(-1.0)


def test_coherence_matches_direct_formula():
    a = np.array([1 + 1j, 0.5, -0.2j, 2.0])
    b = np.array([0.3, 1 - 1j, 1.0, -0.5 + 0.5j])
    ref = (np.conj(a) @ b).real / (np.linalg.norm(a) * np.linalg.norm(b))
    assert estimate_coherence(_state(a), _state(b), 0) == pytest.approx(ref, abs=1e-15)


def test_coherence_symmetric_and_scale_invariant(rng):
    a = rng.normal(size=4) + 1j * rng.normal(size=4)
    b = rng.normal(size=4) + 1j * rng.normal(size=4)
    ab = estimate_coherence(_state(a), _state(b), 0)
    assert estimate_coherence(_state(b), _state(a), 0) == pytest.approx(ab, abs=1e-15)
    assert estimate_coherence(_state(3 * a), _state(3 * b), 0) == pytest.approx(ab, abs=1e-15)


def test_coherence_zero_norm_raises():
    with pytest.raises(DegenerateInputError):
        estimate_coherence(_state(np.zeros(4)), _state(np.ones(4)), 0)


@pytest.mark.parametrize("coh,expected", [(1.0, 8), (0.5, 2), (0.9, 4)])
def test_adapt_feedback_interval(coh, expected):
    assert adapt_feedback_interval(coh, 4, (1, 32)) == expected


def test_adapt_feedback_interval_stays_in_bounds():
    assert adapt_feedback_interval(1.0, 32, (1, 32)) == 32
    assert adapt_feedback_interval(0.0, 1, (1, 32)) == 1
    with pytest.raises(ValueError):
        adapt_feedback_interval(1.0, 64, (1, 32))
