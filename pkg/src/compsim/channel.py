"""Fading channels, quantized CSI reports and coherence-driven feedback.

Small-scale fading is i.i.d. Rayleigh per antenna pair and evolves as a
first-order Gauss-Markov process with lag-one correlation
``a = J0(2 pi f_D T_slot)``. Large-scale gain follows a log-distance model.
Every random draw comes from a generator keyed on ``(seed, stream, slot)``,
so any slot is reproducible on its own.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import j0

from .config import ConfigError, ScenarioConfig, db_to_linear

__all__ = [
    "DegenerateInputError",
    "ChannelState",
    "CsiReport",
    "rng_for",
    "bs_positions",
    "place_users",
    "pathloss_db",
    "correlation_coefficient",
    "doppler_for_correlation",
    "channel_sequence",
    "generate_channel",
    "quantize_uniform",
    "quantize_csi",
    "estimate_coherence",
    "report_coherence",
    "adapt_feedback_interval",
]

SPEED_OF_LIGHT = 299_792_458.0

# stream tags for rng_for
STREAM_FADING_INIT = 1
STREAM_FADING_STEP = 2
STREAM_PLACEMENT = 3
STREAM_CLOCKS = 4
STREAM_SENSITIVITY = 5
STREAM_SYNC = 6


class DegenerateInputError(ValueError):
    """Input has no direction (zero norm) or no variation."""


def rng_for(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(stream), int(index)]))


@dataclass(frozen=True)
class ChannelState:
    """True channel of every user towards every BS in one slot.

    ``h`` has shape ``(n_users, n_bs, n_r, n_t)``; ``pathloss_db`` has shape
    ``(n_users, n_bs)`` and is already folded into ``h``.
    """

    slot: int
    h: np.ndarray
    doppler_hz: float
    pathloss_db: np.ndarray

    @property
    def n_users(self) -> int:
        return self.h.shape[0]

    @property
    def n_bs(self) -> int:
        return self.h.shape[1]

    def stacked(self, user: int) -> np.ndarray:
        """``(n_r, n_bs * n_t)`` channel of ``user`` across all BS antennas."""
        h = self.h[user]
        return np.transpose(h, (1, 0, 2)).reshape(h.shape[1], -1)

    def rows(self) -> np.ndarray:
        """``(n_users, n_r, n_bs * n_t)`` stacked channels of all users."""
        u, b, r, t = self.h.shape
        return np.transpose(self.h, (0, 2, 1, 3)).reshape(u, r, b * t)


@dataclass(frozen=True)
class CsiReport:
    """Quantized, possibly stale channel knowledge of one user.

    ``h_hat`` has shape ``(n_bs, n_r, n_t)``. ``pmi`` is the mixed-radix index
    of the quantizer levels in canonical (bs, rx, tx, re/im) order, i.e. the
    position of ``h_hat`` in the implicit codebook of all quantized channels.
    """

    user: int
    ri: int
    pmi: int
    cqi: int
    h_hat: np.ndarray
    quant_bits: int
    age_slots: int = 0
    feedback_interval_slots: int = 1
    clip_count: int = 0
    slot: int = 0

    def stacked(self) -> np.ndarray:
        return np.transpose(self.h_hat, (1, 0, 2)).reshape(self.h_hat.shape[1], -1)

    def aged(self, slots: int = 1) -> "CsiReport":
        return replace(self, age_slots=self.age_slots + slots)


# --- geometry ---------------------------------------------------------------

def bs_positions(config: ScenarioConfig) -> np.ndarray:
    """BSs on a regular polygon whose adjacent sites are ``isd_m`` apart."""
    n = config.radio.n_bs
    isd = config.geometry.isd_m
    if n == 1:
        return np.zeros((1, 2))
    if n == 2:
        return np.array([[-isd / 2, 0.0], [isd / 2, 0.0]])
    radius = isd / (2.0 * math.sin(math.pi / n))
    ang = math.pi / 2 + 2 * math.pi * np.arange(n) / n
    return radius * np.column_stack([np.cos(ang), np.sin(ang)])


def _inside_polygon(p, poly):
    # convex, counter-clockwise vertices
    nxt = np.roll(poly, -1, axis=0)
    cross = (nxt[:, 0] - poly[:, 0]) * (p[1] - poly[:, 1]) - (nxt[:, 1] - poly[:, 1]) * (p[0] - poly[:, 0])
    return bool(np.all(cross >= 0))


def place_users(config: ScenarioConfig, seed: int) -> np.ndarray:
    """User positions: configured ones, else uniform drops inside the cluster."""
    g = config.geometry
    if g.user_positions is not None:
        return np.asarray(g.user_positions, dtype=float)
    bs = bs_positions(config)
    rng = rng_for(seed, STREAM_PLACEMENT)
    n_bs = len(bs)
    radius = g.isd_m / 2 if n_bs < 3 else np.max(np.linalg.norm(bs, axis=1))
    center = bs.mean(axis=0)
    out = np.empty((config.n_users, 2))
    for u in range(config.n_users):
        for _ in range(100_000):
            r = radius * math.sqrt(rng.random())
            th = 2 * math.pi * rng.random()
            p = center + r * np.array([math.cos(th), math.sin(th)])
            if n_bs >= 3 and not _inside_polygon(p, bs):
                continue
            if np.min(np.linalg.norm(bs - p, axis=1)) >= g.min_distance_m:
                break
        else:  # pragma: no cover - only with absurd min_distance
            raise ConfigError("cannot place users this far from every BS",
                              "geometry.min_distance_m")
        out[u] = p
    return out


def pathloss_db(config: ScenarioConfig, users: np.ndarray) -> np.ndarray:
    g = config.geometry
    ref = g.pathloss_ref_db
    if ref is None:
        ref = 20.0 * math.log10(4.0 * math.pi * config.radio.carrier_hz / SPEED_OF_LIGHT)
    d = np.linalg.norm(users[:, None, :] - bs_positions(config)[None, :, :], axis=2)
    d = np.maximum(d, 1.0)
    return ref + 10.0 * g.pathloss_exponent * np.log10(d)


# --- temporal correlation ---------------------------------------------------

def correlation_coefficient(doppler_hz: float, slot_duration_s: float) -> float:
    """Lag-one fading correlation ``J0(2 pi f_D T)`` (Clarke/Jakes)."""
    return float(j0(2.0 * math.pi * doppler_hz * slot_duration_s))


def doppler_for_correlation(a: float, slot_duration_s: float) -> float:
    """Smallest Doppler frequency whose lag-one correlation equals ``a``."""
    if not 0.0 <= a <= 1.0:
        raise ValueError("a must lie in [0, 1]")
    first_zero = 2.404825557695773
    if a == 1.0:
        return 0.0
    x = first_zero if a == 0.0 else brentq(lambda x: float(j0(x)) - a, 0.0, first_zero)
    return x / (2.0 * math.pi * slot_duration_s)


def _cn(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def channel_sequence(config: ScenarioConfig, rng_seed: int,
                     doppler_hz: Optional[float] = None) -> Iterator[ChannelState]:
    """Yield the channel of slots 0, 1, 2, ... for one seed.

    ``doppler_hz`` overrides ``config.channel.doppler_hz``.
    """
    r = config.radio
    fd = config.channel.doppler_hz if doppler_hz is None else doppler_hz
    shape = (config.n_users, r.n_bs, r.n_rx_antennas, r.n_tx_antennas)
    pl = pathloss_db(config, place_users(config, rng_seed))
    amp = np.sqrt(db_to_linear(-pl))[:, :, None, None]
    a = correlation_coefficient(fd, config.slot_duration_s)
    innov = math.sqrt(max(0.0, 1.0 - a * a))
    g = _cn(rng_for(rng_seed, STREAM_FADING_INIT), shape)
    slot = 0
    while True:
        h = amp * g
        h.setflags(write=False)
        yield ChannelState(slot, h, fd, pl)
        slot += 1
        if innov > 0.0:
            g = a * g + innov * _cn(rng_for(rng_seed, STREAM_FADING_STEP, slot), shape)


def generate_channel(config: ScenarioConfig, rng_seed: int, slot: int,
                     doppler_hz: Optional[float] = None) -> ChannelState:
    """Channel at ``slot``; identical to the ``slot``-th item of :func:`channel_sequence`."""
    if slot < 0:
        raise ValueError("slot must be >= 0")
    for state in channel_sequence(config, rng_seed, doppler_hz):
        if state.slot == slot:
            return state
    raise AssertionError("unreachable")


# --- CSI --------------------------------------------------------------------

def quantize_uniform(x: np.ndarray, bits: int, clip: float | np.ndarray):
    """Mid-rise uniform quantizer with ``2**bits`` levels on ``[-clip, clip]``.

    Returns ``(values, level_indices, n_clipped)``.
    """
    if bits < 1:
        raise ValueError("bits must be >= 1")
    levels = 2 ** bits
    clip = np.asarray(clip, dtype=float)
    step = 2.0 * clip / levels
    n_clipped = int(np.count_nonzero(np.abs(x) > clip))
    idx = np.floor((np.clip(x, -clip, clip) + clip) / step)
    idx = np.clip(idx, 0, levels - 1)
    return -clip + (idx + 0.5) * step, idx.astype(np.int64), n_clipped


def _rank(m: np.ndarray, rtol: float = 1e-9) -> int:
    if m.shape[0] == 1:
        return int(np.any(m != 0))
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def quantize_csi(truth: ChannelState, quant_bits: int, user: int, *,
                 clip_sigma: float = 4.0,
                 tx_power_w: float = 1.0,
                 noise_var: float = 1.0,
                 mcs_thresholds_db: Sequence[float] = (),
                 feedback_interval_slots: int = 1) -> CsiReport:
    """Quantize the true channel of ``user`` into a fresh CSI report.

    Real and imaginary parts are quantized independently over
    ``[-c, c]`` with ``c = clip_sigma`` standard deviations of the per-BS
    coefficient. ``cqi`` counts the MCS thresholds met by the single-stream
    SNR ``tx_power_w * |h_hat|^2 / noise_var`` (0 = outage).
    """
    if quant_bits < 1:
        raise ValueError("quant_bits must be >= 1")
    h = truth.h[user]
    sigma = np.sqrt(db_to_linear(-truth.pathloss_db[user]) / 2.0)[:, None, None]
    clip = clip_sigma * sigma
    re, i_re, n1 = quantize_uniform(h.real, quant_bits, clip)
    im, i_im, n2 = quantize_uniform(h.imag, quant_bits, clip)
    h_hat = re + 1j * im
    h_hat.setflags(write=False)

    radix = 2 ** quant_bits
    pmi = 0
    for k in np.stack([i_re, i_im], axis=-1).ravel()[::-1].tolist():
        pmi = pmi * radix + k

    stacked = np.transpose(h_hat, (1, 0, 2)).reshape(h_hat.shape[1], -1)
    snr = tx_power_w * float(np.sum(np.abs(h_hat) ** 2)) / noise_var
    snr_db = 10 * math.log10(snr) if snr > 0 else -math.inf
    cqi = sum(1 for t in mcs_thresholds_db if snr_db >= t)
    return CsiReport(user=user, ri=max(1, _rank(stacked)), pmi=pmi, cqi=cqi, h_hat=h_hat,
                     quant_bits=quant_bits, age_slots=0,
                     feedback_interval_slots=feedback_interval_slots,
                     clip_count=n1 + n2, slot=truth.slot)


def _coherence(a: np.ndarray, b: np.ndarray) -> float:
    a = np.ravel(a)
    b = np.ravel(b)
    if a.shape != b.shape:
        raise ValueError("channels must have the same dimensions")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("zero-norm channel has no direction")
    c = float(np.real(np.vdot(a, b))) / (na * nb)
    return min(1.0, max(-1.0, c))


def estimate_coherence(h_t: ChannelState, h_s: ChannelState, user: int) -> float:
    """Normalized correlation ``Re<h_t, h_s> / (|h_t| |h_s|)`` of one user's channel."""
    return _coherence(h_t.h[user], h_s.h[user])


def report_coherence(new: CsiReport, old: CsiReport) -> float:
    """Same statistic evaluated on two CSI reports (what the BS can observe)."""
    return _coherence(new.h_hat, old.h_hat)


def adapt_feedback_interval(coherence: float, current_interval: int,
                            bounds: tuple[int, int], *,
                            high: float = 0.95, low: float = 0.80) -> int:
    """Double the interval on a coherent channel, halve it on a fast one."""
    lo, hi = bounds
    if not 1 <= lo <= current_interval <= hi:
        raise ValueError("need 1 <= min <= current <= max")
    if coherence >= high:
        return min(2 * current_interval, hi)
    if coherence <= low:
        return max(current_interval // 2, lo)
    return current_interval
