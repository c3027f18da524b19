"""BS clock offsets, master-slave over-the-air sync and the resulting ICI."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SyncError",
    "ClockModel",
    "draw_clocks",
    "offset_hz",
    "master_slave_sync",
    "ici_factors",
    "cluster_offset_hz",
    "timing_penalty_db",
]


class SyncError(RuntimeError):
    """The slaves could not hear the master beacon."""


@dataclass(frozen=True)
class ClockModel:
    """Per-BS frequency (ppb of the carrier) and timing (us) offsets."""

    freq_offset_ppb: np.ndarray
    time_offset_us: np.ndarray
    carrier_hz: float = 3.5e9
    master_bs: int = 0

    def __post_init__(self):
        for name in ("freq_offset_ppb", "time_offset_us"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.freq_offset_ppb.shape != self.time_offset_us.shape:
            raise ValueError("one frequency and one timing offset per BS")
        if not 0 <= self.master_bs < len(self.freq_offset_ppb):
            raise ValueError("master_bs must name a BS")

    @property
    def n_bs(self) -> int:
        return len(self.freq_offset_ppb)

    @property
    def freq_offset_hz(self) -> np.ndarray:
        return offset_hz(self.freq_offset_ppb, self.carrier_hz)


def draw_clocks(n_bs: int, rng: np.random.Generator, *,
                accuracy_ppb: tuple[float, float] = (20.0, 75.0),
                time_offset_max_us: float = 3.0,
                carrier_hz: float = 3.5e9, master_bs: int = 0) -> ClockModel:
    """Free-running GPS-disciplined clocks: magnitude uniform in the accuracy
    range with a random sign; timing uniform in the open interval."""
    lo, hi = accuracy_ppb
    mag = rng.uniform(lo, hi, n_bs)
    sign = np.where(rng.random(n_bs) < 0.5, -1.0, 1.0)
    t = rng.uniform(-time_offset_max_us, time_offset_max_us, n_bs)
    return ClockModel(sign * mag, t, carrier_hz, master_bs)


def offset_hz(ppb, carrier_hz: float):
    """Frequency offset in Hz of a clock that is ``ppb`` parts per billion off."""
    if np.any(np.asarray(carrier_hz) <= 0):
        raise ValueError("carrier_hz must be > 0")
    return ppb * carrier_hz / 1e9


def master_slave_sync(clocks: ClockModel, beacon_snr_db: float,
                      rng: Optional[np.random.Generator] = None, *,
                      sigma0_hz: float = 5.0, sigma0_time_us: float = 0.5) -> ClockModel:
    """Align every slave to the master from one beacon.

    After compensation a slave keeps only its estimation error, Gaussian with
    standard deviation ``sigma0 / sqrt(snr)``; the master is the reference
    (offset 0). Timing residuals use ``sigma0_time_us`` the same way.
    """
    if clocks.n_bs <= 1:
        return clocks
    if beacon_snr_db == -math.inf:
        raise SyncError("no beacon received; clocks left unsynchronized")
    snr = 10.0 ** (beacon_snr_db / 10.0)
    sigma_hz = sigma0_hz / math.sqrt(snr)
    sigma_us = sigma0_time_us / math.sqrt(snr)
    n = clocks.n_bs
    freq_hz = np.zeros(n)
    time_us = np.zeros(n)
    if sigma_hz > 0 or sigma_us > 0:
        if rng is None:
            rng = np.random.default_rng()
        e_f = rng.standard_normal(n)
        e_t = rng.standard_normal(n)
        freq_hz = sigma_hz * e_f
        time_us = np.clip(sigma_us * e_t, -0.999 * 3.0, 0.999 * 3.0)
    freq_hz[clocks.master_bs] = 0.0
    time_us[clocks.master_bs] = 0.0
    return ClockModel(freq_hz * 1e9 / clocks.carrier_hz, time_us,
                      clocks.carrier_hz, clocks.master_bs)


def ici_factors(delta_f_hz: float, subcarrier_spacing_hz: float) -> tuple[float, float]:
    """OFDM carrier-offset attenuation: ``(sinc^2(d), 1 - sinc^2(d))`` with
    ``d = delta_f / spacing``."""
    if subcarrier_spacing_hz <= 0:
        raise ValueError("subcarrier_spacing_hz must be > 0")
    d = float(delta_f_hz) / subcarrier_spacing_hz
    if d != 0.0 and d == round(d):
        gain = 0.0
    else:
        gain = float(np.sinc(d)) ** 2
    return gain, 1.0 - gain


def cluster_offset_hz(clocks: ClockModel, members: Optional[Sequence[int]] = None) -> float:
    """Largest pairwise frequency offset among the cluster members."""
    f = clocks.freq_offset_hz
    if members is not None:
        f = f[list(members)]
    if len(f) < 2:
        return 0.0
    return float(np.max(f) - np.min(f))


def timing_penalty_db(clocks: ClockModel, cp_us: float, penalty_db: float = -10.0,
                      members: Optional[Sequence[int]] = None) -> float:
    """0 dB while every member's timing error fits in the cyclic prefix."""
    t = clocks.time_offset_us
    if members is not None:
        t = t[list(members)]
    if len(t) < 2 or float(np.max(np.abs(t))) < cp_us:
        return 0.0
    return penalty_db
