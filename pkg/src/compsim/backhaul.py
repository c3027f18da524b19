"""Backhaul accounting for JT (I/Q plus CSI) and CS/CB (CSI only)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "BackhaulBudget",
    "csi_bits_per_report",
    "csi_required_gbps",
    "jt_required_gbps",
    "cscb_required_gbps",
    "fit_iq_bits",
    "backhaul_latency_contribution",
    "iq_noise_factor",
    "reallocate_shares",
]

MAX_IQ_BITS = 16


@dataclass(frozen=True)
class BackhaulBudget:
    """Aggregate cluster backhaul and its split between the BSs.

    A capacity of zero is accepted and means no cooperation is possible.
    """

    capacity_gbps: float
    latency_ms: float = 0.5
    per_bs_share: tuple[float, ...] = (1 / 3, 1 / 3, 1 / 3)
    max_gbps: float = 240.0

    def __post_init__(self):
        share = tuple(float(s) for s in self.per_bs_share)
        object.__setattr__(self, "per_bs_share", share)
        if self.capacity_gbps < 0 or not math.isfinite(self.latency_ms) or self.latency_ms < 0:
            raise ValueError("capacity and latency must be >= 0")
        if self.capacity_gbps > self.max_gbps * (1 + 1e-12):
            raise ValueError(f"capacity {self.capacity_gbps} Gb/s exceeds the {self.max_gbps} Gb/s limit")
        if not share or any(s < 0 or s > 1 for s in share):
            raise ValueError("per_bs_share entries must lie in [0, 1]")
        if abs(sum(share) - 1.0) > 1e-9:
            raise ValueError("per_bs_share must sum to 1")

    @classmethod
    def equal(cls, capacity_gbps: float, n_bs: int, latency_ms: float = 0.5,
              max_gbps: float = 240.0) -> "BackhaulBudget":
        return cls(capacity_gbps, latency_ms, tuple([1.0 / n_bs] * n_bs), max_gbps)

    @property
    def n_bs(self) -> int:
        return len(self.per_bs_share)

    def share_gbps(self, bs: int) -> float:
        return self.capacity_gbps * self.per_bs_share[bs]


def csi_bits_per_report(quant_bits: int, n_tx: int, n_rx: int) -> int:
    """Bits for one user's quantized coefficients towards one BS."""
    return quant_bits * 2 * n_tx * n_rx


def csi_required_gbps(csi_bits_per_interval: float, interval_slots: int,
                      slot_duration_s: float = 1e-3) -> float:
    if interval_slots < 1:
        raise ValueError("interval_slots must be >= 1")
    return csi_bits_per_interval / (interval_slots * slot_duration_s) / 1e9


def jt_required_gbps(n_users: int, bandwidth_hz: float, iq_bits: int,
                     csi_bits_per_interval: float = 0.0, interval_slots: int = 1,
                     slot_duration_s: float = 1e-3) -> float:
    """Backhaul rate (Gb/s) for JT: complex I/Q samples at Nyquist plus CSI.

    Examples
    --------
    >>> round(jt_required_gbps(1, 30.725e6, 16), 3)
    0.983
    """
    if n_users < 0 or bandwidth_hz < 0 or iq_bits < 0:
        raise ValueError("arguments must be non-negative")
    iq = n_users * bandwidth_hz * 2.0 * iq_bits / 1e9
    return iq + csi_required_gbps(csi_bits_per_interval, interval_slots, slot_duration_s)


def cscb_required_gbps(csi_bits_per_interval: float, interval_slots: int = 1,
                       slot_duration_s: float = 1e-3) -> float:
    """CS/CB exchanges CSI only, whatever the user payload."""
    return csi_required_gbps(csi_bits_per_interval, interval_slots, slot_duration_s)


def fit_iq_bits(budget: BackhaulBudget, n_users: int, bandwidth_hz: float,
                csi_gbps: float = 0.0, max_bits: int = MAX_IQ_BITS) -> int:
    """Largest I/Q word length in ``[1, max_bits]`` whose JT load fits the
    budget; 0 when even one bit does not fit."""
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    per_bit = jt_required_gbps(n_users, bandwidth_hz, 1)
    room = budget.capacity_gbps - csi_gbps
    if per_bit <= 0:
        return max_bits if room >= 0 else 0
    if room <= 0:
        return 0
    bits = int(math.floor(room / per_bit * (1 + 1e-12)))
    return max(0, min(max_bits, bits))


def backhaul_latency_contribution(budget: BackhaulBudget, n_bytes: int,
                                  bs: Optional[int] = None) -> float:
    """Propagation plus serialization delay (ms) of ``n_bytes``.

    Serialization uses the whole cluster capacity, or the share of ``bs``.
    """
    if n_bytes < 0:
        raise ValueError("n_bytes must be >= 0")
    if n_bytes == 0:
        return float(budget.latency_ms)
    cap = budget.capacity_gbps if bs is None else budget.share_gbps(bs)
    if math.isinf(cap):
        return float(budget.latency_ms)
    if cap <= 0:
        return math.inf
    bits_per_ms = cap * 1e9 / 1e3
    return budget.latency_ms + n_bytes * 8 / bits_per_ms


def iq_noise_factor(bits: int, clip_sigma: float = 4.0) -> float:
    """Quantization noise of an I/Q sample relative to its power.

    Each component is quantized over ``[-k sigma, k sigma]`` with step
    ``Delta = 2 k sigma / 2**bits``; the noise ``Delta**2 / 12`` per
    component over the power ``sigma**2`` per component gives
    ``k**2 / (3 * 4**bits)``. Zero bits means nothing is sent (factor inf).
    """
    if bits <= 0:
        return math.inf
    return clip_sigma ** 2 / (3.0 * 4.0 ** bits)


def reallocate_shares(backlog_bits: Sequence[float], floor: float = 0.0) -> tuple[float, ...]:
    """Per-BS shares proportional to the traffic each BS must carry.

    ``floor`` reserves a minimum share per BS before the proportional split.
    An idle cluster falls back to an equal split.
    """
    b = np.maximum(np.asarray(backlog_bits, dtype=float), 0.0)
    n = len(b)
    if n == 0:
        raise ValueError("need at least one BS")
    if not 0.0 <= floor * n <= 1.0:
        raise ValueError("floor too large for this many BSs")
    total = b.sum()
    if total <= 0 or not np.isfinite(total):
        share = np.full(n, 1.0 / n)
    else:
        share = floor + (1.0 - floor * n) * b / total
    share = share / share.sum()
    return tuple(float(s) for s in share)
