"""Precoding, SINR evaluation, water-filling and MCS mapping.

Channels of a user towards the whole cluster are handled as one row of
length ``n_bs * n_t`` (BS-major antenna order). With several receive
antennas the row is the channel seen after maximum-ratio combining with the
dominant left singular vector of the reported channel.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .channel import ChannelState, CsiReport, DegenerateInputError
from .config import McsEntry, ScenarioConfig

__all__ = [
    "Mode",
    "PrecodingError",
    "InsufficientDofError",
    "Precoder",
    "McsTable",
    "combiner",
    "effective_row",
    "jt_precoder",
    "cscb_beamformer",
    "cscb_precoder",
    "serving_bs_for",
    "scale_to_power",
    "bs_loads",
    "compute_sinr",
    "iq_quant_noise",
    "water_filling",
    "rate_from_sinr",
    "validate_plan",
]

RANK_TOL = 1e-9


class Mode(str, enum.Enum):
    JT = "JT"
    CSCB = "CSCB"


class PrecodingError(ValueError):
    """The reported channels of the group cannot be separated."""


class InsufficientDofError(PrecodingError):
    """Too many users to null with the serving BS antennas."""


@dataclass(frozen=True)
class Precoder:
    """Beamformers and stream powers of one cluster in one slot.

    ``w`` is ``(n_bs * n_t, K)`` with unit-norm columns. For CS/CB each column
    is zero outside the antenna block of ``serving_bs[k]``. ``combiners``
    holds the receive vector of every user (length ``n_r``).
    """

    mode: Mode
    users: tuple[int, ...]
    w: np.ndarray
    power: np.ndarray
    n_t: int
    combiners: tuple[np.ndarray, ...] = ()
    serving_bs: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(int(u) for u in self.users))
        object.__setattr__(self, "power", np.asarray(self.power, dtype=float))
        if self.w.shape[1] != len(self.users) or self.power.shape != (len(self.users),):
            raise ValueError("one precoder column and one power per user")
        if np.any(self.power < 0):
            raise ValueError("powers must be >= 0")

    @property
    def n_bs(self) -> int:
        return self.w.shape[0] // self.n_t

    def with_power(self, power) -> "Precoder":
        return Precoder(self.mode, self.users, self.w, np.asarray(power, dtype=float),
                        self.n_t, self.combiners, self.serving_bs)


@dataclass(frozen=True)
class McsTable:
    """Ordered MCS entries; thresholds and rates both strictly increase."""

    entries: tuple[McsEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        e = tuple(self.entries)
        object.__setattr__(self, "entries", e)
        if not e:
            raise ValueError("MCS table is empty")
        for a, b in zip(e, e[1:]):
            if not (b.min_sinr_db > a.min_sinr_db and b.effective_bits > a.effective_bits):
                raise ValueError("MCS thresholds and rates must strictly increase")

    @classmethod
    def from_config(cls, config: ScenarioConfig) -> "McsTable":
        return cls(tuple(config.radio.mcs))

    @property
    def thresholds_db(self) -> tuple[float, ...]:
        return tuple(m.min_sinr_db for m in self.entries)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


# --- channel rows -------------------------------------------------------------

def combiner(stacked: np.ndarray) -> np.ndarray:
    """Unit receive vector matched to the strongest direction of ``stacked``."""
    if stacked.shape[0] == 1:
        return np.ones(1, dtype=complex)
    u, _, _ = np.linalg.svd(stacked)
    return u[:, 0]


def effective_row(stacked: np.ndarray, comb: np.ndarray) -> np.ndarray:
    if stacked.shape[0] == 1:
        return stacked[0] * comb[0].conj()
    return comb.conj() @ stacked


def _report_rows(reports: Sequence[CsiReport]):
    combs = []
    rows = []
    for r in reports:
        s = r.stacked()
        c = combiner(s)
        combs.append(c)
        rows.append(effective_row(s, c))
    return np.array(rows), tuple(combs)


# --- precoders ----------------------------------------------------------------

def bs_loads(w: np.ndarray, power: np.ndarray, n_t: int) -> np.ndarray:
    """Transmit power of every BS: sum over streams of block norm^2 times power."""
    per_antenna = (np.abs(w) ** 2) @ power
    return per_antenna.reshape(-1, n_t).sum(axis=1)


def scale_to_power(w: np.ndarray, weights: np.ndarray, n_t: int, p_max_w: float) -> np.ndarray:
    """Scale ``weights`` uniformly so the most loaded BS sits exactly at ``p_max_w``."""
    weights = np.asarray(weights, dtype=float)
    load = bs_loads(w, weights, n_t)
    peak = float(np.max(load)) if load.size else 0.0
    if peak <= 0:
        return np.zeros_like(weights)
    return weights * (p_max_w / peak)


def jt_precoder(reports: Sequence[CsiReport], p_max_w: float,
                weights: Optional[Sequence[float]] = None) -> Precoder:
    """Zero-forcing joint transmission from the reported channels.

    ``W = H^H (H H^H)^-1`` with unit-norm columns; the stream powers
    (``weights``, equal by default) are then scaled by one common factor
    so that no BS exceeds ``p_max_w`` and the binding BS meets it.

    Raises
    ------
    PrecodingError
        If the stacked reported channel is rank deficient.
    """
    if not reports:
        raise ValueError("empty group")
    n_t = reports[0].h_hat.shape[2]
    h, combs = _report_rows(reports)
    k, m = h.shape
    if k > m:
        raise PrecodingError(f"{k} users exceed {m} coordinated antennas")
    u, s, vh = np.linalg.svd(h, full_matrices=False)
    if s[0] == 0 or s[-1] < RANK_TOL * s[0]:
        raise PrecodingError("reported channels are rank deficient")
    # H^H (H H^H)^-1 through the SVD of H
    w = (vh.conj().T / s) @ u.conj().T
    w = w / np.sqrt(np.sum(np.abs(w) ** 2, axis=0, keepdims=True))
    weights = np.ones(k) if weights is None else np.asarray(weights, dtype=float)
    power = scale_to_power(w, weights, n_t, p_max_w)
    return Precoder(Mode.JT, tuple(r.user for r in reports), w, power, n_t, combs)


def _null_projector(victims: np.ndarray, n_t: int) -> np.ndarray:
    if victims.shape[0] == 0:
        return np.eye(n_t, dtype=complex)
    # orthonormal basis of the row space of the victims via SVD
    _, s, vh = np.linalg.svd(victims)
    r = int(np.count_nonzero(s > RANK_TOL * s[0])) if s.size and s[0] > 0 else 0
    basis = vh[:r].conj().T
    return np.eye(n_t, dtype=complex) - basis @ basis.conj().T


def cscb_beamformer(serving_report: CsiReport, victim_reports: Sequence[CsiReport],
                    serving_bs: int, p_max_w: float = 1.0) -> Precoder:
    """Null-steering beam of one BS towards one user.

    The matched filter ``h^H`` of the serving link is projected onto the null
    space of the victims' channels from the same BS and normalized; the full
    BS power goes to this single stream.

    Raises
    ------
    InsufficientDofError
        If there are at least as many victims as transmit antennas.
    """
    n_bs, n_r, n_t = serving_report.h_hat.shape
    if len(victim_reports) >= n_t:
        raise InsufficientDofError(f"{len(victim_reports)} victims need more than {n_t} antennas")
    comb = combiner(serving_report.stacked())
    h = comb.conj() @ serving_report.h_hat[serving_bs]
    vic = []
    for r in victim_reports:
        c = combiner(r.stacked())
        vic.append(c.conj() @ r.h_hat[serving_bs])
    vic = np.array(vic).reshape(-1, n_t)
    v = _null_projector(vic, n_t) @ h.conj()
    norm = np.linalg.norm(v)
    if norm <= RANK_TOL * max(np.linalg.norm(h), 1e-300):
        raise PrecodingError("serving channel lies in the victims' span")
    w = np.zeros((n_bs * n_t, 1), dtype=complex)
    w[serving_bs * n_t:(serving_bs + 1) * n_t, 0] = v / norm
    return Precoder(Mode.CSCB, (serving_report.user,), w, np.array([p_max_w]), n_t,
                    (comb,), (serving_bs,))


def serving_bs_for(report: CsiReport) -> int:
    """BS with the strongest reported channel; lowest index on ties."""
    norms = np.sum(np.abs(report.h_hat) ** 2, axis=(1, 2))
    return int(np.argmax(norms))


def cscb_precoder(reports: Sequence[CsiReport], p_max_w: float,
                  serving: Optional[Sequence[int]] = None,
                  weights: Optional[Sequence[float]] = None) -> Precoder:
    """CS/CB for a whole group: every user gets a null-steering beam from its
    serving BS that protects all other group members.

    Each BS splits ``p_max_w`` over its own users in proportion to
    ``weights`` (equal by default).
    """
    if not reports:
        raise ValueError("empty group")
    serving = [serving_bs_for(r) for r in reports] if serving is None else list(serving)
    cols = []
    combs = []
    for i, r in enumerate(reports):
        victims = [v for j, v in enumerate(reports) if j != i]
        b = cscb_beamformer(r, victims, serving[i], 1.0)
        cols.append(b.w[:, 0])
        combs.append(b.combiners[0])
    w = np.column_stack(cols)
    weights = np.ones(len(reports)) if weights is None else np.asarray(weights, dtype=float)
    power = np.zeros(len(reports))
    for b in set(serving):
        idx = [i for i, s in enumerate(serving) if s == b]
        tot = weights[idx].sum()
        if tot > 0:
            power[idx] = p_max_w * weights[idx] / tot
    n_t = reports[0].h_hat.shape[2]
    return Precoder(Mode.CSCB, tuple(r.user for r in reports), w, power, n_t,
                    tuple(combs), tuple(serving))


# --- SINR -----------------------------------------------------------------------

def _true_rows(truth: ChannelState, plan: Precoder) -> np.ndarray:
    rows = []
    for k, u in enumerate(plan.users):
        c = plan.combiners[k] if plan.combiners else np.ones(1, dtype=complex)
        rows.append(effective_row(truth.stacked(u), c))
    return np.array(rows)


def iq_quant_noise(truth: ChannelState, plan: Precoder, factor: float) -> np.ndarray:
    """Received power of the I/Q quantization noise at each planned user.

    Every transmit antenna adds independent noise of ``factor`` times its own
    transmit power.
    """
    if factor == 0:
        return np.zeros(len(plan.users))
    per_antenna = (np.abs(plan.w) ** 2) @ plan.power
    rows = _true_rows(truth, plan)
    return factor * (np.abs(rows) ** 2) @ per_antenna


def compute_sinr(truth: ChannelState, plan: Precoder,
                 ici: tuple[float, float] = (1.0, 0.0),
                 quant_noise_var=0.0, noise_var: float = 1.0) -> np.ndarray:
    """Per-user SINR (dB) of ``plan`` over the true channel.

    ``SINR_u = g |h_u w_u|^2 p_u / (sum_{v != u} |h_u w_v|^2 p_v + i S_u + q_u + N)``
    with ``(g, i) = ici`` for JT and ``(1, 0)`` for CS/CB, and ``S_u`` the
    total power received by user ``u`` from the cluster.
    """
    if plan.mode == Mode.CSCB:
        gain, interf = 1.0, 0.0
    else:
        gain, interf = ici
    rows = _true_rows(truth, plan)
    rx = np.abs(rows @ plan.w) ** 2 * plan.power[None, :]
    sig = np.diag(rx).copy()
    cross = rx.sum(axis=1) - sig
    total = rx.sum(axis=1)
    q = np.broadcast_to(np.asarray(quant_noise_var, dtype=float), sig.shape)
    num = gain * sig
    den = cross + interf * total + q + noise_var
    with np.errstate(divide="ignore"):
        out = np.where(num > 0, 10.0 * np.log10(np.where(num > 0, num, 1.0) / den), -np.inf)
    return out


# --- power and rate --------------------------------------------------------------

def water_filling(gains: Sequence[float], total_power: float) -> np.ndarray:
    """Power split maximizing ``sum log(1 + g_i p_i)`` under ``sum p_i = P``.

    Solved exactly: with channels sorted by gain, the active set is the
    largest prefix whose water level ``mu = (P + sum 1/g) / k`` clears every
    active floor ``1/g_i``.
    """
    g = np.asarray(gains, dtype=float)
    if np.any(g < 0) or not np.all(np.isfinite(g)):
        raise ValueError("gains must be finite and >= 0")
    if total_power <= 0:
        raise ValueError("total_power must be > 0")
    if not np.any(g > 0):
        raise DegenerateInputError("all channel gains are zero")
    order = np.argsort(-g, kind="stable")
    inv = np.array([1.0 / g[i] if g[i] > 0 else np.inf for i in order])
    mu = 0.0
    k = 0
    csum = 0.0
    for j in range(len(order)):
        if not np.isfinite(inv[j]):
            break
        cand = (total_power + csum + inv[j]) / (j + 1)
        if cand <= inv[j]:
            break
        csum += inv[j]
        k = j + 1
        mu = cand
    p = np.zeros_like(g)
    for j in range(k):
        p[order[j]] = mu - inv[j]
    # exact budget despite rounding
    p *= total_power / p.sum()
    return p


def rate_from_sinr(sinr_db: float, table: McsTable, bandwidth_hz: float):
    """Highest MCS whose threshold is met (closed bound) and its bit rate.

    Returns ``(None, 0.0)`` in outage.
    """
    chosen = None
    for m in table:
        if sinr_db >= m.min_sinr_db:
            chosen = m
    if chosen is None:
        return None, 0.0
    return chosen, chosen.effective_bits * bandwidth_hz


def validate_plan(plan: Precoder, p_max_w: float, *, rtol: float = 1e-9,
                  max_streams: Optional[int] = None) -> list[str]:
    """Feasibility problems of ``plan`` (empty list when feasible)."""
    issues = []
    loads = bs_loads(plan.w, plan.power, plan.n_t)
    if np.any(loads > p_max_w * (1 + rtol)):
        issues.append(f"BS power {loads.max():.6g} W exceeds {p_max_w:.6g} W")
    dof = plan.w.shape[0] if plan.mode == Mode.JT else plan.n_t
    if len(plan.users) > dof:
        issues.append(f"{len(plan.users)} streams exceed {dof} degrees of freedom")
    if max_streams is not None and len(plan.users) > max_streams:
        issues.append(f"group of {len(plan.users)} exceeds the limit {max_streams}")
    if len(set(plan.users)) != len(plan.users):
        issues.append("user scheduled twice")
    if plan.mode == Mode.CSCB:
        for k, b in enumerate(plan.serving_bs or ()):
            outside = np.delete(plan.w[:, k].reshape(-1, plan.n_t), b, axis=0)
            if np.any(outside != 0):
                issues.append(f"CS/CB stream {k} leaks onto a non-serving BS")
    return issues
