"""Cooperative-ability evaluation, mode selection, user grouping and the
per-slot schedulers.

The KPI/KQI scheduler maximizes ``sum_u Q_u b_u - V sum_u I_u`` over a
candidate set of user groups. ``b_u`` is the playback time the predicted
delivery sustains and ``I_u`` the predicted KQI loss; both depend on the
quality level picked for each served user, so the quality level is part of
the decision. The KPI baseline maximizes predicted sum rate with
water-filling power on the same candidates and never changes quality.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .backhaul import (BackhaulBudget, csi_bits_per_report, fit_iq_bits, iq_noise_factor,
                       jt_required_gbps)
from .channel import ChannelState, CsiReport
from .config import ScenarioConfig
from .kqi import VideoSession, kqi_loss, predict_stalled
from .phy import (McsTable, Mode, Precoder, PrecodingError, bs_loads, compute_sinr,
                  cscb_precoder, effective_row, combiner, iq_quant_noise, jt_precoder,
                  rate_from_sinr, scale_to_power, serving_bs_for, validate_plan,
                  water_filling)

__all__ = [
    "UserQueue",
    "CooperativeAbility",
    "ClusterPlan",
    "SchedulerContext",
    "evaluate_ability",
    "select_mode",
    "channel_correlation",
    "group_users",
    "candidate_groups",
    "home_bs",
    "assign_clusters",
    "reported_state",
    "evaluate_group",
    "user_term",
    "schedule_slot_kqi",
    "schedule_slot_kpi",
    "update_queues",
    "check_plan",
]


@dataclass(frozen=True)
class UserQueue:
    """Lyapunov data queue of one user."""

    q_bits: float
    arrival_bps: float = 0.0
    priority: float = 1.0

    def __post_init__(self):
        if self.q_bits < 0 or self.arrival_bps < 0 or self.priority < 0:
            raise ValueError("queue, arrival rate and priority must be >= 0")


@dataclass(frozen=True)
class CooperativeAbility:
    """Per-BS resources of one cluster and the resulting cooperation score."""

    members: tuple[int, ...]
    backhaul_share_gbps: tuple[float, ...]
    n_antennas: tuple[int, ...]
    tx_power_dbm: tuple[float, ...]
    required_gbps: float
    score: float


@dataclass(frozen=True)
class ClusterPlan:
    """One slot's decision for every cluster.

    ``precoders[i]`` is ``None`` for an idle cluster. ``quality`` holds the
    quality level of every user after the decision, served or not.
    """

    clusters: tuple[tuple[int, ...], ...]
    modes: tuple[Mode, ...]
    groups: tuple[tuple[int, ...], ...]
    precoders: tuple[Optional[Precoder], ...]
    iq_bits: tuple[int, ...]
    mcs: Mapping = field(default_factory=dict)
    rate_bps: Mapping = field(default_factory=dict)
    predicted_sinr_db: Mapping = field(default_factory=dict)
    quality: Mapping = field(default_factory=dict)
    objective: float = 0.0

    @property
    def users(self) -> tuple[int, ...]:
        return tuple(sorted(u for g in self.groups for u in g))

    @property
    def is_empty(self) -> bool:
        return not self.users

    @property
    def precoder(self) -> Optional[Precoder]:
        """The single cluster's precoder (convenience for one-cluster runs)."""
        return self.precoders[0] if len(self.precoders) == 1 else None


@dataclass(frozen=True)
class SchedulerContext:
    """Static per-run inputs of the schedulers."""

    p_max_w: float
    noise_var_w: float
    bandwidth_hz: float
    table: McsTable
    slot_duration_s: float
    ladder_bps: tuple[float, ...]
    budget: BackhaulBudget
    n_tx: int = 4
    n_rx: int = 1
    alpha: float = 1.0
    beta: float = 0.25
    rebuffer_s: float = 2.0
    queue_unit_bits: float = 1e3
    max_group: int = 4
    corr_threshold: float = 0.7
    mode_threshold: float = 0.5
    force_mode: Optional[Mode] = None
    max_iq_bits: int = 16
    iq_clip_sigma: float = 4.0
    csi_bits: int = 8
    clusters: tuple[tuple[int, ...], ...] = ((0, 1, 2),)
    nominal_quality: int = -1
    adapt_quality: bool = True

    @classmethod
    def from_config(cls, config: ScenarioConfig,
                    budget: Optional[BackhaulBudget] = None) -> "SchedulerContext":
        r, s, v, b = config.radio, config.scheduler, config.video, config.backhaul
        if budget is None:
            budget = BackhaulBudget.equal(b.capacity_gbps, r.n_bs, b.latency_ms, b.max_gbps)
        clusters = s.clusters if s.clusters is not None else (tuple(range(r.n_bs)),)
        nominal = v.initial_quality % len(v.ladder_bps)
        return cls(p_max_w=r.tx_power_w, noise_var_w=r.noise_var_w,
                   bandwidth_hz=r.occupied_bandwidth_hz, table=McsTable.from_config(config),
                   slot_duration_s=config.slot_duration_s, ladder_bps=tuple(v.ladder_bps),
                   budget=budget, n_tx=r.n_tx_antennas, n_rx=r.n_rx_antennas,
                   alpha=v.alpha, beta=v.beta, rebuffer_s=v.rebuffer_s,
                   queue_unit_bits=s.queue_unit_bits, max_group=s.max_group,
                   corr_threshold=s.corr_threshold, mode_threshold=s.mode_threshold,
                   force_mode=None if s.force_mode is None else Mode(s.force_mode),
                   max_iq_bits=b.max_iq_bits, iq_clip_sigma=b.iq_clip_sigma,
                   csi_bits=config.channel.csi_bits,
                   clusters=tuple(tuple(c) for c in clusters), nominal_quality=nominal,
                   adapt_quality=s.adapt_quality)

    def with_budget(self, budget: BackhaulBudget) -> "SchedulerContext":
        return replace(self, budget=budget)

    @property
    def n_levels(self) -> int:
        return len(self.ladder_bps)


# --- ability and mode ------------------------------------------------------------

def evaluate_ability(ctx: SchedulerContext, budget: Optional[BackhaulBudget] = None,
                     members: Optional[Sequence[int]] = None,
                     tx_power_dbm: float = 20.0) -> CooperativeAbility:
    """Cooperation score of a cluster: the smallest ratio, over its BSs, of the
    backhaul share to the 16-bit JT load of a full group."""
    budget = ctx.budget if budget is None else budget
    members = tuple(range(budget.n_bs)) if members is None else tuple(members)
    shares = tuple(budget.share_gbps(b) for b in members)
    need = jt_required_gbps(ctx.max_group, ctx.bandwidth_hz, ctx.max_iq_bits)
    score = min(s / need for s in shares) if need > 0 else math.inf
    return CooperativeAbility(members, shares, tuple([ctx.n_tx] * len(members)),
                              tuple([tx_power_dbm] * len(members)), need, float(score))


def select_mode(ability: CooperativeAbility | float, threshold: float = 0.5) -> Mode:
    """JT when the score reaches the threshold (closed bound), else CS/CB."""
    if threshold <= 0:
        raise ValueError("threshold must be > 0")
    score = ability.score if isinstance(ability, CooperativeAbility) else float(ability)
    return Mode.JT if score >= threshold else Mode.CSCB


# --- grouping --------------------------------------------------------------------

def _row(report: CsiReport) -> np.ndarray:
    s = report.stacked()
    return effective_row(s, combiner(s))


def channel_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """``|<a, b>| / (|a| |b|)`` of two stacked channel rows."""
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(abs(np.vdot(a, b)) / (na * nb))


def _order(users, queues) -> list[int]:
    return sorted(users, key=lambda u: (-queues[u].priority * queues[u].q_bits, u))


def group_users(reports: Mapping[int, CsiReport] | Sequence[CsiReport],
                queues: Mapping[int, UserQueue] | Sequence[UserQueue],
                max_group: int, corr_threshold: float = 0.7,
                users: Optional[Sequence[int]] = None) -> tuple[int, ...]:
    """Greedy group in admission order.

    Users are visited by ``priority * Q`` descending (lower id first on ties)
    and admitted while the group has room and their channel correlation with
    every admitted user stays below ``corr_threshold``.
    """
    if max_group < 1:
        raise ValueError("max_group must be >= 1")
    reports = _as_map(reports)
    queues = _as_map(queues)
    users = sorted(reports) if users is None else list(users)
    rows = {u: _row(reports[u]) for u in users}
    group: list[int] = []
    for u in _order(users, queues):
        if len(group) >= max_group:
            break
        if all(channel_correlation(rows[u], rows[v]) < corr_threshold for v in group):
            group.append(u)
    return tuple(group)


def candidate_groups(reports, queues, max_group: int, corr_threshold: float = 0.7,
                     users: Optional[Sequence[int]] = None) -> list[tuple[int, ...]]:
    """Greedy group, its single-user swaps and its shorter prefixes.

    Groups are returned sorted and de-duplicated, in lexicographic order.
    """
    reports = _as_map(reports)
    queues = _as_map(queues)
    users = sorted(reports) if users is None else sorted(users)
    greedy = group_users(reports, queues, max_group, corr_threshold, users)
    if not greedy:
        return []
    out = {tuple(sorted(greedy))}
    outside = [u for u in users if u not in greedy]
    for i in range(len(greedy)):
        for j in outside:
            g = list(greedy)
            g[i] = j
            out.add(tuple(sorted(g)))
    for k in range(1, len(greedy)):
        out.add(tuple(sorted(greedy[:k])))
    return sorted(out)


def _as_map(x):
    if isinstance(x, Mapping):
        return x
    out = {}
    for i, item in enumerate(x):
        out[getattr(item, "user", i)] = item
    return out


# --- clusters ----------------------------------------------------------------------

def home_bs(report: CsiReport) -> int:
    return serving_bs_for(report)


def assign_clusters(reports: Mapping[int, CsiReport],
                    clusters: Sequence[Sequence[int]]) -> list[list[int]]:
    """Users of each cluster: those whose strongest reported BS belongs to it."""
    out: list[list[int]] = [[] for _ in clusters]
    where = {b: i for i, c in enumerate(clusters) for b in c}
    for u in sorted(reports):
        out[where[home_bs(reports[u])]].append(u)
    return out


def _mask(report: CsiReport, members: Sequence[int]) -> CsiReport:
    if len(members) == report.h_hat.shape[0]:
        return report
    h = np.zeros_like(report.h_hat)
    idx = list(members)
    h[idx] = report.h_hat[idx]
    return replace(report, h_hat=h)


def reported_state(reports: Mapping[int, CsiReport], n_users: Optional[int] = None,
                   members: Optional[Sequence[int]] = None) -> ChannelState:
    """The channel as the controller believes it to be, in ChannelState form."""
    any_r = next(iter(reports.values()))
    n_users = (max(reports) + 1) if n_users is None else n_users
    h = np.zeros((n_users,) + any_r.h_hat.shape, dtype=complex)
    for u, r in reports.items():
        h[u] = r.h_hat
    if members is not None and len(members) != h.shape[1]:
        keep = np.zeros(h.shape[1], dtype=bool)
        keep[list(members)] = True
        h[:, ~keep] = 0
    return ChannelState(any_r.slot, h, 0.0, np.zeros(h.shape[:2]))


# --- candidate evaluation ------------------------------------------------------------

@dataclass(frozen=True)
class _Eval:
    group: tuple[int, ...]
    precoder: Precoder
    sinr_db: np.ndarray
    rates: np.ndarray
    mcs: tuple
    iq_bits: int


def _csi_gbps(ctx: SchedulerContext, n_cluster_users: int, n_members: int,
              interval: int) -> float:
    if n_members <= 1:
        return 0.0
    bits = csi_bits_per_report(ctx.csi_bits, ctx.n_tx, ctx.n_rx) * n_members * n_cluster_users
    return bits / (interval * ctx.slot_duration_s) / 1e9


def _cluster_budget(ctx: SchedulerContext, members: Sequence[int]) -> float:
    return ctx.budget.capacity_gbps * sum(ctx.budget.per_bs_share[b] for b in members)


def evaluate_group(group: Sequence[int], mode: Mode, reports: Mapping[int, CsiReport],
                   ctx: SchedulerContext, members: Optional[Sequence[int]] = None,
                   believed: Optional[ChannelState] = None, *, water_fill: bool = False,
                   n_cluster_users: Optional[int] = None) -> Optional[_Eval]:
    """Precoder, predicted SINR and MCS of one candidate; ``None`` if infeasible.

    Predictions use the reported channels, include I/Q quantization noise
    and ignore carrier-offset ICI.
    """
    group = tuple(sorted(group))
    members = tuple(range(ctx.budget.n_bs)) if members is None else tuple(members)
    if believed is None:
        believed = reported_state(reports, members=members)
    reps = [_mask(reports[u], members) for u in group]
    interval = max(r.feedback_interval_slots for r in reps)
    n_cu = len(group) if n_cluster_users is None else n_cluster_users
    room = _cluster_budget(ctx, members)
    csi = _csi_gbps(ctx, n_cu, len(members), interval)
    if len(members) > 1 and csi > room:
        return None
    try:
        if mode == Mode.JT:
            if len(members) > 1:
                bits = fit_iq_bits(BackhaulBudget(room, 0.0, (1.0,), max(room, 1e-300)),
                                   len(group) * len(members), ctx.bandwidth_hz, csi,
                                   ctx.max_iq_bits)
                if bits == 0:
                    return None
            else:
                bits = ctx.max_iq_bits
            factor = iq_noise_factor(bits, ctx.iq_clip_sigma) if len(members) > 1 else 0.0
            plan = jt_precoder(reps, ctx.p_max_w)
            if water_fill:
                plan = _wf_jt(plan, believed, ctx, len(members))
        else:
            bits = 0
            factor = 0.0
            serving = [members[int(np.argmax([np.sum(np.abs(r.h_hat[b]) ** 2) for b in members]))]
                       for r in reps]
            plan = cscb_precoder(reps, ctx.p_max_w, serving)
            if water_fill:
                plan = _wf_cscb(plan, believed, ctx)
    except PrecodingError:
        return None
    q = iq_quant_noise(believed, plan, factor) if factor else 0.0
    sinr = compute_sinr(believed, plan, (1.0, 0.0), q, ctx.noise_var_w)
    mcs = []
    rates = np.zeros(len(group))
    for k, s in enumerate(sinr):
        m, r = rate_from_sinr(float(s), ctx.table, ctx.bandwidth_hz)
        mcs.append(m)
        rates[k] = r
    return _Eval(group, plan, sinr, rates, tuple(mcs), bits)


def _gains(believed: ChannelState, plan: Precoder, noise: float) -> np.ndarray:
    rows = np.array([believed.stacked(u)[0] if not plan.combiners else
                     effective_row(believed.stacked(u), plan.combiners[k])
                     for k, u in enumerate(plan.users)])
    return np.abs(np.sum(rows * plan.w.T, axis=1)) ** 2 / noise


def _wf_jt(plan: Precoder, believed: ChannelState, ctx: SchedulerContext, n_members: int) -> Precoder:
    g = _gains(believed, plan, ctx.noise_var_w)
    if not np.any(g > 0):
        return plan
    p = water_filling(g, ctx.p_max_w * n_members)
    return plan.with_power(scale_to_power(plan.w, p, plan.n_t, ctx.p_max_w))


def _wf_cscb(plan: Precoder, believed: ChannelState, ctx: SchedulerContext) -> Precoder:
    g = _gains(believed, plan, ctx.noise_var_w)
    power = np.zeros(len(plan.users))
    for b in sorted(set(plan.serving_bs)):
        idx = [k for k, s in enumerate(plan.serving_bs) if s == b]
        if np.any(g[idx] > 0):
            power[idx] = water_filling(g[idx], ctx.p_max_w)
    return plan.with_power(power)


# --- objective ---------------------------------------------------------------------

def user_term(q_bits: float, session: VideoSession, rate_bps: float, level: int,
              V: float, ctx: SchedulerContext) -> float:
    """``Q b - V I`` of one user served at ``rate_bps`` with quality ``level``."""
    delivered = min(rate_bps * ctx.slot_duration_s, q_bits)
    b = delivered / ctx.ladder_bps[level]
    stalled = predict_stalled(session, delivered, level, ctx.slot_duration_s,
                              ctx.ladder_bps, ctx.rebuffer_s)
    loss = kqi_loss(session, (stalled, level), alpha=ctx.alpha, beta=ctx.beta,
                    n_levels=ctx.n_levels)
    return (q_bits / ctx.queue_unit_bits) * b - V * loss


def _best_level(q_bits, session, rate, V, ctx) -> tuple[float, int]:
    best = (-math.inf, 0)
    for lv in range(ctx.n_levels):
        val = user_term(q_bits, session, rate, lv, V, ctx)
        # ties go to the higher quality
        if val >= best[0]:
            best = (val, lv)
    return best


def _modes_for(ctx: SchedulerContext, ability, i: int, modes) -> list[Mode]:
    if modes is not None:
        m = modes if len(ctx.clusters) == 1 else modes[i]
        return [Mode(x) for x in m]
    if ctx.force_mode is not None:
        return [ctx.force_mode]
    ab = ability[i] if isinstance(ability, (list, tuple)) else ability
    if ab is None:
        return [Mode.JT]
    return [select_mode(ab, ctx.mode_threshold)]


def _cluster_users(reports, ctx):
    if len(ctx.clusters) == 1:
        return [sorted(reports)]
    return assign_clusters(reports, ctx.clusters)


def _queue_map(queues):
    q = _as_map(queues)
    return {u: (v if isinstance(v, UserQueue) else UserQueue(float(v))) for u, v in q.items()}


def schedule_slot_kqi(queues, sessions, reports, ability, V: float,
                      ctx: SchedulerContext, *, candidates=None, modes=None) -> ClusterPlan:
    """Drift-plus-penalty decision for one slot.

    For each cluster, every candidate group and mode is evaluated; each
    served user takes the quality level maximizing its own ``Q b - V I`` and
    unserved users keep their level with nothing delivered. The candidate
    with the largest total wins, ties going to the lexicographically
    smallest user set.

    ``candidates`` (list of groups, or one list per cluster) and ``modes``
    override the generated candidates and :func:`select_mode`.
    """
    if V < 0:
        raise ValueError("V must be >= 0")
    queues = _queue_map(queues)
    sessions = _as_map(sessions)
    reports = _as_map(reports)
    quality = {u: sessions[u].quality_level for u in sessions}
    idle_terms = {u: user_term(queues[u].q_bits, sessions[u], 0.0, quality[u], V, ctx)
                  for u in reports}

    def score(ev: _Eval):
        total = 0.0
        levels = {}
        for k, u in enumerate(ev.group):
            if ctx.adapt_quality:
                val, lv = _best_level(queues[u].q_bits, sessions[u], ev.rates[k], V, ctx)
            else:
                lv = quality[u]
                val = user_term(queues[u].q_bits, sessions[u], ev.rates[k], lv, V, ctx)
            total += val - idle_terms[u]
            levels[u] = lv
        return total, levels

    return _schedule(queues, reports, ability, ctx, candidates, modes, score, quality,
                     base=sum(idle_terms.values()), water_fill=False)


def schedule_slot_kpi(queues, reports, ability, ctx: SchedulerContext, *,
                      candidates=None, modes=None, sessions=None) -> ClusterPlan:
    """Sum-rate baseline: water-filling power, largest predicted sum rate.

    Quality levels stay at their current value (the nominal level when no
    sessions are given).
    """
    queues = _queue_map(queues)
    reports = _as_map(reports)
    if sessions is not None:
        quality = {u: s.quality_level for u, s in _as_map(sessions).items()}
    else:
        quality = {u: ctx.nominal_quality for u in reports}

    def score(ev: _Eval):
        return float(np.sum(ev.rates)), {}

    return _schedule(queues, reports, ability, ctx, candidates, modes, score, quality,
                     base=0.0, water_fill=True)


def _schedule(queues, reports, ability, ctx, candidates, modes, score, quality, *,
              base, water_fill) -> ClusterPlan:
    clusters = ctx.clusters
    per_cluster = _cluster_users(reports, ctx)
    out_modes, out_groups, out_prec, out_bits = [], [], [], []
    mcs, rates, sinrs = {}, {}, {}
    quality = dict(quality)
    objective = base
    for i, members in enumerate(clusters):
        active = [u for u in per_cluster[i] if queues[u].q_bits > 0]
        if candidates is not None:
            cands = candidates if len(clusters) == 1 else candidates[i]
            cands = sorted({tuple(sorted(g)) for g in cands if g})
        else:
            cands = candidate_groups({u: reports[u] for u in active}, queues,
                                     ctx.max_group, ctx.corr_threshold, active) if active else []
        believed = reported_state(reports, members=members) if cands else None
        best = None
        for mode in _modes_for(ctx, ability, i, modes):
            for g in cands:
                ev = evaluate_group(g, mode, reports, ctx, members, believed,
                                    water_fill=water_fill, n_cluster_users=len(per_cluster[i]))
                if ev is None:
                    continue
                val, levels = score(ev)
                if best is None or val > best[0] or (val == best[0] and g < best[1].group):
                    best = (val, ev, mode, levels)
        if best is None:
            out_modes.append(_modes_for(ctx, ability, i, modes)[0])
            out_groups.append(())
            out_prec.append(None)
            out_bits.append(0)
            continue
        val, ev, mode, levels = best
        objective += val
        out_modes.append(mode)
        out_groups.append(ev.group)
        out_prec.append(ev.precoder)
        out_bits.append(ev.iq_bits)
        quality.update(levels)
        for k, u in enumerate(ev.group):
            mcs[u] = ev.mcs[k]
            rates[u] = float(ev.rates[k])
            sinrs[u] = float(ev.sinr_db[k])
    return ClusterPlan(tuple(tuple(c) for c in clusters), tuple(out_modes), tuple(out_groups),
                       tuple(out_prec), tuple(out_bits), mcs, rates, sinrs, quality, objective)


# --- queues and feasibility ---------------------------------------------------------

def update_queues(queues, plan: Optional[ClusterPlan], served_bits, arrivals_bits):
    """``Q' = max(Q - served, 0) + arrivals`` for every user."""
    qmap = _queue_map(queues)
    served = _as_map(served_bits) if not isinstance(served_bits, Mapping) else served_bits
    arr = _as_map(arrivals_bits) if not isinstance(arrivals_bits, Mapping) else arrivals_bits
    out = {}
    for u, q in qmap.items():
        s = float(served.get(u, 0.0))
        a = float(arr.get(u, 0.0))
        if s < 0 or a < 0:
            raise ValueError("served and arrival bits must be >= 0")
        out[u] = replace(q, q_bits=max(q.q_bits - s, 0.0) + a)
    if isinstance(queues, Mapping):
        return out
    return [out[u] for u in sorted(out)]


def check_plan(plan: ClusterPlan, ctx: SchedulerContext) -> list[str]:
    """DoF, power and backhaul problems of a plan (empty when feasible)."""
    issues = []
    seen = set()
    for members, mode, group, prec, bits in zip(plan.clusters, plan.modes, plan.groups,
                                                plan.precoders, plan.iq_bits):
        if prec is None:
            if group:
                issues.append("served group without a precoder")
            continue
        if seen & set(group):
            issues.append("user served by two clusters")
        seen |= set(group)
        issues += validate_plan(prec, ctx.p_max_w, max_streams=ctx.max_group)
        loads = bs_loads(prec.w, prec.power, prec.n_t)
        outside = [b for b in range(len(loads)) if b not in members and loads[b] > 0]
        if outside:
            issues.append(f"cluster {members} transmits from BS {outside}")
        if mode == Mode.JT and len(members) > 1:
            need = jt_required_gbps(len(group) * len(members), ctx.bandwidth_hz, bits)
            if bits < 1 or need > _cluster_budget(ctx, members) * (1 + 1e-9):
                issues.append(f"JT load {need:.6g} Gb/s exceeds the cluster backhaul")
    return issues
