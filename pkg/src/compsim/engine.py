"""Slot loop wiring channel, sync, backhaul, scheduler, phy and kqi, and the
experiment sweeps built on it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from . import backhaul as bh
from .channel import (STREAM_CLOCKS, STREAM_SENSITIVITY, STREAM_SYNC, adapt_feedback_interval,
                      channel_sequence, quantize_csi, report_coherence, rng_for)
from .config import ScenarioConfig, section_replace, with_overrides
from .kqi import (UndefinedCorrelationError, VideoSession, download_ratio, is_stalled,
                  kqi_loss, new_session, pearson, step_playback)
from .phy import Mode, compute_sinr, iq_quant_noise
from .scheduler import (SchedulerContext, UserQueue, assign_clusters, evaluate_ability,
                        home_bs, schedule_slot_kpi, schedule_slot_kqi, update_queues)
from .sync import (ClockModel, cluster_offset_hz, draw_clocks, ici_factors, master_slave_sync,
                   timing_penalty_db)

__all__ = [
    "SimulationError",
    "MetricsReport",
    "TRACE_NAMES",
    "FULL_BUFFER_BITS",
    "run",
    "recompute_aggregates",
    "windowed_throughput",
    "cell_edge",
    "SweepResult",
    "sweep_backhaul",
    "sweep_feedback",
    "sweep_offset",
    "compare_schedulers",
    "engagement_spread",
    "service_capacity_bps",
    "backlog_slope",
    "backlog_drift",
    "sweep_v",
]

FULL_BUFFER_BITS = 1e15

MODE_CODE = {Mode.JT: 1, Mode.CSCB: 2}

TRACE_NAMES = (
    "sinr_db",        # actual SINR of scheduled users, NaN otherwise
    "planned_rate_bps",
    "rate_bps",       # delivered bits / slot duration
    "served_bits",
    "scheduled",
    "mode",           # 0 idle, 1 JT, 2 CS/CB
    "queue_bits",
    "buffer_s",
    "stall_count",
    "download_ratio",
    "throughput_bps",  # windowed mean of rate_bps
    "kqi_loss",
    "quality",
    "latency_ms",     # NaN when not scheduled
)


class SimulationError(RuntimeError):
    """A module failed inside the slot loop; the message names the slot."""


@dataclass
class MetricsReport:
    """Per-slot traces (each ``(n_slots, n_users)``) and their aggregates."""

    n_users: int
    slot_duration_s: float
    traces: dict[str, np.ndarray]
    aggregates: dict[str, Any] = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return self.traces["rate_bps"].shape[0]

    def check_consistency(self, tol: float = 1e-9) -> bool:
        """Aggregates equal a fresh recomputation from the traces."""
        again = recompute_aggregates(self.traces, self.slot_duration_s)
        for k, v in again.items():
            a = np.asarray(self.aggregates[k], dtype=float)
            b = np.asarray(v, dtype=float)
            if a.shape != b.shape:
                return False
            if not np.allclose(a, b, rtol=tol, atol=tol, equal_nan=True):
                return False
        return True


def windowed_throughput(rate_bps: np.ndarray, window: int) -> np.ndarray:
    """Mean of the last ``window`` slots (fewer at the start), per user."""
    n = rate_bps.shape[0]
    if n == 0:
        return rate_bps.copy()
    c = np.cumsum(rate_bps, axis=0)
    out = np.empty_like(rate_bps, dtype=float)
    for t in range(n):
        lo = t - window
        s = c[t] - (c[lo] if lo >= 0 else 0.0)
        out[t] = s / min(t + 1, window)
    return out


def cell_edge(per_user_throughput: Sequence[float]) -> float:
    """5th-percentile user throughput."""
    x = np.asarray(per_user_throughput, dtype=float)
    return float(np.percentile(x, 5)) if x.size else 0.0


def _safe_pearson(r, c) -> float:
    try:
        return pearson((r, c))
    except UndefinedCorrelationError:
        return math.nan


def _session_pearson(ratio: np.ndarray, thr: np.ndarray) -> list[float]:
    # samples stop at the slot that completes the download
    before = np.vstack([np.zeros((1, ratio.shape[1])), ratio[:-1]])
    out = []
    for u in range(ratio.shape[1]):
        active = before[:, u] < 1.0
        out.append(_safe_pearson(ratio[active, u], thr[active, u]))
    return out


def recompute_aggregates(traces: Mapping[str, np.ndarray], slot_duration_s: float) -> dict:
    """Aggregates as a pure function of the traces."""
    rate = traces["rate_bps"]
    n_slots, n_users = rate.shape
    if n_slots == 0:
        zeros = [0.0] * n_users
        return {
            "mean_throughput_bps": zeros, "cell_edge_throughput_bps": 0.0,
            "sum_throughput_bps": 0.0, "mean_latency_ms": 0.0, "mean_sinr_db": 0.0,
            "download_ratio": zeros, "pearson": [math.nan] * n_users,
            "stall_count": [0] * n_users, "total_stalls": 0, "mean_backlog_bits": 0.0,
            "mean_kqi_loss": 0.0, "scheduled_fraction": zeros,
        }
    per_user = rate.mean(axis=0)
    lat = traces["latency_ms"]
    sinr = traces["sinr_db"]
    finite = np.isfinite(sinr)
    stalls = traces["stall_count"][-1]
    return {
        "mean_throughput_bps": [float(x) for x in per_user],
        "cell_edge_throughput_bps": cell_edge(per_user),
        "sum_throughput_bps": float(per_user.sum()),
        "mean_latency_ms": float(np.mean(lat[np.isfinite(lat)])) if np.isfinite(lat).any() else 0.0,
        "mean_sinr_db": float(np.mean(sinr[finite])) if finite.any() else 0.0,
        "download_ratio": [float(x) for x in traces["download_ratio"][-1]],
        "pearson": _session_pearson(traces["download_ratio"], traces["throughput_bps"]),
        "stall_count": [int(x) for x in stalls],
        "total_stalls": int(stalls.sum()),
        "mean_backlog_bits": float(traces["queue_bits"].sum(axis=1).mean()),
        "mean_kqi_loss": float(traces["kqi_loss"].sum(axis=1).mean()),
        "scheduled_fraction": [float(x) for x in traces["scheduled"].mean(axis=0)],
    }


# --- the loop -------------------------------------------------------------------------

def _clocks(config: ScenarioConfig, seed: int) -> ClockModel:
    s, r = config.sync, config.radio
    clocks = draw_clocks(r.n_bs, rng_for(seed, STREAM_CLOCKS), accuracy_ppb=s.accuracy_ppb,
                         time_offset_max_us=s.time_offset_max_us, carrier_hz=r.carrier_hz,
                         master_bs=s.master_bs)
    if s.enabled:
        clocks = master_slave_sync(clocks, s.beacon_snr_db, rng_for(seed, STREAM_SYNC),
                                   sigma0_hz=s.sigma0_hz, sigma0_time_us=s.sigma0_time_us)
    return clocks


def _budget(config: ScenarioConfig, reports, queues) -> bh.BackhaulBudget:
    b, n_bs = config.backhaul, config.radio.n_bs
    if b.share_policy == "equal" or n_bs == 1:
        return bh.BackhaulBudget.equal(b.capacity_gbps, n_bs, b.latency_ms, b.max_gbps)
    load = np.zeros(n_bs)
    for u, r in reports.items():
        load[home_bs(r)] += min(queues[u].q_bits, FULL_BUFFER_BITS)
    # half of an equal split is guaranteed to every BS
    share = bh.reallocate_shares(load, floor=0.5 / n_bs)
    return bh.BackhaulBudget(b.capacity_gbps, b.latency_ms, share, b.max_gbps)


def run(config: ScenarioConfig, *, seed: Optional[int] = None,
        doppler_hz: Optional[float] = None) -> MetricsReport:
    """Simulate ``config.n_slots`` slots; deterministic per (config, seed)."""
    seed = config.seed if seed is None else seed
    r, ch, v, sc, sy = config.radio, config.channel, config.video, config.scheduler, config.sync
    n_u, n_slots, T = config.n_users, config.n_slots, config.slot_duration_s
    ladder = tuple(v.ladder_bps)
    n_levels = len(ladder)
    ctx = SchedulerContext.from_config(config)
    thresholds = ctx.table.thresholds_db
    video = v.traffic == "video"

    clocks = _clocks(config, seed)
    sens = rng_for(seed, STREAM_SENSITIVITY).uniform(*v.sensitivity_range, n_u)
    prio = sc.priorities or (1.0,) * n_u
    q0 = v.initial_quality % n_levels
    sessions = {u: new_session(v.file_size_bits, q0, float(sens[u])) for u in range(n_u)}
    start = min(v.prefetch_s * ladder[q0], v.file_size_bits) if video else FULL_BUFFER_BITS
    queues = {u: UserQueue(start, ladder[q0] * sc.arrival_scale, prio[u]) for u in range(n_u)}
    intervals = {u: ch.feedback_interval_slots for u in range(n_u)}
    bounds = (ch.min_interval_slots, ch.max_interval_slots)
    reports: dict = {}
    spacing = sy.ici_spacing_hz or r.subcarrier_interval_hz
    noise = r.noise_var_w

    tr = {k: np.zeros((n_slots, n_u)) for k in TRACE_NAMES}
    for k in ("sinr_db", "latency_ms"):
        tr[k][:] = np.nan

    seq = channel_sequence(config, seed, doppler_hz)
    for t in range(n_slots):
        try:
            state = next(seq)
            for u in range(n_u):
                old = reports.get(u)
                if old is None or old.age_slots + 1 >= intervals[u]:
                    new = quantize_csi(state, ch.csi_bits, u, clip_sigma=ch.clip_sigma,
                                       tx_power_w=r.tx_power_w, noise_var=noise,
                                       mcs_thresholds_db=thresholds,
                                       feedback_interval_slots=intervals[u])
                    if ch.adaptive_feedback and old is not None:
                        intervals[u] = adapt_feedback_interval(
                            report_coherence(new, old), intervals[u], bounds,
                            high=ch.coherence_high, low=ch.coherence_low)
                        new = replace(new, feedback_interval_slots=intervals[u])
                    reports[u] = new
                else:
                    reports[u] = old.aged(1)

            budget = _budget(config, reports, queues)
            sctx = ctx.with_budget(budget)
            abilities = [evaluate_ability(sctx, budget, m, r.tx_power_dbm) for m in ctx.clusters]
            if sc.kind == "kqi":
                plan = schedule_slot_kqi(queues, sessions, reports, abilities, sc.v, sctx)
            else:
                plan = schedule_slot_kpi(queues, reports, abilities, sctx, sessions=sessions)

            # actual SINR over the true channel
            sinr_true = {}
            mode_of = {}
            for i, (members, mode, prec, bits) in enumerate(zip(
                    plan.clusters, plan.modes, plan.precoders, plan.iq_bits)):
                if prec is None:
                    continue
                ext = np.zeros(len(prec.users))
                for j, other in enumerate(plan.precoders):
                    if j != i and other is not None:
                        for k, u in enumerate(prec.users):
                            row = state.stacked(u)[0]
                            ext[k] += float(np.sum(np.abs(row @ other.w) ** 2 * other.power))
                penalty = 0.0
                ici = (1.0, 0.0)
                qn = np.zeros(len(prec.users))
                if mode == Mode.JT and len(members) > 1:
                    df = sy.offset_override_hz if sy.offset_override_hz is not None \
                        else cluster_offset_hz(clocks, members)
                    ici = ici_factors(df, spacing)
                    penalty = timing_penalty_db(clocks, r.cp_us, sy.time_penalty_db, members)
                    qn = iq_quant_noise(state, prec, bh.iq_noise_factor(bits, config.backhaul.iq_clip_sigma))
                s = compute_sinr(state, prec, ici, qn + ext, noise) + penalty
                for k, u in enumerate(prec.users):
                    sinr_true[u] = float(s[k])
                    mode_of[u] = (mode, members, bits)

            served = {}
            for u in range(n_u):
                m = plan.mcs.get(u)
                ok = u in sinr_true and m is not None and sinr_true[u] >= m.min_sinr_db
                served[u] = min(plan.rate_bps[u] * T, queues[u].q_bits) if ok else 0.0

            for u in range(n_u):
                q = plan.quality.get(u, sessions[u].quality_level)
                s = replace(sessions[u], quality_level=q)
                s = step_playback(s, served[u], T, ladder, v.rebuffer_s)
                sessions[u] = s
                tr["kqi_loss"][t, u] = kqi_loss(s, (is_stalled(s), q), alpha=v.alpha,
                                                beta=v.beta, n_levels=n_levels)
                tr["quality"][t, u] = q
                tr["buffer_s"][t, u] = s.buffer_s
                tr["stall_count"][t, u] = s.stall_count
                tr["download_ratio"][t, u] = download_ratio(s)
                tr["served_bits"][t, u] = served[u]
                tr["rate_bps"][t, u] = served[u] / T
                if u in sinr_true:
                    mode, members, bits = mode_of[u]
                    tr["scheduled"][t, u] = 1.0
                    tr["mode"][t, u] = MODE_CODE[mode]
                    tr["sinr_db"][t, u] = sinr_true[u]
                    tr["planned_rate_bps"][t, u] = plan.rate_bps[u]
                    tr["latency_ms"][t, u] = _latency_ms(config, budget, mode, members, bits, T)

            if video:
                arrivals = {}
                for u in range(n_u):
                    s = sessions[u]
                    room = s.file_size_bits - s.downloaded_bits - max(queues[u].q_bits - served[u], 0.0)
                    a = ladder[s.quality_level] * T * sc.arrival_scale
                    arrivals[u] = max(0.0, min(a, room))
                queues = update_queues(queues, plan, served, arrivals)
                queues = {u: replace(q, arrival_bps=ladder[sessions[u].quality_level] * sc.arrival_scale)
                          for u, q in queues.items()}
            for u in range(n_u):
                tr["queue_bits"][t, u] = queues[u].q_bits
        except (ValueError, ArithmeticError, RuntimeError) as exc:
            raise SimulationError(f"slot {t}: {type(exc).__name__}: {exc}") from exc

    tr["throughput_bps"] = windowed_throughput(tr["rate_bps"], v.throughput_window_slots)
    report = MetricsReport(n_u, T, tr)
    report.aggregates = recompute_aggregates(tr, T)
    return report


def _latency_ms(config, budget, mode, members, bits, T) -> float:
    """Backhaul delay of one user's share of the slot plus one slot of air time."""
    r = config.radio
    if len(members) <= 1:
        n_bits = 0.0
    elif mode == Mode.JT:
        n_bits = len(members) * r.occupied_bandwidth_hz * 2 * bits * T
    else:
        n_bits = bh.csi_bits_per_report(config.channel.csi_bits, r.n_tx_antennas,
                                        r.n_rx_antennas) * len(members)
    return bh.backhaul_latency_contribution(budget, int(math.ceil(n_bits / 8))) + T * 1e3


# --- sweeps ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    """Curves over one swept parameter; ``per_seed[name]`` is ``(n_x, n_seeds)``."""

    x: list
    curves: dict[str, list]
    per_seed: dict[str, np.ndarray] = field(default_factory=dict)


def _kpi_full_buffer(config: ScenarioConfig, **over) -> ScenarioConfig:
    base = {"scheduler.kind": "kpi", "video.traffic": "full_buffer"}
    base.update(over)
    return with_overrides(config, base)


def _max_weight_saturated(config: ScenarioConfig, **over) -> ScenarioConfig:
    # V = 0 with fixed quality is plain max-weight; arrivals far above the
    # cell capacity keep every queue backlogged
    base = {"scheduler.kind": "kqi", "scheduler.v": 0.0, "scheduler.adapt_quality": False,
            "video.traffic": "video", "scheduler.arrival_scale": 10.0,
            "video.file_size_bits": 1e12}
    base.update(over)
    return with_overrides(config, base)


def sweep_backhaul(config: ScenarioConfig, capacities: Sequence[float],
                   seeds: Iterable[int], modes: Sequence[str] = ("JT", "CSCB")) -> SweepResult:
    """Cell-edge throughput (5th percentile over all users of all seeds)
    against backhaul capacity, one curve per forced mode.

    Users are scheduled by max-weight on saturated queues so that every
    user keeps being served and the percentile reflects link quality.
    """
    caps = [float(c) for c in capacities]
    if caps != sorted(caps):
        raise ValueError("capacities must be sorted ascending")
    seeds = list(seeds)
    curves, per_seed = {}, {}
    for mode in modes:
        pts, ps = [], []
        for cap in caps:
            cfg = _max_weight_saturated(config, **{"backhaul.capacity_gbps": cap,
                                             "scheduler.force_mode": mode})
            users = []
            row = []
            for s in seeds:
                rep = run(cfg, seed=s)
                users.extend(rep.aggregates["mean_throughput_bps"])
                row.append(rep.aggregates["cell_edge_throughput_bps"])
            pts.append(cell_edge(users))
            ps.append(row)
        curves[mode] = pts
        per_seed[mode] = np.array(ps)
    return SweepResult(caps, curves, per_seed)


def sweep_feedback(config: ScenarioConfig, intervals: Sequence[int], seeds: Iterable[int],
                   dopplers: Optional[Mapping[str, float]] = None) -> SweepResult:
    """Mean per-user throughput against the CSI feedback interval, per Doppler preset."""
    if dopplers is None:
        dopplers = {"static": config.channel.static_doppler_hz,
                    "mobile": config.channel.mobile_doppler_hz}
    seeds = list(seeds)
    curves, per_seed = {}, {}
    for name, fd in dopplers.items():
        ps = []
        for iv in intervals:
            cfg = _kpi_full_buffer(config, **{"channel.feedback_interval_slots": int(iv),
                                             "channel.doppler_hz": float(fd),
                                             "channel.adaptive_feedback": False})
            ps.append([float(np.mean(run(cfg, seed=s).aggregates["mean_throughput_bps"]))
                       for s in seeds])
        per_seed[name] = np.array(ps)
        curves[name] = [float(x) for x in per_seed[name].mean(axis=1)]
    return SweepResult(list(intervals), curves, per_seed)


def sweep_offset(config: ScenarioConfig, offsets_hz: Sequence[float], seeds: Iterable[int],
                 modes: Sequence[str] = ("JT", "CSCB")) -> SweepResult:
    """Mean SINR of scheduled users against a forced cluster frequency offset."""
    seeds = list(seeds)
    curves, per_seed = {}, {}
    for mode in modes:
        ps = []
        for off in offsets_hz:
            cfg = _kpi_full_buffer(config, **{"sync.offset_override_hz": float(off),
                                             "scheduler.force_mode": mode})
            ps.append([run(cfg, seed=s).aggregates["mean_sinr_db"] for s in seeds])
        per_seed[mode] = np.array(ps)
        curves[mode] = [float(x) for x in per_seed[mode].mean(axis=1)]
    return SweepResult([float(o) for o in offsets_hz], curves, per_seed)


def service_capacity_bps(config: ScenarioConfig, seed: int) -> float:
    """Per-user rate every user can be given at once: the smallest per-user
    throughput under max-weight on saturated queues."""
    rep = run(_max_weight_saturated(config), seed=seed)
    return float(min(rep.aggregates["mean_throughput_bps"]))


def backlog_slope(backlog: np.ndarray) -> float:
    """Least-squares slope of ``backlog`` per slot over its last half,
    relative to the mean backlog there."""
    half = np.asarray(backlog, dtype=float)[len(backlog) // 2:]
    if half.size < 2:
        return 0.0
    mean = float(half.mean())
    if mean == 0.0:
        return 0.0
    return float(np.polyfit(np.arange(half.size, dtype=float), half, 1)[0] / mean)


def backlog_drift(backlog: np.ndarray) -> float:
    """Least-squares drift of ``backlog`` over its last half, as a fraction of
    the mean backlog there (slope times window length over mean)."""
    n = len(backlog) - len(backlog) // 2
    return backlog_slope(backlog) * n


def sweep_v(config: ScenarioConfig, vs: Sequence[float], seeds: Iterable[int],
            load: float = 0.8, capacity_slots: int = 1000) -> SweepResult:
    """Time-averaged KQI loss and backlog of the KQI scheduler against ``V``.

    Queues start empty and each user's arrivals at top quality are ``load``
    times the per-seed service capacity, so lower qualities load the cell less.
    Curves: ``kqi_loss`` (mean over slots of the summed loss), ``backlog_bits``
    (mean summed queue), ``slope`` (worst :func:`backlog_slope` over seeds)
    and ``drift`` (worst :func:`backlog_drift` over seeds).
    """
    seeds = list(seeds)
    top = config.video.ladder_bps[-1]
    loss, backlog, slope, drift = [], [], [], []
    scales = {}
    for s in seeds:
        cap = service_capacity_bps(with_overrides(config, {"n_slots": capacity_slots}), s)
        scales[s] = load * cap / top
    for v in vs:
        row_l, row_b, row_s, row_d = [], [], [], []
        for s in seeds:
            cfg = with_overrides(config, {"scheduler.kind": "kqi", "scheduler.v": float(v),
                                          "scheduler.adapt_quality": True,
                                          "scheduler.arrival_scale": scales[s],
                                          "video.traffic": "video", "video.prefetch_s": 0.0,
                                          "video.file_size_bits": 1e12})
            rep = run(cfg, seed=s)
            row_l.append(rep.aggregates["mean_kqi_loss"])
            row_b.append(rep.aggregates["mean_backlog_bits"])
            total = rep.traces["queue_bits"].sum(axis=1)
            row_s.append(backlog_slope(total))
            row_d.append(backlog_drift(total))
        loss.append(row_l)
        backlog.append(row_b)
        slope.append(row_s)
        drift.append(row_d)
    per_seed = {"kqi_loss": np.array(loss), "backlog_bits": np.array(backlog),
                "slope": np.array(slope), "drift": np.array(drift)}
    curves = {"kqi_loss": [float(x) for x in per_seed["kqi_loss"].mean(axis=1)],
              "backlog_bits": [float(x) for x in per_seed["backlog_bits"].mean(axis=1)],
              "slope": [float(x) for x in np.abs(per_seed["slope"]).max(axis=1)],
              "drift": [float(x) for x in np.abs(per_seed["drift"]).max(axis=1)]}
    return SweepResult([float(v) for v in vs], curves, per_seed)


def compare_schedulers(config: ScenarioConfig, seeds: Iterable[int],
                       kinds: Sequence[str] = ("kpi", "kqi")) -> dict[str, dict[str, np.ndarray]]:
    """Per-user Pearson and stall counts of each scheduler on identical seeds.

    Returns ``{kind: {"pearson": (n_seeds, n_users), "stalls": (n_seeds, n_users)}}``.
    """
    seeds = list(seeds)
    out = {}
    for kind in kinds:
        cfg = with_overrides(config, {"scheduler.kind": kind})
        rho, stalls = [], []
        for s in seeds:
            agg = run(cfg, seed=s).aggregates
            rho.append(agg["pearson"])
            stalls.append(agg["stall_count"])
        out[kind] = {"pearson": np.array(rho, dtype=float), "stalls": np.array(stalls, dtype=float)}
    return out


def engagement_spread(config: ScenarioConfig, seeds: Iterable[int]) -> np.ndarray:
    """Per-user Pearson coefficients pooled over seeds (one row per seed)."""
    return np.array([run(config, seed=s).aggregates["pearson"] for s in seeds], dtype=float)
