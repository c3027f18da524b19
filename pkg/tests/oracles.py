"""Independent reference computations shared by unit and acceptance tests."""

import itertools

import numpy as np

from compsim.channel import generate_channel, quantize_csi
from compsim.config import ScenarioConfig, with_overrides
from compsim.kqi import VideoSession
from compsim.scheduler import (SchedulerContext, UserQueue, evaluate_ability, evaluate_group,
                               select_mode, user_term)


def small_instance(seed, n_users=3, n_candidates=2):
    """Random reports, queues, sessions and candidate groups."""
    rng = np.random.default_rng(seed)
    cfg = with_overrides(ScenarioConfig(), {"n_users": n_users})
    ctx = SchedulerContext.from_config(cfg)
    st = generate_channel(cfg, seed, 0)
    reports = {u: quantize_csi(st, 8, u) for u in range(n_users)}
    queues = {u: UserQueue(float(rng.uniform(1e5, 5e7))) for u in range(n_users)}
    sessions = {}
    for u in range(n_users):
        playing = bool(rng.random() < 0.5)
        sessions[u] = VideoSession(4e9, float(rng.uniform(0, 1e9)),
                                   buffer_s=float(rng.choice([0.0, 1e-3, 0.5, 3.0])),
                                   playing=playing, started=playing or bool(rng.random() < 0.5),
                                   quality_level=int(rng.integers(0, 4)),
                                   engagement_sensitivity=float(rng.uniform(0.2, 1.0)))
    groups = [g for k in (1, 2, 3) for g in itertools.combinations(range(n_users), k)]
    pick = rng.choice(len(groups), size=n_candidates, replace=False)
    candidates = [groups[i] for i in sorted(pick)]
    V = float(rng.choice([0.0, 10.0, 1e3, 1e5]))
    return ctx, reports, queues, sessions, candidates, V


def brute_force_kqi(ctx, reports, queues, sessions, candidates, V):
    """Max of sum_u Q_u b_u - V I_u over candidates, modes and every joint
    choice of quality levels; returns ``(value, group)``."""
    ability = evaluate_ability(ctx)
    modes = [select_mode(ability, ctx.mode_threshold)]
    best = None
    for mode in modes:
        for g in candidates:
            ev = evaluate_group(g, mode, reports, ctx, n_cluster_users=len(reports))
            if ev is None:
                continue
            idle = sum(user_term(queues[u].q_bits, sessions[u], 0.0,
                                 sessions[u].quality_level, V, ctx)
                       for u in reports if u not in ev.group)
            for levels in itertools.product(range(ctx.n_levels), repeat=len(ev.group)):
                val = idle + sum(user_term(queues[u].q_bits, sessions[u], ev.rates[k],
                                           levels[k], V, ctx)
                                 for k, u in enumerate(ev.group))
                if best is None or val > best[0]:
                    best = (val, ev.group)
    return best


def plan_value(plan, ctx, reports, queues, sessions, V):
    """Objective of the plan's group and quality choice, recomputed."""
    served = dict(zip(plan.users, [plan.rate_bps[u] for u in plan.users]))
    total = 0.0
    for u in reports:
        rate = served.get(u, 0.0)
        lv = plan.quality[u] if u in served else sessions[u].quality_level
        total += user_term(queues[u].q_bits, sessions[u], rate, lv, V, ctx)
    return total
