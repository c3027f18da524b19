"""Named experiments: their scenario overrides, grids and output files."""

from __future__ import annotations

import warnings

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ScenarioConfig, serialize_config, with_overrides
from .engine import (compare_schedulers, engagement_spread, run, sweep_backhaul,
                     sweep_feedback, sweep_offset)
from .io import RunManifest, emit_metrics, write_curve, write_table

__all__ = [
    "Preset",
    "PRESETS",
    "BACKHAUL_GRID_GBPS",
    "FEEDBACK_GRID_SLOTS",
    "OFFSET_GRID_HZ",
    "preset_config",
    "run_preset",
    "run_plain",
]

BACKHAUL_GRID_GBPS = (2.5, 5.0, 7.5, 10.0, 15.0, 20.0, 30.0, 40.0, 80.0, 240.0)
FEEDBACK_GRID_SLOTS = (1, 2, 4, 8, 16, 32, 64)
OFFSET_GRID_HZ = (0.0, 35.0, 70.0, 105.0, 140.0, 175.0, 210.0, 262.5)

# 5 users on a 200 m grid with 10 ms slots: enough load for stalls under the
# throughput-only baseline within a 20 s horizon
_VIDEO_CELL = {"n_users": 5, "slot_duration_s": 1e-2, "n_slots": 2000,
               "geometry.isd_m": 200.0, "scheduler.v": 1e5}


@dataclass(frozen=True)
class Preset:
    name: str
    overrides: dict
    seeds: tuple[int, ...]
    runner: Callable[[ScenarioConfig, list, Path], list]
    description: str


def _nanmedian(a, axis=0):
    # columns that are NaN for every seed stay NaN without a warning
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmedian(a, axis=axis)


def _fig3a(cfg, seeds, out):
    res = sweep_backhaul(cfg, BACKHAUL_GRID_GBPS, seeds)
    paths = [write_curve(out / f"fig3a_{m.lower()}.csv", "backhaul_gbps",
                         "cell_edge_throughput_bps", res.x, res.curves[m]) for m in res.curves]
    rows = [(m, x, s, res.per_seed[m][i, j]) for m in res.curves
            for i, x in enumerate(res.x) for j, s in enumerate(seeds)]
    paths.append(write_table(out / "fig3a_per_seed.csv",
                             ("mode", "backhaul_gbps", "seed", "cell_edge_throughput_bps"), rows))
    return paths


def _fig3b(cfg, seeds, out):
    res = sweep_feedback(cfg, FEEDBACK_GRID_SLOTS, seeds)
    paths = [write_curve(out / f"fig3b_{n}.csv", "feedback_interval_slots", "throughput_bps",
                         res.x, res.curves[n]) for n in res.curves]
    rows = [(n, x, s, res.per_seed[n][i, j]) for n in res.curves
            for i, x in enumerate(res.x) for j, s in enumerate(seeds)]
    paths.append(write_table(out / "fig3b_per_seed.csv",
                             ("scenario", "feedback_interval_slots", "seed", "throughput_bps"),
                             rows))
    return paths


def _fig3c(cfg, seeds, out):
    res = sweep_offset(cfg, OFFSET_GRID_HZ, seeds)
    return [write_curve(out / f"fig3c_{m.lower()}.csv", "offset_hz", "mean_sinr_db",
                        res.x, res.curves[m]) for m in res.curves]


def _fig3d(cfg, seeds, out):
    rho = engagement_spread(cfg, seeds)
    users = list(range(rho.shape[1]))
    paths = [write_curve(out / "fig3d.csv", "user", "pearson", users,
                         _nanmedian(rho) if len(seeds) > 1 else rho[0])]
    return paths


def _table2(cfg, seeds, out):
    res = compare_schedulers(cfg, seeds)
    kpi, kqi = res["kpi"], res["kqi"]
    med = {k: {m: _nanmedian(v[m]) for m in v} for k, v in res.items()}
    rows = [(u, med["kpi"]["pearson"][u], med["kqi"]["pearson"][u],
             med["kpi"]["stalls"][u], med["kqi"]["stalls"][u])
            for u in range(cfg.n_users)]
    paths = [write_table(out / "table2.csv",
                         ("user", "corr_kpi", "corr_kqi", "stalls_kpi", "stalls_kqi"), rows)]
    rows = [(s, u, kpi["pearson"][i, u], kqi["pearson"][i, u],
             int(kpi["stalls"][i, u]), int(kqi["stalls"][i, u]))
            for i, s in enumerate(seeds) for u in range(cfg.n_users)]
    paths.append(write_table(out / "table2_per_seed.csv",
                             ("seed", "user", "corr_kpi", "corr_kqi", "stalls_kpi", "stalls_kqi"),
                             rows))
    return paths


_SEEDS20 = tuple(range(20))

PRESETS: dict[str, Preset] = {
    "fig3a": Preset("fig3a", {"n_slots": 150}, _SEEDS20, _fig3a,
                    "cell-edge throughput against backhaul capacity, JT and CS/CB"),
    "fig3b": Preset("fig3b", {"n_slots": 128}, _SEEDS20, _fig3b,
                    "throughput against CSI feedback interval, static and mobile"),
    "fig3c": Preset("fig3c", {"n_slots": 40, "sync.ici_spacing_hz": 15e3}, _SEEDS20, _fig3c,
                    "mean SINR against cluster frequency offset, JT and CS/CB"),
    "fig3d": Preset("fig3d", dict(_VIDEO_CELL, n_users=20, n_slots=1000,
                                  **{"scheduler.kind": "kpi"}), (0,), _fig3d,
                    "per-user engagement correlation over 20 users"),
    "table2": Preset("table2", dict(_VIDEO_CELL), _SEEDS20, _table2,
                     "stalls and engagement correlation, KPI against KPI/KQI scheduling"),
}


def preset_config(name: str, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """``base`` (defaults if omitted) with the preset's overrides applied."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return with_overrides(base or ScenarioConfig(), PRESETS[name].overrides)


def run_preset(name: str, config: ScenarioConfig, out_dir, seeds: Optional[Sequence[int]] = None,
               config_path: Optional[str] = None, overrides: Sequence[str] = ()) -> RunManifest:
    """Run a preset on an already layered ``config`` and write its files
    plus ``manifest.json`` under ``out_dir``."""
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    p = PRESETS[name]
    seeds = list(p.seeds if seeds is None else seeds)
    out = Path(out_dir)
    paths = p.runner(config, seeds, out)
    return _manifest(config, name, out, seeds, config_path, overrides, paths)


def run_plain(config: ScenarioConfig, out_dir, seeds: Optional[Sequence[int]] = None,
              formats: Sequence[str] = ("csv", "json"), config_path: Optional[str] = None,
              overrides: Sequence[str] = ()) -> RunManifest:
    """One simulation per seed, metrics under ``out_dir/seed_<s>/``."""
    seeds = list([config.seed] if seeds is None else seeds)
    out = Path(out_dir)
    paths = []
    for s in seeds:
        paths += emit_metrics(run(config, seed=s), out / f"seed_{s}", formats)
    return _manifest(config, None, out, seeds, config_path, overrides, paths)


def _manifest(config, name, out, seeds, config_path, overrides, paths) -> RunManifest:
    m = RunManifest(config_path=config_path, preset=name, out_dir=str(out), seeds=list(seeds),
                    config_yaml=serialize_config(config), overrides=list(overrides))
    m.record(paths)
    m.write()
    return m
