"""Scenario configuration: defaults, validation and YAML (de)serialization.

The defaults reproduce the field-trial parameter table (3 BSs, 1x4 antennas,
3.5 GHz carrier, 30.725 MHz sampling, 1200 active subcarriers at 312.5 kHz,
20 dBm, 2PSK/4QAM/16QAM with rate-1/2 LDPC, FDD). Everything else is a
modeling parameter of the simulator.
"""

from __future__ import annotations

import dataclasses
import math
import types
import typing
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional, Union

import yaml

__all__ = [
    "ConfigError",
    "McsEntry",
    "RadioConfig",
    "GeometryConfig",
    "ChannelConfig",
    "BackhaulConfig",
    "SyncConfig",
    "VideoConfig",
    "SchedulerConfig",
    "ScenarioConfig",
    "default_mcs_entries",
    "parse_config",
    "serialize_config",
    "with_overrides",
    "db_to_linear",
    "dbm_to_watt",
]


class ConfigError(ValueError):
    """Invalid scenario configuration.

    ``path`` is the dotted key path of the offending entry and ``line`` the
    1-based line in the source text (``None`` when not parsed from text).
    """

    def __init__(self, message: str, path: str = "", line: Optional[int] = None):
        self.path = path
        self.line = line
        where = path or "<root>"
        if line is not None:
            where = f"{where} (line {line})"
        super().__init__(f"{where}: {message}")


def db_to_linear(x_db):
    return 10.0 ** (x_db / 10.0)


def dbm_to_watt(x_dbm):
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class McsEntry:
    """One modulation and coding scheme.

    ``bits_per_symbol`` is the raw constellation size in bits; the effective
    information rate per symbol is ``bits_per_symbol * code_rate``.
    """

    name: str
    min_sinr_db: float
    bits_per_symbol: float
    code_rate: float = 0.5

    @property
    def effective_bits(self) -> float:
        return self.bits_per_symbol * self.code_rate


def shannon_gap_threshold_db(effective_bits: float, gap_db: float = 3.0) -> float:
    """SINR threshold ``(2**(2 r) - 1)`` in dB plus an implementation gap."""
    return 10.0 * math.log10(2.0 ** (2.0 * effective_bits) - 1.0) + gap_db


def default_mcs_entries() -> tuple[McsEntry, ...]:
    out = []
    for name, bits in (("2PSK", 1.0), ("4QAM", 2.0), ("16QAM", 4.0)):
        out.append(McsEntry(name, shannon_gap_threshold_db(bits * 0.5), bits, 0.5))
    return tuple(out)


@dataclass(frozen=True)
class RadioConfig:
    n_bs: int = 3
    n_rx_antennas: int = 1
    n_tx_antennas: int = 4
    carrier_hz: float = 3.5e9
    sampling_hz: float = 30.725e6
    active_subcarriers: int = 1200
    subcarrier_interval_hz: float = 312.5e3
    tx_power_dbm: float = 20.0
    duplex: str = "FDD"
    noise_figure_db: float = 7.0
    cp_us: float = 4.7
    mcs: tuple[McsEntry, ...] = field(default_factory=default_mcs_entries)

    @property
    def occupied_bandwidth_hz(self) -> float:
        # symbols per second over all active subcarriers
        return self.active_subcarriers * self.subcarrier_interval_hz

    @property
    def tx_power_w(self) -> float:
        return dbm_to_watt(self.tx_power_dbm)

    @property
    def noise_var_w(self) -> float:
        return dbm_to_watt(-174.0 + 10.0 * math.log10(self.occupied_bandwidth_hz)
                           + self.noise_figure_db)

    @property
    def total_tx_antennas(self) -> int:
        return self.n_bs * self.n_tx_antennas


@dataclass(frozen=True)
class GeometryConfig:
    isd_m: float = 100.0
    pathloss_exponent: float = 3.0
    # None: free-space loss at 1 m for the configured carrier
    pathloss_ref_db: Optional[float] = None
    min_distance_m: float = 5.0
    # None: users dropped uniformly inside the BS triangle, per seed
    user_positions: Optional[tuple[tuple[float, float], ...]] = None


@dataclass(frozen=True)
class ChannelConfig:
    doppler_hz: float = 5.0
    static_doppler_hz: float = 5.0
    mobile_doppler_hz: float = 50.0
    csi_bits: int = 8
    clip_sigma: float = 4.0
    feedback_interval_slots: int = 1
    adaptive_feedback: bool = False
    coherence_high: float = 0.95
    coherence_low: float = 0.80
    min_interval_slots: int = 1
    max_interval_slots: int = 32


@dataclass(frozen=True)
class BackhaulConfig:
    capacity_gbps: float = 240.0
    max_gbps: float = 240.0
    latency_ms: float = 0.5
    max_iq_bits: int = 16
    iq_clip_sigma: float = 4.0
    # "backlog": per-BS shares follow queue backlog, "equal": fixed split
    share_policy: str = "backlog"


@dataclass(frozen=True)
class SyncConfig:
    accuracy_ppb: tuple[float, float] = (20.0, 75.0)
    time_offset_max_us: float = 3.0
    enabled: bool = True
    master_bs: int = 0
    beacon_snr_db: float = 20.0
    sigma0_hz: float = 5.0
    sigma0_time_us: float = 0.5
    time_penalty_db: float = -10.0
    # Forces the cluster frequency offset (Hz) seen by JT, bypassing clocks.
    offset_override_hz: Optional[float] = None
    # Subcarrier spacing used by the ICI model; None: radio.subcarrier_interval_hz
    ici_spacing_hz: Optional[float] = None


@dataclass(frozen=True)
class VideoConfig:
    traffic: str = "video"  # "video" or "full_buffer"
    ladder_bps: tuple[float, ...] = (50e6, 100e6, 200e6, 400e6)
    psnr_db: tuple[float, ...] = (30.0, 34.0, 38.0, 42.0)
    file_size_bits: float = 4e9
    rebuffer_s: float = 2.0
    alpha: float = 1.0
    beta: float = 0.25
    sensitivity_range: tuple[float, float] = (0.2, 1.0)
    # -1 selects the top ladder level
    initial_quality: int = -1
    throughput_window_slots: int = 100
    # seconds of video already queued for each user at slot 0
    prefetch_s: float = 2.0


@dataclass(frozen=True)
class SchedulerConfig:
    kind: str = "kqi"  # "kqi" or "kpi"
    v: float = 100.0
    mode_threshold: float = 0.5
    corr_threshold: float = 0.7
    max_group: int = 4
    # None: every user has priority 1.0
    priorities: Optional[tuple[float, ...]] = None
    queue_unit_bits: float = 1e3
    force_mode: Optional[str] = None  # None, "JT" or "CSCB"
    arrival_scale: float = 1.0
    # False: the KPI/KQI scheduler keeps every user's quality level
    adapt_quality: bool = True
    clusters: Optional[tuple[tuple[int, ...], ...]] = None


@dataclass(frozen=True)
class ScenarioConfig:
    n_users: int = 4
    n_slots: int = 1000
    slot_duration_s: float = 1e-3
    seed: int = 0
    radio: RadioConfig = field(default_factory=RadioConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    backhaul: BackhaulConfig = field(default_factory=BackhaulConfig)
    sync: SyncConfig = field(default_factory=SyncConfig)
    video: VideoConfig = field(default_factory=VideoConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)

    def __post_init__(self):
        validate(self)

    @property
    def tx_power_w(self) -> float:
        return self.radio.tx_power_w

    @property
    def noise_var_w(self) -> float:
        return self.radio.noise_var_w


def _check(cond, msg, path):
    if not cond:
        raise ConfigError(msg, path)


def validate(cfg: ScenarioConfig) -> None:
    """Raise :class:`ConfigError` on the first violated constraint."""
    r = cfg.radio
    _check(cfg.n_users >= 1, "must be >= 1", "n_users")
    _check(cfg.n_slots >= 0, "must be >= 0", "n_slots")
    _check(cfg.slot_duration_s > 0, "must be > 0", "slot_duration_s")
    _check(cfg.seed >= 0, "must be >= 0", "seed")
    _check(r.n_bs >= 1, "must be >= 1", "radio.n_bs")
    _check(r.n_rx_antennas >= 1, "must be >= 1", "radio.n_rx_antennas")
    _check(r.n_tx_antennas >= 1, "must be >= 1", "radio.n_tx_antennas")
    _check(r.carrier_hz > 0, "must be > 0", "radio.carrier_hz")
    _check(r.sampling_hz > 0, "must be > 0", "radio.sampling_hz")
    _check(r.active_subcarriers >= 1, "must be >= 1", "radio.active_subcarriers")
    _check(r.subcarrier_interval_hz > 0, "must be > 0", "radio.subcarrier_interval_hz")
    _check(r.duplex in ("FDD", "TDD"), "must be FDD or TDD", "radio.duplex")
    _check(len(r.mcs) >= 1, "needs at least one entry", "radio.mcs")
    for i in range(1, len(r.mcs)):
        _check(r.mcs[i].min_sinr_db > r.mcs[i - 1].min_sinr_db,
               "thresholds must be strictly increasing", f"radio.mcs[{i}].min_sinr_db")
        _check(r.mcs[i].effective_bits > r.mcs[i - 1].effective_bits,
               "rates must be strictly increasing", f"radio.mcs[{i}].bits_per_symbol")
    g = cfg.geometry
    _check(g.isd_m > 0, "must be > 0", "geometry.isd_m")
    _check(g.pathloss_exponent > 0, "must be > 0", "geometry.pathloss_exponent")
    if g.user_positions is not None:
        _check(len(g.user_positions) == cfg.n_users,
               "must list one (x, y) per user", "geometry.user_positions")
    c = cfg.channel
    _check(c.doppler_hz >= 0, "must be >= 0", "channel.doppler_hz")
    _check(c.csi_bits >= 1, "must be >= 1", "channel.csi_bits")
    _check(c.clip_sigma > 0, "must be > 0", "channel.clip_sigma")
    _check(1 <= c.min_interval_slots <= c.max_interval_slots,
           "need 1 <= min <= max", "channel.min_interval_slots")
    _check(c.feedback_interval_slots >= 1, "must be >= 1", "channel.feedback_interval_slots")
    _check(c.coherence_low <= c.coherence_high, "low must not exceed high",
           "channel.coherence_low")
    b = cfg.backhaul
    _check(0 <= b.capacity_gbps <= b.max_gbps, "must lie in [0, max_gbps]",
           "backhaul.capacity_gbps")
    _check(b.latency_ms >= 0, "must be >= 0", "backhaul.latency_ms")
    _check(1 <= b.max_iq_bits <= 16, "must lie in [1, 16]", "backhaul.max_iq_bits")
    _check(b.share_policy in ("backlog", "equal"), "must be backlog or equal",
           "backhaul.share_policy")
    s = cfg.sync
    _check(0 <= s.accuracy_ppb[0] <= s.accuracy_ppb[1], "need 0 <= low <= high",
           "sync.accuracy_ppb")
    _check(0 <= s.master_bs < r.n_bs, "must name a BS", "sync.master_bs")
    _check(s.time_offset_max_us >= 0, "must be >= 0", "sync.time_offset_max_us")
    if s.ici_spacing_hz is not None:
        _check(s.ici_spacing_hz > 0, "must be > 0", "sync.ici_spacing_hz")
    v = cfg.video
    _check(v.traffic in ("video", "full_buffer"), "must be video or full_buffer",
           "video.traffic")
    _check(len(v.ladder_bps) >= 1 and all(x > 0 for x in v.ladder_bps),
           "needs positive bitrates", "video.ladder_bps")
    _check(all(v.ladder_bps[i] < v.ladder_bps[i + 1] for i in range(len(v.ladder_bps) - 1)),
           "must be strictly increasing", "video.ladder_bps")
    _check(len(v.psnr_db) == len(v.ladder_bps), "needs one value per ladder level",
           "video.psnr_db")
    _check(v.file_size_bits > 0, "must be > 0", "video.file_size_bits")
    _check(0 <= v.sensitivity_range[0] <= v.sensitivity_range[1] <= 1,
           "need 0 <= low <= high <= 1", "video.sensitivity_range")
    _check(-len(v.ladder_bps) <= v.initial_quality < len(v.ladder_bps),
           "must index the ladder", "video.initial_quality")
    _check(v.throughput_window_slots >= 1, "must be >= 1", "video.throughput_window_slots")
    _check(v.prefetch_s >= 0, "must be >= 0", "video.prefetch_s")
    sc = cfg.scheduler
    _check(sc.kind in ("kqi", "kpi"), "must be kqi or kpi", "scheduler.kind")
    _check(sc.v >= 0, "must be >= 0", "scheduler.v")
    _check(sc.mode_threshold > 0, "must be > 0", "scheduler.mode_threshold")
    _check(sc.max_group >= 1, "must be >= 1", "scheduler.max_group")
    _check(sc.queue_unit_bits > 0, "must be > 0", "scheduler.queue_unit_bits")
    _check(sc.force_mode in (None, "JT", "CSCB"), "must be null, JT or CSCB",
           "scheduler.force_mode")
    _check(sc.arrival_scale >= 0, "must be >= 0", "scheduler.arrival_scale")
    if sc.priorities is not None:
        _check(len(sc.priorities) == cfg.n_users and all(p >= 0 for p in sc.priorities),
               "needs one non-negative value per user", "scheduler.priorities")
    if sc.clusters is not None:
        flat = sorted(bs for cl in sc.clusters for bs in cl)
        _check(flat == list(range(r.n_bs)), "must partition the BS ids",
               "scheduler.clusters")


# --- text format -----------------------------------------------------------

def _hints(cls):
    return typing.get_type_hints(cls)


def _is_optional(tp):
    return typing.get_origin(tp) in (Union, types.UnionType) and type(None) in typing.get_args(tp)


def _line(node) -> int:
    return node.start_mark.line + 1


def _scalar(node, tp, path):
    if not isinstance(node, yaml.ScalarNode):
        raise ConfigError(f"expected a scalar of type {tp.__name__}", path, _line(node))
    value = yaml.safe_load(yaml.serialize(node))
    if tp is bool:
        if isinstance(value, bool):
            return value
    elif tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if isinstance(value, str) and value.strip().lower() in ("inf", "-inf", "+inf", "nan"):
            return float(value)
    elif tp is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"expected {tp.__name__}, got {value!r}", path, _line(node))


def _convert(node, tp, path, lines):
    if _is_optional(tp):
        if isinstance(node, yaml.ScalarNode) and node.tag.endswith(":null"):
            return None
        inner = [a for a in typing.get_args(tp) if a is not type(None)][0]
        return _convert(node, inner, path, lines)
    if dataclasses.is_dataclass(tp):
        if not isinstance(node, yaml.MappingNode):
            raise ConfigError("expected a mapping", path, _line(node))
        return _build(tp, node, path, lines)
    origin = typing.get_origin(tp)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(node, yaml.SequenceNode):
            raise ConfigError("expected a list", path, _line(node))
        items = node.value
        if len(args) == 2 and args[1] is Ellipsis:
            args = (args[0],) * len(items)
        elif len(items) != len(args):
            raise ConfigError(f"expected {len(args)} items", path, _line(node))
        out = []
        for i, (n, a) in enumerate(zip(items, args)):
            lines[f"{path}[{i}]"] = _line(n)
            out.append(_convert(n, a, f"{path}[{i}]", lines))
        return tuple(out)
    return _scalar(node, tp, path)


def _build(cls, node, prefix, lines):
    hints = _hints(cls)
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key_node, value_node in node.value:
        key = key_node.value
        path = f"{prefix}.{key}" if prefix else key
        if key not in known:
            raise ConfigError("unknown key", path, _line(key_node))
        if key in kwargs:
            raise ConfigError("duplicate key", path, _line(key_node))
        lines[path] = _line(key_node)
        kwargs[key] = _convert(value_node, hints[key], path, lines)
    return cls(**kwargs)


def _line_for(path, lines):
    while path:
        if path in lines:
            return lines[path]
        cut = max(path.rfind("."), path.rfind("["))
        path = path[:cut] if cut > 0 else ""
    return None


def parse_config(text: str) -> ScenarioConfig:
    """Parse YAML scenario text; omitted keys take their defaults.

    Raises :class:`ConfigError` naming the key path and source line for
    unknown keys, type mismatches and constraint violations.
    """
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"malformed text: {getattr(exc, 'problem', exc)}", "",
                          None if mark is None else mark.line + 1) from None
    if node is None:
        return ScenarioConfig()
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("top level must be a mapping", "", _line(node))
    lines: dict[str, int] = {}
    try:
        return _build(ScenarioConfig, node, "", lines)
    except ConfigError as exc:
        if exc.line is None:
            raise ConfigError(str(exc).split(": ", 1)[1], exc.path,
                              _line_for(exc.path, lines)) from None
        raise


def _plain(value):
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in fields(value)}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


def to_dict(cfg: ScenarioConfig) -> dict:
    return _plain(cfg)


def serialize_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False, default_flow_style=False)


def with_overrides(cfg: ScenarioConfig, overrides: dict[str, Any]) -> ScenarioConfig:
    """Return a copy of ``cfg`` with dotted-path keys replaced.

    Values may be Python objects or YAML text (as given on a command line).
    """
    data = to_dict(cfg)
    for path, value in overrides.items():
        if isinstance(value, str):
            value = yaml.safe_load(value)
        keys = path.split(".")
        target = data
        for k in keys[:-1]:
            if not isinstance(target, dict) or k not in target:
                raise ConfigError("unknown key", path)
            target = target[k]
        if not isinstance(target, dict) or keys[-1] not in target:
            raise ConfigError("unknown key", path)
        target[keys[-1]] = _plain(value)
    return parse_config(yaml.safe_dump(data, sort_keys=False))


def section_replace(cfg: ScenarioConfig, **sections) -> ScenarioConfig:
    """``replace`` for nested sections: ``section_replace(c, channel={"csi_bits": 4})``."""
    kwargs = {}
    for name, changes in sections.items():
        current = getattr(cfg, name)
        kwargs[name] = replace(current, **changes) if dataclasses.is_dataclass(current) else changes
    return replace(cfg, **kwargs)
