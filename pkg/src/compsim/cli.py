"""Command-line entry point: ``compsim run | validate | replay | defaults``."""

from __future__ import annotations

import argparse
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .config import ConfigError, ScenarioConfig, parse_config, serialize_config, with_overrides
from .engine import SimulationError
from .io import RunManifest
from .presets import PRESETS, preset_config, run_plain, run_preset

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_MISMATCH = 3


def parse_seeds(text: str) -> list[int]:
    """``"0,3,5-7"`` -> ``[0, 3, 5, 6, 7]``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-", 1)
            a, b = int(lo), int(hi)
            if b < a:
                raise ValueError(f"empty seed range {part!r}")
            seeds.extend(range(a, b + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


def _flatten(node, prefix: str = "") -> dict:
    out = {}
    for k, v in node.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _parse_sets(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def build_config(config_path: Optional[str], preset: Optional[str],
                 sets: Sequence[str] = ()) -> ScenarioConfig:
    """Preset defaults, then keys present in the config file, then ``--set``."""
    cfg = preset_config(preset) if preset else ScenarioConfig()
    if config_path:
        text = Path(config_path).read_text(encoding="utf-8")
        parse_config(text)  # full diagnostics with line numbers
        node = yaml.safe_load(text) or {}
        cfg = with_overrides(cfg, _flatten(node))
    if sets:
        cfg = with_overrides(cfg, _parse_sets(sets))
    return cfg


def _formats(checksums) -> tuple[str, ...]:
    names = {Path(p).name for p in checksums}
    fm = []
    if "traces.csv" in names:
        fm.append("csv")
    if "metrics.json" in names:
        fm.append("json")
    return tuple(fm) or ("csv", "json")


def cmd_run(args) -> int:
    cfg = build_config(args.config, args.preset, args.set or ())
    seeds = parse_seeds(args.seeds) if args.seeds else None
    if args.preset:
        m = run_preset(args.preset, cfg, args.out, seeds, args.config, args.set or ())
    else:
        formats = tuple(f.strip() for f in args.formats.split(",") if f.strip())
        m = run_plain(cfg, args.out, seeds, formats, args.config, args.set or ())
    print(f"wrote {len(m.checksums)} files and manifest.json to {m.out_dir}")
    return EXIT_OK


def cmd_validate(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text)
    if args.print:
        sys.stdout.write(serialize_config(cfg))
    else:
        print(f"{args.config}: ok")
    return EXIT_OK


def cmd_defaults(args) -> int:
    cfg = preset_config(args.preset) if args.preset else ScenarioConfig()
    sys.stdout.write(serialize_config(cfg))
    return EXIT_OK


def cmd_replay(args) -> int:
    m = RunManifest.read(args.manifest)
    cfg = parse_config(m.config_yaml)
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(args.out) if args.out else Path(tmp)
        if m.preset:
            again = run_preset(m.preset, cfg, out, m.seeds, m.config_path, m.overrides)
        else:
            again = run_plain(cfg, out, m.seeds, _formats(m.checksums), m.config_path,
                              m.overrides)
        bad = sorted(k for k in set(m.checksums) | set(again.checksums)
                     if m.checksums.get(k) != again.checksums.get(k))
    for k in bad:
        print(f"mismatch: {k}", file=sys.stderr)
    if bad:
        return EXIT_MISMATCH
    print(f"replay reproduced {len(m.checksums)} files")
    return EXIT_OK


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compsim",
                                description="Coordinated multipoint simulator with "
                                            "KPI and KQI driven scheduling.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a preset or a single scenario")
    r.add_argument("--config", help="YAML scenario file")
    r.add_argument("--preset", choices=sorted(PRESETS), help="named experiment")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--seeds", help="seed list such as 0,1,2 or 0-19")
    r.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one dotted config key (repeatable)")
    r.add_argument("--formats", default="csv,json", help="metric formats without a preset")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="parse a config and report errors")
    v.add_argument("--config", required=True)
    v.add_argument("--print", action="store_true", help="print the normalized config")
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("defaults", help="print the default (or preset) config")
    d.add_argument("--preset", choices=sorted(PRESETS))
    d.set_defaults(func=cmd_defaults)

    rp = sub.add_parser("replay", help="re-run a manifest and compare checksums")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="directory for the re-run (default: temporary)")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
