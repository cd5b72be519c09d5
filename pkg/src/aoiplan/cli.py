"""``aoiplan`` command line: train, eval, sweep, validate-config, show-config.

Exit codes: 0 success, 2 bad input (config, flags, grid specs), 3 runtime failure
(unreadable checkpoint, assignment that could not be solved).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__, sim
from .config import ConfigError, ScenarioConfig

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


def parse_number_list(text, name):
    """Parse ``"0,10,20"`` or a range ``"0:100:10"`` (inclusive stop) into floats."""
    text = (text or "").strip()
    if not text:
        raise UsageError(f"{name}: empty list")
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise ValueError
            start, stop, step = parts
            count = int(round((stop - start) / step))
            values = [start + i * step for i in range(count + 1) if start + i * step <= stop + 1e-9]
        else:
            values = [float(p) for p in text.split(",")]
    except ValueError:
        raise UsageError(f"{name}: cannot parse {text!r}; use 'a,b,c' or 'start:stop:step'") from None
    if any(v != v for v in values):
        raise UsageError(f"{name}: NaN is not allowed")
    return values


def parse_override(text):
    if "=" not in text:
        raise UsageError(f"--set expects key=value, got {text!r}")
    key, raw = text.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_config(args):
    overrides = dict(parse_override(s) for s in (args.set or []))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "episodes", None) is not None and args.command == "train":
        overrides["episodes"] = args.episodes
    if getattr(args, "out_dir", None) is not None:
        overrides["out_dir"] = args.out_dir
    if args.config:
        return ScenarioConfig.load(args.config, overrides)
    return ScenarioConfig().with_overrides(overrides)


def cmd_train(args):
    cfg = load_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "config.yaml")
    result = sim.train(cfg, out_dir=out)
    curve = result.aoi_curve
    tail = float(curve[-50:].mean()) if len(curve) else float("nan")
    print(f"episodes={len(curve)} final_avg_aoi_ms={tail:.4f} elapsed_s={result.elapsed_s:.1f}")
    print(f"checkpoint={out / 'checkpoint.npz'}")
    return EXIT_OK


def cmd_eval(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        print(f"error: checkpoint not found: {ckpt}", file=sys.stderr)
        return EXIT_RUNTIME
    cfg = load_config(args) if (args.config or args.set or args.seed is not None) else None
    res = sim.evaluate(ckpt, episodes=args.episodes, cfg=cfg, seed=args.eval_seed)
    print(f"avg_aoi_ms={res.avg_aoi_ms:.6f}")
    if args.out:
        Path(args.out).write_text(json.dumps(res.to_dict(), indent=2))
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args)
    aoi = cfg.sweep.aoi_grid_ms if args.aoi_grid is None else parse_number_list(args.aoi_grid, "--aoi-grid")
    dms = cfg.sweep.delta_m if args.delta_m is None else parse_number_list(args.delta_m, "--delta-m")
    if any(d < 0 for d in dms):
        raise UsageError("--delta-m: values must be >= 0")
    amax = cfg.channel.aoi_max_ms
    if any(a < 0 or a > amax for a in aoi):
        raise UsageError(f"--aoi-grid: values must lie in [0, {amax:g}]")
    if len(set(aoi)) != len(aoi):
        raise UsageError("--aoi-grid: duplicate values")
    net = cfg.network.build()
    res = sim.aoi_capacity_sweep(net, aoi, dms, aoi_max=amax, tolerance=cfg.sweep.tolerance,
                                 max_iterations=cfg.sweep.max_iterations)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res.write_csv(out / "sweep.csv")
    curves = res.write_curves(out)
    print(f"rows={len(res.rows)} curves={len(curves)} csv={out / 'sweep.csv'}")
    if res.failures:
        for a, d, msg in res.failures:
            print(f"error: aoi={a:g} delta_m={d:g}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_validate(args):
    cfg = load_config(args)
    print(f"ok: {args.config or '<defaults>'} (seed={cfg.seed}, num_cvs={cfg.num_cvs})")
    return EXIT_OK


def cmd_show(args):
    cfg = load_config(args)
    sys.stdout.write(cfg.dump())
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="aoiplan", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML scenario file (defaults when omitted)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry, e.g. channel.num_subchannels=2")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out-dir")

    t = sub.add_parser("train", help="train the subchannel/power allocation agents")
    common(t)
    t.add_argument("--episodes", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="noise-free evaluation of a checkpoint")
    common(e, out=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--episodes", type=int, default=20)
    e.add_argument("--eval-seed", type=int, help="seed of the evaluation episodes")
    e.add_argument("--out", help="write eval.json here")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="travel time and V/C against AoI")
    common(s)
    s.add_argument("--aoi-grid", help="'0,10,20' or '0:100:10'")
    s.add_argument("--delta-m", help="capacity error magnitudes, e.g. '5,10,15,20'")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate-config", help="check a scenario file")
    common(v, out=False)
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("show-config", help="print the effective configuration as YAML")
    common(d, out=False)
    d.set_defaults(func=cmd_show)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except sim.CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
