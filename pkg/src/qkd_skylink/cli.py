"""``qkd-skylink`` command line.

Exit codes: 0 success, 2 scenario validation error, 3 protocol abort.
Log verbosity comes from ``QKD_SKYLINK_LOG`` (e.g. ``INFO``); nothing else
is read from the environment.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ProtocolAbort, ScenarioValidationError
from .seeding import U64_MASK

EXIT_OK, EXIT_VALIDATION, EXIT_ABORT = 0, 2, 3
LOG_ENV = "QKD_SKYLINK_LOG"


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= U64_MASK:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _scenario(args):
    from .mission import default_scenario, load_scenario

    cfg = load_scenario(args.scenario) if args.scenario else default_scenario()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_run(args) -> int:
    from .mission import run_end_to_end_artifacts

    cfg = _scenario(args)
    art = run_end_to_end_artifacts(cfg)
    files = art.write(args.out)
    if args.deterministic_check:
        again = run_end_to_end_artifacts(cfg)
        with_tmp = Path(args.out) / ".recheck"
        files2 = again.write(with_tmp)
        diff = [k for k in files if files[k] != files2[k]]
        for k in files2:
            (with_tmp / k).unlink()
        with_tmp.rmdir()
        if diff:
            print(f"determinism check FAILED: {', '.join(sorted(diff))} differ", file=sys.stderr)
            return 1
        print("determinism check passed: all artifacts byte-identical")
    r = art.report
    print(f"status={r.status} sifted={r.sifted_bits} qber={r.qber:.4f} final_key_bits={r.final_key_bits} "
          f"projected_rate_bps={r.projected_key_rate_bps:.4g}")
    if r.status != "ok":
        print(f"abort: {r.failure_reason}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_pass(args) -> int:
    from .geometry import propagate_pass, write_pass_csv
    from .pat import run_pass

    cfg = _scenario(args)
    profile = propagate_pass(cfg.orbit, cfg.station, args.step or cfg.channel.pass_step_s)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pass_csv(profile, out / "pass.csv")
    timeline, avail = run_pass(profile, cfg.channel.cloud_blockages, cfg.pat, cfg.seed)
    timeline.write_csv(out / "timeline.csv")
    print(f"samples={len(profile)} duration_s={profile.duration_s:g} availability={avail:.6f}")
    return EXIT_OK


def cmd_ao_bench(args) -> int:
    from .ao import LoopConfig, ao_benchmark

    cfg = LoopConfig(rate_hz=args.rate, gain=args.gain)
    res = ao_benchmark(args.d_over_r0, args.wind, args.duration, cfg, args.diameter, args.seed)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        res.open_loop.write_csv(out / "open_loop.csv")
        res.closed_loop.write_csv(out / "closed_loop.csv")
    print(f"open_eta={res.open_loop.mean_coupling:.4f} closed_eta={res.closed_loop.mean_coupling:.4f} "
          f"ratio={res.gain_ratio:.2f}")
    return EXIT_OK


def cmd_channel_bench(args) -> int:
    from .turbulence import generate_phase_screen, kolmogorov_structure_function, structure_function

    pixel = args.diameter / (args.grid / 2)
    r0 = args.diameter / args.d_over_r0
    lags = np.arange(1, args.grid // 4 + 1)
    acc = np.zeros(lags.size)
    for k in range(args.screens):
        acc += structure_function(generate_phase_screen(args.grid, pixel, r0, args.seed + k).phase_rad, lags[-1])[1:]
    ratio = acc / args.screens / kolmogorov_structure_function(lags * pixel, r0)
    print("lag_px,ratio")
    for lag, r in zip(lags[::max(1, lags.size // 8)], ratio[::max(1, lags.size // 8)]):
        print(f"{lag},{r:.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .mission import emit_report, read_report

    report = read_report(args.input)
    emit_report(report, args.format, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qkd-skylink", description="Space-to-ground BB84 pass simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one pass end to end")
    p.add_argument("--scenario", help="scenario YAML (default: bundled default.scenario)")
    p.add_argument("--seed", type=_u64, help="override the master seed")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--deterministic-check", action="store_true", help="run twice and compare every artifact")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("pass", help="pass geometry and PAT timeline only")
    p.add_argument("--scenario")
    p.add_argument("--seed", type=_u64)
    p.add_argument("--step", type=float, help="sample step in seconds")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pass)

    p = sub.add_parser("ao-bench", help="open- vs closed-loop coupling over frozen-flow turbulence")
    p.add_argument("--d-over-r0", type=float, default=10.0)
    p.add_argument("--wind", type=float, default=10.0)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--rate", type=float, default=2000.0)
    p.add_argument("--gain", type=float, default=0.5)
    p.add_argument("--diameter", type=float, default=0.8)
    p.add_argument("--seed", type=_u64, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ao_bench)

    p = sub.add_parser("channel-bench", help="phase-screen structure function against Kolmogorov")
    p.add_argument("--screens", type=int, default=20)
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--d-over-r0", type=float, default=10.0)
    p.add_argument("--diameter", type=float, default=0.8)
    p.add_argument("--seed", type=_u64, default=0)
    p.set_defaults(func=cmd_channel_bench)

    p = sub.add_parser("report", help="re-emit a JSON report as csv or json")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioValidationError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ProtocolAbort as exc:
        print(f"abort: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    raise SystemExit(main())
