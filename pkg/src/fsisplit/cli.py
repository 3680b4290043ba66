"""Command-line front end: ``fsisplit {run,verify,refine,replay}``.

Exit status: 0 success, 1 verification failure, 2 configuration error,
3 solver divergence, 4 domain degeneration. ``FSISPLIT_THREADS`` sets the
number of parallel refinement levels.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from . import __version__
from .config import ConfigError, RunConfig, config_hash, load_config, serialize_config
from .scheme import SolverDivergenceError, atomic_write, read_checkpoint, run, write_checkpoint

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_DEGENERATE = 0, 1, 2, 3, 4

log = logging.getLogger("fsisplit")


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg.with_overrides(dt=args.dt, n_steps=args.steps, directory=args.out, seed=args.seed)


def _manifest(cfg: RunConfig, termination: str, report=None, extra: dict | None = None) -> dict:
    m = {
        "code_version": __version__,
        "config_hash": config_hash(cfg),
        "config": serialize_config(cfg),
        "termination": termination,
    }
    if report is not None:
        m["steps"] = len(report.steps)
        m["initial_energy"] = report.e0
        m["measured_constant"] = report.measured_constant
        m["forcing_l2"] = report.forcing_l2
        m["inequality_failures"] = len(report.inequality_failures())
    m.update(extra or {})
    return m


def _write_json(path: str, data: dict) -> None:
    atomic_write(path, (json.dumps(data, indent=2, sort_keys=True) + "\n").encode())


def simulate(cfg: RunConfig, state0=None) -> int:
    """Run one simulation and write energy.csv, snapshots, checkpoint.npz and manifest.json."""
    out = cfg.output.directory
    os.makedirs(out, exist_ok=True)
    scheme, setup = cfg.scheme_config(), cfg.problem_setup()
    state0 = cfg.initial_state(setup) if state0 is None else state0
    start = int(round(state0.level))
    scheme = replace(scheme, n_steps=max(0, scheme.n_steps - start))
    stride = cfg.output.stride
    meta = {"config_hash": config_hash(cfg)}

    def snapshot(step):
        lvl = int(round(step.new.level))
        if stride and "npz" in cfg.output.formats and lvl % stride == 0:
            write_checkpoint(os.path.join(out, "snapshots", f"state_{lvl:06d}.npz"), step.new, meta)

    try:
        res = run(scheme, setup, state0, callback=snapshot)
    except SolverDivergenceError as exc:
        _write_json(os.path.join(out, "manifest.json"),
                    _manifest(cfg, "DIVERGED", extra={"error": str(exc), "residual": exc.residual}))
        log.error("solver divergence: %s", exc)
        return EXIT_DIVERGENCE
    if "csv" in cfg.output.formats:
        atomic_write(os.path.join(out, "energy.csv"), res.report.to_csv().encode())
    write_checkpoint(os.path.join(out, "checkpoint.npz"), res.final, meta)
    extra = {"final_level": int(round(res.final.level))}
    if res.monitor is not None:
        extra["min_jacobian"] = res.monitor.min_jacobian
        if res.termination == "DEGENERATE":
            extra["degeneracy_reason"] = res.monitor.reason
    _write_json(os.path.join(out, "manifest.json"), _manifest(cfg, res.termination, res.report, extra))
    print(f"{res.termination}: {len(res.report.steps)} steps, final level {extra['final_level']}, "
          f"output in {out}")
    return EXIT_DEGENERATE if res.termination == "DEGENERATE" else EXIT_OK


def cmd_run(args) -> int:
    return simulate(_load(args))


def cmd_replay(args) -> int:
    cfg = _load(args)
    path = args.checkpoint or cfg.initial.checkpoint
    if not path:
        raise ConfigError("replay needs --checkpoint or initial.checkpoint")
    state, _ = read_checkpoint(path)
    return simulate(cfg, state)


def cmd_verify(args) -> int:
    from .studies import verify

    report = verify(_load(args), quick=args.quick)
    print(report.text())
    return EXIT_OK if report.ok else EXIT_VERIFY


def cmd_refine(args) -> int:
    from .studies import refinement_study

    cfg = _load(args)
    table = refinement_study(cfg, args.level_count)
    os.makedirs(cfg.output.directory, exist_ok=True)
    atomic_write(os.path.join(cfg.output.directory, "refinement.csv"), table.to_csv().encode())
    print(table.to_csv(), end="")
    print(f"monotone: {table.monotone}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fsisplit", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"fsisplit {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--dt", type=float, help="override scheme.dt")
        p.add_argument("--steps", type=int, help="override scheme.n_steps")
        p.add_argument("--out", help="override output.directory")
        p.add_argument("--seed", type=int, help="override seed")
        return p

    common(sub.add_parser("run", help="run a simulation")).set_defaults(fn=cmd_run)
    v = common(sub.add_parser("verify", help="run the verification suites"))
    v.add_argument("--quick", action="store_true", help="cap the energy suite at 5 steps")
    v.set_defaults(fn=cmd_verify)
    r = common(sub.add_parser("refine", help="temporal refinement study"))
    r.add_argument("--level-count", type=int, default=4)
    r.set_defaults(fn=cmd_refine)
    p = common(sub.add_parser("replay", help="continue a run from a checkpoint to the horizon"))
    p.add_argument("--checkpoint", help="checkpoint file (defaults to initial.checkpoint)")
    p.set_defaults(fn=cmd_replay)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"fsisplit: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
