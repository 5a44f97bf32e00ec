"""Command-line interface: ``dvdflow run|convergence|tableau-check|radius-bench``.

Exit codes: 0 success, 1 a check did not pass, 2 config error,
3 solver failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .experiment import SolverFailure, convergence_study, radius_bench, run
from .tableau import (
    BUILTIN_NAMES,
    build_certificate,
    certify_builtin,
    expand_matrix,
    find_partition_vector,
    is_psd_exact,
    read_tableau,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out-dir", help="directory for CSV and snapshots")
    common.add_argument("-v", "--verbose", action="store_true", help="log solver progress")

    p = argparse.ArgumentParser(prog="dvdflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run one experiment")
    r.add_argument("config", help="config file or preset name (example1..example4)")

    c = sub.add_parser("convergence", parents=[common], help="temporal convergence study")
    c.add_argument("config")
    c.add_argument("--h", required=True, help="comma-separated step sizes, e.g. 1e-3,5e-4,2.5e-4")
    c.add_argument("--ref-divisor", type=int, default=32, help="reference step = min(h)/divisor")

    t = sub.add_parser("tableau-check", help="stability certificate of a tableau")
    t.add_argument("tableau", help=f"built-in name ({', '.join(BUILTIN_NAMES)}) or tableau file")

    b = sub.add_parser("radius-bench", parents=[common], help="shrinking-circle law check")
    b.add_argument("config")
    return p


def _config(args):
    cfg = load_config(args.config)
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    return cfg.with_overrides(**changes) if changes else cfg


def _cmd_run(args) -> int:
    cfg = _config(args)
    res = run(cfg, args.out_dir)
    last = res.rows[-1]
    print(f"{len(res.rows)} steps to t = {last.time:.6g}: energy {last.energy:.10g}, "
          f"modified energy {last.modified_energy:.10g}, mass {last.mass:.6e}")
    return EXIT_OK


def _cmd_convergence(args) -> int:
    cfg = _config(args)
    try:
        hs = [float(x) for x in args.h.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --h {args.h!r}") from None
    try:
        table = convergence_study(cfg, hs, args.ref_divisor)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    print(f"{cfg.scheme} on {cfg.model}, t_end = {cfg.t_end:g}")
    print(table.format())
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "convergence.csv", "w") as fh:
            fh.write("h,error,rate\n")
            for i, (h, e) in enumerate(zip(table.hs, table.errors)):
                rate = "" if i == 0 else f"{table.rates[i - 1]:.17g}"
                fh.write(f"{h:.17g},{e:.17g},{rate}\n")
    return EXIT_OK


def _cmd_tableau(args) -> int:
    name = args.tableau
    if name in BUILTIN_NAMES:
        cert = certify_builtin(name)
    else:
        try:
            tab = read_tableau(name)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cert = find_partition_vector(expand_matrix(tab), tab.nu)
        if cert is None:
            print(f"{name}: no unit partition vector with a PSD certificate found")
            return EXIT_CHECK
        cert = build_certificate(expand_matrix(tab), cert.v)
    print(f"{name}: v = [{', '.join(str(x) for x in cert.v)}]")
    print("B =")
    for row in cert.B:
        print("  [" + ", ".join(str(x) for x in row) + "]")
    exact = is_psd_exact(cert.B)
    print(f"min eigenvalue {cert.min_eigenvalue:.3e}; PSD (exact minors): {exact}")
    return EXIT_OK if exact and cert.is_psd() else EXIT_CHECK


def _cmd_radius(args) -> int:
    cfg = _config(args)
    bench = radius_bench(cfg, args.out_dir)
    print(f"R0 = {bench.r0:.6g}; R(t_end) = {bench.radii[-1]:.6g} at t = {bench.times[-1]:.6g}")
    print(f"max |R^2 - (R0^2 - 2t)| / R0^2 over middle half: {bench.max_rel_dev:.4f}")
    print(f"monotone decreasing: {bench.monotone}")
    return EXIT_OK if bench.passed else EXIT_CHECK


COMMANDS = {
    "run": _cmd_run,
    "convergence": _cmd_convergence,
    "tableau-check": _cmd_tableau,
    "radius-bench": _cmd_radius,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
