"""Command-line interface.

``fibrod <subcommand> --config FILE [--eps LIST] [--out DIR] [--workers N] [--check]``

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 a sweep
flag failed.
"""

from __future__ import annotations

import argparse
import sys

from fibrod.config import KINDS, ConfigError, RunConfig, load_config, parse_eps_list
from fibrod.fem.solver import SolverError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_FLAGS = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--eps", help="comma-separated eps values (overrides the config)")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--workers", type=int, default=1, help="concurrent eps solves")
    p.add_argument("--check", action="store_true", help="validate config and tensors without solving")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fibrod", description="Fiber-reinforced rod and homogenization solvers")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        _common(sub.add_parser(kind, help=f"run a {kind} problem"))
    mesh = sub.add_parser("mesh", help="mesh utilities")
    msub = mesh.add_subparsers(dest="action", required=True)
    _common(msub.add_parser("export", help="write the meshes a config would use"))
    return parser


def _prepare(args) -> RunConfig:
    kind = None if args.command == "mesh" else args.command
    cfg = load_config(args.config, kind)
    if args.eps:
        cfg = cfg.with_eps(parse_eps_list(args.eps))
    if args.out:
        cfg = cfg.with_output(args.out)
    if args.workers < 1:
        raise ConfigError("--workers must be at least 1")
    return cfg


def _export_meshes(cfg: RunConfig) -> int:
    from fibrod.harness import RunResults, emit_outputs, hom_cell, rod_meshes
    from fibrod.mesh import build_periodic_array_mesh

    res = RunResults(cfg.echo())
    if cfg.problem == "rod":
        section, mesh = rod_meshes(cfg)
        res.meshes.update(section=section, rod=mesh)
    else:
        d = cfg.discretization
        res.meshes["cell"] = hom_cell(cfg, d.cell_n)
        cell = hom_cell(cfg, d.n_per_cell)
        for e in cfg.eps_list:
            res.meshes[f"array_eps={e!r}"] = build_periodic_array_mesh(
                cfg.geometry.ell, e, cfg.geometry.cell_radius, d.n_per_cell, layers=d.hom_layers, cell=cell)
    for p in emit_outputs(res, cfg.output.dir):
        print(p)
    return EXIT_OK


def _print_report(report) -> None:
    for name, ok in report.flags.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    for name, fit in report.rates.items():
        rate = "indeterminate" if fit.exponent is None else f"{fit.exponent:.4g}"
        print(f"rate {name}: {rate}")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _prepare(args)
        if args.check:
            from fibrod.harness import check_only

            info = check_only(cfg)
            print(f"config ok: kind={cfg.kind} problem={cfg.problem} eps={list(cfg.eps_list)}")
            print(f"tensor m_est={info['m_est']:.6g} bound_est={info['bound_est']:.6g}")
            for v in info["violations"]:
                print(f"violation: {v}")
            return EXIT_OK if info["ok"] else EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "mesh":
        try:
            return _export_meshes(cfg)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG

    from fibrod.harness import SweepFailure, emit_outputs, run

    try:
        res = run(cfg, args.workers)
    except SweepFailure as exc:
        if exc.partial is not None:
            emit_outputs(exc.partial, cfg.output.dir)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (SolverError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    try:
        written = emit_outputs(res, cfg.output.dir)
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(f"wrote {len(written)} files to {cfg.output.dir}")
    if res.report is not None:
        _print_report(res.report)
        if not res.report.passed:
            return EXIT_FLAGS
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
