"""Experiment drivers, convergence reports and result persistence.

Each ``run_*`` driver turns a :class:`~fibrod.config.RunConfig` into a
:class:`RunResults` (tables, meshes, field dumps, manifest entries) that
:func:`emit_outputs` writes. Numbers in CSV files carry 17 significant
digits and never include timings, so identical configs give identical CSVs.
"""

from __future__ import annotations

import csv
import io
import json
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from fibrod import __version__
from fibrod.config import RunConfig
from fibrod.expr import Expression
from fibrod.fem import kernels
from fibrod.mesh import (
    RegionTaggedMesh, build_cell_mesh, build_periodic_array_mesh, build_section_mesh, extrude, layer_nodes,
    mesh_summary, write_mesh,
)

MONOTONE_SLACK = 0.0
DIAGNOSTIC_FACTOR = 2.0
IDENTITY_TOL = 1e-8
ROD_DIAGNOSTICS = (
    "strain_fiber", "eps_grad_fiber", "h1_fiber", "eps_grad_matrix", "h1_inplane_matrix", "l2h1_axial_matrix",
)
HOM_DIAGNOSTICS = ("u3_l2", "eps_u_h1", "J_eps")


class SweepFailure(RuntimeError):
    """A solve inside a run failed; ``partial`` holds what was computed."""

    def __init__(self, message: str, partial: "RunResults | None" = None):
        super().__init__(message)
        self.partial = partial


# ----------------------------------------------------------------------------
# rate fits and reports


@dataclass(frozen=True)
class RateFit:
    exponent: float | None
    status: str  # "ok" | "indeterminate"
    points: int


def fit_rate(eps: Sequence[float], errors: Sequence[float]) -> RateFit:
    """Least-squares slope of ``log(error)`` against ``log(eps)``.

    Nonpositive or non-finite errors are dropped; fewer than three
    remaining points (or fewer than three distinct ``eps``) give no fit.
    """
    e = np.asarray(eps, dtype=float)
    v = np.asarray(errors, dtype=float)
    if e.shape != v.shape:
        raise ValueError("eps and errors must have the same length")
    keep = np.isfinite(v) & (v > 0) & (e > 0)
    e, v = e[keep], v[keep]
    if len(e) < 3 or len(np.unique(e)) < 3:
        return RateFit(None, "indeterminate", int(len(e)))
    slope = np.polyfit(np.log(e), np.log(v), 1)[0]
    return RateFit(float(slope), "ok", int(len(e)))


def monotone_nonincreasing(values: Sequence[float]) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(v[1:] <= v[:-1] + MONOTONE_SLACK))


def bounded_by_coarsest(values: Sequence[float], factor: float = DIAGNOSTIC_FACTOR) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(v <= factor * v[0]))


def last_first_ratio(values: Sequence[float]) -> float:
    v = np.asarray(values, dtype=float)
    return float(v[-1] / v[0]) if v[0] != 0 else float("nan")


@dataclass
class ConvergenceReport:
    """Per-ε rows (sorted by decreasing ε), fitted exponents and pass/fail flags.

    Flags: every tracked error is monotone nonincreasing, every a priori
    diagnostic stays below twice its value at the largest ε, and the
    decomposition identity residual is at most ``1e-8``.
    """

    problem: str
    eps: np.ndarray
    errors: dict[str, np.ndarray]
    diagnostics: dict[str, np.ndarray]
    extras: dict[str, list] = field(default_factory=dict)
    identity_residual: float = 0.0
    checks: dict[str, bool] = field(default_factory=dict)

    @classmethod
    def build(cls, problem: str, eps, errors: dict, diagnostics: dict, extras: dict | None = None,
              identity_residual: float = 0.0, checks: dict | None = None) -> "ConvergenceReport":
        eps = np.asarray(eps, dtype=float)
        order = np.argsort(-eps, kind="stable")
        pick = lambda d: {k: np.asarray(v, dtype=float)[order] for k, v in d.items()}  # noqa: E731
        ex = {k: [v[i] for i in order] for k, v in (extras or {}).items()}
        return cls(problem, eps[order], pick(errors), pick(diagnostics), ex, float(identity_residual),
                   dict(checks or {}))

    @property
    def rates(self) -> dict[str, RateFit]:
        return {k: fit_rate(self.eps, v) for k, v in self.errors.items()}

    @property
    def flags(self) -> dict[str, bool]:
        out = {f"monotone:{k}": monotone_nonincreasing(v) for k, v in self.errors.items()}
        out.update({f"bounded:{k}": bounded_by_coarsest(v) for k, v in self.diagnostics.items()})
        out["identity"] = self.identity_residual <= IDENTITY_TOL
        out.update(self.checks)
        return out

    @property
    def passed(self) -> bool:
        return all(self.flags.values())

    def report_table(self) -> "Table":
        keys_e, keys_d, keys_x = list(self.errors), list(self.diagnostics), list(self.extras)
        header = ["eps"] + keys_e + keys_d + keys_x
        rows = []
        for i, e in enumerate(self.eps):
            rows.append([e] + [self.errors[k][i] for k in keys_e] + [self.diagnostics[k][i] for k in keys_d]
                        + [self.extras[k][i] for k in keys_x])
        return Table("report.csv", header, rows)

    def rates_table(self) -> "Table":
        rows = []
        for k, v in self.errors.items():
            fit = self.rates[k]
            rows.append(["error", k, fit.exponent if fit.exponent is not None else "", fit.status, fit.points,
                         last_first_ratio(v), int(monotone_nonincreasing(v))])
        for k, v in self.diagnostics.items():
            rows.append(["diagnostic", k, "", "", len(v), float(v.max() / v[0]) if v[0] else float("nan"),
                         int(bounded_by_coarsest(v))])
        rows.append(["identity", "residual", "", "", 0, self.identity_residual, int(self.flags["identity"])])
        for k, ok in self.checks.items():
            rows.append(["check", k, "", "", 0, "", int(ok)])
        return Table("rates.csv", ["kind", "name", "exponent", "fit", "points", "ratio", "pass"], rows)


# ----------------------------------------------------------------------------
# persistence


@dataclass
class Table:
    name: str
    header: list[str]
    rows: list[list]


@dataclass
class FieldDump:
    """Nodal values on a named mesh; written as ``fields/<name>.csv``."""

    name: str
    mesh: str
    values: np.ndarray
    columns: tuple[str, ...]


@dataclass
class RunResults:
    config: dict | None = None
    tables: list[Table] = field(default_factory=list)
    meshes: dict[str, RegionTaggedMesh] = field(default_factory=dict)
    fields: list[FieldDump] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    report: ConvergenceReport | None = None

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _write(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def environment_versions() -> dict:
    import scipy

    out = {"fibrod": __version__, "python": platform.python_version(), "numpy": np.__version__,
           "scipy": scipy.__version__, "kernels": kernels.BACKEND}
    try:
        import pyamg

        out["pyamg"] = pyamg.__version__
    except ImportError:  # pragma: no cover - declared dependency
        pass
    return out


def emit_outputs(results: RunResults, outdir: str | Path) -> list[Path]:
    """Write tables, meshes, field dumps and ``manifest.json``; returns the written paths."""
    out = Path(outdir)
    written: list[Path] = []
    for t in results.tables:
        p = out / t.name
        _write(p, csv_text(t.header, t.rows))
        written.append(p)
    for name, mesh in sorted(results.meshes.items()):
        p = out / "fields" / f"{name}.mesh"
        try:
            p.parent.mkdir(parents=True, exist_ok=True)
            write_mesh(mesh, p)
        except OSError as exc:
            raise OSError(f"cannot write {p}: {exc}") from exc
        written.append(p)
    for fd in results.fields:
        vals = np.asarray(fd.values, dtype=float).reshape(len(fd.values), -1)
        rows = [[i] + list(r) for i, r in enumerate(vals.tolist())]
        p = out / "fields" / f"{fd.name}.csv"
        _write(p, f"# mesh={fd.mesh}.mesh\n" + csv_text(["vertex", *fd.columns], rows))
        written.append(p)
    manifest = {
        "config": results.config,
        "versions": environment_versions(),
        "files": sorted(str(p.relative_to(out)) for p in written),
        "meshes": {k: _jsonable(mesh_summary(m)) for k, m in sorted(results.meshes.items())},
        **_jsonable(results.manifest),
    }
    p = out / "manifest.json"
    _write(p, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


# ----------------------------------------------------------------------------
# two-scale pairings


@dataclass(frozen=True)
class PairingResult:
    micro: np.ndarray
    limit: float

    @property
    def gaps(self) -> np.ndarray:
        return np.abs(self.micro - self.limit)


def twoscale_pairing(fields: Sequence[tuple[RegionTaggedMesh, np.ndarray | None]], phi, limit,
                     component: int = 2) -> PairingResult:
    """``int u^eps(x) phi(x, x'/eps)`` per ε against ``int int u(x, y) phi(x, y)``.

    ``fields`` are ``(array mesh, nodal field)`` pairs (``None`` means the
    constant 1); ``limit`` is a number or a limit solution with ``pairing``.
    """
    from fibrod.homogenization import micro_pairing

    phi = Expression.parse(phi) if isinstance(phi, (str, int, float)) else phi
    micro = np.array([micro_pairing(m, u, phi, component) for m, u in fields])
    value = float(limit.pairing(phi, component)) if hasattr(limit, "pairing") else float(limit)
    return PairingResult(micro, value)


# ----------------------------------------------------------------------------
# shared builders


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    """Ordered map, concurrent when ``workers > 1``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def rod_meshes(cfg: RunConfig):
    g, d = cfg.geometry, cfg.discretization
    section = build_section_mesh(g.section(), d.h)
    return section, extrude(section, layer_nodes(g.length, d.layers))


def hom_cell(cfg: RunConfig, n_side: int) -> RegionTaggedMesh:
    return build_cell_mesh(cfg.geometry.cell_radius, n_side=n_side)


def _timed(timings: dict, key: str):
    class _T:
        def __enter__(self):
            self.t = time.perf_counter()

        def __exit__(self, *exc):
            timings[key] = time.perf_counter() - self.t

    return _T()


def _solver_record(info) -> dict:
    return {"method": info.method, "residual": info.residual, "iterations": info.iterations}


# ----------------------------------------------------------------------------
# rod drivers


def _rod_micro_one(cfg: RunConfig, mesh, eps: float):
    from fibrod.rod_micro import apriori_norms, solve_rod_micro

    t = time.perf_counter()
    sol = solve_rod_micro(mesh, cfg.tensor, cfg.load, eps, tol=cfg.solver.tol, method=cfg.solver.method)
    diag = apriori_norms(sol)
    return sol, diag, time.perf_counter() - t


def _rod_micro_rows(results_by_eps):
    header = ["eps", *ROD_DIAGNOSTICS, "energy", "load_work", "residual", "galerkin_defect", "solver", "iterations"]
    rows = []
    for eps, (sol, diag, _) in results_by_eps:
        rows.append([eps, *(diag[k] for k in ROD_DIAGNOSTICS), sol.energy, sol.load_work, sol.residual,
                     sol.galerkin_defect, sol.solve_info.method, sol.solve_info.iterations])
    return header, rows


def run_rod_micro(cfg: RunConfig, workers: int = 1) -> RunResults:
    res = RunResults(cfg.echo())
    section, mesh = rod_meshes(cfg)
    eps_list = cfg.eps_list
    solved = _map(lambda e: _rod_micro_one(cfg, mesh, e), eps_list, workers)
    pairs = list(zip(eps_list, solved))
    res.tables.append(Table("diagnostics.csv", *_rod_micro_rows(pairs)))
    res.manifest["solves"] = {format(e, ".17g"): {**_solver_record(s.solve_info), "wall_time": t}
                              for e, (s, _, t) in pairs}
    if cfg.output.fields:
        res.meshes["rod"] = mesh
        for e, (s, _, _) in pairs:
            res.fields.append(FieldDump(f"u_eps={e!r}", "rod", s.nodal(), ("u1", "u2", "u3")))
    return res


def _rod_limit(cfg: RunConfig, section):
    from fibrod.rod_limit import solve_rod_limit

    return solve_rod_limit(cfg.tensor, cfg.load, section=section, length=cfg.geometry.length,
                           elements=cfg.discretization.limit_elements)


def _slices(cfg: RunConfig, length: float) -> np.ndarray:
    return np.linspace(0.0, length, cfg.discretization.slices)


def _limit_tables(lim) -> list[Table]:
    x3 = lim.x3_nodes
    xi = lim.xi(x3)
    curves = Table("limit.csv", ["x3", "xi1", "xi2", "xi3", "theta"],
                   [[t, *xi[:, j]] for j, t in enumerate(x3)])
    qh = ["x3"] + [f"Q{i}{j}" for i in range(4) for j in range(4)]
    qrows = [[t, *lim.stiffness_at(float(t)).Q.ravel()] for t in x3]
    return [curves, Table("Q.csv", qh, qrows)]


def _strain_table(name: str, x3s, data, E) -> Table:
    header = ["x3", "cell", "q", "x1", "x2", "E11", "E22", "E33", "E23", "E13", "E12"]
    rows = []
    for s, t in enumerate(x3s):
        for e, c in enumerate(data.cells.tolist()):
            for q in range(E.shape[2]):
                rows.append([t, c, q, *data.points[e, q], *E[s, e, q]])
    return Table(name, header, rows)


def run_rod_limit(cfg: RunConfig, workers: int = 1) -> RunResults:
    from fibrod.fem.elements import element_data
    from fibrod.rod_limit import _section_rule, limit_strains

    res = RunResults(cfg.echo())
    section = build_section_mesh(cfg.geometry.section(), cfg.discretization.h)
    timings: dict = {}
    with _timed(timings, "limit"):
        lim = _rod_limit(cfg, section)
    res.tables.extend(_limit_tables(lim))
    res.manifest["limit"] = {"energy": lim.energy(), "beam_energy": lim.beam_energy,
                             "beam_load_work": lim.beam_load_work, "wall_time": timings["limit"]}
    if cfg.output.fields:
        xs = _slices(cfg, lim.length)
        res.meshes["section"] = section
        res.meshes["fiber"] = lim.fiber
        for t, p in zip(xs, lim.fiber_correctors(xs)):
            res.fields.append(FieldDump(f"fiber_correctors_x3={float(t)!r}", "fiber", p, ("w1", "w2", "v3")))
        for t, z in zip(xs, lim.z_at(xs)):
            res.fields.append(FieldDump(f"z_x3={float(t)!r}", "section", z, ("z1", "z2", "z3")))
        Ef, Em = limit_strains(lim, xs)
        res.tables.append(_strain_table("fields/E_f.csv", xs, element_data(lim.fiber, rule=_section_rule()), Ef))
        res.tables.append(_strain_table("fields/E_m.csv", xs, element_data(section, rule=_section_rule()), Em))
    return res


def _nonlocal_table(dec) -> Table:
    header = ["x3", "m0", "m00", "U", "mean_u3", "mean_f3_matrix"]
    rows = [[dec.x3[i], dec.m0[i], dec.m00[i], dec.U[i], dec.mean_u3[i], dec.mean_f3_matrix[i]]
            for i in range(len(dec.x3))]
    return Table("nonlocal.csv", header, rows)


def run_rod_nonlocal(cfg: RunConfig, workers: int = 1) -> RunResults:
    from fibrod.rod_nonlocal import decompose_U

    res = RunResults(cfg.echo())
    section = build_section_mesh(cfg.geometry.section(), cfg.discretization.h)
    lim = _rod_limit(cfg, section)
    dec = decompose_U(lim)
    res.tables.append(_nonlocal_table(dec))
    res.manifest["identity_residual"] = dec.identity_residual
    if cfg.output.fields:
        res.meshes["annulus"] = dec.annulus
        for k, z in enumerate(dec.z0):
            res.fields.append(FieldDump(f"z0_{k}", "annulus", z, ("z1", "z2", "z3")))
        xs = _slices(cfg, lim.length)
        idx = np.unique(np.searchsorted(dec.x3, xs).clip(0, len(dec.x3) - 1))
        for i in idx:
            res.fields.append(FieldDump(f"z00_x3={float(dec.x3[i])!r}", "annulus", dec.z00[i], ("z1", "z2", "z3")))
    return res


def _rod_sweep(cfg: RunConfig, workers: int) -> RunResults:
    from fibrod.rod_convergence import ERROR_KEYS, rod_limit_errors
    from fibrod.rod_nonlocal import decompose_U

    res = RunResults(cfg.echo())
    section, mesh = rod_meshes(cfg)
    timings: dict = {}
    with _timed(timings, "limit"):
        lim = _rod_limit(cfg, section)
        dec = decompose_U(lim)
    m0 = _nonlocal_table(dec)
    m0.name = "m0.csv"
    res.tables.append(m0)
    res.tables.extend(_limit_tables(lim))

    done: list = []

    def one(eps):
        sol, diag, wall = _rod_micro_one(cfg, mesh, eps)
        err = rod_limit_errors(sol, lim)
        done.append(eps)
        return sol, diag, err, wall

    eps_list = cfg.eps_list
    try:
        solved = _map(one, eps_list, workers)
    except Exception as exc:
        res.manifest["failed"] = str(exc)
        raise SweepFailure(f"sweep aborted: {exc}", res) from exc
    errors = {k: [s[2][k] for s in solved] for k in ERROR_KEYS}
    diags = {k: [s[1][k] for s in solved] for k in ROD_DIAGNOSTICS}
    extras = {
        "energy": [s[0].energy for s in solved],
        "residual": [s[0].residual for s in solved],
        "galerkin_defect": [s[0].galerkin_defect for s in solved],
        "solver": [s[0].solve_info.method for s in solved],
    }
    checks = {"galerkin": all(s[0].galerkin_defect <= 1e-9 for s in solved)}
    report = ConvergenceReport.build("rod", eps_list, errors, diags, extras, dec.identity_residual, checks)
    res.report = report
    res.tables[:0] = [report.report_table(), report.rates_table()]
    res.manifest["solves"] = {format(e, ".17g"): {**_solver_record(s[0].solve_info), "wall_time": s[3]}
                              for e, s in zip(eps_list, solved)}
    res.manifest["limit_wall_time"] = timings["limit"]
    res.manifest["flags"] = report.flags
    if cfg.output.fields:
        res.meshes["rod"] = mesh
        for e, s in zip(eps_list, solved):
            res.fields.append(FieldDump(f"u_eps={e!r}", "rod", s[0].nodal(), ("u1", "u2", "u3")))
    return res


# ----------------------------------------------------------------------------
# homogenization drivers


def _hom_micro_one(cfg: RunConfig, cell, eps: float):
    from fibrod.homogenization import fiber_volume, hom_apriori, solve_hom_micro

    d = cfg.discretization
    t = time.perf_counter()
    mesh = build_periodic_array_mesh(cfg.geometry.ell, eps, cfg.geometry.cell_radius, d.n_per_cell,
                                     layers=d.hom_layers, cell=cell)
    sol = solve_hom_micro(mesh, cfg.tensor, cfg.load, eps, tol=cfg.solver.tol, method=cfg.solver.method)
    diag = hom_apriori(sol)
    phis = [Expression.parse(p) for p in d.phis]
    from fibrod.homogenization import micro_pairing

    pair = [micro_pairing(mesh, sol.nodal(), p) for p in phis]
    vol = fiber_volume(mesh)
    exact = cell.metadata["fiber_polygon_area"] * (2 * cfg.geometry.ell) ** 2 * cfg.geometry.ell
    return {"sol": sol, "diag": diag, "pairing": pair, "fiber_volume": vol, "fiber_volume_exact": exact,
            "wall": time.perf_counter() - t}


def _hom_micro_header(n_phi: int) -> list[str]:
    return ["eps", *HOM_DIAGNOSTICS, "energy", "energy_bound", "load_l2", "coercivity", "residual",
            "galerkin_defect", "fiber_volume", "fiber_volume_exact", *(f"pairing_{k + 1}" for k in range(n_phi)),
            "solver", "iterations"]


def _hom_micro_row(eps, r) -> list:
    s, d = r["sol"], r["diag"]
    return [eps, *(d[k] for k in HOM_DIAGNOSTICS), d["energy"], d["energy_bound"], d["load_l2"], d["coercivity"],
            s.residual, s.galerkin_defect, r["fiber_volume"], r["fiber_volume_exact"], *r["pairing"],
            s.solve_info.method, s.solve_info.iterations]


def run_hom_micro(cfg: RunConfig, workers: int = 1) -> RunResults:
    res = RunResults(cfg.echo())
    cell = hom_cell(cfg, cfg.discretization.n_per_cell)
    eps_list = cfg.eps_list
    solved = _map(lambda e: _hom_micro_one(cfg, cell, e), eps_list, workers)
    res.tables.append(Table("diagnostics.csv", _hom_micro_header(len(cfg.discretization.phis)),
                            [_hom_micro_row(e, r) for e, r in zip(eps_list, solved)]))
    res.manifest["solves"] = {format(e, ".17g"): {**_solver_record(r["sol"].solve_info), "wall_time": r["wall"]}
                              for e, r in zip(eps_list, solved)}
    res.manifest["phis"] = list(cfg.discretization.phis)
    if cfg.output.fields:
        for e, r in zip(eps_list, solved):
            key = f"array_eps={e!r}"
            res.meshes[key] = r["sol"].mesh
            res.fields.append(FieldDump(f"u_eps={e!r}", key, r["sol"].nodal(), ("u1", "u2", "u3")))
    return res


def _hom_limit(cfg: RunConfig):
    from fibrod.homogenization import solve_hom_limit

    d = cfg.discretization
    cell = hom_cell(cfg, d.cell_n)
    return solve_hom_limit(cfg.tensor, cfg.load, ell=cfg.geometry.ell, macro=(d.macro_xy, d.macro_z), cell=cell)


def _macro_table(lim, dec=None) -> Table:
    X = lim.grid.nodes()
    mf = lim.macro_fields(X)
    U = lim.U(X) if dec is None else dec.U
    mean_D = lim.mean_D_u3(X) if dec is None else dec.mean_D_u3
    header = ["x1", "x2", "x3", "u1", "u2", "mean_D_u3", "theta", "U"]
    cols = [X[:, 0], X[:, 1], X[:, 2], mf["u1"], mf["u2"], mean_D, mf["theta"], U]
    if dec is not None:
        header += ["m0", "m00", "mean_f3_matrix"]
        cols += [dec.m0, dec.m00, dec.mean_f3_matrix]
    return Table("macro.csv", header, [list(r) for r in np.column_stack(cols).tolist()])


def _hom_cell_dumps(res: RunResults, lim) -> None:
    cell = lim.cell
    res.meshes["cell"] = cell.mesh
    res.meshes["disk"] = cell.fiber
    z = lim.grid.z_nodes
    pts = np.column_stack([np.zeros_like(z), np.zeros_like(z), z])
    _, _, _, p = lim.cell_state(pts)
    corr = lim.fiber_correctors(pts)
    for k, t in enumerate(z):
        res.fields.append(FieldDump(f"cell_matrix_x3={float(t)!r}", "cell", p[k], ("u1_1", "u1_2", "u3_dev")))
        res.fields.append(FieldDump(f"cell_fiber_x3={float(t)!r}", "disk", corr[k], ("w1", "w2", "v3")))


def run_hom_limit(cfg: RunConfig, workers: int = 1) -> RunResults:
    res = RunResults(cfg.echo())
    timings: dict = {}
    with _timed(timings, "limit"):
        lim = _hom_limit(cfg)
    res.tables.append(_macro_table(lim))
    res.manifest["limit"] = {"energy": lim.energy, "load_work": lim.load_work, "wall_time": timings["limit"],
                             **{k: v for k, v in lim.metadata.items() if isinstance(v, (int, float))}}
    if cfg.output.fields:
        _hom_cell_dumps(res, lim)
    return res


def run_hom_nonlocal(cfg: RunConfig, workers: int = 1) -> RunResults:
    from fibrod.homogenization import decompose_U_hom

    res = RunResults(cfg.echo())
    lim = _hom_limit(cfg)
    dec = decompose_U_hom(lim)
    res.tables.append(_macro_table(lim, dec))
    res.manifest["identity_residual"] = dec.identity_residual
    if cfg.output.fields:
        _hom_cell_dumps(res, lim)
        for k, z in enumerate(dec.z0):
            res.fields.append(FieldDump(f"z0_{k}", "cell", z, ("z1", "z2", "z3")))
    return res


def _hom_sweep(cfg: RunConfig, workers: int) -> RunResults:
    from fibrod.homogenization import decompose_U_hom

    res = RunResults(cfg.echo())
    d = cfg.discretization
    timings: dict = {}
    with _timed(timings, "limit"):
        lim = _hom_limit(cfg)
        dec = decompose_U_hom(lim)
        phis = [Expression.parse(p) for p in d.phis]
        limit_pair = [lim.pairing(p) for p in phis]
    m0 = _macro_table(lim, dec)
    m0.name = "m0.csv"
    res.tables.append(m0)
    cell = hom_cell(cfg, d.n_per_cell)
    eps_list = cfg.eps_list
    try:
        solved = _map(lambda e: _hom_micro_one(cfg, cell, e), eps_list, workers)
    except Exception as exc:
        res.manifest["failed"] = str(exc)
        raise SweepFailure(f"sweep aborted: {exc}", res) from exc
    errors = {f"pairing_gap_{k + 1}": [abs(r["pairing"][k] - limit_pair[k]) for r in solved]
              for k in range(len(phis))}
    diags = {k: [r["diag"][k] for r in solved] for k in HOM_DIAGNOSTICS}
    extras = {
        "energy": [r["sol"].energy for r in solved],
        "residual": [r["sol"].residual for r in solved],
        "galerkin_defect": [r["sol"].galerkin_defect for r in solved],
        "fiber_volume": [r["fiber_volume"] for r in solved],
        "fiber_volume_exact": [r["fiber_volume_exact"] for r in solved],
        "solver": [r["sol"].solve_info.method for r in solved],
    }
    checks = {
        "galerkin": all(r["sol"].galerkin_defect <= 1e-9 for r in solved),
        "fiber_volume": all(abs(r["fiber_volume"] - r["fiber_volume_exact"]) <= 1e-12 * r["fiber_volume_exact"]
                            for r in solved),
    }
    report = ConvergenceReport.build("hom", eps_list, errors, diags, extras, dec.identity_residual, checks)
    res.report = report
    res.tables[:0] = [report.report_table(), report.rates_table()]
    res.tables.append(Table("limit_pairings.csv", ["phi", "limit_pairing"],
                            [[p, v] for p, v in zip(d.phis, limit_pair)]))
    res.manifest["solves"] = {format(e, ".17g"): {**_solver_record(r["sol"].solve_info), "wall_time": r["wall"]}
                              for e, r in zip(eps_list, solved)}
    res.manifest["limit_wall_time"] = timings["limit"]
    res.manifest["flags"] = report.flags
    if cfg.output.fields:
        _hom_cell_dumps(res, lim)
        for e, r in zip(eps_list, solved):
            key = f"array_eps={e!r}"
            res.meshes[key] = r["sol"].mesh
            res.fields.append(FieldDump(f"u_eps={e!r}", key, r["sol"].nodal(), ("u1", "u2", "u3")))
    return res


def run_sweep(cfg: RunConfig, workers: int = 1) -> RunResults:
    """Micro solves over the ε list, one limit solve, the nonlocal decomposition and the report."""
    if len(cfg.eps_list) < 3:
        raise ValueError("a sweep needs at least 3 eps values")
    return _rod_sweep(cfg, workers) if cfg.problem == "rod" else _hom_sweep(cfg, workers)


DRIVERS: dict[str, Callable[[RunConfig, int], RunResults]] = {
    "rod-micro": run_rod_micro,
    "rod-limit": run_rod_limit,
    "rod-nonlocal": run_rod_nonlocal,
    "hom-micro": run_hom_micro,
    "hom-limit": run_hom_limit,
    "hom-nonlocal": run_hom_nonlocal,
    "sweep": run_sweep,
}


def run(cfg: RunConfig, workers: int = 1) -> RunResults:
    t = time.perf_counter()
    res = DRIVERS[cfg.kind](cfg, workers)
    res.manifest["wall_time"] = time.perf_counter() - t
    return res


def check_only(cfg: RunConfig) -> dict:
    """Validate tensors on the quadrature points of the meshes a run would use (no solves)."""
    from fibrod.fem.elements import cell_y_points, element_data
    from fibrod.tensors import EvaluationPoints, check_admissible

    if cfg.problem == "rod":
        _, mesh = rod_meshes(cfg)
    else:
        mesh = build_periodic_array_mesh(cfg.geometry.ell, max(cfg.eps_list), cfg.geometry.cell_radius,
                                         cfg.discretization.n_per_cell, layers=cfg.discretization.hom_layers)
    data = element_data(mesh)
    nq = data.weights.shape[1]
    y = cell_y_points(mesh, data)
    pts = EvaluationPoints(data.points.reshape(-1, 3), np.repeat(mesh.cell_region, nq),
                           None if y is None else y.reshape(-1, 2))
    rep = check_admissible(cfg.tensor, pts)
    return {"ok": rep.ok, "m_est": rep.m_est, "bound_est": rep.bound_est,
            "violations": [f"{v.kind} at {v.point}: {v.detail}" for v in rep.violations],
            "mesh": mesh_summary(mesh)}
