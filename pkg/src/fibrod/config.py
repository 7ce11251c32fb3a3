"""Run configuration: ``[section]`` headers with ``key = value`` lines.

Every key is validated before any solve; unknown sections or keys are
errors. Tensor blocks accept a shared value (``mu = 1``) or per-region
values (``fiber.mu = 1``, ``matrix.mu = 0.1``), the latter taking priority.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fibrod.expr import HOM_VARIABLES, ROD_VARIABLES, Expression, ExpressionError
from fibrod.loads import LoadField
from fibrod.mesh import MeshError, SectionGeometry
from fibrod.tensors import (
    FIBER, MATRIX, ElasticityTensorField, EvaluationPoints, MandelMatrix, TensorError,
    make_isotropic, make_orthotropic,
)

KINDS = ("rod-micro", "rod-limit", "rod-nonlocal", "hom-micro", "hom-limit", "hom-nonlocal", "sweep")
TENSOR_KINDS = ("isotropic", "orthotropic", "mandel66", "expression")
ORTHO_KEYS = ("E1", "E2", "E3", "nu12", "nu13", "nu23", "G12", "G13", "G23")
REGIONS = {"fiber": FIBER, "matrix": MATRIX}

ROD_EPS = (0.4, 0.2, 0.1, 0.05)
HOM_EPS = (0.25, 0.125, 0.0625)
DEFAULT_PHIS = (
    "sin(6.283185307179586*x3)",
    "cos(6.283185307179586*y1)*sin(6.283185307179586*x3)",
    "chiF*(1+x1)*sin(6.283185307179586*x3)",
)


class ConfigError(ValueError):
    """Invalid configuration; ``where`` names the section/key."""

    def __init__(self, message: str, where: str = ""):
        super().__init__(f"{where}: {message}" if where else message)
        self.where = where


@dataclass(frozen=True)
class Geometry:
    outer: str = "disk"
    outer_size: float = 1.0
    fiber_radius: float = 0.5
    length: float = 1.0
    ell: float = 0.5
    cell_radius: float = 0.3

    def section(self) -> SectionGeometry:
        return SectionGeometry(self.outer, self.outer_size, self.fiber_radius)


@dataclass(frozen=True)
class Discretization:
    h: float = 0.1
    layers: int = 20
    limit_elements: int = 64
    eps: tuple[float, ...] = ()
    slices: int = 9
    n_per_cell: int = 8
    hom_layers: int = 8
    cell_n: int = 8
    macro_xy: int = 4
    macro_z: int = 8
    phis: tuple[str, ...] = DEFAULT_PHIS


@dataclass(frozen=True)
class SolverOptions:
    tol: float = 1e-10
    method: str = "auto"


@dataclass(frozen=True)
class OutputOptions:
    dir: str = "out"
    fields: bool = True


@dataclass(frozen=True)
class RunConfig:
    """A validated run description; ``echo`` is the canonical text of all settings."""

    kind: str
    problem: str
    geometry: Geometry
    tensor: ElasticityTensorField
    load: LoadField
    discretization: Discretization
    solver: SolverOptions
    output: OutputOptions
    tensor_spec: dict = field(default_factory=dict)

    @property
    def eps_list(self) -> tuple[float, ...]:
        eps = self.discretization.eps or (ROD_EPS if self.problem == "rod" else HOM_EPS)
        return tuple(sorted(eps, reverse=True))

    def with_eps(self, eps) -> "RunConfig":
        return replace(self, discretization=replace(self.discretization, eps=_check_eps(tuple(eps), "--eps")))

    def with_output(self, outdir: str) -> "RunConfig":
        return replace(self, output=replace(self.output, dir=str(outdir)))

    def echo(self) -> dict:
        g, d, s, o = self.geometry, self.discretization, self.solver, self.output
        return {
            "run": {"kind": self.kind, "problem": self.problem},
            "geometry": dict(g.__dict__),
            "tensor": dict(self.tensor_spec),
            "load": {f"f{k + 1}": c.source for k, c in enumerate(self.load.components)},
            "discretization": {**d.__dict__, "eps": list(self.eps_list), "phis": list(d.phis)},
            "solver": dict(s.__dict__),
            "output": dict(o.__dict__),
        }


# ----------------------------------------------------------------------------
# parsing helpers

_SCHEMA: dict[str, set[str]] = {
    "run": {"kind", "problem"},
    "geometry": {"outer", "outer_size", "fiber_radius", "length", "ell", "cell_radius"},
    "load": {"f1", "f2", "f3"},
    "discretization": set(Discretization.__dataclass_fields__),
    "solver": {"tol", "method"},
    "output": {"dir", "fields"},
}


def _float(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"expected a real number, got {text!r}", where) from None
    if not np.isfinite(v):
        raise ConfigError("value must be finite", where)
    return v


def _int(text: str, where: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}", where) from None


def _bool(text: str, where: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on"):
        return True
    if t in ("0", "no", "false", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}", where)


def _list(text: str) -> list[str]:
    return [p for p in (s.strip() for s in text.replace(";", ",").split(",")) if p]


def _check_eps(eps: tuple[float, ...], where: str) -> tuple[float, ...]:
    if not eps:
        raise ConfigError("eps list is empty", where)
    if any(not (e > 0 and np.isfinite(e)) for e in eps):
        raise ConfigError("eps values must be positive", where)
    if len(set(eps)) != len(eps):
        raise ConfigError("eps values must be distinct", where)
    return eps


def parse_eps_list(text: str, where: str = "--eps") -> tuple[float, ...]:
    return _check_eps(tuple(_float(p, where) for p in _list(text)), where)


# ----------------------------------------------------------------------------
# tensor blocks


def _region_values(section: dict[str, str], names, where: str) -> dict[int, dict[str, str]]:
    out: dict[int, dict[str, str]] = {FIBER: {}, MATRIX: {}}
    for name in names:
        shared = section.get(name)
        for rname, reg in REGIONS.items():
            val = section.get(f"{rname}.{name}", shared)
            if val is not None:
                out[reg][name] = val
    return out


def _constant_block(kind: str, vals: dict[str, str], where: str) -> MandelMatrix:
    try:
        if kind == "isotropic":
            return make_isotropic(_float(vals["lambda"], where), _float(vals["mu"], where))
        if kind == "orthotropic":
            return make_orthotropic(*(_float(vals[k], where) for k in ORTHO_KEYS))
        entries = [_float(p, where) for p in _list(vals["entries"].replace(" ", ","))]
        if len(entries) != 36:
            raise ConfigError(f"mandel66 entries need 36 reals, got {len(entries)}", where)
        return MandelMatrix.from_entries(entries)
    except TensorError as exc:
        raise ConfigError(str(exc), where) from exc


def _expression_block(vals: dict[str, str], allowed: frozenset[str], where: str):
    """Callable block from ``lambda``/``mu`` expressions or 36 entry expressions."""
    try:
        if "entries" in vals:
            exprs = [Expression.parse(p, allowed) for p in _list(vals["entries"])]
            if len(exprs) != 36:
                raise ConfigError(f"expression entries need 36 expressions, got {len(exprs)}", where)

            def block(pts: EvaluationPoints) -> np.ndarray:
                env, n = pts.variables(), len(pts)
                return np.stack([e(env, n) for e in exprs], axis=1).reshape(n, 6, 6)

            used = frozenset().union(*(e.variables for e in exprs))
        else:
            lam = Expression.parse(vals["lambda"], allowed)
            mu = Expression.parse(vals["mu"], allowed)
            e = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
            ee = np.outer(e, e)

            def block(pts: EvaluationPoints) -> np.ndarray:
                env, n = pts.variables(), len(pts)
                lv, mv = lam(env, n), mu(env, n)
                return 2.0 * mv[:, None, None] * np.eye(6) + lv[:, None, None] * ee

            used = lam.variables | mu.variables
    except ExpressionError as exc:
        raise ConfigError(f"{exc} (offset {exc.offset})", where) from exc
    return block, used


def build_tensor(section: dict[str, str], problem: str) -> tuple[ElasticityTensorField, dict]:
    where = "tensor"
    kind = section.get("kind", "isotropic").strip().strip('"')
    if kind not in TENSOR_KINDS:
        raise ConfigError(f"unknown tensor kind {kind!r}", where + ".kind")
    names = {"isotropic": ("lambda", "mu"), "orthotropic": ORTHO_KEYS, "mandel66": ("entries",),
             "expression": ("lambda", "mu", "entries")}[kind]
    allowed_keys = {"kind"} | set(names) | {f"{r}.{n}" for r in REGIONS for n in names}
    for key in section:
        if key not in allowed_keys:
            raise ConfigError(f"unknown key {key!r} for tensor kind {kind!r}", where)
    per = _region_values(section, names, where)
    if not section.keys() - {"kind"}:
        per = {FIBER: {"lambda": "1", "mu": "1"}, MATRIX: {"lambda": "1", "mu": "1"}}
    periodic = problem == "hom"
    allowed = HOM_VARIABLES if periodic else ROD_VARIABLES
    blocks: dict = {}
    dep_x = dep_y = False
    for rname, reg in REGIONS.items():
        vals = per[reg]
        rwhere = f"{where}.{rname}"
        if kind == "expression":
            if not ("entries" in vals or {"lambda", "mu"} <= vals.keys()):
                raise ConfigError("expression tensor needs lambda and mu, or entries", rwhere)
            blk, used = _expression_block(vals, allowed, rwhere)
            dep_x |= bool(used & {"x1", "x2", "x3"})
            dep_y |= bool(used & {"y1", "y2"})
            blocks[reg] = blk
        else:
            missing = [n for n in names if n not in vals]
            if missing:
                raise ConfigError(f"missing {', '.join(missing)}", rwhere)
            blocks[reg] = _constant_block(kind, vals, rwhere)
    field_ = ElasticityTensorField(blocks, periodic=periodic, depends_on_x=dep_x, depends_on_y=dep_y,
                                   description=kind)
    spec = {"kind": kind, **{f"{r}.{k}": v for r, reg in REGIONS.items() for k, v in sorted(per[reg].items())}}
    return field_, spec


# ----------------------------------------------------------------------------
# whole file


def _problem_of(kind: str, run: dict[str, str]) -> str:
    if kind == "sweep":
        p = run.get("problem", "rod")
        if p not in ("rod", "hom"):
            raise ConfigError(f"sweep problem must be rod or hom, got {p!r}", "run.problem")
        return p
    if "problem" in run and run["problem"] != kind.split("-")[0]:
        raise ConfigError(f"problem {run['problem']!r} contradicts kind {kind!r}", "run.problem")
    return kind.split("-")[0]


def parse_config_text(text: str, kind: str | None = None) -> RunConfig:
    """Parse and validate; ``kind`` (from the CLI subcommand) overrides ``[run] kind``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   comment_prefixes=("#", ";"), strict=True, empty_lines_in_values=False)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc.message if hasattr(exc, 'message') else exc}") from exc
    sections = {name: dict(cp.items(name)) for name in cp.sections()}
    for name, body in sections.items():
        if name == "tensor":
            continue
        if name not in _SCHEMA:
            raise ConfigError(f"unknown section [{name}]", name)
        unknown = set(body) - _SCHEMA[name]
        if unknown:
            raise ConfigError(f"unknown key {sorted(unknown)[0]!r}", name)
    run = sections.get("run", {})
    kind = kind or run.get("kind")
    if kind is None:
        raise ConfigError("missing run kind", "run.kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown run kind {kind!r}", "run.kind")
    if "kind" in run and run["kind"] != kind and kind != "sweep" and run["kind"] != "sweep":
        raise ConfigError(f"config kind {run['kind']!r} does not match subcommand {kind!r}", "run.kind")
    problem = _problem_of(kind, run)

    geometry = _parse_geometry(sections.get("geometry", {}), problem)
    tensor, spec = build_tensor(sections.get("tensor", {}), problem)
    load = _parse_load(sections.get("load", {}), problem)
    disc = _parse_discretization(sections.get("discretization", {}), problem)
    solver = _parse_solver(sections.get("solver", {}))
    output = _parse_output(sections.get("output", {}))
    cfg = RunConfig(kind, problem, geometry, tensor, load, disc, solver, output, spec)
    if kind == "sweep" and len(cfg.eps_list) < 3:
        raise ConfigError("a sweep needs at least 3 eps values", "discretization.eps")
    return cfg


def load_config(path: str | Path, kind: str | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    return parse_config_text(text, kind)


def _parse_geometry(sec: dict[str, str], problem: str) -> Geometry:
    kw: dict = {}
    for key, val in sec.items():
        where = f"geometry.{key}"
        kw[key] = val.strip() if key == "outer" else _float(val, where)
        if key != "outer" and not kw[key] > 0:
            raise ConfigError("must be positive", where)
    g = Geometry(**kw)
    try:
        g.section()
    except MeshError as exc:
        raise ConfigError(str(exc), "geometry") from exc
    if not 0 < g.cell_radius < 0.5:
        raise ConfigError("cell fiber radius must lie in (0, 1/2)", "geometry.cell_radius")
    return g


def _parse_load(sec: dict[str, str], problem: str) -> LoadField:
    comps = [sec.get(f"f{k}", "0") for k in (1, 2, 3)]
    if not sec:
        comps = ["0", "0", "1"]
    for k, c in enumerate(comps):
        try:
            Expression.parse(c, ROD_VARIABLES if problem == "rod" else HOM_VARIABLES)
        except ExpressionError as exc:
            raise ConfigError(f"{exc} (offset {exc.offset})", f"load.f{k + 1}") from exc
    return LoadField.parse(*comps, mode="rod" if problem == "rod" else "hom")


def _parse_discretization(sec: dict[str, str], problem: str) -> Discretization:
    kw: dict = {}
    for key, val in sec.items():
        where = f"discretization.{key}"
        if key == "h":
            kw[key] = _float(val, where)
            if not kw[key] > 0:
                raise ConfigError("must be positive", where)
        elif key == "eps":
            kw[key] = parse_eps_list(val, where)
        elif key == "phis":
            phis = tuple(_list(val))
            for p in phis:
                try:
                    Expression.parse(p, HOM_VARIABLES)
                except ExpressionError as exc:
                    raise ConfigError(f"{exc} (offset {exc.offset})", where) from exc
            kw[key] = phis
        else:
            kw[key] = _int(val, where)
            if kw[key] < 1:
                raise ConfigError("must be at least 1", where)
    d = Discretization(**kw)
    if d.n_per_cell < 8 or d.n_per_cell % 2:
        raise ConfigError("n_per_cell must be even and at least 8", "discretization.n_per_cell")
    if d.cell_n < 8 or d.cell_n % 2:
        raise ConfigError("cell_n must be even and at least 8", "discretization.cell_n")
    if d.slices < 2:
        raise ConfigError("need at least 2 slices", "discretization.slices")
    return d


def _parse_solver(sec: dict[str, str]) -> SolverOptions:
    tol = _float(sec.get("tol", "1e-10"), "solver.tol")
    if not 0 < tol < 1:
        raise ConfigError("tolerance must lie in (0, 1)", "solver.tol")
    method = sec.get("method", "auto").strip()
    if method not in ("auto", "direct", "cg-amg", "cg-jacobi"):
        raise ConfigError(f"unknown solver method {method!r}", "solver.method")
    return SolverOptions(tol, method)


def _parse_output(sec: dict[str, str]) -> OutputOptions:
    return OutputOptions(sec.get("dir", "out").strip(), _bool(sec.get("fields", "yes"), "output.fields"))
