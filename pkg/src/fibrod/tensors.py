"""Elasticity tensors in Mandel (orthonormal) 6x6 form.

Strain vectors are ordered ``(E11, E22, E33, sqrt2*E23, sqrt2*E13, sqrt2*E12)``.
With this basis the Euclidean product of two Mandel vectors equals the
Frobenius product of the symmetric matrices, so the eigenvalues of a
Mandel matrix are the eigenvalues of the fourth-order operator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

SQRT2 = np.sqrt(2.0)
MANDEL_PAIRS: tuple[tuple[int, int], ...] = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
MANDEL_FACTORS = np.array([1.0, 1.0, 1.0, SQRT2, SQRT2, SQRT2])

FIBER = 1
MATRIX = 0
REGION_NAMES = {FIBER: "fiber", MATRIX: "matrix"}

SYMMETRY_TOL = 1e-12


class TensorError(ValueError):
    """Raised for inadmissible elasticity parameters."""


def to_mandel(E: np.ndarray) -> np.ndarray:
    """Map symmetric 3x3 matrices (shape ``(..., 3, 3)``) to Mandel vectors."""
    E = np.asarray(E, dtype=float)
    if E.shape[-2:] != (3, 3):
        raise ValueError(f"expected (..., 3, 3) array, got {E.shape}")
    out = np.empty(E.shape[:-2] + (6,))
    for k, (i, j) in enumerate(MANDEL_PAIRS):
        out[..., k] = MANDEL_FACTORS[k] * E[..., i, j]
    return out


def from_mandel(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_mandel`."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 6:
        raise ValueError(f"expected (..., 6) array, got {v.shape}")
    out = np.empty(v.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(MANDEL_PAIRS):
        val = v[..., k] / MANDEL_FACTORS[k]
        out[..., i, j] = val
        out[..., j, i] = val
    return out


def tensor4_to_mandel(C: np.ndarray) -> np.ndarray:
    """Convert a 3x3x3x3 tensor with minor symmetries to its Mandel matrix."""
    C = np.asarray(C, dtype=float)
    M = np.empty((6, 6))
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        for b, (k, l) in enumerate(MANDEL_PAIRS):
            M[a, b] = MANDEL_FACTORS[a] * MANDEL_FACTORS[b] * C[i, j, k, l]
    return M


def mandel_to_tensor4(M: np.ndarray) -> np.ndarray:
    """Expand a Mandel matrix to the full 3x3x3x3 tensor (minor symmetries filled in)."""
    M = np.asarray(M, dtype=float)
    C = np.empty((3, 3, 3, 3))
    for a, (i, j) in enumerate(MANDEL_PAIRS):
        for b, (k, l) in enumerate(MANDEL_PAIRS):
            val = M[a, b] / (MANDEL_FACTORS[a] * MANDEL_FACTORS[b])
            for p, q in {(i, j), (j, i)}:
                for r, s in {(k, l), (l, k)}:
                    C[p, q, r, s] = val
    return C


@dataclass(frozen=True)
class MandelMatrix:
    """A symmetric positive definite 6x6 stiffness in Mandel form.

    ``m`` is the coercivity constant (smallest eigenvalue).
    """

    entries: np.ndarray
    m: float

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=float)
        if entries.shape != (6, 6):
            raise TensorError(f"Mandel matrix must be 6x6, got {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_entries(cls, entries: np.ndarray | Sequence[float]) -> "MandelMatrix":
        """Validate symmetry and positive definiteness, then wrap."""
        A = np.asarray(entries, dtype=float).reshape(6, 6)
        scale = max(np.abs(A).max(), 1.0)
        if np.abs(A - A.T).max() > SYMMETRY_TOL * scale:
            raise TensorError("Mandel matrix is not symmetric")
        m = float(np.linalg.eigvalsh(0.5 * (A + A.T)).min())
        if not m > 0.0:
            raise TensorError(f"Mandel matrix is not positive definite (min eigenvalue {m:.3e})")
        return cls(A, m)

    def scaled(self, s: float) -> "MandelMatrix":
        if not s > 0:
            raise TensorError("scale factor must be positive")
        return MandelMatrix(s * self.entries, s * self.m)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)


def make_isotropic(lam: float, mu: float) -> MandelMatrix:
    """Isotropic stiffness ``2 mu I + lam e (x) e`` with ``e = (1,1,1,0,0,0)``."""
    if not (mu > 0 and 3.0 * lam + 2.0 * mu > 0):
        raise TensorError(f"isotropic parameters not positive definite: lambda={lam}, mu={mu}")
    e = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
    entries = 2.0 * mu * np.eye(6) + lam * np.outer(e, e)
    return MandelMatrix(entries, float(min(2.0 * mu, 3.0 * lam + 2.0 * mu)))


def make_orthotropic(
    E1: float, E2: float, E3: float,
    nu12: float, nu13: float, nu23: float,
    G12: float, G13: float, G23: float,
) -> MandelMatrix:
    """Orthotropic stiffness from engineering constants (material axes = coordinate axes)."""
    if min(E1, E2, E3, G12, G13, G23) <= 0:
        raise TensorError("moduli must be positive")
    S = np.zeros((6, 6))
    S[0, 0], S[1, 1], S[2, 2] = 1.0 / E1, 1.0 / E2, 1.0 / E3
    S[0, 1] = S[1, 0] = -nu12 / E1
    S[0, 2] = S[2, 0] = -nu13 / E1
    S[1, 2] = S[2, 1] = -nu23 / E2
    # Mandel shear stiffness is 2G
    S[3, 3], S[4, 4], S[5, 5] = 1.0 / (2 * G23), 1.0 / (2 * G13), 1.0 / (2 * G12)
    if np.linalg.eigvalsh(S).min() <= 0:
        raise TensorError("orthotropic constants give an indefinite compliance")
    C = np.linalg.inv(S)
    return MandelMatrix.from_entries(0.5 * (C + C.T))


def youngs_modulus(lam: float, mu: float) -> float:
    return mu * (3.0 * lam + 2.0 * mu) / (lam + mu)


def poisson_ratio(lam: float, mu: float) -> float:
    return lam / (2.0 * (lam + mu))


def contract(C: MandelMatrix | np.ndarray, E: np.ndarray, K: np.ndarray) -> float:
    """Return ``C_ijkl E_kl K_ij`` for symmetric 3x3 ``E`` and ``K``."""
    A = np.asarray(C, dtype=float)
    E = np.asarray(E, dtype=float)
    K = np.asarray(K, dtype=float)
    if A.shape != (6, 6) or E.shape != (3, 3) or K.shape != (3, 3):
        raise ValueError("contract expects a 6x6 Mandel matrix and two 3x3 matrices")
    return float(to_mandel(K) @ A @ to_mandel(E))


# ----------------------------------------------------------------------------
# Spatially varying fields


@dataclass(frozen=True)
class EvaluationPoints:
    """Points at which a tensor or load field is evaluated.

    ``x`` has shape ``(n, 3)``; ``region`` holds FIBER/MATRIX per point;
    ``y`` (periodic cell coordinates, shape ``(n, 2)``) is present in
    homogenization mode only.
    """

    x: np.ndarray
    region: np.ndarray
    y: np.ndarray | None = None

    def __len__(self) -> int:
        return self.x.shape[0]

    def take(self, idx) -> "EvaluationPoints":
        return EvaluationPoints(self.x[idx], self.region[idx], None if self.y is None else self.y[idx])

    def variables(self) -> dict[str, np.ndarray]:
        env = {"x1": self.x[:, 0], "x2": self.x[:, 1], "x3": self.x[:, 2]}
        if self.y is not None:
            env["y1"] = self.y[:, 0]
            env["y2"] = self.y[:, 1]
        env["chiF"] = (self.region == FIBER).astype(float)
        env["chiM"] = (self.region == MATRIX).astype(float)
        return env


# A region block returns (n, 6, 6) Mandel matrices for the given points.
BlockEvaluator = Callable[[EvaluationPoints], np.ndarray]


@dataclass(frozen=True)
class ElasticityTensorField:
    """Region-wise elasticity tensor, constant or expression driven.

    ``blocks`` maps FIBER/MATRIX to either a :class:`MandelMatrix` (constant
    in the region) or a callable evaluating ``(n, 6, 6)`` matrices.
    ``periodic`` marks the homogenization kind (dependence on ``y``).
    """

    blocks: Mapping[int, MandelMatrix | BlockEvaluator]
    periodic: bool = False
    depends_on_x: bool = False
    depends_on_y: bool = False
    description: str = ""
    scale: float = 1.0

    def __post_init__(self) -> None:
        missing = {FIBER, MATRIX} - set(self.blocks)
        if missing:
            raise TensorError(f"tensor field lacks blocks for regions {sorted(missing)}")

    @classmethod
    def constant(cls, C: MandelMatrix, periodic: bool = False) -> "ElasticityTensorField":
        return cls({FIBER: C, MATRIX: C}, periodic=periodic, description="constant")

    @classmethod
    def piecewise(cls, fiber: MandelMatrix, matrix: MandelMatrix, periodic: bool = False) -> "ElasticityTensorField":
        return cls({FIBER: fiber, MATRIX: matrix}, periodic=periodic, description="piecewise")

    @property
    def kind(self) -> str:
        if all(isinstance(b, MandelMatrix) for b in self.blocks.values()):
            same = self.blocks[FIBER] is self.blocks[MATRIX] or np.array_equal(
                self.blocks[FIBER].entries, self.blocks[MATRIX].entries
            )
            return "constant" if same else "piecewise"
        return "expression"

    @property
    def is_regionwise_constant(self) -> bool:
        return self.kind != "expression"

    def scaled(self, s: float) -> "ElasticityTensorField":
        """The field ``s * C`` (used by scale-invariance checks)."""
        if not s > 0:
            raise TensorError("scale factor must be positive")
        blocks = {}
        for reg, blk in self.blocks.items():
            blocks[reg] = blk.scaled(s) if isinstance(blk, MandelMatrix) else blk
        return ElasticityTensorField(
            blocks, self.periodic, self.depends_on_x, self.depends_on_y,
            self.description, self.scale * (1.0 if self.is_regionwise_constant else s),
        )

    def region_matrix(self, region: int) -> np.ndarray:
        """The constant Mandel matrix of a region (regionwise-constant fields only)."""
        blk = self.blocks[region]
        if not isinstance(blk, MandelMatrix):
            raise TensorError("region block is not constant")
        return blk.entries

    def evaluate(self, pts: EvaluationPoints) -> np.ndarray:
        """Mandel matrices at the points, shape ``(n, 6, 6)``."""
        n = len(pts)
        out = np.empty((n, 6, 6))
        for reg, blk in self.blocks.items():
            mask = pts.region == reg
            if not mask.any():
                continue
            if isinstance(blk, MandelMatrix):
                out[mask] = blk.entries
            else:
                out[mask] = self.scale * np.asarray(blk(pts.take(mask)), dtype=float)
        return out


@dataclass(frozen=True)
class Violation:
    kind: str  # "symmetry" | "coercivity" | "periodicity" | "nonfinite"
    point: tuple[float, ...]
    detail: str


@dataclass(frozen=True)
class TensorReport:
    m_est: float
    bound_est: float
    violations: tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations


def check_admissible(field: ElasticityTensorField, sample_points: EvaluationPoints) -> TensorReport:
    """Sample symmetry, coercivity and (for periodic fields) periodicity.

    Violations are reported, not raised; solvers call :func:`require_admissible`.
    """
    if len(sample_points) == 0:
        raise ValueError("check_admissible needs at least one sample point")
    mats = field.evaluate(sample_points)
    violations: list[Violation] = []

    def _pt(i: int) -> tuple[float, ...]:
        coords = tuple(float(c) for c in sample_points.x[i])
        if sample_points.y is not None:
            coords += tuple(float(c) for c in sample_points.y[i])
        return coords

    finite = np.isfinite(mats).all(axis=(1, 2))
    for i in np.flatnonzero(~finite)[:10]:
        violations.append(Violation("nonfinite", _pt(i), "non-finite entries"))
    mats_f = np.where(finite[:, None, None], mats, 0.0)

    scale = np.maximum(np.abs(mats_f).max(axis=(1, 2)), 1.0)
    asym = np.abs(mats_f - np.swapaxes(mats_f, 1, 2)).max(axis=(1, 2))
    for i in np.flatnonzero(asym > SYMMETRY_TOL * scale)[:10]:
        violations.append(Violation("symmetry", _pt(i), f"max |A - A^T| = {asym[i]:.3e}"))

    eigmin = np.linalg.eigvalsh(0.5 * (mats_f + np.swapaxes(mats_f, 1, 2)))[:, 0]
    for i in np.flatnonzero((eigmin <= 0) & finite)[:10]:
        violations.append(Violation("coercivity", _pt(i), f"min eigenvalue {eigmin[i]:.3e}"))

    if field.periodic and sample_points.y is not None:
        for shift in ((1.0, 0.0), (0.0, 1.0)):
            shifted = EvaluationPoints(sample_points.x, sample_points.region, sample_points.y + np.array(shift))
            diff = np.abs(field.evaluate(shifted) - mats).max(axis=(1, 2))
            for i in np.flatnonzero(diff > 1e-12 * scale)[:10]:
                violations.append(Violation("periodicity", _pt(i), f"shift {shift}: {diff[i]:.3e}"))

    m_est = float(eigmin[finite].min()) if finite.any() else float("nan")
    bound_est = float(np.abs(mats_f).max())
    return TensorReport(m_est, bound_est, tuple(violations))


def require_admissible(field: ElasticityTensorField, sample_points: EvaluationPoints) -> TensorReport:
    """Like :func:`check_admissible` but raises :class:`TensorError` on any violation."""
    report = check_admissible(field, sample_points)
    if not report.ok:
        first = report.violations[0]
        raise TensorError(
            f"tensor field inadmissible: {len(report.violations)} violation(s); "
            f"first: {first.kind} at {first.point}: {first.detail}"
        )
    return report
