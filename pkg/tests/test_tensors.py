from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fibrod.tensors import (
    FIBER, MATRIX, ElasticityTensorField, EvaluationPoints, MandelMatrix, TensorError, check_admissible, contract,
    from_mandel, make_isotropic, make_orthotropic, mandel_to_tensor4, poisson_ratio, require_admissible,
    tensor4_to_mandel, to_mandel, youngs_modulus,
)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def random_spd(rng, n=6, shift=0.5):
    A = rng.standard_normal((n, n))
    return A @ A.T + shift * np.eye(n)


def index_sum(C4, E, K):
    total = 0.0
    for i, j, k, l in itertools.product(range(3), repeat=4):
        total += C4[i, j, k, l] * E[k, l] * K[i, j]
    return total


def sym(A):
    return 0.5 * (A + A.T)


class TestMandel:
    def test_order_and_factors(self):
        E = np.array([[1.0, 6.0, 5.0], [6.0, 2.0, 4.0], [5.0, 4.0, 3.0]])
        np.testing.assert_allclose(to_mandel(E), [1, 2, 3, 4 * np.sqrt(2), 5 * np.sqrt(2), 6 * np.sqrt(2)])

    @given(arrays(float, (3, 3), elements=finite))
    def test_roundtrip(self, A):
        S = sym(A)
        np.testing.assert_allclose(from_mandel(to_mandel(S)), S, atol=1e-12)

    @given(arrays(float, (3, 3), elements=finite), arrays(float, (3, 3), elements=finite))
    def test_inner_product_preserved(self, A, B):
        S, T = sym(A), sym(B)
        assert to_mandel(S) @ to_mandel(T) == pytest.approx(np.sum(S * T), abs=1e-9)

    def test_tensor4_roundtrip(self, rng):
        M = random_spd(rng)
        np.testing.assert_allclose(tensor4_to_mandel(mandel_to_tensor4(M)), M, atol=1e-13)

    def test_tensor4_has_minor_and_major_symmetry(self, rng):
        C4 = mandel_to_tensor4(random_spd(rng))
        np.testing.assert_allclose(C4, C4.transpose(1, 0, 2, 3), atol=1e-14)
        np.testing.assert_allclose(C4, C4.transpose(0, 1, 3, 2), atol=1e-14)
        np.testing.assert_allclose(C4, C4.transpose(2, 3, 0, 1), atol=1e-14)


class TestConstruction:
    def test_isotropic_coercivity_is_two_mu(self):
        C = make_isotropic(1.0, 1.0)
        assert C.m == pytest.approx(2.0, abs=1e-12)
        assert np.linalg.eigvalsh(C.entries).min() == pytest.approx(2.0, abs=1e-12)

    @given(st.floats(0.05, 20), st.floats(0.05, 20))
    def test_isotropic_spectrum(self, lam, mu):
        ev = np.sort(np.linalg.eigvalsh(make_isotropic(lam, mu).entries))
        np.testing.assert_allclose(ev, np.sort([2 * mu] * 5 + [3 * lam + 2 * mu]), rtol=1e-12)

    def test_isotropic_rejects_nonpositive(self):
        with pytest.raises(TensorError):
            make_isotropic(1.0, 0.0)
        with pytest.raises(TensorError):
            make_isotropic(-1.0, 1.0)

    def test_engineering_constants(self):
        assert youngs_modulus(1.0, 1.0) == pytest.approx(2.5)
        assert poisson_ratio(1.0, 1.0) == pytest.approx(0.25)

    def test_orthotropic_reduces_to_isotropic(self):
        E, nu = 2.5, 0.25
        G = E / (2 * (1 + nu))
        C = make_orthotropic(E, E, E, nu, nu, nu, G, G, G)
        np.testing.assert_allclose(C.entries, make_isotropic(1.0, 1.0).entries, atol=1e-12)

    def test_orthotropic_compliance_inverts(self):
        C = make_orthotropic(10.0, 2.0, 3.0, 0.2, 0.25, 0.3, 1.0, 1.5, 0.8)
        S = np.linalg.inv(C.entries)
        assert S[0, 0] == pytest.approx(0.1)
        assert S[0, 1] == pytest.approx(-0.02)
        assert S[5, 5] == pytest.approx(1 / (2 * 1.0))

    def test_from_entries_rejects_asymmetric_and_indefinite(self):
        A = np.eye(6)
        A[0, 1] = 0.5
        with pytest.raises(TensorError, match="symmetric"):
            MandelMatrix.from_entries(A)
        with pytest.raises(TensorError, match="positive definite"):
            MandelMatrix.from_entries(-np.eye(6))

    def test_scaled(self):
        C = make_isotropic(1.0, 1.0).scaled(3.0)
        assert C.m == pytest.approx(6.0)
        with pytest.raises(TensorError):
            C.scaled(0.0)


class TestContract:
    def test_against_index_sum(self, rng):
        for _ in range(100):
            M = random_spd(rng)
            E, K = sym(rng.standard_normal((3, 3))), sym(rng.standard_normal((3, 3)))
            ref = index_sum(mandel_to_tensor4(M), E, K)
            assert contract(M, E, K) == pytest.approx(ref, rel=1e-12, abs=1e-12)

    def test_symmetric_in_arguments(self, rng):
        for _ in range(100):
            M = random_spd(rng)
            E, K = sym(rng.standard_normal((3, 3))), sym(rng.standard_normal((3, 3)))
            assert abs(contract(M, E, K) - contract(M, K, E)) <= 1e-12 * max(1.0, abs(contract(M, E, K)))

    def test_isotropic_closed_form(self, rng):
        lam, mu = 0.7, 1.3
        E, K = sym(rng.standard_normal((3, 3))), sym(rng.standard_normal((3, 3)))
        ref = lam * np.trace(E) * np.trace(K) + 2 * mu * np.sum(E * K)
        assert contract(make_isotropic(lam, mu), E, K) == pytest.approx(ref, rel=1e-12)

    def test_shape_errors(self):
        with pytest.raises(ValueError):
            contract(np.eye(5), np.eye(3), np.eye(3))


def _points(n, region=FIBER, y=False, seed=0):
    rng = np.random.default_rng(seed)
    return EvaluationPoints(rng.uniform(-1, 1, (n, 3)), np.full(n, region),
                            rng.uniform(-0.5, 0.5, (n, 2)) if y else None)


class TestAdmissibility:
    def test_m_est_matches_dense_eigensolver(self, rng):
        for _ in range(20):
            M = MandelMatrix.from_entries(random_spd(rng))
            rep = check_admissible(ElasticityTensorField.constant(M), _points(5))
            assert rep.ok
            assert rep.m_est == pytest.approx(np.linalg.eigvalsh(M.entries).min(), abs=1e-10)

    def test_reports_indefinite_expression_block(self):
        C = make_isotropic(1.0, 1.0)

        def bad(pts):
            mu = pts.x[:, 0]  # negative on half the samples
            return 2 * mu[:, None, None] * np.eye(6)

        field = ElasticityTensorField({FIBER: bad, MATRIX: C})
        rep = check_admissible(field, _points(50))
        assert not rep.ok
        assert {v.kind for v in rep.violations} == {"coercivity"}
        with pytest.raises(TensorError, match="coercivity"):
            require_admissible(field, _points(50))

    def test_reports_asymmetry_and_nonfinite(self):
        def skew(pts):
            A = np.tile(np.eye(6), (len(pts), 1, 1))
            A[:, 0, 1] = 1.0
            return A

        def nan(pts):
            return np.full((len(pts), 6, 6), np.nan)

        rep = check_admissible(ElasticityTensorField({FIBER: skew, MATRIX: nan}),
                               EvaluationPoints(np.zeros((2, 3)), np.array([FIBER, MATRIX])))
        assert {v.kind for v in rep.violations} == {"symmetry", "nonfinite"}

    def test_periodicity_violation(self):
        def block(pts):
            return (2.0 + 0.5 * pts.y[:, 0])[:, None, None] * np.eye(6)

        field = ElasticityTensorField({FIBER: block, MATRIX: block}, periodic=True, depends_on_y=True)
        rep = check_admissible(field, _points(10, y=True))
        assert any(v.kind == "periodicity" for v in rep.violations)

    def test_periodic_block_passes(self):
        def block(pts):
            return (2.0 + 0.5 * np.cos(2 * np.pi * pts.y[:, 0]))[:, None, None] * np.eye(6)

        field = ElasticityTensorField({FIBER: block, MATRIX: block}, periodic=True, depends_on_y=True)
        assert check_admissible(field, _points(10, y=True)).ok

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            check_admissible(ElasticityTensorField.constant(make_isotropic(1, 1)),
                             EvaluationPoints(np.zeros((0, 3)), np.zeros(0)))


class TestField:
    def test_piecewise_evaluation_by_region(self):
        f = ElasticityTensorField.piecewise(make_isotropic(1, 1), make_isotropic(0.1, 0.1))
        pts = EvaluationPoints(np.zeros((2, 3)), np.array([FIBER, MATRIX]))
        M = f.evaluate(pts)
        assert M[0, 0, 0] == pytest.approx(3.0)
        assert M[1, 0, 0] == pytest.approx(0.3)
        assert f.kind == "piecewise"

    def test_scaled_expression_field(self):
        block = lambda pts: np.tile(np.eye(6), (len(pts), 1, 1))  # noqa: E731
        f = ElasticityTensorField({FIBER: block, MATRIX: block}).scaled(4.0)
        np.testing.assert_allclose(f.evaluate(_points(3))[:, 2, 2], 4.0)

    def test_missing_region_block(self):
        with pytest.raises(TensorError):
            ElasticityTensorField({FIBER: make_isotropic(1, 1)})
