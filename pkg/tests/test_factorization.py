"""
Tests for factorized proximal splitting and its bound evaluators.
"""
import logging

import numpy as np
import pytest

from src.exceptions import InvalidArgumentError, DimensionMismatchError
from src.factorization import (
    delta_A, residual, spectral_norm_sym, make_factorization, identity_factorization, eigen_factorization,
    factorized_step, lipschitz_bound, prop1_check, acceleration_condition, theorem1_bound,
    corollary1_bound, dataset_factorization_objective, acceleration_trace, bound_suite
)
from src.lasso_core import build_problem, sample_gaussian_dictionary, sample_codes
from src.models import BernoulliGaussianModel
from src.solvers import ista, ista_step, reference_solution


def random_problem(rng, n=None, m=None, lam=None):
    m = m or int(rng.integers(4, 17))
    n = n or int(rng.integers(2, m + 1))
    dictionary = sample_gaussian_dictionary(n, m, int(rng.integers(0, 2 ** 31)))
    model = BernoulliGaussianModel(rho=0.3, sigma=1.0, m=m)
    _, X = sample_codes(model, 1, int(rng.integers(0, 2 ** 31)), dictionary)
    return build_problem(dictionary, X[0], lam if lam is not None else float(rng.uniform(0.01, 0.3)))


def random_orthogonal(rng, m):
    Q, R = np.linalg.qr(rng.standard_normal((m, m)))
    return Q * np.sign(np.diag(R))


def psd_factorization(rng, B):
    """Random rotation with a diagonally dominant S, so A^T S A - B is PSD."""
    A = random_orthogonal(rng, B.shape[0])
    rotated = A @ B @ A.T
    S = np.sum(np.abs(rotated), axis=1) + rng.uniform(0.0, 0.5, size=B.shape[0]) + 1e-9
    return make_factorization(A, S, B)


class TestResidual:

    def setup_method(self):
        self.rng = np.random.default_rng(0)
        self.p = random_problem(self.rng, n=6, m=10)

    def test_identity_factorization(self):
        f = identity_factorization(self.p)
        np.testing.assert_allclose(f.R, self.p.L * np.eye(10) - self.p.B, atol=1e-12)
        assert f.is_psd
        assert f.is_unitary

    def test_eigen_factorization_diagonalizes(self):
        f = eigen_factorization(self.p.B)
        assert spectral_norm_sym(f.R) < 1e-9
        assert f.is_unitary

    def test_rejects_non_positive_diagonal(self):
        with pytest.raises(InvalidArgumentError):
            make_factorization(np.eye(10), np.zeros(10), self.p.B)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            residual(np.eye(9), np.ones(9), self.p.B)

    def test_non_unitary_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            f = make_factorization(2.0 * np.eye(10), np.full(10, self.p.L), self.p.B)
        assert not f.is_unitary
        assert "not unitary" in caplog.text

    def test_spectral_norm_sym(self):
        assert spectral_norm_sym(np.diag([-3.0, 1.0, 2.0])) == pytest.approx(3.0)


class TestDeltaA:

    def test_identity_and_signed_permutation(self):
        z = np.array([1.0, -2.0, 0.0, 0.5])
        assert delta_A(np.eye(4), z, 0.3) == 0.0
        P = np.eye(4)[[2, 0, 3, 1]] * np.array([1, -1, 1, -1])[:, None]
        assert delta_A(P, z, 0.3) == pytest.approx(0.0)

    def test_rotation_of_sparse_code_costs(self):
        c, s = np.cos(0.3), np.sin(0.3)
        A = np.array([[c, -s], [s, c]])
        assert delta_A(A, np.array([1.0, 0.0]), 1.0) == pytest.approx(c + s - 1.0)

    def test_batch(self):
        Z = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert delta_A(np.eye(2), Z, 1.0).shape == (2,)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            delta_A(np.eye(3), np.ones(4), 1.0)


class TestFactorizedStep:

    def test_identity_step_is_ista(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = random_problem(rng)
            z = rng.standard_normal(p.m)
            np.testing.assert_allclose(factorized_step(p, z, identity_factorization(p)), ista_step(p, z), atol=1e-12)

    def test_batch_step(self):
        rng = np.random.default_rng(2)
        p = random_problem(rng, n=5, m=8)
        f = psd_factorization(rng, p.B)
        batch = build_problem(p.dictionary, np.stack([p.x, 2 * p.x]), p.lam)
        Z = rng.standard_normal((2, 8))
        out = factorized_step(batch, Z, f)
        np.testing.assert_allclose(out[0], factorized_step(p, Z[0], f), atol=1e-12)


class TestProposition:

    def test_single_step_bound_on_random_pairs(self):
        """Holds for every PSD unitary factorization and starting point."""
        rng = np.random.default_rng(3)
        failures = []
        for trial in range(1000):
            p = random_problem(rng)
            f = psd_factorization(rng, p.B)
            z_star = reference_solution(p, tol=1e-12)
            z_k = z_star + rng.standard_normal(p.m) * rng.choice([1e-3, 0.1, 1.0])
            report = prop1_check(p, z_k, f, z_star)
            assert report.precondition_ok
            if not report.satisfied:
                failures.append((trial, report.lhs, report.rhs))
        assert failures == []

    def test_identity_bound_is_ista_bound(self):
        rng = np.random.default_rng(4)
        p = random_problem(rng, n=8, m=12)
        z_star = reference_solution(p)
        z0 = np.zeros(p.m)
        report = prop1_check(p, z0, identity_factorization(p), z_star)
        # delta terms vanish for the identity
        assert report.terms["delta_star"] == 0.0
        assert report.terms["delta_next"] == 0.0
        assert report.satisfied


class TestLipschitzAndAcceleration:

    def test_lipschitz_identity(self):
        z = np.array([1.0, 0.0, -2.0, 0.0])
        sparse, uniform, subgrad = lipschitz_bound(np.eye(4), z, 0.5)
        assert sparse == pytest.approx(0.5 * 2 * np.sqrt(2))
        assert uniform == pytest.approx(2 * 0.5 * 2)
        assert subgrad == 0.0

    def test_lipschitz_dominates_subgradient(self):
        rng = np.random.default_rng(5)
        A = random_orthogonal(rng, 6)
        z = rng.standard_normal(6) * (rng.random(6) < 0.5)
        sparse, uniform, subgrad = lipschitz_bound(A, z, 0.2)
        assert subgrad <= sparse + 1e-12
        assert subgrad <= uniform + 1e-12

    def test_condition_at_solution(self):
        rng = np.random.default_rng(6)
        p = random_problem(rng, n=6, m=10)
        z_star = reference_solution(p)
        f = identity_factorization(p)
        assert acceleration_condition(f, z_star, z_star, z_star, p.B, p.lam) == (False, float("-inf"))

    def test_eigen_factorization_accelerates_far_from_solution(self):
        """With R = 0 the condition reduces to the sparsity term, which vanishes relative to a large distance."""
        rng = np.random.default_rng(7)
        p = random_problem(rng, n=6, m=10, lam=1e-4)
        f = eigen_factorization(p.B)
        z_star = reference_solution(p)
        z_k = z_star + 100.0 * np.ones(p.m)
        holds, margin = acceleration_condition(f, z_k, factorized_step(p, z_k, f), z_star, p.B, p.lam)
        assert holds
        assert margin > 0

    def test_acceleration_trace(self):
        rng = np.random.default_rng(8)
        p = random_problem(rng, n=6, m=10)
        z_star = reference_solution(p)
        rows = acceleration_trace(p, identity_factorization(p), 15, z_star)
        assert len(rows) == 16
        assert [r["iteration"] for r in rows] == list(range(16))
        assert set(rows[0]) == {"iteration", "distance", "holds", "margin"}
        # ISTA iterates approach z*
        assert rows[-1]["distance"] <= rows[0]["distance"] + 1e-12


class TestScheduleBounds:

    @pytest.mark.parametrize("k", [1, 5, 20])
    def test_identity_schedule_equals_ista_bound(self, k):
        rng = np.random.default_rng(10 + k)
        p = random_problem(rng, n=10, m=16)
        z_star = reference_solution(p)
        z0 = np.zeros(p.m)
        report = theorem1_bound(p, z0, [identity_factorization(p)] * k, z_star)
        expected = p.L * float(z_star @ z_star) / (2 * k)
        assert report.rhs == pytest.approx(expected, abs=1e-9 * (1 + expected))
        assert report.terms["ista_rhs"] == pytest.approx(expected)
        assert report.satisfied

    def test_random_psd_schedules(self):
        rng = np.random.default_rng(20)
        for _ in range(50):
            p = random_problem(rng)
            z_star = reference_solution(p)
            schedule = [psd_factorization(rng, p.B) for _ in range(int(rng.integers(1, 6)))]
            report = theorem1_bound(p, rng.standard_normal(p.m), schedule, z_star)
            assert report.precondition_ok
            assert report.satisfied, (report.lhs, report.rhs)

    def test_empty_schedule(self):
        rng = np.random.default_rng(21)
        p = random_problem(rng)
        with pytest.raises(InvalidArgumentError):
            theorem1_bound(p, np.zeros(p.m), [], np.zeros(p.m))

    def test_corollary(self):
        rng = np.random.default_rng(22)
        p = random_problem(rng, n=8, m=12)
        z_star = reference_solution(p)
        f0 = psd_factorization(rng, p.B)
        report = corollary1_bound(p, np.zeros(p.m), f0, 5, z_star)
        assert report.name == "corollary1"
        assert report.satisfied
        for key in ("closed_form_rhs", "acceleration_holds", "acceleration_margin", "improves_on_ista"):
            assert key in report.terms

    def test_corollary_exact_factorization_beats_ista(self):
        """With B positive definite the eigen factorization leaves R = 0 and its first step lands near z*."""
        rng = np.random.default_rng(24)
        dictionary = sample_gaussian_dictionary(12, 8, seed=3)
        p = build_problem(dictionary, dictionary.entries @ rng.standard_normal(8), 0.01)
        z_star = reference_solution(p, tol=1e-12)
        report = corollary1_bound(p, np.zeros(p.m), eigen_factorization(p.B), 3, z_star)
        assert report.satisfied
        assert report.terms["acceleration_holds"] == 1.0
        assert report.terms["acceleration_margin"] > 0
        assert report.terms["improves_on_ista"] == 1.0
        assert report.terms["closed_form_rhs"] < report.terms["ista_rhs"]

    def test_quadratic_form_single_step(self):
        rng = np.random.default_rng(25)
        p = random_problem(rng, n=6, m=9)
        z_star = reference_solution(p)
        f = psd_factorization(rng, p.B)
        z0 = rng.standard_normal(p.m)
        z1 = factorized_step(p, z0, f)
        v0, v1, step = z_star - z0, z_star - z1, z1 - z0
        sparse, _, _ = lipschitz_bound(f.A, z1, p.lam)
        expected = (v0 @ f.R @ v0 + 2.0 * sparse * np.linalg.norm(v1)
                    - (step @ f.R @ step + 2.0 * delta_A(f.A, z1, p.lam) - 2.0 * delta_A(f.A, z0, p.lam))) / 2.0
        report = theorem1_bound(p, z0, [f], z_star)
        assert report.terms["quadratic_form_rhs"] == pytest.approx(expected, rel=1e-10, abs=1e-12)

    def test_bound_suite(self):
        rng = np.random.default_rng(26)
        p = random_problem(rng, n=6, m=10)
        z_star = reference_solution(p)
        reports = bound_suite(p, z_star, 4)
        assert [r.name for r in reports] == ["prop1", "theorem1", "corollary1"]
        assert reports[0].satisfied and reports[1].satisfied
        expected = reports[1].terms["ista_rhs"]
        assert reports[1].rhs == pytest.approx(expected, abs=1e-9 * (1 + expected))
        assert reports[2].terms["k"] == 4

    def test_bound_suite_needs_single_signal(self):
        dictionary = sample_gaussian_dictionary(4, 6, seed=0)
        batched = build_problem(dictionary, np.ones((2, 4)), 0.1)
        with pytest.raises(InvalidArgumentError):
            bound_suite(batched, np.zeros((2, 6)), 3)
        single = build_problem(dictionary, np.ones(4), 0.1)
        with pytest.raises(InvalidArgumentError):
            bound_suite(single, np.zeros(6), 0)

    def test_corollary_needs_one_step(self):
        rng = np.random.default_rng(23)
        p = random_problem(rng)
        with pytest.raises(InvalidArgumentError):
            corollary1_bound(p, np.zeros(p.m), identity_factorization(p), 0, np.zeros(p.m))


class TestDatasetObjective:

    def test_identity_objective_is_quadratic(self):
        dictionary = sample_gaussian_dictionary(6, 10, seed=1)
        model = BernoulliGaussianModel(rho=0.3, sigma=1.0, m=10)
        _, X = sample_codes(model, 20, seed=2, dictionary=dictionary)
        p = build_problem(dictionary, X, 0.1)
        Z_star = reference_solution(p)
        Z0 = np.zeros_like(Z_star)
        f = identity_factorization(p)
        value = dataset_factorization_objective(f, Z0, ista(p, None, 1).final, Z_star, p.B, p.lam)
        expected = np.mean(0.5 * np.einsum("ij,jk,ik->i", Z_star, f.R, Z_star))
        assert value == pytest.approx(expected)
