"""Unit tests for the spectral module."""
import math

import numpy as np
import pytest

from zsd.equilibrium import EquilibriumMethod, EquilibriumResult, solve_2x2, solve_support_enum
from zsd.errors import (
    ConvergenceError,
    DimensionError,
    IllConditionedSupportError,
    InputError,
    SizeError,
)
from zsd.game import PayoffMatrix, StrategyProfile, epsilon_of
from zsd.spectral import (
    certify_contraction,
    eigen_moduli,
    eigenvalues,
    finite_difference_jacobian,
    hessenberg,
    jacobian_at_equilibrium,
    power_norm_certificate,
    update_map,
)

R2 = [[0.8, 0.2], [0.3, 0.7]]
R_DIAG = [[0.9, 0.1], [0.1, 0.9]]
R_PURE = [[0.9, 0.8], [0.2, 0.1]]
R_OFF_SUPPORT = [[0.8, 0.2, 0.9], [0.3, 0.7, 0.9], [0.2, 0.2, 0.1]]


def oracle(entries: list[list[float]]) -> tuple[PayoffMatrix, EquilibriumResult]:
    game = PayoffMatrix(np.array(entries))
    ne = solve_2x2(game) if game.shape == (2, 2) else solve_support_enum(game)
    return game, ne


class TestEigenvalues:
    """Test cases for the Hessenberg + QR eigensolver."""

    def test_identity(self):
        """All moduli of the identity are one."""
        np.testing.assert_allclose(eigen_moduli(np.eye(3)), [1.0, 1.0, 1.0], atol=1e-15)

    def test_rotation(self):
        """A quarter rotation has eigenvalues ±i."""
        np.testing.assert_allclose(eigen_moduli(np.array([[0.0, -1.0], [1.0, 0.0]])), [1.0, 1.0], atol=1e-15)  # noqa: E501

    def test_real_pair(self):
        """Trace 0.9 and determinant 0.18 give 0.6 and 0.3."""
        np.testing.assert_allclose(eigen_moduli(np.array([[0.5, 0.2], [0.1, 0.4]])), [0.6, 0.3], atol=1e-12)  # noqa: E501

    def test_zero_matrix(self):
        """The zero matrix has only zero eigenvalues."""
        np.testing.assert_array_equal(eigen_moduli(np.zeros((4, 4))), np.zeros(4))

    def test_triangular(self):
        """Eigenvalues of a triangular matrix are its diagonal."""
        matrix = np.triu(np.random.default_rng(0).normal(size=(6, 6)))
        np.testing.assert_allclose(
            eigen_moduli(matrix), np.sort(np.abs(np.diag(matrix)))[::-1], atol=1e-10,
        )

    def test_complex_pair_values(self):
        """Complex eigenvalues come in conjugate pairs."""
        values = eigenvalues(np.array([[0.92, 0.04], [-0.04, 0.92]]))
        np.testing.assert_allclose(sorted(values.imag), [-0.04, 0.04], atol=1e-14)
        np.testing.assert_allclose(values.real, [0.92, 0.92], atol=1e-14)

    @pytest.mark.parametrize("size", [3, 7, 20, 50])
    def test_against_lapack(self, size: int):
        """Moduli agree with numpy's eigensolver on random matrices."""
        rng = np.random.default_rng(size)
        for _ in range(3):
            matrix = rng.normal(size=(size, size))
            expected = np.sort(np.abs(np.linalg.eigvals(matrix)))[::-1]
            np.testing.assert_allclose(eigen_moduli(matrix), expected, rtol=1e-8, atol=1e-8)

    def test_three_by_three_characteristic_roots(self):
        """Moduli agree with the roots of the characteristic polynomial."""
        matrix = np.array([[0.2, 0.7, 0.1], [0.5, 0.1, 0.3], [0.4, 0.2, 0.6]])
        minors = sum(
            matrix[i, i] * matrix[j, j] - matrix[i, j] * matrix[j, i]
            for i in range(3) for j in range(i + 1, 3)
        )
        roots = np.roots([1.0, -np.trace(matrix), minors, -np.linalg.det(matrix)])
        np.testing.assert_allclose(eigen_moduli(matrix), np.sort(np.abs(roots))[::-1], atol=1e-10)

    def test_hessenberg_form(self):
        """The reduction is upper Hessenberg and an orthogonal similarity."""
        matrix = np.random.default_rng(1).normal(size=(8, 8))
        h = hessenberg(matrix)
        np.testing.assert_array_equal(np.tril(h, -2), np.zeros((8, 8)))
        assert np.trace(h) == pytest.approx(np.trace(matrix), abs=1e-12)
        assert np.linalg.norm(h) == pytest.approx(np.linalg.norm(matrix), abs=1e-12)

    def test_out_of_sweeps(self, caplog: pytest.LogCaptureFixture):
        """Running out of sweeps raises with the moduli found so far."""
        matrix = np.random.default_rng(2).normal(size=(5, 5))
        with pytest.raises(ConvergenceError) as info:
            eigen_moduli(matrix, max_sweeps=0)
        assert info.value.partial == []
        assert "did not converge" in caplog.text

    def test_too_large(self):
        """Matrices beyond 200x200 are refused."""
        with pytest.raises(SizeError):
            eigenvalues(np.zeros((201, 201)))

    def test_not_square(self):
        """Rectangular input is refused."""
        with pytest.raises(DimensionError):
            eigenvalues(np.zeros((2, 3)))

    def test_non_finite(self):
        """NaN entries are refused."""
        with pytest.raises(InputError):
            eigenvalues(np.array([[1.0, np.nan], [0.0, 1.0]]))


class TestPowerNormCertificate:
    """Test cases for power_norm_certificate."""

    def test_scaled_identity(self):
        """0.5·I is certified at p = 1."""
        p, bound = power_norm_certificate(0.5 * np.eye(3))
        assert p == 1
        assert bound == pytest.approx(0.5, abs=1e-15)

    def test_nilpotent(self):
        """‖M‖ = 2 but M² = 0."""
        assert power_norm_certificate(np.array([[0.0, 2.0], [0.0, 0.0]])) == (2, 0.0)

    def test_identity_has_no_certificate(self):
        """Every power of the identity has norm one."""
        assert power_norm_certificate(np.eye(2)) is None

    def test_bound_dominates_spectral_radius(self):
        """Any certificate bound is at least the spectral radius."""
        matrix = np.array([[0.5, 0.9], [0.0, 0.6]])
        p, bound = power_norm_certificate(matrix)
        assert p > 1
        assert bound >= eigen_moduli(matrix)[0]


class TestJacobian:
    """Test cases for jacobian_at_equilibrium and certify_contraction."""

    def test_symmetric_game_blocks(self):
        """D^xx has the closed-form entries of the symmetric game."""
        game, ne = oracle(R_DIAG)
        jac = jacobian_at_equilibrium(game, ne, 0.1, 5.0)
        np.testing.assert_allclose(jac.dxx, [[-0.08, 0.08], [0.08, -0.08]], atol=1e-12)
        np.testing.assert_allclose(jac.dyy, [[-0.08, 0.08], [0.08, -0.08]], atol=1e-12)
        np.testing.assert_allclose(jac.dxy, [[0.2, -0.2], [-0.2, 0.2]], atol=1e-12)
        np.testing.assert_allclose(jac.dyx, [[-0.2, 0.2], [0.2, -0.2]], atol=1e-12)
        assert jac.row_support == (0, 1)
        assert jac.value == pytest.approx(0.5, abs=1e-14)

    def test_symmetric_game_contracts(self):
        """Radius |0.92 ± 0.04i| at η = 0.1, ξ = 5."""
        game, ne = oracle(R_DIAG)
        report = certify_contraction(game, ne, 0.1, 5.0)
        assert report.spectral_radius == pytest.approx(math.hypot(0.92, 0.04), abs=1e-9)
        assert report.support_radius == pytest.approx(math.hypot(0.92, 0.04), abs=1e-9)
        assert report.is_contraction
        assert report.dxx_diag_negative
        assert report.dyy_diag_negative

    def test_interior_full_equals_support_part(self):
        """At an interior equilibrium J and J̃ coincide."""
        game, ne = oracle(R2)
        jac = jacobian_at_equilibrium(game, ne, 0.1, 100.0)
        np.testing.assert_allclose(jac.full, jac.support_submatrix, atol=1e-12)

    @pytest.mark.parametrize("entries", [R2, R_DIAG, R_OFF_SUPPORT])
    def test_left_kernel(self, entries: list[list[float]]):
        """Column sums of each player's block of J̃ vanish."""
        game, ne = oracle(entries)
        jac = jacobian_at_equilibrium(game, ne, 0.1, 20.0)
        k = len(jac.row_support)
        top, bottom = jac.support_submatrix[:k], jac.support_submatrix[k:]
        np.testing.assert_allclose(np.ones(k) @ top, 0.0, atol=1e-10)
        np.testing.assert_allclose(np.ones(bottom.shape[0]) @ bottom, 0.0, atol=1e-10)

    def test_a_part(self):
        """A holds −x*_i in the row block and −y*_i in the column block."""
        game, ne = oracle(R2)
        jac = jacobian_at_equilibrium(game, ne, 0.1, 10.0)
        expected = np.zeros((4, 4))
        expected[:2, :2] = -np.array([[0.4], [0.6]])
        expected[2:, 2:] = -0.5
        np.testing.assert_allclose(jac.a_part, expected, atol=1e-12)

    def test_pure_equilibrium(self):
        """J̃ vanishes and the off-support rows set the radius."""
        game, ne = oracle(R_PURE)
        eta = 0.1
        jac = jacobian_at_equilibrium(game, ne, eta, 100.0)
        np.testing.assert_allclose(jac.support_submatrix, np.zeros((2, 2)), atol=1e-15)
        assert jac.row_support == (0,)
        assert jac.col_support == (1,)
        report = certify_contraction(game, ne, eta, 100.0)
        assert report.spectral_radius == pytest.approx(max(math.exp(-0.7 * eta), math.exp(-0.1 * eta)), abs=1e-12)  # noqa: E501
        assert report.support_radius <= 1e-12
        assert report.is_contraction

    def test_off_support_rows(self):
        """Rows outside the support hold a single diagonal entry."""
        game, ne = oracle(R_OFF_SUPPORT)
        eta = 0.1
        jac = jacobian_at_equilibrium(game, ne, eta, 20.0)
        assert jac.row_support == (0, 1)
        assert jac.col_support == (0, 1)
        assert jac.full[2, 2] == pytest.approx(math.exp(eta * (0.2 - 0.5)), abs=1e-12)
        assert jac.full[5, 5] == pytest.approx(math.exp(-eta * (0.9 - 0.5)), abs=1e-12)
        np.testing.assert_array_equal(np.delete(jac.full[2], 2), np.zeros(5))
        np.testing.assert_array_equal(np.delete(jac.full[5], 5), np.zeros(5))
        report = certify_contraction(game, ne, eta, 20.0)
        assert report.spectral_radius == pytest.approx(
            max(report.support_radius, math.exp(-0.03)), abs=1e-10,
        )

    @pytest.mark.parametrize("entries", [R2, R_DIAG, R_PURE, R_OFF_SUPPORT])
    def test_matches_finite_differences(self, entries: list[list[float]]):
        """The exact Jacobian agrees with central differences of the update map."""
        game, ne = oracle(entries)
        eta, xi = 0.1, 10.0
        jac = jacobian_at_equilibrium(game, ne, eta, xi)
        x, y = ne.profile.probabilities()
        x = np.where(x > 1e-6, x, 0.0)
        y = np.where(y > 1e-6, y, 0.0)
        numeric = finite_difference_jacobian(game.entries, x, y, eta, xi)
        np.testing.assert_allclose(jac.full, numeric, atol=1e-4)

    def test_d_blocks_are_bounded(self):
        """Every D-block entry lies in [-1, 1] on random 4x4 games."""
        rng = np.random.default_rng(5)
        for _ in range(25):
            game = PayoffMatrix(rng.uniform(0.01, 1.0, size=(4, 4)))
            jac = jacobian_at_equilibrium(game, solve_support_enum(game), 0.05, 10.0)
            for block in (jac.dxx, jac.dxy, jac.dyx, jac.dyy):
                assert block.min() >= -1.0 - 1e-12
                assert block.max() <= 1.0 + 1e-12

    def test_equilibrium_is_fixed_point(self):
        """The update map leaves the equilibrium in place."""
        game, ne = oracle(R2)
        x, y = ne.profile.probabilities()
        fx, fy = update_map(game.entries, x, y, 0.1, 100.0)
        np.testing.assert_allclose(fx, x, atol=1e-12)
        np.testing.assert_allclose(fy, y, atol=1e-12)

    def test_ambiguous_support(self):
        """A coordinate just below the support threshold cannot be classified."""
        game = PayoffMatrix(np.array(R_PURE))
        profile = StrategyProfile.from_probabilities([1 - 1e-7, 1e-7], [0.0, 1.0])
        ne = EquilibriumResult(
            profile=profile,
            value=0.8,
            method=EquilibriumMethod.ESTIMATOR,
            certificate_eps=epsilon_of(game, profile),
        )
        with pytest.raises(IllConditionedSupportError):
            jacobian_at_equilibrium(game, ne, 0.1, 100.0)

    def test_not_an_equilibrium(self):
        """Profiles with a large certificate are refused."""
        game = PayoffMatrix(np.array(R2))
        profile = StrategyProfile.uniform(2, 2)
        ne = EquilibriumResult(profile, 0.5, EquilibriumMethod.ESTIMATOR, epsilon_of(game, profile))
        with pytest.raises(InputError, match="Nash"):
            certify_contraction(game, ne, 0.1, 100.0)

    @pytest.mark.parametrize("eta, xi", [(0.0, 1.0), (1.5, 1.0), (0.1, -1.0)])
    def test_invalid_rates(self, eta: float, xi: float):
        """η must lie in (0, 1) and ξ be non-negative."""
        game, ne = oracle(R2)
        with pytest.raises(InputError):
            jacobian_at_equilibrium(game, ne, eta, xi)

    def test_report_to_dict(self):
        """The JSON form names every field."""
        game, ne = oracle(R_DIAG)
        data = certify_contraction(game, ne, 0.1, 5.0).to_dict()
        assert set(data) == {
            "spectral_radius", "support_radius", "is_contraction", "pnorm_certificate",
            "dxx_diag_negative", "dyy_diag_negative", "eta", "xi",
        }
        assert data["is_contraction"] is True
