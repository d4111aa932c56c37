"""
Experiment-scale checks of the dynamics, the estimator and the contraction test.

These run for minutes up to an hour and are excluded from the default test
run. Use `pytest -m slow tests/test_acceptance.py` to run them.
"""
import dataclasses
import time
from concurrent.futures import ProcessPoolExecutor
from itertools import repeat

import numpy as np
import pytest

from zsd.config import load_batch_spec
from zsd.dynamics import Algorithm, DynamicsConfig, DynamicsState, StopReason, flbr_step, ibr_step, omd_step, run  # noqa: E501
from zsd.equilibrium import estimate_nash, solve_2x2, solve_support_enum, verify_eps_nash
from zsd.errors import DiscardedError, NoSolutionError
from zsd.experiments import (
    BatchSpec,
    ReferenceMethod,
    batch_instance,
    derive_seed,
    random_game,
    resolve_threads,
    run_batch,
)
from zsd.game import PayoffMatrix, StrategyProfile
from zsd.metrics import l1_distance
from zsd.spectral import certify_contraction, finite_difference_jacobian, jacobian_at_equilibrium

pytestmark = pytest.mark.slow

R_DIAG = [[0.9, 0.1], [0.1, 0.9]]


def _medians(result) -> dict:  # noqa: ANN001
    return {(cell.n, cell.algorithm, cell.eta, cell.xi): stats.median for cell, stats in result.cells}


def _steps_by_rep(result, algorithm: Algorithm, eta: float | None = None) -> dict[tuple[int, int], int]:  # noqa: ANN001, E501
    """Step counts of one algorithm keyed by (n, rep); runs that hit t_max count as t_max."""
    t_max = result.spec.t_max
    return {
        (r.n, r.rep): r.steps if r.stop_reason is StopReason.CRITERION else t_max
        for r in result.runs
        if r.algorithm is algorithm and (eta is None or r.eta == eta)
    }


def _unique_equilibria(count: int, sizes: tuple[int, ...], min_prob: float = 0.05):
    """
    Random square games whose equilibrium has equal-size supports, in-support
    probabilities of at least `min_prob` and strictly worse off-support payoffs.
    """
    found = []
    attempt = 0
    while len(found) < count:
        n = sizes[len(found) % len(sizes)]
        game = random_game(n, n, derive_seed("contraction", n, attempt))
        attempt += 1
        try:
            ne = solve_support_enum(game)
        except NoSolutionError:
            continue
        x, y = ne.profile.probabilities()
        in_x, in_y = x > 1e-9, y > 1e-9
        if in_x.sum() != in_y.sum():
            continue
        if x[in_x].min() < min_prob or y[in_y].min() < min_prob:
            continue
        r = game.entries @ y
        c = game.entries.T @ x
        if np.any(r[~in_x] > ne.value - 1e-6) or np.any(c[~in_y] < ne.value + 1e-6):
            continue
        found.append((game, ne))
    return found


class TestOracleEquivalence:
    """The FLBR estimator against support enumeration."""

    @pytest.mark.timeout(120)
    def test_estimator_matches_support_enumeration(self):
        """100 random games for each n = 2..5 agree within 1e-4 in ℓ1, in two minutes overall."""
        spec = BatchSpec(sizes=(2, 3, 4, 5), reps=100, base_seed=2024, reference=ReferenceMethod.ESTIMATOR)  # noqa: E501
        tasks = [(n, rep) for n in spec.sizes for rep in range(spec.reps)]
        sizes, reps = zip(*tasks)
        with ProcessPoolExecutor(max_workers=resolve_threads()) as executor:
            instances = executor.map(batch_instance, repeat(spec), sizes, reps)
            for (n, rep), (game, estimate) in zip(tasks, instances):
                exact = solve_support_enum(game)
                assert l1_distance(estimate, exact.profile) <= 1e-4, f"n={n} rep={rep}"


class TestEstimatorCertificate:
    """Equilibrium quality of estimate_nash on its own."""

    @pytest.mark.timeout(1800)
    def test_five_by_five_games(self):
        """The estimate is a 1e-6-Nash equilibrium on 100 seeded random 5x5 games."""
        checked = attempt = 0
        while checked < 100:
            game = random_game(5, 5, derive_seed("certificate", attempt))
            attempt += 1
            try:
                result = estimate_nash(game)
            except DiscardedError:
                continue
            assert verify_eps_nash(game, result.profile, 1e-6), f"attempt={attempt - 1}"
            checked += 1


class TestRuntime:
    """Cost of the step loop."""

    def test_flbr_step_cost(self):
        """10^4 FLBR steps on a 5x5 game take under a second."""
        game = random_game(5, 5, derive_seed("runtime", 0))
        cfg = DynamicsConfig(eta=0.05, xi=100.0, t_max=10_000, record_every=10_000)
        start = time.perf_counter()
        result = run(game, cfg, "tmax_only")
        elapsed = time.perf_counter() - start
        assert result.steps == 10_000
        assert elapsed <= 1.0, f"{elapsed:.2f} s"


class TestCriterionAlongRuns:
    """Behaviour of criterion_kl and the game value along converging FLBR runs."""

    @pytest.mark.timeout(1800)
    def test_criterion_and_value_settle(self):
        """Once below 1e-6 the criterion stays below 1e-4; the value settles within 1e-6."""
        spec = BatchSpec(sizes=(5,), reps=10, base_seed=77, reference=ReferenceMethod.ESTIMATOR)
        for rep in range(spec.reps):
            game, _ = batch_instance(spec, 5, rep)
            value = solve_support_enum(game).value
            cfg = DynamicsConfig(eta=0.05, xi=100.0, t_max=2_000_000, record_every=10)
            result = run(game, cfg, "criterion_kl:1e-15")
            assert result.stop_reason is StopReason.CRITERION

            criteria = [r.criterion_kl for r in result.records[1:]]
            first = next(i for i, c in enumerate(criteria) if c < 1e-6)
            assert max(criteria[first:]) <= 1e-4, f"rep={rep}"

            gaps = [abs(r.game_value - value) for r in result.records]
            entered = next(i for i, g in enumerate(gaps) if g <= 1e-6)
            assert max(gaps[entered:]) <= 1e-6, f"rep={rep}"


class TestDeskTables:
    """Step-count statistics at desk scale."""

    @pytest.mark.timeout(3600)
    def test_intermediate_rate_sweep(self):
        """Median FLBR steps do not grow with ξ and sit near 2e4 at ξ = 100."""
        spec = dataclasses.replace(load_batch_spec("table1_desk"), xis=(20.0, 50.0, 100.0))
        by_cell = _medians(run_batch(spec))
        medians = [by_cell[(10, Algorithm.FLBR, 0.1, xi)] for xi in spec.xis]
        for smaller_xi, larger_xi in zip(medians, medians[1:]):
            assert larger_xi <= 1.1 * smaller_xi
        assert 5_000 <= medians[-1] <= 80_000

    @pytest.mark.timeout(4 * 3600)
    def test_speedup_over_omwu(self):
        """OMWU needs many times the gradient evaluations of FLBR."""
        medians = _medians(run_batch(load_batch_spec("table2_desk")))
        for n, factor in ((5, 5.0), (10, 20.0)):
            flbr = medians[(n, Algorithm.FLBR, 0.1, 100.0)]
            omwu = medians[(n, Algorithm.OMWU, 0.1, None)]
            assert omwu >= factor * 2.0 * flbr, f"n={n}"

    @pytest.mark.timeout(4 * 3600)
    def test_omd_tracks_omwu(self):
        """OMD and OMWU need about the same number of steps."""
        spec = BatchSpec(sizes=(5,), algorithms=("omwu", "omd"), reps=50, base_seed=4, t_max=5_000_000)
        result = run_batch(spec)
        omwu = _steps_by_rep(result, Algorithm.OMWU)
        omd = _steps_by_rep(result, Algorithm.OMD)
        deviations = [abs(omd[key] - omwu[key]) / omwu[key] for key in omwu]
        assert np.median(deviations) <= 0.05

    @pytest.mark.timeout(3600)
    def test_steps_scale_inversely_with_eta(self):
        """Halving η roughly doubles the FLBR step count."""
        spec = BatchSpec(
            sizes=(10,), algorithms=("flbr",), etas=(0.05, 0.1), xis=(100.0,), reps=50, base_seed=10,
        )
        result = run_batch(spec)
        slow = _steps_by_rep(result, Algorithm.FLBR, 0.05)
        fast = _steps_by_rep(result, Algorithm.FLBR, 0.1)
        ratios = [slow[key] / fast[key] for key in fast]
        within = sum(1.4 <= ratio <= 2.9 for ratio in ratios)
        assert within >= 0.8 * len(ratios)


class TestUpdateRules:
    """Properties of single steps on many random inputs."""

    def test_flbr_with_equal_rates_is_omd(self):
        """FLBR with ξ = η is bit-identical to OMD on random games and profiles."""
        rng = np.random.default_rng(8)
        for k in range(50):
            game = random_game(5, 4, derive_seed("omd", k))
            profile = StrategyProfile.from_probabilities(rng.dirichlet(np.ones(5)), rng.dirichlet(np.ones(4)))  # noqa: E501
            a = b = DynamicsState.start(profile)
            for _ in range(20):
                a = flbr_step(game, a, DynamicsConfig(algorithm="flbr", eta=0.1, xi=0.1))
                b = omd_step(game, b, DynamicsConfig(algorithm="omd", eta=0.1))
            assert np.array_equal(a.current.x.log_weights, b.current.x.log_weights)
            assert np.array_equal(a.current.y.log_weights, b.current.y.log_weights)

    @pytest.mark.timeout(600)
    def test_intermediate_step_approaches_best_response(self):
        """
        With a payoff gap of at least 0.05 the IBR mass off the best response obeys
        its exponential bound at ξ = 200 and vanishes below 1e-8 at ξ = 2000.
        """
        rng = np.random.default_rng(6)
        checked = 0
        attempt = 0
        while checked < 100:
            n = 2 + attempt % 4
            game = random_game(n, n, derive_seed("ibr", attempt))
            attempt += 1
            x, y = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
            r = game.entries @ y
            c = game.entries.T @ x
            top_r, top_c = np.sort(r)[::-1], np.sort(c)
            if top_r[0] - top_r[1] < 0.05 or top_c[1] - top_c[0] < 0.05:
                continue
            i, j = int(np.argmax(r)), int(np.argmin(c))
            profile = StrategyProfile.from_probabilities(x, y)
            for xi in (200.0, 2000.0):
                out = ibr_step(game, profile, xi)
                x_hat, y_hat = out.probabilities()
                bound_x = sum(x[k] / x[i] * np.exp(-xi * (r[i] - r[k])) for k in range(n) if k != i)
                bound_y = sum(y[k] / y[j] * np.exp(-xi * (c[k] - c[j])) for k in range(n) if k != j)
                assert 1.0 - x_hat[i] <= bound_x * (1 + 1e-9) + 1e-15
                assert 1.0 - y_hat[j] <= bound_y * (1 + 1e-9) + 1e-15
                if xi == 2000.0:
                    assert x_hat[i] >= 1.0 - 1e-8
                    assert y_hat[j] >= 1.0 - 1e-8
            checked += 1


class TestNonConvergence:
    """MWU against FLBR on a symmetric 2x2 game."""

    @pytest.mark.timeout(600)
    def test_mwu_cycles_while_flbr_converges(self):
        """From x = (0.6, 0.4) MWU never gets within 1e-3 of the equilibrium; FLBR does."""
        game = PayoffMatrix(np.array(R_DIAG))
        ne = solve_2x2(game).profile
        start = StrategyProfile.from_probabilities([0.6, 0.4], [0.5, 0.5])
        mwu = run(
            game,
            DynamicsConfig(algorithm="mwu", eta=0.1, t_max=100_000, record_every=10_000),
            "l1_to_ref:1e-3",
            reference=ne,
            initial=start,
        )
        assert mwu.stop_reason is StopReason.TMAX
        flbr = run(
            game,
            DynamicsConfig(algorithm="flbr", eta=0.1, xi=100.0, t_max=10_000, record_every=1_000),
            "l1_to_ref:1e-3",
            reference=ne,
            initial=start,
        )
        assert flbr.stop_reason is StopReason.CRITERION


class TestDistanceDecrease:
    """KL divergence to the equilibrium along FLBR runs far from it."""

    @pytest.mark.timeout(3600)
    def test_kl_to_equilibrium_decreases(self):
        """Where the iterate is worse than a 10η-equilibrium, each step brings it closer."""
        eta = 0.02
        spec = BatchSpec(sizes=(5, 10), reps=25, base_seed=12, reference=ReferenceMethod.ESTIMATOR)
        qualifying = decreasing = 0
        for n in spec.sizes:
            for rep in range(spec.reps):
                game, reference = batch_instance(spec, n, rep)
                cfg = DynamicsConfig(
                    eta=eta, xi=100.0, t_max=5_000, record_every=1, init="random",
                    seed=derive_seed("decrease", n, rep),
                )
                records = run(game, cfg, "tmax_only", reference=reference).records
                for before, after in zip(records, records[1:]):
                    if before.eps_nash >= 10 * eta:
                        qualifying += 1
                        decreasing += after.kl_to_ref < before.kl_to_ref
        assert qualifying > 0
        assert decreasing >= 0.99 * qualifying


class TestContractionCertificate:
    """Contraction checks at the equilibria of random games with η = 0.05 and ηξ < 1."""

    @pytest.fixture(scope="class")
    def instances(self):
        return _unique_equilibria(100, sizes=(3, 5))

    @pytest.mark.timeout(600)
    @pytest.mark.parametrize("xi", [2.0, 10.0])
    def test_every_instance_contracts(self, instances: list, xi: float):
        """The spectral radius is below one and the D^xx, D^yy diagonals are negative."""
        for game, ne in instances:
            report = certify_contraction(game, ne, 0.05, xi)
            assert report.is_contraction
            assert report.spectral_radius < 1.0
            assert report.dxx_diag_negative
            assert report.dyy_diag_negative

    @pytest.mark.timeout(600)
    def test_left_kernel(self, instances: list):
        """Each player's column sums of J̃ vanish."""
        for game, ne in instances:
            jac = jacobian_at_equilibrium(game, ne, 0.05, 10.0)
            k = len(jac.row_support)
            top, bottom = jac.support_submatrix[:k], jac.support_submatrix[k:]
            assert np.abs(np.ones(k) @ top).max() <= 1e-10
            assert np.abs(np.ones(bottom.shape[0]) @ bottom).max() <= 1e-10

    @pytest.mark.timeout(600)
    def test_matches_finite_differences(self, instances: list):
        """The exact Jacobian agrees with central differences of the update map."""
        for game, ne in instances:
            jac = jacobian_at_equilibrium(game, ne, 0.05, 10.0)
            x, y = ne.profile.probabilities()
            x = np.where(x > 1e-9, x, 0.0)
            y = np.where(y > 1e-9, y, 0.0)
            numeric = finite_difference_jacobian(game.entries, x, y, 0.05, 10.0)
            np.testing.assert_allclose(jac.full, numeric, atol=1e-4)
