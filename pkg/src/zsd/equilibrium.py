"""
Nash equilibrium estimation, exact oracles for small games and ε-Nash verification.

`estimate_nash` runs FLBR until the update and the IBR output agree to a KL of
1e-15; `solve_2x2` and `solve_support_enum` are independent exact solvers used
to check it.
"""
import itertools
import logging
from collections.abc import Iterator
from dataclasses import dataclass
from enum import Enum

import numpy as np

from zsd.dynamics import Algorithm, DynamicsConfig, StopKind, StoppingRule, StopReason, run
from zsd.errors import (
    DimensionError,
    DiscardedError,
    InputError,
    NoSolutionError,
    NumericsError,
    SizeError,
)
from zsd.game import (
    PayoffMatrix,
    StrategyProfile,
    epsilon_of,
    expected_payoff,
)

logger = logging.getLogger(__name__)

ESTIMATOR_ETA = 0.05
ESTIMATOR_XI = 100.0
ESTIMATOR_TOL = 1e-15
ESTIMATOR_T_MAX = 2_000_000
SUPPORT_ENUM_MAX_DIM = 5
# Support systems with a larger condition number are treated as singular.
MAX_CONDITION = 1e10
# Least-squares support systems with a larger residual are inconsistent.
MAX_RESIDUAL = 1e-12


class EquilibriumMethod(str, Enum):
    ESTIMATOR = "estimator"
    ORACLE_2X2 = "oracle_2x2"
    SUPPORT_ENUM = "support_enum"


@dataclass(frozen=True)
class EquilibriumResult:
    """
    An (approximate) equilibrium with its value and ε certificate.

    Attributes:
        profile: The equilibrium profile (x*, y*).
        value: Value of the game, expected payoff at `profile`.
        method: Which solver produced the result.
        certificate_eps: epsilon_of at `profile`.
        steps_used: FLBR steps of the estimator; None for the oracles.
    """

    profile: StrategyProfile
    value: float
    method: EquilibriumMethod
    certificate_eps: float
    steps_used: int | None = None

    def to_dict(self) -> dict:
        """JSON-ready mapping with keys x, y, value, method, certificate_eps, steps_used."""
        x, y = self.profile.probabilities()
        return {
            "x": x.tolist(),
            "y": y.tolist(),
            "value": self.value,
            "method": self.method.value,
            "certificate_eps": self.certificate_eps,
            "steps_used": self.steps_used,
        }


def _result(
        game: PayoffMatrix,
        profile: StrategyProfile,
        method: EquilibriumMethod,
        steps_used: int | None = None,
    ) -> EquilibriumResult:
    return EquilibriumResult(
        profile=profile,
        value=expected_payoff(game, profile.x, profile.y),
        method=method,
        certificate_eps=epsilon_of(game, profile),
        steps_used=steps_used,
    )


def estimate_nash(
        game: PayoffMatrix,
        eta: float = ESTIMATOR_ETA,
        xi: float = ESTIMATOR_XI,
        tol: float = ESTIMATOR_TOL,
        t_max: int = ESTIMATOR_T_MAX,
    ) -> EquilibriumResult:
    """
    Estimate the equilibrium with FLBR from the uniform profile.

    The run stops when D_KL(update ‖ IBR) ≤ tol.

    Args:
        game: The payoff matrix.
        eta: FLBR learning rate.
        xi: IBR rate.
        tol: Criterion tolerance.
        t_max: Step budget.

    Raises:
        DiscardedError: If t_max is reached first. The last iterate is attached
            for inspection and must not be used as an equilibrium.
        NumericsError: If the iteration produced non-finite values.
        ConfigError: If eta, xi or t_max are invalid.
    """
    cfg = DynamicsConfig(algorithm=Algorithm.FLBR, eta=eta, xi=xi, t_max=t_max, record_every=t_max)
    result = run(game, cfg, StoppingRule(StopKind.CRITERION_KL, tol))
    if result.stop_reason is StopReason.NUMERICS_ERROR:
        raise NumericsError(f"Equilibrium estimation failed after {result.steps} steps")
    if result.stop_reason is StopReason.TMAX:
        logger.warning(
            "Equilibrium estimate discarded: criterion %r not reached in %d steps", tol, t_max,
        )
        raise DiscardedError(
            f"Equilibrium estimator did not reach criterion_kl <= {tol!r} within {t_max} steps",
            steps=result.steps,
            profile=result.profile,
        )
    return _result(game, result.profile, EquilibriumMethod.ESTIMATOR, result.steps)


def _pure_saddle(R: np.ndarray) -> tuple[int, int] | None:
    for i, j in itertools.product(range(R.shape[0]), range(R.shape[1])):
        if R[i, j] <= R[i].min() and R[i, j] >= R[:, j].max():
            return i, j
    return None


def _pure_profile(n: int, m: int, i: int, j: int) -> StrategyProfile:
    x, y = np.zeros(n), np.zeros(m)
    x[i], y[j] = 1.0, 1.0
    return StrategyProfile.from_probabilities(x, y)


def solve_2x2(game: PayoffMatrix) -> EquilibriumResult:
    """
    Closed-form equilibrium of a 2×2 game.

    A pure saddle (an entry that is the minimum of its row and the maximum of
    its column) is returned when one exists. Otherwise, for R = [[a, b], [c, d]],
    x₁ = (d−c)/D, y₁ = (d−b)/D and v = (ad−bc)/D with D = a−b−c+d.

    Raises:
        DimensionError: If the game is not 2×2.
    """
    if game.shape != (2, 2):
        raise DimensionError(f"solve_2x2 needs a 2x2 game, got {game.n}x{game.m}")
    R = game.entries
    saddle = _pure_saddle(R)
    if saddle is not None:
        return _result(game, _pure_profile(2, 2, *saddle), EquilibriumMethod.ORACLE_2X2)
    (a, b), (c, d) = R
    denominator = a - b - c + d
    x1 = (d - c) / denominator
    y1 = (d - b) / denominator
    profile = StrategyProfile.from_probabilities([x1, 1.0 - x1], [y1, 1.0 - y1])
    return _result(game, profile, EquilibriumMethod.ORACLE_2X2)


def _solve_indifference(block: np.ndarray) -> tuple[np.ndarray, float] | None:
    """
    Solve block·p = v·1 with Σp = 1 as one bordered linear system.

    Square blocks are solved directly. A rectangular block (supports of
    different sizes) is solved by least squares and kept only if the residual
    vanishes; an underdetermined system yields its minimum-norm solution.

    Returns (p, v), or None when the system is singular, ill-conditioned or
    inconsistent.
    """
    k, size = block.shape
    system = np.zeros((k + 1, size + 1))
    system[:k, :size] = block
    system[:k, size] = -1.0
    system[k, :size] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    if np.linalg.cond(system) > MAX_CONDITION:
        return None
    if k == size:
        try:
            solution = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError:
            return None
    else:
        solution = np.linalg.lstsq(system, rhs, rcond=None)[0]
        if np.abs(system @ solution - rhs).max() > MAX_RESIDUAL:
            return None
    return solution[:size], float(solution[size])


def _support_pairs(n: int, m: int) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
    """Equal-size pairs by size k, then unequal sizes (k1, k2) in lexicographic order."""
    sizes = [(k, k) for k in range(1, min(n, m) + 1)]
    sizes += [(k1, k2) for k1 in range(1, n + 1) for k2 in range(1, m + 1) if k1 != k2]
    for k1, k2 in sizes:
        yield from itertools.product(
            itertools.combinations(range(n), k1),
            itertools.combinations(range(m), k2),
        )


def _accept_pair(
        R: np.ndarray,
        sx: tuple[int, ...],
        sy: tuple[int, ...],
        tol: float,
    ) -> StrategyProfile | None:
    block = R[np.ix_(sx, sy)]
    column_part = _solve_indifference(block)
    row_part = _solve_indifference(block.T)
    if column_part is None or row_part is None:
        logger.debug("Skipping singular support pair %s, %s", sx, sy)
        return None
    (y_sub, value), (x_sub, _) = column_part, row_part
    if np.any(x_sub < -tol) or np.any(y_sub < -tol):
        return None
    n, m = R.shape
    x, y = np.zeros(n), np.zeros(m)
    x[list(sx)] = np.clip(x_sub, 0.0, None)
    y[list(sy)] = np.clip(y_sub, 0.0, None)
    x /= x.sum()
    y /= y.sum()
    if np.any(R @ y > value + tol) or np.any(R.T @ x < value - tol):
        return None
    return StrategyProfile.from_probabilities(x, y)


def solve_support_enum(game: PayoffMatrix, tol: float = 1e-9) -> EquilibriumResult:
    """
    Exact equilibrium by enumerating support pairs.

    Equal-size pairs are tried first, by increasing size k and then
    lexicographically by (row support, column support). Pairs of different
    sizes follow, ordered by (|row support|, |column support|); they only
    matter for degenerate games whose square systems were all rejected. The first
    accepted pair is returned. A pair is accepted when both indifference
    systems are solvable, all probabilities are at least −tol, and no pure
    deviation gains more than tol.

    Args:
        game: A payoff matrix with n, m ≤ 5.
        tol: Acceptance tolerance.

    Raises:
        SizeError: If n or m exceeds 5.
        NoSolutionError: If every support pair is rejected.
    """
    if tol < 0:
        raise InputError(f"Tolerance must be non-negative, got {tol!r}")
    n, m = game.shape
    if n > SUPPORT_ENUM_MAX_DIM or m > SUPPORT_ENUM_MAX_DIM:
        raise SizeError(
            f"Support enumeration handles games up to {SUPPORT_ENUM_MAX_DIM}x{SUPPORT_ENUM_MAX_DIM}, "
            f"got {n}x{m}",
        )
    for sx, sy in _support_pairs(n, m):
        profile = _accept_pair(game.entries, sx, sy, tol)
        if profile is not None:
            if len(sx) != len(sy):
                logger.debug("Accepted unequal support pair %s, %s", sx, sy)
            return _result(game, profile, EquilibriumMethod.SUPPORT_ENUM)
    raise NoSolutionError(f"No support pair of the {n}x{m} game passed within tol={tol!r}")


def solve_exact(game: PayoffMatrix, tol: float = 1e-9) -> EquilibriumResult:
    """`solve_2x2` for 2×2 games, `solve_support_enum` otherwise."""
    if game.shape == (2, 2):
        return solve_2x2(game)
    return solve_support_enum(game, tol)


def verify_eps_nash(game: PayoffMatrix, profile: StrategyProfile, eps: float) -> bool:
    """True iff `profile` is an eps-Nash equilibrium of `game`."""
    if eps < 0:
        raise InputError(f"eps must be non-negative, got {eps!r}")
    return epsilon_of(game, profile) <= eps
