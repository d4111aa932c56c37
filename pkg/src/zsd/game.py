"""
Zero-sum matrix games: payoff matrices, mixed strategies and profiles.

The row player maximises and the column player minimises the bilinear payoff
x^T R y. Mixed strategies are stored as log-weights so that coordinates can
decay far below double precision's smallest normal number and still recover.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from zsd.errors import DimensionError, InputError

logger = logging.getLogger(__name__)

# Just above the underflow threshold of exp() in double precision.
LOG_FLOOR = -745.0
# Smallest entry produced by rescale().
RESCALE_FLOOR = 1e-6


def log_normalize(log_weights: np.ndarray) -> np.ndarray:
    """Normalised log-probabilities via max-subtracted log-sum-exp, floored at LOG_FLOOR."""
    top = log_weights.max()
    log_norm = top + math.log(np.exp(log_weights - top).sum())
    return np.maximum(log_weights - log_norm, LOG_FLOOR)


def probabilities_from_log(log_weights: np.ndarray) -> np.ndarray:
    """Strictly positive probabilities summing to one from unnormalised log-weights."""
    p = np.exp(log_normalize(log_weights))
    return p / p.sum()


def nash_gap(entries: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    """ε of the profile (x, y) given as probability vectors; see `epsilon_of`."""
    row_payoffs = entries @ y
    value = float(x @ row_payoffs)
    col_payoffs = entries.T @ x
    return max(0.0, float(row_payoffs.max()) - value, value - float(col_payoffs.min()))


@dataclass(frozen=True, eq=False)
class PayoffMatrix:
    """
    An n×m payoff matrix R with every entry in (0, 1].

    Use `rescale` to bring an arbitrary finite matrix into range.
    """

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise DimensionError(f"Payoff matrix must be a non-empty 2-D array, got shape {entries.shape}")  # noqa: E501
        if not np.all(np.isfinite(entries)):
            raise InputError("Payoff matrix entries must be finite")
        if np.any(entries <= 0.0) or np.any(entries > 1.0):
            bad = entries[(entries <= 0.0) | (entries > 1.0)][0]
            raise InputError(
                f"Payoff matrix entries must lie in (0, 1], found {bad!r}; use rescale() first",
            )
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        """Number of row strategies."""
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        """Number of column strategies."""
        return self.entries.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    def __repr__(self) -> str:
        return f"PayoffMatrix({self.entries.tolist()!r})"


@dataclass(frozen=True, eq=False)
class MixedStrategy:
    """
    A point on the probability simplex, stored as natural-log weights.

    Log-weights need not be normalised; `probabilities` normalises them with a
    max-subtracted log-sum-exp. A weight of -inf (zero probability) is stored
    as LOG_FLOOR so every coordinate keeps a strictly positive probability.
    """

    log_weights: np.ndarray

    def __post_init__(self):
        log_weights = np.array(self.log_weights, dtype=float)
        if log_weights.ndim != 1 or log_weights.size < 1:
            raise DimensionError(f"Log-weights must be a non-empty vector, got shape {log_weights.shape}")  # noqa: E501
        if np.any(np.isnan(log_weights)) or np.any(log_weights == np.inf):
            raise InputError("Log-weights must not be NaN or +inf")
        log_weights = np.maximum(log_weights, LOG_FLOOR)
        log_weights.setflags(write=False)
        object.__setattr__(self, "log_weights", log_weights)

    @classmethod
    def uniform(cls, dim: int) -> "MixedStrategy":
        """The uniform distribution on `dim` pure strategies."""
        if dim < 1:
            raise DimensionError(f"Strategy dimension must be positive, got {dim}")
        return cls(np.full(dim, -math.log(dim)))

    @classmethod
    def from_probabilities(cls, probabilities: "np.ndarray | list[float]") -> "MixedStrategy":
        """
        Build a strategy from a probability vector.

        Zero entries map to LOG_FLOOR. The vector is normalised first.

        Raises:
            InputError: If any entry is negative or non-finite, or all are zero.
        """
        p = np.asarray(probabilities, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise DimensionError(f"Probabilities must be a non-empty vector, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0.0):
            raise InputError("Probabilities must be finite and non-negative")
        total = p.sum()
        if total <= 0.0:
            raise InputError("Probabilities must not all be zero")
        with np.errstate(divide="ignore"):
            log_weights = np.log(p / total)
        return cls(np.maximum(log_weights, LOG_FLOOR))

    @classmethod
    def pure(cls, dim: int, index: int) -> "MixedStrategy":
        """The pure strategy e_index, with the other coordinates at LOG_FLOOR."""
        if not 0 <= index < dim:
            raise DimensionError(f"Pure strategy index {index} out of range for dimension {dim}")
        log_weights = np.full(dim, LOG_FLOOR)
        log_weights[index] = 0.0
        return cls(log_weights)

    @property
    def dim(self) -> int:
        return self.log_weights.size

    def log_probabilities(self) -> np.ndarray:
        """Normalised log-probabilities, floored at LOG_FLOOR."""
        return log_normalize(self.log_weights)

    def probabilities(self) -> np.ndarray:
        """Strictly positive probabilities summing to one."""
        return probabilities_from_log(self.log_weights)

    def __repr__(self) -> str:
        return f"MixedStrategy({np.round(self.probabilities(), 6).tolist()!r})"


@dataclass(frozen=True, eq=False)
class StrategyProfile:
    """Row strategy x and column strategy y."""

    x: MixedStrategy
    y: MixedStrategy

    @classmethod
    def uniform(cls, n: int, m: int) -> "StrategyProfile":
        return cls(MixedStrategy.uniform(n), MixedStrategy.uniform(m))

    @classmethod
    def from_probabilities(
            cls,
            x: "np.ndarray | list[float]",
            y: "np.ndarray | list[float]",
        ) -> "StrategyProfile":
        return cls(MixedStrategy.from_probabilities(x), MixedStrategy.from_probabilities(y))

    def probabilities(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x.probabilities(), self.y.probabilities()

    def check_against(self, game: PayoffMatrix) -> None:
        """
        Raise DimensionError unless the profile fits `game`.

        Args:
            game: The payoff matrix the profile is used with.
        """
        if self.x.dim != game.n or self.y.dim != game.m:
            raise DimensionError(
                f"Profile dimensions ({self.x.dim}, {self.y.dim}) do not match "
                f"the {game.n}x{game.m} game",
            )


def _check_dim(actual: int, expected: int, what: str) -> None:
    if actual != expected:
        raise DimensionError(f"{what} has dimension {actual}, expected {expected}")


def expected_payoff(game: PayoffMatrix, x: MixedStrategy, y: MixedStrategy) -> float:
    """
    Expected payoff x^T R y of the row player.

    Raises:
        DimensionError: If x or y does not fit the game.
    """
    _check_dim(x.dim, game.n, "Row strategy")
    _check_dim(y.dim, game.m, "Column strategy")
    return float(x.probabilities() @ game.entries @ y.probabilities())


def payoff_vector_row(game: PayoffMatrix, y: MixedStrategy) -> np.ndarray:
    """Payoff (Ry)_i of each pure row strategy against y."""
    _check_dim(y.dim, game.m, "Column strategy")
    return game.entries @ y.probabilities()


def payoff_vector_col(game: PayoffMatrix, x: MixedStrategy) -> np.ndarray:
    """Payoff (R^T x)_j conceded by each pure column strategy against x."""
    _check_dim(x.dim, game.n, "Row strategy")
    return game.entries.T @ x.probabilities()


def epsilon_of(game: PayoffMatrix, profile: StrategyProfile) -> float:
    """
    Smallest ε for which `profile` is an ε-Nash equilibrium.

    ε is the larger of the row player's gain from its best pure deviation and
    the column player's gain from its best pure deviation.

    Raises:
        DimensionError: If the profile does not fit the game.
    """
    profile.check_against(game)
    x, y = profile.probabilities()
    return nash_gap(game.entries, x, y)


def support(strategy: MixedStrategy, tol: float = 1e-9) -> frozenset[int]:
    """Zero-based indices whose probability exceeds `tol`."""
    if tol < 0:
        raise InputError(f"Support tolerance must be non-negative, got {tol}")
    return frozenset(int(i) for i in np.flatnonzero(strategy.probabilities() > tol))


def pure_best_responses(
        game: PayoffMatrix,
        profile: StrategyProfile,
        tol: float = 1e-12,
    ) -> tuple[frozenset[int], frozenset[int]]:
    """
    Pure best responses of each player against the other's strategy.

    Returns:
        (rows maximising (Ry)_i, columns minimising (R^T x)_j), ties within `tol`.
    """
    profile.check_against(game)
    x, y = profile.probabilities()
    row_payoffs = game.entries @ y
    col_payoffs = game.entries.T @ x
    rows = frozenset(int(i) for i in np.flatnonzero(row_payoffs >= row_payoffs.max() - tol))
    cols = frozenset(int(j) for j in np.flatnonzero(col_payoffs <= col_payoffs.min() + tol))
    return rows, cols


def rescale(raw: "np.ndarray | list[list[float]]") -> PayoffMatrix:
    """
    Map an arbitrary finite matrix into (0, 1] by a positive affine map.

    Matrices already in range are returned unchanged. Otherwise the minimum
    maps to RESCALE_FLOOR and the maximum to 1. A constant matrix maps to 0.5
    everywhere, since every profile of it is an equilibrium.

    Raises:
        InputError: If any entry is non-finite.
    """
    entries = np.array(raw, dtype=float)
    if entries.ndim != 2 or entries.size == 0:
        raise DimensionError(f"Matrix must be a non-empty 2-D array, got shape {entries.shape}")
    if not np.all(np.isfinite(entries)):
        raise InputError("Matrix entries must be finite to rescale")
    low, high = float(entries.min()), float(entries.max())
    if low == high:
        return PayoffMatrix(np.full(entries.shape, 0.5))
    if low > 0.0 and high <= 1.0:
        return PayoffMatrix(entries)
    scale = (1.0 - RESCALE_FLOOR) / (high - low)
    scaled = scale * (entries - low) + RESCALE_FLOOR
    # Pin the extremes so rounding cannot leave the range.
    scaled[entries == high] = 1.0
    scaled[entries == low] = RESCALE_FLOOR
    logger.debug("Rescaled matrix with a=%r, b=%r", scale, RESCALE_FLOOR - scale * low)
    return PayoffMatrix(np.clip(scaled, RESCALE_FLOOR, 1.0))


def parse_matrix(text: str) -> PayoffMatrix:
    """
    Parse the matrix text format.

    Line 1 holds `n m`; the next n lines hold m decimal entries each. Lines
    starting with `#` and blank lines are ignored.

    Raises:
        InputError: If the text is malformed or an entry lies outside (0, 1].
    """
    lines = [
        line.strip() for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    if not lines:
        raise InputError("Matrix text is empty")
    header = lines[0].split()
    if len(header) != 2:
        raise InputError(f"Matrix header must be 'n m', got {lines[0]!r}")
    try:
        n, m = int(header[0]), int(header[1])
    except ValueError:
        raise InputError(f"Matrix header must hold two integers, got {lines[0]!r}")
    if n < 1 or m < 1:
        raise InputError(f"Matrix dimensions must be positive, got {n}x{m}")
    rows = lines[1:]
    if len(rows) != n:
        raise InputError(f"Matrix header declares {n} rows but {len(rows)} were given")
    entries = []
    for index, row in enumerate(rows, start=1):
        fields = row.split()
        if len(fields) != m:
            raise InputError(f"Matrix row {index} has {len(fields)} entries, expected {m}")
        try:
            entries.append([float(field) for field in fields])
        except ValueError as e:
            raise InputError(f"Matrix row {index} holds a non-numeric entry: {e}")
    return PayoffMatrix(np.array(entries))


def read_matrix(path: str | Path) -> PayoffMatrix:
    """Read a matrix file; see `parse_matrix` for the format."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"Matrix file not found: {path}")
    return parse_matrix(path.read_text())


def format_matrix(game: PayoffMatrix) -> str:
    """Render `game` in the matrix text format, entries in shortest round-trip form."""
    lines = [f"{game.n} {game.m}"]
    lines.extend(" ".join(repr(float(e)) for e in row) for row in game.entries)
    return "\n".join(lines) + "\n"


def write_matrix(game: PayoffMatrix, path: str | Path) -> None:
    Path(path).write_text(format_matrix(game))
