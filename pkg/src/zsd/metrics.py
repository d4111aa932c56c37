"""Convergence measures over profiles and trajectories."""
import csv
import logging
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from zsd.errors import DimensionError, MissingIntermediateError
from zsd.game import MixedStrategy, PayoffMatrix, StrategyProfile, expected_payoff

if TYPE_CHECKING:
    from zsd.dynamics import DynamicsState

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ("step", "kl_to_ref", "l1_to_ref", "eps_nash", "game_value", "criterion_kl")

# Probabilities below this contribute nothing to a KL sum (0·ln 0 := 0).
KL_NEGLIGIBLE = 1e-300


@dataclass(frozen=True)
class TrajectoryRecord:
    """Metrics of one recorded step of a run."""

    step: int
    eps_nash: float
    game_value: float
    kl_to_ref: float | None = None
    l1_to_ref: float | None = None
    criterion_kl: float | None = None

    def as_row(self) -> list[str]:
        """Fields in TRAJECTORY_HEADER order; absent values as empty strings."""
        return [
            str(self.step),
            format_float(self.kl_to_ref),
            format_float(self.l1_to_ref),
            format_float(self.eps_nash),
            format_float(self.game_value),
            format_float(self.criterion_kl),
        ]


def format_float(value: float | None) -> str:
    """Shortest round-trip decimal form; None becomes the empty string."""
    return "" if value is None else repr(float(value))


def log_kl(log_p: np.ndarray, log_q: np.ndarray) -> float:
    """
    KL divergence Σ p_i ln(p_i / q_i) from normalised log-probability vectors.

    Terms whose p-coordinate is below 1e-300 contribute zero. The result is
    clamped at zero to absorb rounding.
    """
    p = np.exp(log_p)
    terms = np.where(p < KL_NEGLIGIBLE, 0.0, p * (log_p - log_q))
    return max(0.0, float(terms.sum()))


def strategy_kl(p: MixedStrategy, q: MixedStrategy) -> float:
    """KL divergence of one player's strategies, natural log."""
    if p.dim != q.dim:
        raise DimensionError(f"Strategies have dimensions {p.dim} and {q.dim}")
    return log_kl(p.log_probabilities(), q.log_probabilities())


def _check_same_shape(p: StrategyProfile, q: StrategyProfile) -> None:
    if p.x.dim != q.x.dim or p.y.dim != q.y.dim:
        raise DimensionError(
            f"Profiles have dimensions ({p.x.dim}, {p.y.dim}) and ({q.x.dim}, {q.y.dim})",
        )


def kl_divergence(p: StrategyProfile, q: StrategyProfile) -> float:
    """
    Profile KL divergence D(p‖q) = Σ p.x ln(p.x/q.x) + Σ p.y ln(p.y/q.y).

    Args:
        p: Reference profile, e.g. the equilibrium.
        q: Compared profile, e.g. the current iterate.

    Raises:
        DimensionError: If the profiles have different shapes.
    """
    _check_same_shape(p, q)
    return strategy_kl(p.x, q.x) + strategy_kl(p.y, q.y)


def l1_distance(p: StrategyProfile, q: StrategyProfile) -> float:
    """Σ|x_i − x'_i| + Σ|y_j − y'_j|, a value in [0, 4]."""
    _check_same_shape(p, q)
    px, py = p.probabilities()
    qx, qy = q.probabilities()
    return float(np.abs(px - qx).sum() + np.abs(py - qy).sum())


def criterion_kl(state: "DynamicsState") -> float:
    """
    D_KL((x^t, y^t) ‖ (x̂^t, ŷ^t)) between the update and the IBR output that produced it.

    The criterion vanishes at any profile the IBR step leaves fixed, in
    particular at an interior equilibrium.

    Raises:
        MissingIntermediateError: For states without an IBR output (MWU, OMWU, step 0).
    """
    if state.intermediate is None:
        raise MissingIntermediateError(
            f"State at step {state.step} has no intermediate profile; "
            "the criterion exists only for FLBR and OMD runs",
        )
    return kl_divergence(state.current, state.intermediate)


def game_value_at(game: PayoffMatrix, profile: StrategyProfile) -> float:
    """Current value of the game v^t = (x^t)^T R y^t."""
    return expected_payoff(game, profile.x, profile.y)


def write_trajectory_csv(records: Iterable[TrajectoryRecord], path: str | Path) -> None:
    """Write records as CSV with the TRAJECTORY_HEADER columns."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRAJECTORY_HEADER)
        for record in records:
            writer.writerow(record.as_row())
