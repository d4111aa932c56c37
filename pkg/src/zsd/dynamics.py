"""
Learning dynamics for zero-sum matrix games.

Four update rules share one log-space reweighing kernel:

- MWU: each player reweighs by its payoffs against the opponent's last strategy.
- OMWU: the exponent uses twice the latest payoff minus the previous one.
- FLBR: an intermediate best-response (IBR) softmax step at a large rate ξ,
  then an MWU step at rate η against the opponent's IBR strategy.
- OMD: FLBR with ξ = η (optimistic mirror descent with entropic regularizer).

`run` iterates a rule from an initial profile until a stopping rule fires or
t_max is reached.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from zsd.errors import ConfigError, DimensionError, NumericsError
from zsd.game import (
    LOG_FLOOR,
    MixedStrategy,
    PayoffMatrix,
    StrategyProfile,
    log_normalize,
)
from zsd.metrics import KL_NEGLIGIBLE, TrajectoryRecord

logger = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1
# Per-step recording is only allowed for games up to this many strategies per player.
FULL_RECORDING_MAX_DIM = 20


class Algorithm(str, Enum):
    MWU = "mwu"
    OMWU = "omwu"
    OMD = "omd"
    FLBR = "flbr"

    @property
    def uses_intermediate(self) -> bool:
        """True for the extra-gradient rules (FLBR, OMD)."""
        return self in (Algorithm.FLBR, Algorithm.OMD)


class StopKind(str, Enum):
    CRITERION_KL = "criterion_kl"
    KL_TO_REF = "kl_to_ref"
    EPS_NASH = "eps_nash"
    L1_TO_REF = "l1_to_ref"
    TMAX_ONLY = "tmax_only"


class StopReason(str, Enum):
    CRITERION = "criterion"
    TMAX = "tmax"
    NUMERICS_ERROR = "numerics_error"


@dataclass(frozen=True)
class DynamicsConfig:
    """
    Algorithm choice and constants of one run.

    Attributes:
        algorithm: Update rule; strings such as "flbr" are accepted.
        eta: Learning rate η of the update step, in (0, 1).
        xi: Rate ξ of the IBR step. Ignored by MWU and OMWU. For OMD it
            defaults to eta and any other value is rejected.
        t_max: Maximum number of steps.
        record_every: Trajectory thinning; a record is kept every this many steps.
        seed: Seed of the random initial profile (init="random").
        init: "uniform" (default) or "random" (fully-mixed Dirichlet draw).
    """

    algorithm: Algorithm = Algorithm.FLBR
    eta: float = 0.1
    xi: float | None = None
    t_max: int = 1_000_000
    record_every: int = 100
    seed: int = 0
    init: str = "uniform"

    def __post_init__(self):
        try:
            algorithm = Algorithm(str(getattr(self.algorithm, "value", self.algorithm)).lower())
        except ValueError:
            raise ConfigError(
                f"Unknown algorithm {self.algorithm!r}; expected one of "
                f"{', '.join(a.value for a in Algorithm)}",
            )
        object.__setattr__(self, "algorithm", algorithm)
        if not (math.isfinite(self.eta) and 0.0 < self.eta < 1.0):
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta!r}")
        xi = self.xi
        if algorithm is Algorithm.OMD:
            if xi is not None and xi != self.eta:
                raise ConfigError(f"OMD requires xi == eta, got xi={xi!r} and eta={self.eta!r}")
            xi = self.eta
        elif xi is None:
            xi = 100.0
        if not (math.isfinite(xi) and xi >= 0.0):
            raise ConfigError(f"xi must be finite and non-negative, got {xi!r}")
        object.__setattr__(self, "xi", float(xi))
        if int(self.t_max) != self.t_max or self.t_max < 1:
            raise ConfigError(f"t_max must be a positive integer, got {self.t_max!r}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ConfigError(f"record_every must be a positive integer, got {self.record_every!r}")  # noqa: E501
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.init not in ("uniform", "random"):
            raise ConfigError(f"init must be 'uniform' or 'random', got {self.init!r}")


@dataclass(frozen=True)
class StoppingRule:
    """
    A stopping criterion, encoded in configs as `<kind>:<tol>` or `tmax_only`.

    - criterion_kl: D_KL(update ‖ IBR) ≤ tol (FLBR and OMD only).
    - kl_to_ref: D_KL(reference ‖ iterate) ≤ tol.
    - eps_nash: ε of the iterate ≤ tol.
    - l1_to_ref: ℓ1 distance to the reference ≤ tol.
    - tmax_only: never fires.
    """

    kind: StopKind
    tol: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "StoppingRule":
        """
        Parse a stopping-rule string.

        Raises:
            ConfigError: If the kind is unknown or the tolerance is not a non-negative number.
        """
        text = text.strip()
        if text == StopKind.TMAX_ONLY.value:
            return cls(StopKind.TMAX_ONLY)
        kind_text, sep, tol_text = text.partition(":")
        try:
            kind = StopKind(kind_text)
        except ValueError:
            raise ConfigError(f"Unknown stopping rule {text!r}")
        if kind is StopKind.TMAX_ONLY or not sep:
            raise ConfigError(f"Stopping rule {text!r} must have the form <kind>:<tol>")
        try:
            tol = float(tol_text)
        except ValueError:
            raise ConfigError(f"Stopping rule tolerance must be a number, got {tol_text!r}")
        if not (math.isfinite(tol) and tol >= 0.0):
            raise ConfigError(f"Stopping rule tolerance must be non-negative, got {tol_text!r}")
        return cls(kind, tol)

    @property
    def needs_reference(self) -> bool:
        return self.kind in (StopKind.KL_TO_REF, StopKind.L1_TO_REF)

    def __str__(self) -> str:
        if self.kind is StopKind.TMAX_ONLY:
            return self.kind.value
        return f"{self.kind.value}:{self.tol!r}"


@dataclass(frozen=True)
class DynamicsState:
    """
    Iterate of a run.

    Attributes:
        current: Profile (x^t, y^t).
        previous: Profile (x^{t-1}, y^{t-1}); equal to `current` at t = 0.
        intermediate: IBR output (x̂^t, ŷ^t) that produced `current`; None for
            MWU, OMWU and at t = 0.
        step: Number of updates performed, t.
    """

    current: StrategyProfile
    previous: StrategyProfile
    intermediate: StrategyProfile | None = None
    step: int = 0

    @classmethod
    def start(cls, profile: StrategyProfile) -> "DynamicsState":
        return cls(current=profile, previous=profile)


@dataclass(frozen=True)
class ProfileSnapshot:
    """Profile and IBR output at one recorded step."""

    step: int
    profile: StrategyProfile
    intermediate: StrategyProfile | None


@dataclass(frozen=True)
class RunResult:
    """Terminal statistics and thinned trajectory of one run."""

    profile: StrategyProfile
    steps: int
    stop_reason: StopReason
    records: tuple[TrajectoryRecord, ...]
    state: DynamicsState
    snapshots: tuple[ProfileSnapshot, ...] = field(default=())

    @property
    def converged(self) -> bool:
        return self.stop_reason is StopReason.CRITERION


def _reweigh(log_p: np.ndarray, gain: np.ndarray, rate: float) -> np.ndarray:
    """Normalised log of p_i·exp(rate·gain_i), floored at LOG_FLOOR."""
    z = log_p + rate * gain
    top = z.max()
    if not math.isfinite(top):
        raise NumericsError(f"Reweighing produced a non-finite exponent (rate={rate!r})")
    # Shift before taking the log-sum so the result is normalised to O(ulp(1)), not O(ulp(top)).
    z -= top
    z -= math.log(np.exp(z).sum())
    return np.maximum(z, LOG_FLOOR, out=z)


def softmax_reweigh(strategy: MixedStrategy, gain: np.ndarray, rate: float) -> MixedStrategy:
    """
    Exponential reweighing s_i·e^{rate·gain_i} / Σ_l s_l·e^{rate·gain_l}.

    Computed in log space with max-subtraction, so rates in the hundreds do
    not overflow.

    Args:
        strategy: Strategy to reweigh.
        gain: Per-coordinate gain, same dimension as the strategy.
        rate: Finite rate; positive rewards high gains, negative rewards low gains.

    Raises:
        DimensionError: If gain has the wrong dimension.
        NumericsError: If gain or rate is not finite.
    """
    gain = np.asarray(gain, dtype=float)
    if gain.shape != (strategy.dim,):
        raise DimensionError(f"Gain has shape {gain.shape}, expected ({strategy.dim},)")
    if not np.all(np.isfinite(gain)):
        raise NumericsError("Gain vector holds non-finite values")
    if not math.isfinite(rate):
        raise NumericsError(f"Rate must be finite, got {rate!r}")
    return MixedStrategy(_reweigh(strategy.log_weights, gain, rate))


def _require(cfg: DynamicsConfig, *algorithms: Algorithm) -> None:
    if cfg.algorithm not in algorithms:
        raise ConfigError(
            f"Step requires algorithm {' or '.join(a.value for a in algorithms)}, "
            f"config has {cfg.algorithm.value}",
        )


def _check_gain(gain: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(gain)):
        raise NumericsError("Payoff vector holds non-finite values")
    return gain


def mwu_step(game: PayoffMatrix, state: DynamicsState, cfg: DynamicsConfig) -> DynamicsState:
    """x ← x·e^{η Ry}, y ← y·e^{−η R^T x}, both against the pre-step profile."""
    _require(cfg, Algorithm.MWU)
    state.current.check_against(game)
    R = game.entries
    x, y = state.current.x, state.current.y
    px, py = x.probabilities(), y.probabilities()
    new_x = MixedStrategy(_reweigh(x.log_weights, _check_gain(R @ py), cfg.eta))
    new_y = MixedStrategy(_reweigh(y.log_weights, _check_gain(R.T @ px), -cfg.eta))
    return DynamicsState(
        current=StrategyProfile(new_x, new_y),
        previous=state.current,
        step=state.step + 1,
    )


def omwu_step(game: PayoffMatrix, state: DynamicsState, cfg: DynamicsConfig) -> DynamicsState:
    """
    Optimistic MWU: exponent 2η·e_i^T R y^{t-1} − η·e_i^T R y^{t-2} (mirrored for y).

    With `previous` equal to `current` (t = 0) the step coincides with MWU.
    """
    _require(cfg, Algorithm.OMWU)
    state.current.check_against(game)
    state.previous.check_against(game)
    R = game.entries
    x, y = state.current.x, state.current.y
    px, py = x.probabilities(), y.probabilities()
    prev_px, prev_py = state.previous.probabilities()
    gain_x = _check_gain(2.0 * (R @ py) - R @ prev_py)
    gain_y = _check_gain(2.0 * (R.T @ px) - R.T @ prev_px)
    return DynamicsState(
        current=StrategyProfile(
            MixedStrategy(_reweigh(x.log_weights, gain_x, cfg.eta)),
            MixedStrategy(_reweigh(y.log_weights, gain_y, -cfg.eta)),
        ),
        previous=state.current,
        step=state.step + 1,
    )


def ibr_step(game: PayoffMatrix, profile: StrategyProfile, xi: float) -> StrategyProfile:
    """
    Intermediate best response: x̂ ∝ x·e^{ξ Ry}, ŷ ∝ y·e^{−ξ R^T x}.

    As ξ grows, x̂ concentrates on the pure best responses to y (and ŷ on
    those to x).
    """
    if not (math.isfinite(xi) and xi >= 0.0):
        raise ConfigError(f"xi must be finite and non-negative, got {xi!r}")
    profile.check_against(game)
    R = game.entries
    px, py = profile.probabilities()
    return StrategyProfile(
        MixedStrategy(_reweigh(profile.x.log_weights, _check_gain(R @ py), xi)),
        MixedStrategy(_reweigh(profile.y.log_weights, _check_gain(R.T @ px), -xi)),
    )


def _extragradient_step(
        game: PayoffMatrix,
        state: DynamicsState,
        eta: float,
        xi: float,
    ) -> DynamicsState:
    intermediate = ibr_step(game, state.current, xi)
    R = game.entries
    hat_px, hat_py = intermediate.probabilities()
    x, y = state.current.x, state.current.y
    return DynamicsState(
        current=StrategyProfile(
            MixedStrategy(_reweigh(x.log_weights, _check_gain(R @ hat_py), eta)),
            MixedStrategy(_reweigh(y.log_weights, _check_gain(R.T @ hat_px), -eta)),
        ),
        previous=state.current,
        intermediate=intermediate,
        step=state.step + 1,
    )


def flbr_step(game: PayoffMatrix, state: DynamicsState, cfg: DynamicsConfig) -> DynamicsState:
    """
    One FLBR-MWU iteration: IBR at rate ξ, then MWU at rate η against the IBR opponent.

    x^t ∝ x^{t-1}·e^{η R ŷ^t} and y^t ∝ y^{t-1}·e^{−η R^T x̂^t}.
    """
    _require(cfg, Algorithm.FLBR, Algorithm.OMD)
    return _extragradient_step(game, state, cfg.eta, cfg.xi)


def omd_step(game: PayoffMatrix, state: DynamicsState, cfg: DynamicsConfig) -> DynamicsState:
    """Entropic optimistic mirror descent: `flbr_step` with ξ := η."""
    _require(cfg, Algorithm.FLBR, Algorithm.OMD)
    return _extragradient_step(game, state, cfg.eta, cfg.eta)


_STEPS = {
    Algorithm.MWU: mwu_step,
    Algorithm.OMWU: omwu_step,
    Algorithm.FLBR: flbr_step,
    Algorithm.OMD: omd_step,
}


def advance(game: PayoffMatrix, state: DynamicsState, cfg: DynamicsConfig) -> DynamicsState:
    """Apply the step function of `cfg.algorithm`."""
    return _STEPS[cfg.algorithm](game, state, cfg)


def initial_profile(game: PayoffMatrix, cfg: DynamicsConfig) -> StrategyProfile:
    """Uniform profile, or a fully-mixed Dirichlet(1) draw when cfg.init is "random"."""
    if cfg.init == "uniform":
        return StrategyProfile.uniform(game.n, game.m)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    return StrategyProfile.from_probabilities(
        rng.dirichlet(np.ones(game.n)),
        rng.dirichlet(np.ones(game.m)),
    )


class _Iterate:
    """
    Array form of a run's iterate; the hot loop of `run` works on this.

    Log-probabilities are kept normalised, so probabilities are a plain exp
    and the KL terms need no log-sum-exp. The payoff vectors Ry and R^T x
    of the current profile are cached.
    """

    def __init__(self, game: PayoffMatrix, profile: StrategyProfile):
        self.R = game.entries
        self.lx = log_normalize(profile.x.log_weights)
        self.ly = log_normalize(profile.y.log_weights)
        self.px, self.py = np.exp(self.lx), np.exp(self.ly)
        self.ry, self.cx = self.R @ self.py, self.R.T @ self.px
        self.prev_lx, self.prev_ly = self.lx, self.ly
        self.prev_ry, self.prev_cx = self.ry, self.cx
        self.hat_lx: np.ndarray | None = None
        self.hat_ly: np.ndarray | None = None

    def step(self, algorithm: Algorithm, eta: float, xi: float) -> None:
        R = self.R
        if algorithm is Algorithm.MWU:
            gain_x, gain_y = self.ry, self.cx
        elif algorithm is Algorithm.OMWU:
            gain_x, gain_y = 2.0 * self.ry - self.prev_ry, 2.0 * self.cx - self.prev_cx
        else:
            if algorithm is Algorithm.OMD:
                xi = eta
            self.hat_lx = _reweigh(self.lx, self.ry, xi)
            self.hat_ly = _reweigh(self.ly, self.cx, -xi)
            gain_x, gain_y = R @ np.exp(self.hat_ly), R.T @ np.exp(self.hat_lx)
        lx = _reweigh(self.lx, gain_x, eta)
        ly = _reweigh(self.ly, gain_y, -eta)
        self.prev_lx, self.prev_ly = self.lx, self.ly
        self.prev_ry, self.prev_cx = self.ry, self.cx
        self.lx, self.ly = lx, ly
        self.px, self.py = np.exp(lx), np.exp(ly)
        self.ry, self.cx = R @ self.py, R.T @ self.px

    def criterion(self) -> float | None:
        if self.hat_lx is None:
            return None
        kl = self.px @ (self.lx - self.hat_lx) + self.py @ (self.ly - self.hat_ly)
        return max(0.0, float(kl))

    def eps_nash(self) -> float:
        value = float(self.px @ self.ry)
        return max(0.0, float(self.ry.max()) - value, value - float(self.cx.min()))

    def game_value(self) -> float:
        return float(self.px @ self.ry)

    def profile(self) -> StrategyProfile:
        return StrategyProfile(MixedStrategy(self.lx), MixedStrategy(self.ly))

    def previous(self) -> StrategyProfile:
        return StrategyProfile(MixedStrategy(self.prev_lx), MixedStrategy(self.prev_ly))

    def intermediate(self) -> StrategyProfile | None:
        if self.hat_lx is None:
            return None
        return StrategyProfile(MixedStrategy(self.hat_lx), MixedStrategy(self.hat_ly))


class _Reference:
    def __init__(self, profile: StrategyProfile):
        self.lx, self.ly = profile.x.log_probabilities(), profile.y.log_probabilities()
        self.px, self.py = profile.probabilities()
        # 0·ln 0 := 0
        self.wx = np.where(self.px < KL_NEGLIGIBLE, 0.0, self.px)
        self.wy = np.where(self.py < KL_NEGLIGIBLE, 0.0, self.py)

    def kl(self, it: _Iterate) -> float:
        return max(0.0, float(self.wx @ (self.lx - it.lx) + self.wy @ (self.ly - it.ly)))

    def l1(self, it: _Iterate) -> float:
        return float(np.abs(self.px - it.px).sum() + np.abs(self.py - it.py).sum())


def _stop_value(rule: StoppingRule, it: _Iterate, reference: _Reference | None) -> float | None:
    match rule.kind:
        case StopKind.CRITERION_KL:
            return it.criterion()
        case StopKind.KL_TO_REF:
            return reference.kl(it)
        case StopKind.L1_TO_REF:
            return reference.l1(it)
        case StopKind.EPS_NASH:
            return it.eps_nash()
    return None


def _record(step: int, it: _Iterate, reference: _Reference | None) -> TrajectoryRecord:
    return TrajectoryRecord(
        step=step,
        eps_nash=it.eps_nash(),
        game_value=it.game_value(),
        kl_to_ref=None if reference is None else reference.kl(it),
        l1_to_ref=None if reference is None else reference.l1(it),
        criterion_kl=it.criterion(),
    )


def run(
        game: PayoffMatrix,
        cfg: DynamicsConfig,
        stop: StoppingRule | str,
        reference: StrategyProfile | None = None,
        initial: StrategyProfile | None = None,
        record_profiles: bool = False,
    ) -> RunResult:
    """
    Iterate the configured dynamics until `stop` fires or cfg.t_max steps are done.

    The stopping rule is checked after every step, so the earliest possible
    stop is step 1. Records are kept at step 0, every cfg.record_every steps
    and at the final step.

    Args:
        game: The payoff matrix.
        cfg: Algorithm and constants.
        stop: Stopping rule or its string encoding.
        reference: Profile for kl_to_ref / l1_to_ref rules and metrics,
            usually the equilibrium.
        initial: Fully-mixed starting profile; defaults to `initial_profile`.
        record_profiles: Also keep a ProfileSnapshot at every record.

    Returns:
        A RunResult. Numerics failures end the run with stop reason
        NUMERICS_ERROR instead of raising.

    Raises:
        ConfigError: If the rule needs a reference that is missing, or
            criterion_kl is used with MWU/OMWU, or per-step recording is
            requested for a game larger than FULL_RECORDING_MAX_DIM.
        DimensionError: If `initial` or `reference` does not fit the game.
    """
    if isinstance(stop, str):
        stop = StoppingRule.parse(stop)
    if stop.needs_reference and reference is None:
        raise ConfigError(f"Stopping rule {stop} requires a reference profile")
    if stop.kind is StopKind.CRITERION_KL and not cfg.algorithm.uses_intermediate:
        raise ConfigError(f"Stopping rule {stop} is only defined for FLBR and OMD")
    if cfg.record_every == 1 and max(game.n, game.m) > FULL_RECORDING_MAX_DIM:
        raise ConfigError(
            f"Per-step recording is limited to games with at most {FULL_RECORDING_MAX_DIM} "
            f"strategies per player, got {game.n}x{game.m}",
        )
    if reference is not None:
        reference.check_against(game)
    if initial is None:
        initial = initial_profile(game, cfg)
    initial.check_against(game)

    it = _Iterate(game, initial)
    ref = None if reference is None else _Reference(reference)
    records = [_record(0, it, ref)]
    snapshots = [ProfileSnapshot(0, it.profile(), None)] if record_profiles else []
    reason = StopReason.TMAX
    step = 0
    for t in range(1, cfg.t_max + 1):
        try:
            it.step(cfg.algorithm, cfg.eta, cfg.xi)
        except NumericsError as e:
            logger.warning("Run stopped by numerics failure at step %d: %s", t, e)
            reason = StopReason.NUMERICS_ERROR
            break
        step = t
        value = _stop_value(stop, it, ref)
        fired = value is not None and value <= stop.tol
        if fired or t % cfg.record_every == 0 or t == cfg.t_max:
            records.append(_record(t, it, ref))
            if record_profiles:
                snapshots.append(ProfileSnapshot(t, it.profile(), it.intermediate()))
        if fired:
            reason = StopReason.CRITERION
            break

    if reason is StopReason.NUMERICS_ERROR and records[-1].step != step:
        records.append(_record(step, it, ref))
        if record_profiles:
            snapshots.append(ProfileSnapshot(step, it.profile(), it.intermediate()))
    logger.debug("%s run ended after %d steps: %s", cfg.algorithm.value, step, reason.value)
    state = DynamicsState(
        current=it.profile(),
        previous=it.previous() if step > 0 else it.profile(),
        intermediate=it.intermediate(),
        step=step,
    )
    return RunResult(
        profile=state.current,
        steps=step,
        stop_reason=reason,
        records=tuple(records),
        state=state,
        snapshots=tuple(snapshots),
    )
