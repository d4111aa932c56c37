"""
Seeded random games, batch execution over parameter grids, and step statistics.

Every random draw is reproducible from a `BatchSpec`: instance and run seeds
are derived by hashing their coordinates in the grid, so results do not
depend on execution order or on the number of worker processes.
"""
import csv
import hashlib
import logging
import math
import os
import sys
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from tqdm import tqdm

from zsd.dynamics import (
    MAX_SEED,
    Algorithm,
    DynamicsConfig,
    RunResult,
    StopKind,
    StoppingRule,
    StopReason,
    run,
)
from zsd.equilibrium import (
    SUPPORT_ENUM_MAX_DIM,
    EquilibriumResult,
    estimate_nash,
    solve_support_enum,
)
from zsd.errors import (
    ConfigError,
    DiscardedError,
    InputError,
    NoSolutionError,
    NumericsError,
    ZsdError,
)
from zsd.game import PayoffMatrix, StrategyProfile
from zsd.metrics import format_float, write_trajectory_csv

logger = logging.getLogger(__name__)

BATCH_HEADER = (
    "n", "algorithm", "eta", "xi", "reps",
    "mean_steps", "median_steps", "q75", "q90", "q975", "tmax_hit_rate",
)
RUNS_HEADER = ("n", "algorithm", "eta", "xi", "rep", "seed", "steps", "stop_reason")
COORDS_HEADER = ("step", "player", "coord", "prob", "ibr_prob")
# Uniform draws of exactly zero are replaced by this to stay inside (0, 1].
ZERO_DRAW = 1e-12
# Regeneration attempts per instance before the batch gives up.
MAX_INSTANCE_ATTEMPTS = 100
THREADS_ENV = "ZSD_THREADS"


class ReferenceMethod(str, Enum):
    ESTIMATOR = "estimator"
    SUPPORT_ENUM = "support_enum"


def _as_tuple(values, what: str) -> tuple:
    if isinstance(values, (str, bytes)) or not isinstance(values, Sequence):
        values = (values,)
    values = tuple(values)
    if not values:
        raise ConfigError(f"{what} must be a non-empty list")
    return values


@dataclass(frozen=True)
class Cell:
    """One (size, algorithm, eta, xi) combination; xi is None for MWU and OMWU."""

    n: int
    algorithm: Algorithm
    eta: float
    xi: float | None


@dataclass(frozen=True)
class BatchSpec:
    """
    A grid of experiments: every size × algorithm × eta × xi cell runs `reps` games.

    xi only varies FLBR cells; MWU and OMWU ignore it and OMD uses xi = eta,
    so duplicate cells are dropped.
    """

    sizes: tuple[int, ...] = (5, 10, 20)
    algorithms: tuple[Algorithm, ...] = (Algorithm.FLBR,)
    etas: tuple[float, ...] = (0.1,)
    xis: tuple[float, ...] = (100.0,)
    reps: int = 100
    base_seed: int = 0
    t_max: int = 2_000_000
    stop: str = "kl_to_ref:1e-10"
    reference: ReferenceMethod = ReferenceMethod.ESTIMATOR

    def __post_init__(self):
        sizes = _as_tuple(self.sizes, "sizes")
        for size in sizes:
            if isinstance(size, bool) or not isinstance(size, (int, np.integer)) or size < 1:
                raise ConfigError(f"sizes must hold positive integers, got {size!r}")
        object.__setattr__(self, "sizes", tuple(int(s) for s in sizes))

        algorithms = []
        for algorithm in _as_tuple(self.algorithms, "algorithms"):
            try:
                algorithms.append(Algorithm(str(getattr(algorithm, "value", algorithm)).lower()))
            except ValueError:
                raise ConfigError(f"Unknown algorithm {algorithm!r}")
        object.__setattr__(self, "algorithms", tuple(algorithms))

        etas = tuple(float(e) for e in _as_tuple(self.etas, "etas"))
        if not all(0.0 < e < 1.0 for e in etas):
            raise ConfigError(f"etas must lie in (0, 1), got {list(etas)}")
        object.__setattr__(self, "etas", etas)
        xis = tuple(float(x) for x in _as_tuple(self.xis, "xis"))
        if not all(math.isfinite(x) and x >= 0.0 for x in xis):
            raise ConfigError(f"xis must be finite and non-negative, got {list(xis)}")
        object.__setattr__(self, "xis", xis)

        if int(self.reps) != self.reps or self.reps < 1:
            raise ConfigError(f"reps must be a positive integer, got {self.reps!r}")
        if int(self.t_max) != self.t_max or self.t_max < 1:
            raise ConfigError(f"t_max must be a positive integer, got {self.t_max!r}")
        if int(self.base_seed) != self.base_seed or not 0 <= self.base_seed <= MAX_SEED:
            raise ConfigError(f"base_seed must be an unsigned 64-bit integer, got {self.base_seed!r}")  # noqa: E501
        object.__setattr__(self, "reps", int(self.reps))
        object.__setattr__(self, "t_max", int(self.t_max))
        object.__setattr__(self, "base_seed", int(self.base_seed))

        rule = StoppingRule.parse(str(self.stop))
        object.__setattr__(self, "stop", str(rule))
        if rule.kind is StopKind.CRITERION_KL:
            plain = [a.value for a in self.algorithms if not a.uses_intermediate]
            if plain:
                raise ConfigError(f"Stopping rule {rule} is not defined for {', '.join(plain)}")
        try:
            reference = ReferenceMethod(str(getattr(self.reference, "value", self.reference)).lower())  # noqa: E501
        except ValueError:
            raise ConfigError(
                f"reference must be 'estimator' or 'support_enum', got {self.reference!r}",
            )
        object.__setattr__(self, "reference", reference)
        if (
            rule.needs_reference
            and reference is ReferenceMethod.SUPPORT_ENUM
            and max(self.sizes) > SUPPORT_ENUM_MAX_DIM
        ):
            raise ConfigError(
                f"reference support_enum handles sizes up to {SUPPORT_ENUM_MAX_DIM}, "
                f"got {max(self.sizes)}",
            )

    @property
    def stopping_rule(self) -> StoppingRule:
        return StoppingRule.parse(self.stop)

    def cells(self) -> list[Cell]:
        """Distinct cells in grid order: sizes, then algorithms, then etas, then xis."""
        seen: dict[Cell, None] = {}
        for n in self.sizes:
            for algorithm in self.algorithms:
                for eta in self.etas:
                    for xi in self.xis:
                        if algorithm in (Algorithm.MWU, Algorithm.OMWU):
                            cell_xi = None
                        elif algorithm is Algorithm.OMD:
                            cell_xi = eta
                        else:
                            cell_xi = xi
                        seen.setdefault(Cell(n, algorithm, eta, cell_xi))
        return list(seen)


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one run of a batch."""

    n: int
    algorithm: Algorithm
    eta: float
    xi: float | None
    rep: int
    seed: int
    steps: int
    stop_reason: StopReason

    @property
    def cell(self) -> Cell:
        return Cell(self.n, self.algorithm, self.eta, self.xi)

    def as_row(self) -> list[str]:
        return [
            str(self.n),
            self.algorithm.value,
            format_float(self.eta),
            format_float(self.xi),
            str(self.rep),
            str(self.seed),
            str(self.steps),
            self.stop_reason.value,
        ]


@dataclass(frozen=True)
class RunStatistics:
    """
    Step-count statistics of one cell.

    Runs that did not fire their stopping rule count as t_max steps.
    """

    mean: float
    median: float
    q75: float
    q90: float
    q975: float
    tmax_hit_rate: float
    count: int

    @classmethod
    def from_runs(cls, runs: Sequence[RunRecord], t_max: int) -> "RunStatistics":
        if not runs:
            raise ConfigError("Cannot compute statistics of an empty sample")
        hits = [r.stop_reason is not StopReason.CRITERION for r in runs]
        steps = np.sort(np.array(
            [t_max if hit else r.steps for r, hit in zip(runs, hits)],
            dtype=float,
        ))
        median, q75, q90, q975 = np.quantile(steps, [0.5, 0.75, 0.9, 0.975])
        return cls(
            mean=float(steps.mean()),
            median=float(median),
            q75=float(q75),
            q90=float(q90),
            q975=float(q975),
            tmax_hit_rate=sum(hits) / len(runs),
            count=len(runs),
        )


@dataclass(frozen=True)
class BatchResult:
    """Per-cell statistics in grid order, plus every run sorted by cell and rep."""

    spec: BatchSpec
    cells: list[tuple[Cell, RunStatistics]]
    runs: list[RunRecord] = field(default_factory=list)


def derive_seed(*parts: object) -> int:
    """
    64-bit seed from a tuple of grid coordinates.

    The parts are joined as text ("|"-separated, floats in repr form, enums by
    value, None as empty) and hashed with BLAKE2b; the first 8 digest bytes
    are read little-endian.
    """
    fields = []
    for part in parts:
        if part is None:
            fields.append("")
        elif isinstance(part, Enum):
            fields.append(str(part.value))
        elif isinstance(part, float):
            fields.append(repr(part))
        else:
            fields.append(str(part))
    digest = hashlib.blake2b("|".join(fields).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def random_game(n: int, m: int, seed: int) -> PayoffMatrix:
    """An n×m game with iid U(0, 1] entries drawn from PCG64(seed)."""
    if n < 1 or m < 1:
        raise ConfigError(f"Game dimensions must be positive, got {n}x{m}")
    rng = np.random.Generator(np.random.PCG64(seed))
    entries = rng.random((n, m))
    entries[entries == 0.0] = ZERO_DRAW
    return PayoffMatrix(entries)


def _reference(game: PayoffMatrix, method: ReferenceMethod) -> EquilibriumResult:
    if method is ReferenceMethod.SUPPORT_ENUM:
        return solve_support_enum(game)
    return estimate_nash(game)


def batch_instance(spec: BatchSpec, n: int, rep: int) -> tuple[PayoffMatrix, StrategyProfile | None]:  # noqa: E501
    """
    Game (and reference profile, if the stopping rule needs one) of repetition `rep` at size n.

    The game seed depends on (base_seed, n, rep, attempt) only, so all cells
    of a batch see the same games. A game whose reference cannot be computed
    is regenerated with the next attempt number.

    Raises:
        DiscardedError: If MAX_INSTANCE_ATTEMPTS games in a row have no usable reference.
    """
    needs_reference = spec.stopping_rule.needs_reference
    for attempt in range(MAX_INSTANCE_ATTEMPTS):
        seed = derive_seed("instance", spec.base_seed, n, rep, attempt)
        game = random_game(n, n, seed)
        if not needs_reference:
            return game, None
        try:
            return game, _reference(game, spec.reference).profile
        except (DiscardedError, NoSolutionError, NumericsError) as e:
            logger.warning("Regenerating instance n=%d rep=%d (attempt %d): %s", n, rep, attempt, e)
    raise DiscardedError(
        f"No usable instance for n={n}, rep={rep} after {MAX_INSTANCE_ATTEMPTS} attempts",
        steps=0,
    )


def _run_instance(spec: BatchSpec, n: int, rep: int) -> list[RunRecord]:
    try:
        game, reference = batch_instance(spec, n, rep)
    except InputError:
        raise
    except ZsdError as e:
        # Every run of a lost instance counts as a t_max hit.
        logger.warning("Recording n=%d rep=%d as failed: %s", n, rep, e)
        game = None
    stop = spec.stopping_rule
    records = []
    for cell in spec.cells():
        if cell.n != n:
            continue
        seed = derive_seed("run", spec.base_seed, n, cell.algorithm, cell.eta, cell.xi, rep)
        if game is None:
            records.append(RunRecord(
                n=n,
                algorithm=cell.algorithm,
                eta=cell.eta,
                xi=cell.xi,
                rep=rep,
                seed=seed,
                steps=0,
                stop_reason=StopReason.NUMERICS_ERROR,
            ))
            continue
        cfg = DynamicsConfig(
            algorithm=cell.algorithm,
            eta=cell.eta,
            xi=cell.xi,
            t_max=spec.t_max,
            record_every=spec.t_max,
            seed=seed,
        )
        result = run(game, cfg, stop, reference=reference)
        records.append(RunRecord(
            n=n,
            algorithm=cell.algorithm,
            eta=cell.eta,
            xi=cell.xi,
            rep=rep,
            seed=seed,
            steps=result.steps,
            stop_reason=result.stop_reason,
        ))
    return records


def resolve_threads(threads: int | None = None) -> int:
    """Worker count: `threads`, else ZSD_THREADS, else the number of logical cores."""
    if threads is None:
        env = os.getenv(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
        else:
            threads = os.cpu_count() or 1
    if threads < 1:
        raise ConfigError(f"Thread count must be positive, got {threads}")
    return threads


def run_batch(spec: BatchSpec, threads: int | None = None, progress: bool = False) -> BatchResult:
    """
    Run every cell of `spec` and aggregate step statistics.

    Work is split into one task per (size, rep) so each random game and its
    reference equilibrium are computed once for all cells. With more than one
    thread, tasks run in a process pool.

    Args:
        spec: The experiment grid.
        threads: Worker processes; see `resolve_threads`.
        progress: Show a tqdm progress bar on stderr.
    """
    threads = resolve_threads(threads)
    tasks = [(n, rep) for n in spec.sizes for rep in range(spec.reps)]
    runs: list[RunRecord] = []
    with tqdm(total=len(tasks), desc="batch", unit="game", file=sys.stderr, disable=not progress) as bar:  # noqa: E501
        if threads == 1:
            for n, rep in tasks:
                runs.extend(_run_instance(spec, n, rep))
                bar.update()
        else:
            with ProcessPoolExecutor(max_workers=threads) as executor:
                futures = [executor.submit(_run_instance, spec, n, rep) for n, rep in tasks]
                for future in as_completed(futures):
                    runs.extend(future.result())
                    bar.update()

    cells = spec.cells()
    order = {cell: index for index, cell in enumerate(cells)}
    runs.sort(key=lambda r: (order[r.cell], r.rep))
    by_cell: dict[Cell, list[RunRecord]] = {cell: [] for cell in cells}
    for record in runs:
        by_cell[record.cell].append(record)
    rows = []
    for cell in cells:
        stats = RunStatistics.from_runs(by_cell[cell], spec.t_max)
        logger.info(
            "Cell n=%d %s eta=%r xi=%r: median %r steps, t_max hit rate %r",
            cell.n, cell.algorithm.value, cell.eta, cell.xi, stats.median, stats.tmax_hit_rate,
        )
        rows.append((cell, stats))
    return BatchResult(spec=spec, cells=rows, runs=runs)


def _open_csv(path: str | Path):
    return open(path, "w", newline="")


def write_batch_csv(result: BatchResult, path: str | Path) -> None:
    """One row per cell with the BATCH_HEADER columns."""
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(BATCH_HEADER)
        for cell, stats in result.cells:
            writer.writerow([
                str(cell.n),
                cell.algorithm.value,
                format_float(cell.eta),
                format_float(cell.xi),
                str(stats.count),
                format_float(stats.mean),
                format_float(stats.median),
                format_float(stats.q75),
                format_float(stats.q90),
                format_float(stats.q975),
                format_float(stats.tmax_hit_rate),
            ])


def write_runs_csv(result: BatchResult, path: str | Path) -> None:
    """One row per run with the RUNS_HEADER columns."""
    with _open_csv(path) as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RUNS_HEADER)
        for record in result.runs:
            writer.writerow(record.as_row())


def trajectory_dump(
        game: PayoffMatrix,
        cfg: DynamicsConfig,
        stop: StoppingRule | str,
        path: str | Path,
        reference: StrategyProfile | None = None,
        initial: StrategyProfile | None = None,
    ) -> RunResult:
    """
    Run the dynamics and write plot-ready CSV files into the directory `path`.

    `coords.csv` holds one row per recorded step, player ("x" or "y") and
    coordinate, with the update probability and the IBR probability (empty
    for MWU and OMWU and at step 0). `metrics.csv` holds the trajectory
    records.

    Returns:
        The RunResult of the underlying run.
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    result = run(game, cfg, stop, reference=reference, initial=initial, record_profiles=True)
    with _open_csv(out / "coords.csv") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(COORDS_HEADER)
        for snapshot in result.snapshots:
            probs = snapshot.profile.probabilities()
            ibr = None if snapshot.intermediate is None else snapshot.intermediate.probabilities()
            for player, index in (("x", 0), ("y", 1)):
                for coord, prob in enumerate(probs[index]):
                    ibr_prob = None if ibr is None else ibr[index][coord]
                    writer.writerow([
                        str(snapshot.step), player, str(coord),
                        format_float(prob), format_float(ibr_prob),
                    ])
    write_trajectory_csv(result.records, out / "metrics.csv")
    logger.debug("Wrote trajectory of %d records to %s", len(result.records), out)
    return result
