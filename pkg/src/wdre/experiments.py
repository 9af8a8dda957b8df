"""Monte-Carlo success-probability harness over (method, m, n, eps) grids.

A grid cell fixes (scenario, method, dimension m, per-side inlier count
n_star, contamination pair, coefficient magnitude). Each repetition draws a
fresh precision pair and support, samples and contaminates both sides, fits
with the scheduled penalty, and scores exact support recovery.

Reproducibility contract: every repetition's generator is seeded by a hash
of (master_seed, data cell, repetition index), so results are identical
whatever the execution order or worker count, and both methods of a matched
cell see byte-identical datasets. Timing is kept out of the result CSV by
default for the same reason; enable `timing` to record wall seconds instead
of the deterministic 0.0 placeholder.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
import multiprocessing
import time
from dataclasses import dataclass, field

import numpy as np

from .datagen import ContaminationSpec, GaussianSpec, contaminate, make_sparse_difference, outlier_count, sample_gaussian
from .diagnostics import support_metrics
from .features import CONVENTIONS, FeatureMap, feature_dim, theta_from_matrix
from .model import ObjectiveSpec
from .optim import SolverConfig, fit, lambda_schedule
from .weights import WeightConfig

__all__ = [
    "ExperimentConfig",
    "CellKey",
    "CellResult",
    "RepOutcome",
    "GridResult",
    "cells_of",
    "rep_seed",
    "run_rep",
    "run_cell",
    "run_grid",
    "betamin_check",
    "results_csv_text",
    "CSV_HEADER",
]

SCENARIOS = ("robustness", "unboundedness")
METHOD_NAMES = ("dre", "wdre")

CSV_HEADER = (
    "scenario,method,m,d,n_star,eps,lambda0,lambda,repetitions,"
    "success_rate,signed_success_rate,mean_l2,median_l2,n_converged,wall_s"
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full description of one Monte-Carlo grid.

    eps_p and eps_q are parallel lists of contamination levels; entry i of
    each forms one contamination cell. The `unboundedness` scenario expands
    into bounded / unbounded sub-scenarios with signed magnitudes
    -|magnitude| and +|magnitude|.
    """

    scenario: str
    methods: tuple[str, ...]
    dims: tuple[int, ...]
    n_grid: tuple[int, ...]
    k: int
    magnitude: float
    lambda0: float
    repetitions: int
    master_seed: int
    eps_p: tuple[float, ...] = (0.0,)
    eps_q: tuple[float, ...] = (0.0,)
    outlier_loc: float = 100.0
    outlier_scale: float = 1.0
    weight: WeightConfig = field(default_factory=WeightConfig)
    convention: str = "direct"
    round_contamination: bool = False
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(lam=0.0))

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}, expected one of {SCENARIOS}")
        if not self.methods or any(mth not in METHOD_NAMES for mth in self.methods):
            raise ValueError(f"methods must be a non-empty subset of {METHOD_NAMES}")
        if len(set(self.methods)) != len(self.methods):
            raise ValueError("methods must not repeat")
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be at least 1")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")
        if len(self.eps_p) != len(self.eps_q):
            raise ValueError("eps_p and eps_q must have equal length")
        if not self.dims or not all(int(m) == m and m >= 1 for m in self.dims):
            raise ValueError("dims must be positive integers")
        if any(int(n) != n or n < 1 for n in self.n_grid):
            raise ValueError("n_grid entries must be positive integers")
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be positive")
        if not self.outlier_scale > 0:
            raise ValueError("outlier_scale must be positive")

    def validate_cells(self) -> None:
        """Fail early on any cell whose contamination counts are non-integral."""
        if self.round_contamination:
            return
        for cell in cells_of(self):
            for side, eps in (("p", cell.eps_p), ("q", cell.eps_q)):
                try:
                    n_tot = _total_rows(cell.n_star, eps)
                    outlier_count(eps, n_tot)
                except ValueError as exc:
                    raise ValueError(f"cell {cell.label()} side {side}: {exc}") from None


@dataclass(frozen=True, order=True)
class CellKey:
    scenario: str
    method: str
    m: int
    n_star: int
    eps_p: float
    eps_q: float
    magnitude: float

    @property
    def eps(self) -> float:
        return max(self.eps_p, self.eps_q)

    def data_key(self) -> str:
        """Identity of the generated data; excludes the method on purpose so
        every method in a matched cell faces identical datasets."""
        return (
            f"{self.scenario}|m={self.m}|n={self.n_star}"
            f"|eps={self.eps_p!r},{self.eps_q!r}|mag={self.magnitude!r}"
        )

    def label(self) -> str:
        return f"{self.scenario}/{self.method} m={self.m} n*={self.n_star} eps={self.eps:g}"


@dataclass(frozen=True)
class RepOutcome:
    exact: bool
    signed: bool
    l2: float
    converged: bool


@dataclass(frozen=True)
class CellResult:
    key: CellKey
    d: int
    lambda0: float
    lambda_used: float
    repetitions: int
    success_rate: float
    signed_success_rate: float
    mean_l2: float
    median_l2: float
    n_converged: int
    wall_s: float


@dataclass(frozen=True)
class GridResult:
    cells: tuple[CellResult, ...]
    failures: tuple[tuple[CellKey, str], ...]

    @property
    def complete(self) -> bool:
        return not self.failures


def _sub_scenarios(cfg: ExperimentConfig) -> list[tuple[str, float]]:
    if cfg.scenario == "robustness":
        return [("robustness", cfg.magnitude)]
    mag = abs(cfg.magnitude)
    return [("unboundedness-bounded", -mag), ("unboundedness-unbounded", mag)]


def cells_of(cfg: ExperimentConfig) -> list[CellKey]:
    """Cartesian product of the grid, in artifact (sorted) order."""
    cells = [
        CellKey(scen, method, int(m), int(n), float(ep), float(eq), mag)
        for scen, mag in _sub_scenarios(cfg)
        for method in cfg.methods
        for m in cfg.dims
        for n in cfg.n_grid
        for ep, eq in zip(cfg.eps_p, cfg.eps_q)
    ]
    return sorted(cells, key=lambda c: (c.scenario, c.method, c.m, c.n_star, c.eps))


def rep_seed(master_seed: int, cell: CellKey, rep: int) -> np.random.SeedSequence:
    """Stable per-repetition seed: hash of (master seed, data cell, rep)."""
    digest = hashlib.sha256(cell.data_key().encode("ascii")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence([int(master_seed), *words, int(rep)])


def _total_rows(n_star: int, eps: float) -> int:
    """Total rows so that (1 - eps) of them are inliers; must be integral."""
    total = n_star / (1.0 - eps)
    rounded = round(total)
    if abs(total - rounded) > 1e-9 * max(1.0, total):
        raise ValueError(
            f"n_star={n_star} with eps={eps!r} gives non-integral total {total}"
        )
    return int(rounded)


def _placement(scenario: str) -> str:
    return "off-diagonal-disjoint" if scenario == "robustness" else "diagonal"


def generate_rep_data(cfg: ExperimentConfig, cell: CellKey, rep: int):
    """Draw the repetition's design and contaminated datasets.

    Returns (x_p, x_q, support, theta_star). Identical across methods of a
    matched cell because the seed hash excludes the method.
    """
    rng = np.random.default_rng(rep_seed(cfg.master_seed, cell, rep))
    fmap = FeatureMap(cell.m)
    P_p, P_q, support = make_sparse_difference(
        cell.m, cfg.k, cell.magnitude, _placement(cell.scenario), rng
    )
    theta_star = theta_from_matrix(fmap, P_q - P_p, cfg.convention)
    cont = ContaminationSpec(
        cell.eps_p,
        cell.eps_q,
        outlier_mean=np.full(cell.m, cfg.outlier_loc),
        outlier_cov=cfg.outlier_scale**2 * np.eye(cell.m),
    )
    rounding = cfg.round_contamination
    if rounding:
        n_tot_p = round(cell.n_star / (1.0 - cell.eps_p))
        n_tot_q = round(cell.n_star / (1.0 - cell.eps_q))
    else:
        n_tot_p = _total_rows(cell.n_star, cell.eps_p)
        n_tot_q = _total_rows(cell.n_star, cell.eps_q)
    x_p = contaminate(
        sample_gaussian(GaussianSpec(cell.m, P_p), n_tot_p, rng), cont, "p", rng, rounding
    ).samples
    x_q = contaminate(
        sample_gaussian(GaussianSpec(cell.m, P_q), n_tot_q, rng), cont, "q", rng, rounding
    ).samples
    return x_p, x_q, support, theta_star


def run_rep(cfg: ExperimentConfig, cell: CellKey, rep: int) -> RepOutcome:
    """One repetition: generate, fit, score. Fit failure scores as non-recovery."""
    x_p, x_q, support, theta_star = generate_rep_data(cfg, cell, rep)
    fmap = theta_star.feature_map
    if cell.method == "wdre":
        spec = ObjectiveSpec.weighted(fmap, cfg.weight.resolve(cell.m))
    else:
        spec = ObjectiveSpec.conventional(fmap)
    lam = lambda_schedule(cfg.lambda0, fmap.d, cell.n_star)
    try:
        result = fit(spec, x_p, x_q, dataclasses.replace(cfg.solver, lam=lam))
    except ValueError:
        return RepOutcome(exact=False, signed=False, l2=math.nan, converged=False)
    sm = support_metrics(result.theta_hat, support, theta_star)
    return RepOutcome(
        exact=sm.exact_recovery,
        signed=bool(sm.signed_recovery),
        l2=sm.l2_error,
        converged=result.converged,
    )


def _aggregate(cfg: ExperimentConfig, cell: CellKey, outcomes: list[RepOutcome], wall: float) -> CellResult:
    reps = cfg.repetitions
    l2s = np.array([o.l2 for o in outcomes])
    with np.errstate(invalid="ignore"):
        mean_l2 = float(np.nanmean(l2s)) if np.isfinite(l2s).any() else math.nan
        median_l2 = float(np.nanmedian(l2s)) if np.isfinite(l2s).any() else math.nan
    return CellResult(
        key=cell,
        d=feature_dim(cell.m),
        lambda0=cfg.lambda0,
        lambda_used=lambda_schedule(cfg.lambda0, feature_dim(cell.m), cell.n_star),
        repetitions=reps,
        success_rate=sum(o.exact for o in outcomes) / reps,
        signed_success_rate=sum(o.signed for o in outcomes) / reps,
        mean_l2=mean_l2,
        median_l2=median_l2,
        n_converged=sum(o.converged for o in outcomes),
        wall_s=wall,
    )


def run_cell(cfg: ExperimentConfig, cell: CellKey) -> CellResult:
    """All repetitions of one cell, serially. Deterministic given the config."""
    start = time.perf_counter()
    outcomes = [run_rep(cfg, cell, rep) for rep in range(cfg.repetitions)]
    return _aggregate(cfg, cell, outcomes, time.perf_counter() - start)


_WORKER_STATE: dict = {}


def _init_worker(cfg: ExperimentConfig, cells: list[CellKey]) -> None:
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["cells"] = cells


def _run_task(task: tuple[int, int]):
    ci, rep = task
    cfg = _WORKER_STATE["cfg"]
    cell = _WORKER_STATE["cells"][ci]
    try:
        return ci, rep, run_rep(cfg, cell, rep), None
    except Exception as exc:  # cell-level failure, reported not raised
        return ci, rep, None, f"{type(exc).__name__}: {exc}"


def run_grid(
    cfg: ExperimentConfig,
    threads: int = 1,
    log=None,
    timing: bool = False,
) -> GridResult:
    """Run every cell of the grid, optionally across worker processes.

    Results are identical at any worker count: repetitions are seeded
    independently of schedule and aggregated in repetition order. Cells
    that fail are collected in `failures`; completed cells are returned
    regardless.
    """
    cfg.validate_cells()
    cells = cells_of(cfg)
    log = log or (lambda msg: None)
    outcomes: dict[int, dict[int, RepOutcome]] = {ci: {} for ci in range(len(cells))}
    errors: dict[int, str] = {}
    walls: dict[int, float] = {ci: 0.0 for ci in range(len(cells))}
    tasks = [(ci, rep) for ci in range(len(cells)) for rep in range(cfg.repetitions)]
    if threads <= 1:
        for ci, rep in tasks:
            start = time.perf_counter()
            try:
                outcomes[ci][rep] = run_rep(cfg, cells[ci], rep)
            except Exception as exc:
                errors.setdefault(ci, f"{type(exc).__name__}: {exc}")
            walls[ci] += time.perf_counter() - start
    else:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(threads, initializer=_init_worker, initargs=(cfg, cells)) as pool:
            start = time.perf_counter()
            for ci, rep, outcome, err in pool.imap_unordered(_run_task, tasks, chunksize=1):
                if err is not None:
                    errors.setdefault(ci, err)
                else:
                    outcomes[ci][rep] = outcome
            total = time.perf_counter() - start
            # Apportion measured wall time evenly; per-rep times are not
            # observable from the parent without extra plumbing.
            for ci in walls:
                walls[ci] = total / len(cells)

    results = []
    failures = []
    for ci, cell in enumerate(cells):
        if ci in errors:
            failures.append((cell, errors[ci]))
            continue
        reps = [outcomes[ci][rep] for rep in range(cfg.repetitions)]
        result = _aggregate(cfg, cell, reps, walls[ci] if timing else 0.0)
        results.append(result)
        log(
            f"[{cell.label()}] success={result.success_rate:.3f} "
            f"signed={result.signed_success_rate:.3f} converged={result.n_converged}/{cfg.repetitions}"
        )
    for cell, err in failures:
        log(f"[{cell.label()}] FAILED: {err}")
    return GridResult(tuple(results), tuple(failures))


def betamin_check(cfg: ExperimentConfig, cell: CellKey) -> float:
    """Smallest active |theta*| implied by the cell's design.

    Informational: diagonal placements halve under the sum-split convention;
    an empty active set reports +inf.
    """
    if cfg.k == 0:
        return math.inf
    if _placement(cell.scenario) == "diagonal" and cfg.convention == "sum-split":
        return abs(cell.magnitude) / 2.0
    return abs(cell.magnitude)


def _fmt(x) -> str:
    return format(float(x), ".17g")


def results_csv_text(cells: list[CellResult]) -> str:
    """Render the results CSV; rows sorted by (scenario, method, m, n, eps)."""
    lines = [CSV_HEADER]
    for r in sorted(cells, key=lambda r: (r.key.scenario, r.key.method, r.key.m, r.key.n_star, r.key.eps)):
        lines.append(
            ",".join(
                [
                    r.key.scenario,
                    r.key.method,
                    str(r.key.m),
                    str(r.d),
                    str(r.key.n_star),
                    _fmt(r.key.eps),
                    _fmt(r.lambda0),
                    _fmt(r.lambda_used),
                    str(r.repetitions),
                    _fmt(r.success_rate),
                    _fmt(r.signed_success_rate),
                    _fmt(r.mean_l2),
                    _fmt(r.median_l2),
                    str(r.n_converged),
                    _fmt(r.wall_s),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def write_results_csv(path, cells: list[CellResult]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(results_csv_text(cells))
