"""Error-vs-FLOPs sweep over LSH and RFF parameters, Pareto frontiers and curve CSVs."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy import stats

from config.settings import CLI_CONFIG, SEED_STREAMS, SWEEP_CONFIG, derive_seed
from utils.approx import (
    REPORT_COLUMNS,
    ApproxConfig,
    ApproxReport,
    Scheme,
    TheoryPredictor,
    _missed_mass,
    _ordered_pair_count,
    evaluate_rff,
    lsh_flops,
)
from utils.errors import (
    DataIOError,
    DegenerateInputError,
    EmptyGridError,
    EmptyInputError,
    MismatchedCloudError,
    ValidationError,
)
from utils.geometry import PointCloud, SupportSet
from utils.kernels import TruncatedKernel
from utils.lsh import E2lshFamily

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ['scheme', 'budget_flops', 'epsilon', 'epsilon_stderr', 'm1', 'm2', 'r', 'D']
THEORY_COLUMNS = ['scheme', 'budget_flops', 'predicted_epsilon', 'constant', 'prefactor']
SCHEME_ORDER = [Scheme.RFF, Scheme.OR_ONLY, Scheme.OR_AND]


@dataclass(frozen=True)
class SweepGrid:
    """Parameter ranges searched per scheme; budgets in absolute FLOPs."""

    r_values: tuple[float, ...]
    m1_values: tuple[int, ...]
    m2_values: tuple[int, ...]
    D_values: tuple[int, ...]
    budgets: tuple[int, ...] = ()
    seeds: int = 20
    schemes: tuple[Scheme, ...] = tuple(SCHEME_ORDER)
    master_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, 'schemes', tuple(Scheme(s) for s in self.schemes))
        if not self.schemes or self.seeds < 1:
            raise EmptyGridError("a sweep needs at least one scheme and one seed")
        lsh_ranges = (self.r_values, self.m1_values)
        if any(s is not Scheme.RFF for s in self.schemes) and not all(lsh_ranges):
            raise EmptyGridError("LSH schemes need nonempty r and m1 ranges")
        if Scheme.OR_AND in self.schemes and not self.m2_values:
            raise EmptyGridError("OR & AND needs a nonempty m2 range")
        if Scheme.RFF in self.schemes and not self.D_values:
            raise EmptyGridError("RFF needs a nonempty D range")
        if list(self.budgets) != sorted(self.budgets):
            raise ValidationError("budgets must be sorted ascending")

    @classmethod
    def from_preset(cls, name: str = SWEEP_CONFIG['default_preset'], **overrides) -> "SweepGrid":
        if name not in SWEEP_CONFIG['presets']:
            raise ValidationError(f"unknown sweep preset '{name}'")
        preset = SWEEP_CONFIG[name]
        values = {
            'r_values': tuple(preset['r_values']),
            'm1_values': tuple(preset['m1_values']),
            'm2_values': tuple(preset['m2_values']),
            'D_values': tuple(preset['D_values']),
            'seeds': preset['seeds'],
            'master_seed': SWEEP_CONFIG['master_seed'],
        }
        values.update({k: (tuple(v) if isinstance(v, list) else v) for k, v in overrides.items() if v is not None})
        return cls(**values)

    def with_budgets(self, budgets) -> "SweepGrid":
        return replace(self, budgets=tuple(int(b) for b in budgets))

    def run_seed(self, index: int) -> int:
        """Run seed of the index-th repetition, shared by every cell and scheme"""
        return derive_seed(self.master_seed, index)


def default_budgets(n: int, d: int, count: int = SWEEP_CONFIG['desk']['n_budgets']) -> list[int]:
    """Log-spaced FLOP ceilings from n d up to n^2 d"""
    return sorted({int(b) for b in np.geomspace(n * d, n * n * d, count)})


@dataclass(frozen=True)
class ParetoPoint:
    scheme: Scheme
    budget: int
    epsilon: float | None
    epsilon_stderr: float | None = None
    m1: int | None = None
    m2: int | None = None
    r: float | None = None
    D: int | None = None
    flagged: bool = False


@dataclass
class _SeedTask:
    cloud: PointCloud
    kernel: TruncatedKernel
    distances: np.ndarray
    grid: SweepGrid
    index: int


def _sweep_one_seed(task: _SeedTask) -> list[ApproxReport]:
    grid, cloud, kernel = task.grid, task.cloud, task.kernel
    seed = grid.run_seed(task.index)
    reports = []

    if Scheme.RFF in grid.schemes:
        for D in grid.D_values:
            reports.append(evaluate_rff(cloud, kernel, ApproxConfig(Scheme.RFF, seed, D=D)))

    m2_values = sorted(({1} if Scheme.OR_ONLY in grid.schemes else set())
                       | (set(grid.m2_values) if Scheme.OR_AND in grid.schemes else set()))
    if not m2_values:
        return reports

    pairs = _ordered_pair_count(cloud.n)
    kernel_sq = kernel.values(task.distances) ** 2
    src, dst = kernel.support.src, kernel.support.dst
    m1_max = max(grid.m1_values)
    family = E2lshFamily(cloud.k2, derive_seed(seed, SEED_STREAMS['lsh']))
    projections = family.projections(cloud.coords, m1_max, max(m2_values))

    for r in grid.r_values:
        for m2 in m2_values:
            tables = projections.collision_tables(r, m1_max, m2)
            # Table i's hits never depend on how many tables follow, so prefixes give every m1
            covered = np.logical_or.accumulate(tables.table_hits(src, dst), axis=0)
            collisions = np.cumsum(tables.collision_counts())
            for m1 in grid.m1_values:
                epsilon = _missed_mass(kernel_sq, covered[m1 - 1]) / pairs
                count = int(collisions[m1 - 1])
                flops = lsh_flops(cloud.n, cloud.k2, m1, m2, count)
                schemes = []
                if m2 == 1 and Scheme.OR_ONLY in grid.schemes:
                    schemes.append(Scheme.OR_ONLY)
                if Scheme.OR_AND in grid.schemes and m2 in grid.m2_values:
                    schemes.append(Scheme.OR_AND)
                for scheme in schemes:
                    config = ApproxConfig(scheme, seed, m1=m1, m2=m2, r=float(r))
                    reports.append(ApproxReport(config, cloud.n, cloud.k2, flops, epsilon, collisions=count))
    logger.debug("seed %d: %d reports", task.index, len(reports))
    return reports


def _canonical_key(report: ApproxReport):
    c = report.config
    return (SCHEME_ORDER.index(c.scheme), c.D or 0, c.m1 or 0, c.m2 or 0, c.r or 0.0)


def run_sweep(cloud: PointCloud, support: SupportSet, grid: SweepGrid, jobs: int = SWEEP_CONFIG['jobs']) -> list[ApproxReport]:
    """One report per (scheme, cell, seed), sorted by scheme then cell then seed"""
    if support.n != cloud.n:
        raise MismatchedCloudError(f"support built over {support.n} points, cloud has {cloud.n}")
    kernel = TruncatedKernel(support)
    distances = kernel.support_distances(cloud)
    tasks = [_SeedTask(cloud, kernel, distances, grid, i) for i in range(grid.seeds)]

    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            per_seed = list(executor.map(_sweep_one_seed, tasks))
    else:
        per_seed = [_sweep_one_seed(task) for task in tasks]

    reports = [report for batch in per_seed for report in batch]
    # Stable sort keeps seed order inside each cell
    reports.sort(key=_canonical_key)
    logger.info("sweep produced %d reports over %d seeds", len(reports), grid.seeds)
    return reports


def reports_frame(reports) -> pd.DataFrame:
    return pd.DataFrame([r.to_record() for r in reports], columns=REPORT_COLUMNS)


def _stderr(values) -> float:
    return float(stats.sem(values)) if len(values) > 1 else 0.0


def _seed_averaged(reports) -> pd.DataFrame:
    frame = reports_frame(reports)
    keys = ['scheme', 'm1', 'm2', 'r', 'D']
    grouped = frame.groupby(keys, dropna=False, sort=False)
    return grouped.agg(
        epsilon=('epsilon', 'mean'),
        epsilon_stderr=('epsilon', _stderr),
        flops=('flops', 'mean'),
        seeds=('epsilon', 'size'),
    ).reset_index()


def _optional(value, cast):
    return None if pd.isna(value) else cast(value)


def pareto(reports, budgets) -> list[ParetoPoint]:
    """Per scheme and budget, the config with the least seed-averaged error among those that fit"""
    reports = list(reports)
    if not reports:
        raise EmptyInputError("no reports to build a frontier from")
    budgets = sorted(int(b) for b in budgets)
    summary = _seed_averaged(reports)

    frontier = []
    for scheme in SCHEME_ORDER:
        rows = summary[summary['scheme'] == scheme.value]
        if rows.empty:
            continue
        rows = rows.sort_values(['epsilon', 'flops'], kind='stable')
        for budget in budgets:
            feasible = rows[rows['flops'] <= budget]
            if feasible.empty:
                logger.warning("no %s config fits a budget of %d FLOPs", scheme.value, budget)
                frontier.append(ParetoPoint(scheme, budget, None, flagged=True))
                continue
            best = feasible.iloc[0]
            frontier.append(ParetoPoint(
                scheme, budget, float(best['epsilon']), float(best['epsilon_stderr']),
                _optional(best['m1'], int), _optional(best['m2'], int),
                _optional(best['r'], float), _optional(best['D'], int),
            ))
    return frontier


def curves_frame(frontier) -> pd.DataFrame:
    rows = [
        {'scheme': p.scheme.value, 'budget_flops': p.budget, 'epsilon': p.epsilon,
         'epsilon_stderr': p.epsilon_stderr, 'm1': p.m1, 'm2': p.m2, 'r': p.r, 'D': p.D}
        for p in frontier if not p.flagged
    ]
    frame = pd.DataFrame(rows, columns=CURVE_COLUMNS)
    for column in ('m1', 'm2', 'D'):
        frame[column] = frame[column].astype('Int64')
    return frame


def emit_curves(frontier, path=None):
    """Write the frontier CSV (flagged entries left out); returns the text when no path is given"""
    frame = curves_frame(frontier)
    try:
        return frame.to_csv(path, index=False, float_format=CLI_CONFIG['float_format'], lineterminator='\n')
    except OSError as e:
        raise DataIOError(f"could not write curves to {path}: {e}") from e


def theory_overlay(frontier, n: int, d: int, s: float, budgets) -> pd.DataFrame:
    """Theory-only curves per scheme, calibrated on that scheme's measured frontier.

    OR & AND uses the mean m2 of its frontier configs as the functions per
    table. Schemes without enough usable points are skipped with a warning.
    """
    budgets = np.asarray(sorted(int(b) for b in budgets), dtype=np.float64)
    rows = []
    for scheme in SCHEME_ORDER:
        points = [p for p in frontier if p.scheme is scheme and not p.flagged]
        if not points:
            continue
        m = int(round(np.mean([p.m2 for p in points]))) if scheme is Scheme.OR_AND else None
        try:
            predictor = TheoryPredictor.calibrate(scheme, n, d, [p.budget for p in points],
                                                  [p.epsilon for p in points], s=s, m=m)
        except DegenerateInputError as e:
            logger.warning("no %s theory curve: %s", scheme.value, e)
            continue
        for budget, predicted in zip(budgets, np.atleast_1d(predictor.predict(budgets))):
            rows.append({'scheme': scheme.value, 'budget_flops': int(budget), 'predicted_epsilon': float(predicted),
                         'constant': predictor.constant, 'prefactor': predictor.prefactor})
    return pd.DataFrame(rows, columns=THEORY_COLUMNS)
