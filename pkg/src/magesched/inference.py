"""Staged completion of the utility matrix.

SGD1 completes the reference block (isolation + contentious kernels) from a
few profiling runs per application. SGD2 adds the placement columns that were
actually profiled, warm-starting from the SGD1 factors. SGD3 fills the
remaining all-zero placement columns: their cells are initialized inside the
[min, max] range of existing entries and refined together with everything
observed so far.

Initialization of all-zero placement cells can be ``"uniform"`` (random in the
range) or ``"composed"``: a prior built from the app's completed reference row
and the slot it occupies in that mapping, clipped into the same range.
"""

from __future__ import annotations

import logging
import math
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument, InvalidState
from .factorization import (FactorModel, SgdConfig, impute_and_init, reconstruct, refine_arrays,
                            sgd_refine)
from .matrix import ColumnKind, UtilityMatrix
from .simworld import (CORE_SCOPED, DELTA_FLOOR, DOMAIN_SCOPED, N_RESOURCES, PROFILE_SECONDS, AppSpec,
                       Slot, World, make_kernel_app)

log = logging.getLogger(__name__)

N_LEVELS = 10


@dataclass
class ProfileObservation:
    app_id: str
    column: ColumnKind
    value: float
    sim_duration: float = PROFILE_SECONDS

    def __post_init__(self):
        if self.value < 0 or not self.sim_duration > 0:
            raise InvalidArgument("observation value must be >= 0 and duration > 0")


@dataclass
class StageReport:
    stage: int
    iterations: int
    holdout_error: float | None = None
    columns_completed: int = 0
    wall_time: float = 0.0
    final_rmse: float = 0.0

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise InvalidArgument("stage must be 1, 2 or 3")


def _app_seed(seed: int, app_id: str) -> list:
    return [seed, zlib.crc32(app_id.encode())]


# -- profiling --------------------------------------------------------------------------------

def draw_reference_runs(app_id: str, seed: int, runs: int = 3, n_kernels: int = N_RESOURCES,
                        n_levels: int = N_LEVELS) -> list:
    """Seeded (kernel, level) pairs for the ``runs - 1`` kernel runs (distinct kernels)."""
    if not 1 <= runs <= n_kernels + 1:
        raise InvalidArgument(f"runs must be within 1..{n_kernels + 1}")
    rng = np.random.default_rng(_app_seed(seed, app_id))
    kernels = rng.choice(n_kernels, size=runs - 1, replace=False)
    levels = rng.integers(1, n_levels + 1, size=runs - 1)
    return [(int(k), int(lvl)) for k, lvl in zip(kernels, levels)]


def profile_reference(app: AppSpec, world: World, seed: int, runs: int = 3,
                      n_kernels: int = N_RESOURCES) -> list[ProfileObservation]:
    """Isolation run plus ``runs - 1`` runs next to randomly chosen contentious kernels."""
    obs = [ProfileObservation(app.app_id, ColumnKind.isolation(), world.profile_run(app))]
    for k, lvl in draw_reference_runs(app.app_id, seed, runs, n_kernels):
        value = world.profile_run(app, make_kernel_app(k, lvl, n_kernels))
        obs.append(ProfileObservation(app.app_id, ColumnKind.kernel(k, lvl), value))
    return obs


def record(matrix: UtilityMatrix, row: int, observations) -> None:
    for ob in observations:
        matrix.insert(row, matrix.column_index(ob.column), ob.value)


def profile_partial_placements(app: AppSpec, world: World, server: int, seed: int):
    """Run ``app`` for a short interval on a seeded free core of ``server``.

    Returns ``(assignments, observations)``: the realized mapping of every app
    on that server, and one observation per app (the newcomer and all
    co-residents) for that mapping's column. The world is left unchanged.
    """
    from .errors import InfeasibleError

    free = world.free_slots(server=server)
    if not free:
        raise InfeasibleError(f"server {server} has no free core")
    rng = np.random.default_rng(_app_seed(seed, app.app_id + "/partial"))
    slot = free[int(rng.integers(len(free)))]
    residents = world.apps_on(server)
    realized = {a: world.assignments[a] for a in residents}
    realized[app.app_id] = slot
    world.add_app(app)
    saved = dict(world.assignments)
    try:
        world.place(app.app_id, slot)
        obs = {}
        for a in sorted(realized):
            obs[a] = world.true_perf(a) * world.noise()
    finally:
        world.assignments = saved
    return realized, obs


# -- factor bookkeeping -----------------------------------------------------------------------

def _ridge(fixed: np.ndarray, targets: np.ndarray, lam: float) -> np.ndarray:
    r = fixed.shape[1]
    a = fixed.T @ fixed + lam * np.eye(r)
    return np.linalg.solve(a, fixed.T @ targets)


def extend_model(model: FactorModel, matrix: UtilityMatrix, lam: float,
                 extra: dict | None = None) -> FactorModel:
    """Grow ``model`` to the matrix shape; new or all-zero rows/columns get ridge fits to their cells.

    ``extra`` holds pseudo-observations ``{(row, col): value}`` that count as
    cells for the fit (used for initialized all-zero columns).
    """
    m0, d0 = model.shape
    out = model.resized(matrix.n_rows, matrix.d)
    cells = dict(matrix.entries)
    if extra:
        cells.update(extra)
    col_blank = ~out.col_factors.any(axis=1)
    row_blank = ~out.row_factors.any(axis=1)
    by_col: dict = {}
    by_row: dict = {}
    for (r, c), v in cells.items():
        if col_blank[c]:
            by_col.setdefault(c, []).append((r, v))
        if row_blank[r]:
            by_row.setdefault(r, []).append((c, v))
    # rows first (against known columns), then new columns against all rows
    for r, items in by_row.items():
        items = [(c, v) for c, v in items if c < d0]
        if items:
            cols = np.array([c for c, _ in items])
            vals = np.array([v for _, v in items])
            out.row_factors[r] = _ridge(out.col_factors[cols], vals, lam)
    for c, items in by_col.items():
        rows = np.array([r for r, _ in items])
        vals = np.array([v for _, v in items])
        out.col_factors[c] = _ridge(out.row_factors[rows], vals, lam)
    return out


def fold_in_sparse_rows(model: FactorModel, matrix: UtilityMatrix, dense_fraction: float = 0.5) -> FactorModel:
    """Re-fit the factors of sparsely observed rows against the SVD column factors.

    Mean imputation pulls a row with three observations toward the column
    means, so its SVD factor says little about the row. Here each sparse row
    gets the posterior mean of a Gaussian model: prior mean and covariance from
    the densely observed rows' factors, noise variance from their residuals.
    Without enough dense rows the model is returned unchanged.
    """
    r = model.rank
    counts = np.zeros(matrix.n_rows, dtype=int)
    for (u, _) in matrix.entries:
        counts[u] += 1
    dense = np.flatnonzero(counts >= dense_fraction * matrix.d)
    sparse = [u for u in np.flatnonzero((counts > 0) & (counts < dense_fraction * matrix.d))]
    if len(dense) < r + 2 or not sparse:
        return model
    q = model.row_factors[dense]
    mu = q.mean(axis=0)
    cov = np.cov(q.T).reshape(r, r) + 1e-12 * np.eye(r)
    dense_set = set(dense.tolist())
    resid = [v - model.estimate(u, c) for (u, c), v in matrix.entries.items() if u in dense_set]
    noise = max(float(np.mean(np.square(resid))), 1e-12)
    prec = np.linalg.inv(cov)
    cells: dict = {}
    for (u, c), v in matrix.entries.items():
        if counts[u] < dense_fraction * matrix.d:
            cells.setdefault(u, []).append((c, v))
    out = model.copy()
    for u in sparse:
        cols = np.array([c for c, _ in cells[u]])
        vals = np.array([v for _, v in cells[u]])
        x = model.col_factors[cols]
        a = x.T @ x / noise + prec
        out.row_factors[u] = np.linalg.solve(a, x.T @ vals / noise + prec @ mu)
    return out


# -- stages -----------------------------------------------------------------------------------

def _holdout_error(values: np.ndarray, truth: dict | None) -> float | None:
    if not truth:
        return None
    errs = [abs(values[r, c] - t) / t for (r, c), t in truth.items() if t > 0]
    return float(np.mean(errs)) if errs else None


def run_sgd1(matrix: UtilityMatrix, config: SgdConfig | None = None, rank_policy=0.9,
             truth: dict | None = None, fold_in: bool = True):
    """Complete the reference block. Returns ``(completed m x q array, StageReport, model)``.

    Observed reference cells keep their measured value in the completed block.
    With ``fold_in`` sparse rows start from :func:`fold_in_sparse_rows` instead
    of their mean-imputed SVD factors.
    ``truth`` maps held-out ``(row, col)`` cells to oracle values for error tracking.
    """
    config = config or SgdConfig()
    t0 = time.perf_counter()
    ref = matrix.reference_view()
    rows_seen = ref.observed_rows()
    missing = [r for r in range(ref.n_rows) if r not in rows_seen]
    if missing:
        raise InvalidArgument(f"rows without reference observations: {missing[:5]}")
    model = impute_and_init(ref, rank_policy)
    if fold_in:
        model = fold_in_sparse_rows(model, ref)
    res = sgd_refine(ref, model, config)
    completed = np.maximum(reconstruct(res.model, ref, preserve_observed=True), 0.0)
    report = StageReport(1, res.iterations_used, _holdout_error(completed, truth), ref.q,
                         time.perf_counter() - t0, res.final_rmse)
    return completed, report, res.model


def observed_placement_columns(matrix: UtilityMatrix) -> list[int]:
    return sorted(c for c in matrix.observed_columns() if c >= matrix.q)


def all_zero_placement_columns(matrix: UtilityMatrix) -> list[int]:
    seen = matrix.observed_columns()
    return [c for c in range(matrix.q, matrix.d) if c not in seen]


def run_sgd2(matrix: UtilityMatrix, model: FactorModel, config: SgdConfig | None = None):
    """Refine over the reference block plus observed placement columns (warm start).

    All-zero placement columns are left out. Returns ``(model, StageReport)``.
    """
    config = config or SgdConfig()
    t0 = time.perf_counter()
    obs_cols = observed_placement_columns(matrix)
    if not obs_cols:
        raise InvalidArgument("SGD2 needs at least one observed placement column")
    warm = extend_model(model, matrix, config.lam)
    res = sgd_refine(matrix, warm, config)
    return res.model, StageReport(2, res.iterations_used, None, len(obs_cols),
                                  time.perf_counter() - t0, res.final_rmse)


def init_range(matrix: UtilityMatrix) -> tuple:
    if not matrix.entries:
        raise InvalidState("no observed entries to take an initialization range from")
    vals = np.fromiter(matrix.entries.values(), dtype=float)
    return float(vals.min()), float(vals.max())


def initialize_zero_columns(matrix: UtilityMatrix, seed: int, rows_for_column: dict | None = None,
                            priors: dict | None = None) -> dict:
    """Initial values for every cell of every all-zero placement column.

    Cells are drawn uniformly in [min, max] of the observed entries unless
    ``priors`` supplies a value, which is then clipped into that range.
    ``rows_for_column`` restricts which rows carry a cell (default: all rows).
    """
    lo, hi = init_range(matrix)
    rng = np.random.default_rng([seed, 2718])
    out = {}
    for c in all_zero_placement_columns(matrix):
        rows = range(matrix.n_rows) if rows_for_column is None else rows_for_column.get(c, ())
        for r in rows:
            draw = float(rng.uniform(lo, hi)) if hi > lo else lo
            if priors is not None and (r, c) in priors:
                out[(r, c)] = float(np.clip(priors[(r, c)], lo, hi))
            else:
                out[(r, c)] = draw
    return out


def run_sgd3(matrix: UtilityMatrix, model: FactorModel, seed: int, config: SgdConfig | None = None,
             rows_for_column: dict | None = None, priors: dict | None = None):
    """Fill the all-zero placement columns and refine over the whole matrix.

    Returns ``(model, StageReport, estimates)`` where ``estimates`` is the
    dense, non-negative table with observed cells preserved.
    """
    config = config or SgdConfig()
    t0 = time.perf_counter()
    if not matrix.entries:
        raise InvalidState("SGD3 on a matrix without observations")
    init = initialize_zero_columns(matrix, seed, rows_for_column, priors)
    warm = extend_model(model, matrix, config.lam, init)
    cells = dict(matrix.entries)
    cells.update(init)
    keys = sorted(cells)
    rows = np.array([k[0] for k in keys], dtype=np.int64)
    cols = np.array([k[1] for k in keys], dtype=np.int64)
    vals = np.array([cells[k] for k in keys])
    res = refine_arrays(warm, rows, cols, vals, config)
    est = np.maximum(reconstruct(res.model, matrix, preserve_observed=True), 0.0)
    n_zero = len({c for (_, c) in init})
    return res.model, StageReport(3, res.iterations_used, None, n_zero, time.perf_counter() - t0,
                                  res.final_rmse), est


def single_stage_random_init(matrix: UtilityMatrix, seed: int, config: SgdConfig | None = None,
                             rank_policy=0.9, rows_for_column: dict | None = None):
    """Unstaged baseline: random-fill all-zero columns, random factors, one SGD over everything.

    Nothing is reused from earlier stages. The rank is taken from the SVD of
    the reference block so both pipelines fit the same model size; factor
    entries are drawn so that products start near the mean observed value.
    """
    config = config or SgdConfig()
    init = initialize_zero_columns(matrix, seed, rows_for_column)
    filled = matrix.copy()
    for (r, c), v in init.items():
        filled.insert(r, c, v)
    rank = impute_and_init(matrix.reference_view(), rank_policy).rank
    rng = np.random.default_rng([seed, 4241])
    mean = float(np.mean(np.fromiter(filled.entries.values(), dtype=float)))
    scale = math.sqrt(max(mean, 1e-12) / rank)
    model = FactorModel(rng.uniform(0.5, 1.5, (filled.n_rows, rank)) * scale,
                        rng.uniform(0.5, 1.5, (filled.d, rank)) * scale)
    return sgd_refine(filled, model, config)


# -- slot-context priors ----------------------------------------------------------------------

@dataclass
class AppCurves:
    """An app's completed reference row viewed as per-kernel degradation curves."""

    isolation: float
    ratios: np.ndarray  # (n_kernels, n_levels + 1); column 0 is the unloaded point (1.0)

    @classmethod
    def from_row(cls, row: np.ndarray, n_kernels: int, n_levels: int = N_LEVELS) -> "AppCurves":
        iso = max(float(row[0]), 1e-9)
        ratios = np.ones((n_kernels, n_levels + 1))
        ratios[:, 1:] = np.clip(np.asarray(row[1:], dtype=float).reshape(n_kernels, n_levels) / iso,
                                DELTA_FLOOR, 1.0)
        return cls(iso, ratios)

    def __post_init__(self):
        self.sensitivity = np.clip(1.0 - self.ratios[:, -1], 0.0, 1.0)
        self._table = self.ratios.tolist()

    def factor(self, kernel: int, x: float) -> float:
        """Relative throughput under pressure ``x`` in [0, 1] on ``kernel``'s resource."""
        row = self._table[kernel]
        pos = min(max(x, 0.0), 1.0) * (len(row) - 1)
        i = min(int(pos), len(row) - 2)
        frac = pos - i
        return row[i] + frac * (row[i + 1] - row[i])


@dataclass
class SlotPredictor:
    """Prior throughput of an app in a mapping, from its reference curves and the slot context.

    Platform descriptors (clock, per-class resource deficits expressed as
    equivalent kernel pressure) are hardware calibration data. Co-runner
    pressure is approximated as ``pressure_ratio`` times estimated sensitivity,
    since profiling only measures how an app suffers, not how it hurts.
    """

    world: World
    curves: dict = field(default_factory=dict)
    pressure_ratio: float = 0.22

    def pressure(self, app_id: str) -> np.ndarray:
        return self.pressure_ratio * self.curves[app_id].sensitivity

    def slot_factor(self, app_id: str, slot: Slot) -> float:
        cur = self.curves[app_id]
        platform = self.world.platform
        core = self.world.cores[(slot.server, slot.core)]
        cc = platform.core_classes[core.core_class]
        freq = platform.freq_levels(core.core_class)[slot.freq_level]
        phi = cur.sensitivity[0]
        out = (freq / platform.reference_clock) ** phi
        for r in range(len(cc.deficit)):
            if cc.deficit[r] > 0:
                out *= cur.factor(r, cc.deficit[r])
        return out

    def estimate(self, app_id: str, slot: Slot, co_runners: dict) -> float:
        cur = self.curves[app_id]
        core = self.world.cores[(slot.server, slot.core)]
        load = [0.0] * cur.ratios.shape[0]
        for other, os in co_runners.items():
            if other == app_id or os.server != slot.server or other not in self.curves:
                continue
            same_core = os.core == slot.core
            same_domain = self.world.cores[(os.server, os.core)].domain == core.domain
            for r, p in enumerate(self.curves[other].sensitivity):
                if (r in CORE_SCOPED and not same_core) or (r in DOMAIN_SCOPED and not same_domain):
                    continue
                load[r] += self.pressure_ratio * p
        inter = 1.0
        for r, x in enumerate(load):
            if x > 0:
                inter *= max(DELTA_FLOOR, cur.factor(r, min(1.0, x)))
        return cur.isolation * self.slot_factor(app_id, slot) * inter

    def mapping_estimates(self, assignments: dict) -> dict:
        return {a: self.estimate(a, s, assignments) for a, s in assignments.items()}

    def server_score(self, app_id: str, server: int) -> float:
        """Best free-slot isolation estimate on ``server`` discounted by resident pressure."""
        free = self.world.free_slots(server=server)
        if not free:
            return 0.0
        best = max(self.slot_factor(app_id, s) for s in free)
        cur = self.curves[app_id]
        load = np.zeros(cur.ratios.shape[0])
        for other in self.world.apps_on(server):
            if other in self.curves:
                load += self.pressure(other)
        inter = 1.0
        for r in range(len(load)):
            if r in CORE_SCOPED or load[r] <= 0:
                continue
            inter *= max(DELTA_FLOOR, cur.factor(r, min(1.0, load[r])))
        return cur.isolation * best * inter
