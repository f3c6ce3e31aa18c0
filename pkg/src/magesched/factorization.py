"""Latent-factor completion of the utility matrix.

A dense starting point comes from a truncated SVD of the mean-imputed matrix
(row factors = U, column factors = (Sigma V^T)^T). SGD then refines the factors
against observed cells only, with step size lambda / k at epoch k.

Orientation: ``row_factors[u]`` belongs to application row ``u`` and
``col_factors[i]`` to matrix column ``i``; an estimate is their dot product.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import _kernels
from .errors import InvalidArgument, NumericError
from .matrix import UtilityMatrix

log = logging.getLogger(__name__)

MAX_AUTO_RANK = 10
DIVERGENCE_FACTOR = 1e6


@dataclass
class FactorModel:
    row_factors: np.ndarray
    col_factors: np.ndarray
    excluded_rows: tuple = ()

    def __post_init__(self):
        self.row_factors = np.ascontiguousarray(self.row_factors, dtype=np.float64)
        self.col_factors = np.ascontiguousarray(self.col_factors, dtype=np.float64)
        if self.row_factors.ndim != 2 or self.col_factors.ndim != 2:
            raise InvalidArgument("factor arrays must be 2-D")
        if self.row_factors.shape[1] != self.col_factors.shape[1]:
            raise InvalidArgument("row and column factors disagree on rank")

    @property
    def rank(self) -> int:
        return self.row_factors.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.row_factors.shape[0], self.col_factors.shape[0]

    def estimate(self, u: int, i: int) -> float:
        return float(self.row_factors[u] @ self.col_factors[i])

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.row_factors).all() and np.isfinite(self.col_factors).all())

    def copy(self) -> "FactorModel":
        return FactorModel(self.row_factors.copy(), self.col_factors.copy(), self.excluded_rows)

    def resized(self, m: int, d: int) -> "FactorModel":
        """Copy padded with zero factors (or truncated) to ``m`` rows and ``d`` columns."""
        r = self.rank
        rows = np.zeros((m, r))
        cols = np.zeros((d, r))
        mm = min(m, self.shape[0])
        dd = min(d, self.shape[1])
        rows[:mm] = self.row_factors[:mm]
        cols[:dd] = self.col_factors[:dd]
        return FactorModel(rows, cols, self.excluded_rows)


@dataclass
class SgdConfig:
    lam: float = 0.05
    max_iterations: int = 500
    convergence_tol: float = 1e-4
    convergence_window: int = 10
    seed: int = 0
    epoch_order: str = "shuffle"  # or "sequential"

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidArgument("lambda must be > 0")
        if self.max_iterations < 1:
            raise InvalidArgument("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise InvalidArgument("convergence_tol must be > 0")
        if self.convergence_window < 1:
            raise InvalidArgument("convergence_window must be >= 1")
        if self.epoch_order not in ("shuffle", "sequential"):
            raise InvalidArgument(f"unknown epoch order {self.epoch_order!r}")


@dataclass
class SgdResult:
    model: FactorModel
    iterations_used: int
    final_rmse: float
    rmse_trace: list = field(default_factory=list)
    entry_visits: int = 0


# -- SVD initialization -----------------------------------------------------------------------

def jacobi_svd(a: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60):
    """Thin SVD by one-sided Jacobi rotations. Returns ``(U, s, Vt)`` with s descending."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or 0 in a.shape:
        raise InvalidArgument("jacobi_svd needs a non-empty 2-D array")
    transpose = a.shape[0] < a.shape[1]
    work = np.ascontiguousarray(a.T if transpose else a).copy()
    n = work.shape[1]
    V = np.eye(n)
    sweeps = _kernels.jacobi_sweeps(work, V, tol, max_sweeps)
    if sweeps < 0:
        raise NumericError(f"Jacobi SVD did not converge in {max_sweeps} sweeps", max_sweeps)
    s = np.sqrt((work * work).sum(axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    work = work[:, order]
    V = V[:, order]
    U = np.zeros_like(work)
    nz = s > s[0] * 1e-14 if s[0] > 0 else np.zeros_like(s, dtype=bool)
    U[:, nz] = work[:, nz] / s[nz]
    if transpose:
        return V, s, U.T
    return U, s, V.T


def choose_rank(singular_values: np.ndarray, policy=0.9, m: int | None = None,
                d: int | None = None) -> int:
    """Rank from ``policy``: an int fixes r; a float in (0, 1] is the energy fraction.

    Energy is the cumulative share of squared singular values; automatic ranks
    are capped at ``min(10, m, d)``.
    """
    s = np.asarray(singular_values, dtype=float)
    limit = len(s)
    if m is not None:
        limit = min(limit, m)
    if d is not None:
        limit = min(limit, d)
    if isinstance(policy, (int, np.integer)) and not isinstance(policy, bool):
        if policy < 1:
            raise InvalidArgument("fixed rank must be >= 1")
        return int(min(policy, limit))
    if policy in (None, "energy"):
        policy = 0.9
    frac = float(policy)
    if not 0 < frac <= 1:
        raise InvalidArgument("energy fraction must be in (0, 1]")
    cap = min(MAX_AUTO_RANK, limit)
    energy = s ** 2
    total = energy.sum()
    if total == 0:
        return 1
    cum = np.cumsum(energy) / total
    r = int(np.searchsorted(cum, frac - 1e-12) + 1)
    return max(1, min(r, cap))


def impute_and_init(matrix: UtilityMatrix, rank_policy=0.9, columns: Iterable[int] | None = None,
                    refill_sweeps: int = 0) -> FactorModel:
    """Mean-impute missing cells, take a truncated SVD, and return the PQ factors.

    Rows without any observation in ``columns`` are excluded from the SVD and get
    zero row factors; their indices are reported in ``excluded_rows``.
    With ``refill_sweeps > 0`` the missing cells are then repeatedly replaced
    by the rank-r reconstruction and the SVD retaken, at the rank chosen from
    the mean-imputed matrix.
    """
    if refill_sweeps < 0:
        raise InvalidArgument("refill_sweeps must be >= 0")
    cols = list(range(matrix.d)) if columns is None else sorted(columns)
    colpos = {c: j for j, c in enumerate(cols)}
    sums = np.zeros(len(cols))
    counts = np.zeros(len(cols))
    seen_rows = set()
    for (r, c), v in matrix.entries.items():
        j = colpos.get(c)
        if j is None:
            continue
        sums[j] += v
        counts[j] += 1
        seen_rows.add(r)
    if not seen_rows:
        raise InvalidArgument("cannot initialize factors from an empty matrix")
    rows = sorted(seen_rows)
    excluded = tuple(r for r in range(matrix.n_rows) if r not in seen_rows)
    if excluded:
        log.debug("impute_and_init: %d rows without observations excluded", len(excluded))
    global_mean = sums.sum() / counts.sum()
    means = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
    rowpos = {r: i for i, r in enumerate(rows)}
    dense = np.tile(means, (len(rows), 1))
    for (r, c), v in matrix.entries.items():
        j = colpos.get(c)
        if j is not None:
            dense[rowpos[r], j] = v
    U, s, Vt = jacobi_svd(dense)
    r = choose_rank(s, rank_policy, len(rows), len(cols))
    if refill_sweeps:
        observed = np.zeros(dense.shape, dtype=bool)
        for (u, c) in matrix.entries:
            j = colpos.get(c)
            if j is not None:
                observed[rowpos[u], j] = True
        for _ in range(refill_sweeps):
            dense = np.where(observed, dense, (U[:, :r] * s[:r]) @ Vt[:r])
            U, s, Vt = jacobi_svd(dense)
    row_factors = np.zeros((matrix.n_rows, r))
    row_factors[rows] = U[:, :r]
    col_factors = (s[:r, None] * Vt[:r]).T
    return FactorModel(row_factors, col_factors, excluded)


def reconstruct(model: FactorModel, matrix: UtilityMatrix | None = None,
                preserve_observed: bool = False) -> np.ndarray:
    """Dense R = Q P^T; with ``preserve_observed`` observed cells keep their measured value."""
    out = model.row_factors @ model.col_factors.T
    if preserve_observed:
        if matrix is None:
            raise InvalidArgument("observed-preserving reconstruction needs the matrix")
        for (r, c), v in matrix.entries.items():
            if r < out.shape[0] and c < out.shape[1]:
                out[r, c] = v
    return out


# -- SGD --------------------------------------------------------------------------------------

def learning_rate(lam: float, k: int) -> float:
    if k < 1:
        raise InvalidArgument("iteration index k must be >= 1")
    if not lam > 0:
        raise InvalidArgument("lambda must be > 0")
    return lam / k


def sgd_step(q_u, p_i, r_ui: float, eta: float, lam: float):
    """One update of a (row factor, column factor) pair; returns new copies."""
    q_u = np.asarray(q_u, dtype=float)
    p_i = np.asarray(p_i, dtype=float)
    if eta < 0 or lam < 0:
        raise InvalidArgument("eta and lambda must be >= 0")
    if not (np.isfinite(q_u).all() and np.isfinite(p_i).all() and math.isfinite(r_ui)):
        raise NumericError("non-finite input to sgd_step")
    err = r_ui - float(q_u @ p_i)
    q_new = q_u + eta * (2.0 * err * p_i - lam * q_u)
    p_new = p_i + eta * (2.0 * err * q_u - lam * p_i)
    return q_new, p_new


def _pow2(x: float) -> float:
    if not x > 0 or not math.isfinite(x):
        return 1.0
    return 2.0 ** round(math.log2(x))


def refine_arrays(model: FactorModel, rows, cols, vals, config: SgdConfig, workers: int = 1) -> SgdResult:
    """SGD over explicit (row, col, value) targets. Returns a new model.

    Targets and factors are rescaled by powers of two for the duration of the
    run, which leaves every product bit-exact while keeping step sizes
    meaningful regardless of the units of the performance values.
    """
    if workers < 1:
        raise InvalidArgument("workers must be >= 1")
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    vals = np.ascontiguousarray(vals, dtype=np.float64)
    n = len(vals)
    if n == 0:
        return SgdResult(model.copy(), 0, 0.0, [])
    m, d = model.shape
    if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= d:
        raise InvalidArgument("target cell outside the factor model")
    if not model.is_finite() or not np.isfinite(vals).all():
        raise NumericError("non-finite factors or targets", 0)

    scale = _pow2(math.sqrt(float(np.mean(vals * vals))))
    q_mag = float(np.abs(model.row_factors[rows]).mean())
    p_mag = float(np.abs(model.col_factors[cols]).mean())
    balance = _pow2(math.sqrt(p_mag / (scale * q_mag))) if q_mag > 0 and p_mag > 0 else 1.0
    Q = model.row_factors * balance
    P = model.col_factors / (balance * scale)
    v = vals / scale

    def rmse_now():
        return math.sqrt(_kernels.sum_sq_error(Q, P, rows, cols, v) / n) * scale

    rmse0 = rmse_now()
    # an exact starting fit would otherwise make any regularization step look like divergence
    limit = DIVERGENCE_FACTOR * max(rmse0, 1e-3 * scale)
    rng = np.random.default_rng(config.seed)
    base_order = np.arange(n, dtype=np.int64)
    trace: list[float] = []
    visits = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for k in range(1, config.max_iterations + 1):
            order = rng.permutation(n) if config.epoch_order == "shuffle" else base_order
            eta = learning_rate(config.lam, k)
            if pool is None:
                visits += _kernels.sgd_epoch(Q, P, rows, cols, v, order, 0, n, eta, config.lam)
            else:
                bounds = np.linspace(0, n, workers + 1).astype(np.int64)
                futures = [pool.submit(_kernels.sgd_epoch, Q, P, rows, cols, v, order,
                                       int(bounds[w]), int(bounds[w + 1]), eta, config.lam)
                           for w in range(workers)]
                visits += sum(f.result() for f in futures)
            cur = rmse_now()
            if not math.isfinite(cur) or cur > limit:
                raise NumericError(f"SGD diverged at epoch {k} (rmse {cur:.3g})", k)
            trace.append(cur)
            if cur == 0.0:
                break
            if k > config.convergence_window:
                prev = trace[k - 1 - config.convergence_window]
                if prev > 0 and abs(prev - cur) / prev < config.convergence_tol:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    out = FactorModel(Q / balance, P * (balance * scale), model.excluded_rows)
    return SgdResult(out, len(trace), trace[-1], trace, visits)


def sgd_refine(matrix: UtilityMatrix, model: FactorModel, config: SgdConfig,
               target_mask: Iterable[tuple[int, int]] | None = None) -> SgdResult:
    """Refine ``model`` against the observed cells in ``target_mask`` (default: all)."""
    mask = matrix.entries.keys() if target_mask is None else target_mask
    missing = [k for k in mask if k not in matrix.entries]
    if missing:
        raise InvalidArgument(f"{len(missing)} target cells are not observed, e.g. {missing[0]}")
    rows, cols, vals = matrix.arrays(mask)
    return refine_arrays(model, rows, cols, vals, config)


def parallel_sgd_refine(matrix: UtilityMatrix, model: FactorModel, config: SgdConfig,
                        target_mask=None, workers: int = 4) -> SgdResult:
    """Lock-free variant: ``workers`` threads update shared factors concurrently.

    Each epoch's shuffled visit order is cut into contiguous shards, one per
    thread. Reads may observe another thread's in-flight writes; with a single
    worker the run is identical to :func:`sgd_refine`.
    """
    mask = matrix.entries.keys() if target_mask is None else target_mask
    missing = [k for k in mask if k not in matrix.entries]
    if missing:
        raise InvalidArgument(f"{len(missing)} target cells are not observed")
    rows, cols, vals = matrix.arrays(mask)
    return refine_arrays(model, rows, cols, vals, config, workers=workers)


def write_trace_csv(path, result: SgdResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "rmse"])
        for k, v in enumerate(result.rmse_trace, start=1):
            w.writerow([k, repr(v)])
