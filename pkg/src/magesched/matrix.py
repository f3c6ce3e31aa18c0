"""Sparse utility matrix: applications as rows, reference and placement mappings as columns.

The first ``q = n_kernels * n_levels + 1`` columns form the reference block
(one isolation run plus every contentious kernel at every intensity level).
Placement columns are appended behind it, one per profiled or candidate
application-to-resource mapping.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConflictError, InvalidArgument

ISOLATION = "isolation"
KERNEL = "kernel"
PLACEMENT = "placement"


@dataclass(frozen=True, order=True)
class ColumnKind:
    kind: str
    kernel_id: int = -1
    level: int = 0
    mapping_id: str = ""

    @classmethod
    def isolation(cls) -> "ColumnKind":
        return cls(ISOLATION)

    @classmethod
    def kernel(cls, kernel_id: int, level: int) -> "ColumnKind":
        return cls(KERNEL, kernel_id=kernel_id, level=level)

    @classmethod
    def placement(cls, mapping_id: str) -> "ColumnKind":
        return cls(PLACEMENT, mapping_id=mapping_id)

    @property
    def intensity(self) -> float:
        """Kernel intensity as a fraction of saturation (level 10 -> 1.0)."""
        return self.level / 10.0

    @property
    def is_reference(self) -> bool:
        return self.kind != PLACEMENT

    def to_dict(self) -> dict:
        if self.kind == ISOLATION:
            return {"kind": ISOLATION}
        if self.kind == KERNEL:
            return {"kind": KERNEL, "kernel": self.kernel_id, "level": self.level}
        return {"kind": PLACEMENT, "mapping": self.mapping_id}

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnKind":
        kind = d.get("kind")
        if kind == ISOLATION:
            return cls.isolation()
        if kind == KERNEL:
            return cls.kernel(int(d["kernel"]), int(d["level"]))
        if kind == PLACEMENT:
            return cls.placement(str(d["mapping"]))
        raise InvalidArgument(f"unknown column kind {kind!r}")

    def __str__(self) -> str:
        if self.kind == ISOLATION:
            return "iso"
        if self.kind == KERNEL:
            return f"uB{self.kernel_id}_{10 * self.level}"
        return f"map_{self.mapping_id}"


def reference_schema(n_kernels: int, n_levels: int) -> list[ColumnKind]:
    """Isolation column followed by every (kernel, level) pair, levels ascending."""
    if n_kernels < 1 or n_levels < 1:
        raise InvalidArgument("n_kernels and n_levels must both be >= 1")
    cols = [ColumnKind.isolation()]
    for k in range(n_kernels):
        for lvl in range(1, n_levels + 1):
            cols.append(ColumnKind.kernel(k, lvl))
    return cols


class UtilityMatrix:
    """Sparse m x d table of observed performance values.

    Entries live in a dict keyed by ``(row, col)``; the observed mask is the
    key set, so the two can never disagree. Rows persist for the lifetime of
    the object; callers add one per application (or application phase).
    """

    # process-wide count of constructions and reads; lets tests prove a policy never consults a matrix
    accesses = 0

    def __init__(self, columns: Sequence[ColumnKind], n_rows: int = 0,
                 n_kernels: int | None = None, n_levels: int | None = None):
        UtilityMatrix.accesses += 1
        columns = list(columns)
        n_iso = sum(1 for c in columns if c.kind == ISOLATION)
        if n_iso != 1:
            raise InvalidArgument(f"matrix needs exactly one isolation column, got {n_iso}")
        self.columns: list[ColumnKind] = columns
        self.n_rows = int(n_rows)
        self.entries: dict[tuple[int, int], float] = {}
        self._index = {}
        for j, c in enumerate(columns):
            if c in self._index:
                raise ConflictError(f"duplicate column {c}")
            self._index[c] = j
        self.q = sum(1 for c in columns if c.is_reference)
        if any(not c.is_reference for c in columns[: self.q]):
            raise InvalidArgument("reference columns must precede placement columns")
        self.n_kernels = n_kernels
        self.n_levels = n_levels
        if n_kernels is not None and n_levels is not None:
            if self.q != n_kernels * n_levels + 1:
                raise InvalidArgument("reference block size does not match kernel/level counts")

    @classmethod
    def with_reference(cls, n_kernels: int, n_levels: int = 10, n_rows: int = 0) -> "UtilityMatrix":
        return cls(reference_schema(n_kernels, n_levels), n_rows, n_kernels, n_levels)

    # -- shape ---------------------------------------------------------------------------

    @property
    def d(self) -> int:
        return len(self.columns)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.d

    @property
    def n_placement(self) -> int:
        return self.d - self.q

    @property
    def observed_mask(self) -> set[tuple[int, int]]:
        return set(self.entries)

    def add_row(self) -> int:
        self.n_rows += 1
        return self.n_rows - 1

    def column_index(self, col: ColumnKind) -> int:
        try:
            return self._index[col]
        except KeyError:
            raise InvalidArgument(f"no column {col}") from None

    def has_column(self, col: ColumnKind) -> bool:
        return col in self._index

    def placement_index(self, mapping_id: str) -> int:
        return self.column_index(ColumnKind.placement(mapping_id))

    # -- observations --------------------------------------------------------------------

    def insert(self, row: int, col: int, value: float) -> "UtilityMatrix":
        if not (0 <= row < self.n_rows) or not (0 <= col < self.d):
            raise IndexError(f"cell ({row}, {col}) outside {self.shape}")
        value = float(value)
        if not math.isfinite(value) or value < 0:
            raise InvalidArgument(f"observation must be finite and >= 0, got {value}")
        self.entries[(row, col)] = value
        return self

    def get(self, row: int, col: int, default: float | None = None):
        UtilityMatrix.accesses += 1
        return self.entries.get((row, col), default)

    def clear_row(self, row: int) -> None:
        for key in [k for k in self.entries if k[0] == row]:
            del self.entries[key]

    def row_density(self, row: int) -> int:
        return sum(1 for (r, _) in self.entries if r == row)

    def density(self) -> float:
        """Average observed entries per non-empty row (the density degree p)."""
        counts = {}
        for r, _ in self.entries:
            counts[r] = counts.get(r, 0) + 1
        return float(np.mean(list(counts.values()))) if counts else 0.0

    def column_entries(self, col: int) -> dict[int, float]:
        return {r: v for (r, c), v in self.entries.items() if c == col}

    def observed_columns(self) -> set[int]:
        return {c for (_, c) in self.entries}

    def observed_rows(self) -> set[int]:
        return {r for (r, _) in self.entries}

    def arrays(self, mask: Iterable[tuple[int, int]] | None = None):
        """(rows, cols, values) arrays for ``mask`` (default: every observation), sorted."""
        UtilityMatrix.accesses += 1
        keys = sorted(self.entries if mask is None else mask)
        rows = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
        cols = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
        vals = np.fromiter((self.entries[k] for k in keys), dtype=np.float64, count=len(keys))
        return rows, cols, vals

    def dense(self, fill: float = np.nan) -> np.ndarray:
        out = np.full(self.shape, fill, dtype=float)
        for (r, c), v in self.entries.items():
            out[r, c] = v
        return out

    # -- structure -----------------------------------------------------------------------

    def concat_placement_columns(self, mappings) -> "UtilityMatrix":
        """Append one empty column per mapping (anything with ``mapping_id`` or a str)."""
        new = []
        for m in mappings:
            mid = m if isinstance(m, str) else m.mapping_id
            col = ColumnKind.placement(mid)
            if col in self._index or col in new:
                raise ConflictError(f"mapping {mid} already present")
            new.append(col)
        for col in new:
            self._index[col] = len(self.columns)
            self.columns.append(col)
        return self

    def copy(self) -> "UtilityMatrix":
        out = UtilityMatrix(list(self.columns), self.n_rows, self.n_kernels, self.n_levels)
        out.entries = dict(self.entries)
        return out

    def reference_view(self) -> "UtilityMatrix":
        """Copy restricted to the reference block."""
        out = UtilityMatrix(self.columns[: self.q], self.n_rows, self.n_kernels, self.n_levels)
        out.entries = {k: v for k, v in self.entries.items() if k[1] < self.q}
        return out

    # -- serialization -------------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": "utility-matrix/1",
            "n_rows": self.n_rows,
            "n_kernels": self.n_kernels,
            "n_levels": self.n_levels,
            "columns": [c.to_dict() for c in self.columns],
            "observations": [[r, c, v] for (r, c), v in sorted(self.entries.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UtilityMatrix":
        if d.get("format") != "utility-matrix/1":
            raise InvalidArgument(f"unsupported matrix format {d.get('format')!r}")
        out = cls([ColumnKind.from_dict(c) for c in d["columns"]], d["n_rows"],
                  d.get("n_kernels"), d.get("n_levels"))
        for r, c, v in d["observations"]:
            out.insert(int(r), int(c), float(v))
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "UtilityMatrix":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __repr__(self) -> str:
        return f"UtilityMatrix(m={self.n_rows}, q={self.q}, n={self.n_placement}, observed={len(self.entries)})"


def split_holdout(matrix: UtilityMatrix, fraction: float, seed: int,
                  mask: Iterable[tuple[int, int]] | None = None):
    """Partition the observed cells into (train, holdout) sets, deterministic per seed."""
    if not 0 < fraction < 1:
        raise InvalidArgument("fraction must be in (0, 1)")
    keys = sorted(matrix.entries if mask is None else mask)
    if len(keys) < 2:
        raise InvalidArgument("need at least two observed entries to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(keys))
    n_hold = int(round(fraction * len(keys)))
    holdout = {keys[i] for i in order[:n_hold]}
    train = {keys[i] for i in order[n_hold:]}
    return train, holdout


def write_dense_csv(path, values: np.ndarray, columns: Sequence[ColumnKind]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row"] + [str(c) for c in columns])
        for i, row in enumerate(values):
            w.writerow([i] + [repr(float(x)) for x in row])
