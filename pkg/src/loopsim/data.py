"""Dataset handling: CSV ingestion, synthetic generation, splits, windows.

Targets live in natural-log price space from ingestion onward; prices are
only exponentiated back at the CSV boundary.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DataError",
    "CsvFormatError",
    "Dataset",
    "SplitSpec",
    "SlidingWindow",
    "load_csv",
    "write_csv",
    "synthesize",
    "split",
    "window_from",
    "push_replace",
]

DEFAULT_TARGET_COLUMN = "MEDV"
MIN_WINDOW_CAPACITY = 4


class DataError(ValueError):
    """Invalid dataset contents or dataset-level preconditions."""


class CsvFormatError(DataError):
    """CSV file cannot be ingested; message names the offending cell."""


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, log-price targets and source row ids.

    Treated as read-only after construction; every transforming operation
    returns a new instance.
    """

    features: np.ndarray  # (n, d) float64
    targets: np.ndarray  # (n,) float64, natural log of price
    row_ids: np.ndarray  # (n,) int64, original source indices

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        targs = np.ascontiguousarray(self.targets, dtype=np.float64)
        ids = np.ascontiguousarray(self.row_ids, dtype=np.int64)
        if feats.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if targs.ndim != 1 or ids.ndim != 1:
            raise DataError("targets and row_ids must be 1-D vectors")
        if not (feats.shape[0] == targs.shape[0] == ids.shape[0]):
            raise DataError(
                f"row count mismatch: {feats.shape[0]} features, "
                f"{targs.shape[0]} targets, {ids.shape[0]} row_ids"
            )
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain non-finite values")
        if not np.all(np.isfinite(targs)):
            raise DataError("targets contain non-finite values")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "targets", targs)
        object.__setattr__(self, "row_ids", ids)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def take(self, idx) -> "Dataset":
        """New Dataset holding the rows at ``idx`` (any numpy index)."""
        return Dataset(self.features[idx], self.targets[idx], self.row_ids[idx])


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int

    def __post_init__(self):
        if not (0.0 < self.train_fraction < 1.0):
            raise DataError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


@dataclass(frozen=True)
class SlidingWindow:
    """Fixed-capacity row buffer; pushing at capacity evicts the oldest row."""

    capacity: int
    features: np.ndarray
    targets: np.ndarray
    row_ids: np.ndarray

    def __post_init__(self):
        if self.features.shape[0] > self.capacity:
            raise DataError("window length exceeds capacity")

    def __len__(self) -> int:
        return self.features.shape[0]

    def as_dataset(self) -> Dataset:
        return Dataset(self.features.copy(), self.targets.copy(), self.row_ids.copy())


def load_csv(path, target_column: str = DEFAULT_TARGET_COLUMN) -> Dataset:
    """Ingest a headered CSV; the target column is log-transformed here.

    All non-target columns become features in header order. Raw prices
    must be strictly positive since the log transform happens at ingestion.
    Errors name the offending row/column (rows counted from 0, header
    excluded).
    """
    path = Path(path)
    if not path.exists():
        raise CsvFormatError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file, header row required") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise CsvFormatError(
                f"{path}: target column {target_column!r} not in header {header}"
            )
        t_col = header.index(target_column)
        feat_names = [h for i, h in enumerate(header) if i != t_col]

        feat_rows: list[list[float]] = []
        targets: list[float] = []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise CsvFormatError(
                    f"{path}: row {i} has {len(row)} cells, expected {len(header)}"
                )
            parsed = []
            for j, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise CsvFormatError(
                        f"{path}: row {i}, column {header[j]!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                if not math.isfinite(v):
                    raise CsvFormatError(
                        f"{path}: row {i}, column {header[j]!r}: non-finite value"
                    )
                parsed.append(v)
            price = parsed[t_col]
            if price <= 0.0:
                raise CsvFormatError(
                    f"{path}: row {i}: price {price} is not strictly positive"
                )
            targets.append(math.log(price))
            feat_rows.append([v for j, v in enumerate(parsed) if j != t_col])

    if not feat_rows:
        raise CsvFormatError(f"{path}: no data rows")
    if not feat_names:
        raise CsvFormatError(f"{path}: no feature columns besides the target")
    n = len(feat_rows)
    return Dataset(
        np.array(feat_rows, dtype=np.float64),
        np.array(targets, dtype=np.float64),
        np.arange(n, dtype=np.int64),
    )


def write_csv(ds: Dataset, path, target_column: str = DEFAULT_TARGET_COLUMN) -> None:
    """Write a Dataset back to CSV, exponentiating targets into prices.

    Feature columns are named f0..f{d-1}. ``load_csv(write_csv(ds))``
    recovers the log targets to within exp/log round-off.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{j}" for j in range(ds.d)] + [target_column])
        prices = np.exp(ds.targets)
        for i in range(ds.n):
            writer.writerow(
                [repr(float(v)) for v in ds.features[i]]
                + [repr(float(prices[i]))]
            )


def synthesize(n: int, d: int, noise_sd: float, seed: int) -> Dataset:
    """Deterministic synthetic housing-like dataset.

    Features are standard-normal draws; the log-price is a fixed affine
    function of the features plus a mild per-feature sinusoid plus
    Normal(0, noise_sd²) noise. The generating function depends only on
    ``d``, so two datasets with the same shape share the same ground truth.
    """
    if n < 4:
        raise DataError(f"n must be ≥ 4, got {n}")
    if d < 1:
        raise DataError(f"d must be ≥ 1, got {d}")
    if noise_sd < 0:
        raise DataError(f"noise_sd must be ≥ 0, got {noise_sd}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    feats = rng.standard_normal((n, d))
    w, v, b = _synth_coefficients(d)
    targets = b + feats @ w + np.sin(2.0 * feats) @ v
    if noise_sd > 0:
        targets = targets + rng.normal(0.0, noise_sd, size=n)
    return Dataset(feats, targets, np.arange(n, dtype=np.int64))


def _synth_coefficients(d: int) -> tuple[np.ndarray, np.ndarray, float]:
    # Fixed by d alone: alternating-sign geometrically decaying linear
    # weights, small sinusoidal weights, intercept at a plausible log-price
    # level. The steep decay concentrates signal in a few features the way
    # housing data concentrates in a few strong predictors, which is what
    # lets shallow-tree ensembles fit the stand-in about as well as they
    # fit such data in practice.
    j = np.arange(d, dtype=np.float64)
    w = 1.7 * (0.3**j) * np.where(j % 2 == 0, 1.0, -1.0)
    v = np.where(j < 3, 0.12, 0.02)
    return w, v, 3.0


def split(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Row-level partition by seeded uniform shuffle.

    The train part gets round-half-up(train_fraction · n) rows. Both parts
    are guaranteed at least one row.
    """
    n = ds.n
    if n < 4:
        raise DataError(f"need ≥ 4 rows to split, got {n}")
    n_train = _round_half_up(spec.train_fraction * n)
    if n_train < 1 or n - n_train < 1:
        raise DataError(
            f"split of {n} rows at fraction {spec.train_fraction} leaves an "
            "empty part"
        )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(spec.seed)))
    perm = rng.permutation(n)
    return ds.take(perm[:n_train]), ds.take(perm[n_train:])


def window_from(ds: Dataset, take_fraction: float) -> SlidingWindow:
    """Window over the first floor(take_fraction · n) rows of ``ds``."""
    if not (0.0 < take_fraction < 1.0):
        raise DataError(f"take_fraction must be in (0, 1), got {take_fraction}")
    capacity = int(math.floor(take_fraction * ds.n))
    if capacity < MIN_WINDOW_CAPACITY:
        raise DataError(
            f"window capacity {capacity} < {MIN_WINDOW_CAPACITY} "
            f"(n={ds.n}, take_fraction={take_fraction})"
        )
    return SlidingWindow(
        capacity,
        ds.features[:capacity].copy(),
        ds.targets[:capacity].copy(),
        ds.row_ids[:capacity].copy(),
    )


def push_replace(
    w: SlidingWindow, row: tuple[np.ndarray, float, int]
) -> SlidingWindow:
    """Evict the oldest row, append the new one; length is unchanged.

    The simulation only pushes into full windows, so a non-full window is
    a contract violation here.
    """
    if len(w) != w.capacity:
        raise DataError(
            f"push_replace requires a full window ({len(w)}/{w.capacity} rows)"
        )
    feat_row, target, row_id = row
    feat_row = np.asarray(feat_row, dtype=np.float64)
    if feat_row.shape != (w.features.shape[1],):
        raise DataError(
            f"pushed row has {feat_row.shape} features, expected "
            f"({w.features.shape[1]},)"
        )
    feats = np.empty_like(w.features)
    feats[:-1] = w.features[1:]
    feats[-1] = feat_row
    targs = np.empty_like(w.targets)
    targs[:-1] = w.targets[1:]
    targs[-1] = float(target)
    ids = np.empty_like(w.row_ids)
    ids[:-1] = w.row_ids[1:]
    ids[-1] = int(row_id)
    return SlidingWindow(w.capacity, feats, targs, ids)
