"""Regression models: standardized ridge and Huber-loss gradient-boosted
MAE trees, plus grid-search cross-validation.

Both model families share the ``predict`` contract and are deterministic
for fixed inputs and hyperparameters. Ridge standardizes its inputs;
trees consume raw features since axis-aligned splits are scale-invariant.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import _tree_core as tc
from .data import Dataset, DataError
from .metrics import mae, mse, r2

__all__ = [
    "ModelError",
    "SingularSystemError",
    "LossIncreaseError",
    "Standardizer",
    "RidgeModel",
    "RegressionTree",
    "GBRModel",
    "HyperGrid",
    "TrainedModel",
    "fit_standardizer",
    "fit_ridge",
    "fit_tree_mae",
    "fit_gbr",
    "predict",
    "grid_search_cv",
    "train_and_evaluate",
    "default_grid",
]

GBR_FIXED_MIN_SAMPLES_LEAF = 5
GBR_FIXED_DELTA_QUANTILE = 0.9


class ModelError(ValueError):
    """Model preconditions violated."""


class SingularSystemError(ModelError):
    """Unpenalized system is rank-deficient; no unique solution."""


class LossIncreaseError(RuntimeError):
    """Training Huber loss increased during boosting - implementation bug."""


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    sds: np.ndarray

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.sds

    def inverse_transform(self, Xs: np.ndarray) -> np.ndarray:
        return Xs * self.sds + self.means


def fit_standardizer(features: np.ndarray) -> Standardizer:
    """Column means and population standard deviations.

    Constant columns get sd = 1 so that standardizing them yields zeros
    instead of dividing by zero.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ModelError("standardizer needs a matrix with at least 2 rows")
    means = X.mean(axis=0)
    sds = X.std(axis=0)
    sds = np.where(sds == 0.0, 1.0, sds)
    return Standardizer(means, sds)


@dataclass(frozen=True)
class RidgeModel:
    theta: np.ndarray  # coefficients in standardized feature space
    b: float  # intercept, log-price units
    standardizer: Standardizer
    alpha: float

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.standardizer.transform(X) @ self.theta + self.b


def fit_ridge(train: Dataset, alpha: float) -> RidgeModel:
    """Closed-form ridge on standardized features, intercept unpenalized.

    Solves (XᵀX + αI)θ = Xᵀ(y - mean(y)) with standardized X; the
    intercept is exactly mean(y) because standardized columns have zero
    mean.
    """
    if alpha < 0:
        raise ModelError(f"alpha must be ≥ 0, got {alpha}")
    n, d = train.features.shape
    if n < d + 1:
        raise ModelError(f"ridge needs ≥ d+1 = {d + 1} rows, got {n}")
    std = fit_standardizer(train.features)
    Xs = std.transform(train.features)
    b = float(train.targets.mean())
    yc = train.targets - b
    gram = Xs.T @ Xs
    if alpha == 0.0 and np.linalg.matrix_rank(Xs) < d:
        raise SingularSystemError(
            "alpha=0 with rank-deficient features: system is singular"
        )
    theta = np.linalg.solve(gram + alpha * np.eye(d), Xs.T @ yc)
    return RidgeModel(theta, b, std, float(alpha))


@dataclass(frozen=True)
class RegressionTree:
    """Binary regression tree stored as flat node arrays.

    ``feature[k] == -1`` marks a leaf whose prediction is ``value[k]``;
    internal nodes route rows with x[feature] <= threshold to ``left``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray  # training rows that reached each node
    max_depth: int
    min_samples_leaf: int

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        tc.tree_predict(
            self.feature, self.threshold, self.left, self.right, self.value, X, out
        )
        return out

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index for each row."""
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.int64)
        tc.tree_apply(self.feature, self.threshold, self.left, self.right, X, out)
        return out

    def leaf_depths(self) -> list[int]:
        depths = []
        stack = [(0, 0)]
        while stack:
            node, depth = stack.pop()
            if self.feature[node] == tc.LEAF:
                depths.append(depth)
            else:
                stack.append((int(self.left[node]), depth + 1))
                stack.append((int(self.right[node]), depth + 1))
        return depths


def _fit_tree_arrays(
    X: np.ndarray, y: np.ndarray, max_depth: int, min_samples_leaf: int
) -> RegressionTree:
    idx = np.arange(X.shape[0], dtype=np.int64)
    feature, threshold, left, right, value, count, n_nodes = tc.build_tree(
        X, y, idx, max_depth, min_samples_leaf
    )
    return RegressionTree(
        feature, threshold, left, right, value, count, max_depth, min_samples_leaf
    )


def fit_tree_mae(
    train: Dataset, max_depth: int, min_samples_leaf: int
) -> RegressionTree:
    """Greedy exact tree: splits minimize the children's total absolute
    deviation about their medians; leaves predict the median."""
    if max_depth < 1:
        raise ModelError(f"max_depth must be ≥ 1, got {max_depth}")
    if min_samples_leaf < 1:
        raise ModelError(f"min_samples_leaf must be ≥ 1, got {min_samples_leaf}")
    if train.n < 2 * min_samples_leaf:
        raise ModelError(
            f"need ≥ 2·min_samples_leaf = {2 * min_samples_leaf} rows, got {train.n}"
        )
    X = np.ascontiguousarray(train.features, dtype=np.float64)
    y = np.ascontiguousarray(train.targets, dtype=np.float64)
    return _fit_tree_arrays(X, y, max_depth, min_samples_leaf)


@dataclass(frozen=True)
class GBRModel:
    initial_value: float
    trees: tuple[RegressionTree, ...]
    learning_rate: float
    huber_delta_quantile: float
    n_estimators: int
    d: int  # training feature count
    # mean training Huber loss around each boosting step, measured with
    # that step's delta: column 0 before the tree update, column 1 after
    loss_path: np.ndarray
    # packed node slabs (feature, threshold, left, right, value, n_nodes)
    # mirroring ``trees``; lets predict walk the ensemble in one call
    _forest: tuple | None = field(default=None, repr=False)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        if self._forest is not None:
            f2, t2, l2, r2_, v2, nn = self._forest
            tc.forest_predict(
                f2, t2, l2, r2_, v2, nn,
                self.initial_value, self.learning_rate, X, out,
            )
            return out
        # hand-assembled models carry no slabs; walk tree by tree
        out.fill(self.initial_value)
        buf = np.empty(X.shape[0])
        for tree in self.trees:
            tc.tree_predict(
                tree.feature, tree.threshold, tree.left, tree.right, tree.value, X, buf
            )
            out += self.learning_rate * buf
        return out


def _validate_gbr(
    n_rows: int,
    n_estimators: int,
    learning_rate: float,
    max_depth: int,
    min_samples_leaf: int,
    huber_delta_quantile: float,
) -> None:
    if n_estimators < 0:
        raise ModelError(f"n_estimators must be ≥ 0, got {n_estimators}")
    if not (0.0 < learning_rate <= 1.0):
        raise ModelError(f"learning_rate must be in (0, 1], got {learning_rate}")
    if max_depth < 1:
        raise ModelError(f"max_depth must be ≥ 1, got {max_depth}")
    if min_samples_leaf < 1:
        raise ModelError(f"min_samples_leaf must be ≥ 1, got {min_samples_leaf}")
    if not (0.0 < huber_delta_quantile < 1.0):
        raise ModelError(
            f"huber_delta_quantile must be in (0, 1), got {huber_delta_quantile}"
        )
    if n_rows < 2 * min_samples_leaf:
        raise ModelError(
            f"need ≥ 2·min_samples_leaf = {2 * min_samples_leaf} rows, got {n_rows}"
        )


def fit_gbr(
    train: Dataset,
    n_estimators: int,
    learning_rate: float,
    max_depth: int,
    min_samples_leaf: int,
    huber_delta_quantile: float = GBR_FIXED_DELTA_QUANTILE,
) -> GBRModel:
    """Gradient boosting with Huber loss and MAE-criterion trees.

    Each iteration re-estimates the Huber width delta as the configured
    quantile of |residuals|, fits a tree to the clipped-gradient
    pseudo-residuals, then re-fits every leaf to the exact Huber location
    of the true residuals it holds; with learning_rate in (0, 1] this
    makes the training loss provably non-increasing within each step,
    which is asserted.
    """
    _validate_gbr(
        train.n, n_estimators, learning_rate, max_depth,
        min_samples_leaf, huber_delta_quantile,
    )
    X = np.ascontiguousarray(train.features, dtype=np.float64)
    y = np.ascontiguousarray(train.targets, dtype=np.float64)
    no_val = np.empty((0, train.d))
    no_ckpts = np.empty(0, np.int64)
    (
        feat2, thr2, left2, right2, val2, cnt2, nn,
        init, loss_path, _pred, _val, status, bad_iter,
    ) = tc.gbr_core(
        X, y, no_val, no_ckpts,
        n_estimators, float(learning_rate), max_depth,
        min_samples_leaf, float(huber_delta_quantile), True,
    )
    if status == tc.GBR_LOSS_INCREASE:
        raise LossIncreaseError(
            f"training Huber loss rose at iteration {bad_iter}: "
            f"{loss_path[bad_iter, 0]} -> {loss_path[bad_iter, 1]}"
        )
    trees = tuple(
        RegressionTree(
            feat2[t, : nn[t]].copy(),
            thr2[t, : nn[t]].copy(),
            left2[t, : nn[t]].copy(),
            right2[t, : nn[t]].copy(),
            val2[t, : nn[t]].copy(),
            cnt2[t, : nn[t]].copy(),
            max_depth,
            min_samples_leaf,
        )
        for t in range(n_estimators)
    )
    return GBRModel(
        float(init),
        trees,
        float(learning_rate),
        float(huber_delta_quantile),
        n_estimators,
        train.d,
        loss_path,
        _forest=(feat2, thr2, left2, right2, val2, nn),
    )


def predict(model, features: np.ndarray) -> np.ndarray:
    """Predictions in log-price units, one per input row."""
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if isinstance(model, RidgeModel):
        if X.shape[1] != model.theta.shape[0]:
            raise ModelError(
                f"dimension mismatch: model has {model.theta.shape[0]} features, "
                f"input has {X.shape[1]}"
            )
        return model.predict(X)
    if isinstance(model, GBRModel):
        if X.shape[1] != model.d:
            raise ModelError(
                f"dimension mismatch: model has {model.d} features, "
                f"input has {X.shape[1]}"
            )
        return model.predict(X)
    raise ModelError(f"unknown model type: {type(model).__name__}")


@dataclass(frozen=True)
class HyperGrid:
    """Named candidate lists; iteration is the cartesian product in
    declaration order (first name varies slowest)."""

    values: dict[str, tuple]
    cv_folds: int = 5

    def __post_init__(self):
        if self.cv_folds < 2:
            raise ModelError(f"cv_folds must be ≥ 2, got {self.cv_folds}")
        if not self.values or any(len(v) == 0 for v in self.values.values()):
            raise ModelError("hyperparameter grid is empty")
        object.__setattr__(
            self, "values", {k: tuple(v) for k, v in self.values.items()}
        )

    def points(self):
        names = list(self.values)
        for combo in itertools.product(*(self.values[n] for n in names)):
            yield dict(zip(names, combo))


def default_grid(family: str) -> HyperGrid:
    if family == "ridge":
        return HyperGrid({"alpha": (0.01, 0.1, 1.0, 10.0, 100.0)})
    if family == "gbr":
        return HyperGrid(
            {
                "n_estimators": (50, 100),
                "max_depth": (2, 3),
                "learning_rate": (0.05, 0.1),
            }
        )
    raise ModelError(f"unknown model family: {family!r}")


def _fit_family(train: Dataset, family: str, params: dict):
    if family == "ridge":
        return fit_ridge(train, alpha=params["alpha"])
    if family == "gbr":
        return fit_gbr(
            train,
            n_estimators=params["n_estimators"],
            learning_rate=params["learning_rate"],
            max_depth=params["max_depth"],
            min_samples_leaf=params.get(
                "min_samples_leaf", GBR_FIXED_MIN_SAMPLES_LEAF
            ),
            huber_delta_quantile=params.get(
                "huber_delta_quantile", GBR_FIXED_DELTA_QUANTILE
            ),
        )
    raise ModelError(f"unknown model family: {family!r}")


def _fold_slices(n: int, k: int) -> list[tuple[int, int]]:
    # first n % k folds get one extra row
    base = n // k
    extra = n % k
    bounds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


def _gbr_cv_scores(
    points: list[dict], fold_data: list[tuple], k: int
) -> list[float]:
    """Mean validation R² per grid point, scoring every n_estimators value
    of a ladder from one boosting run.

    Grid points that differ only in n_estimators describe prefixes of the
    same tree sequence, so each (other-hyperparameters, fold) pair costs a
    single fit with checkpoint snapshots.
    """
    groups: dict[tuple, list[tuple[int, int]]] = {}
    for i, params in enumerate(points):
        rest = {name: v for name, v in params.items() if name != "n_estimators"}
        key = tuple(sorted(rest.items()))
        groups.setdefault(key, []).append((i, int(params["n_estimators"])))

    scores = [0.0] * len(points)
    for key, members in groups.items():
        cfg = dict(key)
        ladder = sorted({n_est for _, n_est in members})
        ckpts = np.asarray(ladder, dtype=np.int64)
        nmax = ladder[-1]
        lr = float(cfg["learning_rate"])
        depth = int(cfg["max_depth"])
        min_leaf = int(cfg.get("min_samples_leaf", GBR_FIXED_MIN_SAMPLES_LEAF))
        quant = float(cfg.get("huber_delta_quantile", GBR_FIXED_DELTA_QUANTILE))
        per_fold = np.empty((k, len(ladder)))
        for fi, (Xtr, ytr, Xval, yval) in enumerate(fold_data):
            _validate_gbr(Xtr.shape[0], nmax, lr, depth, min_leaf, quant)
            out = tc.gbr_core(
                Xtr, ytr, Xval, ckpts, nmax, lr, depth, min_leaf, quant, False
            )
            val_out, status, bad_iter = out[10], out[11], out[12]
            if status == tc.GBR_LOSS_INCREASE:
                raise LossIncreaseError(
                    f"training Huber loss rose at iteration {bad_iter} "
                    f"during cross-validation"
                )
            for j in range(len(ladder)):
                per_fold[fi, j] = r2(yval, val_out[j])
        for i, n_est in members:
            scores[i] = float(per_fold[:, ladder.index(n_est)].mean())
    return scores


def grid_search_cv(
    train: Dataset, grid: HyperGrid, model_family: str, seed: int
) -> dict:
    """Mean validation R² over seeded contiguous folds; returns the argmax
    grid point, ties broken by earliest iteration order."""
    n = train.n
    k = grid.cv_folds
    if n < 2 * k:
        raise ModelError(f"grid search needs ≥ {2 * k} rows for {k} folds, got {n}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    perm = rng.permutation(n)
    folds = _fold_slices(n, k)
    points = list(grid.points())

    if model_family == "gbr":
        fold_data = []
        for lo, hi in folds:
            val_idx = perm[lo:hi]
            fit_idx = np.concatenate([perm[:lo], perm[hi:]])
            fold_data.append(
                (
                    np.ascontiguousarray(train.features[fit_idx]),
                    np.ascontiguousarray(train.targets[fit_idx]),
                    np.ascontiguousarray(train.features[val_idx]),
                    train.targets[val_idx],
                )
            )
        scores = _gbr_cv_scores(points, fold_data, k)
    else:
        scores = []
        for params in points:
            fold_scores = np.empty(k)
            for i, (lo, hi) in enumerate(folds):
                val_idx = perm[lo:hi]
                fit_idx = np.concatenate([perm[:lo], perm[hi:]])
                model = _fit_family(train.take(fit_idx), model_family, params)
                preds = predict(model, train.features[val_idx])
                fold_scores[i] = r2(train.targets[val_idx], preds)
            scores.append(float(fold_scores.mean()))

    best_i = 0
    for i in range(1, len(points)):
        if scores[i] > scores[best_i]:
            best_i = i
    return points[best_i]


@dataclass(frozen=True)
class TrainedModel:
    model: object  # RidgeModel | GBRModel
    sigma_f2: float  # held-out MSE, the user-decision sampling variance
    holdout_r2: float
    holdout_mae: float


def train_and_evaluate(
    train: Dataset, holdout: Dataset, family: str, hyperparams: dict
) -> TrainedModel:
    """Fit on ``train``, score on ``holdout``; the held-out MSE becomes
    sigma_f2."""
    if holdout.n == 0:
        raise ModelError("holdout must be non-empty")
    model = _fit_family(train, family, hyperparams)
    preds = predict(model, holdout.features)
    return TrainedModel(
        model=model,
        sigma_f2=mse(holdout.targets, preds),
        holdout_r2=r2(holdout.targets, preds),
        holdout_mae=mae(holdout.targets, preds),
    )
