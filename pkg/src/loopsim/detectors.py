"""Feedback-loop detection toolkit.

Three independent lines of evidence, combined by a checklist:

* contraction estimation: sample window pairs, push each through one
  retraining round, and check whether performance distances contract
  (a contraction over rounds is what drives apparent metrics toward a
  fixed point regardless of the real data);
* a frozen baseline monitor: a low-variance model fit once and never
  updated should not improve over rounds unless the incoming data is
  bending toward the deployed model's outputs;
* a Page-Hinkley drift test on the frozen baseline's residuals, catching
  exogenous shifts that degrade it.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import Dataset, SlidingWindow, SplitSpec, push_replace, split
from .metrics import r2
from .models import (
    RidgeModel,
    default_grid,
    fit_ridge,
    grid_search_cv,
    predict,
    train_and_evaluate,
)

__all__ = [
    "DetectorError",
    "DEFAULT_EPSILON_FLOOR",
    "ContractionReport",
    "BaselineMonitorState",
    "PageHinkleyState",
    "ChecklistReport",
    "spearman_rho",
    "make_bootstrap_sampler",
    "round_transition",
    "estimate_contraction",
    "init_baseline_monitor",
    "baseline_update",
    "baseline_mean_abs_residual",
    "baseline_fingerprint",
    "page_hinkley_update",
    "build_checklist",
]


class DetectorError(ValueError):
    """Detector precondition violated."""


# fixed internal seeds: the reference metric and baseline evaluation must
# be the same deterministic functions for every caller
_RF_SPLIT_SEED = 97
_BASELINE_EVAL_SEED = 211
_MIN_PAIRS = 20
# Bootstrap windows of ~150 rows put the spread of R_f (held-out R² of the
# reference ridge) at a median of ~6e-3; pair distances much below that are
# dominated by the reference's own refit variability and only fatten the
# ratio tail, so they are discarded rather than divided by.
DEFAULT_EPSILON_FLOOR = 4e-3
DEFAULT_RHO_THRESHOLD = 0.6
DEFAULT_MIN_ROUNDS = 8
DEFAULT_PH_DELTA = 0.05
DEFAULT_PH_LAMBDA = 50.0


def spearman_rho(x, y) -> float:
    """Spearman rank correlation with average ranks for ties.

    A side with zero rank variance (constant series) carries no trend
    information; returns 0.0 there rather than NaN.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise DetectorError("spearman_rho needs two equal-length 1-d series")
    if x.size < 2:
        raise DetectorError("spearman_rho needs at least 2 points")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        return 0.0
    return float((rx * ry).sum() / denom)


def _average_ranks(a: np.ndarray) -> np.ndarray:
    order = np.argsort(a, kind="stable")
    ranks = np.empty(a.size, dtype=float)
    sa = a[order]
    i = 0
    while i < a.size:
        k = i
        while k + 1 < a.size and sa[k + 1] == sa[i]:
            k += 1
        ranks[order[i : k + 1]] = 0.5 * (i + k) + 1.0
        i = k + 1
    return ranks


# ---------------------------------------------------------------------------
# contraction estimation


@dataclass(frozen=True)
class ContractionReport:
    pairs_sampled: int
    ratios: tuple  # retained d'/d ratios, pair order
    a_hat: float  # `quantile` of ratios; NaN when nothing retained
    contraction_detected: bool
    epsilon_floor: float
    margin: float
    quantile: float
    discarded: int  # pairs with d below epsilon_floor
    inconclusive: bool  # too few informative pairs to decide

    def to_dict(self) -> dict:
        return {
            "pairs_sampled": self.pairs_sampled,
            "a_hat": self.a_hat,
            "contraction_detected": self.contraction_detected,
            "epsilon_floor": self.epsilon_floor,
            "margin": self.margin,
            "quantile": self.quantile,
            "discarded": self.discarded,
            "inconclusive": self.inconclusive,
        }


def make_bootstrap_sampler(
    source: Dataset, size: int, seed: int
) -> Callable[[], Dataset]:
    """Seeded stream of size-`size` bootstrap resamples of ``source``."""
    if size < 1:
        raise DetectorError(f"sampler size must be >= 1, got {size}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))

    def sample() -> Dataset:
        idx = rng.integers(0, source.n, size=size)
        return source.take(idx)

    return sample


def round_transition(
    source: Dataset,
    family: str = "ridge",
    p: float = 1.0,
    s: float = 0.3,
    steps: int | None = None,
    grid=None,
    seed: int = 0,
) -> Callable[[Dataset], Dataset]:
    """One retraining round as a window-to-window map.

    The returned map retrains on its input window, then runs `steps` user
    interactions against rows drawn from ``source``. All randomness
    (splits, CV, drawn rows, user noise) is re-derived from ``seed`` on
    every call, so the map is a deterministic function of its input; two
    different windows face the identical environment.

    ``steps=None`` refreshes the whole window (steps = window size). A
    round that replaces only a sliver of the window is mostly the
    identity map, and identity-mixed maps cannot show their contraction
    against sampling spread; the full-refresh map is the transition the
    contraction conjecture is about.
    """
    if not (0.0 <= p <= 1.0):
        raise DetectorError(f"p must be in [0, 1], got {p}")
    if s < 0.0:
        raise DetectorError(f"s must be >= 0, got {s}")
    if steps is not None and steps < 1:
        raise DetectorError(f"steps must be >= 1, got {steps}")
    resolved_grid = grid if grid is not None else default_grid(family)
    split_seed = int(np.random.SeedSequence((seed, 1)).generate_state(1, np.uint64)[0])
    cv_seed = int(np.random.SeedSequence((seed, 2)).generate_state(1, np.uint64)[0])

    def transition(window_ds: Dataset) -> Dataset:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 3))))
        train, holdout = split(window_ds, SplitSpec(0.75, split_seed))
        params = grid_search_cv(train, resolved_grid, family, cv_seed)
        trained = train_and_evaluate(train, holdout, family, params)
        window = SlidingWindow(
            window_ds.n,
            window_ds.features.copy(),
            window_ds.targets.copy(),
            window_ds.row_ids.copy(),
        )
        noise_sd = np.sqrt(s * trained.sigma_f2)
        n_steps = steps if steps is not None else window_ds.n
        for _ in range(n_steps):
            k = int(rng.integers(0, source.n))
            x_k = source.features[k]
            u = rng.random()
            eps = rng.standard_normal()
            if u < p:
                z = float(predict(trained.model, x_k)[0]) + noise_sd * eps
            else:
                z = float(source.targets[k])
            window = push_replace(window, (x_k, z, int(source.row_ids[k])))
        return window.as_dataset()

    return transition


def default_performance(ds: Dataset) -> float:
    """Reference metric R_f: held-out R² of a fixed-alpha ridge fit under a
    fixed seeded split. Low-variance and fully deterministic in ``ds``."""
    train, holdout = split(ds, SplitSpec(0.75, _RF_SPLIT_SEED))
    model = fit_ridge(train, 1.0)
    return r2(holdout.targets, predict(model, holdout.features))


def estimate_contraction(
    system: Callable[[Dataset], Dataset],
    performance: Callable[[Dataset], float] | None = None,
    sampler: Callable[[], Dataset] | None = None,
    n_pairs: int = 50,
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR,
    margin: float = 0.05,
    quantile: float = 0.95,
) -> ContractionReport:
    """Finite-sample contraction check of a window transition.

    For each sampled pair (x, y): d = |R_f(x) - R_f(y)| and
    d' = |R_f(T(x)) - R_f(T(y))|. Pairs with d below epsilon_floor carry
    no signal and are discarded (counted). A_hat is the `quantile` of the
    retained d'/d ratios; contraction is declared when A_hat < 1 - margin
    and at least half the pairs were informative. A universally
    quantified property cannot be verified from a sample, hence the
    quantile + margin reading and the separate inconclusive state.
    """
    if n_pairs < _MIN_PAIRS:
        raise DetectorError(f"n_pairs must be >= {_MIN_PAIRS}, got {n_pairs}")
    if epsilon_floor <= 0.0:
        raise DetectorError(f"epsilon_floor must be > 0, got {epsilon_floor}")
    if not (0.0 < quantile <= 1.0):
        raise DetectorError(f"quantile must be in (0, 1], got {quantile}")
    if not (0.0 < margin < 1.0):
        raise DetectorError(f"margin must be in (0, 1), got {margin}")
    if sampler is None:
        raise DetectorError("a sampler is required (see make_bootstrap_sampler)")
    r_f = performance if performance is not None else default_performance

    ratios = []
    discarded = 0
    for _ in range(n_pairs):
        x = sampler()
        y = sampler()
        d = abs(r_f(x) - r_f(y))
        if d < epsilon_floor:
            discarded += 1
            continue
        d_next = abs(r_f(system(x)) - r_f(system(y)))
        ratios.append(d_next / d)

    retained = len(ratios)
    inconclusive = retained < n_pairs / 2
    if retained == 0:
        a_hat = float("nan")
    else:
        a_hat = float(np.quantile(np.asarray(ratios), quantile))
    detected = (not inconclusive) and a_hat < 1.0 - margin
    return ContractionReport(
        pairs_sampled=n_pairs,
        ratios=tuple(ratios),
        a_hat=a_hat,
        contraction_detected=detected,
        epsilon_floor=epsilon_floor,
        margin=margin,
        quantile=quantile,
        discarded=discarded,
        inconclusive=inconclusive,
    )


# ---------------------------------------------------------------------------
# frozen-baseline monitor


@dataclass(frozen=True)
class BaselineMonitorState:
    model: RidgeModel  # frozen at init, never refit
    fingerprint: str  # sha256 of the frozen parameters
    r2_series: tuple = ()
    rho: float = float("nan")  # Spearman of (round index, R²)
    alarm: bool = False  # current-trend alarm
    first_alarm_round: int | None = None
    rho_threshold: float = DEFAULT_RHO_THRESHOLD
    min_rounds: int = DEFAULT_MIN_ROUNDS
    eval_split_seed: int = _BASELINE_EVAL_SEED


def baseline_fingerprint(model: RidgeModel) -> str:
    h = hashlib.sha256()
    h.update(repr(float(model.alpha)).encode())
    h.update(repr(float(model.b)).encode())
    h.update(np.ascontiguousarray(model.theta, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(model.standardizer.means, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(model.standardizer.sds, dtype=np.float64).tobytes())
    return h.hexdigest()


def init_baseline_monitor(
    round1_train: Dataset,
    rho_threshold: float = DEFAULT_RHO_THRESHOLD,
    min_rounds: int = DEFAULT_MIN_ROUNDS,
    eval_split_seed: int = _BASELINE_EVAL_SEED,
) -> BaselineMonitorState:
    """Fit the frozen baseline (ridge, fixed alpha 1.0) once on the
    round-1 training split."""
    if min_rounds < 2:
        raise DetectorError(f"min_rounds must be >= 2, got {min_rounds}")
    model = fit_ridge(round1_train, 1.0)
    return BaselineMonitorState(
        model=model,
        fingerprint=baseline_fingerprint(model),
        rho_threshold=rho_threshold,
        min_rounds=min_rounds,
        eval_split_seed=eval_split_seed,
    )


def _baseline_eval_slice(state: BaselineMonitorState, window: Dataset) -> Dataset:
    _, holdout = split(window, SplitSpec(0.75, state.eval_split_seed))
    return holdout


def baseline_update(
    state: BaselineMonitorState, round_window: Dataset
) -> BaselineMonitorState:
    """Score the frozen baseline on this round's window; re-test the trend.

    The model inside ``state`` is never touched; only the series and the
    trend statistic change.
    """
    holdout = _baseline_eval_slice(state, round_window)
    value = r2(holdout.targets, predict(state.model, holdout.features))
    series = state.r2_series + (value,)
    if len(series) >= 2:
        rho = spearman_rho(np.arange(1, len(series) + 1), np.asarray(series))
    else:
        rho = float("nan")
    alarm = len(series) >= state.min_rounds and rho > state.rho_threshold
    first = state.first_alarm_round
    if alarm and first is None:
        first = len(series)
    return replace(state, r2_series=series, rho=rho, alarm=alarm, first_alarm_round=first)


def baseline_mean_abs_residual(
    state: BaselineMonitorState, round_window: Dataset
) -> float:
    """Mean |residual| of the frozen baseline on the round's evaluation
    slice; the statistic the drift detector consumes."""
    holdout = _baseline_eval_slice(state, round_window)
    preds = predict(state.model, holdout.features)
    return float(np.mean(np.abs(holdout.targets - preds)))


# ---------------------------------------------------------------------------
# Page-Hinkley drift test


@dataclass(frozen=True)
class PageHinkleyState:
    delta: float = DEFAULT_PH_DELTA  # tolerated drift per observation
    lam: float = DEFAULT_PH_LAMBDA  # alarm threshold on m_t - M_t
    count: int = 0
    mean: float = 0.0  # running mean of observations
    m_t: float = 0.0  # cumulative deviation
    min_m: float = 0.0  # running minimum M_t
    alarm: bool = False  # latched
    first_alarm_index: int | None = None

    def __post_init__(self):
        if self.delta < 0.0:
            raise DetectorError(f"delta must be >= 0, got {self.delta}")
        if self.lam <= 0.0:
            raise DetectorError(f"lambda must be > 0, got {self.lam}")


def page_hinkley_update(state: PageHinkleyState, value: float) -> PageHinkleyState:
    """Standard increase-detecting Page-Hinkley step; the alarm latches."""
    count = state.count + 1
    mean = state.mean + (value - state.mean) / count
    m_t = state.m_t + (value - mean - state.delta)
    min_m = min(state.min_m, m_t)
    alarm = state.alarm or (m_t - min_m > state.lam)
    first = state.first_alarm_index
    if alarm and first is None:
        first = count
    return replace(
        state,
        count=count,
        mean=mean,
        m_t=m_t,
        min_m=min_m,
        alarm=alarm,
        first_alarm_index=first,
    )


# ---------------------------------------------------------------------------
# checklist


@dataclass(frozen=True)
class ChecklistReport:
    q1_data_from_influenced_users: bool
    q1_rationale: str
    q2_p_gt_half_and_s_lt_one: bool
    p: float
    s: float
    q3_contraction: ContractionReport | None
    baseline_alarm: bool
    drift_alarm: bool
    loop_indicated: bool = field(init=False)
    verdict: str = field(init=False)

    def __post_init__(self):
        contraction = (
            self.q3_contraction is not None
            and self.q3_contraction.contraction_detected
        )
        indicated = (
            (self.q1_data_from_influenced_users and self.q2_p_gt_half_and_s_lt_one)
            or contraction
            or self.baseline_alarm
            or self.drift_alarm
        )
        object.__setattr__(self, "loop_indicated", indicated)
        object.__setattr__(
            self, "verdict", "loop indicated" if indicated else "no loop indicated"
        )

    def to_dict(self) -> dict:
        return {
            "q1_data_from_influenced_users": self.q1_data_from_influenced_users,
            "q1_rationale": self.q1_rationale,
            "q2_p_gt_half_and_s_lt_one": self.q2_p_gt_half_and_s_lt_one,
            "p": self.p,
            "s": self.s,
            "q3_contraction": (
                self.q3_contraction.to_dict() if self.q3_contraction else None
            ),
            "baseline_alarm": self.baseline_alarm,
            "drift_alarm": self.drift_alarm,
            "loop_indicated": self.loop_indicated,
            "verdict": self.verdict,
        }


def build_checklist(
    q1: bool,
    q1_rationale: str,
    p: float,
    s: float,
    contraction: ContractionReport | None = None,
    baseline_alarm: bool = False,
    drift_alarm: bool = False,
) -> ChecklistReport:
    """Combine declared facts and detector evidence into one verdict.

    q2 is computed from the declared (p, s): a loop needs most users
    adopting estimates (p > 0.5) whose noise is below the model's own
    error (s < 1). Any single line of hard evidence also suffices; a
    negative contraction result is only "no contraction evidence", so it
    never suppresses the other signals.
    """
    return ChecklistReport(
        q1_data_from_influenced_users=bool(q1),
        q1_rationale=q1_rationale,
        q2_p_gt_half_and_s_lt_one=(p > 0.5 and s < 1.0),
        p=p,
        s=s,
        q3_contraction=contraction,
        baseline_alarm=baseline_alarm,
        drift_alarm=drift_alarm,
    )
