"""Closed-loop retraining experiment engine.

A sliding window starts on the oldest fraction of the source data. Each
step the current model prices one unseen row; the simulated user either
adheres (samples a value around the prediction) or keeps the true value,
and the outcome replaces the oldest window row. Every M steps the model
is re-tuned and refit on the current window, and its held-out metrics
become the round record. Replaying user-influenced targets into training
data is exactly the feedback mechanism under study.
"""

from __future__ import annotations

import hashlib
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset, SplitSpec, push_replace, split, window_from
from .models import (
    HyperGrid,
    TrainedModel,
    default_grid,
    grid_search_cv,
    predict,
    train_and_evaluate,
)

__all__ = [
    "SimulationError",
    "UserDecisionModel",
    "SimulationConfig",
    "RoundRecord",
    "StepRecord",
    "SimulationResult",
    "round_seeds",
    "combo_seed",
    "sample_user_decision",
    "run_simulation",
    "sweep",
]


class SimulationError(RuntimeError):
    """Simulation preconditions violated or aborted mid-run."""


# domain tags keeping the per-run derived seed streams disjoint
_TAG_USER = 1
_TAG_SPLIT = 2
_TAG_CV = 3


def _derive_seed(*parts: int) -> int:
    """Deterministic child seed from a tuple of integer coordinates."""
    return int(np.random.SeedSequence(parts).generate_state(1, np.uint64)[0])


def round_seeds(master_seed: int, round_no: int) -> tuple[int, int]:
    """(split_seed, cv_seed) used when retraining ``round_no``.

    Public so observers (baseline monitor setup, audits) can reconstruct
    the exact train/holdout split a round used.
    """
    return (
        _derive_seed(master_seed, _TAG_SPLIT, round_no),
        _derive_seed(master_seed, _TAG_CV, round_no),
    )


@dataclass(frozen=True)
class UserDecisionModel:
    """Simulated user: adopts the system's estimate with probability p,
    sampling it from Normal(prediction, s * sigma_f2)."""

    p: float
    s: float
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise SimulationError(f"p must be in [0, 1], got {self.p}")
        if self.s < 0.0:
            raise SimulationError(f"s must be >= 0, got {self.s}")
        if self.seed < 0:
            raise SimulationError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class SimulationConfig:
    model_family: str
    user: UserDecisionModel
    steps_per_round: int = 20  # M
    window_fraction: float = 0.3
    train_fraction: float = 0.75
    grid: HyperGrid | None = None  # None -> family default
    master_seed: int = 0

    def __post_init__(self):
        if self.model_family not in ("ridge", "gbr"):
            raise SimulationError(
                f"model_family must be 'ridge' or 'gbr', got {self.model_family!r}"
            )
        if self.steps_per_round < 1:
            raise SimulationError(
                f"steps_per_round must be >= 1, got {self.steps_per_round}"
            )
        if not (0.0 < self.window_fraction < 1.0):
            raise SimulationError(
                f"window_fraction must be in (0, 1), got {self.window_fraction}"
            )
        if not (0.0 < self.train_fraction < 1.0):
            raise SimulationError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )
        if self.master_seed < 0:
            raise SimulationError(
                f"master_seed must be non-negative, got {self.master_seed}"
            )

    def resolved_grid(self) -> HyperGrid:
        return self.grid if self.grid is not None else default_grid(self.model_family)


@dataclass(frozen=True)
class RoundRecord:
    round: int  # 1-based, strictly increasing
    r2: float
    mae: float
    sigma_f2: float
    chosen_hyperparams: dict
    steps_consumed: int  # steps since the previous retrain (0 for round 1)
    partial: bool  # final round trained on fewer than M fresh steps


@dataclass(frozen=True)
class StepRecord:
    step: int  # 0-based interaction counter
    row_id: int  # source row priced at this step
    prediction: float  # model estimate, log-price units
    z: float  # user decision entering the window, log-price units
    adhered: bool
    round_used: int  # round whose model produced the prediction


@dataclass(frozen=True)
class SimulationResult:
    config: SimulationConfig
    rounds: tuple[RoundRecord, ...]
    steps: tuple[StepRecord, ...]
    final_window: Dataset


def sample_user_decision(
    prediction: float,
    true_log_y: float,
    trained: TrainedModel,
    user: UserDecisionModel,
    rng: np.random.Generator,
) -> tuple[float, bool]:
    """One user interaction.

    Consumes exactly two draws (uniform for usage, normal for the price)
    regardless of the adherence outcome, so trajectories with different p
    stay step-aligned under a shared stream.
    """
    if trained.sigma_f2 < 0.0:
        raise SimulationError(f"sigma_f2 must be >= 0, got {trained.sigma_f2}")
    u = rng.random()
    eps = rng.standard_normal()
    if u < user.p:
        return prediction + np.sqrt(user.s * trained.sigma_f2) * eps, True
    return float(true_log_y), False


def _retrain(
    window_ds: Dataset, config: SimulationConfig, round_no: int
) -> tuple[TrainedModel, dict]:
    """Split / tune / fit / evaluate cycle for one round.

    Split and CV randomness derive from (master_seed, round); re-running a
    round on the same window reproduces it exactly.
    """
    split_seed, cv_seed = round_seeds(config.master_seed, round_no)
    train, holdout = split(window_ds, SplitSpec(config.train_fraction, split_seed))
    params = grid_search_cv(train, config.resolved_grid(), config.model_family, cv_seed)
    trained = train_and_evaluate(train, holdout, config.model_family, params)
    return trained, params


def run_simulation(
    ds: Dataset, config: SimulationConfig, on_round=None
) -> SimulationResult:
    """Run the feedback loop over every unseen source row.

    The window holds floor(window_fraction * n) rows; steps consume the
    remaining rows in source order, so the run makes exactly
    n - floor(window_fraction * n) steps and ceil(steps / M) + 1 rounds
    (a final partial round covers any tail shorter than M).

    ``on_round(record, window_ds, trained)``, when given, fires after each
    retrain with the window the round trained on; runtime detectors hook
    in this way without the engine knowing about them.
    """
    window = window_from(ds, config.window_fraction)
    capacity = window.capacity
    n_steps = ds.n - capacity
    if n_steps < 1:
        raise SimulationError(
            f"window_fraction {config.window_fraction} leaves no rows to consume "
            f"(n={ds.n}, window={capacity})"
        )

    user_rng = np.random.Generator(
        np.random.PCG64(
            np.random.SeedSequence(
                (config.master_seed, _TAG_USER, config.user.seed)
            )
        )
    )

    rounds: list[RoundRecord] = []
    steps: list[StepRecord] = []
    m = config.steps_per_round

    window_ds = window.as_dataset()
    trained, params = _retrain(window_ds, config, 1)
    rounds.append(
        RoundRecord(
            round=1,
            r2=trained.holdout_r2,
            mae=trained.holdout_mae,
            sigma_f2=trained.sigma_f2,
            chosen_hyperparams=params,
            steps_consumed=0,
            partial=False,
        )
    )
    if on_round is not None:
        on_round(rounds[-1], window_ds, trained)

    since_retrain = 0
    for t in range(n_steps):
        k = capacity + t  # next unseen source row
        x_k = ds.features[k]
        prediction = float(predict(trained.model, x_k)[0])
        z, adhered = sample_user_decision(
            prediction, ds.targets[k], trained, config.user, user_rng
        )
        if not np.isfinite(z) or not np.isfinite(prediction):
            raise SimulationError(
                f"non-finite value entering the window at step {t} "
                f"(prediction={prediction}, z={z})"
            )
        steps.append(
            StepRecord(
                step=t,
                row_id=int(ds.row_ids[k]),
                prediction=prediction,
                z=z,
                adhered=adhered,
                round_used=rounds[-1].round,
            )
        )
        window = push_replace(window, (x_k, z, int(ds.row_ids[k])))
        since_retrain += 1

        if since_retrain == m:
            round_no = rounds[-1].round + 1
            window_ds = window.as_dataset()
            trained, params = _retrain(window_ds, config, round_no)
            rounds.append(
                RoundRecord(
                    round=round_no,
                    r2=trained.holdout_r2,
                    mae=trained.holdout_mae,
                    sigma_f2=trained.sigma_f2,
                    chosen_hyperparams=params,
                    steps_consumed=m,
                    partial=False,
                )
            )
            if on_round is not None:
                on_round(rounds[-1], window_ds, trained)
            since_retrain = 0

    if since_retrain > 0:
        round_no = rounds[-1].round + 1
        window_ds = window.as_dataset()
        trained, params = _retrain(window_ds, config, round_no)
        rounds.append(
            RoundRecord(
                round=round_no,
                r2=trained.holdout_r2,
                mae=trained.holdout_mae,
                sigma_f2=trained.sigma_f2,
                chosen_hyperparams=params,
                steps_consumed=since_retrain,
                partial=True,
            )
        )
        if on_round is not None:
            on_round(rounds[-1], window_ds, trained)

    return SimulationResult(
        config=config,
        rounds=tuple(rounds),
        steps=tuple(steps),
        final_window=window.as_dataset(),
    )


def combo_seed(master_seed: int, p: float, s: float, m: int, family: str) -> int:
    """Per-combination master seed; a content hash, so the result for a
    combination is independent of sweep ordering."""
    key = f"{master_seed}|{repr(float(p))}|{repr(float(s))}|{m}|{family}"
    digest = hashlib.sha256(key.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def _one_combo(args) -> SimulationResult:
    ds, config, p, s, m, family = args
    combo_config = replace(
        config,
        model_family=family,
        user=replace(config.user, p=p, s=s),
        steps_per_round=m,
        master_seed=combo_seed(config.master_seed, p, s, m, family),
    )
    try:
        return run_simulation(ds, combo_config)
    except Exception as exc:
        raise SimulationError(
            f"sweep combination p={p}, s={s}, M={m}, family={family} failed: {exc}"
        ) from exc


def sweep(
    ds: Dataset,
    config: SimulationConfig,
    p_values=None,
    s_values=None,
    m_values=None,
    families=None,
    workers: int | None = None,
) -> list[SimulationResult]:
    """One independent run per (p, s, M, family) combination.

    Results come back in combination order (p varies slowest). Seeds are
    content-derived per combination, so sequential and parallel execution
    return identical results.
    """
    p_values = tuple(p_values) if p_values is not None else (config.user.p,)
    s_values = tuple(s_values) if s_values is not None else (config.user.s,)
    m_values = tuple(m_values) if m_values is not None else (config.steps_per_round,)
    families = tuple(families) if families is not None else (config.model_family,)
    if not (p_values and s_values and m_values and families):
        raise SimulationError("sweep ranges must be non-empty")

    combos = [
        (ds, config, p, s, m, family)
        for p, s, m, family in itertools.product(
            p_values, s_values, m_values, families
        )
    ]
    if workers is not None and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_one_combo, combos))
    return [_one_combo(c) for c in combos]
