"""Command-line front end: config parsing, orchestration, result emission.

Subcommands: `run` (single simulation), `sweep` (grid of simulations),
`detect` (contraction estimation + checklist, no simulation). All file
output is deterministic byte-for-byte for a fixed effective config:
floats are serialized with repr, which round-trips float64 exactly.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

from . import detectors as det
from .data import Dataset, DataError, SplitSpec, load_csv, split, synthesize
from .loop_sim import (
    RoundRecord,
    SimulationConfig,
    SimulationError,
    SimulationResult,
    UserDecisionModel,
    combo_seed,
    round_seeds,
    run_simulation,
)
from .metrics import ZeroVarianceError
from .models import LossIncreaseError, ModelError
from .svg import Panel, Series, render_chart

__all__ = ["parse_config", "RunConfig", "ConfigError", "main", "read_metrics_csv"]

METRICS_HEADER = "run_id,round,partial,model,p,s,M,seed,r2,mae,sigma2"
STEPS_HEADER = "run_id,step,row_id,prediction,z,adhered"


class ConfigError(ValueError):
    """Bad key, bad value, or inconsistent configuration."""


def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError(f"expected true/false, got {raw!r}")


def _parse_float_list(raw: str) -> tuple:
    return tuple(float(v.strip()) for v in raw.split(","))


def _parse_int_list(raw: str) -> tuple:
    return tuple(int(v.strip()) for v in raw.split(","))


def _parse_str_list(raw: str) -> tuple:
    return tuple(v.strip() for v in raw.split(","))


# key -> (parser, default, help). The single source of truth for the config
# file format, flag overrides, --help text, and the summary.json echo.
SCHEMA = {
    "data.csv": (str, None, "path to a CSV dataset (excludes synthetic keys)"),
    "data.target": (str, "MEDV", "target column name for data.csv"),
    "data.n": (int, 506, "synthetic dataset rows"),
    "data.d": (int, 13, "synthetic dataset features"),
    "data.noise_sd": (float, 0.2, "synthetic dataset noise standard deviation"),
    "data.seed": (int, 0, "synthetic dataset seed"),
    "user.p": (float, 0.7, "usage probability p in [0,1]"),
    "user.s": (float, 0.3, "adherence variance multiplier s >= 0"),
    "user.seed": (int, 0, "user-decision stream seed"),
    "sim.model": (str, "ridge", "model family: ridge | gbr"),
    "sim.m": (int, 20, "steps per retraining round M"),
    "sim.window_fraction": (float, 0.3, "window size as fraction of n"),
    "sim.train_fraction": (float, 0.75, "per-round train split fraction"),
    "sim.seed": (int, 0, "master seed for the simulation"),
    "sweep.p": (_parse_float_list, None, "sweep: comma list of p values"),
    "sweep.s": (_parse_float_list, None, "sweep: comma list of s values"),
    "sweep.m": (_parse_int_list, None, "sweep: comma list of M values"),
    "sweep.model": (_parse_str_list, None, "sweep: comma list of model families"),
    "detect.enabled": (_parse_bool, True, "run baseline monitor + drift test"),
    "detect.contraction": (_parse_bool, False, "estimate contraction during run"),
    "detect.q1": (_parse_bool, True, "checklist q1: data comes from influenced users"),
    "detect.q1_rationale": (
        str,
        "window rows are user decisions by construction",
        "free-text rationale recorded with q1",
    ),
    "detect.pairs": (int, 50, "contraction estimator: sampled pairs"),
    "detect.epsilon_floor": (
        float,
        det.DEFAULT_EPSILON_FLOOR,
        "contraction estimator: denominator floor",
    ),
    "detect.margin": (float, 0.05, "contraction estimator: margin below 1"),
    "detect.quantile": (float, 0.95, "contraction estimator: ratio quantile"),
    "detect.steps": (int, None, "transition steps (default: full window refresh)"),
    "detect.seed": (int, 0, "contraction estimator seed"),
    "detect.rho_threshold": (float, det.DEFAULT_RHO_THRESHOLD, "baseline alarm threshold"),
    "detect.min_rounds": (int, det.DEFAULT_MIN_ROUNDS, "baseline alarm minimum rounds"),
    "detect.delta": (float, det.DEFAULT_PH_DELTA, "Page-Hinkley tolerance delta"),
    "detect.lambda": (float, det.DEFAULT_PH_LAMBDA, "Page-Hinkley threshold lambda"),
    "out.dir": (str, "out", "output directory"),
}

# command-line flag -> config key it overrides
_FLAG_KEYS = {
    "p": "user.p",
    "s": "user.s",
    "m": "sim.m",
    "model": "sim.model",
    "seed": "sim.seed",
    "out": "out.dir",
    "p_range": "sweep.p",
    "s_range": "sweep.s",
    "m_range": "sweep.m",
    "model_range": "sweep.model",
}

_SYNTH_KEYS = ("data.n", "data.d", "data.noise_sd", "data.seed")


@dataclass(frozen=True)
class RunConfig:
    values: dict  # full effective key -> typed value map

    def __getitem__(self, key: str):
        return self.values[key]

    def effective(self) -> dict:
        return dict(self.values)


def _parse_config_text(text: str, source: str) -> dict:
    values = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        parser, _, _ = SCHEMA[key]
        try:
            values[key] = parser(raw_value)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return values


def parse_config(path: str | None, overrides: dict | None = None) -> RunConfig:
    """Effective config = documented defaults, then file, then flags."""
    values = {key: default for key, (_, default, _) in SCHEMA.items()}
    explicit = set()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        file_values = _parse_config_text(p.read_text(encoding="utf-8"), str(path))
        values.update(file_values)
        explicit.update(file_values)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key {key!r}")
        parser, _, _ = SCHEMA[key]
        if isinstance(value, str):
            try:
                value = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        values[key] = value
        explicit.add(key)
    if values["data.csv"] is not None and explicit & set(_SYNTH_KEYS):
        conflict = ", ".join(sorted(explicit & set(_SYNTH_KEYS)))
        raise ConfigError(
            f"conflicting dataset sources: data.csv is set together with {conflict}"
        )
    return RunConfig(values)


def _build_dataset(cfg: RunConfig) -> Dataset:
    if cfg["data.csv"] is not None:
        return load_csv(cfg["data.csv"], cfg["data.target"])
    return synthesize(
        cfg["data.n"], cfg["data.d"], cfg["data.noise_sd"], cfg["data.seed"]
    )


def _sim_config(cfg: RunConfig) -> SimulationConfig:
    return SimulationConfig(
        model_family=cfg["sim.model"],
        user=UserDecisionModel(cfg["user.p"], cfg["user.s"], cfg["user.seed"]),
        steps_per_round=cfg["sim.m"],
        window_fraction=cfg["sim.window_fraction"],
        train_fraction=cfg["sim.train_fraction"],
        master_seed=cfg["sim.seed"],
    )


def _run_id(family: str, p: float, s: float, m: int) -> str:
    return f"{family}-p{float(p)!r}-s{float(s)!r}-M{m}"


class _RuntimeDetectors:
    """Observer wiring a baseline monitor and a drift test into a run."""

    def __init__(self, cfg: RunConfig, master_seed: int):
        self.cfg = cfg
        self.master_seed = master_seed
        self.monitor = None
        self.ph = det.PageHinkleyState(
            delta=cfg["detect.delta"], lam=cfg["detect.lambda"]
        )

    def on_round(self, record: RoundRecord, window_ds: Dataset, trained) -> None:
        if self.monitor is None:
            split_seed, _ = round_seeds(self.master_seed, 1)
            train, _ = split(
                window_ds, SplitSpec(self.cfg["sim.train_fraction"], split_seed)
            )
            self.monitor = det.init_baseline_monitor(
                train,
                rho_threshold=self.cfg["detect.rho_threshold"],
                min_rounds=self.cfg["detect.min_rounds"],
            )
        self.monitor = det.baseline_update(self.monitor, window_ds)
        self.ph = det.page_hinkley_update(
            self.ph, det.baseline_mean_abs_residual(self.monitor, window_ds)
        )


def _contraction_report(cfg: RunConfig, source: Dataset, family: str, p: float, s: float):
    window_size = int(cfg["sim.window_fraction"] * source.n)
    transition = det.round_transition(
        source,
        family=family,
        p=p,
        s=s,
        steps=cfg["detect.steps"],
        seed=cfg["detect.seed"],
    )
    sampler = det.make_bootstrap_sampler(source, window_size, cfg["detect.seed"])
    return det.estimate_contraction(
        transition,
        sampler=sampler,
        n_pairs=cfg["detect.pairs"],
        epsilon_floor=cfg["detect.epsilon_floor"],
        margin=cfg["detect.margin"],
        quantile=cfg["detect.quantile"],
    )


def _execute_one(
    ds: Dataset, cfg: RunConfig, sim_cfg: SimulationConfig
) -> tuple[SimulationResult, dict | None]:
    """One simulation plus (optionally) its runtime detectors and checklist."""
    if not cfg["detect.enabled"]:
        return run_simulation(ds, sim_cfg), None
    watch = _RuntimeDetectors(cfg, sim_cfg.master_seed)
    result = run_simulation(ds, sim_cfg, on_round=watch.on_round)
    contraction = None
    if cfg["detect.contraction"]:
        contraction = _contraction_report(
            cfg, ds, sim_cfg.model_family, sim_cfg.user.p, sim_cfg.user.s
        )
    checklist = det.build_checklist(
        cfg["detect.q1"],
        cfg["detect.q1_rationale"],
        sim_cfg.user.p,
        sim_cfg.user.s,
        contraction=contraction,
        baseline_alarm=watch.monitor.first_alarm_round is not None,
        drift_alarm=watch.ph.alarm,
    )
    return result, checklist.to_dict()


def _bool_str(flag: bool) -> str:
    return "true" if flag else "false"


def _metrics_rows(run_id: str, result: SimulationResult) -> list[str]:
    c = result.config
    rows = []
    for r in result.rounds:
        rows.append(
            f"{run_id},{r.round},{_bool_str(r.partial)},{c.model_family},"
            f"{c.user.p!r},{c.user.s!r},{c.steps_per_round},{c.master_seed},"
            f"{r.r2!r},{r.mae!r},{r.sigma_f2!r}"
        )
    return rows


def _steps_rows(run_id: str, result: SimulationResult) -> list[str]:
    return [
        f"{run_id},{s.step},{s.row_id},{s.prediction!r},{s.z!r},{_bool_str(s.adhered)}"
        for s in result.steps
    ]


def read_metrics_csv(path) -> dict:
    """Parse an emitted metrics.csv back into RoundRecords keyed by run_id.

    repr-formatted floats round-trip bit-exactly; fields the CSV does not
    carry (hyperparameters, steps consumed) come back empty/zero.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ConfigError(f"unexpected metrics header: {lines[0] if lines else ''!r}")
    out: dict = {}
    for line in lines[1:]:
        f = line.split(",")
        run_id, round_no, partial = f[0], int(f[1]), f[2] == "true"
        record = RoundRecord(
            round=round_no,
            r2=float(f[8]),
            mae=float(f[9]),
            sigma_f2=float(f[10]),
            chosen_hyperparams={},
            steps_consumed=0,
            partial=partial,
        )
        out.setdefault(run_id, []).append(record)
    return out


def _write_text(path: Path, content: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(content)


def _emit_plots(out_dir: Path, results: dict) -> None:
    """One SVG per (model, metric); panels keyed by (p, s), series by M."""
    by_model: dict = {}
    for run_id, result in results.items():
        c = result.config
        key = (c.user.p, c.user.s)
        by_model.setdefault(c.model_family, {}).setdefault(key, []).append(result)
    metric_labels = {"r2": "R^2 (unitless)", "mae": "MAE (log-price)"}
    for family, groups in sorted(by_model.items()):
        for metric, y_label in metric_labels.items():
            panels = []
            for (p, s), group in sorted(groups.items()):
                series = []
                for result in sorted(group, key=lambda r: r.config.steps_per_round):
                    rounds = [r.round for r in result.rounds]
                    ys = [getattr(r, metric) for r in result.rounds]
                    series.append(
                        Series(
                            f"M = {result.config.steps_per_round}",
                            tuple(rounds),
                            tuple(ys),
                        )
                    )
                panels.append(Panel(f"p = {float(p)!r}, s = {float(s)!r}", tuple(series)))
            _write_text(
                out_dir / f"plot_{family}_{metric}.svg",
                render_chart(panels, y_label),
            )


def _emit_outputs(out_dir: Path, cfg: RunConfig, results: dict, checklists: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_lines = [METRICS_HEADER]
    steps_lines = [STEPS_HEADER]
    run_summaries = []
    for run_id, result in results.items():
        metrics_lines.extend(_metrics_rows(run_id, result))
        steps_lines.extend(_steps_rows(run_id, result))
        last = result.rounds[-1]
        run_summaries.append(
            {
                "run_id": run_id,
                "model": result.config.model_family,
                "p": result.config.user.p,
                "s": result.config.user.s,
                "M": result.config.steps_per_round,
                "seed": result.config.master_seed,
                "rounds": len(result.rounds),
                "steps": len(result.steps),
                "final_r2": last.r2,
                "final_mae": last.mae,
                "final_sigma2": last.sigma_f2,
                "checklist": checklists.get(run_id),
            }
        )
    _write_text(out_dir / "metrics.csv", "\n".join(metrics_lines) + "\n")
    _write_text(out_dir / "steps.csv", "\n".join(steps_lines) + "\n")
    summary = {"config": cfg.effective(), "runs": run_summaries}
    _write_text(
        out_dir / "summary.json",
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )
    _emit_plots(out_dir, results)


def _cmd_run(cfg: RunConfig) -> int:
    ds = _build_dataset(cfg)
    sim_cfg = _sim_config(cfg)
    result, checklist = _execute_one(ds, cfg, sim_cfg)
    run_id = _run_id(
        sim_cfg.model_family, sim_cfg.user.p, sim_cfg.user.s, sim_cfg.steps_per_round
    )
    _emit_outputs(
        Path(cfg["out.dir"]),
        cfg,
        {run_id: result},
        {run_id: checklist} if checklist is not None else {},
    )
    return 0


def _cmd_sweep(cfg: RunConfig) -> int:
    ds = _build_dataset(cfg)
    base = _sim_config(cfg)
    p_values = cfg["sweep.p"] or (cfg["user.p"],)
    s_values = cfg["sweep.s"] or (cfg["user.s"],)
    m_values = cfg["sweep.m"] or (cfg["sim.m"],)
    families = cfg["sweep.model"] or (cfg["sim.model"],)
    results: dict = {}
    checklists: dict = {}
    # combo order and per-combo seeds match loop_sim.sweep exactly; handled
    # here so each run can carry its own runtime detectors
    for p, s, m, family in itertools.product(p_values, s_values, m_values, families):
        sim_cfg = replace(
            base,
            model_family=family,
            user=replace(base.user, p=p, s=s),
            steps_per_round=m,
            master_seed=combo_seed(base.master_seed, p, s, m, family),
        )
        result, checklist = _execute_one(ds, cfg, sim_cfg)
        run_id = _run_id(family, p, s, m)
        results[run_id] = result
        if checklist is not None:
            checklists[run_id] = checklist
    _emit_outputs(Path(cfg["out.dir"]), cfg, results, checklists)
    return 0


def _cmd_detect(cfg: RunConfig) -> int:
    ds = _build_dataset(cfg)
    report = _contraction_report(cfg, ds, cfg["sim.model"], cfg["user.p"], cfg["user.s"])
    checklist = det.build_checklist(
        cfg["detect.q1"],
        cfg["detect.q1_rationale"],
        cfg["user.p"],
        cfg["user.s"],
        contraction=report,
    )
    out_dir = Path(cfg["out.dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = {"config": cfg.effective(), "checklist": checklist.to_dict()}
    _write_text(
        out_dir / "summary.json",
        json.dumps(summary, indent=2, sort_keys=True) + "\n",
    )
    print(checklist.verdict)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    epilog_lines = ["config file keys (key = value, # comments):"]
    for key, (_, default, help_text) in SCHEMA.items():
        epilog_lines.append(f"  {key:24s} {help_text} (default: {default})")
    parser = argparse.ArgumentParser(
        prog="loopsim",
        description="closed-loop retraining simulator and feedback-loop detectors",
        epilog="\n".join(epilog_lines),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="path to key=value config file")
        sp.add_argument("--p", help="override user.p")
        sp.add_argument("--s", help="override user.s")
        sp.add_argument("--m", help="override sim.m")
        sp.add_argument("--model", help="override sim.model (ridge|gbr)")
        sp.add_argument("--seed", help="override sim.seed")
        sp.add_argument("--out", help="override out.dir")

    add_common(sub.add_parser("run", help="single simulation run"))
    sp = sub.add_parser("sweep", help="grid of simulation runs")
    add_common(sp)
    sp.add_argument("--p-range", dest="p_range", help="comma list of p values")
    sp.add_argument("--s-range", dest="s_range", help="comma list of s values")
    sp.add_argument("--m-range", dest="m_range", help="comma list of M values")
    sp.add_argument(
        "--model-range", dest="model_range", help="comma list of model families"
    )
    add_common(sub.add_parser("detect", help="contraction estimation + checklist"))
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    overrides = {
        key: getattr(args, flag)
        for flag, key in _FLAG_KEYS.items()
        if hasattr(args, flag)
    }
    try:
        cfg = parse_config(args.config, overrides)
        if args.command == "run":
            return _cmd_run(cfg)
        if args.command == "sweep":
            return _cmd_sweep(cfg)
        return _cmd_detect(cfg)
    except (
        ConfigError,
        DataError,
        ModelError,
        LossIncreaseError,
        ZeroVarianceError,
        SimulationError,
        det.DetectorError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
