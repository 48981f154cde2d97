"""Command-line surface: ingest, calibrate, train, evaluate, synth.

All behavior is driven by a RunConfig; a JSON config file can stand in for
every flag, with flags taking precedence. Outputs land in --output-dir
(or $CFBENCH_OUTPUT_DIR).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, calibration, dataio, learners, metrics, scoring, simulation, smoothing
from .models import (
    AccelerationBounds,
    AccModel,
    AccParameters,
    ExternalModel,
    IdmModel,
    IdmParameters,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SCHEMA = 2
EXIT_EMPTY = 3
EXIT_INSUFFICIENT = 4
EXIT_CONFIG = 5

OUTPUT_DIR_ENV = "CFBENCH_OUTPUT_DIR"


class CliConfigError(Exception):
    pass


_CONFIG_FIELDS = {
    "input_files",
    "segments_file",
    "output_dir",
    "schema",
    "delimiter",
    "gap_threshold_s",
    "min_duration_s",
    "max_speed",
    "max_accel",
    "kalman",
    "kalman_config_file",
    "bounds",
    "dt",
    "split_seed",
    "test_fraction",
    "validation_fraction",
    "ga",
    "search",
    "learners",
    "models",
    "synth",
    "plots",
}


@dataclass
class RunConfig:
    """Everything a run needs; serializable so runs are reproducible."""

    input_files: list = field(default_factory=list)
    segments_file: str = ""
    output_dir: str = ""
    schema: dict = field(default_factory=dict)
    delimiter: str = ","
    gap_threshold_s: float = dataio.GAP_THRESHOLD_S
    min_duration_s: float = dataio.MIN_DURATION_S
    max_speed: float = 20.0
    max_accel: float = 5.0
    kalman: dict = field(default_factory=dict)
    kalman_config_file: str = ""
    bounds: dict = field(default_factory=dict)
    dt: float = simulation.SIM_DT_S
    split_seed: int = 0
    test_fraction: float = dataio.TEST_FRACTION
    validation_fraction: float = dataio.VALIDATION_FRACTION
    ga: dict = field(default_factory=dict)
    search: dict = field(default_factory=dict)
    learners: dict = field(default_factory=dict)
    models: list = field(default_factory=list)
    synth: dict = field(default_factory=dict)
    plots: bool = False

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, "r") as fh:
            raw = json.load(fh)
        unknown = set(raw) - _CONFIG_FIELDS
        if unknown:
            raise CliConfigError(f"{path}: unknown config keys {sorted(unknown)}")
        return cls(**raw)

    def resolve_output_dir(self) -> Path:
        out = self.output_dir or os.environ.get(OUTPUT_DIR_ENV, ".")
        path = Path(out)
        path.mkdir(parents=True, exist_ok=True)
        return path

    def kalman_config(self) -> smoothing.KalmanConfig:
        if self.kalman_config_file:
            return smoothing.load_kalman_config(self.kalman_config_file)
        if not self.kalman:
            return smoothing.KalmanConfig()
        q_diag = self.kalman.get("q_diag", smoothing.DEFAULT_Q_DIAG)
        r = self.kalman.get("r", smoothing.DEFAULT_R)
        p0 = self.kalman.get("p0_diag", smoothing.DEFAULT_P0_DIAG)
        return smoothing.KalmanConfig(q=np.diag(q_diag), r=r, initial_covariance=np.diag(p0))

    def accel_bounds(self) -> AccelerationBounds:
        if not self.bounds:
            return AccelerationBounds()
        return AccelerationBounds(
            a_min=self.bounds.get("a_min", -3.0), a_max=self.bounds.get("a_max", 2.0)
        )


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(cfg: RunConfig) -> int:
    """Clean -> filter -> segment each input file; write segments + summary."""
    if not cfg.input_files:
        raise CliConfigError("ingest needs at least one --input file")
    out = cfg.resolve_output_dir()
    limits = dataio.KinematicLimits(max_speed=cfg.max_speed, max_accel=cfg.max_accel)
    kconfig = cfg.kalman_config()
    schema = cfg.schema or None

    segments = []
    totals = {
        "n_rows": 0,
        "n_dropped_nonfinite": 0,
        "n_duplicate_timestamps": 0,
        "n_nonpositive_spacing": 0,
        "n_outliers_removed": 0,
        "n_segments": 0,
        "n_discarded_segments": 0,
        "duration_before_length_filter_s": 0.0,
        "duration_after_length_filter_s": 0.0,
    }
    for path in cfg.input_files:
        result = dataio.ingest(path, schema=schema, delimiter=cfg.delimiter)
        cleaned = dataio.remove_outliers(result.observations, limits)
        if len(cleaned) < 2:
            raise dataio.EmptyInputError(f"{path}: fewer than 2 observations after cleaning")
        t = np.array([o.timestamp for o in cleaned])
        leader = smoothing.kalman_filter(t, [o.leader_position for o in cleaned], kconfig)
        follower = smoothing.kalman_filter(t, [o.follower_position for o in cleaned], kconfig)
        seg_result = dataio.segment_arrays(
            t,
            leader.x,
            leader.v,
            leader.a,
            follower.x,
            follower.v,
            follower.a,
            gap_threshold=cfg.gap_threshold_s,
            min_duration=cfg.min_duration_s,
            id_prefix=Path(path).stem,
        )
        segments.extend(seg_result.segments)
        totals["n_rows"] += result.n_rows
        totals["n_dropped_nonfinite"] += result.n_dropped_nonfinite
        totals["n_duplicate_timestamps"] += result.n_duplicate_timestamps
        totals["n_nonpositive_spacing"] += result.n_nonpositive_spacing
        totals["n_outliers_removed"] += len(result.observations) - len(cleaned)
        totals["n_segments"] += len(seg_result.segments)
        totals["n_discarded_segments"] += len(seg_result.discarded_bounds)
        totals["duration_before_length_filter_s"] += seg_result.duration_total
        totals["duration_after_length_filter_s"] += seg_result.duration_retained

    dataio.write_segments_file(out / "segments.csv", segments)
    with open(out / "ingest_summary.json", "w") as fh:
        json.dump(totals, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(
        f"ingest: {totals['n_segments']} segments "
        f"({totals['duration_after_length_filter_s']:.0f} s retained of "
        f"{totals['duration_before_length_filter_s']:.0f} s)"
    )
    return EXIT_OK


def _load_split_pairs(cfg: RunConfig):
    if not cfg.segments_file:
        raise CliConfigError("missing --segments file")
    segments = dataio.read_segments_file(cfg.segments_file)
    split = dataio.split(
        segments,
        seed=cfg.split_seed,
        test_fraction=cfg.test_fraction,
        validation_fraction=cfg.validation_fraction,
    )
    return segments, split


def _ga_config(cfg: RunConfig) -> calibration.GaConfig:
    ga = dict(cfg.ga)
    if "parameter_bounds" in ga and ga["parameter_bounds"] is not None:
        ga["parameter_bounds"] = {k: tuple(v) for k, v in ga["parameter_bounds"].items()}
    return calibration.GaConfig(**ga)


def cmd_calibrate(cfg: RunConfig) -> int:
    """GA-calibrate IDM and ACC on the training split."""
    out = cfg.resolve_output_dir()
    _, split = _load_split_pairs(cfg)
    pairs = dataio.collect_pairs(split.train)
    ga_cfg = _ga_config(cfg)
    bounds = cfg.accel_bounds()
    for kind in ("idm", "acc"):
        result = calibration.calibrate_ga(kind, pairs, ga_cfg, bounds, dt=cfg.dt)
        payload = {
            "kind": kind,
            "parameters": {
                n: getattr(result.parameters, n) for n in type(result.parameters).names
            },
            "best_mse": result.best_mse,
            "seed": result.seed,
        }
        with open(out / f"{kind}_params.json", "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        calibration.write_calibration_report(out / f"ga_{kind}_report.csv", result)
        print(f"calibrate: {kind} best acceleration MSE {result.best_mse:.6g}")
    return EXIT_OK


def _parse_space(spec: dict) -> dict:
    space = {}
    for name, rng in spec.items():
        if len(rng) not in (2, 3):
            raise CliConfigError(f"search space for {name!r} must be [lo, hi] or [lo, hi, 'log']")
        log = len(rng) == 3 and rng[2] == "log"
        lo, hi = rng[0], rng[1]
        if isinstance(lo, int) and isinstance(hi, int):
            space[name] = calibration.IntRange(lo, hi, log=log)
        else:
            space[name] = calibration.FloatRange(float(lo), float(hi), log=log)
    return space


_HP_CLASSES = {
    "gbt": learners.GbtHyperparameters,
    "rf": learners.RfHyperparameters,
    "fnn": learners.FnnHyperparameters,
}
_FITTERS = {"gbt": learners.fit_gbt, "rf": learners.fit_rf, "fnn": learners.fit_fnn}


def cmd_train(cfg: RunConfig) -> int:
    """Tune (seeded random search) and fit GBT/RF/FNN on the training split."""
    out = cfg.resolve_output_dir()
    _, split = _load_split_pairs(cfg)
    pairs = dataio.collect_pairs(split.train)
    val_pairs = dataio.collect_pairs(split.validation) if split.validation else []

    n_trials = int(cfg.search.get("n_trials", calibration.N_TRIALS))
    n_folds = int(cfg.search.get("n_folds", calibration.N_FOLDS))
    search_seed = int(cfg.search.get("seed", 0))
    spaces = cfg.search.get("spaces", {})

    summary = {}
    for kind in ("gbt", "rf", "fnn"):
        hp_cls = _HP_CLASSES[kind]
        overrides = cfg.learners.get(kind, {})
        if n_trials > 0:
            plan = calibration.make_cv_plan(pairs, n_folds)
            space = _parse_space(spaces[kind]) if kind in spaces else None
            result = calibration.tune_hyperparameters(
                kind,
                pairs,
                search_space=space,
                budget=calibration.SearchBudget(n_trials=n_trials),
                plan=plan,
                seed=search_seed,
            )
            hp = result.best_hyperparameters
            calibration.write_search_log(out / f"search_{kind}.csv", result)
            cv_loss = result.best_loss
        else:
            hp = hp_cls(**overrides)
            cv_loss = None
        model = _FITTERS[kind](pairs, hp, seed=search_seed)
        learners.save_model(model, out / f"{kind}_model.json")
        entry = {"hyperparameters": model.hyperparameters, "cv_loss": cv_loss}
        if val_pairs:
            vx, vy, _ = dataio.pairs_to_arrays(val_pairs)
            entry["validation_mse"] = float(np.mean((model.predict_batch(vx) - vy) ** 2))
        summary[kind] = entry
        print(f"train: {kind} fitted on {model.n_train} pairs")
    with open(out / "train_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def _build_roster(cfg: RunConfig):
    roster = []
    closers = []
    for spec in cfg.models:
        kind = spec.get("kind")
        name = spec.get("name", kind)
        if kind == "idm":
            params = IdmParameters(**_load_params(spec["path"])) if "path" in spec else IdmParameters()
            roster.append(IdmModel(params, name=name))
        elif kind == "acc":
            params = AccParameters(**_load_params(spec["path"])) if "path" in spec else AccParameters()
            roster.append(AccModel(params, name=name))
        elif kind in ("gbt", "rf", "fnn"):
            model = learners.load_model(spec["path"])
            model.kind = name  # roster name wins over the stored kind
            roster.append(model)
        elif kind == "external":
            model = ExternalModel(
                spec["command"], name=name, timeout_s=float(spec.get("timeout_s", 1.0))
            )
            roster.append(model)
            closers.append(model)
        else:
            raise CliConfigError(f"unknown model kind {kind!r} in roster")
    return roster, closers


def _load_params(path) -> dict:
    with open(path, "r") as fh:
        payload = json.load(fh)
    return payload["parameters"] if "parameters" in payload else payload


def _safe_name(text: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "-" for c in text)


def cmd_evaluate(cfg: RunConfig) -> int:
    """Roll out the roster on the test split, score it, and write all reports."""
    out = cfg.resolve_output_dir()
    segments, split = _load_split_pairs(cfg)
    test_segments = split.test
    if not test_segments:
        raise dataio.InsufficientDataError("test split is empty")
    if len(cfg.models) < 2:
        raise CliConfigError("evaluation needs >= 2 models (Z-scores are cohort-relative)")
    roster, closers = _build_roster(cfg)
    try:
        batch = simulation.rollout_all(test_segments, roster, cfg.accel_bounds(), cfg.dt)
    finally:
        for model in closers:
            model.close()

    traj_dir = out / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    for model in roster:
        trajs = batch.results.get(model.name, ())
        for traj in trajs:
            dump = traj_dir / f"{_safe_name(model.name)}__{_safe_name(traj.segment_id)}.csv"
            simulation.write_trajectory_dump(dump, traj)
        if trajs:
            reports.append(metrics.evaluate_model(trajs))

    with open(out / "failures.csv", "w") as fh:
        fh.write("model,segment,error\n")
        for failure in batch.failures:
            err = failure.error.replace("\n", " ").replace(",", ";")
            fh.write(f"{failure.model_name},{failure.segment_id},{err}\n")

    if not reports:
        print("evaluate: every model failed on every segment", file=sys.stderr)
        return EXIT_ERROR
    if len(reports) < 2:
        raise CliConfigError("fewer than 2 models produced trajectories; cannot rank")

    metrics.write_metric_report(out / "metrics.csv", reports)
    table = scoring.rank_models(reports)
    scoring.write_zscores(out / "zscores.csv", table)
    scoring.write_radar(out / "radar.csv", table)
    scoring.write_ranking(out / "ranking.csv", table)
    if cfg.plots:
        from . import plots

        plots.emit_all(reports, table, out)

    summary = {
        "n_test_segments": len(test_segments),
        "n_failures": len(batch.failures),
        "collisions": {r.model: list(r.collision_segments) for r in reports if r.collision_segments},
        "ranking": [
            {"model": e.model, "score": e.score, "rank": e.rank} for e in table.ranking
        ],
    }
    with open(out / "evaluation_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    best = table.ranking[0]
    print(f"evaluate: top-ranked model {best.model} (score {best.score:.4f})")
    return EXIT_OK


def cmd_synth(cfg: RunConfig) -> int:
    """Generate a synthetic raw trajectory file from a profile description."""
    spec = dict(cfg.synth)
    if not spec:
        raise CliConfigError("synth needs a profile (flags or --profile-config)")
    if "profile" not in spec:
        raise CliConfigError("synth needs a profile kind")
    output = spec.pop("output", None)
    if output is None:
        raise CliConfigError("synth needs an output file")
    follower = spec.pop("follower", "idm")
    follower_params = spec.pop("follower_params", None)
    include_speeds = bool(spec.pop("include_speeds", False))
    profile = dataio.SpeedProfile(
        kind=spec.pop("profile"),
        base_speed=float(spec.pop("base_speed", 8.0)),
        amplitude=float(spec.pop("amplitude", 0.0)),
        period=float(spec.pop("period", 60.0)),
    )
    duration = float(spec.pop("duration", 300.0))
    dt = float(spec.pop("dt", 1.0))
    noise_sigma = float(spec.pop("noise_sigma", 0.0))
    seed = int(spec.pop("seed", 0))
    initial_spacing = spec.pop("initial_spacing", None)
    t0 = float(spec.pop("t0", 0.0))
    if spec:
        raise CliConfigError(f"unknown synth keys {sorted(spec)}")
    if follower == "idm":
        model = IdmModel(IdmParameters(**follower_params) if follower_params else IdmParameters())
    elif follower == "acc":
        model = AccModel(AccParameters(**follower_params) if follower_params else AccParameters())
    else:
        raise CliConfigError(f"unknown follower model {follower!r}")
    seg = dataio.generate_synthetic(
        profile,
        model,
        duration=duration,
        dt=dt,
        noise_sigma=noise_sigma,
        seed=seed,
        initial_spacing=initial_spacing,
        t0=t0,
    )
    if include_speeds:
        dataio.write_trajectory_file(output, seg.t, seg.x_l, seg.x_f, seg.v_l, seg.v_f)
    else:
        dataio.write_trajectory_file(output, seg.t, seg.x_l, seg.x_f)
    print(f"synth: wrote {seg.n_samples} samples to {output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _parse_schema(text: str) -> dict:
    schema = {}
    for item in text.split(","):
        if "=" not in item:
            raise CliConfigError(f"schema entries must be field=column, got {item!r}")
        key, value = item.split("=", 1)
        schema[key.strip()] = value.strip()
    return schema


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"cfbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file; flags override it")
        p.add_argument("--output-dir", help=f"output directory (default ${OUTPUT_DIR_ENV} or .)")

    p = sub.add_parser("ingest", help="clean, smooth, and segment raw trajectory files")
    common(p)
    p.add_argument("--input", action="append", default=[], help="raw trajectory file (repeatable)")
    p.add_argument("--schema", help="column mapping, e.g. t=time,x_leader=lead_x,x_follower=x")
    p.add_argument("--delimiter", help="input delimiter (default ,)")
    p.add_argument("--kalman-config", help="key-value file: q_diag, r, p0_diag")
    p.add_argument("--gap-threshold", type=float, help="segment-break gap in seconds")
    p.add_argument("--min-duration", type=float, help="minimum segment duration in seconds")
    p.add_argument("--max-speed", type=float, help="outlier speed bound, m/s")
    p.add_argument("--max-accel", type=float, help="outlier acceleration bound, m/s^2")

    p = sub.add_parser("calibrate", help="GA-calibrate IDM and ACC")
    common(p)
    p.add_argument("--segments", help="segments file from ingest")
    p.add_argument("--seed", type=int, help="split seed")
    p.add_argument("--ga-seed", type=int, help="GA seed")

    p = sub.add_parser("train", help="tune and fit the native learners")
    common(p)
    p.add_argument("--segments", help="segments file from ingest")
    p.add_argument("--seed", type=int, help="split seed")
    p.add_argument("--trials", type=int, help="search trials per learner (0 = skip search)")
    p.add_argument("--folds", type=int, help="cross-validation folds")

    p = sub.add_parser("evaluate", help="roll out, score, and rank a model roster")
    common(p)
    p.add_argument("--segments", help="segments file from ingest")
    p.add_argument("--seed", type=int, help="split seed")
    p.add_argument(
        "--model",
        action="append",
        default=[],
        help="roster entry kind=path (idm/acc/gbt/rf/fnn) or external:name='command'",
    )
    p.add_argument("--dt", type=float, help="simulation step, seconds")
    p.add_argument("--plots", action="store_true", help="also emit SVG figures")

    p = sub.add_parser("synth", help="generate a synthetic raw trajectory file")
    common(p)
    p.add_argument("--profile-config", help="JSON profile description")
    p.add_argument("--profile", choices=["constant", "sinusoidal", "stopgo"])
    p.add_argument("--base-speed", type=float)
    p.add_argument("--amplitude", type=float)
    p.add_argument("--period", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-sigma", type=float)
    p.add_argument("--t0", type=float)
    p.add_argument("--initial-spacing", type=float)
    p.add_argument("--follower", choices=["idm", "acc"])
    p.add_argument("--follower-params", help="JSON file with follower parameters")
    p.add_argument("--include-speeds", action="store_true")
    p.add_argument("--output", help="output trajectory file")
    return parser


def _parse_model_flag(text: str) -> dict:
    if text.startswith("external:"):
        rest = text[len("external:") :]
        if "=" not in rest:
            raise CliConfigError(f"external model must be external:name=command, got {text!r}")
        name, command = rest.split("=", 1)
        return {"kind": "external", "name": name, "command": command}
    if "=" not in text:
        raise CliConfigError(f"model must be kind=path, got {text!r}")
    kind, path = text.split("=", 1)
    return {"kind": kind, "path": path}


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "output_dir", None):
        cfg.output_dir = args.output_dir
    if getattr(args, "input", None):
        cfg.input_files = list(args.input)
    if getattr(args, "schema", None):
        cfg.schema = _parse_schema(args.schema)
    if getattr(args, "delimiter", None):
        cfg.delimiter = args.delimiter
    if getattr(args, "kalman_config", None):
        cfg.kalman_config_file = args.kalman_config
    for flag, name in (
        ("gap_threshold", "gap_threshold_s"),
        ("min_duration", "min_duration_s"),
        ("max_speed", "max_speed"),
        ("max_accel", "max_accel"),
        ("dt", "dt"),
    ):
        if getattr(args, flag, None) is not None:
            setattr(cfg, name, getattr(args, flag))
    if getattr(args, "segments", None):
        cfg.segments_file = args.segments
    if getattr(args, "seed", None) is not None:
        cfg.split_seed = args.seed
    if getattr(args, "ga_seed", None) is not None:
        cfg.ga = {**cfg.ga, "seed": args.ga_seed}
    if getattr(args, "trials", None) is not None:
        cfg.search = {**cfg.search, "n_trials": args.trials}
    if getattr(args, "folds", None) is not None:
        cfg.search = {**cfg.search, "n_folds": args.folds}
    if getattr(args, "model", None):
        cfg.models = [_parse_model_flag(m) for m in args.model]
    if getattr(args, "plots", False):
        cfg.plots = True
    if args.command == "synth":
        synth = dict(cfg.synth)
        if getattr(args, "profile_config", None):
            synth.update(dataio.load_profile_config(args.profile_config))
        for flag in (
            "profile",
            "base_speed",
            "amplitude",
            "period",
            "duration",
            "dt",
            "seed",
            "noise_sigma",
            "t0",
            "initial_spacing",
            "follower",
            "output",
        ):
            value = getattr(args, flag, None)
            if value is not None:
                synth[flag] = value
        if getattr(args, "follower_params", None):
            with open(args.follower_params) as fh:
                synth["follower_params"] = json.load(fh)
        if getattr(args, "include_speeds", False):
            synth["include_speeds"] = True
        cfg.synth = synth
    return cfg


_COMMANDS = {
    "ingest": cmd_ingest,
    "calibrate": cmd_calibrate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        return _COMMANDS[args.command](cfg)
    except dataio.SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except dataio.EmptyInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (dataio.InsufficientDataError, calibration.InsufficientPairsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except (CliConfigError, calibration.GaConfigError, scoring.ScoringError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # keep the CLI from dumping tracebacks at users
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
