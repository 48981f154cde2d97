"""Parameter calibration: GA over IDM/ACC, temporal cross-validation, and
seeded random search over learner hyperparameters."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataio import FeaturePair, pairs_to_arrays
from .learners import (
    FnnHyperparameters,
    GbtHyperparameters,
    RfHyperparameters,
    TrainingDivergedError,
    fit_fnn,
    fit_gbt,
    fit_rf,
)
from .models import (
    AccelerationBounds,
    AccParameters,
    IdmParameters,
    acc_acceleration,
    idm_acceleration,
)

N_FOLDS = 5
N_TRIALS = 500

DEFAULT_IDM_BOUNDS = {
    "v0": (1.0, 25.0),
    "T": (0.3, 5.0),
    "s0": (0.5, 10.0),
    "a_max": (0.2, 4.0),
    "b": (0.2, 5.0),
    "delta": (1.0, 10.0),
}
DEFAULT_ACC_BOUNDS = {
    "k1": (0.01, 2.0),
    "k2": (0.01, 2.0),
    "t_hw": (0.3, 5.0),
    "s0": (0.0, 10.0),
}


class CalibrationError(Exception):
    pass


class GaConfigError(CalibrationError):
    pass


class UnsortedDataError(CalibrationError):
    pass


class InsufficientPairsError(CalibrationError):
    pass


class SearchFailureError(CalibrationError):
    def __init__(self, message: str, trials=()):
        super().__init__(message)
        self.trials = tuple(trials)


# ---------------------------------------------------------------------------
# genetic algorithm


@dataclass(frozen=True)
class GaConfig:
    population_size: int = 50
    generations: int = 100
    crossover_rate: float = 0.9
    mutation_rate: float = 0.1
    mutation_scale: float = 0.1  # fraction of each parameter range
    tournament_size: int = 3
    elitism: int = 2
    seed: int = 0
    parameter_bounds: Mapping | None = None  # None: model-kind defaults
    record_population: bool = False

    def __post_init__(self):
        if self.population_size < 4:
            raise GaConfigError("population_size must be >= 4")
        for rate in (self.crossover_rate, self.mutation_rate):
            if not 0 <= rate <= 1:
                raise GaConfigError("rates must be in [0, 1]")
        if self.generations < 0 or self.mutation_scale <= 0:
            raise GaConfigError("generations must be >= 0 and mutation_scale positive")
        if not 0 <= self.elitism < self.population_size:
            raise GaConfigError("elitism must be < population_size")
        if self.tournament_size < 1:
            raise GaConfigError("tournament_size must be >= 1")


@dataclass(frozen=True)
class CalibrationResult:
    model_kind: str
    parameters: object
    best_mse: float
    history: tuple  # best-ever MSE per generation (index 0 = initial population)
    mean_history: tuple
    n_evaluations: int
    seed: int
    wall_time_s: float
    population_history: tuple = ()


_MODEL_KINDS = {
    "idm": (IdmParameters, idm_acceleration, DEFAULT_IDM_BOUNDS),
    "acc": (AccParameters, acc_acceleration, DEFAULT_ACC_BOUNDS),
}


def _resolve_bounds(model_kind: str, cfg: GaConfig):
    param_cls, accel_fn, default_bounds = _MODEL_KINDS[model_kind]
    bounds = dict(default_bounds if cfg.parameter_bounds is None else cfg.parameter_bounds)
    missing = [n for n in param_cls.names if n not in bounds]
    if missing:
        raise GaConfigError(f"missing bounds for parameters {missing}")
    lo = np.array([bounds[n][0] for n in param_cls.names], dtype=float)
    hi = np.array([bounds[n][1] for n in param_cls.names], dtype=float)
    if np.any(lo >= hi):
        bad = [n for n, l, h in zip(param_cls.names, lo, hi) if l >= h]
        raise GaConfigError(f"degenerate bounds (lo >= hi) for {bad}")
    for corner in (lo, hi):  # clipping must never produce an invalid parameter set
        try:
            param_cls.from_vector(corner)
        except ValueError as exc:
            raise GaConfigError(f"bounds admit invalid {model_kind} parameters: {exc}") from exc
    return param_cls, accel_fn, lo, hi


def calibrate_ga(
    model_kind: str,
    pairs: Sequence[FeaturePair],
    cfg: GaConfig | None = None,
    bounds: AccelerationBounds | None = None,
    dt: float = 1.0,
) -> CalibrationResult:
    """Minimize one-step acceleration MSE over the parameter box.

    Tournament selection, uniform crossover, Gaussian mutation clipped to
    the bounds, elitism. Predictions pass through the same command pipeline
    as the simulator (clamp to the acceleration bounds, then floor against
    reversing) so fitness is consistent with the rollout dynamics; the
    current speed needed for the floor is reconstructed from the state as
    v_prev + a_prev * dt.
    """
    if model_kind not in _MODEL_KINDS:
        raise CalibrationError(f"unknown model kind {model_kind!r}")
    if not pairs:
        raise InsufficientPairsError("calibration needs a non-empty training set")
    cfg = cfg or GaConfig()
    bounds = bounds or AccelerationBounds()
    param_cls, accel_fn, lo, hi = _resolve_bounds(model_kind, cfg)

    X, y, _ = pairs_to_arrays(pairs)
    dv, ds, a_prev, v_prev = X[:, 0], X[:, 1], X[:, 2], X[:, 3]
    accel_floor = -np.maximum(0.0, v_prev + a_prev * dt) / dt
    span = hi - lo

    def fitness(vec: np.ndarray) -> float:
        pred = accel_fn(dv, ds, v_prev, param_cls.from_vector(vec))
        pred = np.clip(pred, bounds.a_min, bounds.a_max)
        pred = np.maximum(pred, accel_floor)
        return float(np.mean((pred - y) ** 2))

    start = time.perf_counter()
    rng = np.random.default_rng(cfg.seed)
    pop = lo + rng.random((cfg.population_size, lo.size)) * span
    if np.all(np.ptp(pop, axis=0) < 1e-15):
        raise GaConfigError("initial population has no diversity (degenerate bounds)")
    fits = np.array([fitness(ind) for ind in pop])
    n_evals = cfg.population_size

    best_idx = int(np.argmin(fits))
    best_vec = pop[best_idx].copy()
    best_fit = float(fits[best_idx])
    history = [best_fit]
    mean_history = [float(np.mean(fits))]
    pop_history = [pop.copy()] if cfg.record_population else []

    for _ in range(cfg.generations):
        elite_order = np.argsort(fits, kind="stable")
        new_pop = [pop[i].copy() for i in elite_order[: cfg.elitism]]
        while len(new_pop) < cfg.population_size:
            p1 = _tournament(pop, fits, cfg.tournament_size, rng)
            p2 = _tournament(pop, fits, cfg.tournament_size, rng)
            if rng.random() < cfg.crossover_rate:
                mask = rng.random(lo.size) < 0.5
                child = np.where(mask, p1, p2)
            else:
                child = p1.copy()
            mutate = rng.random(lo.size) < cfg.mutation_rate
            if np.any(mutate):
                noise = rng.normal(0.0, cfg.mutation_scale * span)
                child = np.where(mutate, child + noise, child)
            new_pop.append(np.clip(child, lo, hi))
        pop = np.array(new_pop)
        fits = np.array([fitness(ind) for ind in pop])
        n_evals += cfg.population_size
        gen_best = int(np.argmin(fits))
        if fits[gen_best] < best_fit:
            best_fit = float(fits[gen_best])
            best_vec = pop[gen_best].copy()
        history.append(best_fit)
        mean_history.append(float(np.mean(fits)))
        if cfg.record_population:
            pop_history.append(pop.copy())

    return CalibrationResult(
        model_kind=model_kind,
        parameters=param_cls.from_vector(best_vec),
        best_mse=best_fit,
        history=tuple(history),
        mean_history=tuple(mean_history),
        n_evaluations=n_evals,
        seed=cfg.seed,
        wall_time_s=time.perf_counter() - start,
        population_history=tuple(pop_history),
    )


def _tournament(pop, fits, size, rng):
    contenders = rng.integers(0, len(pop), size)
    return pop[contenders[np.argmin(fits[contenders])]].copy()


def write_calibration_report(path, result: CalibrationResult) -> None:
    """Per-generation losses plus final parameters (comment header)."""
    param_text = " ".join(
        f"{n}={getattr(result.parameters, n)!r}" for n in type(result.parameters).names
    )
    with open(path, "w") as fh:
        fh.write(f"# model_kind={result.model_kind}\n")
        fh.write(f"# seed={result.seed}\n")
        fh.write(f"# wall_time_s={result.wall_time_s:.3f}\n")
        fh.write(f"# parameters: {param_text}\n")
        fh.write("generation,best_mse,mean_mse\n")
        for g, (best, mean) in enumerate(zip(result.history, result.mean_history)):
            fh.write(f"{g},{best!r},{mean!r}\n")


# ---------------------------------------------------------------------------
# temporal cross-validation


@dataclass(frozen=True)
class CvPlan:
    """Expanding-window folds over time-sorted pairs.

    ``block_bounds`` splits the index range into n_folds + 1 equal blocks
    (sizes within +-1); fold k trains on blocks [0..k] and validates on
    block k+1, so validation never precedes its training window.
    """

    n_folds: int
    block_bounds: tuple

    def folds(self):
        for k in range(self.n_folds):
            train_end = self.block_bounds[k][1]
            val_lo, val_hi = self.block_bounds[k + 1]
            yield np.arange(0, train_end), np.arange(val_lo, val_hi)


def make_cv_plan(pairs_or_times, n_folds: int = N_FOLDS) -> CvPlan:
    if n_folds < 1:
        raise CalibrationError("n_folds must be >= 1")
    if len(pairs_or_times) and isinstance(pairs_or_times[0], FeaturePair):
        times = np.array([p.t for p in pairs_or_times], dtype=float)
    else:
        times = np.asarray(pairs_or_times, dtype=float)
    n = times.size
    if n < n_folds + 1:
        raise InsufficientPairsError(f"need >= {n_folds + 1} pairs for {n_folds} folds, got {n}")
    if np.any(np.diff(times) < 0):
        raise UnsortedDataError("pairs must be sorted by timestamp")
    n_blocks = n_folds + 1
    base = n // n_blocks
    remainder = n % n_blocks
    bounds = []
    start = 0
    for i in range(n_blocks):
        size = base + (1 if i < remainder else 0)
        bounds.append((start, start + size))
        start += size
    return CvPlan(n_folds=n_folds, block_bounds=tuple(bounds))


# ---------------------------------------------------------------------------
# hyperparameter search


@dataclass(frozen=True)
class SearchBudget:
    """Trial count plus the first-fold median prune rule."""

    n_trials: int = N_TRIALS
    prune: bool = True

    def __post_init__(self):
        if self.n_trials < 1:
            raise CalibrationError("n_trials must be >= 1")


@dataclass(frozen=True)
class FloatRange:
    lo: float
    hi: float
    log: bool = False


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int
    log: bool = False


DEFAULT_SEARCH_SPACES = {
    "gbt": {
        "learning_rate": FloatRange(0.01, 0.6, log=True),
        "n_rounds": IntRange(20, 300, log=True),
        "max_depth": IntRange(2, 8),
        "l1_reg": FloatRange(1e-3, 2.0, log=True),
        "min_samples_leaf": IntRange(1, 10),
    },
    "rf": {
        "n_trees": IntRange(50, 1000, log=True),
        "max_depth": IntRange(4, 200, log=True),
        "min_samples_split": IntRange(2, 10),
        "min_samples_leaf": IntRange(1, 10),
        "feature_subsample": FloatRange(0.25, 1.0),
    },
    "fnn": {
        "n_layers": IntRange(1, 5),
        "units_per_layer": IntRange(8, 64, log=True),
        "dropout": FloatRange(0.0, 0.3),
        "learning_rate": FloatRange(1e-4, 0.05, log=True),
        "batch_size": IntRange(16, 64, log=True),
        "epochs": IntRange(5, 30),
    },
}

_LEARNERS = {
    "gbt": (GbtHyperparameters, fit_gbt),
    "rf": (RfHyperparameters, fit_rf),
    "fnn": (FnnHyperparameters, fit_fnn),
}


@dataclass(frozen=True)
class TrialRecord:
    index: int
    hyperparameters: dict
    status: str  # completed | pruned | diverged
    fold_losses: tuple
    mean_loss: float | None


@dataclass(frozen=True)
class SearchResult:
    learner_kind: str
    best_hyperparameters: object
    best_loss: float
    best_trial: int
    trials: tuple
    seed: int


def _sample(space: Mapping, rng: np.random.Generator) -> dict:
    out = {}
    for name, spec in space.items():
        if isinstance(spec, FloatRange):
            if spec.log:
                out[name] = float(np.exp(rng.uniform(np.log(spec.lo), np.log(spec.hi))))
            else:
                out[name] = float(rng.uniform(spec.lo, spec.hi))
        elif isinstance(spec, IntRange):
            if spec.log:
                value = int(round(np.exp(rng.uniform(np.log(spec.lo), np.log(spec.hi)))))
            else:
                value = int(rng.integers(spec.lo, spec.hi + 1))
            out[name] = int(min(max(value, spec.lo), spec.hi))
        else:
            raise CalibrationError(f"unsupported search-space entry for {name!r}: {spec!r}")
    return out


def evaluate_cv_loss(learner_kind: str, pairs, hp, plan: CvPlan, seed: int, first_fold_only=False):
    """Per-fold validation MSE for one hyperparameter set."""
    _, fit = _LEARNERS[learner_kind]
    losses = []
    for train_idx, val_idx in plan.folds():
        train = [pairs[i] for i in train_idx]
        val_X, val_y, _ = pairs_to_arrays([pairs[i] for i in val_idx])
        model = fit(train, hp, seed=seed)
        pred = model.predict_batch(val_X)
        losses.append(float(np.mean((pred - val_y) ** 2)))
        if first_fold_only:
            break
    return losses


def tune_hyperparameters(
    learner_kind: str,
    pairs: Sequence[FeaturePair],
    search_space: Mapping | None = None,
    budget: SearchBudget | None = None,
    plan: CvPlan | None = None,
    seed: int = 0,
) -> SearchResult:
    """Uniform random search (log-uniform where marked) under the CV plan.

    A trial is pruned when its first-fold loss exceeds the median first-fold
    loss of the trials completed so far.
    """
    if learner_kind not in _LEARNERS:
        raise CalibrationError(f"unknown learner kind {learner_kind!r}")
    budget = budget or SearchBudget()
    space = DEFAULT_SEARCH_SPACES[learner_kind] if search_space is None else dict(search_space)
    plan = plan or make_cv_plan(pairs)
    hp_cls, _ = _LEARNERS[learner_kind]

    root = np.random.SeedSequence(seed)
    sample_rng = np.random.default_rng(root.spawn(1)[0])
    fit_seeds = [int(s.generate_state(1)[0]) for s in root.spawn(budget.n_trials + 1)[1:]]

    trials: list[TrialRecord] = []
    completed_first_losses: list[float] = []
    best = None
    for trial_idx in range(budget.n_trials):
        sampled = _sample(space, sample_rng)
        try:
            hp = hp_cls(**sampled)
        except (ValueError, TypeError) as exc:
            raise CalibrationError(f"sampled hyperparameters invalid: {exc}") from exc
        fit_seed = fit_seeds[trial_idx]
        try:
            first = evaluate_cv_loss(learner_kind, pairs, hp, plan, fit_seed, first_fold_only=True)[0]
            if (
                budget.prune
                and completed_first_losses
                and first > float(np.median(completed_first_losses))
            ):
                trials.append(TrialRecord(trial_idx, sampled, "pruned", (first,), None))
                continue
            rest = []
            if plan.n_folds > 1:
                rest = evaluate_cv_loss(learner_kind, pairs, hp, _rest_plan(plan), fit_seed)
            fold_losses = [first, *rest]
        except TrainingDivergedError:
            trials.append(TrialRecord(trial_idx, sampled, "diverged", (), None))
            continue
        mean_loss = float(np.mean(fold_losses))
        trials.append(TrialRecord(trial_idx, sampled, "completed", tuple(fold_losses), mean_loss))
        completed_first_losses.append(fold_losses[0])
        if best is None or mean_loss < best[0]:
            best = (mean_loss, trial_idx, hp)

    if best is None:
        raise SearchFailureError("every trial was pruned or diverged", trials)
    return SearchResult(
        learner_kind=learner_kind,
        best_hyperparameters=best[2],
        best_loss=best[0],
        best_trial=best[1],
        trials=tuple(trials),
        seed=seed,
    )


def _rest_plan(plan: CvPlan) -> CvPlan:
    """The plan minus its first fold (first-fold loss already computed)."""
    return CvPlan(n_folds=plan.n_folds - 1, block_bounds=plan.block_bounds[1:])


def write_search_log(path, result: SearchResult) -> None:
    import json

    with open(path, "w") as fh:
        fh.write(f"# learner={result.learner_kind} seed={result.seed}\n")
        fh.write(f"# best_trial={result.best_trial} best_loss={result.best_loss!r}\n")
        fh.write("trial,status,mean_loss,fold_losses,hyperparameters\n")
        for rec in result.trials:
            folds = ";".join(repr(v) for v in rec.fold_losses)
            mean = "" if rec.mean_loss is None else repr(rec.mean_loss)
            hp_text = json.dumps(rec.hyperparameters, sort_keys=True, separators=(";", ":"))
            fh.write(f"{rec.index},{rec.status},{mean},{folds},{hp_text}\n")
