import numpy as np
import pytest

from cfbench import calibration, dataio, simulation
from cfbench.calibration import (
    DEFAULT_SEARCH_SPACES,
    CvPlan,
    FloatRange,
    GaConfig,
    GaConfigError,
    InsufficientPairsError,
    IntRange,
    SearchBudget,
    SearchFailureError,
    UnsortedDataError,
    calibrate_ga,
    evaluate_cv_loss,
    make_cv_plan,
    tune_hyperparameters,
)
from cfbench.learners import GbtHyperparameters
from cfbench.models import AccModel, AccParameters, IdmModel, IdmParameters


def bounds_around(params, frac=0.5):
    return {
        name: ((1 - frac) * getattr(params, name), (1 + frac) * getattr(params, name))
        for name in type(params).names
    }


@pytest.fixture(scope="module")
def idm_pairs(stopgo_segment):
    return dataio.derive_features(stopgo_segment)


class TestGaConfig:
    def test_defaults(self):
        cfg = GaConfig()
        assert cfg.population_size == 50
        assert cfg.generations == 100
        assert cfg.crossover_rate == 0.9
        assert cfg.mutation_rate == 0.1
        assert cfg.elitism == 2

    def test_validation(self):
        with pytest.raises(GaConfigError):
            GaConfig(population_size=2)
        with pytest.raises(GaConfigError):
            GaConfig(crossover_rate=1.5)
        with pytest.raises(GaConfigError):
            GaConfig(elitism=50, population_size=50)

    def test_degenerate_bounds_rejected(self, idm_pairs):
        bad = bounds_around(IdmParameters())
        bad["T"] = (1.5, 1.5)
        with pytest.raises(GaConfigError, match="degenerate"):
            calibrate_ga("idm", idm_pairs, GaConfig(parameter_bounds=bad))

    def test_bounds_admitting_invalid_parameters_rejected(self, idm_pairs):
        bad = bounds_around(IdmParameters())
        bad["delta"] = (0.5, 8.0)  # clipping could produce delta < 1
        with pytest.raises(GaConfigError, match="invalid"):
            calibrate_ga("idm", idm_pairs, GaConfig(parameter_bounds=bad))


class TestCalibrateGa:
    def test_idm_recovery(self, stopgo_segment, idm_pairs):
        truth = IdmParameters()
        cfg = GaConfig(seed=11, parameter_bounds=bounds_around(truth))
        result = calibrate_ga("idm", idm_pairs, cfg)
        assert result.best_mse < 1e-3
        traj = simulation.rollout(stopgo_segment, IdmModel(result.parameters))
        assert abs(traj.x_f[-1] - stopgo_segment.x_f[-1]) < 0.5

    def test_acc_recovery(self):
        truth = AccParameters(k1=0.2, k2=0.4, t_hw=1.6, s0=2.0)
        profile = dataio.SpeedProfile("stopgo", base_speed=6.0, period=80.0)
        seg = dataio.generate_synthetic(profile, AccModel(truth), duration=300.0, dt=1.0, seed=4)
        pairs = dataio.derive_features(seg)
        cfg = GaConfig(seed=12, parameter_bounds=bounds_around(truth))
        result = calibrate_ga("acc", pairs, cfg)
        assert result.best_mse < 1e-4

    def test_zero_generations_returns_initial_best(self, idm_pairs):
        cfg = GaConfig(seed=5, generations=0, parameter_bounds=bounds_around(IdmParameters()))
        result = calibrate_ga("idm", idm_pairs, cfg)
        assert len(result.history) == 1
        assert result.n_evaluations == cfg.population_size

    def test_best_fitness_non_increasing(self, idm_pairs):
        cfg = GaConfig(seed=7, generations=25, parameter_bounds=bounds_around(IdmParameters()))
        result = calibrate_ga("idm", idm_pairs, cfg)
        for earlier, later in zip(result.history, result.history[1:]):
            assert later <= earlier

    def test_every_individual_within_bounds(self, idm_pairs):
        bounds = bounds_around(IdmParameters())
        cfg = GaConfig(
            seed=3,
            generations=10,
            population_size=20,
            parameter_bounds=bounds,
            record_population=True,
        )
        result = calibrate_ga("idm", idm_pairs, cfg)
        lo = np.array([bounds[n][0] for n in IdmParameters.names])
        hi = np.array([bounds[n][1] for n in IdmParameters.names])
        for pop in result.population_history:
            assert np.all(pop >= lo - 1e-12)
            assert np.all(pop <= hi + 1e-12)

    def test_deterministic_for_seed(self, idm_pairs):
        cfg = GaConfig(seed=9, generations=8, parameter_bounds=bounds_around(IdmParameters()))
        a = calibrate_ga("idm", idm_pairs, cfg)
        b = calibrate_ga("idm", idm_pairs, cfg)
        assert a.history == b.history
        assert a.parameters == b.parameters

    def test_empty_pairs_rejected(self):
        with pytest.raises(InsufficientPairsError):
            calibrate_ga("idm", [], GaConfig())

    def test_unknown_kind(self, idm_pairs):
        with pytest.raises(calibration.CalibrationError):
            calibrate_ga("svm", idm_pairs, GaConfig())

    def test_report_file(self, tmp_path, idm_pairs):
        cfg = GaConfig(seed=2, generations=5, parameter_bounds=bounds_around(IdmParameters()))
        result = calibrate_ga("idm", idm_pairs, cfg)
        path = tmp_path / "report.csv"
        calibration.write_calibration_report(path, result)
        lines = path.read_text().splitlines()
        assert lines[4] == "generation,best_mse,mean_mse"
        assert len([ln for ln in lines if not ln.startswith("#")]) == 1 + len(result.history)


class TestCvPlan:
    def test_600_pairs_5_folds(self):
        plan = make_cv_plan(np.arange(600.0), n_folds=5)
        folds = list(plan.folds())
        assert len(folds) == 5
        train_sizes = [len(tr) for tr, _ in folds]
        val_sizes = [len(va) for _, va in folds]
        assert train_sizes == [100, 200, 300, 400, 500]
        assert val_sizes == [100] * 5

    def test_validation_strictly_after_training(self):
        times = np.sort(np.random.default_rng(0).uniform(0, 1000, 137))
        plan = make_cv_plan(times, n_folds=5)
        for train_idx, val_idx in plan.folds():
            assert val_idx.min() > train_idx.max()
            assert times[val_idx].min() >= times[train_idx].max()

    def test_rejects_unsorted(self):
        with pytest.raises(UnsortedDataError):
            make_cv_plan(np.array([0.0, 2.0, 1.0, 3.0, 4.0, 5.0]))

    def test_too_few_pairs(self):
        with pytest.raises(InsufficientPairsError):
            make_cv_plan(np.arange(5.0), n_folds=5)

    def test_block_sizes_within_one(self):
        plan = make_cv_plan(np.arange(103.0), n_folds=5)
        sizes = [hi - lo for lo, hi in plan.block_bounds]
        assert max(sizes) - min(sizes) <= 1
        assert sum(sizes) == 103

    def test_accepts_feature_pairs(self, idm_pairs):
        plan = make_cv_plan(idm_pairs, n_folds=5)
        assert plan.n_folds == 5


def tiny_pairs(n=240, seed=0):
    profile = dataio.SpeedProfile("sinusoidal", base_speed=6.0, amplitude=2.0, period=70.0)
    seg = dataio.generate_synthetic(
        dataio.SpeedProfile("sinusoidal", base_speed=6.0, amplitude=2.0, period=70.0),
        IdmModel(),
        duration=float(n),
        dt=1.0,
        seed=seed,
    )
    return dataio.derive_features(seg)[:n]


TINY_SPACE = {
    "learning_rate": FloatRange(0.05, 0.6, log=True),
    "n_rounds": IntRange(10, 40),
    "max_depth": IntRange(2, 4),
    "l1_reg": FloatRange(1e-3, 1.0, log=True),
    "min_samples_leaf": IntRange(1, 5),
}


class TestTuneHyperparameters:
    def test_single_trial_returned(self):
        pairs = tiny_pairs()
        plan = make_cv_plan(pairs, n_folds=3)
        result = tune_hyperparameters(
            "gbt", pairs, TINY_SPACE, SearchBudget(n_trials=1), plan, seed=0
        )
        assert result.best_trial == 0
        assert len(result.trials) == 1
        assert result.trials[0].status == "completed"

    def test_deterministic_for_seed(self):
        pairs = tiny_pairs()
        plan = make_cv_plan(pairs, n_folds=3)
        a = tune_hyperparameters("gbt", pairs, TINY_SPACE, SearchBudget(n_trials=6), plan, seed=4)
        b = tune_hyperparameters("gbt", pairs, TINY_SPACE, SearchBudget(n_trials=6), plan, seed=4)
        assert a.best_trial == b.best_trial
        assert a.best_loss == b.best_loss
        assert [t.hyperparameters for t in a.trials] == [t.hyperparameters for t in b.trials]

    def test_space_containing_defaults_beats_them(self):
        # frozen-seed empirical check: the searched optimum is at least as
        # good as a known-good configuration inside the space
        pairs = tiny_pairs()
        plan = make_cv_plan(pairs, n_folds=3)
        reference = GbtHyperparameters(
            learning_rate=0.477, n_rounds=20, max_depth=3, l1_reg=0.946, min_samples_leaf=1
        )
        ref_losses = evaluate_cv_loss("gbt", pairs, reference, plan, seed=0)
        result = tune_hyperparameters(
            "gbt", pairs, TINY_SPACE, SearchBudget(n_trials=12), plan, seed=1
        )
        assert result.best_loss <= float(np.mean(ref_losses))

    def test_prune_rule_skips_bad_first_folds(self):
        pairs = tiny_pairs()
        plan = make_cv_plan(pairs, n_folds=3)
        result = tune_hyperparameters(
            "gbt", pairs, TINY_SPACE, SearchBudget(n_trials=16), plan, seed=2
        )
        statuses = {t.status for t in result.trials}
        assert "completed" in statuses
        pruned = [t for t in result.trials if t.status == "pruned"]
        for t in pruned:
            assert t.mean_loss is None
            assert len(t.fold_losses) == 1

    def test_search_failure_when_all_diverge(self, monkeypatch):
        pairs = tiny_pairs()
        plan = make_cv_plan(pairs, n_folds=3)

        def explode(*args, **kwargs):
            from cfbench.learners import TrainingDivergedError

            raise TrainingDivergedError(0)

        monkeypatch.setitem(calibration._LEARNERS, "gbt", (GbtHyperparameters, explode))
        with pytest.raises(SearchFailureError):
            tune_hyperparameters("gbt", pairs, TINY_SPACE, SearchBudget(n_trials=3), plan, seed=0)

    def test_default_spaces_contain_reference_configurations(self):
        # tuned reference values sit inside the default search boxes
        gbt = DEFAULT_SEARCH_SPACES["gbt"]
        assert gbt["learning_rate"].lo <= 0.477 <= gbt["learning_rate"].hi
        assert gbt["n_rounds"].lo <= 125 <= gbt["n_rounds"].hi
        assert gbt["l1_reg"].lo <= 0.946 <= gbt["l1_reg"].hi
        rf = DEFAULT_SEARCH_SPACES["rf"]
        assert rf["n_trees"].lo <= 776 <= rf["n_trees"].hi
        assert rf["max_depth"].lo <= 146 <= rf["max_depth"].hi
        fnn = DEFAULT_SEARCH_SPACES["fnn"]
        assert fnn["units_per_layer"].lo <= 41 <= fnn["units_per_layer"].hi
        assert fnn["dropout"].lo <= 0.0723 <= fnn["dropout"].hi
        assert fnn["learning_rate"].lo <= 0.0127 <= fnn["learning_rate"].hi

    def test_search_log_file(self, tmp_path):
        pairs = tiny_pairs()
        plan = make_cv_plan(pairs, n_folds=3)
        result = tune_hyperparameters(
            "gbt", pairs, TINY_SPACE, SearchBudget(n_trials=4), plan, seed=3
        )
        path = tmp_path / "log.csv"
        calibration.write_search_log(path, result)
        lines = path.read_text().splitlines()
        assert lines[2] == "trial,status,mean_loss,fold_losses,hyperparameters"
        assert len(lines) == 3 + 4
