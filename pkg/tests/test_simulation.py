import numpy as np
import pytest

from cfbench import dataio, simulation
from cfbench.dataio import TrajectorySegment
from cfbench.models import (
    AccelerationBounds,
    ConstantModel,
    IdmModel,
    IdmParameters,
    ReplayModel,
)
from cfbench.simulation import RolloutError, rollout, rollout_all


class FailingModel:
    name = "broken"

    def predict(self, state):
        return float("nan")

    def parameters(self):
        return {}


def flat_segment(n=80, spacing=20.0, segment_id="flat"):
    t = np.arange(float(n))
    x_f = np.zeros(n)
    return TrajectorySegment(
        segment_id=segment_id,
        t=t,
        x_l=x_f + spacing,
        v_l=np.zeros(n),
        a_l=np.zeros(n),
        x_f=x_f,
        v_f=np.zeros(n),
        a_f=np.zeros(n),
        dt=1.0,
    )


class TestRollout:
    def test_oracle_replay_reproduces_positions(self, sinusoid_segment):
        model = ReplayModel.from_segments("oracle", [sinusoid_segment])
        traj = rollout(sinusoid_segment, model)
        assert np.max(np.abs(traj.x_f - sinusoid_segment.x_f)) < 1e-6
        assert np.max(np.abs(traj.v_f - sinusoid_segment.v_f)) < 1e-6

    def test_zero_acceleration_from_rest(self):
        seg = flat_segment()
        traj = rollout(seg, ConstantModel(0.0))
        assert np.all(traj.x_f == 0.0)
        assert np.all(traj.v_f == 0.0)

    def test_idm_self_consistency(self):
        profile = dataio.SpeedProfile("sinusoidal", base_speed=6.0, amplitude=2.0, period=60.0)
        seg = dataio.generate_synthetic(profile, IdmModel(), duration=120.0, dt=1.0, seed=17)
        traj = rollout(seg, IdmModel())
        assert abs(traj.x_f[-1] - seg.x_f[-1]) < 0.1

    def test_noiseless_self_resimulation_exact(self, sinusoid_segment, stopgo_segment):
        # re-simulating a noiseless synthetic segment with its generating
        # model replays identical float operations: zero error, bit-exact
        for seg in (sinusoid_segment, stopgo_segment):
            traj = rollout(seg, IdmModel())
            assert np.array_equal(traj.x_f, seg.x_f)
            assert np.array_equal(traj.v_f, seg.v_f)
            assert np.array_equal(traj.a_f, seg.a_f)

    def test_initial_condition_bit_exact(self, stopgo_segment):
        traj = rollout(stopgo_segment, IdmModel())
        assert traj.x_f[0] == stopgo_segment.x_f[0]
        assert traj.v_f[0] == stopgo_segment.v_f[0]
        assert traj.a_f[0] == stopgo_segment.a_f[0]

    def test_kinematic_consistency_recheck(self, stopgo_segment):
        traj = rollout(stopgo_segment, IdmModel())
        dt = 1.0
        for k in range(1, traj.t.size):
            expected = traj.x_f[k - 1] + traj.v_f[k - 1] * dt + 0.5 * traj.a_f[k - 1] * dt * dt
            assert traj.x_f[k] == expected

    def test_non_negative_speed_and_floor_adjustment(self):
        seg = flat_segment(spacing=50.0)
        traj = rollout(seg, ConstantModel(-1.0))  # wants to reverse immediately
        assert np.all(traj.v_f >= 0.0)
        assert np.all(traj.a_f >= -1.0)
        # once stopped, stored accel must be exactly the stopping value (0 here)
        assert np.all(traj.a_f[1:-1] == 0.0)

    def test_clamping_applied(self):
        seg = flat_segment(spacing=500.0)
        traj = rollout(seg, ConstantModel(10.0), AccelerationBounds())
        assert np.all(traj.a_f <= 2.0)

    def test_collision_flagged_not_fatal(self):
        seg = flat_segment(n=40, spacing=5.0)
        traj = rollout(seg, ConstantModel(2.0))  # accelerates into the stopped leader
        assert traj.collision
        assert traj.collision_step is not None
        assert traj.t.size == seg.n_samples

    def test_nonfinite_prediction_raises_with_step(self, sinusoid_segment):
        with pytest.raises(RolloutError, match="step"):
            rollout(sinusoid_segment, FailingModel())

    def test_irregular_grid_interpolated(self):
        # segment sampled at 0.5 s; simulation grid fixed at 1 s
        profile = dataio.SpeedProfile("sinusoidal", base_speed=6.0, amplitude=1.0, period=60.0)
        seg = dataio.generate_synthetic(profile, IdmModel(), duration=100.0, dt=0.5, seed=2)
        traj = rollout(seg, IdmModel(), dt=1.0)
        assert traj.t.size == 101
        assert np.all(np.diff(traj.t) == 1.0)
        assert traj.x_f[0] == seg.x_f[0]

    def test_rollout_determinism(self, stopgo_segment):
        a = rollout(stopgo_segment, IdmModel())
        b = rollout(stopgo_segment, IdmModel())
        assert np.array_equal(a.x_f, b.x_f)
        assert np.array_equal(a.a_f, b.a_f)


class TestRolloutAll:
    def test_cardinality(self, sinusoid_segment, stopgo_segment):
        profile = dataio.SpeedProfile("constant", base_speed=5.0)
        third = dataio.generate_synthetic(profile, IdmModel(), duration=90.0, dt=1.0, seed=5)
        segments = [sinusoid_segment, stopgo_segment, third]
        models = [IdmModel(), ConstantModel(0.0)]
        batch = rollout_all(segments, models)
        assert sum(len(v) for v in batch.results.values()) == 6
        assert batch.failures == ()

    def test_failure_isolation(self, sinusoid_segment, stopgo_segment):
        segments = [sinusoid_segment, stopgo_segment]
        batch = rollout_all(segments, [FailingModel(), IdmModel()])
        assert len(batch.failures) == 2
        assert all(f.model_name == "broken" for f in batch.failures)
        assert len(batch.results["idm"]) == 2

    def test_duplicate_names_rejected(self, sinusoid_segment):
        with pytest.raises(ValueError):
            rollout_all([sinusoid_segment], [IdmModel(), IdmModel()])

    def test_repeat_invocation_identical(self, sinusoid_segment):
        models = [IdmModel(), ConstantModel(0.5)]
        a = rollout_all([sinusoid_segment], models)
        b = rollout_all([sinusoid_segment], models)
        for name in a.results:
            assert np.array_equal(a.results[name][0].x_f, b.results[name][0].x_f)


class TestTrajectoryDump:
    def test_dump_columns(self, tmp_path, sinusoid_segment):
        traj = rollout(sinusoid_segment, IdmModel())
        path = tmp_path / "dump.csv"
        simulation.write_trajectory_dump(path, traj)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "t,x_l,v_l,x_f_obs,v_f_obs,x_f_sim,v_f_sim,a_f_sim"
        assert len(lines) == 1 + traj.t.size
