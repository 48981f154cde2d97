import numpy as np
import pytest

from cfbench import dataio, metrics, smoothing
from cfbench.models import IdmModel
from cfbench.smoothing import (
    DEFAULT_Q_DIAG,
    DEFAULT_R,
    KalmanConfig,
    NumericalError,
    TimestampOrderError,
    kalman_filter,
    load_kalman_config,
    smooth_segment,
)


def noisy_pair(profile_kwargs, duration, dt, seed, sigma=0.5):
    profile = dataio.SpeedProfile(**profile_kwargs)
    clean = dataio.generate_synthetic(profile, IdmModel(), duration=duration, dt=dt, seed=seed)
    noisy = dataio.generate_synthetic(
        profile, IdmModel(), duration=duration, dt=dt, seed=seed, noise_sigma=sigma
    )
    return clean, noisy


class TestKalmanFilter:
    def test_constant_velocity_estimate(self):
        t = np.arange(40.0)
        track = kalman_filter(t, 2.0 * t)
        assert np.all(np.abs(track.v[20:] - 2.0) < 0.05)

    def test_constant_position_estimates_decay(self):
        t = np.arange(60.0)
        track = kalman_filter(t, np.full(60, 12.5))
        assert abs(track.v[-1]) < 1e-6
        assert abs(track.a[-1]) < 1e-6

    def test_noise_reduction_with_default_config(self):
        clean, noisy = noisy_pair(
            dict(kind="sinusoidal", base_speed=7.0, amplitude=2.0, period=60.0),
            duration=120.0,
            dt=0.1,
            seed=5,
        )
        for attr in ("x_l", "x_f"):
            truth = getattr(clean, attr)
            meas = getattr(noisy, attr)
            track = kalman_filter(noisy.t, meas)
            raw_rmse = np.sqrt(np.mean((meas - truth) ** 2))
            filtered_rmse = np.sqrt(np.mean((track.x - truth) ** 2))
            assert filtered_rmse <= 0.7 * raw_rmse

    def test_rejects_unsorted_timestamps(self):
        with pytest.raises(TimestampOrderError):
            kalman_filter([0.0, 2.0, 1.0], [0.0, 1.0, 2.0])

    def test_requires_two_samples(self):
        with pytest.raises(smoothing.SmoothingError):
            kalman_filter([0.0], [1.0])

    def test_update_contracts_position_variance(self):
        rng = np.random.default_rng(7)
        t = np.arange(200.0)
        track = kalman_filter(t, 3.0 * t + rng.normal(0, 0.5, 200))
        assert np.all(track.var_post[1:] <= track.var_prior[1:] + 1e-12)

    def test_covariance_trace_finite_positive(self):
        t = np.arange(50.0)
        track = kalman_filter(t, 4.0 * t)
        assert np.all(np.isfinite(track.cov_trace))
        assert np.all(track.cov_trace > 0)

    def test_irregular_timestamps_preserved(self):
        t = np.array([0.0, 1.0, 2.0, 4.0, 5.0, 6.5, 8.0])
        x = 3.0 * t
        track = kalman_filter(t, x)
        assert np.array_equal(track.t, t)

    def test_initial_state_override(self):
        t = np.arange(30.0)
        config = KalmanConfig(initial_state=(0.0, 2.0, 0.0))
        track = kalman_filter(t, 2.0 * t, config)
        assert track.x[0] == 0.0
        assert track.v[0] == 2.0

    def test_initialization_insensitive_after_transient(self):
        # the declared defaults are a choice; estimates must forget them
        rng = np.random.default_rng(21)
        t = np.arange(150.0)
        x = 3.0 * t + rng.normal(0, 0.5, 150)
        loose = kalman_filter(t, x, KalmanConfig(initial_covariance=np.diag([1.0, 1.0, 1.0])))
        tight = kalman_filter(t, x, KalmanConfig(initial_covariance=np.diag([25.0, 25.0, 25.0])))
        assert np.max(np.abs(loose.x[60:] - tight.x[60:])) < 1e-5


class TestKalmanConfig:
    def test_reference_defaults_bit_exact(self):
        config = KalmanConfig()
        assert np.array_equal(config.q, np.diag([0.1, 0.01, 0.001]))
        assert config.r == 0.5
        assert DEFAULT_Q_DIAG == (0.1, 0.01, 0.001)
        assert DEFAULT_R == 0.5

    def test_rejects_negative_r(self):
        with pytest.raises(ValueError):
            KalmanConfig(r=0.0)

    def test_rejects_asymmetric_q(self):
        q = np.diag([0.1, 0.01, 0.001])
        q[0, 1] = 0.5
        with pytest.raises(ValueError, match="symmetric"):
            KalmanConfig(q=q)

    def test_rejects_indefinite_q(self):
        with pytest.raises(ValueError, match="semidefinite"):
            KalmanConfig(q=np.diag([-0.1, 0.01, 0.001]))

    def test_override_file(self, tmp_path):
        path = tmp_path / "kalman.cfg"
        path.write_text("q_diag = 0.2, 0.02, 0.002\nr = 1.5\np0_diag = 2, 2, 2\n")
        config = load_kalman_config(path)
        assert np.array_equal(config.q, np.diag([0.2, 0.02, 0.002]))
        assert config.r == 1.5
        assert np.array_equal(config.initial_covariance, np.diag([2.0, 2.0, 2.0]))

    def test_override_file_rejects_unknown_key(self, tmp_path):
        path = tmp_path / "kalman.cfg"
        path.write_text("sigma = 1\n")
        with pytest.raises(smoothing.SmoothingError):
            load_kalman_config(path)


class TestSmoothSegment:
    def test_noiseless_segment_barely_moves(self):
        profile = dataio.SpeedProfile("sinusoidal", base_speed=6.0, amplitude=1.0, period=80.0)
        seg = dataio.generate_synthetic(profile, IdmModel(), duration=120.0, dt=1.0, seed=7)
        smoothed = smooth_segment(seg)
        assert np.max(np.abs(smoothed.x_f - seg.x_f)) < 0.1
        assert np.max(np.abs(smoothed.x_l - seg.x_l)) < 0.1

    def test_timestamps_preserved(self, sinusoid_segment):
        smoothed = smooth_segment(sinusoid_segment)
        assert np.array_equal(smoothed.t, sinusoid_segment.t)

    def test_noisy_spacing_total_variation_drops(self):
        clean, noisy = noisy_pair(
            dict(kind="sinusoidal", base_speed=7.0, amplitude=2.0, period=60.0),
            duration=200.0,
            dt=1.0,
            seed=9,
        )
        smoothed = smooth_segment(noisy)
        tv = lambda s: float(np.sum(np.abs(np.diff(s))))
        assert tv(smoothed.spacing()) < tv(noisy.spacing())

    def test_filtered_acceleration_less_oscillatory(self):
        clean, noisy = noisy_pair(
            dict(kind="sinusoidal", base_speed=7.0, amplitude=2.0, period=60.0),
            duration=200.0,
            dt=1.0,
            seed=10,
        )
        smoothed = smooth_segment(noisy)
        raw_accel = np.diff(noisy.x_f, n=2)  # finite-difference acceleration
        assert metrics.fft_oscillation(smoothed.a_f, 1.0) <= metrics.fft_oscillation(raw_accel, 1.0)
