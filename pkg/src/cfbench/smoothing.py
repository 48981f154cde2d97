"""Kalman smoothing of position series with a constant-acceleration state model.

Only position is observed; speed and acceleration are inferred by the
filter. The transition matrix is rebuilt every step from the actual time
gap, so irregular sampling is handled without resampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import TrajectorySegment

DEFAULT_Q_DIAG = (0.1, 0.01, 0.001)
DEFAULT_R = 0.5
DEFAULT_P0_DIAG = (1.0, 1.0, 1.0)


class SmoothingError(Exception):
    pass


class TimestampOrderError(SmoothingError):
    pass


class NumericalError(SmoothingError):
    pass


def _default_q() -> np.ndarray:
    return np.diag(DEFAULT_Q_DIAG).astype(float)


def _default_p0() -> np.ndarray:
    return np.diag(DEFAULT_P0_DIAG).astype(float)


@dataclass(frozen=True)
class KalmanConfig:
    """Process/measurement noise and initialization for the position filter."""

    q: np.ndarray = field(default_factory=_default_q)
    r: float = DEFAULT_R
    initial_covariance: np.ndarray = field(default_factory=_default_p0)
    initial_state: tuple | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p0 = np.asarray(self.initial_covariance, dtype=float)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "initial_covariance", p0)
        if q.shape != (3, 3) or p0.shape != (3, 3):
            raise ValueError("q and initial_covariance must be 3x3")
        if not np.allclose(q, q.T, atol=1e-12):
            raise ValueError("q must be symmetric")
        if np.min(np.linalg.eigvalsh(q)) < -1e-12:
            raise ValueError("q must be positive semidefinite")
        if not self.r > 0:
            raise ValueError("r must be positive")


@dataclass(frozen=True)
class FilteredTrack:
    """Per-step state estimates plus covariance diagnostics."""

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    cov_trace: np.ndarray
    var_prior: np.ndarray  # position variance after predict
    var_post: np.ndarray  # position variance after update


def kalman_filter(t, x, config: KalmanConfig | None = None) -> FilteredTrack:
    """Forward predict/update recursion over one position series.

    State is (position, speed, acceleration) with transition
    F(dt) = [[1, dt, dt^2/2], [0, 1, dt], [0, 0, 1]]; the measurement
    extracts position only.
    """
    config = config or KalmanConfig()
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    n = t.size
    if n < 2:
        raise SmoothingError(f"need >= 2 samples, got {n}")
    if np.any(np.diff(t) <= 0):
        raise TimestampOrderError("timestamps must be strictly increasing")

    if config.initial_state is not None:
        s = np.array(config.initial_state, dtype=float)
    else:
        s = np.array([x[0], (x[1] - x[0]) / (t[1] - t[0]), 0.0])
    P = config.initial_covariance.copy()
    q = config.q
    r = config.r

    out_x = np.empty(n)
    out_v = np.empty(n)
    out_a = np.empty(n)
    trace = np.empty(n)
    var_prior = np.empty(n)
    var_post = np.empty(n)

    out_x[0], out_v[0], out_a[0] = s
    trace[0] = np.trace(P)
    var_prior[0] = var_post[0] = P[0, 0]

    eye = np.eye(3)
    for k in range(1, n):
        dt = t[k] - t[k - 1]
        F = np.array([[1.0, dt, 0.5 * dt * dt], [0.0, 1.0, dt], [0.0, 0.0, 1.0]])
        s = F @ s
        P = F @ P @ F.T + q
        var_prior[k] = P[0, 0]

        innov = x[k] - s[0]
        gain_denom = P[0, 0] + r
        K = P[:, 0] / gain_denom
        s = s + K * innov
        # Joseph form keeps P symmetric positive semidefinite
        IKH = eye.copy()
        IKH[:, 0] -= K
        P = IKH @ P @ IKH.T + np.outer(K, K) * r

        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(P))):
            raise NumericalError(f"filter diverged at step {k} (t={t[k]:g})")
        out_x[k], out_v[k], out_a[k] = s
        trace[k] = np.trace(P)
        var_post[k] = P[0, 0]

    return FilteredTrack(t=t, x=out_x, v=out_v, a=out_a, cov_trace=trace, var_prior=var_prior, var_post=var_post)


def smooth_segment(seg: TrajectorySegment, config: KalmanConfig | None = None) -> TrajectorySegment:
    """Filter leader and follower tracks independently, keeping the time grid.

    Downstream features use the filter's speed/acceleration estimates rather
    than re-differenced positions.
    """
    leader = kalman_filter(seg.t, seg.x_l, config)
    follower = kalman_filter(seg.t, seg.x_f, config)
    return TrajectorySegment(
        segment_id=seg.segment_id,
        t=seg.t,
        x_l=leader.x,
        v_l=leader.v,
        a_l=leader.a,
        x_f=follower.x,
        v_f=follower.v,
        a_f=follower.a,
        dt=seg.dt,
    )


def load_kalman_config(path) -> KalmanConfig:
    """Key-value override file: q_diag, r, p0_diag (comma-separated diagonals)."""
    q_diag = list(DEFAULT_Q_DIAG)
    r = DEFAULT_R
    p0_diag = list(DEFAULT_P0_DIAG)
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SmoothingError(f"{path}: cannot parse line {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "q_diag":
            q_diag = [float(v) for v in value.split(",")]
        elif key == "r":
            r = float(value)
        elif key == "p0_diag":
            p0_diag = [float(v) for v in value.split(",")]
        else:
            raise SmoothingError(f"{path}: unknown key {key!r}")
    if len(q_diag) != 3 or len(p0_diag) != 3:
        raise SmoothingError(f"{path}: diagonals must have 3 entries")
    return KalmanConfig(q=np.diag(q_diag), r=r, initial_covariance=np.diag(p0_diag))
