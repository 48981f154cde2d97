"""Closed-loop rollout: replayed leader, model-driven follower.

The follower is initialized from the first observed sample, then advanced
recursively: build the car-following state, predict, clamp, integrate with
v' = max(0, v + a*dt) and x' = x + v*dt + a*dt^2/2. When v would go
negative the stored step acceleration is adjusted to the value that brings
the speed exactly to zero, so the stored series stays kinematically
consistent.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataio import CarFollowingState, TrajectorySegment, _fmt
from .models import AccelerationBounds, clamp_accel

SIM_DT_S = 1.0

# spacing floor fed to models once a collision has occurred (rollout continues)
_DS_FLOOR = 0.01


class RolloutError(Exception):
    pass


@dataclass(frozen=True)
class SimulatedTrajectory:
    """Simulated follower on the simulation grid, plus the aligned observations."""

    segment_id: str
    model_name: str
    t: np.ndarray
    x_f: np.ndarray
    v_f: np.ndarray
    a_f: np.ndarray
    x_l: np.ndarray
    v_l: np.ndarray
    x_f_obs: np.ndarray
    v_f_obs: np.ndarray
    a_f_obs: np.ndarray
    bounds: AccelerationBounds | None
    collision: bool
    collision_step: int | None

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


@dataclass(frozen=True)
class RolloutFailure:
    model_name: str
    segment_id: str
    error: str


@dataclass(frozen=True)
class RolloutBatch:
    results: dict
    failures: tuple


def drive_follower(t, x_l, v_l, model, bounds, x_f0, v_f0, a_f0=None):
    """Advance the follower over the grid; returns (x_f, v_f, a_f, collision_step).

    ``a_f0`` seeds the first integration step and the first a_prev feature;
    None bootstraps it from the model at the initial state (used when
    generating data from scratch). ``bounds`` of None disables clamping.
    """
    t = np.asarray(t, dtype=float)
    x_l = np.asarray(x_l, dtype=float)
    v_l = np.asarray(v_l, dtype=float)
    n = t.size
    x = np.empty(n)
    v = np.empty(n)
    a = np.empty(n)
    x[0], v[0] = float(x_f0), float(v_f0)
    collision_step = None
    if x_l[0] - x[0] <= 0:
        collision_step = 0
    if a_f0 is None:
        state0 = CarFollowingState(
            dv=v_l[0] - v[0], ds=max(x_l[0] - x[0], _DS_FLOOR), a_prev=0.0, v_prev=v[0]
        )
        a[0] = _predict_step(model, state0, bounds, 0)
    else:
        a[0] = float(a_f0)

    for k in range(1, n):
        dt = t[k] - t[k - 1]
        a_applied = a[k - 1]
        if v[k - 1] + a_applied * dt < 0:
            a_applied = -v[k - 1] / dt
            a[k - 1] = a_applied
        v[k] = max(0.0, v[k - 1] + a_applied * dt)
        x[k] = x[k - 1] + v[k - 1] * dt + 0.5 * a_applied * dt * dt
        ds = x_l[k] - x[k]
        if ds <= 0 and collision_step is None:
            collision_step = k
        state = CarFollowingState(
            dv=v_l[k] - v[k], ds=max(ds, _DS_FLOOR), a_prev=a[k - 1], v_prev=v[k - 1]
        )
        a[k] = _predict_step(model, state, bounds, k)
    return x, v, a, collision_step


def _predict_step(model, state, bounds, step):
    raw = model.predict(state)
    if not math.isfinite(raw):
        raise RolloutError(f"model returned non-finite acceleration at step {step}, state {state}")
    return clamp_accel(float(raw), bounds) if bounds is not None else float(raw)


def _regrid(seg: TrajectorySegment, dt: float):
    """Simulation grid from the segment start; leader/observed follower resampled.

    When the segment already sits on the grid the original arrays are used
    so aligned comparisons are bit-exact; otherwise linear interpolation.
    """
    n_steps = int(math.floor((seg.t[-1] - seg.t[0]) / dt + 1e-9)) + 1
    t = seg.t[0] + np.arange(n_steps) * dt
    if n_steps == seg.n_samples and np.max(np.abs(t - seg.t)) < 1e-9:
        return seg.t, seg.x_l, seg.v_l, seg.x_f, seg.v_f, seg.a_f
    cols = tuple(np.interp(t, seg.t, c) for c in (seg.x_l, seg.v_l, seg.x_f, seg.v_f, seg.a_f))
    return (t, *cols)


def rollout(
    seg: TrajectorySegment,
    model,
    bounds: AccelerationBounds | None = None,
    dt: float = SIM_DT_S,
) -> SimulatedTrajectory:
    """Simulate one model over one segment; spacing <= 0 flags a collision."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    bounds = bounds if bounds is not None else AccelerationBounds()
    t, x_l, v_l, x_f_obs, v_f_obs, a_f_obs = _regrid(seg, dt)
    if hasattr(model, "begin_segment"):
        model.begin_segment(seg.segment_id)
    x, v, a, collision_step = drive_follower(
        t, x_l, v_l, model, bounds, x_f0=x_f_obs[0], v_f0=v_f_obs[0], a_f0=a_f_obs[0]
    )
    return SimulatedTrajectory(
        segment_id=seg.segment_id,
        model_name=model.name,
        t=t,
        x_f=x,
        v_f=v,
        a_f=a,
        x_l=np.asarray(x_l, dtype=float),
        v_l=np.asarray(v_l, dtype=float),
        x_f_obs=np.asarray(x_f_obs, dtype=float),
        v_f_obs=np.asarray(v_f_obs, dtype=float),
        a_f_obs=np.asarray(a_f_obs, dtype=float),
        bounds=bounds,
        collision=collision_step is not None,
        collision_step=collision_step,
    )


def rollout_all(
    segments: Sequence[TrajectorySegment],
    models: Sequence,
    bounds: AccelerationBounds | None = None,
    dt: float = SIM_DT_S,
) -> RolloutBatch:
    """Simulate every (model, segment) pair; failures are recorded, not raised."""
    names = [m.name for m in models]
    if len(set(names)) != len(names):
        raise ValueError(f"model names must be unique, got {names}")
    results: dict[str, list] = {m.name: [] for m in models}
    failures: list[RolloutFailure] = []
    for model in models:
        for seg in segments:
            try:
                results[model.name].append(rollout(seg, model, bounds, dt))
            except Exception as exc:  # per-pair isolation
                failures.append(RolloutFailure(model.name, seg.segment_id, f"{type(exc).__name__}: {exc}"))
    return RolloutBatch(
        results={k: tuple(v) for k, v in results.items()}, failures=tuple(failures)
    )


def write_trajectory_dump(path, traj: SimulatedTrajectory) -> None:
    """Per-step dump for external plotting."""
    cols = ("t", "x_l", "v_l", "x_f_obs", "v_f_obs", "x_f_sim", "v_f_sim", "a_f_sim")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for k in range(traj.t.size):
            row = (
                traj.t[k],
                traj.x_l[k],
                traj.v_l[k],
                traj.x_f_obs[k],
                traj.v_f_obs[k],
                traj.x_f[k],
                traj.v_f[k],
                traj.a_f[k],
            )
            fh.write(",".join(_fmt(v) for v in row) + "\n")
