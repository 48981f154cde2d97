"""Trajectory ingestion, cleaning, segmentation, features, splits, synthetic data.

Raw input is delimited text with a header row; a schema maps file columns
onto the canonical fields (t, x_leader, x_follower, optionally v_leader and
v_follower). Positions are meters along the route, times are seconds.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

# Pipeline defaults (procedure constants; see the constants test).
GAP_THRESHOLD_S = 2.0
MIN_DURATION_S = 60.0
TEST_FRACTION = 0.25
VALIDATION_FRACTION = 0.2

FEATURE_NAMES = ("dv", "ds", "a_prev", "v_prev")

DEFAULT_SCHEMA = {
    "t": "t",
    "x_leader": "x_leader",
    "x_follower": "x_follower",
    "v_leader": "v_leader",
    "v_follower": "v_follower",
}
_REQUIRED_FIELDS = ("t", "x_leader", "x_follower")


class DataError(Exception):
    """Base class for data-handling failures."""


class SchemaError(DataError):
    """A required column is missing from the input file."""


class EmptyInputError(DataError):
    """The input file contains no usable rows."""


class FeatureDerivationError(DataError):
    """A sample cannot be converted into a car-following state."""


class InsufficientDataError(DataError):
    """Not enough segments or samples for the requested operation."""


class GenerationError(DataError):
    """Synthetic trajectory generation failed (e.g. collision)."""


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class RawObservation:
    """One synchronized leader/follower sample from a source file."""

    timestamp: float
    leader_position: float
    follower_position: float
    leader_speed: float | None = None
    follower_speed: float | None = None


@dataclass(frozen=True)
class KinematicLimits:
    """Plausibility bounds used for outlier removal (low-speed shuttles)."""

    max_speed: float = 20.0
    max_accel: float = 5.0


def _readonly(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float).copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TrajectorySegment:
    """A contiguous car-following episode with full kinematic series.

    Arrays are aligned on the shared time grid ``t`` and frozen after
    construction; spacing x_l - x_f must stay strictly positive.
    """

    segment_id: str
    t: np.ndarray
    x_l: np.ndarray
    v_l: np.ndarray
    a_l: np.ndarray
    x_f: np.ndarray
    v_f: np.ndarray
    a_f: np.ndarray
    dt: float

    def __post_init__(self):
        for name in ("t", "x_l", "v_l", "a_l", "x_f", "v_f", "a_f"):
            object.__setattr__(self, name, _readonly(getattr(self, name)))
        n = self.t.size
        if n < 2:
            raise ValueError(f"segment {self.segment_id!r}: need >= 2 samples, got {n}")
        for name in ("x_l", "v_l", "a_l", "x_f", "v_f", "a_f"):
            if getattr(self, name).size != n:
                raise ValueError(f"segment {self.segment_id!r}: array {name} length mismatch")
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"segment {self.segment_id!r}: non-finite values in {name}")
        if not np.all(np.diff(self.t) > 0):
            raise ValueError(f"segment {self.segment_id!r}: timestamps not strictly increasing")
        spacing = self.x_l - self.x_f
        if not np.all(spacing > 0):
            k = int(np.argmax(spacing <= 0))
            raise ValueError(
                f"segment {self.segment_id!r}: non-positive spacing at t={self.t[k]:g}"
            )
        if not self.dt > 0:
            raise ValueError(f"segment {self.segment_id!r}: dt must be positive")

    @property
    def n_samples(self) -> int:
        return int(self.t.size)

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])

    def spacing(self) -> np.ndarray:
        return self.x_l - self.x_f


@dataclass(frozen=True)
class CarFollowingState:
    """Model input: speed difference, spacing, previous follower accel/speed.

    Sign convention: dv = v_leader - v_follower (positive when the leader
    pulls away).
    """

    dv: float
    ds: float
    a_prev: float
    v_prev: float

    def __post_init__(self):
        for name in ("dv", "ds", "a_prev", "v_prev"):
            object.__setattr__(self, name, float(getattr(self, name)))
        vals = (self.dv, self.ds, self.a_prev, self.v_prev)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite car-following state {vals}")
        if self.ds <= 0:
            raise ValueError(f"spacing must be positive, got {self.ds}")

    def as_array(self) -> np.ndarray:
        return np.array([self.dv, self.ds, self.a_prev, self.v_prev], dtype=float)


@dataclass(frozen=True)
class FeaturePair:
    """(state, target acceleration) with the timestamp it was taken at."""

    state: CarFollowingState
    target: float
    t: float


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    validation: list
    test: list


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True)
class IngestResult:
    observations: list
    n_rows: int
    n_dropped_nonfinite: int
    n_duplicate_timestamps: int
    n_nonpositive_spacing: int


def ingest(path, schema: Mapping[str, str] | None = None, delimiter: str = ",") -> IngestResult:
    """Read a delimited trajectory file into time-sorted observations.

    Rows with non-finite values are dropped and counted, duplicate
    timestamps keep the first occurrence, and rows where the leader is not
    strictly ahead are dropped (invalid car-following geometry).
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    path = Path(path)
    with open(path, "r", newline="") as fh:
        lines = [ln for ln in (line.strip() for line in fh) if ln]
    if not lines:
        raise EmptyInputError(f"{path}: file is empty")
    header = [h.strip() for h in lines[0].split(delimiter)]
    col_index: dict[str, int] = {}
    for fld in _REQUIRED_FIELDS:
        col = schema.get(fld)
        if col is None or col not in header:
            raise SchemaError(f"{path}: missing column {col!r} for field {fld!r}")
        col_index[fld] = header.index(col)
    for fld in ("v_leader", "v_follower"):
        col = schema.get(fld)
        if col is not None and col in header:
            col_index[fld] = header.index(col)

    rows = lines[1:]
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")

    obs: list[RawObservation] = []
    n_bad = 0
    for raw in rows:
        cells = [c.strip() for c in raw.split(delimiter)]
        try:
            values = {fld: float(cells[i]) for fld, i in col_index.items()}
        except (ValueError, IndexError):
            n_bad += 1
            continue
        if not all(math.isfinite(v) for v in values.values()):
            n_bad += 1
            continue
        obs.append(
            RawObservation(
                timestamp=values["t"],
                leader_position=values["x_leader"],
                follower_position=values["x_follower"],
                leader_speed=values.get("v_leader"),
                follower_speed=values.get("v_follower"),
            )
        )
    if not obs:
        raise EmptyInputError(f"{path}: no valid observations")

    obs.sort(key=lambda o: o.timestamp)
    deduped: list[RawObservation] = []
    n_dup = 0
    for o in obs:
        if deduped and o.timestamp == deduped[-1].timestamp:
            n_dup += 1
            continue
        deduped.append(o)
    kept = [o for o in deduped if o.leader_position - o.follower_position > 0]
    n_crossed = len(deduped) - len(kept)
    return IngestResult(
        observations=kept,
        n_rows=len(rows),
        n_dropped_nonfinite=n_bad,
        n_duplicate_timestamps=n_dup,
        n_nonpositive_spacing=n_crossed,
    )


# ---------------------------------------------------------------------------
# outlier removal


def remove_outliers(obs: Sequence[RawObservation], limits: KinematicLimits | None = None) -> list:
    """Drop observations implying speeds or accelerations beyond the limits.

    Detection targets isolated spikes: a sample is removed when every
    position interval adjacent to it implies an over-limit speed, or when
    the acceleration at its vertex exceeds the bound. Passes repeat until a
    fixed point, so the operation is idempotent.
    """
    limits = limits or KinematicLimits()
    kept = list(obs)
    while len(kept) >= 2:
        bad = _outlier_pass(kept, limits)
        if not bad:
            break
        kept = [o for i, o in enumerate(kept) if i not in bad]
    return kept


def _outlier_pass(obs: Sequence[RawObservation], limits: KinematicLimits) -> set:
    bad: set[int] = set()
    for i, o in enumerate(obs):
        for v in (o.leader_speed, o.follower_speed):
            if v is not None and abs(v) > limits.max_speed:
                bad.add(i)
    t = np.array([o.timestamp for o in obs])
    for xs in (
        np.array([o.leader_position for o in obs]),
        np.array([o.follower_position for o in obs]),
    ):
        bad |= _position_violations(t, xs, limits)
    return bad


def _position_violations(t: np.ndarray, x: np.ndarray, limits: KinematicLimits) -> set:
    n = x.size
    if n < 2:
        return set()
    dts = np.diff(t)
    v = np.diff(x) / dts
    fast = np.abs(v) > limits.max_speed
    flags: set[int] = set()
    for i in range(1, n - 1):
        if fast[i - 1] and fast[i]:
            flags.add(i)
    # endpoint blamed only when its interior neighbour is corroborated
    if fast[0] and 1 not in flags:
        flags.add(0)
    if fast[n - 2] and (n - 2) not in flags:
        flags.add(n - 1)
    if n >= 3:
        accel = (v[1:] - v[:-1]) / ((t[2:] - t[:-2]) / 2.0)
        for j in range(1, n - 1):
            if {j - 1, j, j + 1} & flags:
                continue  # estimate contaminated by a speed spike
            if abs(accel[j - 1]) > limits.max_accel:
                flags.add(j)
    return flags


# ---------------------------------------------------------------------------
# segmentation


@dataclass(frozen=True)
class SegmentationResult:
    """Retained segments plus bookkeeping for the discarded remainder.

    ``retained_bounds`` and ``discarded_bounds`` are (start, end) index
    ranges into the cleaned input, so retained + discarded partition it.
    """

    segments: list
    retained_bounds: list
    discarded_bounds: list
    duration_total: float
    duration_retained: float


def _chunk_bounds(t: np.ndarray, gap_threshold: float) -> list:
    breaks = np.flatnonzero(np.diff(t) > gap_threshold) + 1
    edges = [0, *breaks.tolist(), int(t.size)]
    return [(edges[i], edges[i + 1]) for i in range(len(edges) - 1)]


def _derive_motion(t: np.ndarray, x: np.ndarray, v_recorded: np.ndarray | None = None):
    """Forward finite differences for speed/acceleration (last value repeated)."""
    n = t.size
    if v_recorded is not None:
        v = np.asarray(v_recorded, dtype=float)
    elif n >= 2:
        v = np.empty(n)
        v[:-1] = np.diff(x) / np.diff(t)
        v[-1] = v[-2]
    else:
        v = np.zeros(n)
    if n >= 2:
        a = np.empty(n)
        a[:-1] = np.diff(v) / np.diff(t)
        a[-1] = a[-2]
    else:
        a = np.zeros(n)
    return v, a


def segment(
    obs: Sequence[RawObservation],
    gap_threshold: float = GAP_THRESHOLD_S,
    min_duration: float = MIN_DURATION_S,
    id_prefix: str = "seg",
) -> SegmentationResult:
    """Split cleaned observations into segments at time gaps > gap_threshold.

    Segments shorter than ``min_duration`` seconds are discarded. Speeds are
    taken from the file when recorded, otherwise derived by forward finite
    differences of position (accelerations always by differencing speed).
    """
    t = np.array([o.timestamp for o in obs])
    x_l = np.array([o.leader_position for o in obs])
    x_f = np.array([o.follower_position for o in obs])
    v_l_rec = [o.leader_speed for o in obs]
    v_f_rec = [o.follower_speed for o in obs]
    have_v = all(v is not None for v in v_l_rec) and all(v is not None for v in v_f_rec)

    segments: list[TrajectorySegment] = []
    retained, discarded = [], []
    dur_total = dur_kept = 0.0
    for lo, hi in _chunk_bounds(t, gap_threshold):
        tc = t[lo:hi]
        duration = float(tc[-1] - tc[0]) if hi - lo >= 2 else 0.0
        dur_total += duration
        if duration < min_duration or hi - lo < 2:
            discarded.append((lo, hi))
            continue
        v_l, a_l = _derive_motion(tc, x_l[lo:hi], np.array(v_l_rec[lo:hi], dtype=float) if have_v else None)
        v_f, a_f = _derive_motion(tc, x_f[lo:hi], np.array(v_f_rec[lo:hi], dtype=float) if have_v else None)
        segments.append(
            TrajectorySegment(
                segment_id=f"{id_prefix}:{len(segments):03d}",
                t=tc,
                x_l=x_l[lo:hi],
                v_l=v_l,
                a_l=a_l,
                x_f=x_f[lo:hi],
                v_f=v_f,
                a_f=a_f,
                dt=float(np.median(np.diff(tc))),
            )
        )
        retained.append((lo, hi))
        dur_kept += duration
    return SegmentationResult(segments, retained, discarded, dur_total, dur_kept)


def segment_arrays(
    t,
    x_l,
    v_l,
    a_l,
    x_f,
    v_f,
    a_f,
    gap_threshold: float = GAP_THRESHOLD_S,
    min_duration: float = MIN_DURATION_S,
    id_prefix: str = "seg",
) -> SegmentationResult:
    """Segment series whose speeds/accelerations are already estimated."""
    t = np.asarray(t, dtype=float)
    cols = [np.asarray(c, dtype=float) for c in (x_l, v_l, a_l, x_f, v_f, a_f)]
    segments: list[TrajectorySegment] = []
    retained, discarded = [], []
    dur_total = dur_kept = 0.0
    for lo, hi in _chunk_bounds(t, gap_threshold):
        tc = t[lo:hi]
        duration = float(tc[-1] - tc[0]) if hi - lo >= 2 else 0.0
        dur_total += duration
        if duration < min_duration or hi - lo < 2:
            discarded.append((lo, hi))
            continue
        xl, vl, al, xf, vf, af = (c[lo:hi] for c in cols)
        segments.append(
            TrajectorySegment(
                segment_id=f"{id_prefix}:{len(segments):03d}",
                t=tc,
                x_l=xl,
                v_l=vl,
                a_l=al,
                x_f=xf,
                v_f=vf,
                a_f=af,
                dt=float(np.median(np.diff(tc))),
            )
        )
        retained.append((lo, hi))
        dur_kept += duration
    return SegmentationResult(segments, retained, discarded, dur_total, dur_kept)


# ---------------------------------------------------------------------------
# features


def derive_features(seg: TrajectorySegment) -> list:
    """One (state, target) pair per sample index t >= 1.

    dv and ds are taken at the current index, a_prev/v_prev at the previous
    one, and the target is the follower acceleration at the current index.
    """
    if seg.n_samples < 2:
        raise FeatureDerivationError(f"segment {seg.segment_id!r}: need >= 2 samples")
    pairs: list[FeaturePair] = []
    for k in range(1, seg.n_samples):
        ds = float(seg.x_l[k] - seg.x_f[k])
        if ds <= 0:
            raise FeatureDerivationError(
                f"segment {seg.segment_id!r}: non-positive spacing at sample {k} (t={seg.t[k]:g})"
            )
        state = CarFollowingState(
            dv=float(seg.v_l[k] - seg.v_f[k]),
            ds=ds,
            a_prev=float(seg.a_f[k - 1]),
            v_prev=float(seg.v_f[k - 1]),
        )
        pairs.append(FeaturePair(state=state, target=float(seg.a_f[k]), t=float(seg.t[k])))
    return pairs


def pairs_to_arrays(pairs: Sequence[FeaturePair]):
    """Stack feature pairs into (X, y, t) arrays; X columns follow FEATURE_NAMES."""
    X = np.array([p.state.as_array() for p in pairs], dtype=float)
    y = np.array([p.target for p in pairs], dtype=float)
    t = np.array([p.t for p in pairs], dtype=float)
    return X, y, t


def collect_pairs(segments: Iterable[TrajectorySegment]) -> list:
    """Features from several segments, ordered by timestamp."""
    pairs: list[FeaturePair] = []
    for seg in segments:
        pairs.extend(derive_features(seg))
    pairs.sort(key=lambda p: p.t)
    return pairs


# ---------------------------------------------------------------------------
# splitting


def split(
    segments: Sequence[TrajectorySegment],
    seed: int,
    test_fraction: float = TEST_FRACTION,
    validation_fraction: float = VALIDATION_FRACTION,
) -> DatasetSplit:
    """Assign whole segments to train/validation/test, targeting duration ratios.

    Greedy largest-first assignment against duration targets; the seed
    shuffles the order used to break ties so equal-length segments do not
    always land in the same bucket.
    """
    if len(segments) < 3:
        raise InsufficientDataError(f"need >= 3 segments to split, got {len(segments)}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(segments))
    tie_rank = np.empty(len(segments), dtype=int)
    tie_rank[perm] = np.arange(len(segments))
    durations = np.array([s.duration for s in segments])
    order = sorted(range(len(segments)), key=lambda i: (-durations[i], tie_rank[i]))

    test_idx, rest_idx = _greedy_assign(order, durations, test_fraction)
    order_rest = [i for i in order if i in rest_idx]
    val_idx, train_idx = _greedy_assign(order_rest, durations, validation_fraction)

    def bucket(idx: set) -> list:
        return sorted((segments[i] for i in idx), key=lambda s: float(s.t[0]))

    return DatasetSplit(train=bucket(train_idx), validation=bucket(val_idx), test=bucket(test_idx))


def _greedy_assign(order, durations, frac_first):
    total = float(sum(durations[i] for i in order))
    target_first = frac_first * total
    target_second = total - target_first
    got_first = got_second = 0.0
    first: set[int] = set()
    second: set[int] = set()
    for i in order:
        if target_first - got_first > target_second - got_second:
            first.add(i)
            got_first += durations[i]
        else:
            second.add(i)
            got_second += durations[i]
    return first, second


# ---------------------------------------------------------------------------
# synthetic benchmark data


@dataclass(frozen=True)
class SpeedProfile:
    """Analytic leader speed profile: constant, sinusoidal, or stop-and-go.

    The stop-and-go profile cycles accelerate/cruise/brake/dwell phases
    (fractions 0.25/0.35/0.25/0.15 of the period) between 0 and base_speed.
    """

    kind: str
    base_speed: float
    amplitude: float = 0.0
    period: float = 60.0

    _PHASES = (0.25, 0.35, 0.25, 0.15)

    def __post_init__(self):
        if self.kind not in ("constant", "sinusoidal", "stopgo"):
            raise ValueError(f"unknown profile kind {self.kind!r}")
        if self.base_speed < 0:
            raise ValueError("base_speed must be non-negative")
        if self.kind == "sinusoidal" and not 0 <= self.amplitude <= self.base_speed:
            raise ValueError("sinusoidal amplitude must be in [0, base_speed]")
        if self.kind in ("sinusoidal", "stopgo") and self.period <= 0:
            raise ValueError("period must be positive")

    def speed(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.kind == "constant":
            return np.full_like(tau, self.base_speed)
        if self.kind == "sinusoidal":
            return self.base_speed + self.amplitude * np.sin(2 * np.pi * tau / self.period)
        return self._stopgo_speed(tau)

    def position(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.kind == "constant":
            return self.base_speed * tau
        if self.kind == "sinusoidal":
            w = 2 * np.pi / self.period
            return self.base_speed * tau + self.amplitude / w * (1.0 - np.cos(w * tau))
        return self._stopgo_position(tau)

    def accel(self, tau):
        tau = np.asarray(tau, dtype=float)
        if self.kind == "constant":
            return np.zeros_like(tau)
        if self.kind == "sinusoidal":
            w = 2 * np.pi / self.period
            return self.amplitude * w * np.cos(w * tau)
        return self._stopgo_accel(tau)

    def _phase_times(self):
        pa, pc, pb, _ = (f * self.period for f in self._PHASES)
        return pa, pc, pb

    def _stopgo_speed(self, tau):
        pa, pc, pb = self._phase_times()
        phi = np.mod(tau, self.period)
        v = np.zeros_like(phi)
        m = phi < pa
        v[m] = self.base_speed * phi[m] / pa
        m = (phi >= pa) & (phi < pa + pc)
        v[m] = self.base_speed
        m = (phi >= pa + pc) & (phi < pa + pc + pb)
        v[m] = self.base_speed * (1.0 - (phi[m] - pa - pc) / pb)
        return v

    def _stopgo_position(self, tau):
        pa, pc, pb = self._phase_times()
        per_cycle = self.base_speed * (pa / 2 + pc + pb / 2)
        cycles = np.floor(tau / self.period)
        phi = tau - cycles * self.period
        x = np.zeros_like(phi)
        m = phi < pa
        x[m] = self.base_speed * phi[m] ** 2 / (2 * pa)
        m = (phi >= pa) & (phi < pa + pc)
        x[m] = self.base_speed * (pa / 2 + (phi[m] - pa))
        m = (phi >= pa + pc) & (phi < pa + pc + pb)
        u = phi[m] - pa - pc
        x[m] = self.base_speed * (pa / 2 + pc) + self.base_speed * (u - u**2 / (2 * pb))
        m = phi >= pa + pc + pb
        x[m] = per_cycle
        return cycles * per_cycle + x

    def _stopgo_accel(self, tau):
        pa, pc, pb = self._phase_times()
        phi = np.mod(tau, self.period)
        a = np.zeros_like(phi)
        a[phi < pa] = self.base_speed / pa
        m = (phi >= pa + pc) & (phi < pa + pc + pb)
        a[m] = -self.base_speed / pb
        return a


def _equilibrium_spacing(model, v0: float) -> float:
    """Spacing where the model commands zero acceleration at speed v0 (bisection)."""
    def g(ds):
        return model.predict(CarFollowingState(dv=0.0, ds=ds, a_prev=0.0, v_prev=v0))

    lo, hi = 1e-2, 1e4
    glo, ghi = g(lo), g(hi)
    if not (glo < 0 < ghi):
        raise GenerationError(
            "cannot find equilibrium spacing for follower model; pass initial_spacing"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if g(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_synthetic(
    profile: SpeedProfile,
    follower_model,
    duration: float,
    dt: float = 1.0,
    noise_sigma: float = 0.0,
    seed: int = 0,
    initial_spacing: float | None = None,
    bounds=None,
    segment_id: str | None = None,
    t0: float = 0.0,
) -> TrajectorySegment:
    """Closed-loop synthetic segment: analytic leader, model-driven follower.

    Dynamics are always noiseless; ``noise_sigma`` adds Gaussian measurement
    noise to the recorded positions only, so generating with sigma=0 and the
    same seed yields the matching ground truth.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    from .simulation import drive_follower  # deferred: simulation imports this module

    n = int(round(duration / dt)) + 1
    if n < 2:
        raise ValueError("duration must cover at least one step")
    tau = np.arange(n) * dt
    t = t0 + tau
    v_l = profile.speed(tau)
    s_init = initial_spacing if initial_spacing is not None else _equilibrium_spacing(
        follower_model, float(v_l[0])
    )
    if s_init <= 0:
        raise GenerationError(f"initial spacing must be positive, got {s_init}")
    x_l = s_init + profile.position(tau)
    a_l = profile.accel(tau)

    x_f, v_f, a_f, collision_step = drive_follower(
        t, x_l, v_l, follower_model, bounds, x_f0=0.0, v_f0=float(v_l[0]), a_f0=None
    )
    if collision_step is not None:
        raise GenerationError(
            f"follower model collides with leader at t={t[collision_step]:g}"
        )

    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        x_l = x_l + rng.normal(0.0, noise_sigma, n)
        x_f = x_f + rng.normal(0.0, noise_sigma, n)

    sid = segment_id or f"synthetic-{profile.kind}-{seed}"
    return TrajectorySegment(
        segment_id=sid, t=t, x_l=x_l, v_l=v_l, a_l=a_l, x_f=x_f, v_f=v_f, a_f=a_f, dt=dt
    )


# ---------------------------------------------------------------------------
# file round trips

_SEGMENT_COLUMNS = ("segment_id", "t", "x_l", "v_l", "a_l", "x_f", "v_f", "a_f")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_trajectory_file(path, t, x_l, x_f, v_l=None, v_f=None) -> None:
    """Raw trajectory file: t, x_leader, x_follower (+ optional speeds)."""
    cols = ["t", "x_leader", "x_follower"]
    series = [t, x_l, x_f]
    if v_l is not None and v_f is not None:
        cols += ["v_leader", "v_follower"]
        series += [v_l, v_f]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in zip(*series):
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_segments_file(path, segments: Sequence[TrajectorySegment]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(_SEGMENT_COLUMNS) + "\n")
        for seg in segments:
            for k in range(seg.n_samples):
                row = (seg.t[k], seg.x_l[k], seg.v_l[k], seg.a_l[k], seg.x_f[k], seg.v_f[k], seg.a_f[k])
                fh.write(seg.segment_id + "," + ",".join(_fmt(v) for v in row) + "\n")


def read_segments_file(path) -> list:
    """Rebuild segments from a segments file, preserving file order."""
    path = Path(path)
    with open(path, "r") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise EmptyInputError(f"{path}: file is empty")
    header = lines[0].split(",")
    if header != list(_SEGMENT_COLUMNS):
        raise SchemaError(f"{path}: unexpected header {header}")
    groups: dict[str, list] = {}
    order: list[str] = []
    for ln in lines[1:]:
        cells = ln.split(",")
        sid = cells[0]
        if sid not in groups:
            groups[sid] = []
            order.append(sid)
        groups[sid].append([float(c) for c in cells[1:]])
    segments = []
    for sid in order:
        arr = np.array(groups[sid])
        segments.append(
            TrajectorySegment(
                segment_id=sid,
                t=arr[:, 0],
                x_l=arr[:, 1],
                v_l=arr[:, 2],
                a_l=arr[:, 3],
                x_f=arr[:, 4],
                v_f=arr[:, 5],
                a_f=arr[:, 6],
                dt=float(np.median(np.diff(arr[:, 0]))),
            )
        )
    return segments


def load_profile_config(path) -> dict:
    """Synthetic-profile description: JSON key-value configuration."""
    with open(path, "r") as fh:
        cfg = json.load(fh)
    if "profile" not in cfg:
        raise SchemaError(f"{path}: missing 'profile' key")
    return cfg
