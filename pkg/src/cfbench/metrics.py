"""The nine evaluation metrics, computed per quantity between observed and
simulated series.

Error: MAE, RMSE, MSE. Stability: high-frequency FFT energy ratio and
coefficient of variation (both reported as relative differences against the
observed series), plus the Theil inequality decomposition. Similarity: K-S
statistic, 1-D earth mover's distance, dynamic time warping.

Population (not sample) standard deviations throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .dataio import _fmt
from .simulation import SimulatedTrajectory

QUANTITIES = ("acceleration", "speed", "position")
METRIC_NAMES = (
    "mae",
    "rmse",
    "mse",
    "fft_energy_rel",
    "theil_u",
    "theil_b",
    "theil_v",
    "theil_c",
    "cv_rel",
    "ks",
    "emd",
    "dtw",
)

FFT_CUTOFF_FRACTION = 0.5  # fraction of Nyquist separating "high" frequency
CV_MEAN_EPS = 1e-6
_REL_EPS = 1e-6


class MetricError(Exception):
    pass


class AlignmentError(MetricError):
    pass


@dataclass(frozen=True)
class SeriesPair:
    """Aligned observed/simulated series for one quantity."""

    t: np.ndarray
    observed: np.ndarray
    simulated: np.ndarray
    quantity: str

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        o = np.asarray(self.observed, dtype=float)
        s = np.asarray(self.simulated, dtype=float)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "observed", o)
        object.__setattr__(self, "simulated", s)
        if not (t.size == o.size == s.size):
            raise AlignmentError(
                f"series lengths differ: t={t.size} observed={o.size} simulated={s.size}"
            )
        if t.size < 1:
            raise AlignmentError("series must be non-empty")

    @classmethod
    def from_values(cls, observed, simulated, quantity: str = "value", dt: float = 1.0) -> "SeriesPair":
        observed = np.asarray(observed, dtype=float)
        return cls(
            t=np.arange(observed.size) * dt,
            observed=observed,
            simulated=simulated,
            quantity=quantity,
        )

    @property
    def n(self) -> int:
        return int(self.t.size)


# ---------------------------------------------------------------------------
# error metrics


def mae(pair: SeriesPair) -> float:
    return float(np.mean(np.abs(pair.simulated - pair.observed)))


def mse(pair: SeriesPair) -> float:
    return float(np.mean((pair.simulated - pair.observed) ** 2))


def rmse(pair: SeriesPair) -> float:
    return math.sqrt(mse(pair))


# ---------------------------------------------------------------------------
# stability metrics


def fft_oscillation(values, dt: float, cutoff_fraction: float = FFT_CUTOFF_FRACTION) -> float:
    """Fraction of (mean-removed) spectral power above cutoff_fraction * Nyquist.

    Constant series carry no power and are defined as 0.
    """
    y = np.asarray(values, dtype=float)
    if y.size < 8:
        raise MetricError(f"need >= 8 samples for the spectral ratio, got {y.size}")
    if dt <= 0:
        raise MetricError("dt must be positive")
    y = y - np.mean(y)
    power = np.abs(np.fft.rfft(y)) ** 2
    freqs = np.fft.rfftfreq(y.size, d=dt)
    total = float(np.sum(power[1:]))
    if total <= 0.0:
        return 0.0
    cutoff = cutoff_fraction * (0.5 / dt)
    high = float(np.sum(power[freqs > cutoff]))
    return high / total


class CvValue(NamedTuple):
    value: float
    degenerate: bool


def coefficient_of_variation(values, eps: float = CV_MEAN_EPS) -> CvValue:
    """Population std over |mean|; near-zero means are flagged and floored at eps."""
    y = np.asarray(values, dtype=float)
    if y.size < 2:
        raise MetricError(f"need >= 2 samples for CV, got {y.size}")
    mean = float(np.mean(y))
    std = float(np.std(y))
    degenerate = abs(mean) < eps
    return CvValue(std / max(abs(mean), eps), degenerate)


class TheilComponents(NamedTuple):
    u: float
    b: float
    v: float
    c: float


def theil_decomposition(pair: SeriesPair) -> TheilComponents:
    """Theil's U plus the bias/variance/covariance proportions of the MSE.

    u = rmse / (rms(observed) + rms(simulated));
    b = (mean_s - mean_o)^2 / mse, v = (std_s - std_o)^2 / mse,
    c = 2*(1 - r)*std_s*std_o / mse, so b + v + c = 1. A zero-MSE pair is
    reported as (u=0, b=0, v=0, c=1) by convention.
    """
    if pair.n < 2:
        raise MetricError(f"need >= 2 samples for the Theil decomposition, got {pair.n}")
    o, s = pair.observed, pair.simulated
    err = s - o
    mse_val = float(np.mean(err**2))
    if mse_val == 0.0:
        return TheilComponents(0.0, 0.0, 0.0, 1.0)
    rms_o = math.sqrt(float(np.mean(o**2)))
    rms_s = math.sqrt(float(np.mean(s**2)))
    u = math.sqrt(mse_val) / (rms_o + rms_s)
    mean_o, mean_s = float(np.mean(o)), float(np.mean(s))
    std_o, std_s = float(np.std(o)), float(np.std(s))
    b = (mean_s - mean_o) ** 2 / mse_val
    v = (std_s - std_o) ** 2 / mse_val
    if std_o > 0 and std_s > 0:
        r = float(np.mean((o - mean_o) * (s - mean_s))) / (std_o * std_s)
        c = 2.0 * (1.0 - r) * std_s * std_o / mse_val
    else:
        c = 0.0  # one series constant: the covariance term vanishes
    return TheilComponents(u, b, v, c)


# ---------------------------------------------------------------------------
# similarity metrics


def ks_from_samples(a, b) -> float:
    """Sup distance between empirical CDFs, evaluated at all pooled points."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise MetricError("K-S statistic needs non-empty samples")
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / a.size
    cdf_b = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(cdf_a - cdf_b)))


def ks_statistic(pair: SeriesPair) -> float:
    return ks_from_samples(pair.observed, pair.simulated)


def emd_from_samples(a, b) -> float:
    """1-Wasserstein distance between empirical distributions.

    Equal sample counts reduce to the mean absolute difference of sorted
    samples; otherwise the quantile functions are integrated over the merged
    breakpoints.
    """
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise MetricError("EMD needs non-empty samples")
    if a.size == b.size:
        return float(np.mean(np.abs(a - b)))
    pooled = np.sort(np.concatenate([a, b]))
    deltas = np.diff(pooled)
    cdf_a = np.searchsorted(a, pooled[:-1], side="right") / a.size
    cdf_b = np.searchsorted(b, pooled[:-1], side="right") / b.size
    return float(np.sum(np.abs(cdf_a - cdf_b) * deltas))


def emd_1d(pair: SeriesPair) -> float:
    return emd_from_samples(pair.observed, pair.simulated)


def dtw_path_cost(a, b) -> float:
    """Classic DTW: absolute-difference local cost, unconstrained window,
    boundary-matched path; returns the raw optimal path cost."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, m = a.size, b.size
    if n == 0 or m == 0:
        raise MetricError("DTW needs non-empty sequences")
    inf = math.inf
    prev = [inf] * (m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur = [inf] * (m + 1)
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1]
            if prev[j] < best:
                best = prev[j]
            if cur[j - 1] < best:
                best = cur[j - 1]
            cur[j] = abs(ai - b[j - 1]) + best
        prev = cur
    return prev[m]


def dtw_distance(pair: SeriesPair) -> float:
    return dtw_path_cost(pair.observed, pair.simulated)


def dtw_normalized(pair: SeriesPair) -> float:
    """Path cost per step (informational; scoring uses the raw cost)."""
    return dtw_path_cost(pair.observed, pair.simulated) / (pair.n + pair.n)


# ---------------------------------------------------------------------------
# per-model evaluation


def _relative_difference(sim_value: float, obs_value: float, eps: float = _REL_EPS) -> float:
    return abs(sim_value - obs_value) / max(abs(obs_value), eps)


@dataclass(frozen=True)
class MetricReport:
    """Duration-weighted metric values for one model across its test segments."""

    model: str
    values: Mapping
    flags: Mapping
    n_segments: int
    extras: Mapping
    collision_segments: tuple


def _pair_metrics(pair: SeriesPair, dt: float):
    values: dict[str, float] = {}
    flags: set[str] = set()
    extras: dict[str, float] = {}

    values["mae"] = mae(pair)
    values["mse"] = mse(pair)
    values["rmse"] = rmse(pair)

    theil = theil_decomposition(pair)
    values["theil_u"] = theil.u
    values["theil_b"] = theil.b
    values["theil_v"] = theil.v
    values["theil_c"] = theil.c

    if pair.n >= 8:
        r_obs = fft_oscillation(pair.observed, dt)
        r_sim = fft_oscillation(pair.simulated, dt)
        values["fft_energy_rel"] = _relative_difference(r_sim, r_obs)
        if r_obs < _REL_EPS:
            flags.add("fft_observed_smooth")
    else:
        flags.add("fft_short_series")

    cv_obs = coefficient_of_variation(pair.observed)
    cv_sim = coefficient_of_variation(pair.simulated)
    values["cv_rel"] = _relative_difference(cv_sim.value, cv_obs.value)
    if cv_obs.degenerate or cv_sim.degenerate:
        flags.add("cv_degenerate_mean")

    values["ks"] = ks_statistic(pair)
    values["emd"] = emd_1d(pair)
    values["dtw"] = dtw_distance(pair)
    extras["dtw_norm"] = dtw_normalized(pair)
    return values, flags, extras


def trajectory_pairs(traj: SimulatedTrajectory) -> dict:
    """Observed/simulated SeriesPair per quantity for one rollout."""
    return {
        "acceleration": SeriesPair(traj.t, traj.a_f_obs, traj.a_f, "acceleration"),
        "speed": SeriesPair(traj.t, traj.v_f_obs, traj.v_f, "speed"),
        "position": SeriesPair(traj.t, traj.x_f_obs, traj.x_f, "position"),
    }


def evaluate_model(trajs: Sequence[SimulatedTrajectory]) -> MetricReport:
    """All metrics per quantity, aggregated across segments by duration."""
    if not trajs:
        raise MetricError("evaluate_model needs at least one trajectory")
    names = {t.model_name for t in trajs}
    if len(names) != 1:
        raise MetricError(f"trajectories mix models: {sorted(names)}")

    acc_values: dict[tuple, list] = {}
    acc_weights: dict[tuple, list] = {}
    all_flags: dict[tuple, set] = {}
    acc_extras: dict[tuple, list] = {}
    collisions = []
    for traj in trajs:
        if traj.collision:
            collisions.append(traj.segment_id)
        dt = float(traj.t[1] - traj.t[0]) if traj.t.size >= 2 else 1.0
        weight = traj.duration
        for quantity, pair in trajectory_pairs(traj).items():
            values, flags, extras = _pair_metrics(pair, dt)
            for metric, value in values.items():
                acc_values.setdefault((quantity, metric), []).append(value)
                acc_weights.setdefault((quantity, metric), []).append(weight)
            for metric, value in extras.items():
                acc_extras.setdefault((quantity, metric), []).append(value)
                acc_weights.setdefault((quantity, metric), []).append(weight)
            if flags:
                all_flags.setdefault(quantity, set()).update(flags)

    def weighted(cells: dict, weights: dict) -> dict:
        out = {}
        for key, vals in cells.items():
            w = np.asarray(weights.get(key, [1.0] * len(vals)), dtype=float)
            v = np.asarray(vals, dtype=float)
            out[key] = float(np.sum(w * v) / np.sum(w)) if np.sum(w) > 0 else float(np.mean(v))
        return out

    values = weighted(acc_values, acc_weights)
    extras = weighted(acc_extras, acc_weights)
    flags = {
        (quantity, metric): tuple(sorted(all_flags.get(quantity, ())))
        for (quantity, metric) in values
        if all_flags.get(quantity)
    }
    return MetricReport(
        model=trajs[0].model_name,
        values=values,
        flags=flags,
        n_segments=len(trajs),
        extras=extras,
        collision_segments=tuple(collisions),
    )


def write_metric_report(path, reports: Sequence[MetricReport]) -> None:
    """Delimited report: rows = model x quantity x metric (heatmap source)."""
    with open(path, "w") as fh:
        fh.write("model,quantity,metric,value,n_segments,flags\n")
        for report in reports:
            for quantity in QUANTITIES:
                for metric in METRIC_NAMES:
                    key = (quantity, metric)
                    if key not in report.values:
                        continue
                    flag_text = ";".join(report.flags.get(key, ()))
                    fh.write(
                        f"{report.model},{quantity},{metric},{_fmt(report.values[key])},"
                        f"{report.n_segments},{flag_text}\n"
                    )
