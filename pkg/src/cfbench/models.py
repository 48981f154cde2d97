"""Car-following models: a state -> acceleration mapping.

Native physics models (IDM, ACC), acceleration bounding, replay oracles for
benchmarking, and a subprocess adapter that bridges externally trained
models through a line protocol.
"""
from __future__ import annotations

import math
import queue
import shlex
import subprocess
import threading
from dataclasses import dataclass, fields
from typing import Mapping, Protocol, runtime_checkable

import numpy as np

from .dataio import CarFollowingState

PROTOCOL_HELLO = "HELLO cf-bench 1"
PROTOCOL_READY = "READY"
PROTOCOL_BYE = "BYE"


class ModelDomainError(Exception):
    """State outside the model's domain (e.g. non-positive spacing)."""


@runtime_checkable
class CarFollowingModel(Protocol):
    """Behavioral contract shared by every model in a roster."""

    name: str

    def predict(self, state: CarFollowingState) -> float: ...

    def parameters(self) -> Mapping[str, float]: ...


# ---------------------------------------------------------------------------
# parameter sets


@dataclass(frozen=True)
class IdmParameters:
    """Desired speed, headway, jam spacing, accel limit, comfortable braking, exponent."""

    v0: float = 8.0
    T: float = 1.5
    s0: float = 2.0
    a_max: float = 1.0
    b: float = 1.5
    delta: float = 4.0

    names = ("v0", "T", "s0", "a_max", "b", "delta")

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"IDM parameter {f.name} must be positive")
        if self.delta < 1:
            raise ValueError("IDM delta must be >= 1")

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names], dtype=float)

    @classmethod
    def from_vector(cls, vec) -> "IdmParameters":
        return cls(**{n: float(v) for n, v in zip(cls.names, vec)})


@dataclass(frozen=True)
class AccParameters:
    """Linear constant-time-gap controller gains and setpoints."""

    k1: float = 0.23
    k2: float = 0.07
    t_hw: float = 1.6
    s0: float = 2.0

    names = ("k1", "k2", "t_hw", "s0")

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0 and self.t_hw > 0):
            raise ValueError("ACC gains and time headway must be positive")
        if self.s0 < 0:
            raise ValueError("ACC standstill gap must be non-negative")

    def as_vector(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in self.names], dtype=float)

    @classmethod
    def from_vector(cls, vec) -> "AccParameters":
        return cls(**{n: float(v) for n, v in zip(cls.names, vec)})


@dataclass(frozen=True)
class AccelerationBounds:
    """Physically plausible command range, applied identically to every model."""

    a_min: float = -3.0
    a_max: float = 2.0

    def __post_init__(self):
        if not self.a_min < 0 < self.a_max:
            raise ValueError(f"bounds must satisfy a_min < 0 < a_max, got ({self.a_min}, {self.a_max})")


# ---------------------------------------------------------------------------
# physics models


def idm_acceleration(dv, ds, v_prev, p: IdmParameters):
    """IDM command, vectorized over array inputs.

    a = a_max * (1 - (v/v0)^delta - (s*/ds)^2) with
    s* = s0 + v*T + v*(v - v_leader) / (2*sqrt(a_max*b)); the approach rate
    v - v_leader equals -dv under this toolkit's sign convention. Speeds are
    floored at zero (the formulation does not cover reversing).
    """
    v = np.maximum(np.asarray(v_prev, dtype=float), 0.0)
    dv = np.asarray(dv, dtype=float)
    ds = np.asarray(ds, dtype=float)
    s_star = p.s0 + v * p.T - v * dv / (2.0 * math.sqrt(p.a_max * p.b))
    return p.a_max * (1.0 - (v / p.v0) ** p.delta - (s_star / ds) ** 2)


def idm_accel(state: CarFollowingState, p: IdmParameters) -> float:
    """IDM acceleration for one state; unclamped (bounding is separate)."""
    if state.ds <= 0:
        raise ModelDomainError(f"IDM requires positive spacing, got {state.ds}")
    return float(idm_acceleration(state.dv, state.ds, state.v_prev, p))


def acc_acceleration(dv, ds, v_prev, p: AccParameters):
    """Linear gap-and-speed-error law, vectorized: k1*(ds - s0 - t_hw*v) + k2*dv."""
    dv = np.asarray(dv, dtype=float)
    ds = np.asarray(ds, dtype=float)
    v = np.asarray(v_prev, dtype=float)
    return p.k1 * (ds - p.s0 - p.t_hw * v) + p.k2 * dv


def acc_accel(state: CarFollowingState, p: AccParameters) -> float:
    return float(acc_acceleration(state.dv, state.ds, state.v_prev, p))


def clamp_accel(a: float, bounds: AccelerationBounds) -> float:
    return min(max(a, bounds.a_min), bounds.a_max)


class IdmModel:
    def __init__(self, params: IdmParameters | None = None, name: str = "idm"):
        self.params = params or IdmParameters()
        self.name = name

    def predict(self, state: CarFollowingState) -> float:
        return idm_accel(state, self.params)

    def parameters(self) -> Mapping[str, float]:
        return {n: getattr(self.params, n) for n in IdmParameters.names}


class AccModel:
    def __init__(self, params: AccParameters | None = None, name: str = "acc"):
        self.params = params or AccParameters()
        self.name = name

    def predict(self, state: CarFollowingState) -> float:
        return acc_accel(state, self.params)

    def parameters(self) -> Mapping[str, float]:
        return {n: getattr(self.params, n) for n in AccParameters.names}


class ConstantModel:
    """Fixed-output model, mostly useful as a stub in tests."""

    def __init__(self, value: float = 0.0, name: str = "constant"):
        self.value = float(value)
        self.name = name

    def predict(self, state: CarFollowingState) -> float:
        return self.value

    def parameters(self) -> Mapping[str, float]:
        return {"value": self.value}


# ---------------------------------------------------------------------------
# replay oracles


class ReplayModel:
    """Oracle replaying a recorded acceleration series, step by step.

    Optional transforms produce benchmark variants: a constant bias, a lag
    of whole steps, and seeded Gaussian noise (pre-generated per segment, so
    repeated rollouts are identical). The rollout driver announces segments
    through begin_segment before stepping.
    """

    def __init__(
        self,
        name: str,
        accel_by_segment: Mapping[str, np.ndarray],
        bias: float = 0.0,
        lag: int = 0,
        noise_sigma: float = 0.0,
        seed: int = 0,
    ):
        self.name = name
        self.bias = float(bias)
        self.lag = int(lag)
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        self._series: dict[str, np.ndarray] = {}
        for sid in sorted(accel_by_segment):
            series = np.asarray(accel_by_segment[sid], dtype=float) + self.bias
            if noise_sigma > 0:
                series = series + rng.normal(0.0, noise_sigma, series.size)
            self._series[sid] = series
        self._current: np.ndarray | None = None
        self._cursor = 0

    @classmethod
    def from_segments(cls, name: str, segments, **kwargs) -> "ReplayModel":
        return cls(name, {s.segment_id: s.a_f for s in segments}, **kwargs)

    def begin_segment(self, segment_id: str) -> None:
        if segment_id not in self._series:
            raise KeyError(f"replay model {self.name!r} has no series for {segment_id!r}")
        self._current = self._series[segment_id]
        self._cursor = 0

    def predict(self, state: CarFollowingState) -> float:
        if self._current is None:
            raise RuntimeError("begin_segment must be called before predict")
        self._cursor += 1
        idx = min(self._current.size - 1, max(0, self._cursor - self.lag))
        return float(self._current[idx])

    def parameters(self) -> Mapping[str, float]:
        return {"bias": self.bias, "lag": float(self.lag), "noise_sigma": self.noise_sigma}


# ---------------------------------------------------------------------------
# external-model adapter


class ExternalModelError(Exception):
    """Base class for adapter failures."""


class ExternalProcessError(ExternalModelError):
    """The external process exited or could not be reached."""


class MalformedReplyError(ExternalModelError):
    """The external process replied with something that is not a number."""


class ReplyTimeoutError(ExternalModelError):
    """The external process did not reply within the timeout."""


class ExternalModel:
    """Adapter speaking the line protocol to a model hosted in a subprocess.

    Request line: "dv ds a_prev v_prev" (decimal text, SI units, this
    toolkit's sign convention); response: one acceleration per line.
    Handshake on start, BYE on close. One in-flight request at a time.
    """

    def __init__(self, command, name: str = "external", timeout_s: float = 1.0):
        self.name = name
        self.timeout_s = float(timeout_s)
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ExternalProcessError(f"{name}: cannot start {argv!r}: {exc}") from exc
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._closed = False
        self._handshake()

    def _pump(self):
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)  # EOF sentinel

    def _send(self, line: str) -> None:
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as exc:
            raise ExternalProcessError(f"{self.name}: process not accepting input: {exc}") from exc

    def _recv(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            if self._proc.poll() is not None:
                raise ExternalProcessError(f"{self.name}: process exited with code {self._proc.returncode}")
            raise ReplyTimeoutError(f"{self.name}: no reply within {self.timeout_s} s")
        if line is None:
            raise ExternalProcessError(f"{self.name}: process closed its output (exit code {self._proc.poll()})")
        return line.strip()

    def _handshake(self) -> None:
        self._send(PROTOCOL_HELLO)
        reply = self._recv()
        if reply != PROTOCOL_READY:
            self.close()
            raise MalformedReplyError(f"{self.name}: expected {PROTOCOL_READY!r} handshake, got {reply!r}")

    def predict(self, state: CarFollowingState) -> float:
        self._send(f"{state.dv!r} {state.ds!r} {state.a_prev!r} {state.v_prev!r}")
        reply = self._recv()
        try:
            value = float(reply)
        except ValueError:
            raise MalformedReplyError(f"{self.name}: cannot parse reply {reply!r}") from None
        if not math.isfinite(value):
            raise MalformedReplyError(f"{self.name}: non-finite reply {reply!r}")
        return value

    def parameters(self) -> Mapping[str, float]:
        return {}

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            if self._proc.poll() is None:
                self._send(PROTOCOL_BYE)
        except ExternalModelError:
            pass
        try:
            self._proc.wait(timeout=1.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> "ExternalModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def external_model(command, name: str = "external", timeout_s: float = 1.0) -> ExternalModel:
    """Start an external process and wrap it as a model (handshake included)."""
    return ExternalModel(command, name=name, timeout_s=timeout_s)
