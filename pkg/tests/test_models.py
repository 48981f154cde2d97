import math
import sys
import textwrap

import numpy as np
import pytest

from cfbench.dataio import CarFollowingState
from cfbench.models import (
    AccelerationBounds,
    AccModel,
    AccParameters,
    ConstantModel,
    ExternalProcessError,
    IdmModel,
    IdmParameters,
    MalformedReplyError,
    ReplayModel,
    ReplyTimeoutError,
    acc_accel,
    clamp_accel,
    external_model,
    idm_accel,
    ModelDomainError,
)


def state(dv=0.0, ds=20.0, a_prev=0.0, v_prev=5.0):
    return CarFollowingState(dv=dv, ds=ds, a_prev=a_prev, v_prev=v_prev)


class TestIdm:
    def test_equilibrium_zero_acceleration(self):
        p = IdmParameters(v0=8.0, T=1.5, s0=2.0, a_max=1.0, b=1.5, delta=4.0)
        v = 5.0
        ds = (p.s0 + v * p.T) / math.sqrt(1 - (v / p.v0) ** p.delta)
        assert abs(idm_accel(state(dv=0.0, ds=ds, v_prev=v), p)) < 1e-9

    def test_free_flow_limit(self):
        p = IdmParameters()
        a = idm_accel(state(dv=0.0, ds=1e6, v_prev=0.0), p)
        assert abs(a - p.a_max) < 1e-6

    def test_hand_evaluated_value(self):
        # independent one-line evaluation of the formula
        p = IdmParameters(v0=8.0, T=1.5, s0=2.0, a_max=1.0, b=1.5, delta=4.0)
        dv, ds, v = 0.0, 10.0, 5.0
        s_star = 2.0 + 5.0 * 1.5 + 5.0 * (5.0 - 5.0) / (2.0 * math.sqrt(1.0 * 1.5))
        expected = 1.0 * (1.0 - (5.0 / 8.0) ** 4 - (s_star / 10.0) ** 2)
        assert abs(idm_accel(state(dv=dv, ds=ds, v_prev=v), p) - expected) < 1e-12

    def test_sign_convention_approach_rate(self):
        # closing in (leader slower -> dv < 0) must brake harder
        p = IdmParameters()
        closing = idm_accel(state(dv=-2.0, ds=10.0, v_prev=5.0), p)
        steady = idm_accel(state(dv=0.0, ds=10.0, v_prev=5.0), p)
        assert closing < steady

    def test_domain_error_nonpositive_spacing(self):
        seg_state = state()
        object.__setattr__(seg_state, "ds", 0.0)
        with pytest.raises(ModelDomainError):
            idm_accel(seg_state, IdmParameters())

    def test_monotone_in_spacing(self):
        rng = np.random.default_rng(0)
        p = IdmParameters()
        for _ in range(200):
            dv = rng.uniform(-5.0, 1.0)
            v = rng.uniform(0.0, 7.9)
            ds1, ds2 = sorted(rng.uniform(2.0, 100.0, 2))
            a1 = idm_accel(state(dv=dv, ds=ds1, v_prev=v), p)
            a2 = idm_accel(state(dv=dv, ds=ds2, v_prev=v), p)
            assert a2 >= a1 - 1e-12

    def test_monotone_in_speed_physical_regime(self):
        # non-increasing in v_prev; provable for dv <= ~2*sqrt(a*b)*T
        rng = np.random.default_rng(1)
        p = IdmParameters()
        for _ in range(200):
            dv = rng.uniform(-5.0, 1.0)
            ds = rng.uniform(2.0, 100.0)
            v1, v2 = sorted(rng.uniform(0.0, 12.0, 2))
            a1 = idm_accel(state(dv=dv, ds=ds, v_prev=v1), p)
            a2 = idm_accel(state(dv=dv, ds=ds, v_prev=v2), p)
            assert a2 <= a1 + 1e-12

    def test_parameter_validation(self):
        with pytest.raises(ValueError):
            IdmParameters(v0=-1.0)
        with pytest.raises(ValueError):
            IdmParameters(delta=0.5)

    def test_vector_round_trip(self):
        p = IdmParameters(v0=9.0, T=1.2, s0=1.5, a_max=1.3, b=2.0, delta=4.0)
        assert IdmParameters.from_vector(p.as_vector()) == p

    def test_prediction_deterministic(self):
        rng = np.random.default_rng(2)
        idm, acc = IdmModel(), AccModel()
        for _ in range(50):
            s = state(
                dv=rng.normal(0, 2),
                ds=rng.uniform(2, 50),
                a_prev=rng.normal(0, 1),
                v_prev=rng.uniform(0, 10),
            )
            assert idm.predict(s) == idm.predict(s)
            assert acc.predict(s) == acc.predict(s)


class TestAcc:
    def test_equilibrium(self):
        p = AccParameters(k1=0.23, k2=0.07, t_hw=1.6, s0=2.0)
        v = 6.0
        assert acc_accel(state(dv=0.0, ds=p.s0 + p.t_hw * v, v_prev=v), p) == 0.0

    def test_linearity(self):
        p = AccParameters(k1=0.23, k2=0.07, t_hw=1.6, s0=0.0)
        base = acc_accel(state(dv=1.0, ds=4.0, v_prev=0.0), p)
        doubled = acc_accel(state(dv=2.0, ds=8.0, v_prev=0.0), p)
        assert abs(doubled - 2 * base) < 1e-12

    def test_arithmetic_oracle(self):
        p = AccParameters(k1=0.23, k2=0.07, t_hw=1.6, s0=2.0)
        a = acc_accel(state(dv=1.0, ds=20.0, v_prev=8.0), p)
        assert abs(a - 1.266) < 1e-12

    def test_superposition(self):
        p = AccParameters(k1=0.4, k2=0.2, t_hw=1.0, s0=0.0)
        s1 = state(dv=1.0, ds=10.0, v_prev=2.0)
        s2 = state(dv=-0.5, ds=6.0, v_prev=4.0)
        mid = state(dv=0.25, ds=8.0, v_prev=3.0)  # midpoint of the two states
        a_mid = acc_accel(mid, p)
        assert abs(a_mid - 0.5 * (acc_accel(s1, p) + acc_accel(s2, p))) < 1e-12


class TestClamp:
    def test_identity_inside_range(self):
        assert clamp_accel(0.0, AccelerationBounds()) == 0.0

    def test_upper_lower(self):
        bounds = AccelerationBounds()
        assert clamp_accel(10.0, bounds) == 2.0
        assert clamp_accel(-10.0, bounds) == -3.0

    def test_idempotent(self):
        bounds = AccelerationBounds()
        rng = np.random.default_rng(3)
        for a in rng.uniform(-10, 10, 100):
            once = clamp_accel(a, bounds)
            assert clamp_accel(once, bounds) == once

    def test_bounds_validation(self):
        with pytest.raises(ValueError):
            AccelerationBounds(a_min=1.0, a_max=2.0)

    def test_defaults(self):
        bounds = AccelerationBounds()
        assert bounds.a_min == -3.0
        assert bounds.a_max == 2.0


# ---------------------------------------------------------------------------
# external adapter


def stub_script(tmp_path, body, name="stub.py"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return [sys.executable, str(path)]


ECHO_ZERO = """
    import sys
    line = sys.stdin.readline()
    print("READY", flush=True)
    for line in sys.stdin:
        if line.strip() == "BYE":
            break
        print("0.0", flush=True)
"""

IDM_STUB = """
    import math, sys
    V0, T, S0, A_MAX, B, DELTA = 8.0, 1.5, 2.0, 1.0, 1.5, 4.0
    sys.stdin.readline()
    print("READY", flush=True)
    for line in sys.stdin:
        line = line.strip()
        if line == "BYE":
            break
        dv, ds, a_prev, v_prev = (float(x) for x in line.split())
        v = max(v_prev, 0.0)
        s_star = S0 + v * T - v * dv / (2.0 * math.sqrt(A_MAX * B))
        print(repr(A_MAX * (1.0 - (v / V0) ** DELTA - (s_star / ds) ** 2)), flush=True)
"""

MALFORMED = """
    import sys
    sys.stdin.readline()
    print("READY", flush=True)
    sys.stdin.readline()
    print("not-a-number", flush=True)
"""

SLEEPY = """
    import sys, time
    sys.stdin.readline()
    print("READY", flush=True)
    sys.stdin.readline()
    time.sleep(5.0)
"""

DIES = """
    import sys
    sys.stdin.readline()
    print("READY", flush=True)
    sys.stdin.readline()
    sys.exit(3)
"""


class TestExternalModel:
    def test_echo_stub_predicts_zero(self, tmp_path):
        with external_model(stub_script(tmp_path, ECHO_ZERO), name="zero") as model:
            assert model.predict(state()) == 0.0
            assert model.predict(state(dv=1.0)) == 0.0

    def test_idm_stub_matches_native(self, tmp_path):
        native = IdmModel()
        rng = np.random.default_rng(5)
        with external_model(stub_script(tmp_path, IDM_STUB), name="ext") as model:
            for _ in range(64):
                s = state(
                    dv=rng.normal(0.0, 2.0),
                    ds=rng.uniform(2.0, 50.0),
                    a_prev=rng.normal(0.0, 1.0),
                    v_prev=rng.uniform(0.0, 10.0),
                )
                assert abs(model.predict(s) - native.predict(s)) < 1e-6

    def test_malformed_reply(self, tmp_path):
        with external_model(stub_script(tmp_path, MALFORMED), name="bad") as model:
            with pytest.raises(MalformedReplyError):
                model.predict(state())

    def test_timeout(self, tmp_path):
        with external_model(stub_script(tmp_path, SLEEPY), name="slow", timeout_s=0.3) as model:
            with pytest.raises(ReplyTimeoutError):
                model.predict(state())

    def test_process_exit(self, tmp_path):
        with external_model(stub_script(tmp_path, DIES), name="dead", timeout_s=2.0) as model:
            with pytest.raises(ExternalProcessError):
                model.predict(state())

    def test_handshake_failure(self, tmp_path):
        script = stub_script(tmp_path, "import sys\nsys.stdin.readline()\nprint('HI', flush=True)\n")
        with pytest.raises(MalformedReplyError):
            external_model(script, name="rude", timeout_s=2.0)


class TestReplayModel:
    def test_replays_in_order(self, sinusoid_segment):
        model = ReplayModel.from_segments("oracle", [sinusoid_segment])
        model.begin_segment(sinusoid_segment.segment_id)
        for k in range(1, 6):
            assert model.predict(state()) == sinusoid_segment.a_f[k]

    def test_lag(self, sinusoid_segment):
        model = ReplayModel.from_segments("lagged", [sinusoid_segment], lag=2)
        model.begin_segment(sinusoid_segment.segment_id)
        assert model.predict(state()) == sinusoid_segment.a_f[0]  # clipped at start
        assert model.predict(state()) == sinusoid_segment.a_f[0]
        assert model.predict(state()) == sinusoid_segment.a_f[1]

    def test_bias(self, sinusoid_segment):
        model = ReplayModel.from_segments("biased", [sinusoid_segment], bias=0.2)
        model.begin_segment(sinusoid_segment.segment_id)
        assert model.predict(state()) == sinusoid_segment.a_f[1] + 0.2

    def test_noise_deterministic(self, sinusoid_segment):
        a = ReplayModel.from_segments("noisy", [sinusoid_segment], noise_sigma=0.3, seed=4)
        b = ReplayModel.from_segments("noisy", [sinusoid_segment], noise_sigma=0.3, seed=4)
        a.begin_segment(sinusoid_segment.segment_id)
        b.begin_segment(sinusoid_segment.segment_id)
        for _ in range(10):
            assert a.predict(state()) == b.predict(state())

    def test_unknown_segment(self, sinusoid_segment):
        model = ReplayModel.from_segments("oracle", [sinusoid_segment])
        with pytest.raises(KeyError):
            model.begin_segment("nope")


class TestConstantModel:
    def test_value(self):
        model = ConstantModel(0.7)
        assert model.predict(state()) == 0.7
        assert model.parameters() == {"value": 0.7}
