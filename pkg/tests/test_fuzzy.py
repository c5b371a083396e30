import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from wisdnav.exceptions import InferenceUndefined
from wisdnav.fuzzy import (
    A_SETS,
    E_SETS,
    R_SETS,
    ControllerState,
    FuzzyModeController,
    FuzzyRuleTables,
    LinguisticInputs,
    MembershipFunction,
    control_step,
    default_memberships,
    defuzzify_mom,
    fuzzify,
    fuzzify_inputs,
    infer_level1,
    infer_level2,
    infer_mode,
    linguistic_inputs,
    memberships_from_config,
    project_twist,
)
from wisdnav.kinematics import MODES, BodyTwist, MotionMode, RobotGeometry, slip_residual

GEO = RobotGeometry()
MFS = default_memberships(GEO)
TABLES = FuzzyRuleTables.default()
SM, OM, LM, RM = (MotionMode(m) for m in ("SM", "OM", "LM", "RM"))

# rule tables transcribed as text, independent of the package constructor
LEVEL1_TEXT = """
RI SM OM OM LM
RU RM SM SM RM
RR SM SM SM SM
"""
LEVEL2_TEXT = """
RL SM OM SM RM
TL OM OM LM LM
"""
LEVEL1 = {(row.split()[0], a): MotionMode(m)
          for row in LEVEL1_TEXT.strip().splitlines()
          for a, m in zip(("AZ", "AR", "AU", "AL"), row.split()[1:])}
LEVEL2 = {(MotionMode(m1), row.split()[0]): MotionMode(m)
          for row in LEVEL2_TEXT.strip().splitlines()
          for m1, m in zip(("SM", "OM", "LM", "RM"), row.split()[1:])}

# crisp values sitting on exactly one subset's plateau
R_PEAK = {"RU": 0.3 * GEO.r_min, "RR": 3.0 * GEO.r_min, "RI": 10.0 * GEO.r_min}
A_PEAK_DEG = {"AZ": 0.0, "AR": 25.0, "AU": 65.0, "AL": 88.0}
E_PEAK = {"RL": 0.0, "TL": 10.0 * GEO.r_spin}
# a level-1 cell producing each mode, used to reach every level-2 row
LEVEL1_SOURCE = {SM: ("RI", "AZ"), OM: ("RI", "AR"), LM: ("RI", "AL"), RM: ("RU", "AZ")}


def crisp(r, a, e):
    return LinguisticInputs(R_PEAK[r], math.radians(A_PEAK_DEG[a]), E_PEAK[e])


class TestMembership:
    def test_peak_and_edges(self):
        tri = MembershipFunction.triangle(0.0, 1.0, 3.0)
        assert tri(1.0) == 1.0
        assert tri(0.5) == 0.5
        assert tri(2.0) == 0.5
        assert tri(-0.1) == 0.0 and tri(3.5) == 0.0

    def test_infinite_shoulder(self):
        mf = MembershipFunction(1.0, 2.0, math.inf, math.inf)
        assert mf(math.inf) == 1.0 and mf(1e9) == 1.0 and mf(1.5) == 0.5

    def test_nondecreasing_enforced(self):
        with pytest.raises(ValueError):
            MembershipFunction(0, 2, 1, 3)

    def test_from_points(self):
        assert MembershipFunction.from_points([0, 1, 2]) == MembershipFunction(0, 1, 1, 2)
        with pytest.raises(ValueError):
            MembershipFunction.from_points([1, 2])

    def test_peaks_are_one_hot(self):
        for name, value in R_PEAK.items():
            degrees = fuzzify(value, MFS["r_turn"])
            assert degrees == {k: float(k == name) for k in R_SETS}
        for name, value in A_PEAK_DEG.items():
            degrees = fuzzify(value, MFS["a_offset"])
            assert degrees == {k: float(k == name) for k in A_SETS}
        for name, value in E_PEAK.items():
            degrees = fuzzify(value, MFS["e_ratio"])
            assert degrees == {k: float(k == name) for k in E_SETS}

    def test_default_breakpoints(self):
        rmin = GEO.r_min
        assert MFS["r_turn"]["RU"] == MembershipFunction(0, 0, 0.6 * rmin, rmin)
        assert MFS["a_offset"]["AR"] == MembershipFunction(5, 15, 40, 45)
        assert MFS["a_offset"]["AU"] == MembershipFunction(40, 50, 80, 85)
        assert MFS["e_ratio"]["TL"].a == pytest.approx(0.5 * GEO.r_spin)

    @given(st.floats(0, 1e3))
    def test_degrees_in_unit_interval(self, x):
        for family in MFS.values():
            for v in fuzzify(x, family).values():
                assert 0.0 <= v <= 1.0

    def test_overrides(self):
        mfs = memberships_from_config(GEO, {"r_turn": {"RU": [0, 0, 1, 2]}})
        assert mfs["r_turn"]["RU"] == MembershipFunction(0, 0, 1, 2)
        with pytest.raises(KeyError):
            memberships_from_config(GEO, {"speed": {}})
        with pytest.raises(KeyError):
            memberships_from_config(GEO, {"r_turn": {"XX": [0, 1, 2]}})


class TestLinguisticInputs:
    def test_straight(self):
        li = linguistic_inputs(BodyTwist(0.5, 0, 0))
        assert li.r_turn == math.inf and li.a_offset == 0.0 and li.e_ratio == 0.0

    def test_turn_radius(self):
        assert linguistic_inputs(BodyTwist(0.5, 0, 0.1)).r_turn == pytest.approx(5.0)

    def test_energy_ratio(self):
        assert linguistic_inputs(BodyTwist(0, 0.35, 0.32)).e_ratio == pytest.approx(1.09375)

    def test_offset_conventions(self):
        assert linguistic_inputs(BodyTwist(0, 0, 0.3)).a_offset == 0.0
        assert linguistic_inputs(BodyTwist(0, 0.3, 0)).a_offset == pytest.approx(math.pi / 2)
        assert linguistic_inputs(BodyTwist(0, -0.3, 0)).a_offset == pytest.approx(-math.pi / 2)
        assert linguistic_inputs(BodyTwist(0.3, 0.3, 0)).a_offset == pytest.approx(math.pi / 4)

    def test_lateral_sentinel(self):
        li = linguistic_inputs(BodyTwist(0, 0.3, 0))
        assert li.r_turn == math.inf and li.e_ratio == math.inf


class TestRuleTables:
    def test_defaults_match_transcription(self):
        assert dict(TABLES.level1) == LEVEL1
        assert dict(TABLES.level2) == LEVEL2

    @pytest.mark.parametrize("r,a", list(LEVEL1))
    def test_level1_cell(self, r, a):
        mu_r, mu_a, _ = fuzzify_inputs(crisp(r, a, "RL"), MFS)
        out = infer_level1(mu_r, mu_a, TABLES)
        expect = np.zeros(4)
        expect[LEVEL1[(r, a)].index] = 1.0
        assert np.array_equal(out, expect)

    @pytest.mark.parametrize("m1,e", list(LEVEL2))
    def test_level2_cell(self, m1, e):
        r, a = LEVEL1_SOURCE[m1]
        degrees = infer_mode(crisp(r, a, e), TABLES, MFS)
        assert defuzzify_mom(degrees) is LEVEL2[(m1, e)]
        assert degrees[LEVEL2[(m1, e)].index] == 1.0

    def test_level2_direct(self):
        onehot = np.eye(4)
        for (m1, e), m in LEVEL2.items():
            mu_e = {k: float(k == e) for k in E_SETS}
            out = infer_level2(onehot[m1.index], mu_e, TABLES)
            assert MODES[int(np.argmax(out))] is m and out.max() == 1.0

    @pytest.mark.parametrize("r,a,e,mode", [("RI", "AZ", "RL", SM), ("RU", "AZ", "RL", RM),
                                            ("RI", "AZ", "TL", OM)])
    def test_worked_cases(self, r, a, e, mode):
        assert defuzzify_mom(infer_mode(crisp(r, a, e), TABLES, MFS)) is mode

    def test_overrides(self):
        t = TABLES.with_overrides({"level1": {"RI,AZ": "OM"}, "level2": {"SM,RL": "LM"}})
        assert t.level1[("RI", "AZ")] is OM and t.level2[(SM, "RL")] is LM
        assert TABLES.level1[("RI", "AZ")] is SM

    def test_total(self):
        partial = dict(TABLES.level1)
        partial.pop(("RI", "AZ"))
        with pytest.raises(ValueError):
            FuzzyRuleTables(partial, TABLES.level2)

    def test_undefined_inference(self):
        narrow = memberships_from_config(GEO, {"r_turn": {"RU": [0, 0, 0.1, 0.2],
                                                          "RR": [0.3, 0.4, 0.5],
                                                          "RI": [0.6, 0.7, 0.8, 0.9]}})
        with pytest.raises(InferenceUndefined):
            infer_mode(LinguisticInputs(100.0, 0.0, 0.0), TABLES, narrow)


class TestDefuzzify:
    def test_unique_max(self):
        assert defuzzify_mom([0.2, 0.8, 0.1, 0.1]) is OM

    def test_tie_prefers_current(self):
        assert defuzzify_mom([0.5, 0.5, 0, 0], current=OM) is OM
        assert defuzzify_mom([0.5, 0.5, 0, 0], current=RM) is SM
        assert defuzzify_mom([0, 0, 0.5, 0.5]) is LM

    def test_zero(self):
        with pytest.raises(InferenceUndefined):
            defuzzify_mom([0, 0, 0, 0])

    @given(st.lists(st.floats(0, 1), min_size=4, max_size=4).filter(lambda d: max(d) > 0),
           st.floats(1e-3, 1e3))
    def test_scale_invariance(self, d, k):
        assert defuzzify_mom(d) is defuzzify_mom([k * x for x in d])


def run(twists, **kw):
    ctrl = FuzzyModeController(**kw).fit()
    return [ctrl.step(t) for t in twists]


class TestControlStep:
    def test_lateral_trace(self):
        outs = run([BodyTwist(0, 0.3, 0)] * 15)
        assert all(o.mode is LM for o in outs)
        assert np.allclose(outs[-1].command.delta, math.pi / 2)
        assert np.allclose(outs[-1].command.v, 0.3)
        assert not outs[-1].slew_limited

    def test_spin_trace(self):
        outs = run([BodyTwist(0, 0, 0.3)] * 15)
        assert all(o.mode is RM for o in outs)
        assert np.allclose(np.abs(outs[-1].command.delta), math.atan(GEO.L / GEO.W))
        assert np.allclose(np.abs(outs[-1].command.v), 0.3 * GEO.r_spin)

    def test_straight_trace(self):
        outs = run([BodyTwist(0.5, 0, 0)] * 3)
        assert all(o.mode is SM for o in outs)
        assert np.all(outs[0].command.delta == 0) and np.all(outs[0].command.v == 0.5)

    def test_first_decision_unheld(self):
        assert run([BodyTwist(0, 0.3, 0)], slew_max=None)[0].mode is LM

    def test_hysteresis_switch_after_hold(self):
        outs = run([BodyTwist(0.5, 0, 0)] * 2 + [BodyTwist(0, 0.3, 0)] * 4, hold_steps=3,
                   slew_max=None)
        assert [o.mode.value for o in outs] == ["SM", "SM", "SM", "SM", "LM", "LM"]

    def test_interrupted_candidate_resets(self):
        seq = [BodyTwist(0.5, 0, 0), BodyTwist(0, 0.3, 0), BodyTwist(0, 0.3, 0),
               BodyTwist(0.5, 0, 0), BodyTwist(0, 0.3, 0), BodyTwist(0, 0.3, 0)]
        outs = run(seq, hold_steps=3, slew_max=None)
        assert all(o.mode is SM for o in outs)

    def test_projection_into_mode(self):
        assert project_twist(BodyTwist(0.1, 0.2, 0.3), SM, GEO) == \
            pytest.approx((0.1, 0, 0.1 / GEO.r_min))
        om = project_twist(BodyTwist(0.1, 0.3, 0.1), OM, GEO)
        assert om.wz == 0 and math.atan2(om.vy, om.vx) == pytest.approx(GEO.delta_lim)
        assert project_twist(BodyTwist(0.1, 0.3, 0.1), LM, GEO) == (0, 0.3, 0)
        assert project_twist(BodyTwist(0.1, 0.3, 0.1), RM, GEO) == (0, 0, 0.1)

    def test_wheel_speed_cap(self):
        geo = RobotGeometry(wheel_speed_max=0.3)
        out = run([BodyTwist(0.75, 0, 0)], geometry=geo)[0]
        assert np.abs(out.command.v).max() <= 0.3 + 1e-12

    def test_state_not_mutated(self):
        ctrl = FuzzyModeController().fit()
        state = ControllerState()
        _, new = control_step(BodyTwist(0, 0.3, 0), state, GEO, ctrl.tables_, ctrl.memberships_)
        assert state.current_mode is None and state.hold_counter == 0
        assert np.all(state.last_command.delta == 0)
        assert new.current_mode is LM

    @given(st.lists(st.tuples(st.floats(-0.75, 0.75), st.floats(-0.35, 0.35),
                              st.floats(-0.32, 0.32)), min_size=1, max_size=40))
    def test_stream_invariants(self, seq):
        ctrl = FuzzyModeController().fit()
        prev = np.zeros(4)
        step = ctrl.slew_max * ctrl.dt
        for tw in seq:
            o = ctrl.step(BodyTwist(*tw))
            assert slip_residual(o.pre_slew, GEO) <= 1e-9
            assert slip_residual(o.command, GEO) <= 1e-9
            assert np.all(np.abs(o.command.delta - prev) <= step + 1e-9)
            prev = o.command.delta

    @given(st.tuples(st.floats(-0.75, 0.75), st.floats(-0.35, 0.35), st.floats(-0.32, 0.32)))
    def test_constant_stream_never_oscillates(self, tw):
        modes = [o.mode for o in run([BodyTwist(*tw)] * 12)]
        switches = sum(a is not b for a, b in zip(modes, modes[1:]))
        assert switches == 0

    def test_determinism(self, rng):
        X = rng.uniform(-1, 1, size=(50, 3)) * [0.75, 0.35, 0.32]
        a = FuzzyModeController().fit().transform(X)
        b = FuzzyModeController().fit().transform(X)
        assert np.array_equal(a, b)


class TestEstimatorApi:
    def test_params_roundtrip(self):
        ctrl = FuzzyModeController(hold_steps=5, slew_max=None)
        assert ctrl.get_params()["hold_steps"] == 5
        c2 = clone(ctrl)
        assert c2.get_params() == ctrl.get_params()
        c2.set_params(hold_steps=2)
        assert c2.hold_steps == 2 and ctrl.hold_steps == 5

    def test_transform_predict(self):
        X = np.array([[0.5, 0, 0], [0, 0.3, 0], [0, 0, 0.2]])
        ctrl = FuzzyModeController().fit(X)
        assert ctrl.transform(X).shape == (3, 8)
        assert list(FuzzyModeController(hold_steps=1, slew_max=None).fit().predict(X)) == \
            ["SM", "LM", "RM"]

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            FuzzyModeController().transform(np.zeros((1, 3)))

    def test_bad_width(self):
        with pytest.raises(ValueError):
            FuzzyModeController().fit().transform(np.zeros((2, 4)))
