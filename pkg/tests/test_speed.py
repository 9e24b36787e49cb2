import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import iid
from merw.eigen import step_closed_forms
from merw.env import NuSpec, make_environment
from merw.errors import ModelError, NonConvergenceError
from merw.speed import (annealed_speed, bernoulli_limits, green_closed_form, s_closed_form,
                        s_series, speed_curve, speed_report)

STEP_S = 5.4641016151377545870
LIMIT_M20 = 0.99585919546393838810


def test_step_green_value(step2):
    sc = s_closed_form(step2)
    assert sc.value == pytest.approx(STEP_S, rel=1e-14)
    assert not sc.infinite and sc.error == 0.0
    # by symmetry of the step, S is 1/v_M times lam/(lam - ...) collapse: S (1 - gamma) = lam
    assert sc.value * (1 - step_closed_forms(2.0).gamma) == pytest.approx(4.0, rel=1e-14)


def test_constant_environment_green_is_infinite():
    sc = s_closed_form(make_environment({"kind": "constant", "c": 2}))
    assert sc.infinite and sc.value == math.inf


def test_green_closed_form_decays_off_diagonal(step2):
    g = [green_closed_form(step2, 0, i) for i in range(4)]
    assert g[0] == pytest.approx(STEP_S, rel=1e-14)
    ratios = np.array(g[1:]) / np.array(g[:-1])
    np.testing.assert_allclose(ratios, 2 - math.sqrt(3), rtol=1e-12)


def test_series_partial_sums_increase_and_report_tail():
    env = iid(0.5, 2, 7)
    ser = s_series(env, 500)
    assert np.all(np.diff(ser.partial) >= 0) and np.all(ser.terms[:50] > 0)
    assert ser.partial.size == 501 and 0 < ser.ratio < 1
    rep = speed_report(env, 500)
    d = rep.to_dict()
    assert d["s_series_terms"] == 501
    assert d["series_minus_closed"] == pytest.approx(rep.discrepancy)
    with pytest.raises(ValueError):
        s_series(env, -1)


def test_series_and_closed_forms_are_distinct_quantities():
    # both have mean 1/v over the environment law but differ per environment
    gaps = [speed_report(iid(0.5, 2, s), 2000).discrepancy for s in range(5)]
    assert max(abs(g) for g in gaps) > 1e-3


def test_bernoulli_limits_values():
    lim0, c1 = bernoulli_limits(2.0)
    assert lim0 == pytest.approx(math.sqrt(3) / 2, rel=1e-15)
    assert c1 == pytest.approx(0.75, rel=1e-15)
    assert bernoulli_limits(20.0)[0] == pytest.approx(LIMIT_M20, rel=1e-15)
    with pytest.raises(ValueError):
        bernoulli_limits(0.0)


def test_annealed_speed_is_reproducible():
    nu = NuSpec.bernoulli(0.5, 2)
    a = annealed_speed(nu, 5000, 1)
    b = annealed_speed(nu, 5000, 1)
    assert a.v == b.v and a.ci_half_width == b.ci_half_width
    assert 0.34 < a.v < 0.39
    assert a.ci_half_width == pytest.approx(a.v ** 2 * a.ci_S, rel=1e-12)
    assert a.to_dict()["nu"] == nu.to_dict()
    with pytest.raises(ModelError):
        annealed_speed(nu, 10, 1)


def test_annealed_speed_matches_quenched_average():
    # E[S] from independently sampled full environments agrees with the one-sided sampler
    S = [s_closed_form(iid(0.5, 2, 1000 + s)).value for s in range(400)]
    direct = 1 / np.mean(S)
    fast = annealed_speed(NuSpec.bernoulli(0.5, 2), 20000, 5)
    err = 1.96 * np.std(S, ddof=1) / math.sqrt(len(S)) * direct ** 2
    assert abs(direct - fast.v) <= 1.5 * (err + fast.ci_half_width)


def test_near_critical_annealed_speed_reports_nonconvergence():
    with pytest.raises(NonConvergenceError):
        annealed_speed(NuSpec.bernoulli(0.99999, 2.0), 200, 1, depth_cap=64)


@settings(max_examples=10)
@given(st.floats(0.05, 0.95), st.sampled_from([0.5, 2.0, 10.0]))
def test_annealed_speed_inside_limits(p, M):
    v = annealed_speed(NuSpec.bernoulli(p, M), 2000, 3).v
    assert 0 < v < bernoulli_limits(M)[0]


def test_speed_curve_decreasing():
    curve = speed_curve(2.0, [0.1, 0.5, 0.9], 4000, 2)
    assert curve.decreasing
    t = curve.table()
    assert [r["p"] for r in t] == [0.1, 0.5, 0.9]
    with pytest.raises(ModelError):
        speed_curve(2.0, [0.0], 100, 1)
