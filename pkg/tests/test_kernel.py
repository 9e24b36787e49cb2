import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import iid
from merw.eigen import psi_extremal
from merw.env import make_environment
from merw.errors import ModelError
from merw.kernel import hitting_probability, merw_kernel, validate_kernel

HIT_K3 = 0.99825415453726909716
STEP_K0_LEFT = 0.93301270189221932
STEP_K0_RIGHT = 0.066987298107780677


def test_step_kappa0_row(step2):
    ev = psi_extremal(step2, (-5, 5))
    k = merw_kernel(step2, ev, 0.0)
    left, stay, right = k.row(1)
    assert stay == 0.0
    assert left == pytest.approx(STEP_K0_LEFT, rel=1e-14)
    assert right == pytest.approx(STEP_K0_RIGHT, rel=1e-13)
    # far left of the step the loop weight is M
    assert k.row(-3)[1] == 0.5


def test_step_kappa1_rows_are_explicit(step2):
    ev = psi_extremal(step2, (-5, 5))
    k = merw_kernel(step2, ev, 1.0)
    # psi+ is constant on the loop side
    assert k.row(-2) == pytest.approx((0.25, 0.5, 0.25), abs=1e-15)
    # right of the step beta_i = 1/3, 3/11, ... and the loop-free row is (beta_{i-1}, 0, 1/beta_i)/4
    b2, b3 = ev.beta(2).mid, ev.beta(3).mid
    assert b2 == pytest.approx(3 / 11, abs=1e-15)
    assert k.row(3) == pytest.approx((b2 / 4, 0.0, 1 / (4 * b3)), abs=1e-12)


def test_window_must_be_interior(step2):
    ev = psi_extremal(step2, (-5, 5))
    with pytest.raises(ModelError):
        merw_kernel(step2, ev, 1.0, window=(-5, 4))
    with pytest.raises(ModelError):
        merw_kernel(step2, ev, 1.2)
    with pytest.raises(IndexError):
        merw_kernel(step2, ev, 1.0).row(9)


def test_hitting_probability_values(step2):
    ev = psi_extremal(step2, (-5, 5))
    assert hitting_probability(ev, 0.5, 3) == pytest.approx(HIT_K3, rel=1e-14)
    assert hitting_probability(ev, 1.0, 3) == 1.0
    assert hitting_probability(ev, 0.0, 3) == 0.0
    h = [hitting_probability(ev, 0.5, i) for i in range(-4, 5)]
    assert h[4] == pytest.approx(0.5, abs=1e-15)          # psi+ = psi- = 1 at the origin
    assert all(a < b for a, b in zip(h, h[1:]))


@pytest.mark.parametrize("kappa", [0.0, 0.1, 0.5, 0.9, 1.0])
@pytest.mark.parametrize("seed", [1, 2])
def test_validate_kernel_iid(kappa, seed):
    env = iid(0.3, 2, seed)
    ev = psi_extremal(env, (-300, 300))
    k = merw_kernel(env, ev, kappa)
    rep = validate_kernel(k, ev)
    assert rep.ok()
    assert rep.row_sum_pre_dev <= 1e-10
    assert rep.bracket_half_width <= 1e-12
    if kappa > 0:
        assert rep.h_max <= 1 / kappa * (1 + 1e-12)
    np.testing.assert_array_equal(k.p_stay, env.weights(k.lo, k.hi) / 4.0)


def test_rho_identity_for_extremal_kernel():
    env = iid(0.5, 2, 3)
    ev = psi_extremal(env, (-50, 50))
    k = merw_kernel(env, ev, 1.0)
    beta = 0.5 * (ev.beta_lo + ev.beta_hi)
    # p_left/p_right = beta_{i-1} beta_i
    i = k.sites
    expected = beta[i - ev.lo] * beta[i - ev.lo + 1]
    np.testing.assert_allclose(k.rho(), expected, rtol=1e-13)


@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0), st.floats(0.05, 0.95))
def test_rows_are_probabilities(seed, kappa, p):
    env = iid(p, 2.0, seed)
    ev = psi_extremal(env, (-40, 40))
    k = merw_kernel(env, ev, kappa)
    rows = np.stack([k.p_left, k.p_stay, k.p_right])
    assert (rows >= 0).all()
    np.testing.assert_allclose(rows.sum(axis=0), 1.0, atol=1e-12)
    if kappa > 0:
        assert validate_kernel(k, ev).h_bounded


@given(st.integers(0, 2**31 - 1), st.integers(-20, 20))
def test_hitting_probability_is_harmonic(seed, site):
    env = iid(0.4, 2.0, seed)
    ev = psi_extremal(env, (-30, 30))
    k = merw_kernel(env, ev, 0.5)
    l, s, r = k.row(site)
    h = [hitting_probability(ev, 0.5, site + d) for d in (-1, 0, 1)]
    assert l * h[0] + s * h[1] + r * h[2] == pytest.approx(h[1], abs=1e-12)


def test_periodic_kernel_via_closed_form():
    env = make_environment({"kind": "periodic", "ell": 5, "M": 2})
    ev = psi_extremal(env, (-20, 20))
    k = merw_kernel(env, ev, 0.5)
    assert validate_kernel(k, ev).row_sum_dev <= 1e-12
    # kappa does not matter when psi+ = psi-
    np.testing.assert_allclose(k.p_right, merw_kernel(env, ev, 1.0).p_right, rtol=1e-13)
