"""Acceptance criteria, each at its stated tolerance.

Every test records one PASS/FAIL line, printed in the terminal summary:
    pytest tests/test_acceptance.py -v
"""

import json
import math
import subprocess
import sys
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import iid
from merw.eigen import alpha_at, beta_at, eigen_residual, psi_extremal, step_closed_forms
from merw.env import NuSpec, gamma_of, make_environment
from merw.kernel import hitting_probability
from merw.oracle import (annealed_moment_exact, count_excursions, estimate_lambda,
                         green_auto, series_moment, speed_series_bernoulli)
from merw.periodic import (concentration_mass, entropy_rate, occupation_tv, periodic_limits,
                           periodic_measure, periodic_recurrence_check)
from merw.sim import (annealed_trajectory_speed, estimate_direction, estimate_speed,
                      simulate_coupled)
from merw.speed import annealed_speed, bernoulli_limits, s_closed_form, speed_curve

pytestmark = pytest.mark.acceptance

SQRT3_2 = math.sqrt(3) / 2


def test_criterion_01_eigen_residuals(criterion):
    t0 = time.perf_counter()
    envs = [make_environment({"kind": "constant", "c": 2}),
            make_environment({"kind": "step", "M": 2}),
            make_environment({"kind": "periodic", "ell": 5, "M": 2})]
    envs += [iid(0.3, 2, s) for s in (1, 2, 3)]
    worst = 0.0
    for env in envs:
        ev = psi_extremal(env, (-200, 200))
        for kappa in (1.0, 0.0, 0.5):
            worst = max(worst, eigen_residual(ev, kappa))
    dt = time.perf_counter() - t0
    criterion("1 eigen residuals", worst <= 1e-10 and dt < 5,
              f"max relative residual {worst:.2e} (<= 1e-10), {dt:.2f}s (< 5s)")


def test_criterion_02_bracket_bounds(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    bad = 0
    samples = 10_000
    for _ in range(samples):
        p = float(rng.uniform(0.05, 0.95))
        M = float(rng.choice([0.5, 1.0, 2.0, 5.0]))
        env = iid(p, M, int(rng.integers(1 << 30)))
        i = int(rng.integers(-1000, 1000))
        g = gamma_of(env.lam)
        for br in (beta_at(env, i), alpha_at(env, i)):
            if not (br.converged and br.width <= 1e-12
                    and br.lo >= g - 1e-12 and br.hi <= 1 + 1e-12):
                bad += 1
    step = make_environment({"kind": "step", "M": 2})
    zeros_left = make_environment({"kind": "explicit", "start": 0, "values": [1.0, 2.0],
                                   "left_fill": 0.0, "right_fill": 2.0})
    ends = [abs(beta_at(step, -5).mid - 1.0), abs(alpha_at(step, 5).mid - gamma_of(4.0)),
            abs(beta_at(zeros_left, -3).mid - gamma_of(4.0)), abs(alpha_at(zeros_left, 3).mid - 1.0)]
    dt = time.perf_counter() - t0
    criterion("2 bracket bounds", bad == 0 and max(ends) <= 1e-12 and dt < 10,
              f"{bad} bad of {2 * samples} brackets, endpoint error {max(ends):.1e}, {dt:.1f}s (< 10s)")


def test_criterion_03_step_closed_forms(criterion):
    env = make_environment({"kind": "step", "M": 2})
    ev = psi_extremal(env, (-10, 10))
    cf = step_closed_forms(2.0)
    k = ev.sites
    err = max(np.abs(np.exp(ev.log_psi_plus) / cf.psi_plus(k) - 1).max(),
              np.abs(np.exp(ev.log_psi_minus) / cf.psi_minus(k) - 1).max())
    v2 = abs(cf.v_M - SQRT3_2)
    small = step_closed_forms(1e-4).v_M / math.sqrt(1e-4)
    criterion("3 step closed forms (psi, v_2, small M)",
              err <= 1e-10 and v2 <= 1e-12 and 0.9 <= small <= 1.1,
              f"psi rel err {err:.1e}, |v_2 - sqrt3/2| {v2:.1e}, v_M/sqrt(M) at 1e-4 = {small:.6f}")


def test_criterion_03_step_closed_forms_large_M(criterion):
    # v_M = sqrt(M(M+4))/(M+2) < 1 for every M, so v_M * M is about M at M = 1e4
    vM = step_closed_forms(1e4).v_M
    criterion("3 step closed forms (large M)", 0.9 <= vM * 1e4 <= 1.1,
              f"v_M * M at M=1e4 = {vM * 1e4:.4f}, required in [0.9, 1.1]")


def test_criterion_04_green_identity(criterion):
    t0 = time.perf_counter()
    parts, ok = [], True
    for seed in range(5):
        env = iid(0.5, 2, 100 + seed)
        sc = s_closed_form(env)
        g = green_auto(env, 0, 0)
        mono = bool(np.all(np.diff(g.partial) >= 0))
        below = g.partial[-1] <= sc.value + sc.error
        gap = sc.value - g.partial[-1]
        ok &= mono and below and abs(gap) <= 1e-4
        parts.append(f"N={g.N} gap={gap:.1e}")
    dt = time.perf_counter() - t0
    criterion("4 green identity", ok and dt < 30, f"{'; '.join(parts)}; {dt:.1f}s (< 30s)")


def test_criterion_05_exact_counts(criterion):
    t = count_excursions(16)
    central = all(t.c(2 * n, 0, 0) == math.comb(2 * n, n) for n in range(9))
    small = (t.c(1, 1, 1), t.c(3, 1, 1), t.c(3, 1, 3)) == (1, 6, 1)
    p, M = Fraction(1, 3), 2
    annealed = all(series_moment(t, n, p, M) == annealed_moment_exact(p, M, n) for n in range(9))
    criterion("5 exact counts", central and small and annealed,
              f"central binomials {central}, small counts {small}, annealed identity {annealed}")


@pytest.mark.slow
def test_criterion_06_speed_triangulation(criterion):
    t0 = time.perf_counter()
    nu = NuSpec.bernoulli(0.5, 2.0)
    a = annealed_speed(nu, 100_000, 1)
    tr = annealed_trajectory_speed(nu, 100_000, 200, seed=6)
    band = speed_series_bernoulli(0.5, 2.0, 14)
    lo, hi = band.v_band
    # the series route is a band, not a CI: intervals must overlap
    ab = abs(a.v - tr.mean) <= a.ci_half_width + tr.ci_half_width
    a_s = a.v + a.ci_half_width >= lo and a.v - a.ci_half_width <= hi
    t_s = tr.mean + tr.ci_half_width >= lo and tr.mean - tr.ci_half_width <= hi
    dt = time.perf_counter() - t0
    criterion("6 speed triangulation", ab and a_s and t_s and dt < 300,
              f"annealed {a.v:.5f}+-{a.ci_half_width:.5f}, trajectory {tr.mean:.5f}+-"
              f"{tr.ci_half_width:.5f}, series band [{lo:.4f}, {hi:.4f}], {dt:.0f}s (< 300s)")


def test_criterion_07_bernoulli_limits(criterion):
    lim0, c1 = bernoulli_limits(2.0)
    v0 = annealed_speed(NuSpec.bernoulli(1e-3, 2.0), 100_000, 11).v
    v1 = annealed_speed(NuSpec.bernoulli(0.99, 2.0), 100_000, 12).v
    curve = speed_curve(2.0, [k / 10 for k in range(1, 10)], 20_000, 13)
    ok0 = 0.8 * SQRT3_2 < v0 <= SQRT3_2
    ok1 = abs(v1 / 0.0075 - 1) <= 0.25
    criterion("7 bernoulli limits", ok0 and ok1 and curve.decreasing,
              f"v(1e-3)={v0:.5f} in ({0.8 * SQRT3_2:.4f}, {lim0:.4f}], v(0.99)={v1:.6f} vs 0.0075, "
              f"strictly decreasing beyond CIs {curve.decreasing}")


@pytest.mark.slow
def test_criterion_08_hitting_probability(criterion):
    env = iid(0.3, 2.0, 1)
    ev = psi_extremal(env, (-10, 10))
    parts, ok = [], True
    for k in (-3, 0, 5):
        est = estimate_direction(env, None, 0.5, k, 10_000, 10_000, seed=8 + k)
        p = hitting_probability(ev, 0.5, k)
        sigma = est.binomial_sigma(p)
        z = abs(est.fraction_right - p) / sigma if sigma > 0 else math.inf
        ok &= z <= 3 and est.horizon_adequate
        parts.append(f"k={k}: {est.fraction_right:.4f} vs {p:.4f} ({z:.2f} sigma, "
                     f"{est.n_indeterminate} undecided)")
    criterion("8 hitting probability", ok, "; ".join(parts))


@pytest.mark.slow
def test_criterion_09_coupling(criterion):
    env = iid(0.3, 2.0, 1)
    n, reps = 20_000, 400
    right, exact, last_bad = 0, True, []
    for rep in range(reps):
        run = simulate_coupled(env, None, 0.5, 0, n, seed=21, replica=rep)
        if run.kappa_path.positions[-1] <= 4 * math.sqrt(n):
            continue
        right += 1
        t0 = run.plus_path.t0
        exact &= bool(np.array_equal(run.plus_path.increments,
                                     run.kappa_path.increments[t0:]))
        last_bad.append(run.bad_times[-1] if run.bad_times else -1)
    # finitely many bad times: they stop well before the horizon
    finite = max(last_bad) < n // 2
    half = estimate_speed(env, None, 0.5, 0, n, reps, seed=22).right
    plus = estimate_speed(env, None, 1.0, 0, n, reps, seed=23)
    speed_ok = abs(half["mean"] - plus.mean) <= half["ci_half_width"] + plus.ci_half_width
    criterion("9 coupling", right > 0 and exact and finite and speed_ok,
              f"{right} rightward runs, last bad time <= {max(last_bad)}, increments identical {exact}, "
              f"conditional speed {half['mean']:.4f}+-{half['ci_half_width']:.4f} vs "
              f"{plus.mean:.4f}+-{plus.ci_half_width:.4f}")


@pytest.mark.slow
def test_criterion_10_periodic(criterion):
    sol = periodic_measure(10, 2.0)
    zgap = abs(sol.Z - sol.Z_direct) / sol.Z_direct
    tgap = abs(periodic_measure(200, 2.0).theta - periodic_limits(2.0)[0])
    egap = max(abs(entropy_rate(ell, M) - math.log(periodic_measure(ell, M).lambda_ell))
               for ell, M in ((5, 1.0), (8, 2.0), (12, 3.0)))
    mass = concentration_mass(200, 2.0, 0.1).mass
    est = periodic_recurrence_check(5, 2.0, 100_000, 200, 31)
    tv = occupation_tv(5, 2.0, 1_000_000, 32)
    ok = (sol.residual <= 1e-12 and zgap <= 1e-10 and tgap < 1e-3 and egap <= 1e-10
          and mass >= 0.9 and abs(est.mean) < est.ci_half_width and tv <= 0.05)
    criterion("10 periodic", ok,
              f"residual {sol.residual:.1e}, Z gap {zgap:.1e}, theta gap {tgap:.1e}, "
              f"entropy gap {egap:.1e}, mass {mass:.4f}, speed {est.mean:.1e}+-{est.ci_half_width:.1e}, "
              f"TV {tv:.1e}")


def test_criterion_11_lambda_estimation(criterion):
    parts, ok = [], True
    for spec in ({"kind": "constant", "c": 0}, {"kind": "constant", "c": 2},
                 {"kind": "single_loop", "M": 2}):
        est = estimate_lambda(make_environment(spec), 0, 60)
        ok &= est.rel_gap() <= 0.05 and est.monotone_tail(20)
        parts.append(f"{spec['kind']}: {est.last:.4f} vs {est.target:.4f}")
    criterion("11 lambda estimation", ok, "; ".join(parts))


def _merw(*argv, env=None):
    return subprocess.run([sys.executable, "-m", "merw.cli", *argv],
                          capture_output=True, timeout=120, env=env)


@pytest.mark.slow
def test_criterion_12_reproducibility(criterion, tmp_path):
    iid_spec = json.dumps({"kind": "iid", "nu": {"bernoulli": {"p": 0.3, "M": 2}}, "seed": 1})
    runs = [
        ("eigen", "--env", iid_spec, "--window=-50:50", "--kappa", "0.5"),
        ("kernel", "--env", iid_spec, "--window=-50:50", "--kappa", "0.5"),
        ("simulate", "--env", iid_spec, "--steps", "500", "--replicas", "30", "--seed", "3"),
        ("simulate", "--env", iid_spec, "--steps", "500", "--replicas", "30", "--seed", "3",
         "--summary", "-"),
        ("speed", "--nu", "bernoulli:0.5,2", "--reps", "2000", "--seed", "4"),
        ("speed", "--p-grid", "0.2,0.5,0.8", "--M", "2", "--reps", "500", "--seed", "4"),
        ("speed", "--env", iid_spec, "--terms", "300"),
        ("oracle", "count-excursions", "--n", "10"),
        ("oracle", "green", "--env", iid_spec, "--N", "200"),
        ("oracle", "lambda", "--env", iid_spec, "--n-max", "40"),
        ("periodic", "--ell", "8", "--M", "2"),
        ("figure1", "--replicas", "3", "--steps", "200", "--seed", "5"),
    ]
    differing = []
    for argv in runs:
        a, b = _merw(*argv), _merw(*argv)
        if a.returncode != 0 or a.stdout != b.stdout or not a.stdout:
            differing.append(argv[0])
    t0 = time.perf_counter()
    sc = _merw("selfcheck")
    dt = time.perf_counter() - t0
    ok = not differing and sc.returncode == 0 and dt < 60
    criterion("12 reproducibility", ok,
              f"{len(runs) - len(differing)}/{len(runs)} commands byte-identical, "
              f"selfcheck rc={sc.returncode} in {dt:.1f}s (< 60s)")
