"""Fast acceptance checks run by ``merw selfcheck`` (well under a minute)."""

from __future__ import annotations

import math
import sys
import time
from fractions import Fraction
from typing import Callable, TextIO

import numpy as np

from .eigen import (alpha_at, beta_at, eigen_residual, psi_extremal, step_closed_forms)
from .env import NuSpec, gamma_of, make_environment


def _iid(p, M, seed):
    return make_environment({"kind": "iid", "nu": {"bernoulli": {"p": p, "M": M}}, "seed": seed})


def _corrupt_beta(ev, site: int, factor: float = 1.0 + 1e-6):
    """Rebuild ``log psi+`` after scaling one beta; breaks the recurrence at ``site``."""
    beta = 0.5 * (ev.beta_lo + ev.beta_hi)
    beta[site - ev.lo + 1] *= factor
    lb = np.log(beta)
    C = np.cumsum(lb[:len(ev)])
    z = -ev.lo
    ev.log_psi_plus = C[z] - C
    return ev


def check_eigen_residuals(mutate_beta: bool = False) -> tuple[bool, str]:
    envs = [make_environment({"kind": "constant", "c": 2}),
            make_environment({"kind": "step", "M": 2}),
            make_environment({"kind": "periodic", "ell": 5, "M": 2})]
    envs += [_iid(0.3, 2, s) for s in (1, 2, 3)]
    worst = 0.0
    for env in envs:
        ev = psi_extremal(env, (-200, 200))
        if mutate_beta and env.kind == "iid":
            _corrupt_beta(ev, 17)
        for kappa in (1.0, 0.0, 0.5):
            worst = max(worst, eigen_residual(ev, kappa))
    return worst <= 1e-10, f"max residual {worst:.2e}"


def check_bracket_bounds(samples: int = 2000) -> tuple[bool, str]:
    rng = np.random.default_rng(20240601)
    bad = 0
    for _ in range(samples):
        p = float(rng.uniform(0.05, 0.95))
        M = float(rng.choice([0.5, 1.0, 2.0, 5.0]))
        env = _iid(p, M, int(rng.integers(1 << 30)))
        i = int(rng.integers(-1000, 1000))
        g = gamma_of(env.lam)
        for br in (beta_at(env, i), alpha_at(env, i)):
            if not (br.converged and br.width <= 1e-12 and br.lo >= g - 1e-14 and br.hi <= 1 + 1e-14):
                bad += 1
    step = make_environment({"kind": "step", "M": 2})
    ends = (abs(beta_at(step, -5).mid - 1.0) <= 1e-12
            and abs(alpha_at(step, 5).mid - gamma_of(4.0)) <= 1e-12)
    return bad == 0 and ends, f"{bad} bad brackets in {2 * samples}; endpoint tails exact={ends}"


def check_step_closed_forms() -> tuple[bool, str]:
    env = make_environment({"kind": "step", "M": 2})
    ev = psi_extremal(env, (-10, 10))
    cf = step_closed_forms(2.0)
    k = ev.sites
    err = max(np.abs(np.exp(ev.log_psi_plus) - cf.psi_plus(k)).max() / cf.psi_plus(k).max(),
              np.abs(np.exp(ev.log_psi_minus) - cf.psi_minus(k)).max() / cf.psi_minus(k).max())
    v2 = abs(cf.v_M - math.sqrt(3) / 2)
    small = step_closed_forms(1e-4).v_M / math.sqrt(1e-4)
    ok = err <= 1e-10 and v2 <= 1e-12 and 0.9 <= small <= 1.1
    return ok, f"psi err {err:.1e}; |v_2 - sqrt3/2| = {v2:.1e}; v_M/sqrt(M) at 1e-4 = {small:.5f}"


def check_green_identity() -> tuple[bool, str]:
    from .oracle import green_auto
    from .speed import s_closed_form

    worst = 0.0
    ok = True
    for seed in range(5):
        env = _iid(0.5, 2, 100 + seed)
        sc = s_closed_form(env)
        g = green_auto(env, 0, 0)
        mono = bool(np.all(np.diff(g.partial) >= 0))
        below = g.partial[-1] <= sc.value + sc.error + 1e-12
        gap = sc.value - g.partial[-1]
        worst = max(worst, abs(gap))
        ok &= mono and below and abs(gap) < 1e-4
    return ok, f"max |S_closed - Green partial| {worst:.1e}"


def check_exact_counts() -> tuple[bool, str]:
    from .oracle import annealed_moment_exact, count_excursions, series_moment

    t = count_excursions(16)
    central = all(t.c(2 * n, 0, 0) == math.comb(2 * n, n) for n in range(9))
    small = t.c(1, 1, 1) == 1 and t.c(3, 1, 1) == 6 and t.c(3, 1, 3) == 1
    p, M = Fraction(1, 3), 2
    annealed = all(series_moment(t, n, p, M) == annealed_moment_exact(p, M, n) for n in range(9))
    return central and small and annealed, f"central={central} small={small} annealed={annealed}"


def check_bernoulli_limits() -> tuple[bool, str]:
    from .speed import annealed_speed, bernoulli_limits

    lim0, c1 = bernoulli_limits(2.0)
    v0 = annealed_speed(NuSpec.bernoulli(1e-3, 2.0), 20000, 11).v
    v1 = annealed_speed(NuSpec.bernoulli(0.99, 2.0), 20000, 12).v
    ok = 0.8 * lim0 < v0 <= lim0 and abs(v1 / (c1 * 0.01) - 1) <= 0.25
    return ok, f"v(1e-3)={v0:.4f} (limit {lim0:.4f}); v(0.99)={v1:.5f} vs {c1 * 0.01:.5f}"


def check_periodic() -> tuple[bool, str]:
    from .periodic import (concentration_mass, entropy_rate, periodic_limits,
                           periodic_measure)

    sol = periodic_measure(10, 2.0)
    zgap = abs(sol.Z - sol.Z_direct) / sol.Z_direct
    theta200 = periodic_measure(200, 2.0).theta
    tgap = abs(theta200 - periodic_limits(2.0)[0])
    egap = max(abs(entropy_rate(l, M) - math.log(periodic_measure(l, M).lambda_ell))
               for l, M in ((5, 1.0), (8, 2.0), (12, 3.0)))
    mass = concentration_mass(200, 2.0, 0.1).mass
    ok = sol.residual <= 1e-12 and zgap <= 1e-10 and tgap < 1e-3 and egap <= 1e-10 and mass >= 0.9
    return ok, (f"residual {sol.residual:.1e}; Z gap {zgap:.1e}; theta gap {tgap:.1e}; "
                f"entropy gap {egap:.1e}; mass {mass:.4f}")


def check_lambda() -> tuple[bool, str]:
    from .oracle import estimate_lambda

    parts = []
    ok = True
    for spec, n in (({"kind": "constant", "c": 0}, 60), ({"kind": "constant", "c": 2}, 60),
                    ({"kind": "single_loop", "M": 2}, 60)):
        est = estimate_lambda(make_environment(spec), 0, n)
        ok &= est.rel_gap() <= 0.05 and est.monotone_tail(20)
        parts.append(f"{spec['kind']}:{est.last:.3f}/{est.target:.3f}")
    return ok, " ".join(parts)


CHECKS: list[tuple[str, Callable[..., tuple[bool, str]]]] = [
    ("eigen residuals", check_eigen_residuals),
    ("bracket bounds", check_bracket_bounds),
    ("step closed forms", check_step_closed_forms),
    ("green identity", check_green_identity),
    ("exact counts", check_exact_counts),
    ("bernoulli limits", check_bernoulli_limits),
    ("periodic reduced graph", check_periodic),
    ("lambda estimation", check_lambda),
]


def run_selfcheck(mutate_beta: bool = False, out: TextIO = sys.stdout) -> bool:
    all_ok = True
    t_all = time.perf_counter()
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            if fn is check_eigen_residuals:
                ok, detail = fn(mutate_beta=mutate_beta)
            else:
                ok, detail = fn()
        except Exception as exc:  # report and keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        all_ok &= ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<24} {detail}  ({time.perf_counter() - t0:.1f}s)",
              file=out)
    print(f"{'PASS' if all_ok else 'FAIL'}  selfcheck total {time.perf_counter() - t_all:.1f}s",
          file=out)
    return all_ok
