"""The occupation functional S and the asymptotic speed v.

Two quenched routes are provided for an environment ``w``:

* the Green value ``S_closed = lam / (lam - w_0 - beta_{-1} - alpha_1)``,
  which is ``sum_n a^(n)_{00} / lam^n``;
* the series ``S_series = lam beta_0 + lam sum_i beta_0 beta_{-1}^2 ... beta_{-i}^2``,
  the mean hitting time of 1 from 0.

They differ environment by environment but share the same mean under an iid
law, and ``v = 1 / E[S]``.  :func:`annealed_speed` estimates that mean from
``S_closed`` on independently sampled environments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .eigen import DEFAULT_TOL, DEPTH_CAP, alpha_at, beta_at, psi_extremal
from .env import LoopEnvironment, NuSpec, gamma_of
from .errors import ModelError, NonConvergenceError

__all__ = [
    "SClosed",
    "SeriesResult",
    "SpeedReport",
    "AnnealedSpeed",
    "s_closed_form",
    "green_closed_form",
    "s_series",
    "speed_report",
    "annealed_speed",
    "speed_curve",
    "bernoulli_limits",
]

Z95 = 1.959963984540054
_CHUNK = 4096
_START_DEPTH = 32


def _infinite(den: float, width: float) -> bool:
    return den < max(10.0 * width, 1e-12)


@dataclass
class SClosed:
    value: float              # inf when the denominator is numerically zero
    denominator: float
    error: float              # propagated from bracket half-widths
    infinite: bool
    converged: bool = True


def _green_denominator(env: LoopEnvironment, k: int, tol: float):
    b = beta_at(env, k - 1, tol)
    a = alpha_at(env, k + 1, tol)
    den = env.lam - env.weight(k) - b.mid - a.mid
    return den, b, a


def s_closed_form(env: LoopEnvironment, tol: float = DEFAULT_TOL, *, strict: bool = True) -> SClosed:
    """``lam / (lam - w_0 - beta_{-1} - alpha_1)`` from bracket midpoints."""
    den, b, a = _green_denominator(env, 0, tol)
    converged = b.converged and a.converged
    if strict and not converged:
        raise NonConvergenceError("alpha_1 or beta_{-1} bracket did not converge")
    width = b.width + a.width
    if _infinite(den, width):
        return SClosed(math.inf, den, math.inf, True, converged)
    lam = env.lam
    return SClosed(lam / den, den, lam * (width / 2) / (den * (den - width / 2)), False, converged)


def green_closed_form(env: LoopEnvironment, k: int, i: int, tol: float = DEFAULT_TOL) -> float:
    """``sum_n a^(n)_{k,i} / lam^n`` for the symmetric pair ``(k, i)``.

    Last-passage decomposition at ``k``: the Green value at ``k`` times the
    product ``alpha_{k+1} ... alpha_i`` (``= psi-_i / psi-_k``) for ``i >= k``.
    """
    if i < k:
        k, i = i, k
    den, b, a = _green_denominator(env, k, tol)
    if _infinite(den, b.width + a.width):
        return math.inf
    g = env.lam / den
    if i == k:
        return g
    ev = psi_extremal(env, (k, i), tol)
    return float(g * math.exp(ev.log_psi_minus[ev.index(i)] - ev.log_psi_minus[ev.index(k)]))


@dataclass
class SeriesResult:
    partial: np.ndarray       # partial[m] includes the terms i = 0..m
    terms: np.ndarray
    tail_estimate: float
    ratio: float              # geometric-mean term ratio over the last window
    converged: bool


def s_series(env: LoopEnvironment, N: int, tol: float = DEFAULT_TOL,
             ratio_window: int = 50) -> SeriesResult:
    """Partial sums of ``lam beta_0 (1 + sum_{i>=1} beta_{-1}^2 ... beta_{-i}^2)``.

    The tail is estimated as geometric with the mean ratio of the last
    ``ratio_window`` terms (infinite when that ratio reaches 1); this is an
    estimate for random environments, not a bound.
    """
    if N < 0:
        raise ValueError("N must be >= 0")
    ev = psi_extremal(env, (-N, 0), tol)
    beta = 0.5 * (ev.beta_lo + ev.beta_hi)          # sites -N-1 .. 0
    lb = np.log(beta)
    log_b0 = lb[-1]
    # log beta_{-1}, log beta_{-2}, ..., log beta_{-N}
    lb_neg = lb[-2:0:-1] if N > 0 else np.empty(0)
    log_terms = math.log(env.lam) + log_b0 + np.concatenate([[0.0], 2.0 * np.cumsum(lb_neg)])
    terms = np.exp(log_terms)
    partial = np.cumsum(terms)
    if N == 0:
        r = float(beta[-2] ** 2)
    else:
        w = min(ratio_window, N)
        r = float(math.exp(2.0 * lb_neg[-w:].mean()))
    tail = math.inf if r >= 1.0 else float(terms[-1] * r / (1.0 - r))
    conv = math.isfinite(tail) and tail <= max(tol, 1e-8) * partial[-1]
    return SeriesResult(partial, terms, tail, r, conv)


@dataclass
class SpeedReport:
    s_closed: float
    s_closed_error: float
    s_closed_infinite: bool
    s_series_partial: np.ndarray
    s_series_tail: float
    v: float
    methods: dict = field(default_factory=dict)
    discrepancy: Optional[float] = None

    def to_dict(self) -> dict:
        tail = self.s_series_tail
        return {
            "s_closed": None if self.s_closed_infinite else self.s_closed,
            "s_closed_infinite": self.s_closed_infinite,
            "s_closed_error": None if self.s_closed_infinite else self.s_closed_error,
            "s_series_last": float(self.s_series_partial[-1]),
            "s_series_terms": int(self.s_series_partial.size),
            "s_series_tail_estimate": tail if math.isfinite(tail) else None,
            "series_minus_closed": self.discrepancy,
            "v_if_S_were_mean": None if not math.isfinite(self.v) else self.v,
            "methods": self.methods,
        }


def speed_report(env: LoopEnvironment, N: int = 2000, tol: float = DEFAULT_TOL) -> SpeedReport:
    """Both quenched routes for one environment and their difference.

    ``v`` is ``1 / S_closed``; it is the speed only after averaging ``S``
    over an iid law, so a single environment's value is informational.
    """
    sc = s_closed_form(env, tol)
    ser = s_series(env, N, tol)
    total = ser.partial[-1] + (ser.tail_estimate if math.isfinite(ser.tail_estimate) else math.inf)
    disc = None
    if not sc.infinite and math.isfinite(total):
        disc = float(total - sc.value)
    v = 1.0 / sc.value if not sc.infinite else 0.0
    return SpeedReport(sc.value, sc.error, sc.infinite, ser.partial, ser.tail_estimate, v,
                       {"s_closed": "green value from alpha/beta brackets",
                        "s_series": f"hitting-time series, {N} terms, geometric tail estimate"},
                       disc)


# ---------------------------------------------------------------------------
# annealed speed
# ---------------------------------------------------------------------------


@dataclass
class AnnealedSpeed:
    v: float
    ci_half_width: float
    mean_S: float
    ci_S: float
    reps: int
    n_nonconverged: int
    nu: NuSpec
    seed: int
    method: str = "1/mean of lam/(lam - w_0 - beta_{-1} - alpha_1) over sampled environments"

    def to_dict(self) -> dict:
        return {"v": self.v, "ci": self.ci_half_width, "mean_S": self.mean_S,
                "ci_S": self.ci_S, "reps": self.reps, "n_nonconverged": self.n_nonconverged,
                "nu": self.nu.to_dict(), "seed": self.seed, "method": self.method}


def _compose_rows(W: np.ndarray, M: float, x0: float) -> np.ndarray:
    """Apply ``g_{W[:, 0]} o ... o g_{W[:, d-1]}`` to ``x0`` row-wise."""
    x = np.full(W.shape[0], x0)
    A = 2.0 + (M - W)
    for c in range(W.shape[1] - 1, -1, -1):
        x = 1.0 / (A[:, c] - x)
    return x


def _side_brackets(nu: NuSpec, rng: np.random.Generator, n: int, M: float, gam: float,
                   tol: float, depth_cap: int):
    W = nu.sample(rng, (n, _START_DEPTH))
    lo = _compose_rows(W, M, gam)
    hi = _compose_rows(W, M, 1.0)
    todo = np.nonzero(hi - lo > tol)[0]
    rows = {int(r): W[r] for r in todo}
    depth = _START_DEPTH
    while todo.size and depth < depth_cap:
        extra = min(depth, depth_cap - depth)
        more = nu.sample(rng, (todo.size, extra))
        Wt = np.stack([np.concatenate([rows[int(r)], more[k]]) for k, r in enumerate(todo)])
        depth += extra
        l2 = _compose_rows(Wt, M, gam)
        h2 = _compose_rows(Wt, M, 1.0)
        lo[todo], hi[todo] = l2, h2
        keep = h2 - l2 > tol
        rows = {int(r): Wt[k] for k, r in enumerate(todo) if keep[k]}
        todo = todo[keep]
    return np.minimum(lo, hi), np.maximum(lo, hi), todo.size


def annealed_speed(nu: NuSpec, reps: int, seed: int, tol: float = DEFAULT_TOL,
                   depth_cap: int = DEPTH_CAP, chunk: int = _CHUNK) -> AnnealedSpeed:
    """``v = 1 / E[S_closed]`` over ``reps`` independent environments.

    Only ``w_0``, ``beta_{-1}`` and ``alpha_1`` enter, so each environment
    is sampled one-sidedly to the depth its brackets need.  Chunk ``c`` of
    replicas draws from ``SeedSequence(seed, spawn_key=(2**21, c))``.
    The CI on ``v`` is the delta-method image of the CI on ``E[S]``.
    """
    nu.check()
    if reps < 30:
        raise ModelError("need at least 30 replicas")
    M = nu.ceiling
    lam = 2.0 + M
    gam = gamma_of(lam)
    S = np.empty(reps)
    bad = 0
    for c, a in enumerate(range(0, reps, chunk)):
        n = min(chunk, reps - a)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(1 << 21, c))))
        w0 = nu.sample(rng, n)
        bl, bh, nb = _side_brackets(nu, rng, n, M, gam, tol, depth_cap)
        al, ah, na = _side_brackets(nu, rng, n, M, gam, tol, depth_cap)
        bad += nb + na
        den = lam - w0 - 0.5 * (bl + bh) - 0.5 * (al + ah)
        width = (bh - bl) + (ah - al)
        inf = den < np.maximum(10.0 * width, 1e-12)
        if inf.any():
            r = int(np.nonzero(inf)[0][0])
            raise NonConvergenceError(
                f"numerically infinite S in replica {a + r}: w_0={w0[r]}, "
                f"beta_-1 in [{bl[r]}, {bh[r]}], alpha_1 in [{al[r]}, {ah[r]}]")
        S[a:a + n] = lam / den
    if bad > 0.001 * reps:
        raise NonConvergenceError(f"{bad} of {reps} replicas left non-converged brackets")
    mS = float(S.mean())
    ciS = float(Z95 * S.std(ddof=1) / math.sqrt(reps))
    v = 1.0 / mS
    return AnnealedSpeed(v, v * v * ciS, mS, ciS, reps, bad, nu, int(seed))


@dataclass
class SpeedCurve:
    M: float
    rows: list[AnnealedSpeed]

    @property
    def decreasing(self) -> bool:
        """Every consecutive drop exceeds the sum of the two CI half-widths."""
        return all(a.v - b.v > a.ci_half_width + b.ci_half_width
                   for a, b in zip(self.rows, self.rows[1:]))

    def table(self) -> list[dict]:
        return [{"p": r.nu.atoms[1][1], "M": self.M, "v": r.v, "ci": r.ci_half_width,
                 "reps": r.reps} for r in self.rows]


def speed_curve(M: float, p_grid: Sequence[float], reps: int, seed: int,
                tol: float = DEFAULT_TOL) -> SpeedCurve:
    """``p -> v_{p,M}`` on a grid; grid point ``k`` uses seed ``(seed, k)``."""
    if any(not 0 < p < 1 for p in p_grid):
        raise ModelError("p grid must lie in (0, 1)")
    rows = []
    for k, p in enumerate(p_grid):
        sub = int(np.random.SeedSequence(int(seed), spawn_key=(3 << 20, k)).generate_state(1)[0])
        rows.append(annealed_speed(NuSpec.bernoulli(p, M), reps, sub, tol))
    return SpeedCurve(float(M), rows)


def bernoulli_limits(M: float) -> tuple[float, float]:
    """``(lim_{p->0} v, lim_{p->1} v/(1-p))`` = ``(sqrt(1 - 4/(2+M)^2), 3/(2+M))``."""
    if M <= 0:
        raise ValueError("need M > 0")
    lam = 2.0 + M
    return math.sqrt(1.0 - 4.0 / (lam * lam)), 3.0 / lam
