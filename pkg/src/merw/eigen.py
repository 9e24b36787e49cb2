"""Continued-fraction brackets for alpha/beta and the extremal eigenvectors.

``beta_i = g_{w_i}(beta_{i-1})`` and ``alpha_i = g_{w_i}(alpha_{i+1})`` with
``g_s(x) = 1/(lam - s - x)``.  Every ``g_s`` is increasing and maps
``[gamma, 1]`` into itself when ``s <= M`` and ``lam = 2 + M``, so pushing the
two endpoints ``gamma`` and ``1`` through a finite composition gives a
certified enclosure of the infinite one.

Eigenvectors are kept as natural logs normalised at the origin:

    log psi+_i = sum_{k=i}^{-1} log beta_k        (i < 0)
               = -sum_{k=0}^{i-1} log beta_k      (i > 0)
    log psi-_i = sum_{k=1}^{i} log alpha_k        (i > 0)
               = -sum_{k=i+1}^{0} log alpha_k     (i < 0)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .env import LoopEnvironment, gamma_of
from .errors import ModelError, NonConvergenceError

__all__ = [
    "Bracket",
    "EigenVector",
    "StepClosedForms",
    "g_map",
    "g_M_iterate_closed",
    "tail_fixed_point",
    "beta_at",
    "alpha_at",
    "psi_extremal",
    "psi_mixture_ratio",
    "log_psi_mixture",
    "eigen_residual",
    "step_closed_forms",
]

DEFAULT_TOL = 1e-12
DEPTH_CAP = 100_000
_START_DEPTH = 16


def g_map(s: float, x: float, lam: float) -> float:
    """``1 / (lam - s - x)``; raises on the pole or beyond it."""
    den = lam - s - x
    if not den > 0:
        raise ModelError(f"g_map outside its domain: lam - s - x = {den!r}")
    return 1.0 / den


def g_M_iterate_closed(u0: float, n: int) -> float:
    """``n``-fold iterate of ``x -> 1/(2 - x)`` (``g_M`` with ``lam = M + 2``)."""
    if not u0 < 1:
        raise ValueError("u0 must be < 1")
    if n == 0:
        return float(u0)
    return 1.0 - 1.0 / (1.0 / (1.0 - u0) + n)


def tail_fixed_point(c: float, lam: float) -> float:
    """Value of ``beta`` (or ``alpha``) deep inside a constant tail of weight ``c``.

    Smaller root of ``x^2 - (lam - c) x + 1``; equals ``gamma`` for ``c = 0``
    and ``1`` for ``c = lam - 2``.
    """
    a = lam - c
    disc = a * a - 4.0
    if disc < 0:
        if disc > -1e-12:
            disc = 0.0
        else:
            raise ModelError(f"tail weight {c} exceeds lam - 2 = {lam - 2}")
    return (a - math.sqrt(disc)) / 2.0


@dataclass(frozen=True)
class Bracket:
    lo: float
    hi: float
    converged: bool = True
    depth: int = 0

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo


def _check_env(env: LoopEnvironment) -> None:
    if not env.supports_brackets:
        raise ModelError(f"alpha/beta brackets are not defined for kind {env.kind!r} "
                         "(lam is not 2 + M)")


def _push(ws, M: float, lo: float, hi: float) -> tuple[float, float]:
    # 2 + (M - w) keeps lam - w exactly 2 on maximal sites, so 1 stays fixed
    for w in ws:
        a = 2.0 + (M - w)
        lo = 1.0 / (a - lo)
        hi = 1.0 / (a - hi)
    return lo, hi


def _bracket(env: LoopEnvironment, i: int, tol: float, depth_cap: int,
             side: str) -> Bracket:
    _check_env(env)
    if tol <= 0:
        raise ValueError("tol must be positive")
    M, lam = env.ceiling, env.lam
    if side == "beta":
        tail = env.left_tail(i)
        reach = None if tail is None else i - tail[0]
        ws_of = lambda d: env.weights(i - d + 1, i)  # noqa: E731  innermost first
    else:
        tail = env.right_tail(i)
        reach = None if tail is None else tail[0] - i
        ws_of = lambda d: env.weights(i, i + d - 1)[::-1]  # noqa: E731

    if reach is not None and reach <= depth_cap:
        x = tail_fixed_point(tail[1], lam)
        lo, hi = _push(ws_of(reach).tolist(), M, x, x)
        return Bracket(min(lo, hi), max(lo, hi), True, reach)

    gam = gamma_of(lam)
    d = _START_DEPTH
    while True:
        lo, hi = _push(ws_of(d).tolist(), M, gam, 1.0)
        lo, hi = min(lo, hi), max(lo, hi)
        if hi - lo <= tol:
            return Bracket(lo, hi, True, d)
        if d >= depth_cap:
            return Bracket(lo, hi, False, d)
        d = min(2 * d, depth_cap)


def beta_at(env: LoopEnvironment, i: int, tol: float = DEFAULT_TOL,
            depth_cap: int = DEPTH_CAP) -> Bracket:
    """Enclosure of ``beta_i`` (excursion weight from the left half-line).

    A constant left tail is started from its exact fixed point; otherwise
    the composition depth doubles until the bracket is narrower than ``tol``
    or ``depth_cap`` is reached (then ``converged`` is False).
    """
    return _bracket(env, i, tol, depth_cap, "beta")


def alpha_at(env: LoopEnvironment, i: int, tol: float = DEFAULT_TOL,
             depth_cap: int = DEPTH_CAP) -> Bracket:
    """Mirror image of :func:`beta_at`, composing toward ``+inf``."""
    return _bracket(env, i, tol, depth_cap, "alpha")


# ---------------------------------------------------------------------------
# eigenvectors
# ---------------------------------------------------------------------------


@dataclass
class EigenVector:
    """Extremal eigenvectors on the site window ``[lo, hi]`` (always contains 0).

    ``beta_lo/hi[k]`` bracket ``beta_{lo - 1 + k}`` and ``alpha_lo/hi[k]``
    bracket ``alpha_{lo + k}``; both arrays have ``n + 1`` entries so that
    every kernel entry inside the window is available.
    """

    lam: float
    lo: int
    hi: int
    weights: np.ndarray
    log_psi_plus: np.ndarray
    log_psi_minus: np.ndarray
    beta_lo: np.ndarray
    beta_hi: np.ndarray
    alpha_lo: np.ndarray
    alpha_hi: np.ndarray
    converged: bool = True
    kind: str = ""
    kappa: float = 1.0
    tol: float = DEFAULT_TOL
    meta: dict = field(default_factory=dict)

    @property
    def window(self) -> tuple[int, int]:
        return (self.lo, self.hi)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def __len__(self) -> int:
        return self.hi - self.lo + 1

    def index(self, i: int) -> int:
        if not self.lo <= i <= self.hi:
            raise IndexError(f"site {i} outside window [{self.lo}, {self.hi}]")
        return i - self.lo

    def beta(self, i: int) -> Bracket:
        k = i - self.lo + 1
        return Bracket(float(self.beta_lo[k]), float(self.beta_hi[k]))

    def alpha(self, i: int) -> Bracket:
        k = i - self.lo
        return Bracket(float(self.alpha_lo[k]), float(self.alpha_hi[k]))

    def max_half_width(self) -> float:
        w = np.concatenate([self.beta_hi - self.beta_lo, self.alpha_hi - self.alpha_lo])
        w = w[np.isfinite(w)]
        return float(w.max() / 2) if w.size else 0.0


def _sweep(ws: np.ndarray, M: float, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    out_lo = np.empty(ws.size + 1)
    out_hi = np.empty(ws.size + 1)
    out_lo[0], out_hi[0] = lo, hi
    for k, w in enumerate(ws.tolist(), start=1):
        a = 2.0 + (M - w)
        lo = 1.0 / (a - lo)
        hi = 1.0 / (a - hi)
        out_lo[k], out_hi[k] = lo, hi
    return out_lo, out_hi


def psi_extremal(env: LoopEnvironment, window: tuple[int, int], tol: float = DEFAULT_TOL,
                 *, depth_cap: int = DEPTH_CAP, strict: bool = True,
                 kappa: float = 1.0) -> EigenVector:
    """``log psi+`` and ``log psi-`` on the hull of ``window`` and the origin.

    Brackets are seeded once at each edge of the window and carried across
    it by the one-step recurrences; since each ``g_s`` is a contraction on
    ``[gamma, 1]`` the widths never grow along the sweep.

    The periodic kind is handled by its closed form, for which both
    extremal vectors coincide; brackets are then NaN.
    """
    a, b = int(window[0]), int(window[1])
    if a > b:
        raise ModelError(f"empty window [{a}, {b}]")
    lo, hi = min(a, 0), max(b, 0)
    n = hi - lo + 1
    ws = env.weights(lo, hi)

    if env.kind == "periodic":
        from .periodic import periodized_log_psi

        shift = getattr(env, "offset", 0)
        sites = np.arange(lo, hi + 1) + shift
        lp = (periodized_log_psi(env.ell, env.theta, sites)
              - periodized_log_psi(env.ell, env.theta, np.array([shift]))[0])
        nan = np.full(n + 1, np.nan)
        return EigenVector(env.lam, lo, hi, ws, lp, lp.copy(), nan, nan.copy(),
                           nan.copy(), nan.copy(), True, env.kind, kappa, tol)
    _check_env(env)

    M = env.ceiling
    bs = beta_at(env, lo - 1, tol, depth_cap)
    ss = alpha_at(env, hi + 1, tol, depth_cap)
    converged = bs.converged and ss.converged
    if strict and not converged:
        raise NonConvergenceError(
            f"bracket did not reach tol={tol:g} within depth {depth_cap} at the window "
            f"edge (widths {bs.width:.2e}, {ss.width:.2e}); environment is near-critical")

    # beta on [lo-1, hi], alpha on [lo, hi+1]
    b_lo, b_hi = _sweep(ws, M, bs.lo, bs.hi)
    r_lo, r_hi = _sweep(ws[::-1], M, ss.lo, ss.hi)
    a_lo, a_hi = r_lo[::-1].copy(), r_hi[::-1].copy()

    log_b = np.log(0.5 * (b_lo + b_hi))   # log beta_{lo-1 .. hi}
    log_a = np.log(0.5 * (a_lo + a_hi))   # log alpha_{lo .. hi+1}
    z = -lo                                # index of site 0 in window arrays

    # C(i) = sum_{k=lo-1}^{i-1} log beta_k, log psi+_i = C(0) - C(i)
    C = np.cumsum(log_b[:n])
    log_plus = C[z] - C
    # D(i) = sum_{k=lo}^{i} log alpha_k, log psi-_i = D(i) - D(0)
    D = np.cumsum(log_a[:n])
    log_minus = D - D[z]
    log_plus[z] = 0.0
    log_minus[z] = 0.0
    return EigenVector(env.lam, lo, hi, ws, log_plus, log_minus, b_lo, b_hi, a_lo, a_hi,
                       converged, env.kind, kappa, tol)


def _log_mix(lp, lm, kappa: float):
    if kappa >= 1.0:
        return np.asarray(lp, dtype=float)
    if kappa <= 0.0:
        return np.asarray(lm, dtype=float)
    return np.logaddexp(math.log(kappa) + np.asarray(lp), math.log1p(-kappa) + np.asarray(lm))


def log_psi_mixture(ev: EigenVector, kappa: Optional[float] = None) -> np.ndarray:
    """``log(kappa psi+ + (1 - kappa) psi-)`` on the window (log-sum-exp)."""
    k = ev.kappa if kappa is None else kappa
    if not 0.0 <= k <= 1.0:
        raise ValueError("kappa must lie in [0, 1]")
    return _log_mix(ev.log_psi_plus, ev.log_psi_minus, k)


def psi_mixture_ratio(ev: EigenVector, kappa: float, i: int, j: int) -> float:
    """``psi^kappa_j / psi^kappa_i`` for neighbouring (or equal) sites."""
    if abs(i - j) > 1:
        raise ValueError("sites must be adjacent")
    if not 0.0 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [0, 1]")
    ki, kj = ev.index(i), ev.index(j)
    lp, lm = ev.log_psi_plus, ev.log_psi_minus
    mi = _log_mix(lp[ki], lm[ki], kappa)
    mj = _log_mix(lp[kj], lm[kj], kappa)
    return float(math.exp(mj - mi))


def eigen_residual(ev: EigenVector, kappa: float = 1.0) -> float:
    """Max over interior sites of ``|psi_{i+1} + w_i psi_i + psi_{i-1} - lam psi_i| / (lam psi_i)``."""
    if len(ev) < 3:
        return 0.0
    lpsi = _log_mix(ev.log_psi_plus, ev.log_psi_minus, kappa)
    up = np.exp(lpsi[2:] - lpsi[1:-1])
    down = np.exp(lpsi[:-2] - lpsi[1:-1])
    res = np.abs(up + ev.weights[1:-1] + down - ev.lam) / ev.lam
    return float(res.max())


# ---------------------------------------------------------------------------
# step environment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StepClosedForms:
    """Closed forms for ``w = M`` on ``(-inf, 0]`` and ``0`` on ``[1, inf)``."""

    M: float
    lam: float
    gamma: float
    v_M: float

    def psi_plus(self, k):
        k = np.asarray(k, dtype=float)
        g = self.gamma
        right = (g / (1 + g)) * g ** (-k) + g ** k / (1 + g)
        return np.where(k <= 0, 1.0, right)

    def psi_minus(self, k):
        k = np.asarray(k, dtype=float)
        g = self.gamma
        return np.where(k <= 0, 1.0 - (1.0 - g) * k, g ** np.maximum(k, 0))

    def log_psi_plus(self, k):
        k = np.asarray(k, dtype=float)
        g = self.gamma
        lg = math.log(g)
        # log of g/(1+g) g^-k + g^k/(1+g), factored around the dominant term
        right = -k * lg + np.log(g / (1 + g) + np.exp(2 * k * lg) / (1 + g))
        return np.where(k <= 0, 0.0, right)

    def log_psi_minus(self, k):
        k = np.asarray(k, dtype=float)
        return np.where(k <= 0, np.log(1.0 - (1.0 - self.gamma) * np.minimum(k, 0)),
                        np.maximum(k, 0) * math.log(self.gamma))


def step_closed_forms(M: float) -> StepClosedForms:
    """``gamma``, the speed ``v_M = (1/gamma - gamma)/lam`` and both eigenvectors."""
    if M <= 0:
        raise ValueError("need M > 0")
    lam = 2.0 + M
    # 1/gamma - gamma = sqrt(lam^2 - 4) = sqrt(M (M + 4)), written to avoid cancellation
    root = math.sqrt(M * (M + 4.0))
    gam = 2.0 / (lam + root)
    return StepClosedForms(M=float(M), lam=lam, gamma=gam, v_M=root / lam)
