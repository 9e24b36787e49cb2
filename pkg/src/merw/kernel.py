"""MERW transition kernels built from eigenvector data.

``p(i, i+1) = psi_{i+1} / (lam psi_i)``, ``p(i, i) = w_i / lam`` and
``p(i, i-1) = psi_{i-1} / (lam psi_i)`` with ``psi = kappa psi+ + (1-kappa) psi-``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .eigen import EigenVector, log_psi_mixture
from .env import LoopEnvironment
from .errors import ModelError

__all__ = [
    "MerwKernel",
    "KernelReport",
    "merw_kernel",
    "validate_kernel",
    "hitting_probability",
]


@dataclass
class MerwKernel:
    """Transition probabilities on the sites ``lo..hi``.

    ``p_stay`` is ``w_i / lam`` exactly; ``p_left`` and ``p_right`` are
    rescaled so each row sums to one.  ``row_sum_pre`` keeps the row sums
    before that rescaling as an audit of eigenvector error.
    """

    lo: int
    hi: int
    lam: float
    kappa: float
    p_left: np.ndarray
    p_stay: np.ndarray
    p_right: np.ndarray
    row_sum_pre: np.ndarray
    env: Optional[LoopEnvironment] = None

    @property
    def window(self) -> tuple[int, int]:
        return (self.lo, self.hi)

    @property
    def sites(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    def row(self, i: int) -> tuple[float, float, float]:
        k = i - self.lo
        if not 0 <= k <= self.hi - self.lo:
            raise IndexError(f"site {i} outside kernel window [{self.lo}, {self.hi}]")
        return float(self.p_left[k]), float(self.p_stay[k]), float(self.p_right[k])

    def rho(self) -> np.ndarray:
        """``p_left / p_right`` at every site."""
        return self.p_left / self.p_right


def _ratios(ev: EigenVector, kappa: float, a: int, b: int) -> tuple[np.ndarray, np.ndarray]:
    """``psi_{i+1}/psi_i`` and ``psi_{i-1}/psi_i`` for ``i`` in ``[a, b]``."""
    i0, i1 = a - ev.lo, b - ev.lo
    have_brackets = np.isfinite(ev.beta_lo).all() and np.isfinite(ev.alpha_lo).all()
    if kappa == 1.0 and have_brackets:
        beta = 0.5 * (ev.beta_lo + ev.beta_hi)         # beta[k] ~ site lo-1+k
        up = 1.0 / beta[i0 + 1:i1 + 2]
        down = beta[i0:i1 + 1]
        return up, down
    if kappa == 0.0 and have_brackets:
        alpha = 0.5 * (ev.alpha_lo + ev.alpha_hi)      # alpha[k] ~ site lo+k
        up = alpha[i0 + 1:i1 + 2]
        down = 1.0 / alpha[i0:i1 + 1]
        return up, down
    lpsi = log_psi_mixture(ev, kappa)
    up = np.exp(lpsi[i0 + 1:i1 + 2] - lpsi[i0:i1 + 1])
    down = np.exp(lpsi[i0 - 1:i1] - lpsi[i0:i1 + 1])
    return up, down


def merw_kernel(env: LoopEnvironment, ev: EigenVector, kappa: float = 1.0,
                window: Optional[tuple[int, int]] = None) -> MerwKernel:
    """Kernel of ``psi^kappa`` on ``window`` (default: ``ev``'s window minus its edges)."""
    if not 0.0 <= kappa <= 1.0:
        raise ModelError("kappa must lie in [0, 1]")
    a, b = (ev.lo + 1, ev.hi - 1) if window is None else (int(window[0]), int(window[1]))
    if a > b:
        raise ModelError(f"empty kernel window [{a}, {b}]")
    if a <= ev.lo or b >= ev.hi:
        raise ModelError(f"kernel window [{a}, {b}] must lie strictly inside the "
                         f"eigenvector window [{ev.lo}, {ev.hi}]")
    lam = ev.lam
    up, down = _ratios(ev, float(kappa), a, b)
    p_right = up / lam
    p_left = down / lam
    p_stay = ev.weights[a - ev.lo:b - ev.lo + 1] / lam
    pre = p_left + p_stay + p_right
    move = p_left + p_right
    scale = (1.0 - p_stay) / move
    return MerwKernel(a, b, lam, float(kappa), p_left * scale, p_stay.copy(),
                      p_right * scale, pre, env)


@dataclass
class KernelReport:
    row_sum_dev: float
    row_sum_pre_dev: float
    harmonic_residual: float
    harmonic_residual_rel: float
    h_max: float
    h_bounded: Optional[bool]
    superharmonic_excess: float
    bracket_half_width: float

    def ok(self, tol: float = 1e-10) -> bool:
        return (self.row_sum_dev <= 1e-12 and self.harmonic_residual_rel <= tol
                and self.superharmonic_excess <= tol and self.h_bounded is not False)


def validate_kernel(k: MerwKernel, ev: EigenVector) -> KernelReport:
    """Row sums, harmonicity of ``psi+/psi^kappa`` under ``k``, the ``1/kappa``
    bound on it, and superharmonicity of ``psi-/psi+`` under the extremal
    kernel, over the interior of ``k``'s window."""
    row = k.p_left + k.p_stay + k.p_right
    i0, i1 = k.lo - ev.lo, k.hi - ev.lo
    lmix = log_psi_mixture(ev, k.kappa)
    lp, lm = ev.log_psi_plus, ev.log_psi_minus

    # log h on [lo-1, hi+1]
    lh = (lp - lmix)[i0 - 1:i1 + 2]
    ratio = (k.p_right * np.exp(lh[2:] - lh[1:-1]) + k.p_stay
             + k.p_left * np.exp(lh[:-2] - lh[1:-1]))
    rel = np.abs(ratio - 1.0)
    h = np.exp(lh[1:-1])
    h_max = float(h.max())
    bounded = None if k.kappa == 0.0 else bool(h_max <= 1.0 / k.kappa * (1 + 1e-12))

    # psi-/psi+ under the kappa = 1 kernel, relative excess
    up_p = np.exp(lp[i0 + 1:i1 + 2] - lp[i0:i1 + 1]) / ev.lam
    dn_p = np.exp(lp[i0 - 1:i1] - lp[i0:i1 + 1]) / ev.lam
    st = ev.weights[i0:i1 + 1] / ev.lam
    lt = (lm - lp)[i0 - 1:i1 + 2]
    sup = (up_p * np.exp(lt[2:] - lt[1:-1]) + st
           + dn_p * np.exp(lt[:-2] - lt[1:-1])) - 1.0

    return KernelReport(
        row_sum_dev=float(np.abs(row - 1.0).max()),
        row_sum_pre_dev=float(np.abs(k.row_sum_pre - 1.0).max()),
        harmonic_residual=float((rel * h).max()),
        harmonic_residual_rel=float(rel.max()),
        h_max=h_max,
        h_bounded=bounded,
        superharmonic_excess=float(max(sup.max(), 0.0)),
        bracket_half_width=ev.max_half_width(),
    )


def hitting_probability(ev: EigenVector, kappa: float, k: int) -> float:
    """Probability that the ``kappa``-walk started at ``k`` escapes to ``+inf``:
    ``kappa psi+_k / (kappa psi+_k + (1 - kappa) psi-_k)``."""
    if not 0.0 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [0, 1]")
    if kappa == 1.0:
        return 1.0
    if kappa == 0.0:
        return 0.0
    j = ev.index(k)
    z = math.log(kappa) - math.log1p(-kappa) + ev.log_psi_plus[j] - ev.log_psi_minus[j]
    return float(expit(z))
