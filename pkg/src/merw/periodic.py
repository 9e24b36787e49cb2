"""Periodic loop environments via the reduced graph Z/ellZ with one M-loop.

The eigenvalue is ``lam = 2 cosh(theta)`` with ``theta`` the positive root of
``2 tanh(ell*theta/2) sinh(theta) = M``; the eigenvector on the reduced graph
is ``psi(n) = cosh((n - ell/2) theta)`` for ``0 <= n < ell`` (loop at 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import bisect

__all__ = [
    "PeriodicSolution",
    "ConcentrationResult",
    "solve_theta",
    "theta_residual",
    "periodic_measure",
    "periodic_limits",
    "concentration_mass",
    "reduced_adjacency",
    "merw_kernel_matrix",
    "entropy_rate_of",
    "entropy_rate",
    "srw_entropy_rate",
    "periodized_log_psi",
    "periodic_recurrence_check",
    "occupation_tv",
]


def theta_residual(theta: float, ell: int, M: float) -> float:
    return 2.0 * math.tanh(ell * theta / 2.0) * math.sinh(theta) - M


def solve_theta(ell: int, M: float, tol: float = 1e-12) -> float:
    """Positive root of ``2 tanh(ell*theta/2) sinh(theta) = M`` by bisection.

    The left side increases from 0, and is below ``2 sinh(theta)``, so the
    root lies in ``(0, asinh(M/2) + 1)``.
    """
    if ell < 2 or M <= 0:
        raise ValueError("need ell >= 2 and M > 0")
    lo, hi = 1e-12, math.asinh(M / 2.0) + 1.0
    f = lambda t: theta_residual(t, ell, M)  # noqa: E731
    if not (f(lo) < 0 < f(hi)):
        raise RuntimeError(f"theta bracket [{lo}, {hi}] does not straddle the root")
    theta = bisect(f, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=400)
    res = abs(f(theta))
    if res > tol:
        raise RuntimeError(f"theta residual {res:.3e} exceeds {tol:.1e}")
    return theta


@dataclass
class PeriodicSolution:
    ell: int
    M: float
    theta: float
    lambda_ell: float
    psi: np.ndarray
    pi: np.ndarray
    Z: float                  # inf once it leaves float range; see log_Z
    Z_direct: float = field(repr=False)
    log_Z: float = field(default=math.nan, repr=False)

    @property
    def residual(self) -> float:
        return abs(theta_residual(self.theta, self.ell, self.M))


def periodic_measure(ell: int, M: float) -> PeriodicSolution:
    """Eigenvector, reversible probability and normaliser on the reduced graph.

    ``Z = sum psi^2 = ell/2 + sinh(ell theta) cosh(theta) / (2 sinh(theta))``.
    When ``psi`` would overflow it is stored divided by ``cosh(ell theta / 2)``
    and ``Z``, ``Z_direct`` become ``inf``; ``pi`` and ``log_Z`` stay exact.
    """
    theta = solve_theta(ell, M)
    n = np.arange(ell)
    log_top = float(_log_cosh(ell * theta / 2.0))
    scaled = np.exp(_log_cosh((n - ell / 2.0) * theta) - log_top)
    Zs = math.fsum(scaled * scaled)
    pi = scaled * scaled / Zs
    # ell/2 + sinh(ell theta) cosh(theta) / (2 sinh(theta)), in units of cosh(ell theta/2)^2
    lt = ell * theta
    closed_s = (ell / 2.0 * math.exp(-2.0 * log_top)
                + 2.0 * math.tanh(lt / 2.0) * math.cosh(theta) / (2.0 * math.sinh(theta)))
    log_Z = math.log(closed_s) + 2.0 * log_top
    if 2.0 * log_top < 700.0:
        f = math.exp(2.0 * log_top)
        psi = scaled * math.exp(log_top)
        Z = ell / 2.0 + math.sinh(lt) * math.cosh(theta) / (2.0 * math.sinh(theta))
        Z_direct = Zs * f
    else:
        psi, Z, Z_direct = scaled, math.inf, math.inf
    return PeriodicSolution(ell=ell, M=float(M), theta=theta,
                            lambda_ell=2.0 * math.cosh(theta), psi=psi, pi=pi,
                            Z=Z, Z_direct=Z_direct, log_Z=log_Z)


def periodic_limits(M: float) -> tuple[float, float]:
    """``(theta*, lam*)`` as ``ell -> infinity``: ``ln((M + sqrt(M^2+4))/2)`` and
    ``sqrt(M^2 + 4)``."""
    if M <= 0:
        raise ValueError("need M > 0")
    root = math.sqrt(M * M + 4.0)
    return math.log((M + root) / 2.0), root


@dataclass
class ConcentrationResult:
    radius: int
    mass: float
    degenerate: bool


def concentration_mass(ell: int, M: float, eps: float) -> ConcentrationResult:
    """Stationary mass of the sites within distance ``d`` of the loop, where
    ``d`` is the smallest integer ``>= ln(1/(lam* eps)) / (2 theta*)``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    theta_star, lam_star = periodic_limits(M)
    d = max(0, math.ceil(math.log(1.0 / (lam_star * eps)) / (2.0 * theta_star)))
    sol = periodic_measure(ell, M)
    if 2 * d + 1 >= ell:
        return ConcentrationResult(radius=d, mass=1.0, degenerate=True)
    sites = np.arange(-d, d + 1) % ell
    return ConcentrationResult(radius=d, mass=float(sol.pi[sites].sum()), degenerate=False)


def reduced_adjacency(ell: int, M: float) -> np.ndarray:
    """Adjacency of Z/ellZ plus one M-loop at 0 (for ell = 2 the two
    neighbour edges of each vertex coincide and give weight 2)."""
    A = np.zeros((ell, ell))
    for i in range(ell):
        A[i, (i + 1) % ell] += 1.0
        A[i, (i - 1) % ell] += 1.0
    A[0, 0] += M
    return A


def merw_kernel_matrix(A: np.ndarray, psi: np.ndarray, lam: float) -> np.ndarray:
    """``q_ij = a_ij psi_j / (lam psi_i)``."""
    return A * psi[None, :] / (lam * psi[:, None])


def entropy_rate_of(A: np.ndarray, q: np.ndarray, pi: np.ndarray) -> float:
    """``-sum_ij pi_i q_ij log(q_ij / a_ij)`` with ``0 log 0 = 0``."""
    mask = q > 0
    ratio = np.ones_like(q)
    ratio[mask] = q[mask] / A[mask]
    return float(-np.sum((pi[:, None] * q)[mask] * np.log(ratio[mask])))


def entropy_rate(ell: int, M: float) -> float:
    """Entropy rate of the reduced-graph MERW under its reversible law."""
    sol = periodic_measure(ell, M)
    A = reduced_adjacency(ell, M)
    q = merw_kernel_matrix(A, sol.psi, sol.lambda_ell)
    return entropy_rate_of(A, q, sol.pi)


def srw_entropy_rate(ell: int, M: float) -> float:
    """Entropy rate of the standard (degree-proportional) walk on the same graph."""
    A = reduced_adjacency(ell, M)
    deg = A.sum(axis=1)
    q = A / deg[:, None]
    pi = deg / deg.sum()
    return entropy_rate_of(A, q, pi)


def periodized_log_psi(ell: int, theta: float, sites: np.ndarray) -> np.ndarray:
    """``log psi`` extended periodically to Z, normalised so ``log psi(0) = 0``."""
    n = np.mod(sites, ell)
    return (_log_cosh((n - ell / 2.0) * theta) - _log_cosh(ell * theta / 2.0))


def _log_cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x)) - math.log(2.0)


def periodic_recurrence_check(ell: int, M: float, n: int, replicas: int, seed: int):
    """Speed estimate of the MERW in the ``ell``-periodic environment (zero
    speed expected).  Returns the :class:`merw.sim.SpeedEstimate`."""
    from .env import PeriodicEnvironment
    from .sim import estimate_speed

    env = PeriodicEnvironment(ell, M)
    return estimate_speed(env, None, 1.0, 0, n, replicas, seed)


def occupation_tv(ell: int, M: float, n: int, seed: int) -> float:
    """Total-variation distance between the empirical occupation of the sites
    mod ``ell`` along one ``n``-step trajectory from 0 and ``pi``."""
    from .env import PeriodicEnvironment
    from .sim import simulate

    env = PeriodicEnvironment(ell, M)
    traj = simulate(env, None, 1.0, 0, n, seed)
    freq = np.bincount(np.mod(traj.positions, ell), minlength=ell) / traj.positions.size
    return 0.5 * float(np.abs(freq - periodic_measure(ell, M).pi).sum())
