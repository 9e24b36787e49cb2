"""Monte Carlo simulation of MERW trajectories.

Every step draws one uniform ``U`` and moves right if ``U < p(i, i+1)``,
stays if ``U < p(i, i+1) + p(i, i)`` and moves left otherwise.

Kernel entries come from :class:`SiteKernel`, which computes alpha/beta in
fixed aligned blocks of sites, each seeded by its own certified bracket.
The value at a site is therefore a function of the site alone, never of
how far the window happened to grow, so a replica simulated alone and the
same replica simulated inside a batch follow identical paths.

Replica ``j`` of master seed ``s`` draws its uniforms from
``SeedSequence(s, spawn_key=(j,))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .eigen import DEFAULT_TOL, DEPTH_CAP, EigenVector, alpha_at, beta_at
from .env import IIDEnvironment, LoopEnvironment, NuSpec
from .errors import ModelError, NonConvergenceError

__all__ = [
    "SiteKernel",
    "Trajectory",
    "CoupledRun",
    "SpeedEstimate",
    "DirectionEstimate",
    "BatchResult",
    "replica_rng",
    "run_batch",
    "simulate",
    "simulate_many",
    "simulate_coupled",
    "estimate_speed",
    "estimate_direction",
    "count_returns",
    "mean_returns",
    "annealed_trajectory_speed",
]

BLOCK = 1024
MIN_REPLICAS_FOR_CI = 30
Z95 = 1.959963984540054


def replica_rng(seed: int, j: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(j),))))


# ---------------------------------------------------------------------------
# site-local kernel
# ---------------------------------------------------------------------------


def _sweep_mid(ws: Sequence[float], M: float, lo: float, hi: float) -> tuple[np.ndarray, float]:
    out = np.empty(len(ws))
    width = hi - lo
    for k, w in enumerate(ws):
        a = 2.0 + (M - w)
        lo = 1.0 / (a - lo)
        hi = 1.0 / (a - hi)
        out[k] = 0.5 * (lo + hi)
        width = max(width, hi - lo)
    return out, width


class SiteKernel:
    """Lazily extended, block-aligned alpha/beta data for one environment.

    Arrays cover the sites ``[L, R]``; transition probabilities are
    available on ``[L + 1, R - 1]``.  The covered range only ever grows,
    by doubling the number of blocks on the side that ran short.
    """

    def __init__(self, env: LoopEnvironment, tol: float = DEFAULT_TOL,
                 depth_cap: int = DEPTH_CAP):
        if env.kind == "single_loop":
            raise ModelError("single_loop environments have no extremal eigenvectors")
        self.env = env
        self.tol = tol
        self.depth_cap = depth_cap
        self.lam = env.lam
        self.M = env.ceiling
        self.periodic = env.kind == "periodic"
        self.max_width = 0.0
        self._thr: dict[float, tuple[np.ndarray, np.ndarray]] = {}
        self.bL, self.bR = 0, 0            # blocks [bL, bR) are present
        self.w = np.empty(0)
        self.beta = np.empty(0)
        self.alpha = np.empty(0)
        self.D = np.empty(0)                # log(psi-/psi+), zero at the origin
        self.lpsi = np.empty(0)             # periodic only
        self._add_right()                   # block 0
        self._add_left()                    # block -1

    @property
    def L(self) -> int:
        return self.bL * BLOCK

    @property
    def R(self) -> int:
        return self.bR * BLOCK - 1

    # -- block computation -------------------------------------------------
    def _block(self, b: int):
        a = b * BLOCK
        w = self.env.weights(a, a + BLOCK - 1)
        if self.periodic:
            from .periodic import periodized_log_psi

            shift = getattr(self.env, "offset", 0)
            base = periodized_log_psi(self.env.ell, self.env.theta, np.array([shift]))[0]
            lp = periodized_log_psi(self.env.ell, self.env.theta, np.arange(a, a + BLOCK) + shift) - base
            return w, None, None, lp
        wl = w.tolist()
        bs = beta_at(self.env, a - 1, self.tol, self.depth_cap)
        al = alpha_at(self.env, a + BLOCK, self.tol, self.depth_cap)
        if not (bs.converged and al.converged):
            raise NonConvergenceError(
                f"alpha/beta bracket did not converge near site {a} within depth "
                f"{self.depth_cap}; environment is near-critical")
        beta, wb = _sweep_mid(wl, self.M, bs.lo, bs.hi)
        ar, wa = _sweep_mid(wl[::-1], self.M, al.lo, al.hi)
        self.max_width = max(self.max_width, wb, wa)
        return w, beta, ar[::-1].copy(), None

    def _add_right(self):
        b = self.bR
        w, beta, alpha, lp = self._block(b)
        self.w = np.concatenate([self.w, w])
        self._thr.clear()
        if self.periodic:
            self.lpsi = np.concatenate([self.lpsi, lp])
            self.bR += 1
            return
        self.beta = np.concatenate([self.beta, beta])
        self.alpha = np.concatenate([self.alpha, alpha])
        # e_k = log alpha_k + log beta_{k-1}; D(i) = D(i-1) + e_i
        k0 = b * BLOCK - self.L
        e = np.log(self.alpha[k0:k0 + BLOCK]) + np.log(self.beta[k0 - 1:k0 + BLOCK - 1]) \
            if b > 0 else np.concatenate(
                [[0.0], np.log(self.alpha[k0 + 1:k0 + BLOCK]) + np.log(self.beta[k0:k0 + BLOCK - 1])])
        start = self.D[-1] if b > 0 else 0.0
        self.D = np.concatenate([self.D, start + np.cumsum(e)])
        self.bR += 1

    def _add_left(self):
        b = self.bL - 1
        w, beta, alpha, lp = self._block(b)
        self.w = np.concatenate([w, self.w])
        self._thr.clear()
        if self.periodic:
            self.lpsi = np.concatenate([lp, self.lpsi])
            self.bL = b
            return
        self.beta = np.concatenate([beta, self.beta])
        self.alpha = np.concatenate([alpha, self.alpha])
        self.bL = b
        # D(i) = D(i+1) - e_{i+1}, e over sites b*B+1 .. (b+1)*B
        e = np.log(self.alpha[1:BLOCK + 1]) + np.log(self.beta[0:BLOCK])
        d_next = self.D[0]
        cs = np.cumsum(e[::-1])
        self.D = np.concatenate([(d_next - cs)[::-1], self.D])

    def ensure(self, lo: int, hi: int) -> bool:
        """Make transition probabilities available on ``[lo, hi]``; True if grown."""
        grew = False
        while lo < self.L + 1:
            for _ in range(max(1, -self.bL)):
                self._add_left()
            grew = True
        while hi > self.R - 1:
            for _ in range(max(1, self.bR)):
                self._add_right()
            grew = True
        return grew

    # -- probabilities -----------------------------------------------------
    def _updown(self, kappa: float) -> tuple[np.ndarray, np.ndarray]:
        """``psi_{i+1}/psi_i`` and ``psi_{i-1}/psi_i`` on ``[L+1, R-1]``."""
        if self.periodic:
            lp = self.lpsi
            return np.exp(lp[2:] - lp[1:-1]), np.exp(lp[:-2] - lp[1:-1])
        b, a = self.beta, self.alpha
        if kappa == 1.0:
            return 1.0 / b[1:-1], b[:-2]
        if kappa == 0.0:
            return a[2:], 1.0 / a[1:-1]
        # weight of psi+ in psi^kappa at site i
        q = expit(-(math.log1p(-kappa) - math.log(kappa) + self.D[1:-1]))
        up = q / b[1:-1] + (1.0 - q) * a[2:]
        down = q * b[:-2] + (1.0 - q) / a[1:-1]
        return up, down

    def probabilities(self, kappa: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(p_left, p_stay, p_right)`` on ``[L+1, R-1]``, rows summing to one."""
        up, down = self._updown(float(kappa))
        p_stay = self.w[1:-1] / self.lam
        scale = (1.0 - p_stay) / (up + down)
        return down * scale, p_stay, up * scale

    def thresholds(self, kappa: float) -> tuple[np.ndarray, np.ndarray]:
        """Cumulative ``(p_right, p_right + p_stay)`` on ``[L+1, R-1]``."""
        key = float(kappa)
        t = self._thr.get(key)
        if t is None:
            _, st, pr = self.probabilities(key)
            t = (pr, pr + st)
            self._thr[key] = t
        return t

    def row(self, kappa: float, i: int) -> tuple[float, float, float]:
        self.ensure(i, i)
        pl, ps, pr = self.probabilities(kappa)
        k = i - self.L - 1
        return float(pl[k]), float(ps[k]), float(pr[k])


# ---------------------------------------------------------------------------
# batched engine
# ---------------------------------------------------------------------------


@dataclass
class BatchResult:
    starts: np.ndarray
    final: np.ndarray
    paths: Optional[np.ndarray]       # (replicas, n + 1) when recorded
    visits: Optional[np.ndarray]      # occupation counts of ``count_site``
    n: int


def _chunk_len(R: int, n: int) -> int:
    return int(max(64, min(n, 4096, (1 << 21) // max(R, 1))))


def run_batch(kernels: Sequence[SiteKernel], kappa: float, starts: Sequence[int], n: int,
              seed: int, replica_ids: Optional[Sequence[int]] = None, record: bool = False,
              count_site: Optional[int] = None) -> BatchResult:
    """Advance ``len(starts)`` replicas ``n`` steps.

    ``kernels`` holds either one shared kernel or one kernel per replica.
    """
    starts = np.asarray(starts, dtype=np.int64)
    R = starts.size
    ids = np.arange(R) if replica_ids is None else np.asarray(replica_ids)
    shared = len(kernels) == 1
    if not shared and len(kernels) != R:
        raise ValueError("need one kernel or one kernel per replica")
    gens = [replica_rng(seed, j) for j in ids]
    pos = starts.copy()
    paths = np.empty((R, n + 1), dtype=np.int64) if record else None
    if record:
        paths[:, 0] = pos
    visits = None
    if count_site is not None:
        visits = (pos == count_site).astype(np.int64)
    rows = np.arange(R)
    chunk = _chunk_len(R, n)
    t = 0
    while t < n:
        m = min(chunk, n - t)
        lo, hi = int(pos.min()) - m - 2, int(pos.max()) + m + 2
        if shared:
            K = kernels[0]
            K.ensure(lo, hi)
            tr, ts = K.thresholds(kappa)
            off = K.L + 1
        else:
            for K in kernels:
                K.ensure(lo, hi)
            off = max(K.L for K in kernels) + 1
            top = min(K.R for K in kernels) - 1
            tr = np.stack([K.thresholds(kappa)[0][off - K.L - 1:top - K.L] for K in kernels])
            ts = np.stack([K.thresholds(kappa)[1][off - K.L - 1:top - K.L] for K in kernels])
        U = np.stack([g.random(m) for g in gens]) if R else np.empty((0, m))
        if R == 1 and shared:
            # same comparisons as the vector path, without per-step numpy overhead
            x = int(pos[0])
            trl, tsl = tr.tolist(), ts.tolist()
            hits = 0
            trace = paths[0] if record else None
            for s, u in enumerate(U[0].tolist()):
                k = x - off
                x += 1 if u < trl[k] else (0 if u < tsl[k] else -1)
                if record:
                    trace[t + s + 1] = x
                if x == count_site:
                    hits += 1
            pos[0] = x
            if visits is not None:
                visits[0] += hits
            t += m
            continue
        for s in range(m):
            u = U[:, s]
            k = pos - off
            if shared:
                right = u < tr[k]
                stay = u < ts[k]
            else:
                right = u < tr[rows, k]
                stay = u < ts[rows, k]
            pos += right.astype(np.int64) + stay.astype(np.int64) - 1
            if record:
                paths[:, t + s + 1] = pos
            if visits is not None:
                visits += pos == count_site
        t += m
    return BatchResult(starts, pos, paths, visits, n)


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    start: int
    positions: np.ndarray
    seed: int
    replica: int = 0
    t0: int = 0          # time index of positions[0]

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)

    def __len__(self) -> int:
        return self.positions.size

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions)


def _kernel_for(env: LoopEnvironment, ev: Optional[EigenVector]) -> SiteKernel:
    tol = ev.tol if ev is not None else DEFAULT_TOL
    if ev is not None and not math.isclose(ev.lam, env.lam, rel_tol=1e-12):
        raise ModelError("eigen data does not belong to this environment")
    return SiteKernel(env, tol)


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not 0.0 <= kappa <= 1.0:
        raise ModelError("kappa must lie in [0, 1]")
    return kappa


def simulate(env: LoopEnvironment, ev: Optional[EigenVector], kappa: float, start: int,
             n: int, seed: int, replica: int = 0,
             kernel: Optional[SiteKernel] = None) -> Trajectory:
    """One trajectory of length ``n + 1`` (replica ``replica`` of ``seed``)."""
    if n < 0:
        raise ModelError("n must be >= 0")
    kappa = _check_kappa(kappa)
    K = kernel or _kernel_for(env, ev)
    res = run_batch([K], kappa, [start], n, seed, [replica], record=True)
    return Trajectory(int(start), res.paths[0], int(seed), int(replica))


def simulate_many(env: LoopEnvironment, ev: Optional[EigenVector], kappa: float, start: int,
                  n: int, replicas: int, seed: int) -> list[Trajectory]:
    kappa = _check_kappa(kappa)
    K = _kernel_for(env, ev)
    res = run_batch([K], kappa, [start] * replicas, n, seed, record=True)
    return [Trajectory(int(start), res.paths[j], int(seed), j) for j in range(replicas)]


@dataclass
class CoupledRun:
    kappa_path: Trajectory
    plus_path: Trajectory
    bad_times: list[int]
    discrepancy_sum: float = 0.0     # expected number of bad times along the path


def _decide(u: float, tr: float, ts: float) -> int:
    return 1 if u < tr else (0 if u < ts else -1)


def simulate_coupled(env: LoopEnvironment, ev: Optional[EigenVector], kappa: float,
                     start: int, n: int, seed: int, replica: int = 0) -> CoupledRun:
    """The ``kappa``-walk and the extremal walk driven by one uniform sequence.

    Time ``t`` is bad when ``U_t`` sends the ``kappa``-walk, at its current
    site, a different way than the extremal rule would.  The extremal path
    is restarted from ``X^kappa_{tau+1}`` (``tau`` the last bad time) and
    driven by ``U_{tau+1}, U_{tau+2}, ...``, so its ``t0`` is ``tau + 1``.
    """
    kappa = float(kappa)
    if not 0.0 < kappa <= 1.0:
        raise ModelError("coupling needs 0 < kappa <= 1")
    K = _kernel_for(env, ev)
    U = replica_rng(seed, replica).random(n)
    x = int(start)
    K.ensure(x - n - 2, x + n + 2)
    off = K.L + 1
    tk_r, tk_s = K.thresholds(kappa)
    tp_r, tp_s = K.thresholds(1.0)
    path = np.empty(n + 1, dtype=np.int64)
    path[0] = x
    bad: list[int] = []
    disc = 0.0
    for t in range(n):
        k = x - off
        u = float(U[t])
        dk = _decide(u, tk_r[k], tk_s[k])
        if dk != _decide(u, tp_r[k], tp_s[k]):
            bad.append(t)
        # length of the disagreement region at this site
        disc += abs(tk_r[k] - tp_r[k]) + abs(tk_s[k] - tp_s[k])
        x += dk
        path[t + 1] = x
    t0 = bad[-1] + 1 if bad else 0
    y = int(path[t0])
    plus = np.empty(n + 1 - t0, dtype=np.int64)
    plus[0] = y
    for t in range(t0, n):
        k = y - off
        y += _decide(float(U[t]), tp_r[k], tp_s[k])
        plus[t - t0 + 1] = y
    return CoupledRun(Trajectory(int(start), path, int(seed), replica),
                      Trajectory(int(path[t0]), plus, int(seed), replica, t0), bad, disc)


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------


def _mean_ci(x: np.ndarray) -> tuple[float, float]:
    if x.size == 0:
        return float("nan"), float("nan")
    m = float(x.mean())
    if x.size < 2:
        return m, float("nan")
    return m, float(Z95 * x.std(ddof=1) / math.sqrt(x.size))


@dataclass
class SpeedEstimate:
    mean: float
    ci_half_width: float
    n_replicas: int
    horizon: int
    right: Optional[dict] = None
    left: Optional[dict] = None
    samples: np.ndarray = field(default=None, repr=False)

    def to_dict(self) -> dict:
        d = {"mean": self.mean, "ci_half_width": self.ci_half_width,
             "n_replicas": self.n_replicas, "horizon": self.horizon}
        if self.right is not None:
            d["conditional_right"] = self.right
            d["conditional_left"] = self.left
        return d


def _speed_from_final(final: np.ndarray, start: int, n: int, kappa: float) -> SpeedEstimate:
    x = (final - start) / n
    m, ci = _mean_ci(x)
    est = SpeedEstimate(m, ci, int(x.size), int(n), samples=x)
    if 0.0 < kappa < 1.0:
        parts = {}
        for name, mask in (("right", x > 0), ("left", x < 0)):
            sub = x[mask]
            mm, cc = _mean_ci(sub)
            if sub.size < MIN_REPLICAS_FOR_CI:
                cc = float("nan")
            parts[name] = {"mean": mm, "ci_half_width": cc, "count": int(sub.size)}
        est.right, est.left = parts["right"], parts["left"]
    return est


def estimate_speed(env: LoopEnvironment, ev: Optional[EigenVector], kappa: float, start: int,
                   n: int, replicas: int, seed: int) -> SpeedEstimate:
    """Mean of ``(X_n - start)/n`` over replicas with a 95% normal CI.

    For ``0 < kappa < 1`` the replicas are also split by the sign of the
    displacement and summarised separately.
    """
    if replicas < MIN_REPLICAS_FOR_CI:
        raise ModelError(f"need at least {MIN_REPLICAS_FOR_CI} replicas for a CI")
    if n < 1:
        raise ModelError("n must be >= 1")
    kappa = _check_kappa(kappa)
    K = _kernel_for(env, ev)
    res = run_batch([K], kappa, [start] * replicas, n, seed)
    return _speed_from_final(res.final, start, n, kappa)


@dataclass
class DirectionEstimate:
    fraction_right: float
    n_right: int
    n_left: int
    n_indeterminate: int
    replicas: int
    margin: float
    horizon: int

    @property
    def fraction_decided(self) -> float:
        d = self.n_right + self.n_left
        return self.n_right / d if d else float("nan")

    @property
    def horizon_adequate(self) -> bool:
        return self.n_indeterminate <= 0.01 * self.replicas

    def binomial_sigma(self, p: float) -> float:
        return math.sqrt(p * (1.0 - p) / self.replicas)


def estimate_direction(env: LoopEnvironment, ev: Optional[EigenVector], kappa: float,
                       start: int, horizon: int, replicas: int, seed: int) -> DirectionEstimate:
    """Fraction of replicas with ``X_horizon - start > 4 sqrt(horizon)``.

    Replicas within the margin on either side are counted as indeterminate.
    """
    kappa = _check_kappa(kappa)
    K = _kernel_for(env, ev)
    res = run_batch([K], kappa, [start] * replicas, horizon, seed)
    margin = 4.0 * math.sqrt(horizon)
    d = res.final - start
    nr = int((d > margin).sum())
    nl = int((d < -margin).sum())
    return DirectionEstimate(nr / replicas, nr, nl, replicas - nr - nl, replicas, margin, horizon)


def count_returns(t: Trajectory, site: int) -> int:
    return int(np.count_nonzero(t.positions == site))


def mean_returns(env: LoopEnvironment, ev: Optional[EigenVector], kappa: float, start: int,
                 horizon: int, replicas: int, seed: int) -> tuple[float, float]:
    """Mean and 95% CI of the number of visits to ``start`` up to ``horizon``."""
    kappa = _check_kappa(kappa)
    K = _kernel_for(env, ev)
    res = run_batch([K], kappa, [start] * replicas, horizon, seed, count_site=start)
    return _mean_ci(res.visits.astype(float))


def annealed_trajectory_speed(nu: NuSpec, n: int, replicas: int, seed: int,
                              kappa: float = 1.0, group: int = 32) -> SpeedEstimate:
    """Speed averaged over fresh environments: replica ``j`` walks in the iid
    environment seeded by ``(seed, j)`` with uniforms from replica stream ``j``."""
    if replicas < MIN_REPLICAS_FOR_CI:
        raise ModelError(f"need at least {MIN_REPLICAS_FOR_CI} replicas for a CI")
    nu.check()
    kappa = _check_kappa(kappa)
    final = np.empty(replicas, dtype=np.int64)
    for g0 in range(0, replicas, group):
        ids = list(range(g0, min(replicas, g0 + group)))
        kernels = [SiteKernel(IIDEnvironment(nu, env_seed_for(seed, j))) for j in ids]
        res = run_batch(kernels, kappa, [0] * len(ids), n, seed, ids)
        final[g0:g0 + len(ids)] = res.final
    return _speed_from_final(final, 0, n, kappa)


def env_seed_for(seed: int, j: int) -> int:
    """Environment seed of replica ``j`` in annealed runs."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(1 << 20, int(j)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
