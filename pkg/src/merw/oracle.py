"""Brute-force ground truth: weighted path counts, excursion tables and
generating functions, computed without any of the continued-fraction
machinery used elsewhere.

Path counts use exact arithmetic.  A path of length ``n`` from ``i`` to
``j`` never leaves ``[min(i, j) - n, max(i, j) + n]`` (it cannot even get
halfway back from further out), so truncating the lattice to that window
changes no count.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .env import LoopEnvironment

__all__ = [
    "Number",
    "ExcursionTable",
    "GreenSums",
    "SeriesBand",
    "LambdaEstimate",
    "exact_weights",
    "matrix_power_counts",
    "green_at_radius",
    "green_auto",
    "count_excursions",
    "count_excursions_bruteforce",
    "annealed_moment_exact",
    "series_moment",
    "speed_series_bernoulli",
    "constant_env_excursion_gf",
    "estimate_lambda",
]

Number = Union[int, Fraction]
MAX_EXCURSION_N = 40


def exact_weights(env: LoopEnvironment, lo: int, hi: int) -> tuple[list[Number], bool]:
    """Weights on ``[lo, hi]`` as ints when all are integral, else exact Fractions.

    Fractions of floats are exact binary rationals; the flag reports whether
    any weight needed one.
    """
    ws = env.weights(lo, hi)
    if all(float(w).is_integer() for w in ws):
        return [int(w) for w in ws], False
    return [Fraction(float(w)) for w in ws], True


def _step(v: list, ws: list) -> list:
    n = len(v)
    out = [ws[k] * v[k] for k in range(n)]
    for k in range(n - 1):
        out[k] += v[k + 1]
        out[k + 1] += v[k]
    return out


def matrix_power_counts(env: LoopEnvironment, n: int, i: int, j: int, pad: int = 0) -> Number:
    """Exact ``a^(n)_{i,j}``: weighted number of length-``n`` paths from ``i`` to ``j``.

    ``pad`` widens the truncation window beyond the minimal one (for checks).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if abs(i - j) > n:
        return 0
    lo, hi = min(i, j) - n - pad, max(i, j) + n + pad
    ws, _ = exact_weights(env, lo, hi)
    v = [0] * (hi - lo + 1)
    v[i - lo] = 1
    for _ in range(n):
        v = _step(v, ws)
    return v[j - lo]


# ---------------------------------------------------------------------------
# Green sums
# ---------------------------------------------------------------------------


@dataclass
class GreenSums:
    partial: np.ndarray       # partial[m] = sum_{n <= m} a^(n)_{ij} / lam^n
    terms: np.ndarray
    tail_estimate: float

    @property
    def N(self) -> int:
        return self.partial.size - 1

    @property
    def value(self) -> float:
        return float(self.partial[-1])


def green_at_radius(env: LoopEnvironment, i: int, j: int, N: int,
                    lam: Optional[float] = None) -> GreenSums:
    """Partial sums of ``sum_n a^(n)_{ij} / lam^n`` for ``n = 0..N`` (floats)."""
    if N < 0:
        raise ValueError("N must be >= 0")
    lam = env.lam if lam is None else lam
    h = N // 2 + 1
    lo, hi = min(i, j) - h, max(i, j) + h
    ws = env.weights(lo, hi) / lam
    v = np.zeros(hi - lo + 1)
    v[i - lo] = 1.0
    terms = np.empty(N + 1)
    terms[0] = v[j - lo]
    inv = 1.0 / lam
    for n in range(1, N + 1):
        nv = ws * v
        nv[1:] += v[:-1] * inv
        nv[:-1] += v[1:] * inv
        v = nv
        terms[n] = v[j - lo]
    return GreenSums(np.cumsum(terms), terms, _tail(terms))


def _tail(terms: np.ndarray) -> float:
    """Geometric tail estimate from the decay over the last quarter of terms."""
    N = terms.size - 1
    if N < 8:
        return math.inf
    m = max(2, N // 4)
    recent = terms[N - m + 1:]
    top = float(recent.max())
    if top == 0.0:
        return 0.0
    a, b = float(terms[N - m:N - m + 2].max()), float(terms[N - 1:N + 1].max())
    if a <= 0.0 or b <= 0.0:
        return math.inf
    r = (b / a) ** (1.0 / (m - 1)) if m > 1 else 1.0
    return math.inf if r >= 1.0 else top * r / (1.0 - r)


def green_auto(env: LoopEnvironment, i: int, j: int, gap: float = 1e-4,
               N0: int = 64, N_max: int = 1 << 15) -> GreenSums:
    """Double ``N`` until the tail estimate drops below ``gap / 10``."""
    N = N0
    while True:
        g = green_at_radius(env, i, j, N)
        if g.tail_estimate < gap / 10 or N >= N_max:
            return g
        N *= 2


# ---------------------------------------------------------------------------
# excursion tables
# ---------------------------------------------------------------------------


@dataclass
class ExcursionTable:
    n_max: int
    counts: dict[tuple[int, int, int], int]     # (n, k, l) -> c_n(k, l)

    def c(self, n: int, k: int, l: int) -> int:  # noqa: E741
        return self.counts.get((n, k, l), 0)

    def rows(self) -> list[tuple[int, int, int, int]]:
        return sorted((n, k, l, c) for (n, k, l), c in self.counts.items())


def count_excursions(n_max: int) -> ExcursionTable:
    """``c_n(k, l)`` for ``n <= n_max``: paths 0 -> 0 of length ``n`` with steps
    -1, +1 or a loop step, using ``l`` loop steps at ``k`` distinct sites.

    Forward dynamic programme over (position, set of loop sites used, l),
    discarding states that can no longer return to 0 in time.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if n_max > MAX_EXCURSION_N:
        raise ValueError(f"n_max > {MAX_EXCURSION_N} is beyond the enumeration budget")
    off = n_max // 2
    table: dict[tuple[int, int, int], int] = {(0, 0, 0): 1}
    layer: dict[tuple[int, int, int], int] = {(0, 0, 0): 1}
    for n in range(1, n_max + 1):
        rem = n_max - n
        nxt: dict[tuple[int, int, int], int] = defaultdict(int)
        for (x, mask, l), c in layer.items():  # noqa: E741
            for y in (x - 1, x + 1):
                if abs(y) <= rem:
                    nxt[(y, mask, l)] += c
            if abs(x) <= rem:
                nxt[(x, mask | (1 << (x + off)), l + 1)] += c
        layer = nxt
        for (x, mask, l), c in layer.items():  # noqa: E741
            if x == 0:
                key = (n, bin(mask).count("1"), l)
                table[key] = table.get(key, 0) + c
    return ExcursionTable(n_max, table)


def count_excursions_bruteforce(n_max: int) -> ExcursionTable:
    """Literal enumeration of all ``3^n`` step words (small ``n`` only)."""
    if n_max > 12:
        raise ValueError("brute force limited to n_max <= 12")
    table: dict[tuple[int, int, int], int] = {(0, 0, 0): 1}
    for n in range(1, n_max + 1):
        for word in itertools.product((-1, 0, 1), repeat=n):
            if sum(word) != 0:
                continue
            x, sites, l = 0, set(), 0  # noqa: E741
            for s in word:
                if s == 0:
                    sites.add(x)
                    l += 1  # noqa: E741
                x += s
            key = (n, len(sites), l)
            table[key] = table.get(key, 0) + 1
    return ExcursionTable(n_max, table)


def series_moment(table: ExcursionTable, n: int, p: Number, M: Number) -> Number:
    """``sum_{k,l} c_n(k, l) p^k M^l`` (exact for exact inputs)."""
    return sum((c * p ** k * M ** l for (m, k, l), c in table.counts.items() if m == n), 0)


def annealed_moment_exact(p: Number, M: Number, n: int) -> Number:
    """``E[a^(n)_{00}]`` for Bernoulli(p) loops of weight ``M``, by summing over
    every loop assignment of the sites a length-``n`` excursion can loop at."""
    if n == 0:
        return 1
    r = (n - 1) // 2
    sites = 2 * r + 1
    h = n // 2
    total: Number = 0
    for bits in itertools.product((0, 1), repeat=sites):
        k = sum(bits)
        prob = p ** k * (1 - p) ** (sites - k)
        if prob == 0:
            continue
        ws: list = [0] * (2 * h + 1)
        for s, b in enumerate(bits):
            ws[h - r + s] = M if b else 0
        v: list = [0] * (2 * h + 1)
        v[h] = 1
        for _ in range(n):
            v = _step(v, ws)
        total += prob * v[h]
    return total


@dataclass
class SeriesBand:
    p: float
    M: float
    terms: np.ndarray
    partial: np.ndarray
    tail_lo: float
    tail_hi: float

    @property
    def inv_v_lo(self) -> float:
        return float(self.partial[-1] + self.tail_lo)

    @property
    def inv_v_hi(self) -> float:
        return float(self.partial[-1] + self.tail_hi)

    @property
    def v_band(self) -> tuple[float, float]:
        return (1.0 / self.inv_v_hi if math.isfinite(self.inv_v_hi) else 0.0,
                1.0 / self.inv_v_lo)

    def ratios(self) -> np.ndarray:
        return self.terms[1:] / self.terms[:-1]

    def local_exponents(self) -> np.ndarray:
        n = np.arange(2, self.terms.size)
        return -np.log(self.terms[2:] / self.terms[1:-1]) / np.log(n / (n - 1))


def speed_series_bernoulli(p: float, M: float, n_max: int,
                           table: Optional[ExcursionTable] = None) -> SeriesBand:
    """Partial sums of ``1/v = sum_n sum_{k,l} c_n(k,l) p^k M^l / (2+M)^n`` with a tail band.

    Lower tail: geometric continuation at the last term ratio (a bound when
    the ratios are non-decreasing).  Upper tail: power-law continuation at
    the last local exponent ``a``, i.e. ``t_N N / (a - 1)`` (a bound when
    local exponents are non-decreasing; infinite if ``a <= 1``).
    """
    table = table or count_excursions(n_max)
    lam = 2.0 + M
    terms = np.array([float(series_moment(table, n, Fraction(p), Fraction(M))) / lam ** n
                      for n in range(n_max + 1)])
    partial = np.cumsum(terms)
    N = n_max
    tN, tP = terms[N], terms[N - 1]
    r = tN / tP
    lo = tN * r / (1.0 - r) if r < 1 else math.inf
    a = -math.log(r) / math.log(N / (N - 1)) if N > 1 else 0.0
    hi = tN * N / (a - 1.0) if a > 1 else math.inf
    return SeriesBand(float(p), float(M), terms, partial, lo, hi)


def constant_env_excursion_gf(c: float, lam: float) -> float:
    """``(1/lam) H(1/lam)`` with ``H(z) = (1 - zc - sqrt((cz - 1)^2 - 4 z^2)) / (2 z^2)``,
    the excursion generating function of the constant environment ``c``."""
    z = 1.0 / lam
    disc = (c * z - 1.0) ** 2 - 4.0 * z * z
    if disc < 0:
        if disc > -1e-15:
            disc = 0.0
        else:
            raise ValueError(f"lam={lam} < c + 2 = {c + 2}: no real generating function")
    H = (1.0 - z * c - math.sqrt(disc)) / (2.0 * z * z)
    return z * H


@dataclass
class LambdaEstimate:
    n: np.ndarray             # path lengths with a^(n)_{ii} > 0
    roots: np.ndarray         # (a^(n)_{ii})^(1/n)
    target: float

    @property
    def last(self) -> float:
        return float(self.roots[-1])

    def rel_gap(self) -> float:
        return abs(self.last - self.target) / self.target

    def monotone_tail(self, k: int = 20) -> bool:
        return bool(np.all(np.diff(self.roots[-k:]) >= 0))


def estimate_lambda(env: LoopEnvironment, i: int, n_max: int) -> LambdaEstimate:
    """``(a^(n)_{ii})^(1/n)`` for ``n = 1..n_max``, accumulated in log scale."""
    lo, hi = i - n_max, i + n_max
    ws = env.weights(lo, hi)
    v = np.zeros(hi - lo + 1)
    v[i - lo] = 1.0
    log_scale = 0.0
    ns, roots = [], []
    for n in range(1, n_max + 1):
        nv = ws * v
        nv[1:] += v[:-1]
        nv[:-1] += v[1:]
        s = nv.max()
        v = nv / s
        log_scale += math.log(s)
        a = v[i - lo]
        if a > 0:
            ns.append(n)
            roots.append(math.exp((log_scale + math.log(a)) / n))
    return LambdaEstimate(np.array(ns), np.array(roots), env.lam)
