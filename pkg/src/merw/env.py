"""Loop environments on Z.

An environment assigns a self-loop weight ``w_i >= 0`` to every site ``i`` of
Z.  Each environment exposes its ceiling ``M = sup w`` and the combinatorial
spectral radius ``lam`` of the weighted adjacency matrix (unit nearest
neighbour edges, loop weight ``w_i`` on the diagonal).

Deterministic kinds (``constant``, ``step``, ``periodic``, ``single_loop``,
``explicit``) are cheap closed-form lookups.  The ``iid`` kind draws weights
lazily in fixed-size blocks; block ``b`` is generated from a counter-based
stream keyed by ``(seed, b)`` so ``w_i`` is a pure function of the seed and
the site.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from typing import Any, Optional, Sequence

import numpy as np

from .errors import HypothesisViolation, ModelError

__all__ = [
    "NuSpec",
    "LoopEnvironment",
    "ConstantEnvironment",
    "StepEnvironment",
    "PeriodicEnvironment",
    "SingleLoopEnvironment",
    "ExplicitEnvironment",
    "IIDEnvironment",
    "ShiftedEnvironment",
    "gamma_of",
    "make_environment",
    "weight_at",
    "check_nice_window",
]

_BLOCK = 512


def gamma_of(lam: float) -> float:
    """Smaller root of ``x**2 - lam*x + 1``; fixed point of ``x -> 1/(lam - x)``."""
    if lam < 2.0:
        raise ModelError(f"lam={lam} < 2 has no real loop-free excursion value")
    return (lam - math.sqrt(lam * lam - 4.0)) / 2.0


# ---------------------------------------------------------------------------
# single-site law
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NuSpec:
    """Finite-atom law of a single loop weight.

    ``atoms`` is a tuple of ``(value, probability)`` pairs.
    """

    atoms: tuple[tuple[float, float], ...]

    @classmethod
    def bernoulli(cls, p: float, M: float) -> "NuSpec":
        """``p * delta_M + (1 - p) * delta_0``."""
        return cls(((0.0, 1.0 - float(p)), (float(M), float(p))))

    @classmethod
    def from_dict(cls, d: dict) -> "NuSpec":
        if "bernoulli" in d:
            b = d["bernoulli"]
            return cls.bernoulli(b["p"], b["M"])
        if "atoms" in d:
            return cls(tuple((float(v), float(q)) for v, q in d["atoms"]))
        raise ModelError(f"unrecognised nu spec: {d!r}")

    @classmethod
    def parse(cls, text: str) -> "NuSpec":
        """Parse the CLI shorthand ``bernoulli:p,M`` or a JSON object."""
        text = text.strip()
        if text.startswith("bernoulli:"):
            p, M = (float(x) for x in text.split(":", 1)[1].split(","))
            return cls.bernoulli(p, M)
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"atoms": [[v, q] for v, q in self.atoms]}

    @property
    def ceiling(self) -> float:
        return max(v for v, q in self.atoms if q > 0)

    def check(self) -> None:
        """Raise :class:`HypothesisViolation` unless the law is a valid bounded
        law with ``M`` in its support and not a point mass at ``M``."""
        if not self.atoms:
            raise HypothesisViolation("nu has no atoms")
        total = math.fsum(q for _, q in self.atoms)
        if abs(total - 1.0) > 1e-12:
            raise HypothesisViolation(f"atom probabilities sum to {total!r}, not 1")
        for v, q in self.atoms:
            if q < 0:
                raise HypothesisViolation(f"negative probability {q} at atom {v}")
            if v < 0 or not math.isfinite(v):
                raise HypothesisViolation(f"loop weight {v} is not in [0, inf)")
        M = self.ceiling
        if M <= 0:
            raise HypothesisViolation("nu = delta_0: loop-free lattice is excluded")
        if all(v == M for v, q in self.atoms if q > 0):
            raise HypothesisViolation("nu = delta_M: constant environment is excluded")

    def _table(self) -> tuple[np.ndarray, np.ndarray]:
        vals = np.array([v for v, q in self.atoms if q > 0])
        probs = np.array([q for _, q in self.atoms if q > 0])
        order = np.argsort(vals, kind="stable")
        vals, probs = vals[order], probs[order]
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        return vals, cdf

    def from_uniform(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) to weights by inverse CDF."""
        vals, cdf = self._table()
        idx = np.searchsorted(cdf, u, side="right")
        return vals[np.minimum(idx, len(vals) - 1)]

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.from_uniform(rng.random(size))


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------


class LoopEnvironment:
    """Base class.  Subclasses set ``kind``, ``ceiling`` and ``lam``."""

    kind: str = "abstract"
    ceiling: float
    lam: float
    #: whether alpha/beta continued-fraction brackets are meaningful here
    supports_brackets: bool = True

    def weight(self, i: int) -> float:
        raise NotImplementedError

    def weights(self, lo: int, hi: int) -> np.ndarray:
        """Weights on the inclusive site range ``[lo, hi]``."""
        return np.array([self.weight(i) for i in range(lo, hi + 1)], dtype=float)

    def left_tail(self, i: int) -> Optional[tuple[int, float]]:
        """``(k, c)`` with ``k <= i`` and ``w_j == c`` for every ``j <= k``,
        or ``None`` when no constant left tail is known."""
        return None

    def right_tail(self, i: int) -> Optional[tuple[int, float]]:
        """``(k, c)`` with ``k >= i`` and ``w_j == c`` for every ``j >= k``."""
        return None

    @property
    def gamma(self) -> float:
        return gamma_of(self.lam)

    def to_spec(self) -> dict:
        raise NotImplementedError

    def shifted(self, ell: int) -> "LoopEnvironment":
        """The environment ``k -> w_{k+ell}``."""
        if ell == 0:
            return self
        return ShiftedEnvironment(self, ell)

    def __repr__(self) -> str:
        return f"{type(self).__name__}({json.dumps(self.to_spec(), sort_keys=True)})"

    def __eq__(self, other) -> bool:
        return isinstance(other, LoopEnvironment) and self.to_spec() == other.to_spec()

    def __hash__(self) -> int:
        return hash(json.dumps(self.to_spec(), sort_keys=True))


class ConstantEnvironment(LoopEnvironment):
    kind = "constant"

    def __init__(self, c: float):
        if c < 0:
            raise ModelError(f"negative loop weight {c}")
        self.c = float(c)
        self.ceiling = self.c
        self.lam = 2.0 + self.c

    def weight(self, i):
        return self.c

    def weights(self, lo, hi):
        return np.full(hi - lo + 1, self.c)

    def left_tail(self, i):
        return (i, self.c)

    def right_tail(self, i):
        return (i, self.c)

    def to_spec(self):
        return {"kind": "constant", "c": self.c}


class StepEnvironment(LoopEnvironment):
    """``w_i = M`` for ``i <= 0`` and ``w_i = 0`` for ``i >= 1``."""

    kind = "step"

    def __init__(self, M: float):
        if M <= 0:
            raise ModelError("step environment needs M > 0")
        self.M = float(M)
        self.ceiling = self.M
        self.lam = 2.0 + self.M

    def weight(self, i):
        return self.M if i <= 0 else 0.0

    def weights(self, lo, hi):
        return np.where(np.arange(lo, hi + 1) <= 0, self.M, 0.0)

    def left_tail(self, i):
        return (min(i, 0), self.M)

    def right_tail(self, i):
        return (max(i, 1), 0.0)

    def to_spec(self):
        return {"kind": "step", "M": self.M}


class PeriodicEnvironment(LoopEnvironment):
    """Loop of weight ``M`` on every multiple of ``ell``, zero elsewhere.

    Not ``M``-nice: ``lam`` is the reduced-graph spectral radius
    ``2 cosh(theta)`` rather than ``2 + M``.
    """

    kind = "periodic"
    supports_brackets = False

    def __init__(self, ell: int, M: float):
        from .periodic import solve_theta

        if int(ell) != ell or ell < 2:
            raise ModelError("periodic environment needs integer ell >= 2")
        if M <= 0:
            raise ModelError("periodic environment needs M > 0")
        self.ell = int(ell)
        self.M = float(M)
        self.ceiling = self.M
        self.theta = solve_theta(self.ell, self.M)
        self.lam = 2.0 * math.cosh(self.theta)

    def weight(self, i):
        return self.M if i % self.ell == 0 else 0.0

    def weights(self, lo, hi):
        return np.where(np.arange(lo, hi + 1) % self.ell == 0, self.M, 0.0)

    def to_spec(self):
        return {"kind": "periodic", "ell": self.ell, "M": self.M}


class SingleLoopEnvironment(LoopEnvironment):
    """One loop of weight ``M`` at the origin; ``lam = sqrt(M^2 + 4)``."""

    kind = "single_loop"
    supports_brackets = False

    def __init__(self, M: float):
        if M <= 0:
            raise ModelError("single_loop environment needs M > 0")
        self.M = float(M)
        self.ceiling = self.M
        self.lam = math.sqrt(self.M * self.M + 4.0)

    def weight(self, i):
        return self.M if i == 0 else 0.0

    def weights(self, lo, hi):
        return np.where(np.arange(lo, hi + 1) == 0, self.M, 0.0)

    def left_tail(self, i):
        return (min(i, -1), 0.0)

    def right_tail(self, i):
        return (max(i, 1), 0.0)

    def to_spec(self):
        return {"kind": "single_loop", "M": self.M}


class ExplicitEnvironment(LoopEnvironment):
    """Given values on ``[start, start + len(values) - 1]`` and constant fills
    outside.  One fill must equal the ceiling so that arbitrarily long runs
    of maximal loops exist and ``lam = 2 + M``."""

    kind = "explicit"

    def __init__(self, start: int, values: Sequence[float], left_fill: float = 0.0,
                 right_fill: float = 0.0):
        vals = np.asarray(values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ModelError("explicit environment needs a non-empty 1-d value list")
        if (vals < 0).any() or left_fill < 0 or right_fill < 0:
            raise ModelError("negative loop weight in explicit environment")
        self.start = int(start)
        self.values = vals
        self.left_fill = float(left_fill)
        self.right_fill = float(right_fill)
        self.stop = self.start + vals.size - 1
        self.ceiling = float(max(vals.max(), self.left_fill, self.right_fill))
        if self.ceiling <= 0:
            raise ModelError("explicit environment is loop-free")
        if max(self.left_fill, self.right_fill) != self.ceiling:
            raise ModelError(
                "explicit environment needs a fill equal to its ceiling; "
                "otherwise lam has no closed form")
        self.lam = 2.0 + self.ceiling

    def weight(self, i):
        if i < self.start:
            return self.left_fill
        if i > self.stop:
            return self.right_fill
        return float(self.values[i - self.start])

    def weights(self, lo, hi):
        idx = np.arange(lo, hi + 1)
        out = np.where(idx < self.start, self.left_fill, self.right_fill)
        inside = (idx >= self.start) & (idx <= self.stop)
        out[inside] = self.values[idx[inside] - self.start]
        return out

    def left_tail(self, i):
        return (min(i, self.start - 1), self.left_fill)

    def right_tail(self, i):
        return (max(i, self.stop + 1), self.right_fill)

    def to_spec(self):
        return {"kind": "explicit", "start": self.start, "values": self.values.tolist(),
                "left_fill": self.left_fill, "right_fill": self.right_fill}


def _block_key(b: int) -> tuple[int, int]:
    return (0, b) if b >= 0 else (1, -b - 1)


class IIDEnvironment(LoopEnvironment):
    """I.i.d. weights with law ``nu``; ``lam = 2 + M`` almost surely."""

    kind = "iid"

    def __init__(self, nu: NuSpec, seed: int):
        nu.check()
        self.nu = nu
        self.seed = int(seed)
        self.ceiling = nu.ceiling
        self.lam = 2.0 + self.ceiling
        self._blocks: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    def _block(self, b: int) -> np.ndarray:
        blk = self._blocks.get(b)
        if blk is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=_block_key(b))
            u = np.random.Generator(np.random.Philox(ss)).random(_BLOCK)
            blk = self.nu.from_uniform(u)
            blk.setflags(write=False)
            with self._lock:
                blk = self._blocks.setdefault(b, blk)
        return blk

    def weight(self, i):
        b, r = divmod(i, _BLOCK)
        return float(self._block(b)[r])

    def weights(self, lo, hi):
        if hi < lo:
            return np.empty(0)
        b0, b1 = lo // _BLOCK, hi // _BLOCK
        cat = np.concatenate([self._block(b) for b in range(b0, b1 + 1)])
        off = lo - b0 * _BLOCK
        return cat[off:off + hi - lo + 1].copy()

    def to_spec(self):
        return {"kind": "iid", "nu": self.nu.to_dict(), "seed": self.seed}


class ShiftedEnvironment(LoopEnvironment):
    """``theta^ell`` applied to a base environment: ``w'_k = w_{k+ell}``."""

    def __init__(self, base: LoopEnvironment, ell: int):
        if isinstance(base, ShiftedEnvironment):
            ell += base.offset
            base = base.base
        self.base = base
        self.offset = int(ell)
        self.kind = base.kind
        self.ceiling = base.ceiling
        self.lam = base.lam
        self.supports_brackets = base.supports_brackets

    def weight(self, i):
        return self.base.weight(i + self.offset)

    def weights(self, lo, hi):
        return self.base.weights(lo + self.offset, hi + self.offset)

    def left_tail(self, i):
        t = self.base.left_tail(i + self.offset)
        return None if t is None else (t[0] - self.offset, t[1])

    def right_tail(self, i):
        t = self.base.right_tail(i + self.offset)
        return None if t is None else (t[0] - self.offset, t[1])

    def to_spec(self):
        spec = dict(self.base.to_spec())
        spec["shift"] = self.offset
        return spec

    def __getattr__(self, name):
        # expose base parameters (ell/M/theta of periodic, nu/seed of iid, ...)
        if name == "base":
            raise AttributeError(name)
        return getattr(self.base, name)


# ---------------------------------------------------------------------------
# construction and queries
# ---------------------------------------------------------------------------


def _num(spec: dict, *keys: str) -> float:
    for k in keys:
        if k in spec:
            v = spec[k]
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ModelError(f"field {k!r} must be a number, got {v!r}")
            return float(v)
    raise ModelError(f"environment spec is missing {' / '.join(keys)}: {spec!r}")


def make_environment(spec: Any) -> LoopEnvironment:
    """Build an environment from a JSON-like description.

    Accepted forms (``shift`` is optional for every kind)::

        {"kind": "constant", "c": 2}
        {"kind": "step", "M": 2}
        {"kind": "periodic", "ell": 5, "M": 2}
        {"kind": "single_loop", "M": 2}
        {"kind": "explicit", "start": -3, "values": [...], "left_fill": 0, "right_fill": 2}
        {"kind": "iid", "nu": {"bernoulli": {"p": 0.02, "M": 20}}, "seed": 12345}
        {"kind": "iid", "nu": {"atoms": [[0, 0.5], [1, 0.25], [2, 0.25]]}, "seed": 1}

    A string argument is parsed as JSON.
    """
    if isinstance(spec, LoopEnvironment):
        return spec
    if isinstance(spec, str):
        try:
            spec = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise ModelError(f"environment spec is not valid JSON: {exc}") from None
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ModelError(f"environment spec must be an object with a 'kind': {spec!r}")
    kind = spec["kind"]
    if kind == "constant":
        env = ConstantEnvironment(_num(spec, "c", "M"))
    elif kind == "step":
        env = StepEnvironment(_num(spec, "M"))
    elif kind == "periodic":
        env = PeriodicEnvironment(int(_num(spec, "ell")), _num(spec, "M"))
    elif kind == "single_loop":
        env = SingleLoopEnvironment(_num(spec, "M"))
    elif kind == "explicit":
        env = ExplicitEnvironment(int(spec.get("start", 0)), spec["values"],
                                  spec.get("left_fill", 0.0), spec.get("right_fill", 0.0))
    elif kind == "iid":
        if "nu" not in spec:
            raise ModelError("iid environment spec needs 'nu'")
        nu = NuSpec.from_dict(spec["nu"])
        env = IIDEnvironment(nu, int(spec.get("seed", 0)))
    else:
        raise ModelError(f"unknown environment kind {kind!r}")
    shift = int(spec.get("shift", 0))
    return env.shifted(shift)


def weight_at(env: LoopEnvironment, i: int) -> float:
    return env.weight(i)


def check_nice_window(env: LoopEnvironment, lo: int, hi: int, eps: float,
                      r: int) -> Optional[int]:
    """First site ``i`` in ``[lo, hi]`` with ``w_i, ..., w_{i+r}`` all
    ``>= M - eps``, or ``None``.  Evidence of niceness, not a proof."""
    if eps <= 0 or r < 0:
        raise ValueError("need eps > 0 and r >= 0")
    good = env.weights(lo, hi + r) >= env.ceiling - eps
    # run length of consecutive good sites ending at each position
    run = np.zeros(good.size, dtype=np.int64)
    count = 0
    for k, g in enumerate(good):
        count = count + 1 if g else 0
        run[k] = count
    hits = np.nonzero(run[r:] >= r + 1)[0]
    return None if hits.size == 0 else lo + int(hits[0])
