"""Treatment assignment mechanisms.

Three mechanisms are supported: completely randomized (``CRE``), Bernoulli
randomized (``BRE``) and an explicit probability table (``Explicit``).  Each
one can enumerate its support with exact probabilities and draw reproducible
samples keyed by ``(seed, index)``.
"""
from __future__ import annotations

import itertools
import math
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterator, Sequence

import numpy as np

DEFAULT_CAP = 2_000_000
_SEED_MASK = (1 << 64) - 1


class CapacityError(ValueError):
    """The assignment space is larger than the enumeration cap."""

    code = "exceeds-enumeration-capacity"

    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(
            f"{self.code}: {size} assignments > cap {cap}; use a Monte Carlo plan"
        )


def _stream(seed: int, index: int) -> np.random.Generator:
    # counter-based: the draw depends only on (seed, index)
    bitgen = np.random.Philox(key=int(seed) & _SEED_MASK, counter=[0, 0, 0, int(index) & _SEED_MASK])
    return np.random.Generator(bitgen)


def _partial_shuffle(u: np.ndarray, n: int) -> np.ndarray:
    """Partial Fisher-Yates on rows of ``u``; returns the first ``u.shape[1]`` picks."""
    rows, m = u.shape
    perm = np.tile(np.arange(n), (rows, 1))
    idx = np.arange(rows)
    for i in range(m):
        j = i + np.minimum((u[:, i] * (n - i)).astype(np.int64), n - i - 1)
        a = perm[idx, i].copy()
        perm[idx, i] = perm[idx, j]
        perm[idx, j] = a
    return perm[:, :m]


class _Mechanism:
    n: int

    # -- overridden ------------------------------------------------------
    def space_size(self) -> int:
        raise NotImplementedError

    @property
    def exchangeable(self) -> bool:
        raise NotImplementedError

    @property
    def uniform(self) -> bool:
        """True when every assignment in the support has equal probability."""
        raise NotImplementedError

    def _matrix(self) -> tuple[np.ndarray, np.ndarray | None]:
        raise NotImplementedError

    def _draw_uniforms(self, seed: int, index: int) -> np.ndarray:
        raise NotImplementedError

    def _bits_from_uniforms(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def exact_probability(self, bits: Sequence[int]) -> Fraction:
        raise NotImplementedError

    # -- shared ------------------------------------------------------------
    def enumerate(self, cap: int = DEFAULT_CAP) -> Iterator[tuple[np.ndarray, float]]:
        """Yield every assignment once, in lexicographic order (1 before 0), with its probability."""
        A, probs = self.enumerate_matrix(cap)
        K = A.shape[0]
        for i in range(K):
            yield A[i].copy(), (1.0 / K if probs is None else float(probs[i]))

    def enumerate_matrix(self, cap: int = DEFAULT_CAP) -> tuple[np.ndarray, np.ndarray | None]:
        """Return the support as a (K, n) int8 matrix plus probabilities.

        Probabilities are ``None`` for uniform mechanisms so callers can count
        with integers.
        """
        size = self.space_size()
        if size > cap:
            raise CapacityError(size, cap)
        key = ("enum", self)
        with _CACHE_LOCK:
            hit = _CACHE.get(key)
        if hit is None:
            hit = self._matrix()
            hit[0].setflags(write=False)
            with _CACHE_LOCK:
                _CACHE[key] = hit
        return hit

    def sample(self, seed: int, index: int) -> np.ndarray:
        """One assignment fully determined by ``(seed, index)``."""
        u = self._draw_uniforms(seed, index)
        return self._bits_from_uniforms(u[None, :])[0]

    def sample_matrix(self, seed: int, draws: int, start: int = 0) -> np.ndarray:
        """Rows ``start .. start+draws-1`` of the sampling stream; row i equals ``sample(seed, start+i)``."""
        key = ("mc", self, int(seed), int(draws), int(start))
        with _CACHE_LOCK:
            hit = _CACHE.get(key)
        if hit is not None:
            return hit
        U = np.stack([self._draw_uniforms(seed, start + i) for i in range(draws)])
        A = self._bits_from_uniforms(U)
        A.setflags(write=False)
        with _CACHE_LOCK:
            _CACHE[key] = A
        return A

    def treated_marginals(self) -> np.ndarray:
        """Per-unit P(Z_i = 1)."""
        raise NotImplementedError


_CACHE: dict = {}
_CACHE_LOCK = threading.Lock()


def clear_cache() -> None:
    with _CACHE_LOCK:
        _CACHE.clear()


@dataclass(frozen=True)
class CRE(_Mechanism):
    """Completely randomized experiment: exactly ``m`` of ``n`` units treated."""

    n: int
    m: int

    def __post_init__(self):
        if int(self.n) != self.n or int(self.m) != self.m:
            raise ValueError("CRE needs integer n and m")
        if not 1 <= self.m <= self.n - 1:
            raise ValueError(f"CRE requires 1 <= m <= n-1, got n={self.n}, m={self.m}")

    def space_size(self) -> int:
        return math.comb(self.n, self.m)

    @property
    def exchangeable(self) -> bool:
        return True

    @property
    def uniform(self) -> bool:
        return True

    def _matrix(self):
        K = self.space_size()
        A = np.zeros((K, self.n), dtype=np.int8)
        if K:
            idx = np.fromiter(
                itertools.chain.from_iterable(itertools.combinations(range(self.n), self.m)),
                dtype=np.int64,
                count=K * self.m,
            ).reshape(K, self.m)
            np.put_along_axis(A, idx, 1, axis=1)
        return A, None

    def _draw_uniforms(self, seed, index):
        return _stream(seed, index).random(self.m)

    def _bits_from_uniforms(self, u):
        picks = _partial_shuffle(u, self.n)
        A = np.zeros((u.shape[0], self.n), dtype=np.int8)
        np.put_along_axis(A, picks, 1, axis=1)
        return A

    def exact_probability(self, bits):
        return Fraction(1, self.space_size()) if sum(bits) == self.m else Fraction(0)

    def treated_marginals(self):
        return np.full(self.n, self.m / self.n)


@dataclass(frozen=True)
class BRE(_Mechanism):
    """Bernoulli randomized experiment with treatment probability ``p``."""

    n: int
    p: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("BRE needs a positive integer n")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"BRE requires 0 < p < 1, got {self.p}")

    def space_size(self) -> int:
        return 2 ** self.n

    @property
    def exchangeable(self) -> bool:
        return True

    @property
    def uniform(self) -> bool:
        return self.p == 0.5

    def _matrix(self):
        K = 2 ** self.n
        i = np.arange(K, dtype=np.int64)[::-1]
        shifts = np.arange(self.n - 1, -1, -1, dtype=np.int64)
        A = ((i[:, None] >> shifts[None, :]) & 1).astype(np.int8)
        if self.uniform:
            return A, None
        k = A.sum(axis=1)
        probs = self.p ** k * (1.0 - self.p) ** (self.n - k)
        return A, probs

    def _draw_uniforms(self, seed, index):
        return _stream(seed, index).random(self.n)

    def _bits_from_uniforms(self, u):
        return (u < self.p).astype(np.int8)

    def exact_probability(self, bits):
        p = Fraction(self.p)
        k = sum(bits)
        return p ** k * (1 - p) ** (self.n - k)

    def treated_marginals(self):
        return np.full(self.n, float(self.p))


@dataclass(frozen=True)
class Explicit(_Mechanism):
    """Explicit distribution given as rows of assignments and probabilities.

    ``exchangeable=True`` is a declaration that gets verified: the
    probability of an assignment must depend only on its number of treated
    units and every assignment of a supported size must be listed.
    """

    assignments: tuple
    probabilities: tuple
    declared_exchangeable: bool = False
    n: int = field(init=False)

    def __post_init__(self):
        rows = tuple(tuple(int(b) for b in a) for a in self.assignments)
        probs = tuple(float(p) for p in self.probabilities)
        object.__setattr__(self, "assignments", rows)
        object.__setattr__(self, "probabilities", probs)
        if not rows:
            raise ValueError("Explicit mechanism needs at least one row")
        if len(rows) != len(probs):
            raise ValueError("assignments and probabilities differ in length")
        n = len(rows[0])
        if any(len(r) != n for r in rows):
            raise ValueError("assignment rows differ in length")
        if any(b not in (0, 1) for r in rows for b in r):
            raise ValueError("assignment entries must be 0 or 1")
        if len(set(rows)) != len(rows):
            raise ValueError("duplicate assignment rows")
        if any(p < 0 or not math.isfinite(p) for p in probs):
            raise ValueError("probabilities must be finite and nonnegative")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1 within 1e-12")
        object.__setattr__(self, "n", n)
        if self.declared_exchangeable and not self._is_exchangeable():
            raise ValueError("table declared exchangeable but is not permutation invariant")

    def _is_exchangeable(self) -> bool:
        by_size: dict[int, list[float]] = {}
        for r, p in zip(self.assignments, self.probabilities):
            if p > 0:
                by_size.setdefault(sum(r), []).append(p)
        for k, ps in by_size.items():
            if len(ps) != math.comb(self.n, k):
                return False
            if max(ps) - min(ps) > 1e-15:
                return False
        return True

    def space_size(self) -> int:
        return len(self.assignments)

    @property
    def exchangeable(self) -> bool:
        return self.declared_exchangeable

    @property
    def uniform(self) -> bool:
        return len(set(self.probabilities)) == 1

    def _matrix(self):
        A = np.array(self.assignments, dtype=np.int8)
        order = np.lexsort(tuple((1 - A[:, j]) for j in range(self.n - 1, -1, -1)))
        A = np.ascontiguousarray(A[order])
        if self.uniform:
            return A, None
        return A, np.asarray(self.probabilities, dtype=float)[order]

    def _draw_uniforms(self, seed, index):
        return _stream(seed, index).random(1)

    def _bits_from_uniforms(self, u):
        cum = np.cumsum(self.probabilities)
        cum[-1] = np.inf
        rows = np.searchsorted(cum, u[:, 0], side="right")
        return np.array(self.assignments, dtype=np.int8)[rows]

    def exact_probability(self, bits):
        key = tuple(int(b) for b in bits)
        for r, p in zip(self.assignments, self.probabilities):
            if r == key:
                return Fraction(p)
        return Fraction(0)

    def treated_marginals(self):
        A = np.array(self.assignments, dtype=float)
        w = np.asarray(self.probabilities)
        return np.array([math.fsum(w * A[:, i]) for i in range(self.n)])


Mechanism = _Mechanism


def space_size(mech: _Mechanism) -> int:
    return mech.space_size()


def enumerate_assignments(mech: _Mechanism, cap: int = DEFAULT_CAP):
    return mech.enumerate(cap)
