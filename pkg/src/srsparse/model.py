"""Generative model: dictionaries, sparse-signal priors, seeded sampling.

The observation model throughout is y = D alpha + nu with D an n x m
dictionary of unit-norm columns, alpha supported on a random index set S,
alpha_S ~ N(0, sigma_alpha^2 I) and nu ~ N(0, sigma_nu^2 I).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from itertools import combinations

import numpy as np

SUPPORT_ENUMERATION_LIMIT = 1_000_000

# column norms are fixed at construction; downstream code relies on this
UNIT_NORM_TOL = 1e-12
UNITARY_TOL = 1e-10

DICTIONARY_KINDS = ("overcomplete", "unitary", "arbitrary")

Support = tuple[int, ...]


class TooLargeError(ValueError):
    """Raised when support enumeration would exceed the hard cap."""


def canonical_support(indices, m: int | None = None) -> Support:
    """Sorted duplicate-free tuple of atom indices (the canonical form)."""
    support = tuple(sorted({int(i) for i in indices}))
    if m is not None and support and not (0 <= support[0] and support[-1] < m):
        raise ValueError(f"support indices out of range for m={m}: {support}")
    return support


@dataclass(frozen=True)
class RngSeed:
    """Root of a deterministic, hierarchical random stream.

    Equal seeds give bit-identical draws; distinct streams are independent.
    Sub-streams are derived by integer paths, so callers can hand out
    non-overlapping generators without coordinating.
    """

    seed: int
    stream: int = 0

    def __post_init__(self):
        if self.seed < 0 or self.stream < 0:
            raise ValueError("seed and stream must be non-negative integers")

    def sequence(self, *path: int) -> np.random.SeedSequence:
        return np.random.SeedSequence((self.seed, self.stream, *path))

    def generator(self, *path: int) -> np.random.Generator:
        return np.random.default_rng(self.sequence(*path))

    def child(self, *path: int) -> "RngSeed":
        lo, hi = self.sequence(*path).generate_state(2, np.uint64)
        return RngSeed(int(lo), int(hi))


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngSeed):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _read_only(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Dictionary:
    """Unit-norm-column dictionary, immutable after construction."""

    atoms: np.ndarray
    kind: str

    def __post_init__(self):
        atoms = _read_only(self.atoms)
        if atoms.ndim != 2 or atoms.shape[0] < 1 or atoms.shape[1] < 1:
            raise ValueError("atoms must be a non-empty 2-d array")
        norms = np.linalg.norm(atoms, axis=0)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError("dictionary columns must have unit l2 norm")
        if self.kind not in DICTIONARY_KINDS:
            raise ValueError(f"unknown dictionary kind {self.kind!r}")
        if self.kind == "unitary":
            n, m = atoms.shape
            if n != m or np.max(np.abs(atoms.T @ atoms - np.eye(n))) > UNITARY_TOL:
                raise ValueError("kind 'unitary' requires an orthonormal square matrix")
        object.__setattr__(self, "atoms", atoms)

    @property
    def n(self) -> int:
        return self.atoms.shape[0]

    @property
    def m(self) -> int:
        return self.atoms.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        return _read_only(self.atoms.T @ self.atoms)

    @cached_property
    def operator_norm(self) -> float:
        return float(np.linalg.norm(self.atoms, 2))


def dictionary_from_matrix(matrix, kind: str | None = None) -> Dictionary:
    """Normalize columns of an arbitrary matrix and wrap it as a Dictionary."""
    atoms = np.asarray(matrix, dtype=float)
    norms = np.linalg.norm(atoms, axis=0)
    if np.any(norms == 0):
        raise ValueError("cannot normalize a zero column")
    atoms = atoms / norms
    if kind is None:
        kind = "overcomplete" if atoms.shape[1] > atoms.shape[0] else "arbitrary"
    return Dictionary(atoms, kind)


def make_random_dictionary(n: int, m: int, rng) -> Dictionary:
    """iid Gaussian atoms, columns normalized to unit norm."""
    g = _generator(rng)
    atoms = g.normal(size=(n, m))
    norms = np.linalg.norm(atoms, axis=0)
    while np.any(norms == 0):  # zero column has probability zero, but stay total
        bad = norms == 0
        atoms[:, bad] = g.normal(size=(n, int(bad.sum())))
        norms = np.linalg.norm(atoms, axis=0)
    kind = "overcomplete" if m > n else "arbitrary"
    return Dictionary(atoms / norms, kind)


def make_unitary_dictionary(n: int, rng) -> Dictionary:
    """Haar-like orthonormal basis from the QR of a Gaussian matrix."""
    g = _generator(rng)
    q, r = np.linalg.qr(g.normal(size=(n, n)))
    # fix signs so the factorization is unique given the draw
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    return Dictionary(q, "unitary")


def save_dictionary(dictionary: Dictionary, path) -> None:
    """Text format: header line 'n m kind', then n rows of m entries."""
    lines = [f"{dictionary.n} {dictionary.m} {dictionary.kind}"]
    for row in dictionary.atoms:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_dictionary(path) -> Dictionary:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: malformed dictionary header")
        n, m, kind = int(header[0]), int(header[1]), header[2]
        atoms = np.loadtxt(fh, ndmin=2)
    if atoms.shape != (n, m):
        raise ValueError(f"{path}: expected {n}x{m} matrix, got {atoms.shape}")
    return Dictionary(atoms, kind)


@dataclass(frozen=True)
class FixedCardinality:
    """Uniform prior over all supports of exactly `size` atoms."""

    size: int

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("cardinality must be at least 1")


@dataclass(frozen=True)
class IndependentBernoulli:
    """Each atom i enters the support independently with probability probs[i]."""

    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in np.atleast_1d(np.asarray(self.probs, dtype=float)))
        if not probs or any(not (0.0 < p < 1.0) for p in probs):
            raise ValueError("activation probabilities must lie strictly in (0, 1)")
        object.__setattr__(self, "probs", probs)


SupportPrior = FixedCardinality | IndependentBernoulli


@dataclass(frozen=True)
class PriorSpec:
    """Support prior plus the two Gaussian scales of the generative model."""

    support: SupportPrior
    sigma_alpha: float
    sigma_nu: float

    def __post_init__(self):
        if self.sigma_alpha <= 0 or self.sigma_nu <= 0:
            raise ValueError("sigma_alpha and sigma_nu must be positive")

    def validate_for(self, m: int) -> None:
        s = self.support
        if isinstance(s, FixedCardinality) and s.size > m:
            raise ValueError(f"cardinality {s.size} exceeds dictionary width {m}")
        if isinstance(s, IndependentBernoulli) and len(s.probs) != m:
            raise ValueError(f"need {m} activation probabilities, got {len(s.probs)}")


def fixed_cardinality_prior(size: int, sigma_alpha: float, sigma_nu: float) -> PriorSpec:
    return PriorSpec(FixedCardinality(size), sigma_alpha, sigma_nu)


def bernoulli_prior(p, m: int, sigma_alpha: float, sigma_nu: float) -> PriorSpec:
    probs = np.broadcast_to(np.asarray(p, dtype=float), (m,))
    return PriorSpec(IndependentBernoulli(tuple(probs)), sigma_alpha, sigma_nu)


@dataclass(frozen=True)
class SparseSignal:
    """One draw from the model: coefficients, support, clean and noisy signal."""

    alpha: np.ndarray
    support: Support
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _read_only(self.alpha))
        object.__setattr__(self, "x", _read_only(self.x))
        object.__setattr__(self, "y", _read_only(self.y))


def _support_prior(prior) -> SupportPrior:
    return prior.support if isinstance(prior, PriorSpec) else prior


def sample_support(prior, m: int, rng) -> Support:
    g = _generator(rng)
    s = _support_prior(prior)
    if isinstance(s, FixedCardinality):
        return tuple(sorted(int(i) for i in g.choice(m, size=s.size, replace=False)))
    mask = g.random(len(s.probs)) < np.asarray(s.probs)
    return tuple(int(i) for i in np.nonzero(mask)[0])


def sample_signal(dictionary: Dictionary, prior: PriorSpec, rng) -> SparseSignal:
    """Draw (alpha, S, x, y); the draw order is support, coefficients, noise."""
    prior.validate_for(dictionary.m)
    g = _generator(rng)
    support = sample_support(prior, dictionary.m, g)
    alpha = np.zeros(dictionary.m)
    if support:
        alpha[list(support)] = g.normal(0.0, prior.sigma_alpha, size=len(support))
    x = dictionary.atoms @ alpha
    y = x + g.normal(0.0, prior.sigma_nu, size=dictionary.n)
    return SparseSignal(alpha, support, x, y)


def support_count(prior, m: int) -> int:
    """Size of the support space Omega under the given prior."""
    s = _support_prior(prior)
    if isinstance(s, FixedCardinality):
        return math.comb(m, s.size)
    return 2 ** len(s.probs)


@lru_cache(maxsize=16)
def _enumerated(kind: str, param: int, m: int) -> tuple[Support, ...]:
    if kind == "fixed":
        return tuple(combinations(range(m), param))
    subsets = [s for k in range(m + 1) for s in combinations(range(m), k)]
    return tuple(sorted(subsets))


def enumerate_supports(prior, m: int) -> list[Support]:
    """All supports with positive prior probability, in sorted order.

    Raises TooLargeError if the count exceeds SUPPORT_ENUMERATION_LIMIT.
    """
    s = _support_prior(prior)
    count = support_count(s, m)
    if count > SUPPORT_ENUMERATION_LIMIT:
        raise TooLargeError(
            f"support space has {count} elements, cap is {SUPPORT_ENUMERATION_LIMIT}"
        )
    if isinstance(s, FixedCardinality):
        if s.size > m:
            raise ValueError(f"cardinality {s.size} exceeds m={m}")
        return list(_enumerated("fixed", s.size, m))
    if len(s.probs) != m:
        raise ValueError("probability vector length does not match m")
    return list(_enumerated("bernoulli", 0, m))


def log_support_prior(prior, m: int, support: Support) -> float:
    """log P(S); -inf for supports outside the prior's range."""
    s = _support_prior(prior)
    if isinstance(s, FixedCardinality):
        if len(support) == s.size and (not support or (support[0] >= 0 and support[-1] < m)):
            return -math.log(math.comb(m, s.size))
        return -math.inf
    probs = np.asarray(s.probs)
    inside = np.zeros(m, dtype=bool)
    if support:
        inside[list(support)] = True
    return float(np.sum(np.log(probs[inside])) + np.sum(np.log1p(-probs[~inside])))
