"""Stochastic-resonance solvers.

Both algorithms perturb the input K times, run a pursuit on each perturbed
copy, and aggregate the recovered supports. They differ in one essential way:
the prior-based solver collapses the supports to a set and weights each
distinct support by its posterior, while the general solver averages the
per-iteration estimates with multiplicity. Estimates are always computed on
the original, unperturbed signal.

Iteration k draws its noise from the sub-stream (seed, k), so runs can be
split across workers and still reduce to the same result in ascending-k
order.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .bayes import (
    weighted_average_over_set,
    weighted_ls_mixture,
    weighted_oracle_mixture,
)
from .model import (
    Dictionary,
    PriorSpec,
    RngSeed,
    Support,
    log_support_prior,
)
from .pursuits import PursuitSpec

SIGNAL_DOMAIN = "signal"
REPRESENTATION_DOMAIN = "representation"

POSTERIOR_WEIGHTED = "posterior"
ORACLE_MEAN = "oracle"
LS_MEAN = "ls"


def _check_domain(domain: str) -> None:
    if domain not in (SIGNAL_DOMAIN, REPRESENTATION_DOMAIN):
        raise ValueError(f"unknown noise domain {domain!r}")


@dataclass(frozen=True)
class GaussianNoise:
    sigma_n: float
    domain: str = SIGNAL_DOMAIN

    def __post_init__(self):
        _check_domain(self.domain)
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be non-negative")


@dataclass(frozen=True)
class UniformNoise:
    """Zero-mean uniform noise with the same std as a Gaussian of sigma_n."""

    sigma_n: float
    domain: str = SIGNAL_DOMAIN

    def __post_init__(self):
        _check_domain(self.domain)
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be non-negative")

    @property
    def half_width(self) -> float:
        return math.sqrt(3.0) * self.sigma_n


@dataclass(frozen=True)
class BernoulliMask:
    """Keep each sample of y independently with probability keep_prob."""

    keep_prob: float
    domain: str = SIGNAL_DOMAIN

    def __post_init__(self):
        if not (0.0 < self.keep_prob <= 1.0):
            raise ValueError("keep probability must lie in (0, 1]")
        if self.domain != SIGNAL_DOMAIN:
            raise ValueError("multiplicative masking is only defined in the signal domain")


SrNoiseSpec = GaussianNoise | UniformNoise | BernoulliMask


@dataclass(frozen=True)
class SrConfig:
    noise: SrNoiseSpec
    iterations: int
    pursuit: PursuitSpec
    averaging: str
    seed: RngSeed

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iteration count must be at least 1")
        if self.averaging not in (POSTERIOR_WEIGHTED, ORACLE_MEAN, LS_MEAN):
            raise ValueError(f"unknown averaging mode {self.averaging!r}")
        if self.noise.domain == REPRESENTATION_DOMAIN and not self.pursuit.correlation_only:
            raise ValueError(
                "representation-domain noise requires a pursuit that works on correlations"
            )


@dataclass(frozen=True)
class SrRunReport:
    estimate: np.ndarray
    support_counts: dict[Support, int]
    distinct_supports: int
    per_iteration_supports: tuple[Support, ...]
    skipped_zero_prior: int = 0


def sample_sr_noise(spec: SrNoiseSpec, dim: int, rng) -> np.ndarray:
    """One perturbation draw: additive noise vector or a 0/1 keep mask."""
    g = rng.generator() if isinstance(rng, RngSeed) else rng
    if isinstance(spec, GaussianNoise):
        return g.normal(0.0, spec.sigma_n, size=dim)
    if isinstance(spec, UniformNoise):
        return g.uniform(-spec.half_width, spec.half_width, size=dim)
    return (g.random(dim) < spec.keep_prob).astype(float)


def _noise_block(spec: SrNoiseSpec, count: int, dim: int, seed: RngSeed) -> np.ndarray:
    block = np.empty((count, dim))
    for k in range(count):
        block[k] = sample_sr_noise(spec, dim, seed.generator(k))
    return block


def recovered_supports(y, dictionary: Dictionary, cfg: SrConfig) -> list[Support]:
    """The K supports found on perturbed copies of y, in iteration order."""
    y = np.asarray(y, dtype=float)
    atoms = dictionary.atoms
    n, m = atoms.shape
    noise, pursuit, k_total = cfg.noise, cfg.pursuit, cfg.iterations
    if noise.domain == REPRESENTATION_DOMAIN:
        block = _noise_block(noise, k_total, m, cfg.seed)
        return pursuit.run_correlation_rows(atoms.T @ y + block)
    if isinstance(noise, BernoulliMask):
        masks = _noise_block(noise, k_total, n, cfg.seed)
        empty = ~masks.any(axis=1)
        if pursuit.correlation_only:
            supports = pursuit.run_correlation_rows((masks * y) @ atoms)
        else:
            scaled = pursuit.scale_epsilon(math.sqrt(noise.keep_prob))
            supports = []
            for k in range(k_total):
                if empty[k]:
                    supports.append(())
                    continue
                rows = masks[k] > 0.0
                supports.append(scaled.run(y[rows], atoms[rows]).support)
        return [() if empty[k] else s for k, s in enumerate(supports)]
    block = _noise_block(noise, k_total, n, cfg.seed)
    return pursuit.run_rows(y[None, :] + block, dictionary)


def _count(supports) -> dict[Support, int]:
    return dict(sorted(Counter(supports).items()))


def prior_based_sr(y, dictionary: Dictionary, prior: PriorSpec, cfg: SrConfig) -> SrRunReport:
    """Posterior-weighted average over the set of supports seen under SR noise.

    Each distinct support enters the average once; its weight comes from the
    posterior, not from how often the pursuit found it.
    """
    if cfg.averaging != POSTERIOR_WEIGHTED:
        raise ValueError("prior-based SR requires posterior averaging")
    prior.validate_for(dictionary.m)
    supports = recovered_supports(y, dictionary, cfg)
    counts = _count(supports)
    gathered, skipped = [], 0
    for support, count in counts.items():
        if log_support_prior(prior, dictionary.m, support) > -math.inf:
            gathered.append(support)
        else:
            skipped += count
    estimate = weighted_average_over_set(dictionary, prior, y, gathered)
    return SrRunReport(estimate, counts, len(counts), tuple(supports), skipped)


def general_sr(y, dictionary: Dictionary, model: PriorSpec | None, cfg: SrConfig) -> SrRunReport:
    """Arithmetic mean of per-iteration estimates, multiplicity included.

    With oracle averaging each support's estimate is the Gaussian posterior
    mean (needs the model scales); with LS averaging it is the plain LS fit.
    Either way the estimate uses the original y and the full dictionary.
    """
    if cfg.averaging not in (ORACLE_MEAN, LS_MEAN):
        raise ValueError("general SR averages oracle or LS estimates")
    if cfg.averaging == ORACLE_MEAN:
        if model is None:
            raise ValueError("oracle averaging needs the model scales")
        model.validate_for(dictionary.m)
    supports = recovered_supports(y, dictionary, cfg)
    counts = _count(supports)
    distinct = list(counts)
    weights = np.fromiter(counts.values(), dtype=float, count=len(counts)) / cfg.iterations
    if cfg.averaging == ORACLE_MEAN:
        estimate = weighted_oracle_mixture(dictionary, model, y, distinct, weights)
    else:
        estimate = weighted_ls_mixture(dictionary, y, distinct, weights)
    return SrRunReport(estimate, counts, len(counts), tuple(supports))
