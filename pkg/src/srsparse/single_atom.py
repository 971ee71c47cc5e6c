"""Analysis of the one-active-atom case.

When exactly one atom is active, the matched filter (largest absolute
correlation) is the MAP support estimator, and perturbing the input makes
the selection random. The selection probability of each atom then has a
one-dimensional integral form, giving a closed-form limit for the averaged
SR estimate, which we compare against the exact posterior over atoms.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .bayes import log_support_weights
from .model import Dictionary, FixedCardinality, PriorSpec, RngSeed, sample_signal
from .pursuits import PursuitSpec
from .sr import (
    GaussianNoise,
    LS_MEAN,
    ORACLE_MEAN,
    REPRESENTATION_DOMAIN,
    SIGNAL_DOMAIN,
    SrConfig,
    general_sr,
    recovered_supports,
)

SR_EMPIRICAL = "sr-empirical"
SR_INTEGRAL = "sr-integral"
MMSE_POSTERIOR = "mmse-posterior"
MAP_DEGENERATE = "map-degenerate"

_SOURCES = (SR_EMPIRICAL, SR_INTEGRAL, MMSE_POSTERIOR, MAP_DEGENERATE)

QUADRATURE_TOL = 1e-6
PANEL_POINTS = 32
KL_FLOOR = 1e-12


@dataclass(frozen=True)
class SupportHistogram:
    """A probability per atom plus a tag saying where it came from."""

    weights: np.ndarray
    source: str
    flagged: bool = False

    def __post_init__(self):
        if self.source not in _SOURCES:
            raise ValueError(f"unknown histogram source {self.source!r}")
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty vector")
        if np.any(w < 0):
            raise ValueError("weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-6:
            raise ValueError("weights must sum to one")
        w = w.copy()
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def m(self) -> int:
        return self.weights.size


def _selection_integrals(beta: np.ndarray, sigma_n: float, panel_width: float) -> np.ndarray:
    """P(argmax_j |beta_j + noise_j| = i) for every i, by panel quadrature.

    The winning magnitude t has density sum of two Gaussian bumps, and each
    loser contributes the probability that its perturbed magnitude stays
    below t; the product is accumulated in log space so that a single zero
    factor cannot poison the per-atom leave-one-out division.
    """
    m = beta.size
    upper = float(np.max(np.abs(beta))) + 10.0 * sigma_n
    panels = max(1, math.ceil(upper / panel_width))
    nodes, weights = np.polynomial.legendre.leggauss(PANEL_POINTS)
    edges = np.linspace(0.0, upper, panels + 1)
    half = np.diff(edges) / 2.0
    mids = (edges[:-1] + edges[1:]) / 2.0
    t = (mids[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()

    lo = (t[:, None] - beta[None, :]) / sigma_n
    hi = (t[:, None] + beta[None, :]) / sigma_n
    below = ndtr(hi) - 1.0 + ndtr(lo)  # P(|beta_j + n| < t), in [0, 1]
    below = np.clip(below, 0.0, 1.0)
    dens = (
        np.exp(-0.5 * lo**2) + np.exp(-0.5 * hi**2)
    ) / (math.sqrt(2.0 * math.pi) * sigma_n)

    with np.errstate(divide="ignore"):
        log_below = np.log(below)
    zero = below == 0.0
    zeros_per_node = zero.sum(axis=1)
    finite_sum = np.sum(np.where(zero, 0.0, log_below), axis=1)
    probs = np.empty(m)
    for i in range(m):
        others_zero = zeros_per_node - zero[:, i]
        log_prod = np.where(
            others_zero > 0,
            -np.inf,
            finite_sum - np.where(zero[:, i], 0.0, log_below[:, i]),
        )
        probs[i] = float(np.sum(w * dens[:, i] * np.exp(log_prod)))
    return probs


def sr_selection_probabilities(
    y, dictionary: Dictionary, sigma_n: float
) -> tuple[np.ndarray, bool]:
    """Per-atom selection probabilities with a refinement flag.

    Runs the quadrature at panel width sigma_n/2, then at half that; if any
    atom still moves by more than the tolerance, refines once more and flags
    the result.
    """
    if sigma_n <= 0:
        raise ValueError("sigma_n must be positive")
    beta = dictionary.atoms.T @ np.asarray(y, dtype=float)
    coarse = _selection_integrals(beta, sigma_n, sigma_n / 2.0)
    fine = _selection_integrals(beta, sigma_n, sigma_n / 4.0)
    if np.max(np.abs(fine - coarse)) <= QUADRATURE_TOL:
        return fine, False
    finer = _selection_integrals(beta, sigma_n, sigma_n / 8.0)
    flagged = bool(np.max(np.abs(finer - fine)) > QUADRATURE_TOL)
    if flagged:
        warnings.warn("selection-probability quadrature did not reach tolerance")
    return finer, flagged


def sr_support_probability(y, dictionary: Dictionary, atom_index: int, sigma_n: float) -> float:
    """Probability that the matched filter picks atom_index under SR noise."""
    if not 0 <= atom_index < dictionary.m:
        raise ValueError("atom index out of range")
    probs, _ = sr_selection_probabilities(y, dictionary, sigma_n)
    return float(probs[atom_index])


def sr_integral_histogram(y, dictionary: Dictionary, sigma_n: float) -> SupportHistogram:
    probs, flagged = sr_selection_probabilities(y, dictionary, sigma_n)
    return SupportHistogram(probs / probs.sum(), SR_INTEGRAL, flagged)


def single_atom_asymptotic_estimate(y, dictionary: Dictionary, sigma_n: float, model) -> np.ndarray:
    """Limit of the averaged oracle estimates: c^2 beta_i P(pick i)."""
    c2 = model.sigma_alpha**2 / (model.sigma_alpha**2 + model.sigma_nu**2)
    beta = dictionary.atoms.T @ np.asarray(y, dtype=float)
    probs, _ = sr_selection_probabilities(y, dictionary, sigma_n)
    return c2 * beta * probs


def sr_empirical_histogram(
    y,
    dictionary: Dictionary,
    sigma_n: float,
    iterations: int,
    seed: RngSeed,
    domain: str = REPRESENTATION_DOMAIN,
) -> SupportHistogram:
    """Frequency of each atom over SR draws of the matched filter."""
    noise = GaussianNoise(sigma_n, domain=domain)
    cfg = SrConfig(noise, iterations, PursuitSpec(method="single-atom"), LS_MEAN, seed)
    supports = recovered_supports(y, dictionary, cfg)
    weights = np.zeros(dictionary.m)
    for support in supports:
        weights[support[0]] += 1.0
    return SupportHistogram(weights / iterations, SR_EMPIRICAL)


def mmse_support_histogram(y, dictionary: Dictionary, prior: PriorSpec) -> SupportHistogram:
    """Exact posterior over single atoms."""
    if not isinstance(prior.support, FixedCardinality) or prior.support.size != 1:
        raise ValueError("the posterior histogram is defined for exactly one active atom")
    singletons = [(i,) for i in range(dictionary.m)]
    log_w = log_support_weights(dictionary, prior, y, singletons)
    log_w = log_w - np.max(log_w)
    weights = np.exp(log_w)
    return SupportHistogram(weights / weights.sum(), MMSE_POSTERIOR)


def map_degenerate_histogram(y, dictionary: Dictionary) -> SupportHistogram:
    """Point mass on the matched-filter atom (the no-noise limit)."""
    beta = dictionary.atoms.T @ np.asarray(y, dtype=float)
    weights = np.zeros(dictionary.m)
    weights[int(np.argmax(np.abs(beta)))] = 1.0
    return SupportHistogram(weights, MAP_DEGENERATE)


def kl_divergence(p: SupportHistogram, q: SupportHistogram) -> float:
    """sum p log(p/q) with both sides floored at 1e-12; 0 log 0 = 0."""
    if p.m != q.m:
        raise ValueError("histograms must have the same length")
    pw = p.weights
    qw = np.maximum(q.weights, KL_FLOOR)
    active = pw > 0
    ratio = np.maximum(pw[active], KL_FLOOR) / qw[active]
    return float(np.sum(pw[active] * np.log(ratio)))


def save_histograms(path, histograms) -> None:
    """CSV with one row per (atom, histogram): atom_index, weight, source."""
    lines = ["atom_index,weight,source"]
    for hist in histograms:
        for i, weight in enumerate(hist.weights):
            lines.append(f"{i},{weight:.17g},{hist.source}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def domain_equivalence_experiment(
    dictionary: Dictionary,
    prior: PriorSpec,
    sigma_grid,
    trials: int,
    iterations: int,
    seed: RngSeed,
) -> tuple[np.ndarray, np.ndarray]:
    """MSE of the averaged-oracle SR estimator with the noise injected into
    the signal vs injected into the correlations, on the same signals.

    Returns (signal_domain_curve, representation_domain_curve).
    """
    if not isinstance(prior.support, FixedCardinality) or prior.support.size != 1:
        raise ValueError("this comparison is defined for exactly one active atom")
    sigma_grid = np.asarray(sigma_grid, dtype=float)
    pursuit = PursuitSpec(method="single-atom")
    totals = np.zeros((2, sigma_grid.size))
    for t in range(trials):
        signal = sample_signal(dictionary, prior, seed.child(0, t))
        for gi, sigma_n in enumerate(sigma_grid):
            for di, domain in enumerate((SIGNAL_DOMAIN, REPRESENTATION_DOMAIN)):
                cfg = SrConfig(
                    GaussianNoise(float(sigma_n), domain=domain),
                    iterations,
                    pursuit,
                    ORACLE_MEAN,
                    seed.child(1, t, gi, di),
                )
                report = general_sr(signal.y, dictionary, prior, cfg)
                totals[di, gi] += float(np.sum((report.estimate - signal.alpha) ** 2))
    return totals[0] / trials, totals[1] / trials
