"""Bayesian estimators for a known support set and mixtures over support sets.

Conditioned on a support S the model is Gaussian, so the posterior mean of
alpha_S and the evidence P(y | S) have closed forms built from

    Q_S = (1/sigma_alpha^2) I + (1/sigma_nu^2) D_S^T D_S.

All evidence computations run through the Cholesky factor of Q_S, which keeps
determinants and quadratic forms stable; the n x n covariance C_S is never
formed. Support weights are handled in the log domain throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import logsumexp

from .model import (
    Dictionary,
    FixedCardinality,
    IndependentBernoulli,
    PriorSpec,
    Support,
    canonical_support,
    enumerate_supports,
    log_support_prior,
)

# cap on rows processed per batched linear-algebra call, keeps memory flat
_CHUNK = 1 << 18

LS_CUTOFF = 1e-10


class NoSupportsError(ValueError):
    """Raised when a support mixture is empty or has zero total weight."""


@dataclass(frozen=True)
class SupportWeight:
    """A support with its unnormalized log posterior weight log P(y|S)P(S)."""

    support: Support
    log_weight: float


@dataclass(frozen=True)
class OracleContext:
    """Cached factorization for one support, reusable across many y."""

    dictionary: Dictionary
    prior: PriorSpec
    support: Support
    chol: np.ndarray
    log_det_q: float

    def estimate(self, y) -> np.ndarray:
        """Posterior mean of alpha given y and the known support."""
        alpha = np.zeros(self.dictionary.m)
        if not self.support:
            return alpha
        cols = list(self.support)
        u = self.dictionary.atoms[:, cols].T @ np.asarray(y, dtype=float)
        alpha[cols] = cho_solve((self.chol, True), u / self.prior.sigma_nu**2)
        return alpha

    def log_weight(self, y) -> float:
        y = np.asarray(y, dtype=float)
        sa, sn = self.prior.sigma_alpha, self.prior.sigma_nu
        n = self.dictionary.n
        quad = float(y @ y) / sn**2
        if self.support:
            u = self.dictionary.atoms[:, list(self.support)].T @ y
            z = np.linalg.solve(self.chol, u)
            quad -= float(z @ z) / sn**4
        log_det_c = 2 * n * math.log(sn) + 2 * len(self.support) * math.log(sa) + self.log_det_q
        log_prior = log_support_prior(self.prior, self.dictionary.m, self.support)
        return -0.5 * log_det_c - 0.5 * quad + log_prior


def oracle_context(dictionary: Dictionary, prior: PriorSpec, support) -> OracleContext:
    prior.validate_for(dictionary.m)
    support = canonical_support(support, dictionary.m)
    s = len(support)
    if s == 0:
        return OracleContext(dictionary, prior, support, np.empty((0, 0)), 0.0)
    cols = list(support)
    q = np.eye(s) / prior.sigma_alpha**2 + dictionary.gram[np.ix_(cols, cols)] / prior.sigma_nu**2
    chol = np.linalg.cholesky(q)
    log_det_q = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return OracleContext(dictionary, prior, support, chol, log_det_q)


def oracle_estimate(dictionary: Dictionary, prior: PriorSpec, support, y) -> np.ndarray:
    """MMSE estimate of alpha when the true support is known (the oracle)."""
    return oracle_context(dictionary, prior, support).estimate(y)


def ls_estimate(dictionary: Dictionary, support, y) -> np.ndarray:
    """Least-squares coefficients on the given support, zero elsewhere."""
    support = canonical_support(support, dictionary.m)
    alpha = np.zeros(dictionary.m)
    if support:
        cols = list(support)
        sol, *_ = np.linalg.lstsq(dictionary.atoms[:, cols], np.asarray(y, float), rcond=LS_CUTOFF)
        alpha[cols] = sol
    return alpha


def log_support_weight(dictionary: Dictionary, prior: PriorSpec, support, y) -> SupportWeight:
    """Unnormalized log posterior weight of one support (2*pi terms dropped)."""
    ctx = oracle_context(dictionary, prior, support)
    return SupportWeight(ctx.support, ctx.log_weight(y))


def _grouped(supports) -> list[tuple[np.ndarray, np.ndarray]]:
    """Group supports by cardinality: [(positions, (B, s) index array)], s ascending."""
    by_size: dict[int, tuple[list, list]] = {}
    for pos, sup in enumerate(supports):
        positions, rows = by_size.setdefault(len(sup), ([], []))
        positions.append(pos)
        rows.append(sup)
    out = []
    for size in sorted(by_size):
        positions, rows = by_size[size]
        idx = np.asarray(rows, dtype=np.intp).reshape(len(rows), size)
        out.append((np.asarray(positions, dtype=np.intp), idx))
    return out


def _log_prior_rows(prior: PriorSpec, m: int, idx: np.ndarray) -> np.ndarray:
    """Vectorized log P(S) for a batch of equal-size supports."""
    b, size = idx.shape
    s = prior.support
    if isinstance(s, FixedCardinality):
        value = -math.log(math.comb(m, s.size)) if size == s.size else -math.inf
        return np.full(b, value)
    probs = np.asarray(s.probs)
    base = float(np.sum(np.log1p(-probs)))
    gain = np.log(probs) - np.log1p(-probs)
    return base + (gain[idx].sum(axis=1) if size else np.zeros(b))


def _evaluate_grouped(dictionary, prior, y, grouped, want_alpha):
    """Per-support log weights and optionally oracle coefficients.

    Yields (positions, idx, log_w, alphas) chunks; alphas is None unless asked.
    """
    atoms, gram = dictionary.atoms, dictionary.gram
    n, m = atoms.shape
    sa, sn = prior.sigma_alpha, prior.sigma_nu
    y = np.asarray(y, dtype=float)
    dty = atoms.T @ y
    base_quad = float(y @ y) / sn**2
    const = -n * math.log(sn)
    for positions, idx in grouped:
        size = idx.shape[1]
        for lo in range(0, idx.shape[0], _CHUNK):
            pos_c = positions[lo : lo + _CHUNK]
            idx_c = idx[lo : lo + _CHUNK]
            b = idx_c.shape[0]
            if size == 0:
                log_w = const - 0.5 * base_quad + _log_prior_rows(prior, m, idx_c)
                alphas = np.zeros((b, 0)) if want_alpha else None
                yield pos_c, idx_c, log_w, alphas
                continue
            q = np.eye(size) / sa**2 + gram[idx_c[:, :, None], idx_c[:, None, :]] / sn**2
            chol = np.linalg.cholesky(q)
            u = dty[idx_c]
            z = np.linalg.solve(chol, u[:, :, None])[:, :, 0]
            log_det_q = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
            quad = base_quad - np.sum(z * z, axis=1) / sn**4
            log_w = (
                const
                - size * math.log(sa)
                - 0.5 * log_det_q
                - 0.5 * quad
                + _log_prior_rows(prior, m, idx_c)
            )
            alphas = None
            if want_alpha:
                lt = np.transpose(chol, (0, 2, 1))
                alphas = np.linalg.solve(lt, (z / sn**2)[:, :, None])[:, :, 0]
            yield pos_c, idx_c, log_w, alphas


def log_support_weights(dictionary: Dictionary, prior: PriorSpec, y, supports) -> np.ndarray:
    """Log weights for a list of supports, aligned with the input order."""
    prior.validate_for(dictionary.m)
    supports = list(supports)
    out = np.empty(len(supports))
    for pos, _, log_w, _ in _evaluate_grouped(dictionary, prior, y, _grouped(supports), False):
        out[pos] = log_w
    return out


def _mixture_over_sorted(dictionary, prior, y, supports) -> np.ndarray:
    grouped = _grouped(supports)
    log_w = np.empty(len(supports))
    chunks = []
    for pos, idx, lw, alphas in _evaluate_grouped(dictionary, prior, y, grouped, True):
        log_w[pos] = lw
        chunks.append((pos, idx, alphas))
    total = logsumexp(log_w)
    if not np.isfinite(total):
        raise NoSupportsError("every candidate support has zero posterior weight")
    weights = np.exp(log_w - total)
    result = np.zeros(dictionary.m)
    for pos, idx, alphas in chunks:
        if idx.shape[1]:
            np.add.at(result, idx.ravel(), (weights[pos][:, None] * alphas).ravel())
    return result


def weighted_average_over_set(dictionary: Dictionary, prior: PriorSpec, y, supports) -> np.ndarray:
    """Posterior-weighted mixture of oracle estimates over a support set.

    Duplicates are collapsed and the set is processed in sorted order, so the
    result does not depend on how the supports were collected.
    """
    prior.validate_for(dictionary.m)
    unique = sorted({canonical_support(s, dictionary.m) for s in supports})
    if not unique:
        raise NoSupportsError("no candidate supports given")
    return _mixture_over_sorted(dictionary, prior, y, unique)


def exhaustive_mmse(dictionary: Dictionary, prior: PriorSpec, y) -> np.ndarray:
    """Exact MMSE estimate by summing over the whole support space.

    Propagates TooLargeError when the space exceeds the enumeration cap.
    """
    prior.validate_for(dictionary.m)
    supports = enumerate_supports(prior, dictionary.m)
    return _mixture_over_sorted(dictionary, prior, y, supports)


def weighted_oracle_mixture(dictionary, prior, y, supports, weights) -> np.ndarray:
    """sum_k weights[k] * oracle(S_k); weights need not be normalized."""
    supports = list(supports)
    weights = np.asarray(weights, dtype=float)
    if len(supports) != len(weights):
        raise ValueError("supports and weights must have equal length")
    if not supports:
        raise NoSupportsError("no candidate supports given")
    result = np.zeros(dictionary.m)
    for pos, idx, _, alphas in _evaluate_grouped(dictionary, prior, y, _grouped(supports), True):
        if idx.shape[1]:
            np.add.at(result, idx.ravel(), (weights[pos][:, None] * alphas).ravel())
    return result


def weighted_ls_mixture(dictionary: Dictionary, y, supports, weights) -> np.ndarray:
    """sum_k weights[k] * ls(S_k), batched by support size."""
    supports = list(supports)
    weights = np.asarray(weights, dtype=float)
    if len(supports) != len(weights):
        raise ValueError("supports and weights must have equal length")
    if not supports:
        raise NoSupportsError("no candidate supports given")
    atoms, gram = dictionary.atoms, dictionary.gram
    dty = atoms.T @ np.asarray(y, dtype=float)
    result = np.zeros(dictionary.m)
    for positions, idx in _grouped(supports):
        size = idx.shape[1]
        if size == 0:
            continue
        for lo in range(0, idx.shape[0], _CHUNK):
            pos_c = positions[lo : lo + _CHUNK]
            idx_c = idx[lo : lo + _CHUNK]
            g = gram[idx_c[:, :, None], idx_c[:, None, :]]
            u = dty[idx_c]
            try:
                coefs = cho_solve_batched(g, u)
            except np.linalg.LinAlgError:
                # rank-deficient subdictionary somewhere in the batch: fall back
                # to the pseudo-inverse path row by row
                coefs = np.stack(
                    [
                        np.linalg.lstsq(atoms[:, row], np.asarray(y, float), rcond=LS_CUTOFF)[0]
                        for row in idx_c
                    ]
                )
            np.add.at(result, idx_c.ravel(), (weights[pos_c][:, None] * coefs).ravel())
    return result


def cho_solve_batched(mats: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve SPD systems mats[k] x = rhs[k] for a (B, s, s) stack."""
    chol = np.linalg.cholesky(mats)
    z = np.linalg.solve(chol, rhs[:, :, None])
    return np.linalg.solve(np.transpose(chol, (0, 2, 1)), z)[:, :, 0]


def ls_estimate_rows(dictionary: Dictionary, ys, supports) -> np.ndarray:
    """Row t gets the LS fit of ys[t] on its own support supports[t]."""
    ys = np.asarray(ys, dtype=float)
    supports = list(supports)
    if ys.shape[0] != len(supports):
        raise ValueError("one support per row required")
    atoms, gram = dictionary.atoms, dictionary.gram
    dty = ys @ atoms
    out = np.zeros((ys.shape[0], dictionary.m))
    for positions, idx in _grouped(supports):
        size = idx.shape[1]
        if size == 0:
            continue
        for lo in range(0, idx.shape[0], _CHUNK):
            pos_c = positions[lo : lo + _CHUNK]
            idx_c = idx[lo : lo + _CHUNK]
            g = gram[idx_c[:, :, None], idx_c[:, None, :]]
            u = dty[pos_c[:, None], idx_c]
            try:
                coefs = cho_solve_batched(g, u)
            except np.linalg.LinAlgError:
                coefs = np.stack(
                    [
                        np.linalg.lstsq(atoms[:, row], ys[pos], rcond=LS_CUTOFF)[0]
                        for pos, row in zip(pos_c, idx_c)
                    ]
                )
            out[pos_c[:, None], idx_c] = coefs
    return out


def oracle_estimate_rows(dictionary: Dictionary, prior: PriorSpec, ys, supports) -> np.ndarray:
    """Row t gets the known-support posterior mean for ys[t] on supports[t]."""
    prior.validate_for(dictionary.m)
    ys = np.asarray(ys, dtype=float)
    supports = list(supports)
    if ys.shape[0] != len(supports):
        raise ValueError("one support per row required")
    gram = dictionary.gram
    sa, sn = prior.sigma_alpha, prior.sigma_nu
    dty = ys @ dictionary.atoms
    out = np.zeros((ys.shape[0], dictionary.m))
    for positions, idx in _grouped(supports):
        size = idx.shape[1]
        if size == 0:
            continue
        for lo in range(0, idx.shape[0], _CHUNK):
            pos_c = positions[lo : lo + _CHUNK]
            idx_c = idx[lo : lo + _CHUNK]
            q = np.eye(size) / sa**2 + gram[idx_c[:, :, None], idx_c[:, None, :]] / sn**2
            u = dty[pos_c[:, None], idx_c] / sn**2
            out[pos_c[:, None], idx_c] = cho_solve_batched(q, u)
    return out
