"""Closed-form estimators for unitary dictionaries.

With an orthonormal dictionary every estimator acts elementwise on the
analysis coefficients beta = D^T y: the oracle is the constant shrinkage
c^2 beta, MAP is a hard threshold, and MMSE is a smooth shrinkage. The
asymptotic mean of the threshold-under-perturbation estimator has a
closed form in Q-functions, and its free parameters (lambda, sigma_n)
can be tuned from the data alone through an unbiased risk estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import erfc, expit


def q_function(x):
    """Upper tail probability of the standard normal distribution."""
    return 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))


@dataclass(frozen=True)
class UnitaryModel:
    """Scalar model for orthonormal D: per-entry activity p and both scales.

    p may be a single float or one value per coefficient.
    """

    sigma_alpha: float
    sigma_nu: float
    p: float | tuple[float, ...]

    def __post_init__(self):
        if self.sigma_alpha <= 0 or self.sigma_nu <= 0:
            raise ValueError("scale parameters must be positive")
        probs = np.atleast_1d(np.asarray(self.p, dtype=float))
        if np.any((probs <= 0) | (probs >= 1)):
            raise ValueError("activity probabilities must lie strictly in (0, 1)")
        ratio = (1.0 - probs) / (probs * math.sqrt(1.0 - self.c_squared))
        if np.any(ratio <= 1.0):
            bad = np.flatnonzero(ratio <= 1.0)
            raise ValueError(
                "threshold undefined: (1-p)/(p*sqrt(1-c^2)) must exceed 1, "
                f"violated at indices {bad.tolist()} (max p allowed here is "
                f"{1.0 / (1.0 + math.sqrt(1.0 - self.c_squared)):.6g})"
            )
        if not np.isscalar(self.p):
            object.__setattr__(self, "p", tuple(float(v) for v in probs))

    @cached_property
    def c_squared(self) -> float:
        return self.sigma_alpha**2 / (self.sigma_alpha**2 + self.sigma_nu**2)

    @cached_property
    def lambda_map(self):
        """MAP keep/kill threshold on |beta|; scalar p gives a scalar."""
        probs = np.asarray(self.p, dtype=float)
        c = math.sqrt(self.c_squared)
        log_ratio = np.log((1.0 - probs) / (probs * math.sqrt(1.0 - self.c_squared)))
        lam = (math.sqrt(2.0) * self.sigma_nu / c) * np.sqrt(log_ratio)
        return float(lam) if lam.ndim == 0 else lam

    @property
    def max_lambda_map(self) -> float:
        return float(np.max(self.lambda_map))


def _match_shape(value, template):
    return float(value) if np.isscalar(template) else value


def mmse_shrinkage(beta, model: UnitaryModel):
    """Posterior-mean shrinkage psi(beta), elementwise.

    Computed through the logistic function so large beta saturates cleanly
    instead of overflowing the printed exponential ratio.
    """
    b = np.asarray(beta, dtype=float)
    probs = np.asarray(model.p, dtype=float)
    c2 = model.c_squared
    gain = (
        c2 * b**2 / (2.0 * model.sigma_nu**2)
        + np.log(probs / (1.0 - probs))
        + 0.5 * math.log(1.0 - c2)
    )
    return _match_shape(expit(gain) * c2 * b, beta)


def subtractive_hard_threshold_mean(beta, lam, sigma_n, c_squared):
    """Mean of the keep-or-kill estimate when the kept flag is decided on
    beta plus a fresh N(0, sigma_n^2) perturbation each time."""
    b = np.asarray(beta, dtype=float)
    if sigma_n < 0:
        raise ValueError("sigma_n must be non-negative")
    if sigma_n == 0:
        return _match_shape(np.where(np.abs(b) >= lam, c_squared * b, 0.0), beta)
    bracket = q_function((lam + b) / sigma_n) + q_function((lam - b) / sigma_n)
    return _match_shape(bracket * c_squared * b, beta)


def sure_objective(beta, lam, sigma_n, model: UnitaryModel) -> float:
    """Unbiased estimate of the risk of the averaged threshold estimator,
    up to the additive constant ||alpha||^2; lower is better.

    The objective is a sum of independent per-coefficient terms, so a 2-D
    beta pools several signals into one tuning problem.
    """
    if sigma_n <= 0:
        raise ValueError("sigma_n must be positive")
    b = np.asarray(beta, dtype=float).ravel()
    c2, sn2 = model.c_squared, model.sigma_nu**2
    bracket = q_function((lam + b) / sigma_n) + q_function((lam - b) / sigma_n)
    phi = (
        np.exp(-((lam - b) ** 2) / (2.0 * sigma_n**2))
        - np.exp(-((lam + b) ** 2) / (2.0 * sigma_n**2))
    ) / (math.sqrt(2.0 * math.pi) * sigma_n)
    terms = (c2 * b * bracket) ** 2 - 2.0 * c2 * b**2 * bracket
    terms += 2.0 * sn2 * c2 * bracket + 2.0 * sn2 * c2 * b * phi
    return float(np.sum(terms))


def sure_surface(beta, model: UnitaryModel, lambdas, sigmas) -> np.ndarray:
    """Objective on the grid, shape (len(sigmas), len(lambdas))."""
    flat = np.asarray(beta, dtype=float).ravel()
    lam = np.asarray(lambdas, dtype=float)[None, :, None]
    sig = np.asarray(sigmas, dtype=float)[:, None, None]
    if np.any(sig <= 0):
        raise ValueError("sigma_n grid must be positive")
    c2, sn2 = model.c_squared, model.sigma_nu**2
    out = np.zeros((sig.shape[0], lam.shape[1]))
    # accumulate in coefficient blocks; pooled inputs would otherwise blow
    # up the grid broadcast to gigabytes
    for lo in range(0, flat.size, 4096):
        b = flat[lo : lo + 4096][None, None, :]
        bracket = q_function((lam + b) / sig) + q_function((lam - b) / sig)
        phi = (
            np.exp(-((lam - b) ** 2) / (2.0 * sig**2)) - np.exp(-((lam + b) ** 2) / (2.0 * sig**2))
        ) / (math.sqrt(2.0 * math.pi) * sig)
        terms = (c2 * b * bracket) ** 2 - 2.0 * c2 * b**2 * bracket
        terms += 2.0 * sn2 * c2 * bracket + 2.0 * sn2 * c2 * b * phi
        out += np.sum(terms, axis=2)
    return out


def default_sure_grid(model: UnitaryModel) -> tuple[np.ndarray, np.ndarray]:
    lambdas = np.linspace(0.0, 3.0 * model.max_lambda_map, 30)
    sigmas = np.geomspace(0.05 * model.sigma_nu, 5.0 * model.sigma_nu, 30)
    return lambdas, sigmas


def tune_sure(beta, model: UnitaryModel, lambdas=None, sigmas=None) -> tuple[float, float]:
    """Exhaustive grid minimization; ties go to smaller sigma_n, then lambda."""
    if lambdas is None or sigmas is None:
        default_l, default_s = default_sure_grid(model)
        lambdas = default_l if lambdas is None else lambdas
        sigmas = default_s if sigmas is None else sigmas
    lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    if lambdas.size == 0 or sigmas.size == 0:
        raise ValueError("grid must be nonempty")
    lambdas = np.sort(lambdas)
    sigmas = np.sort(sigmas)
    surface = sure_surface(beta, model, lambdas, sigmas)
    # row-major argmin scans sigma ascending then lambda ascending, which is
    # exactly the tie-break order we promise
    flat = int(np.argmin(surface))
    si, li = divmod(flat, lambdas.size)
    return float(lambdas[li]), float(sigmas[si])


def estimate_sigma_alpha(y, sigma_nu: float, activity_rate: float) -> tuple[float, bool]:
    """Method-of-moments scale estimate from the signal energy.

    For orthonormal D, E||y||^2/n = p*sigma_alpha^2 + sigma_nu^2, so the
    active-coefficient scale follows from the observed mean energy. Returns
    (estimate, clipped); clipped is True when the moment went negative and
    the estimate was floored at zero.
    """
    if not (0.0 < activity_rate <= 1.0):
        raise ValueError("activity rate must lie in (0, 1]")
    y = np.asarray(y, dtype=float)
    moment = float(y @ y) / y.size - sigma_nu**2
    if moment <= 0.0:
        return 0.0, True
    return math.sqrt(moment / activity_rate), False
