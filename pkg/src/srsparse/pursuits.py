"""Support-recovery algorithms.

Every pursuit returns a PursuitResult whose support is in canonical sorted
order. Batched row engines (one signal per row) back the stochastic solvers
and the patch pipeline; they produce the same supports as the single-signal
paths and exist purely for speed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bayes import LS_CUTOFF, cho_solve_batched, log_support_weights
from .model import Dictionary, PriorSpec, Support, canonical_support, enumerate_supports

# entries of a basis-pursuit solution count as support above this fraction of
# the largest magnitude
SUPPORT_REL_THRESHOLD = 1e-4

BP_TOL = 1e-8
BP_MAX_ITER = 10_000
BP_BISECTION_STEPS = 30
BP_BAND = (0.95, 1.05)

SP_MAX_ITER = 50

# correlations below this times max(1, ||y||) mean nothing is left to match
_DEAD_CORRELATION = 1e-12


@dataclass(frozen=True)
class Cardinality:
    """Stop after exactly `limit` atoms (fewer if the residual dies first)."""

    limit: int

    def __post_init__(self):
        if self.limit < 1:
            raise ValueError("cardinality limit must be at least 1")


@dataclass(frozen=True)
class ResidualBound:
    """Stop once the residual norm drops to `epsilon` or below."""

    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")


StoppingRule = Cardinality | ResidualBound


@dataclass(frozen=True)
class PursuitResult:
    alpha: np.ndarray
    support: Support
    iterations: int
    residual_norm: float
    approximate: bool = False
    # BP returns the penalized-form coefficients, which are shrunk and do not
    # satisfy the support-restricted normal equations; every other pursuit
    # returns an LS re-fit
    penalized: bool = False


def _atoms_of(dictionary) -> np.ndarray:
    if isinstance(dictionary, Dictionary):
        return dictionary.atoms
    atoms = np.asarray(dictionary, dtype=float)
    if atoms.ndim != 2:
        raise ValueError("dictionary must be a Dictionary or a 2-d array")
    return atoms


def _result(atoms, y, support, iterations, approximate=False) -> PursuitResult:
    """LS coefficients on a support, packaged with the residual."""
    m = atoms.shape[1]
    support = canonical_support(support, m)
    alpha = np.zeros(m)
    if support:
        cols = list(support)
        sol, *_ = np.linalg.lstsq(atoms[:, cols], y, rcond=LS_CUTOFF)
        alpha[cols] = sol
    rnorm = float(np.linalg.norm(y - atoms @ alpha))
    return PursuitResult(alpha, support, iterations, rnorm, approximate)


def omp(y, dictionary, stop: StoppingRule) -> PursuitResult:
    """Orthogonal matching pursuit with full LS re-solve each step."""
    atoms = _atoms_of(dictionary)
    n, m = atoms.shape
    y = np.asarray(y, dtype=float)
    ynorm = float(np.linalg.norm(y))
    if isinstance(stop, Cardinality):
        limit, eps = min(stop.limit, n, m), None
    else:
        limit, eps = min(n, m), stop.epsilon
    support: list[int] = []
    banned = np.zeros(m, dtype=bool)
    coef = np.empty(0)
    residual = y
    rnorm = ynorm
    iterations = 0
    while len(support) < limit and (eps is None or rnorm > eps):
        corr = atoms.T @ residual
        corr[banned] = 0.0
        if support:
            corr[support] = 0.0
        j = int(np.argmax(np.abs(corr)))
        if abs(corr[j]) <= _DEAD_CORRELATION * max(1.0, ynorm):
            break
        iterations += 1
        trial = support + [j]
        sol, _, rank, _ = np.linalg.lstsq(atoms[:, trial], y, rcond=LS_CUTOFF)
        if rank < len(trial):
            # the new atom is numerically inside the current span: drop it
            banned[j] = True
            continue
        support, coef = trial, sol
        residual = y - atoms[:, support] @ coef
        rnorm = float(np.linalg.norm(residual))
    alpha = np.zeros(m)
    if support:
        alpha[support] = coef
    return PursuitResult(alpha, canonical_support(support, m), iterations, rnorm)


def _ls_rows(atoms, gram, dty, ys, idx) -> np.ndarray:
    """Batched LS coefficients for equal-size supports, one per row of idx."""
    g = gram[idx[:, :, None], idx[:, None, :]]
    rhs = np.take_along_axis(dty, idx, axis=1)
    try:
        return cho_solve_batched(g, rhs)
    except np.linalg.LinAlgError:
        return np.stack(
            [np.linalg.lstsq(atoms[:, row], yy, rcond=LS_CUTOFF)[0] for row, yy in zip(idx, ys)]
        )


def omp_support_batch(ys, dictionary, stop: StoppingRule) -> list[Support]:
    """OMP supports for each row of ys; matches `omp` on generic inputs."""
    atoms = _atoms_of(dictionary)
    n, m = atoms.shape
    ys = np.asarray(ys, dtype=float)
    b = ys.shape[0]
    gram = dictionary.gram if isinstance(dictionary, Dictionary) else atoms.T @ atoms
    dty = ys @ atoms
    ynorm = np.linalg.norm(ys, axis=1)
    dead = _DEAD_CORRELATION * np.maximum(1.0, ynorm)
    if isinstance(stop, Cardinality):
        limit, eps = min(stop.limit, n, m), None
    else:
        limit, eps = min(n, m), stop.epsilon
    selected = np.zeros((b, limit), dtype=np.intp)
    count = np.zeros(b, dtype=np.intp)
    residual = ys.copy()
    rnorm = ynorm.copy()
    active = np.ones(b, dtype=bool) if eps is None else rnorm > eps
    rows = np.arange(b)
    for step in range(limit):
        act = np.flatnonzero(active)
        if act.size == 0:
            break
        corr = residual[act] @ atoms
        if step:
            corr[np.arange(act.size)[:, None], selected[act, :step]] = 0.0
        j = np.argmax(np.abs(corr), axis=1)
        alive = np.abs(corr[np.arange(act.size), j]) > dead[act]
        act = act[alive]
        if act.size == 0:
            break
        selected[act, step] = j[alive]
        active[:] = False
        active[act] = True
        count[act] = step + 1
        idx = selected[act, : step + 1]
        coefs = _ls_rows(atoms, gram, dty[act], ys[act], idx)
        recon = np.einsum("bkn,bk->bn", atoms.T[idx], coefs)
        residual[act] = ys[act] - recon
        rnorm[act] = np.linalg.norm(residual[act], axis=1)
        if eps is not None:
            active &= rnorm > eps
    return [canonical_support(selected[i, : count[i]], m) for i in rows]


def _top_l_by_atom(values: np.ndarray, l: int) -> np.ndarray:
    """Row-wise indices of the l largest |values|, ties to the lowest index."""
    return np.argsort(-np.abs(values), axis=1, kind="stable")[:, :l]


def subspace_pursuit_batch(ys, dictionary, sparsity: int):
    """Subspace pursuit on each row; returns (supports, coefs, iters, rnorms)."""
    atoms = _atoms_of(dictionary)
    n, m = atoms.shape
    ys = np.asarray(ys, dtype=float)
    b = ys.shape[0]
    l = min(sparsity, m)
    gram = dictionary.gram if isinstance(dictionary, Dictionary) else atoms.T @ atoms
    dty = ys @ atoms
    sel = _top_l_by_atom(dty, l)
    coef = _ls_rows(atoms, gram, dty, ys, sel)
    residual = ys - np.einsum("bkn,bk->bn", atoms.T[sel], coef)
    rnorm = np.linalg.norm(residual, axis=1)
    iters = np.zeros(b, dtype=np.intp)
    active = np.flatnonzero(rnorm > 0)
    for _ in range(SP_MAX_ITER):
        if active.size == 0:
            break
        corr = np.abs(residual[active] @ atoms)
        # already-selected atoms are excluded, so the union has fixed size 2l
        corr[np.arange(active.size)[:, None], sel[active]] = -1.0
        cand = np.argsort(-corr, axis=1, kind="stable")[:, :l]
        union = np.concatenate([sel[active], cand], axis=1)
        b_union = _ls_rows(atoms, gram, dty[active], ys[active], union)
        # keep the l largest coefficients, ties to the lowest atom index
        order = np.lexsort((union, -np.abs(b_union)), axis=1)[:, :l]
        new_sel = np.take_along_axis(union, order, axis=1)
        new_coef = _ls_rows(atoms, gram, dty[active], ys[active], new_sel)
        new_resid = ys[active] - np.einsum("bkn,bk->bn", atoms.T[new_sel], new_coef)
        new_rnorm = np.linalg.norm(new_resid, axis=1)
        iters[active] += 1
        improved = new_rnorm < rnorm[active]
        upd = active[improved]
        sel[upd] = new_sel[improved]
        coef[upd] = new_coef[improved]
        residual[upd] = new_resid[improved]
        rnorm[upd] = new_rnorm[improved]
        active = upd
    return sel, coef, iters, rnorm


def subspace_pursuit(y, dictionary, sparsity: int) -> PursuitResult:
    """Iterative support refinement keeping the best `sparsity` atoms."""
    atoms = _atoms_of(dictionary)
    sel, coef, iters, rnorm = subspace_pursuit_batch(
        np.asarray(y, dtype=float)[None, :], dictionary, sparsity
    )
    alpha = np.zeros(atoms.shape[1])
    alpha[sel[0]] = coef[0]
    return PursuitResult(alpha, canonical_support(sel[0]), int(iters[0]), float(rnorm[0]))


def _soft(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _fista(ys_t, atoms, lam, x0, op_norm_sq):
    """Batched FISTA on 0.5 ||y - D x||^2 + lam ||x||_1, columns independent.

    ys_t is (n, B), lam is (B,). Columns freeze individually the moment their
    iterate change drops below tolerance, so a column's trajectory does not
    depend on what else is in the batch. Returns (X, iterations, converged).
    """
    step = 1.0 / op_norm_sq
    x = x0.copy()
    z = x.copy()
    t = 1.0
    iterations = 0
    converged = np.zeros(x.shape[1], dtype=bool)
    act = np.arange(x.shape[1])
    for iterations in range(1, BP_MAX_ITER + 1):
        xa = x[:, act]
        za = z[:, act]
        grad = atoms.T @ (atoms @ za - ys_t[:, act])
        x_new = _soft(za - step * grad, (lam[act] * step)[None, :])
        change = np.max(np.abs(x_new - xa), axis=0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z[:, act] = x_new + ((t - 1.0) / t_new) * (x_new - xa)
        x[:, act] = x_new
        t = t_new
        done = change < BP_TOL
        converged[act[done]] = True
        act = act[~done]
        if act.size == 0:
            break
    return x, iterations, converged


def bp_support(alpha_col: np.ndarray) -> Support:
    peak = np.max(np.abs(alpha_col))
    if peak == 0.0:
        return ()
    return canonical_support(np.flatnonzero(np.abs(alpha_col) > SUPPORT_REL_THRESHOLD * peak))


def basis_pursuit_batch(ys, dictionary, epsilon):
    """Residual-constrained basis pursuit per row of ys.

    Solves the penalized form and bisects the penalty until the residual lands
    in [0.95 eps, 1.05 eps]. Returns (alphas (B, m), iterations, rnorms,
    approximate flags).
    """
    atoms = _atoms_of(dictionary)
    n, m = atoms.shape
    ys = np.asarray(ys, dtype=float)
    b = ys.shape[0]
    eps = np.broadcast_to(np.asarray(epsilon, dtype=float), (b,)).copy()
    if np.any(eps < 0):
        raise ValueError("epsilon must be non-negative")
    if isinstance(dictionary, Dictionary):
        op_norm_sq = dictionary.operator_norm**2
    else:
        op_norm_sq = float(np.linalg.norm(atoms, 2)) ** 2
    ys_t = ys.T
    alphas = np.zeros((m, b))
    ynorm = np.linalg.norm(ys, axis=1)
    rnorm = ynorm.copy()
    total_iters = 0
    approximate = np.zeros(b, dtype=bool)
    # alpha = 0 already satisfies the constraint for weak rows
    active = np.flatnonzero(ynorm > eps)
    if active.size == 0:
        return alphas.T, 0, rnorm, approximate
    lam_max = np.max(np.abs(ys @ atoms), axis=1)
    lo = np.zeros(b)
    hi = lam_max.copy()
    lam = 0.5 * hi
    for _ in range(BP_BISECTION_STEPS):
        x, iters, _ = _fista(ys_t[:, active], atoms, lam[active], alphas[:, active], op_norm_sq)
        total_iters += iters
        alphas[:, active] = x
        res = np.linalg.norm(ys_t[:, active] - atoms @ x, axis=0)
        rnorm[active] = res
        low, high = BP_BAND[0] * eps[active], BP_BAND[1] * eps[active]
        too_small = res < low
        too_big = res > high
        lo[active[too_small]] = lam[active[too_small]]
        hi[active[too_big]] = lam[active[too_big]]
        active = active[too_small | too_big]
        if active.size == 0:
            break
        lam[active] = 0.5 * (lo[active] + hi[active])
    # rows still outside the band: either the budget ran out or the residual
    # target is unreachable as lam -> 0 (then the near-zero-penalty solution
    # is the honest answer and is not flagged)
    reachable = hi > 1e-10 * np.maximum(lam_max, 1.0)
    approximate[active] = reachable[active]
    return alphas.T, total_iters, rnorm, approximate


def basis_pursuit(y, dictionary, epsilon: float) -> PursuitResult:
    """l1 recovery with a residual-norm target; support by relative threshold."""
    alphas, iters, rnorms, approx = basis_pursuit_batch(
        np.asarray(y, dtype=float)[None, :], dictionary, epsilon
    )
    alpha = alphas[0]
    return PursuitResult(
        alpha, bp_support(alpha), iters, float(rnorms[0]), bool(approx[0]), penalized=True
    )


def exhaustive_map_support(y, dictionary: Dictionary, prior: PriorSpec) -> Support:
    """argmax_S log P(y|S) P(S) over the whole support space (exact MAP)."""
    supports = enumerate_supports(prior, dictionary.m)
    logs = log_support_weights(dictionary, prior, np.asarray(y, dtype=float), supports)
    return supports[int(np.argmax(logs))]


def single_atom_map(y, dictionary) -> Support:
    """MAP support when exactly one atom is active: the best-matched atom."""
    atoms = _atoms_of(dictionary)
    return (int(np.argmax(np.abs(atoms.T @ np.asarray(y, dtype=float)))),)


def unitary_hard_threshold(beta, threshold: float, c_squared: float) -> PursuitResult:
    """Keep coefficients with |beta_i| >= threshold, shrunk by c_squared.

    beta is the analysis vector D^T y of a unitary dictionary, so the reported
    residual norm ||beta - alpha|| equals the signal-domain residual.
    """
    beta = np.asarray(beta, dtype=float)
    keep = np.abs(beta) >= threshold
    alpha = np.where(keep, c_squared * beta, 0.0)
    rnorm = float(np.linalg.norm(beta - alpha))
    return PursuitResult(alpha, canonical_support(np.flatnonzero(keep)), 0, rnorm)


@dataclass(frozen=True)
class PursuitSpec:
    """Declarative pursuit choice, usable on single signals or batches."""

    method: str
    sparsity: int | None = None
    epsilon: float | None = None
    threshold: float | None = None
    c_squared: float | None = None
    prior: PriorSpec | None = None

    def __post_init__(self):
        m = self.method
        if m == "omp":
            if (self.sparsity is None) == (self.epsilon is None):
                raise ValueError("omp needs exactly one of sparsity or epsilon")
        elif m == "bp":
            if self.epsilon is None:
                raise ValueError("bp needs epsilon")
        elif m == "sp":
            if self.sparsity is None:
                raise ValueError("sp needs sparsity")
        elif m == "hard-threshold":
            if self.threshold is None or self.c_squared is None:
                raise ValueError("hard-threshold needs threshold and c_squared")
        elif m == "exhaustive-map":
            if self.prior is None:
                raise ValueError("exhaustive-map needs a prior")
        elif m != "single-atom":
            raise ValueError(f"unknown pursuit method {m!r}")

    def scale_epsilon(self, factor: float) -> "PursuitSpec":
        if self.epsilon is None:
            return self
        return replace(self, epsilon=self.epsilon * factor)

    @property
    def correlation_only(self) -> bool:
        return self.method in ("single-atom", "hard-threshold")

    def run(self, y, dictionary) -> PursuitResult:
        y = np.asarray(y, dtype=float)
        if self.method == "omp":
            stop = Cardinality(self.sparsity) if self.sparsity else ResidualBound(self.epsilon)
            return omp(y, dictionary, stop)
        if self.method == "bp":
            return basis_pursuit(y, dictionary, self.epsilon)
        if self.method == "sp":
            return subspace_pursuit(y, dictionary, self.sparsity)
        if self.method == "hard-threshold":
            atoms = _atoms_of(dictionary)
            return unitary_hard_threshold(atoms.T @ y, self.threshold, self.c_squared)
        atoms = _atoms_of(dictionary)
        if self.method == "single-atom":
            support = single_atom_map(y, atoms)
        else:
            if not isinstance(dictionary, Dictionary):
                raise ValueError("exhaustive-map requires a Dictionary")
            support = exhaustive_map_support(y, dictionary, self.prior)
        return _result(atoms, y, support, 1)

    def run_rows(self, ys, dictionary) -> list[Support]:
        """Supports for each row of ys (signal domain)."""
        ys = np.asarray(ys, dtype=float)
        atoms = _atoms_of(dictionary)
        if self.method == "omp":
            stop = Cardinality(self.sparsity) if self.sparsity else ResidualBound(self.epsilon)
            if isinstance(stop, Cardinality) and stop.limit == 1:
                return self._argmax_rows(ys @ atoms)
            return omp_support_batch(ys, dictionary, stop)
        if self.method == "sp":
            sel, _, _, _ = subspace_pursuit_batch(ys, dictionary, self.sparsity)
            return [canonical_support(row) for row in sel]
        if self.method == "bp":
            alphas, _, _, _ = basis_pursuit_batch(ys, dictionary, self.epsilon)
            return [bp_support(row) for row in alphas]
        if self.correlation_only:
            return self.run_correlation_rows(ys @ atoms)
        if not isinstance(dictionary, Dictionary):
            raise ValueError("exhaustive-map requires a Dictionary")
        from .model import FixedCardinality

        if isinstance(self.prior.support, FixedCardinality) and self.prior.support.size == 1:
            # singleton MAP reduces to the matched filter for unit-norm atoms
            return self._argmax_rows(ys @ atoms)
        return [exhaustive_map_support(y, dictionary, self.prior) for y in ys]

    def run_correlation_rows(self, betas) -> list[Support]:
        """Supports straight from analysis coefficients (representation domain)."""
        betas = np.asarray(betas, dtype=float)
        if self.method == "single-atom":
            return self._argmax_rows(betas)
        if self.method == "hard-threshold":
            keep = np.abs(betas) >= self.threshold
            return [canonical_support(np.flatnonzero(row)) for row in keep]
        raise ValueError(f"{self.method} cannot run on correlations alone")

    @staticmethod
    def _argmax_rows(betas) -> list[Support]:
        return [(int(j),) for j in np.argmax(np.abs(betas), axis=1)]
