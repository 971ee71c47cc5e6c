"""Monte-Carlo sweep harness.

Configs are flat key=value text files; estimators are compact strings like
"omp", "mmse" or "alg2(bp, ls, K=300)". A sweep samples fresh signals at
every grid point, evaluates each estimator on the same signals, and
reports representation-domain MSE (primary) and signal-domain MSE
(secondary) with standard errors.

Determinism contract: every random draw comes from a seed derived from
(config seed, grid index, estimator index, trial index), so results are
byte-identical no matter how the grid is split across workers.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

import numpy as np

from .bayes import (
    exhaustive_mmse,
    ls_estimate_rows,
    oracle_estimate_rows,
)
from .model import (
    Dictionary,
    FixedCardinality,
    PriorSpec,
    RngSeed,
    SUPPORT_ENUMERATION_LIMIT,
    Support,
    bernoulli_prior,
    fixed_cardinality_prior,
    load_dictionary,
    make_random_dictionary,
    make_unitary_dictionary,
    sample_signal,
    support_count,
)
from .pursuits import PursuitSpec
from .sr import (
    BernoulliMask,
    GaussianNoise,
    SIGNAL_DOMAIN,
    SrConfig,
    UniformNoise,
    general_sr,
    prior_based_sr,
)

CSV_HEADER = "sweep_value,estimator,mse_mean,mse_stderr,trials"

SWEEP_VARIABLES = ("sigma_n", "iterations", "cardinality", "epsilon", "keep_prob", "sigma_nu")

_PLAIN_PURSUITS = ("omp", "bp", "sp", "matched")

ALLOWED_KEYS = frozenset(
    {
        "scenario",
        "mode",
        "n",
        "m",
        "dictionary",
        "cardinality",
        "bernoulli_p",
        "sigma_alpha",
        "sigma_nu",
        "sweep",
        "grid",
        "trials",
        "seed",
        "estimators",
        "epsilon",
        "iterations",
        "sigma_n",
        "inner_grid",
        "holdout_trials",
        "gauss_grid",
        "image",
        "noise_sigma",
        "patch_sparsity",
        "sr_iterations",
        "sr_grid",
        "tune_patches",
        "lambda_grid_points",
    }
)


class ConfigError(Exception):
    """Raised for malformed configs; the message names the key or line."""


def parse_config(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in ALLOWED_KEYS:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key '{key}'")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = parse_config(text)
    cfg["__text__"] = text
    return cfg


def _get(cfg: dict[str, str], key: str, default=None) -> str:
    if key in cfg:
        return cfg[key]
    if default is None:
        raise ConfigError(f"missing required key '{key}'")
    return default


def _as_int(cfg, key, default=None) -> int:
    raw = _get(cfg, key, default)
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{key}': expected integer, got {raw!r}") from exc


def _as_float(cfg, key, default=None) -> float:
    raw = _get(cfg, key, default)
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key '{key}': expected number, got {raw!r}") from exc


def _as_floats(cfg, key, default=None) -> tuple[float, ...]:
    raw = _get(cfg, key, default)
    try:
        values = tuple(float(tok) for tok in raw.split(",") if tok.strip())
    except ValueError as exc:
        raise ConfigError(f"key '{key}': expected comma-separated numbers, got {raw!r}") from exc
    if not values:
        raise ConfigError(f"key '{key}': empty grid")
    return values


# ---------------------------------------------------------------------------
# estimator mini-language


@dataclass(frozen=True)
class EstimatorSpec:
    """One column of a sweep.

    kind "plain" runs a pursuit once; "map"/"mmse" are the exhaustive
    estimators (gated by the enumeration limit); "oracle" cheats with the
    true support; "alg1"/"alg2" are the perturb-and-aggregate solvers.
    Fields left as None are filled from the sweep variable at each grid
    point.
    """

    label: str
    kind: str
    pursuit: str | None = None
    averaging: str | None = None
    coefficients: str = "ls"
    noise: str = "gaussian"
    domain: str = SIGNAL_DOMAIN
    iterations: int | None = None
    sigma_n: float | None = None
    keep_prob: float | None = None


def _split_top_level(value: str) -> list[str]:
    parts, depth, cur = [], 0, []
    for ch in value:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ConfigError(f"unbalanced parentheses in {value!r}")
        if ch == "," and depth == 0:
            parts.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise ConfigError(f"unbalanced parentheses in {value!r}")
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return [p for p in parts if p]


def parse_estimator(token: str) -> EstimatorSpec:
    token = token.strip()
    if "(" not in token:
        name, args = token, []
    else:
        if not token.endswith(")"):
            raise ConfigError(f"estimator {token!r}: expected closing parenthesis")
        name, _, inner = token[:-1].partition("(")
        name = name.strip()
        args = [a.strip() for a in inner.split(",") if a.strip()]

    if name in _PLAIN_PURSUITS:
        coefficients = "ls"
        for arg in args:
            if arg == "oracle":
                coefficients = "oracle"
            else:
                raise ConfigError(f"estimator {token!r}: unknown argument {arg!r}")
        label = token.replace(" ", "")
        return EstimatorSpec(label=label, kind="plain", pursuit=name, coefficients=coefficients)
    if name in ("map", "mmse", "oracle"):
        if args:
            raise ConfigError(f"estimator {token!r} takes no arguments")
        return EstimatorSpec(label=name, kind=name)
    if name not in ("alg1", "alg2"):
        raise ConfigError(f"unknown estimator {name!r}")

    positional = [a for a in args if "=" not in a]
    keyword = [a for a in args if "=" in a]
    if not positional:
        raise ConfigError(f"estimator {token!r}: needs a pursuit argument")
    pursuit = positional[0]
    if pursuit not in _PLAIN_PURSUITS:
        raise ConfigError(f"estimator {token!r}: unknown pursuit {pursuit!r}")
    averaging = None
    if name == "alg2":
        if len(positional) < 2 or positional[1] not in ("oracle", "ls"):
            raise ConfigError(f"estimator {token!r}: alg2 needs 'oracle' or 'ls' averaging")
        averaging = positional[1]
        extra = positional[2:]
    else:
        extra = positional[1:]
    if extra:
        raise ConfigError(f"estimator {token!r}: unexpected arguments {extra}")

    fields: dict = {}
    for kv in keyword:
        key, _, val = kv.partition("=")
        key, val = key.strip(), val.strip()
        try:
            if key == "K":
                fields["iterations"] = int(val)
            elif key == "sigma_n":
                fields["sigma_n"] = float(val)
            elif key == "p":
                fields["keep_prob"] = float(val)
            elif key == "noise":
                if val not in ("gaussian", "uniform", "mask"):
                    raise ConfigError(f"estimator {token!r}: unknown noise {val!r}")
                fields["noise"] = val
            elif key == "domain":
                if val not in ("signal", "representation"):
                    raise ConfigError(f"estimator {token!r}: unknown domain {val!r}")
                fields["domain"] = val
            else:
                raise ConfigError(f"estimator {token!r}: unknown option {key!r}")
        except ValueError as exc:
            raise ConfigError(f"estimator {token!r}: bad value for {key!r}") from exc
    label = token.replace(" ", "")
    return EstimatorSpec(
        label=label,
        kind=name,
        pursuit=pursuit,
        averaging="posterior" if name == "alg1" else averaging,
        **fields,
    )


def parse_estimators(value: str) -> tuple[EstimatorSpec, ...]:
    tokens = _split_top_level(value)
    if not tokens:
        raise ConfigError("key 'estimators': empty list")
    specs = tuple(parse_estimator(tok) for tok in tokens)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate estimator labels")
    return specs


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    dictionary: Dictionary
    prior: PriorSpec
    estimators: tuple[EstimatorSpec, ...]
    sweep: str
    grid: tuple[float, ...]
    trials: int
    seed: RngSeed
    epsilon: float | None = None
    iterations: int = 100
    sigma_n: float = 0.0
    inner_grid: tuple[float, ...] = ()
    holdout_trials: int = 200
    gauss_grid: tuple[float, ...] = ()
    threads: int = 1
    config_hash: str = ""

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.grid:
            raise ConfigError("sweep grid must be nonempty")
        if self.sweep not in SWEEP_VARIABLES:
            raise ConfigError(f"unknown sweep variable '{self.sweep}'")
        if self.sweep == "cardinality":
            if any(v != int(v) or v < 1 for v in self.grid):
                raise ConfigError("cardinality grid must contain positive integers")


def _dictionary_from_config(cfg: dict[str, str], seed: RngSeed) -> Dictionary:
    kind = _get(cfg, "dictionary", "overcomplete")
    n = _as_int(cfg, "n", "0")
    m = _as_int(cfg, "m", "0")
    if kind in ("overcomplete", "arbitrary"):
        if n < 1 or m < 1:
            raise ConfigError("keys 'n' and 'm' are required for random dictionaries")
        return make_random_dictionary(n, m, seed.child(100))
    if kind == "unitary":
        if n < 1:
            raise ConfigError("key 'n' is required for unitary dictionaries")
        if m and m != n:
            raise ConfigError("unitary dictionaries need m = n")
        return make_unitary_dictionary(n, seed.child(100))
    try:
        return load_dictionary(kind)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"key 'dictionary': cannot load {kind!r}: {exc}") from exc


def _prior_from_config(cfg: dict[str, str], m: int) -> PriorSpec:
    sigma_alpha = _as_float(cfg, "sigma_alpha", "1.0")
    sigma_nu = _as_float(cfg, "sigma_nu")
    if "bernoulli_p" in cfg:
        if "cardinality" in cfg:
            raise ConfigError("keys 'cardinality' and 'bernoulli_p' are mutually exclusive")
        return bernoulli_prior(_as_float(cfg, "bernoulli_p"), m, sigma_alpha, sigma_nu)
    size = _as_int(cfg, "cardinality", "1")
    return fixed_cardinality_prior(size, sigma_alpha, sigma_nu)


def experiment_from_config(cfg: dict[str, str], seed_override=None, threads: int = 1) -> ExperimentConfig:
    scenario = _get(cfg, "scenario")
    seed_value = _as_int(cfg, "seed", "0") if seed_override is None else int(seed_override)
    seed = RngSeed(seed_value)
    dictionary = _dictionary_from_config(cfg, seed)
    prior = _prior_from_config(cfg, dictionary.m)
    estimators = parse_estimators(_get(cfg, "estimators"))
    text = cfg.get("__text__", "")
    digest = hashlib.sha256(
        (text + f"|seed={seed_value}").encode("utf-8")
    ).hexdigest()[:16]
    return ExperimentConfig(
        scenario=scenario,
        dictionary=dictionary,
        prior=prior,
        estimators=estimators,
        sweep=_get(cfg, "sweep", "sigma_n"),
        grid=_as_floats(cfg, "grid"),
        trials=_as_int(cfg, "trials"),
        seed=seed,
        epsilon=_as_float(cfg, "epsilon", "nan") if "epsilon" in cfg else None,
        iterations=_as_int(cfg, "iterations", "100"),
        sigma_n=_as_float(cfg, "sigma_n", "0.0"),
        inner_grid=_as_floats(cfg, "inner_grid") if "inner_grid" in cfg else (),
        holdout_trials=_as_int(cfg, "holdout_trials", "200"),
        gauss_grid=_as_floats(cfg, "gauss_grid") if "gauss_grid" in cfg else (),
        threads=threads,
        config_hash=digest,
    )


# ---------------------------------------------------------------------------
# metrics


def mse(alpha_hat, alpha_true) -> float:
    a, b = np.asarray(alpha_hat, dtype=float), np.asarray(alpha_true, dtype=float)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    return float(np.mean((a - b) ** 2))


def psnr(img, ref, peak: float = 255.0) -> float:
    a, b = np.asarray(img, dtype=float), np.asarray(ref, dtype=float)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak**2 / err)


# ---------------------------------------------------------------------------
# evaluation core


@dataclass
class _Batch:
    ys: np.ndarray
    alphas: np.ndarray
    supports: list[Support]


def _sample_batch(dictionary: Dictionary, prior: PriorSpec, trials: int, seed: RngSeed) -> _Batch:
    n, m = dictionary.n, dictionary.m
    ys = np.empty((trials, n))
    alphas = np.empty((trials, m))
    supports: list[Support] = []
    for t in range(trials):
        signal = sample_signal(dictionary, prior, seed.child(t))
        ys[t] = signal.y
        alphas[t] = signal.alpha
        supports.append(signal.support)
    return _Batch(ys, alphas, supports)


def _prior_cardinality(prior: PriorSpec) -> int | None:
    if isinstance(prior.support, FixedCardinality):
        return prior.support.size
    return None


def _pursuit_spec(name: str, prior: PriorSpec, epsilon: float | None) -> PursuitSpec:
    size = _prior_cardinality(prior)
    if name == "omp":
        if size is not None:
            return PursuitSpec(method="omp", sparsity=size)
        if epsilon is None:
            raise ConfigError("omp under a Bernoulli prior needs key 'epsilon'")
        return PursuitSpec(method="omp", epsilon=epsilon)
    if name == "sp":
        if size is None:
            raise ConfigError("sp needs a fixed-cardinality prior")
        return PursuitSpec(method="sp", sparsity=size)
    if name == "bp":
        if epsilon is None:
            raise ConfigError("bp needs key 'epsilon'")
        return PursuitSpec(method="bp", epsilon=epsilon)
    if name == "matched":
        return PursuitSpec(method="single-atom")
    raise ConfigError(f"unknown pursuit {name!r}")


def _feasible_exhaustive(prior: PriorSpec, m: int) -> bool:
    try:
        return support_count(prior, m) <= SUPPORT_ENUMERATION_LIMIT
    except OverflowError:
        return False


def _noise_spec(est: EstimatorSpec, sigma_n: float, keep_prob: float | None):
    if est.noise == "gaussian":
        return GaussianNoise(sigma_n, domain=est.domain)
    if est.noise == "uniform":
        return UniformNoise(sigma_n, domain=est.domain)
    if keep_prob is None:
        raise ConfigError(f"estimator {est.label!r}: mask noise needs a keep probability")
    return BernoulliMask(keep_prob, domain=est.domain)


def _resolve(est: EstimatorSpec, cfg: ExperimentConfig, value: float) -> EstimatorSpec:
    """Fill the swept variable into the estimator for one grid point."""
    fields: dict = {}
    if est.kind in ("alg1", "alg2"):
        if est.iterations is None:
            fields["iterations"] = int(value) if cfg.sweep == "iterations" else cfg.iterations
        if est.sigma_n is None:
            fields["sigma_n"] = float(value) if cfg.sweep == "sigma_n" else cfg.sigma_n
        if est.noise == "mask" and est.keep_prob is None:
            if cfg.sweep != "keep_prob":
                raise ConfigError(f"estimator {est.label!r}: keep probability not set")
            fields["keep_prob"] = float(value)
    return replace(est, **fields) if fields else est


def evaluate_estimator(
    est: EstimatorSpec,
    dictionary: Dictionary,
    prior: PriorSpec,
    batch: _Batch,
    seed: RngSeed,
    epsilon: float | None,
) -> np.ndarray | None:
    """(trials, m) estimates, or None when the estimator is infeasible."""
    ys = batch.ys
    if est.kind == "oracle":
        return oracle_estimate_rows(dictionary, prior, ys, batch.supports)
    if est.kind == "mmse":
        if not _feasible_exhaustive(prior, dictionary.m):
            return None
        return np.stack([exhaustive_mmse(dictionary, prior, y) for y in ys])
    if est.kind == "map":
        if not _feasible_exhaustive(prior, dictionary.m):
            return None
        spec = PursuitSpec(method="exhaustive-map", prior=prior)
        supports = spec.run_rows(ys, dictionary)
        return oracle_estimate_rows(dictionary, prior, ys, supports)
    if est.kind == "plain":
        spec = _pursuit_spec(est.pursuit, prior, epsilon)
        supports = spec.run_rows(ys, dictionary)
        if est.coefficients == "oracle":
            return oracle_estimate_rows(dictionary, prior, ys, supports)
        return ls_estimate_rows(dictionary, ys, supports)

    pursuit = _pursuit_spec(est.pursuit, prior, epsilon)
    noise = _noise_spec(est, est.sigma_n or 0.0, est.keep_prob)
    out = np.empty((ys.shape[0], dictionary.m))
    for t in range(ys.shape[0]):
        cfg_t = SrConfig(noise, est.iterations, pursuit, est.averaging, seed.child(t))
        if est.kind == "alg1":
            report = prior_based_sr(ys[t], dictionary, prior, cfg_t)
        else:
            model = prior if est.averaging == "oracle" else None
            report = general_sr(ys[t], dictionary, model, cfg_t)
        out[t] = report.estimate
    return out


def _point_prior(cfg: ExperimentConfig, value: float) -> PriorSpec:
    if cfg.sweep == "cardinality":
        return fixed_cardinality_prior(int(value), cfg.prior.sigma_alpha, cfg.prior.sigma_nu)
    if cfg.sweep == "sigma_nu":
        return PriorSpec(cfg.prior.support, cfg.prior.sigma_alpha, float(value))
    return cfg.prior


def _point_epsilon(cfg: ExperimentConfig, value: float) -> float | None:
    if cfg.sweep == "epsilon":
        return float(value)
    return cfg.epsilon


def _evaluate_point(cfg: ExperimentConfig, gi: int) -> tuple[np.ndarray, ...]:
    """All estimator statistics for one grid point, seeded independently."""
    value = cfg.grid[gi]
    prior = _point_prior(cfg, value)
    epsilon = _point_epsilon(cfg, value)
    batch = _sample_batch(cfg.dictionary, prior, cfg.trials, cfg.seed.child(0, gi))
    n_est = len(cfg.estimators)
    means = np.full(n_est, np.nan)
    stds = np.full(n_est, np.nan)
    sig_means = np.full(n_est, np.nan)
    sig_stds = np.full(n_est, np.nan)
    atoms = cfg.dictionary.atoms
    for ei, est in enumerate(cfg.estimators):
        resolved = _resolve(est, cfg, value)
        estimates = evaluate_estimator(
            resolved, cfg.dictionary, prior, batch, cfg.seed.child(1, gi, ei), epsilon
        )
        if estimates is None:
            continue
        err = estimates - batch.alphas
        per_trial = np.sum(err**2, axis=1)
        sig_per_trial = np.sum((err @ atoms.T) ** 2, axis=1)
        means[ei] = per_trial.mean()
        stds[ei] = per_trial.std(ddof=1) / math.sqrt(cfg.trials) if cfg.trials > 1 else 0.0
        sig_means[ei] = sig_per_trial.mean()
        sig_stds[ei] = (
            sig_per_trial.std(ddof=1) / math.sqrt(cfg.trials) if cfg.trials > 1 else 0.0
        )
    return means, stds, sig_means, sig_stds


@dataclass
class CurveResult:
    sweep: str
    values: tuple[float, ...]
    labels: tuple[str, ...]
    mse_mean: np.ndarray
    mse_stderr: np.ndarray
    signal_mean: np.ndarray
    signal_stderr: np.ndarray
    trials: int
    config_hash: str
    wall_time: float
    notes: dict = field(default_factory=dict)


def _assemble(cfg: ExperimentConfig, rows: list[tuple[np.ndarray, ...]], t0: float) -> CurveResult:
    means, stds, sig_means, sig_stds = (np.stack([r[i] for r in rows]) for i in range(4))
    return CurveResult(
        sweep=cfg.sweep,
        values=cfg.grid,
        labels=tuple(e.label for e in cfg.estimators),
        mse_mean=means,
        mse_stderr=stds,
        signal_mean=sig_means,
        signal_stderr=sig_stds,
        trials=cfg.trials,
        config_hash=cfg.config_hash,
        wall_time=time.perf_counter() - t0,
    )


def _map_points(cfg: ExperimentConfig, worker, indices) -> list:
    if cfg.threads <= 1 or len(indices) <= 1:
        return [worker((cfg, gi)) for gi in indices]
    ctx = get_context("fork")
    with ctx.Pool(min(cfg.threads, len(indices))) as pool:
        return pool.map(worker, [(cfg, gi) for gi in indices])


def _sweep_worker(args) -> tuple[np.ndarray, ...]:
    cfg, gi = args
    return _evaluate_point(cfg, gi)


def run_mse_sweep(cfg: ExperimentConfig) -> CurveResult:
    t0 = time.perf_counter()
    rows = _map_points(cfg, _sweep_worker, range(len(cfg.grid)))
    return _assemble(cfg, rows, t0)


# ---------------------------------------------------------------------------
# cardinality sweep with inner noise tuning


def _cardinality_worker(args) -> tuple[np.ndarray, ...]:
    cfg, gi = args
    value = cfg.grid[gi]
    prior = _point_prior(cfg, value)
    epsilon = cfg.epsilon
    holdout = _sample_batch(cfg.dictionary, prior, cfg.holdout_trials, cfg.seed.child(2, gi))
    tuned: list[EstimatorSpec] = []
    for ei, est in enumerate(cfg.estimators):
        if est.kind not in ("alg1", "alg2") or est.sigma_n is not None or not cfg.inner_grid:
            tuned.append(est)
            continue
        best_sigma, best_mse = None, math.inf
        for si, sigma_n in enumerate(cfg.inner_grid):
            candidate = replace(
                est,
                sigma_n=float(sigma_n),
                iterations=est.iterations or cfg.iterations,
            )
            estimates = evaluate_estimator(
                candidate, cfg.dictionary, prior, holdout, cfg.seed.child(3, gi, ei, si), epsilon
            )
            if estimates is None:
                continue
            score = float(np.mean(np.sum((estimates - holdout.alphas) ** 2, axis=1)))
            if score < best_mse:
                best_sigma, best_mse = float(sigma_n), score
        if best_sigma is None:
            tuned.append(est)
        else:
            tuned.append(replace(est, sigma_n=best_sigma))
    point_cfg = replace(cfg, estimators=tuple(tuned))
    return _evaluate_point(point_cfg, gi)


def run_cardinality_sweep(cfg: ExperimentConfig) -> CurveResult:
    if cfg.sweep != "cardinality":
        raise ConfigError("cardinality sweep requires sweep = cardinality")
    t0 = time.perf_counter()
    rows = _map_points(cfg, _cardinality_worker, range(len(cfg.grid)))
    return _assemble(cfg, rows, t0)


# ---------------------------------------------------------------------------
# multiplicative-mask sweep with a Gaussian reference


def run_bernoulli_sweep(cfg: ExperimentConfig) -> tuple[CurveResult, CurveResult, dict]:
    """Mask curve over the keep-probability grid, Gaussian curve over
    gauss_grid, and the optimal-point comparison of the two."""
    if cfg.sweep != "keep_prob":
        raise ConfigError("this sweep requires sweep = keep_prob")
    if not cfg.gauss_grid:
        raise ConfigError("key 'gauss_grid' is required")
    mask_estimators = tuple(e for e in cfg.estimators if e.noise == "mask")
    gauss_estimators = tuple(e for e in cfg.estimators if e.noise != "mask")
    if not mask_estimators or not gauss_estimators:
        raise ConfigError("need at least one mask estimator and one additive-noise estimator")
    t0 = time.perf_counter()
    mask_cfg = replace(cfg, estimators=mask_estimators)
    gauss_cfg = replace(
        cfg, estimators=gauss_estimators, sweep="sigma_n", grid=cfg.gauss_grid
    )
    mask_curve = run_mse_sweep(mask_cfg)
    gauss_curve = run_mse_sweep(gauss_cfg)
    summary = {
        "mask_best": float(np.nanmin(mask_curve.mse_mean)),
        "gauss_best": float(np.nanmin(gauss_curve.mse_mean)),
    }
    summary["ratio"] = summary["mask_best"] / summary["gauss_best"]
    mask_curve.wall_time = time.perf_counter() - t0
    return mask_curve, gauss_curve, summary


# ---------------------------------------------------------------------------
# CSV output


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return f"{x:.10g}"


def curve_csv_lines(result: CurveResult) -> list[str]:
    lines = [CSV_HEADER]
    for gi, value in enumerate(result.values):
        for ei, label in enumerate(result.labels):
            lines.append(
                f"{_fmt(value)},{label},{_fmt(result.mse_mean[gi, ei])},"
                f"{_fmt(result.mse_stderr[gi, ei])},{result.trials}"
            )
            lines.append(
                f"{_fmt(value)},{label}/signal,{_fmt(result.signal_mean[gi, ei])},"
                f"{_fmt(result.signal_stderr[gi, ei])},{result.trials}"
            )
    return lines


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_curve_csv(path, *results: CurveResult) -> None:
    lines = [CSV_HEADER]
    for result in results:
        lines.extend(curve_csv_lines(result)[1:])
    atomic_write_text(path, "\n".join(lines) + "\n")
