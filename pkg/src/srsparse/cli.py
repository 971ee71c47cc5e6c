"""Command-line front end.

Subcommands bind key=value config files to the experiment runners and
write CSV/PGM artifacts into the output directory. Exit codes: 0 success,
1 config problem (message names the offending key or line), 2 runtime
failure. All artifacts are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import tempfile

import numpy as np

from . import single_atom as sa
from .experiments import (
    CSV_HEADER,
    ConfigError,
    atomic_write_text,
    curve_csv_lines,
    experiment_from_config,
    load_config,
    run_bernoulli_sweep,
    run_cardinality_sweep,
    run_mse_sweep,
    _as_float,
    _as_floats,
    _as_int,
    _get,
)
from .imaging import (
    add_noise,
    denoise_image,
    overcomplete_dct_dictionary,
    read_pgm,
    standard_test_image,
    write_pgm,
)
from .model import (
    RngSeed,
    fixed_cardinality_prior,
    make_random_dictionary,
    make_unitary_dictionary,
    sample_signal,
    save_dictionary,
)
from .unitary import (
    UnitaryModel,
    mmse_shrinkage,
    subtractive_hard_threshold_mean,
    tune_sure,
)

OUT_DIR_ENV = "SRSPARSE_OUT_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="srsparse", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name, needs_config in (
        ("gen-dict", True),
        ("sweep", True),
        ("sure-tune", True),
        ("single-atom", True),
        ("denoise", True),
        ("selftest", False),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=needs_config)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
    return parser


def _out_dir(args) -> str:
    out = args.out or os.environ.get(OUT_DIR_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _scenario_path(out: str, cfg: dict, suffix: str) -> str:
    return os.path.join(out, f"{_get(cfg, 'scenario')}{suffix}")


def _stat_rows(value: float, label: str, per_trial: np.ndarray) -> list[str]:
    mean = float(per_trial.mean())
    stderr = (
        float(per_trial.std(ddof=1) / math.sqrt(per_trial.size)) if per_trial.size > 1 else 0.0
    )
    return [f"{value:.10g},{label},{mean:.10g},{stderr:.10g},{per_trial.size}"]


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_gen_dict(cfg: dict, args) -> int:
    out = _out_dir(args)
    seed = RngSeed(_as_int(cfg, "seed", "0") if args.seed is None else args.seed)
    kind = _get(cfg, "dictionary", "overcomplete")
    n = _as_int(cfg, "n")
    if kind == "unitary":
        dictionary = make_unitary_dictionary(n, seed.child(100))
    else:
        dictionary = make_random_dictionary(n, _as_int(cfg, "m"), seed.child(100))
    path = _scenario_path(out, cfg, ".dict")
    fd, tmp = tempfile.mkstemp(dir=out, suffix=".tmp")
    os.close(fd)
    try:
        save_dictionary(dictionary, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    print(f"wrote {path} ({dictionary.n}x{dictionary.m} {dictionary.kind})")
    return 0


def _cmd_sweep(cfg: dict, args) -> int:
    out = _out_dir(args)
    experiment = experiment_from_config(cfg, seed_override=args.seed, threads=args.threads)
    mode = _get(cfg, "mode", "mse")
    path = _scenario_path(out, cfg, ".csv")
    if mode == "mse":
        result = run_mse_sweep(experiment)
        lines = curve_csv_lines(result)
    elif mode == "cardinality":
        result = run_cardinality_sweep(experiment)
        lines = curve_csv_lines(result)
    elif mode == "bernoulli":
        mask_curve, gauss_curve, summary = run_bernoulli_sweep(experiment)
        lines = curve_csv_lines(mask_curve) + curve_csv_lines(gauss_curve)[1:]
        print(
            f"optimal mask mse {summary['mask_best']:.6g}, "
            f"optimal gaussian mse {summary['gauss_best']:.6g}, "
            f"ratio {summary['ratio']:.4f}"
        )
    else:
        raise ConfigError(f"key 'mode': unknown sweep mode {mode!r}")
    atomic_write_text(path, "\n".join(lines) + "\n")
    print(f"wrote {path}")
    return 0


def _sample_unitary_batch(model: UnitaryModel, m: int, trials: int, seed: RngSeed):
    g = seed.generator(0)
    p = model.p if np.isscalar(model.p) else np.asarray(model.p)
    active = g.random((trials, m)) < p
    alphas = np.where(active, g.normal(0.0, model.sigma_alpha, size=(trials, m)), 0.0)
    betas = alphas + g.normal(0.0, model.sigma_nu, size=(trials, m))
    return alphas, betas


def _cmd_sure_tune(cfg: dict, args) -> int:
    out = _out_dir(args)
    m = _as_int(cfg, "m")
    model = UnitaryModel(
        _as_float(cfg, "sigma_alpha", "1.0"),
        _as_float(cfg, "sigma_nu"),
        _as_float(cfg, "bernoulli_p"),
    )
    trials = _as_int(cfg, "trials")
    seed = RngSeed(_as_int(cfg, "seed", "0") if args.seed is None else args.seed)
    points = _as_int(cfg, "lambda_grid_points", "30")
    alphas, betas = _sample_unitary_batch(model, m, trials, seed)
    lambdas = np.linspace(0.0, 3.0 * model.max_lambda_map, points)
    sigmas = np.geomspace(0.05 * model.sigma_nu, 5.0 * model.sigma_nu, points)
    lam, sigma_n = tune_sure(betas, model, lambdas, sigmas)
    estimates = {
        "sure-tuned": subtractive_hard_threshold_mean(betas, lam, sigma_n, model.c_squared),
        "mmse-shrinkage": mmse_shrinkage(betas, model),
        "map-threshold": subtractive_hard_threshold_mean(
            betas, model.max_lambda_map, 0.0, model.c_squared
        ),
    }
    lines = [CSV_HEADER]
    for label, est in estimates.items():
        per_trial = np.sum((est - alphas) ** 2, axis=1)
        lines += _stat_rows(model.sigma_nu, label, per_trial)
    path = _scenario_path(out, cfg, ".csv")
    atomic_write_text(path, "\n".join(lines) + "\n")
    print(f"tuned lambda={lam:.6g} sigma_n={sigma_n:.6g}; wrote {path}")
    return 0


def _cmd_single_atom(cfg: dict, args) -> int:
    out = _out_dir(args)
    mode = _get(cfg, "mode", "histograms")
    seed = RngSeed(_as_int(cfg, "seed", "0") if args.seed is None else args.seed)
    n, m = _as_int(cfg, "n"), _as_int(cfg, "m")
    prior = fixed_cardinality_prior(
        1, _as_float(cfg, "sigma_alpha", "1.0"), _as_float(cfg, "sigma_nu")
    )
    dictionary = make_random_dictionary(n, m, seed.child(100))
    path = _scenario_path(out, cfg, ".csv")

    if mode == "histograms":
        sigma_n = _as_float(cfg, "sigma_n")
        iterations = _as_int(cfg, "iterations", "2000")
        signal = sample_signal(dictionary, prior, seed.child(0))
        histograms = [
            sa.sr_empirical_histogram(signal.y, dictionary, sigma_n, iterations, seed.child(1)),
            sa.sr_integral_histogram(signal.y, dictionary, sigma_n),
            sa.mmse_support_histogram(signal.y, dictionary, prior),
            sa.map_degenerate_histogram(signal.y, dictionary),
        ]
        tmp = path + ".tmp"
        sa.save_histograms(tmp, histograms)
        os.replace(tmp, path)
        print(f"wrote {path}")
        return 0

    if mode == "kl":
        grid = _as_floats(cfg, "grid")
        trials = _as_int(cfg, "trials")
        kl = np.zeros((trials, len(grid)))
        err = np.zeros((trials, len(grid)))
        for t in range(trials):
            signal = sample_signal(dictionary, prior, seed.child(0, t))
            mmse_h = sa.mmse_support_histogram(signal.y, dictionary, prior)
            for gi, sigma_n in enumerate(grid):
                integral = sa.sr_integral_histogram(signal.y, dictionary, sigma_n)
                kl[t, gi] = sa.kl_divergence(integral, mmse_h)
                estimate = sa.single_atom_asymptotic_estimate(
                    signal.y, dictionary, sigma_n, prior
                )
                err[t, gi] = float(np.sum((estimate - signal.alpha) ** 2))
        lines = [CSV_HEADER]
        for gi, sigma_n in enumerate(grid):
            lines += _stat_rows(sigma_n, "kl-sr-vs-mmse", kl[:, gi])
            lines += _stat_rows(sigma_n, "sr-mse", err[:, gi])
        atomic_write_text(path, "\n".join(lines) + "\n")
        print(f"wrote {path}")
        return 0

    if mode == "domains":
        grid = _as_floats(cfg, "grid")
        trials = _as_int(cfg, "trials")
        iterations = _as_int(cfg, "iterations", "500")
        signal_curve, repr_curve = sa.domain_equivalence_experiment(
            dictionary, prior, grid, trials, iterations, seed
        )
        lines = [CSV_HEADER]
        for gi, sigma_n in enumerate(grid):
            lines.append(f"{sigma_n:.10g},signal-domain,{signal_curve[gi]:.10g},nan,{trials}")
            lines.append(
                f"{sigma_n:.10g},representation-domain,{repr_curve[gi]:.10g},nan,{trials}"
            )
        atomic_write_text(path, "\n".join(lines) + "\n")
        print(f"wrote {path}")
        return 0

    raise ConfigError(f"key 'mode': unknown single-atom mode {mode!r}")


def _cmd_denoise(cfg: dict, args) -> int:
    out = _out_dir(args)
    seed = RngSeed(_as_int(cfg, "seed", "0") if args.seed is None else args.seed)
    image_key = _get(cfg, "image", "builtin")
    clean = standard_test_image() if image_key == "builtin" else read_pgm(image_key)
    sigma = _as_float(cfg, "noise_sigma")
    sparsity = _as_int(cfg, "patch_sparsity", "4")
    iterations = _as_int(cfg, "sr_iterations", "16")
    sigma_grid = _as_floats(cfg, "sr_grid", "20.0")
    clean_f = clean.astype(float)
    noisy = add_noise(clean_f, sigma, seed.child(0))
    dictionary = overcomplete_dct_dictionary()
    report = denoise_image(
        noisy, clean_f, dictionary, sigma, sparsity, sigma_grid, iterations, seed.child(1)
    )
    write_pgm(_scenario_path(out, cfg, "-noisy.pgm"), noisy)
    write_pgm(_scenario_path(out, cfg, "-plain.pgm"), report.plain)
    write_pgm(_scenario_path(out, cfg, "-sr.pgm"), report.sr)
    lines = [CSV_HEADER]
    for label, value in (
        ("noisy", report.psnr_noisy),
        ("sp", report.psnr_plain),
        ("sr-sp", report.psnr_sr),
    ):
        lines.append(f"{sigma:.10g},{label},{value:.10g},nan,1")
    path = _scenario_path(out, cfg, ".csv")
    atomic_write_text(path, "\n".join(lines) + "\n")
    print(
        f"psnr noisy {report.psnr_noisy:.2f} dB, sp {report.psnr_plain:.2f} dB, "
        f"sr-sp {report.psnr_sr:.2f} dB (sigma_n {report.sigma_n:.3g}); wrote {path}"
    )
    return 0


# ---------------------------------------------------------------------------
# selftest


def _check_exact_mmse() -> None:
    from .bayes import exhaustive_mmse, weighted_average_over_set
    from .model import enumerate_supports

    seed = RngSeed(7)
    dictionary = make_random_dictionary(8, 10, seed.child(100))
    prior = fixed_cardinality_prior(1, 1.0, 0.2)
    supports = enumerate_supports(prior, 10)
    for t in range(20):
        signal = sample_signal(dictionary, prior, seed.child(0, t))
        full = weighted_average_over_set(dictionary, prior, signal.y, supports)
        exact = exhaustive_mmse(dictionary, prior, signal.y)
        if not np.allclose(full, exact, atol=1e-10):
            raise AssertionError("support-set average disagrees with exhaustive MMSE")


def _check_patch_round_trip() -> None:
    from .imaging import assemble_patches, extract_patches

    img = standard_test_image()[:32, :48].astype(float)
    patches, means = extract_patches(img)
    back = assemble_patches(patches, means, img.shape)
    if not np.allclose(back, img, atol=1e-10):
        raise AssertionError("patch decompose/reassemble is not exact")


def _check_pgm_round_trip() -> None:
    img = standard_test_image()[:16, :16]
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "t.pgm")
        write_pgm(path, img)
        if not np.array_equal(read_pgm(path), img):
            raise AssertionError("PGM round trip failed")


def _check_sweep_determinism() -> None:
    from .experiments import ExperimentConfig, parse_estimators, run_mse_sweep

    seed = RngSeed(3)
    cfg = ExperimentConfig(
        scenario="selftest",
        dictionary=make_random_dictionary(10, 14, seed.child(100)),
        prior=fixed_cardinality_prior(1, 1.0, 0.2),
        estimators=parse_estimators("omp, alg1(omp, K=6)"),
        sweep="sigma_n",
        grid=(0.2, 0.4),
        trials=5,
        seed=seed,
    )
    a = run_mse_sweep(cfg)
    b = run_mse_sweep(cfg)
    if not np.array_equal(a.mse_mean, b.mse_mean):
        raise AssertionError("sweep is not deterministic")


def _check_unitary_shrinkage() -> None:
    model = UnitaryModel(1.0, 0.2, 0.05)
    beta = np.linspace(-3, 3, 101)
    psi = mmse_shrinkage(beta, model)
    if not np.all(np.abs(psi) <= model.c_squared * np.abs(beta) + 1e-12):
        raise AssertionError("shrinkage exceeds the linear oracle bound")


def _cmd_selftest(args) -> int:
    checks = (
        ("exact-mmse-equality", _check_exact_mmse),
        ("patch-round-trip", _check_patch_round_trip),
        ("pgm-round-trip", _check_pgm_round_trip),
        ("sweep-determinism", _check_sweep_determinism),
        ("unitary-shrinkage-bound", _check_unitary_shrinkage),
    )
    failed = 0
    for name, check in checks:
        try:
            check()
        except Exception as exc:  # report every check before deciding
            failed += 1
            print(f"FAIL {name}: {exc}")
        else:
            print(f"ok   {name}")
    return 0 if failed == 0 else 2


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        if args.subcommand == "selftest":
            return _cmd_selftest(args)
        cfg = load_config(args.config)
        handler = {
            "gen-dict": _cmd_gen_dict,
            "sweep": _cmd_sweep,
            "sure-tune": _cmd_sure_tune,
            "single-atom": _cmd_single_atom,
            "denoise": _cmd_denoise,
        }[args.subcommand]
        return handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
