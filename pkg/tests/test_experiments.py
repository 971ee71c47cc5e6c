import math

import numpy as np
import pytest

from srsparse.bayes import ls_estimate_rows
from srsparse.experiments import (
    CSV_HEADER,
    ConfigError,
    CurveResult,
    EstimatorSpec,
    ExperimentConfig,
    _evaluate_point,
    _resolve,
    _sample_batch,
    curve_csv_lines,
    experiment_from_config,
    mse,
    parse_config,
    parse_estimator,
    parse_estimators,
    psnr,
    run_bernoulli_sweep,
    run_cardinality_sweep,
    run_mse_sweep,
    write_curve_csv,
)
from srsparse.model import RngSeed, fixed_cardinality_prior, make_random_dictionary
from srsparse.pursuits import PursuitSpec
from srsparse.sr import BernoulliMask, _noise_block


# ---------------------------------------------------------------------------
# config text parsing


def test_parse_config_skips_comments_and_blanks():
    text = "# comment\n\nscenario = demo\ntrials = 10\n"
    assert parse_config(text) == {"scenario": "demo", "trials": "10"}


def test_parse_config_rejects_unknown_key_with_line_number():
    with pytest.raises(ConfigError, match=r"line 2: unknown key 'bogus'"):
        parse_config("scenario = x\nbogus = 1\n")


def test_parse_config_rejects_duplicates_and_bad_syntax():
    with pytest.raises(ConfigError, match="duplicate key 'trials'"):
        parse_config("trials = 1\ntrials = 2\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("just some words\n")


def test_numeric_keys_report_the_offending_key():
    cfg = {"scenario": "x", "sigma_nu": "abc"}
    with pytest.raises(ConfigError, match="sigma_nu"):
        from srsparse.experiments import _as_float

        _as_float(cfg, "sigma_nu")


# ---------------------------------------------------------------------------
# estimator mini-language


def test_parse_plain_estimators():
    est = parse_estimator("omp")
    assert est.kind == "plain" and est.pursuit == "omp" and est.coefficients == "ls"
    est = parse_estimator("omp(oracle)")
    assert est.coefficients == "oracle" and est.label == "omp(oracle)"


def test_parse_exact_estimators():
    assert parse_estimator("mmse").kind == "mmse"
    assert parse_estimator("map").kind == "map"
    assert parse_estimator("oracle").kind == "oracle"
    with pytest.raises(ConfigError):
        parse_estimator("mmse(omp)")


def test_parse_sr_estimators():
    est = parse_estimator("alg2(bp, ls, K=300, sigma_n=0.4)")
    assert est.kind == "alg2" and est.pursuit == "bp" and est.averaging == "ls"
    assert est.iterations == 300 and est.sigma_n == 0.4
    assert est.label == "alg2(bp,ls,K=300,sigma_n=0.4)"
    est = parse_estimator("alg1(omp, noise=uniform, domain=representation)")
    assert est.averaging == "posterior" and est.noise == "uniform"
    assert est.domain == "representation"
    est = parse_estimator("alg2(matched, ls, noise=mask, p=0.8)")
    assert est.noise == "mask" and est.keep_prob == 0.8


def test_parse_estimator_rejects_malformed_tokens():
    for bad in (
        "alg2(omp)",
        "alg1()",
        "alg1(quux)",
        "alg2(omp, mean)",
        "newton",
        "alg1(omp, K=x)",
        "alg1(omp, foo=1)",
        "alg1(omp",
        "omp(fast)",
    ):
        with pytest.raises(ConfigError):
            parse_estimator(bad)


def test_parse_estimators_splits_on_top_level_commas_only():
    specs = parse_estimators("omp, alg2(bp, ls, K=10), mmse")
    assert [s.label for s in specs] == ["omp", "alg2(bp,ls,K=10)", "mmse"]
    with pytest.raises(ConfigError, match="duplicate"):
        parse_estimators("omp, omp")


def test_resolve_fills_swept_fields_only_when_unset():
    cfg = _make_cfg(sweep="iterations", grid=(5.0, 20.0), sigma_n=0.3)
    est = parse_estimator("alg1(omp)")
    resolved = _resolve(est, cfg, 20.0)
    assert resolved.iterations == 20 and resolved.sigma_n == 0.3
    pinned = parse_estimator("alg1(omp, K=7, sigma_n=0.1)")
    resolved = _resolve(pinned, cfg, 20.0)
    assert resolved.iterations == 7 and resolved.sigma_n == 0.1


# ---------------------------------------------------------------------------
# sweep mechanics


def _make_cfg(**overrides) -> ExperimentConfig:
    seed = RngSeed(overrides.pop("seed", 11))
    n = overrides.pop("n", 16)
    m = overrides.pop("m", 24)
    dictionary = make_random_dictionary(n, m, seed.child(100))
    prior = fixed_cardinality_prior(
        overrides.pop("cardinality", 1), 1.0, overrides.pop("sigma_nu", 0.2)
    )
    base = dict(
        scenario="test",
        dictionary=dictionary,
        prior=prior,
        estimators=parse_estimators(overrides.pop("estimators", "omp")),
        sweep="sigma_n",
        grid=(0.3,),
        trials=4,
        seed=seed,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def test_config_validation():
    with pytest.raises(ConfigError, match="grid"):
        _make_cfg(grid=())
    with pytest.raises(ConfigError, match="trials"):
        _make_cfg(trials=0)
    with pytest.raises(ConfigError, match="cardinality"):
        _make_cfg(sweep="cardinality", grid=(0.0, 1.0))
    with pytest.raises(ConfigError, match="sweep"):
        _make_cfg(sweep="temperature")


def test_degenerate_sweep_equals_direct_invocation():
    cfg = _make_cfg(trials=1, estimators="omp", grid=(0.5,))
    result = run_mse_sweep(cfg)
    batch = _sample_batch(cfg.dictionary, cfg.prior, 1, cfg.seed.child(0, 0))
    supports = PursuitSpec(method="omp", sparsity=1).run_rows(batch.ys, cfg.dictionary)
    direct = ls_estimate_rows(cfg.dictionary, batch.ys, supports)
    expected = float(np.sum((direct[0] - batch.alphas[0]) ** 2))
    assert result.mse_mean[0, 0] == expected
    assert result.mse_stderr[0, 0] == 0.0


def test_sweep_is_reproducible_and_thread_invariant(tmp_path):
    kwargs = dict(
        trials=6,
        estimators="omp, alg1(omp, K=8), mmse",
        grid=(0.2, 0.4, 0.6),
        n=10,
        m=14,
    )
    a = run_mse_sweep(_make_cfg(**kwargs))
    b = run_mse_sweep(_make_cfg(**kwargs))
    threaded = run_mse_sweep(_make_cfg(threads=3, **kwargs))
    assert np.array_equal(a.mse_mean, b.mse_mean, equal_nan=True)
    assert np.array_equal(a.signal_stderr, b.signal_stderr, equal_nan=True)
    assert np.array_equal(a.mse_mean, threaded.mse_mean, equal_nan=True)

    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_curve_csv(p1, a)
    write_curve_csv(p2, threaded)
    assert p1.read_bytes() == p2.read_bytes()


def test_estimator_ordering_mmse_alg1_map():
    # posterior mixtures dominate: MMSE <= Alg1 <= single-support MAP
    cfg = _make_cfg(
        n=8,
        m=10,
        trials=250,
        estimators="mmse, alg1(omp, K=60), map",
        grid=(0.3,),
        seed=5,
    )
    result = run_mse_sweep(cfg)
    mmse_v, alg1_v, map_v = result.mse_mean[0]
    se = float(np.max(result.mse_stderr[0]))
    assert mmse_v <= alg1_v + se
    assert alg1_v <= map_v + se


def test_infeasible_exhaustive_estimator_is_marked_absent():
    seed = RngSeed(3)
    dictionary = make_random_dictionary(12, 25, seed.child(100))
    from srsparse.model import bernoulli_prior

    cfg = ExperimentConfig(
        scenario="absent",
        dictionary=dictionary,
        prior=bernoulli_prior(0.1, 25, 1.0, 0.2),
        estimators=parse_estimators("omp, mmse"),
        sweep="sigma_n",
        grid=(0.2,),
        trials=3,
        seed=seed,
        epsilon=0.25,
    )
    result = run_mse_sweep(cfg)
    assert math.isfinite(result.mse_mean[0, 0])
    assert math.isnan(result.mse_mean[0, 1])
    lines = curve_csv_lines(result)
    assert any(line.startswith("0.2,mmse,nan,nan,3") for line in lines)


def test_csv_layout_and_signal_rows():
    cfg = _make_cfg(trials=2, estimators="omp, oracle", grid=(0.1, 0.2))
    result = run_mse_sweep(cfg)
    lines = curve_csv_lines(result)
    assert lines[0] == CSV_HEADER
    assert len(lines) == 1 + 2 * 2 * 2
    assert lines[1].startswith("0.1,omp,")
    assert lines[2].startswith("0.1,omp/signal,")
    # stderr column is non-negative wherever present
    for line in lines[1:]:
        parts = line.split(",")
        if parts[-2] != "nan":
            assert float(parts[-2]) >= 0.0


def test_sigma_nu_sweep_changes_the_prior():
    cfg = _make_cfg(sweep="sigma_nu", grid=(0.05, 0.8), estimators="oracle", trials=40)
    result = run_mse_sweep(cfg)
    assert result.mse_mean[0, 0] < result.mse_mean[1, 0]


# ---------------------------------------------------------------------------
# cardinality sweep


def test_cardinality_sweep_zero_noise_column_matches_plain_pursuit():
    cfg = _make_cfg(
        n=20,
        m=30,
        sweep="cardinality",
        grid=(1.0, 2.0),
        estimators="sp, alg2(sp, ls, K=5)",
        trials=30,
        inner_grid=(0.0,),
        holdout_trials=10,
    )
    result = run_cardinality_sweep(cfg)
    assert np.allclose(result.mse_mean[:, 0], result.mse_mean[:, 1], atol=1e-12)


def test_cardinality_sweep_requires_matching_sweep_field():
    cfg = _make_cfg(sweep="sigma_n", grid=(0.1,))
    with pytest.raises(ConfigError):
        run_cardinality_sweep(cfg)


# ---------------------------------------------------------------------------
# multiplicative-mask sweep


def test_keep_all_mask_equals_zero_noise_baseline():
    cfg = _make_cfg(
        sweep="keep_prob",
        grid=(1.0,),
        gauss_grid=(0.0,),
        estimators="alg2(matched, ls, noise=mask, K=6), alg2(matched, ls, K=6)",
        trials=25,
    )
    mask_curve, gauss_curve, summary = run_bernoulli_sweep(cfg)
    assert mask_curve.mse_mean[0, 0] == gauss_curve.mse_mean[0, 0]
    assert summary["ratio"] == 1.0


def test_bernoulli_sweep_requires_both_estimator_families():
    cfg = _make_cfg(
        sweep="keep_prob",
        grid=(0.5,),
        gauss_grid=(0.1,),
        estimators="alg2(matched, ls, K=6)",
    )
    with pytest.raises(ConfigError):
        run_bernoulli_sweep(cfg)


def test_mask_row_usage_scales_with_keep_probability():
    # FLOP proxy: the pursuit only touches rows the mask keeps, so the
    # mean number of surviving rows per iteration must track p * n.
    n, iters = 200, 2000
    for p in (0.3, 0.7):
        block = _noise_block(BernoulliMask(p), iters, n, RngSeed(17))
        counts = block.sum(axis=1)
        expected = p * n
        se = math.sqrt(n * p * (1 - p) / iters)
        assert abs(counts.mean() - expected) < 4 * se


# ---------------------------------------------------------------------------
# metrics


def test_mse_examples():
    assert mse(np.array([1.0, 0.0]), np.array([0.0, 0.0])) == 0.5
    alpha = np.array([0.3, -1.2, 0.0, 2.0])
    assert np.isclose(mse(np.zeros(4), alpha), np.sum(alpha**2) / 4)
    assert mse(alpha, alpha) == 0.0
    with pytest.raises(ValueError):
        mse(np.zeros(3), np.zeros(4))


def test_psnr_examples():
    img = np.full((4, 4), 100.0)
    assert psnr(img, img) == math.inf
    off = img + 10.0
    assert np.isclose(psnr(off, img), 10 * math.log10(255**2 / 100.0))
    with pytest.raises(ValueError):
        psnr(img, np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# config file integration


def test_experiment_from_config_round_trip(tmp_path):
    text = """
scenario = tiny
n = 12
m = 18
cardinality = 1
sigma_nu = 0.2
sweep = sigma_n
grid = 0.2, 0.4
trials = 5
seed = 9
estimators = omp, alg1(omp, K=4)
"""
    cfg_map = parse_config(text)
    cfg_map["__text__"] = text
    cfg = experiment_from_config(cfg_map)
    assert cfg.dictionary.n == 12 and cfg.dictionary.m == 18
    assert cfg.grid == (0.2, 0.4) and cfg.trials == 5
    assert len(cfg.config_hash) == 16
    other = experiment_from_config(cfg_map, seed_override=10)
    assert other.config_hash != cfg.config_hash
    result = run_mse_sweep(cfg)
    assert result.mse_mean.shape == (2, 2)
    assert np.all(np.isfinite(result.mse_mean))


def test_experiment_from_config_rejects_bad_values():
    base = {
        "scenario": "x",
        "n": "8",
        "m": "12",
        "sigma_nu": "0.2",
        "grid": "0.1",
        "trials": "2",
        "estimators": "omp",
    }
    for key, value, pattern in (
        ("trials", "many", "trials"),
        ("grid", "", "grid"),
        ("estimators", "alg3(omp)", "alg3"),
        ("m", "0", "'n' and 'm'"),
    ):
        broken = dict(base)
        broken[key] = value
        with pytest.raises(ConfigError, match=pattern):
            experiment_from_config(broken)


def test_bernoulli_prior_requires_no_cardinality_key():
    cfg = {
        "scenario": "x",
        "n": "8",
        "m": "12",
        "sigma_nu": "0.2",
        "grid": "0.1",
        "trials": "2",
        "estimators": "omp",
        "bernoulli_p": "0.1",
        "cardinality": "2",
        "epsilon": "0.3",
    }
    with pytest.raises(ConfigError, match="mutually exclusive"):
        experiment_from_config(cfg)
