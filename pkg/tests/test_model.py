import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srsparse.model import (
    Dictionary,
    FixedCardinality,
    IndependentBernoulli,
    PriorSpec,
    RngSeed,
    SUPPORT_ENUMERATION_LIMIT,
    TooLargeError,
    bernoulli_prior,
    canonical_support,
    dictionary_from_matrix,
    enumerate_supports,
    fixed_cardinality_prior,
    load_dictionary,
    log_support_prior,
    make_random_dictionary,
    make_unitary_dictionary,
    sample_signal,
    sample_support,
    save_dictionary,
    support_count,
)


def test_random_dictionary_unit_norms():
    d = make_random_dictionary(50, 100, RngSeed(7))
    norms = np.linalg.norm(d.atoms, axis=0)
    assert np.max(np.abs(norms - 1.0)) <= 1e-12
    assert d.kind == "overcomplete"
    assert (d.n, d.m) == (50, 100)


def test_square_random_dictionary_is_arbitrary_kind():
    d = make_random_dictionary(5, 5, RngSeed(0))
    assert d.kind == "arbitrary"


def test_gram_diagonal_is_one():
    d = make_random_dictionary(3, 3, RngSeed(1))
    assert np.allclose(np.diag(d.gram), 1.0, atol=1e-12)


def test_gram_offdiagonal_mean_near_zero():
    # atoms are isotropic, so off-diagonal inner products average to zero
    acc = []
    for seed in range(100):
        d = make_random_dictionary(25, 10, RngSeed(seed))
        g = d.gram
        acc.append(g[~np.eye(10, dtype=bool)].mean())
    assert abs(np.mean(acc)) < 3.0 / math.sqrt(25)


def test_unitary_dictionary_is_orthonormal():
    d = make_unitary_dictionary(100, RngSeed(3))
    assert d.kind == "unitary"
    assert np.max(np.abs(d.atoms.T @ d.atoms - np.eye(100))) < 1e-10
    assert abs(abs(np.linalg.det(make_unitary_dictionary(8, RngSeed(4)).atoms)) - 1.0) < 1e-10


def test_unitary_dictionary_n1():
    d = make_unitary_dictionary(1, RngSeed(5))
    assert d.atoms.shape == (1, 1)
    assert abs(abs(d.atoms[0, 0]) - 1.0) < 1e-12


def test_dictionary_rejects_bad_columns():
    with pytest.raises(ValueError):
        Dictionary(np.array([[1.0, 0.0], [0.0, 2.0]]), "arbitrary")
    with pytest.raises(ValueError):
        Dictionary(np.array([[1.0, 1.0], [0.0, 0.0]]), "unitary")
    with pytest.raises(ValueError):
        Dictionary(np.eye(3), "weird")


def test_dictionary_from_matrix_normalizes():
    d = dictionary_from_matrix(np.array([[3.0, 0.0], [4.0, 2.0]]))
    assert np.allclose(np.linalg.norm(d.atoms, axis=0), 1.0)
    assert d.kind == "arbitrary"


def test_atoms_are_read_only():
    d = make_random_dictionary(4, 6, RngSeed(2))
    with pytest.raises(ValueError):
        d.atoms[0, 0] = 0.0


def test_sample_signal_shapes_and_support():
    d = make_random_dictionary(50, 100, RngSeed(11))
    prior = fixed_cardinality_prior(1, 1.0, 0.2)
    s = sample_signal(d, prior, RngSeed(12))
    assert np.count_nonzero(s.alpha) == 1
    assert s.support == tuple(np.nonzero(s.alpha)[0])
    assert np.array_equal(s.x, d.atoms @ s.alpha)
    assert s.y.shape == (50,)


def test_sample_signal_energy_identity():
    # E||y||^2 = M sigma_alpha^2 + n sigma_nu^2 for unit-norm... holds exactly
    # only for M = 1; cross terms vanish in expectation either way.
    d = make_random_dictionary(20, 40, RngSeed(21))
    prior = fixed_cardinality_prior(1, 1.0, 0.2)
    g = RngSeed(22).generator()
    energies = [np.sum(sample_signal(d, prior, g).y ** 2) for _ in range(10_000)]
    expected = 1.0 + 20 * 0.2**2
    assert abs(np.mean(energies) - expected) / expected < 0.05


def test_sample_signal_deterministic():
    d = make_random_dictionary(10, 20, RngSeed(31))
    prior = fixed_cardinality_prior(3, 1.0, 0.1)
    a = sample_signal(d, prior, RngSeed(32))
    b = sample_signal(d, prior, RngSeed(32))
    c = sample_signal(d, prior, RngSeed(32, stream=1))
    assert np.array_equal(a.y, b.y) and a.support == b.support
    assert not np.array_equal(a.y, c.y)


def test_bernoulli_prior_allows_empty_support():
    d = make_random_dictionary(6, 4, RngSeed(41))
    prior = bernoulli_prior(0.05, 4, 1.0, 0.1)
    g = RngSeed(42).generator()
    draws = [sample_signal(d, prior, g) for _ in range(200)]
    empties = [s for s in draws if s.support == ()]
    assert empties, "expected at least one empty support at p=0.05"
    assert all(np.all(s.x == 0.0) for s in empties)


def test_fixed_cardinality_support_frequencies():
    # uniform over the 10 two-element supports of m=5
    g = RngSeed(51).generator()
    prior = FixedCardinality(2)
    counts = {}
    trials = 100_000
    for _ in range(trials):
        s = sample_support(prior, 5, g)
        counts[s] = counts.get(s, 0) + 1
    assert len(counts) == 10
    tol = 4 * math.sqrt(0.1 * 0.9 / trials)
    for c in counts.values():
        assert abs(c / trials - 0.1) < tol


def test_bernoulli_marginals():
    g = RngSeed(61).generator()
    prior = IndependentBernoulli((0.3, 0.3, 0.3, 0.3))
    trials = 50_000
    hits = np.zeros(4)
    for _ in range(trials):
        s = sample_support(prior, 4, g)
        for i in s:
            hits[i] += 1
    assert np.all(np.abs(hits / trials - 0.3) < 4 * math.sqrt(0.3 * 0.7 / trials))


def test_support_count_matches_paper_scale():
    assert support_count(FixedCardinality(1), 100) == 100
    assert support_count(FixedCardinality(3), 100) == 161_700
    assert support_count(IndependentBernoulli((0.5,) * 10), 10) == 1024


def test_enumerate_supports_small():
    assert enumerate_supports(FixedCardinality(1), 3) == [(0,), (1,), (2,)]
    assert enumerate_supports(FixedCardinality(3), 3) == [(0, 1, 2)]
    subsets = enumerate_supports(IndependentBernoulli((0.2, 0.2, 0.2)), 3)
    assert len(subsets) == 8 and () in subsets
    assert subsets == sorted(subsets)


def test_enumerate_supports_guard():
    assert math.comb(100, 5) > SUPPORT_ENUMERATION_LIMIT
    with pytest.raises(TooLargeError):
        enumerate_supports(FixedCardinality(5), 100)
    with pytest.raises(TooLargeError):
        enumerate_supports(IndependentBernoulli((0.5,) * 21), 21)


def test_log_support_prior():
    prior = FixedCardinality(2)
    assert log_support_prior(prior, 5, (0, 3)) == pytest.approx(-math.log(10))
    assert log_support_prior(prior, 5, (0,)) == -math.inf
    bern = IndependentBernoulli((0.1, 0.2, 0.3))
    expected = math.log(0.1) + math.log(1 - 0.2) + math.log(0.3)
    assert log_support_prior(bern, 3, (0, 2)) == pytest.approx(expected)
    total = np.logaddexp.reduce(
        [log_support_prior(bern, 3, s) for s in enumerate_supports(bern, 3)]
    )
    assert total == pytest.approx(0.0, abs=1e-12)


def test_dictionary_serialization_round_trip(tmp_path):
    d = make_random_dictionary(7, 12, RngSeed(71))
    path = tmp_path / "dict.txt"
    save_dictionary(d, path)
    loaded = load_dictionary(path)
    assert loaded.kind == d.kind
    assert np.array_equal(loaded.atoms, d.atoms)
    first = path.read_text().splitlines()[0]
    assert first == "7 12 overcomplete"


def test_unitary_serialization_round_trip(tmp_path):
    d = make_unitary_dictionary(5, RngSeed(72))
    path = tmp_path / "u.txt"
    save_dictionary(d, path)
    assert load_dictionary(path).kind == "unitary"


def test_rng_child_streams_differ():
    root = RngSeed(9)
    a = root.child(0, 1).generator().normal(size=4)
    b = root.child(0, 2).generator().normal(size=4)
    c = root.child(0, 1).generator().normal(size=4)
    assert np.array_equal(a, c)
    assert not np.array_equal(a, b)


def test_prior_spec_validation():
    with pytest.raises(ValueError):
        PriorSpec(FixedCardinality(1), 0.0, 0.1)
    with pytest.raises(ValueError):
        fixed_cardinality_prior(5, 1.0, 0.1).validate_for(3)
    with pytest.raises(ValueError):
        bernoulli_prior(0.5, 4, 1.0, 0.1).validate_for(3)
    with pytest.raises(ValueError):
        IndependentBernoulli((0.0, 0.5))


@given(st.lists(st.integers(min_value=0, max_value=30), max_size=12))
def test_canonical_support_is_sorted_and_unique(indices):
    s = canonical_support(indices)
    assert list(s) == sorted(set(indices))
    assert canonical_support(s) == s


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**32 - 1))
def test_sampled_supports_are_canonical(m, seed):
    prior = FixedCardinality(min(2, m))
    s = sample_support(prior, m, RngSeed(seed))
    assert s == canonical_support(s, m)
    assert len(s) == min(2, m)
