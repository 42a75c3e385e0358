import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from benthicbnn import uncertainty as un
from benthicbnn.bnn import PredictiveSamples
from benthicbnn.errors import ConfigurationError, DataError


def _simplex(rng, T, K):
    return rng.dirichlet(np.full(K, 0.5), size=T)


def _brute(s):
    """Per-sample loops, straight from the definitions."""
    T, K = s.shape
    ybar = s.mean(axis=0)
    ale = sum(np.diag(y) - np.outer(y, y) for y in s) / T
    epi = sum(np.outer(y - ybar, y - ybar) for y in s) / T
    return ale, epi


def test_same_one_hot_is_certain():
    d = un.decompose(PredictiveSamples(np.tile(np.eye(5)[2], (4, 1))))
    np.testing.assert_array_equal(d.aleatoric, 0)
    np.testing.assert_array_equal(d.epistemic, 0)


def test_even_two_class_aleatoric():
    d = un.decompose(np.full((3, 2), 0.5))
    np.testing.assert_allclose(d.aleatoric, [[0.25, -0.25], [-0.25, 0.25]])
    np.testing.assert_allclose(d.epistemic, 0)


def test_disagreeing_confident_samples_epistemic():
    d = un.decompose(np.array([[1.0, 0.0], [0.0, 1.0]]))
    np.testing.assert_allclose(d.aleatoric, 0)
    np.testing.assert_allclose(d.epistemic, [[0.25, -0.25], [-0.25, 0.25]])
    assert un.score(d).epistemic == pytest.approx(0.5)


def test_zero_matrices_score_zero():
    d = un.UncertaintyDecomposition(np.zeros((3, 3)), np.zeros((3, 3)))
    assert un.score(d) == un.UncertaintyScore(0.0, 0.0)


def test_max_diag_reduction():
    d = un.decompose(np.array([[0.7, 0.2, 0.1], [0.1, 0.2, 0.7]]))
    s = un.score(d, "max_diag")
    assert s.epistemic == pytest.approx(max(np.diag(d.epistemic)))
    with pytest.raises(ConfigurationError):
        un.score(d, "median")


def test_matches_brute_force():
    rng = np.random.default_rng(0)
    for T in (2, 7, 30):
        s = _simplex(rng, T, 5)
        ale, epi = _brute(s)
        d = un.decompose(s)
        np.testing.assert_allclose(d.aleatoric, ale, atol=1e-14)
        np.testing.assert_allclose(d.epistemic, epi, atol=1e-14)


def test_identity_psd_and_row_sums():
    rng = np.random.default_rng(1)
    for i in range(1000):
        T = (2, 10, 100)[i % 3]
        s = _simplex(rng, T, 5)
        d = un.decompose(s)
        ybar = s.mean(axis=0)
        np.testing.assert_allclose(d.total, np.diag(ybar) - np.outer(ybar, ybar), rtol=0, atol=1e-12)
        for m in (d.aleatoric, d.epistemic):
            assert np.linalg.eigvalsh(m).min() >= -1e-10
            assert np.abs(m.sum(axis=1)).max() < 1e-10


def test_batched_matches_single():
    rng = np.random.default_rng(2)
    s = np.stack([_simplex(rng, 6, 5) for _ in range(4)], axis=1)  # (T, N, K)
    d = un.decompose(s)
    for n in range(4):
        single = un.decompose(s[:, n])
        np.testing.assert_allclose(d.aleatoric[n], single.aleatoric, atol=1e-15)
        np.testing.assert_allclose(d.epistemic[n], single.epistemic, atol=1e-15)


def test_trace_scores_fast_path():
    rng = np.random.default_rng(3)
    s = np.stack([_simplex(rng, 8, 5) for _ in range(10)], axis=1)
    a, e = un.trace_scores(s)
    sc = un.score(un.decompose(s))
    np.testing.assert_allclose(a, sc.aleatoric, atol=1e-14)
    np.testing.assert_allclose(e, sc.epistemic, atol=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 20), st.integers(2, 6))
def test_permutation_invariant_and_bounded(seed, T, K):
    rng = np.random.default_rng(seed)
    s = _simplex(rng, T, K)
    a = un.score(un.decompose(s))
    b = un.score(un.decompose(s[rng.permutation(T)]))
    assert a.aleatoric == pytest.approx(b.aleatoric, abs=1e-14)
    assert a.epistemic == pytest.approx(b.epistemic, abs=1e-14)
    assert a.aleatoric >= -1e-15 and a.epistemic >= -1e-15
    assert a.epistemic <= 1 - 1 / K + 1e-12


def test_single_sample_rejected():
    with pytest.raises(ConfigurationError):
        un.decompose(np.array([[0.5, 0.5]]))


def test_off_simplex_rejected():
    with pytest.raises(DataError):
        un.decompose(np.array([[0.5, 0.6], [0.5, 0.5]]))
