import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from parbals.acquisition import (
    BatchTooLargeError, Scores, bald_score, bald_scores, batchbald_joint_mi, batchbald_select,
    confidence_score, confidence_scores, entropy, epig_score, epig_scores, pairwise_joint,
    pairwise_mi, pairwise_mi_matrix, select_stochastic, select_top_b, stochastic_keys,
    validation_subsample,
)
from parbals.bayes_linear import PredictiveTensor, Prior, laplace_posterior
from parbals.oracles import brute_force_joint_mi

LN2 = math.log(2)


def loop_mi(pa, pb):
    """Independent joint-table MI: explicit sums, math.log, no vectorization."""
    k, c = len(pa), len(pa[0])
    J = [[sum(pa[j][y] * pb[j][z] for j in range(k)) / k for z in range(c)] for y in range(c)]
    r = [sum(J[y]) for y in range(c)]
    q = [sum(J[y][z] for y in range(c)) for z in range(c)]
    return sum(J[y][z] * math.log(J[y][z] / (r[y] * q[z]))
               for y in range(c) for z in range(c) if J[y][z] > 0)


def tensor(g, k, n, c, alpha=0.7):
    return g.dirichlet(np.ones(c) * alpha, size=(k, n))


# --- entropy, confidence, BALD -------------------------------------------


def test_entropy_values():
    assert entropy(np.array([0.5, 0.5])) == pytest.approx(0.693147, abs=1e-6)
    assert entropy(np.array([1.0, 0.0])) == 0.0
    assert entropy(np.array([0.9, 0.1])) == pytest.approx(0.325083, abs=1e-6)


@given(st.integers(0, 10_000), st.integers(2, 6))
def test_entropy_bounds(seed, c):
    p = np.random.default_rng(seed).dirichlet(np.ones(c) * 0.3)
    h = float(entropy(p))
    assert -1e-15 <= h <= math.log(c) + 1e-12


def test_confidence_examples():
    assert confidence_score(np.ones(4) / 4) == pytest.approx(0.75)
    assert confidence_score(np.array([1.0, 0.0, 0.0])) == 0.0


def test_confidence_argmax_stable_under_duplicates():
    g = np.random.default_rng(0)
    bma = g.dirichlet(np.ones(3), size=10)
    best = int(np.argmax(confidence_scores(bma)))
    extended = np.vstack([bma, bma[best], bma])
    assert select_top_b(confidence_scores(extended), 1) == [best]


def test_bald_examples():
    g = np.random.default_rng(1)
    assert bald_score(tensor(g, 1, 3, 3), 1) == pytest.approx(0.0, abs=1e-15)
    two = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    assert bald_score(two, 0) == pytest.approx(LN2, abs=1e-15)
    same = np.repeat(tensor(g, 1, 4, 3), 5, axis=0)
    np.testing.assert_allclose(bald_scores(same), 0.0, atol=1e-15)


# --- pairwise MI ----------------------------------------------------------


def test_pairwise_mi_perfectly_coupled():
    probs = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [0.0, 1.0]]])
    np.testing.assert_allclose(pairwise_joint(probs[:, 0], probs[:, 1]), [[0.5, 0], [0, 0.5]])
    assert pairwise_mi(probs) == pytest.approx(LN2, abs=1e-10)


def test_pairwise_mi_identical_samples_zero():
    g = np.random.default_rng(2)
    probs = np.repeat(tensor(g, 1, 2, 3), 6, axis=0)
    assert pairwise_mi(probs) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("seed", range(20))
def test_pairwise_mi_matches_loop_oracle(seed):
    g = np.random.default_rng(seed)
    k, c = int(g.integers(1, 6)), int(g.integers(2, 4))
    probs = tensor(g, k, 2, c)
    expected = loop_mi(probs[:, 0].tolist(), probs[:, 1].tolist())
    assert abs(pairwise_mi(probs) - expected) <= 1e-10


@given(st.integers(0, 10_000), st.integers(1, 8), st.integers(2, 5))
def test_pairwise_properties(seed, k, c):
    g = np.random.default_rng(seed)
    probs = tensor(g, k, 2, c, alpha=0.4)
    mi = pairwise_mi(probs)
    assert mi >= 0.0
    assert mi == pytest.approx(pairwise_mi(probs[:, ::-1]), abs=1e-12)
    h = entropy(probs.mean(axis=0))
    assert mi <= min(h) + 1e-9 and mi <= math.log(c) + 1e-12
    joint = pairwise_joint(probs[:, 0], probs[:, 1])
    assert joint.sum() == pytest.approx(1.0, abs=1e-9) and np.all(joint >= 0)
    np.testing.assert_allclose(joint.sum(axis=1), probs[:, 0].mean(axis=0), atol=1e-9)


@pytest.mark.parametrize("c", [2, 3, 5])
def test_pairwise_matrix_agrees_with_single_pairs(c):
    g = np.random.default_rng(c)
    val, pool = tensor(g, 7, 4, c), tensor(g, 7, 6, c)
    M = pairwise_mi_matrix(val, pool)
    for v in range(4):
        for i in range(6):
            expected = loop_mi(val[:, v].tolist(), pool[:, i].tolist())
            assert M[v, i] == pytest.approx(expected, abs=1e-12)


# --- EPIG -----------------------------------------------------------------


def test_epig_zero_for_uninformative_candidate():
    g = np.random.default_rng(3)
    pool = np.repeat(tensor(g, 1, 1, 3), 10, axis=0)
    assert epig_scores(pool, tensor(g, 10, 5, 3))[0] == pytest.approx(0.0, abs=1e-15)


def expected_conditional_entropy(val, pool):
    """sum_x E_yhat[H(Y_x | Y_xhat = yhat)] from explicit plug-in joints."""
    k, nv, c = val.shape
    out = np.zeros(pool.shape[1])
    for i in range(pool.shape[1]):
        for v in range(nv):
            J = pairwise_joint(val[:, v], pool[:, i])
            for z in range(c):
                pz = J[:, z].sum()
                if pz > 0:
                    out[i] += pz * entropy(J[:, z] / pz)
    return out


@pytest.mark.parametrize("seed", range(50))
def test_epig_equals_conditional_entropy_form(seed):
    g = np.random.default_rng(seed)
    c = int(g.integers(2, 4))
    val, pool = tensor(g, 6, 4, c), tensor(g, 6, 5, c)
    epig = epig_scores(pool, val)
    ece = expected_conditional_entropy(val, pool)
    diff = epig * val.shape[1] + ece
    np.testing.assert_allclose(diff, entropy(val.mean(axis=0)).sum(), atol=1e-9)
    assert int(np.argmax(epig)) == int(np.argmin(ece))


def test_epig_score_full_subsample_is_noop():
    g = np.random.default_rng(4)
    X, y = g.normal(size=(15, 2)), g.integers(0, 2, size=15)
    ens = laplace_posterior(X, y, 2, Prior(), k=30, seed=0)
    V = g.normal(size=(9, 2))
    full = epig_score(ens, V[0] + 0.5, V)
    for seed in (0, 1, 99):
        assert epig_score(ens, V[0] + 0.5, V, val_subsample=9, seed=seed) == full
    assert epig_score(ens, V[0] + 0.5, V, val_subsample=4, seed=1) != full


def test_validation_subsample():
    idx = validation_subsample(100, 10, seed=3, iteration=2)
    assert len(set(idx.tolist())) == 10 and np.all(np.diff(idx) > 0)
    assert not np.array_equal(idx, validation_subsample(100, 10, seed=3, iteration=3))
    np.testing.assert_array_equal(validation_subsample(5, 500, 0), np.arange(5))


# --- BatchBALD ------------------------------------------------------------


@pytest.mark.parametrize("seed", range(10))
def test_batchbald_b2_matches_enumeration(seed):
    probs = tensor(np.random.default_rng(seed), 3, 2, 2)
    assert batchbald_joint_mi(probs) == pytest.approx(brute_force_joint_mi(probs), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(2, 3))
def test_batchbald_single_point_is_bald(seed, k, c):
    probs = tensor(np.random.default_rng(seed), k, 1, c)
    assert abs(batchbald_joint_mi(probs) - bald_score(probs, 0)) <= 1e-12


@given(st.integers(0, 10_000))
def test_batchbald_monotone_in_batch(seed):
    probs = tensor(np.random.default_rng(seed), 4, 5, 2)
    values = [batchbald_joint_mi(probs[:, :n]) for n in range(1, 6)]
    assert all(b >= a - 1e-9 for a, b in zip(values, values[1:]))


def test_batchbald_identical_samples_zero():
    probs = np.repeat(tensor(np.random.default_rng(5), 1, 3, 3), 4, axis=0)
    assert batchbald_joint_mi(probs) == pytest.approx(0.0, abs=1e-12)


def test_batchbald_cap():
    probs = tensor(np.random.default_rng(6), 2, 13, 2)
    with pytest.raises(BatchTooLargeError, match="parbals"):
        batchbald_joint_mi(probs)
    with pytest.raises(BatchTooLargeError):
        batchbald_select(probs, 13)


def test_batchbald_greedy_matches_joint_recompute():
    probs = tensor(np.random.default_rng(7), 5, 8, 3)
    batch, gains = batchbald_select(probs, 3)
    assert len(set(batch)) == 3
    for t in range(3):
        assert gains[t] == pytest.approx(batchbald_joint_mi(probs[:, batch[: t + 1]]), abs=1e-10)
    assert batch[0] == int(np.argmax(bald_scores(probs)))


# --- top-B and stochastic variants ---------------------------------------


def test_top_b_examples():
    assert select_top_b([3, 1, 2], 2) == [0, 2]
    assert sorted(select_top_b([3, 1, 2], 3)) == [0, 1, 2]
    assert select_top_b([5, 5, 1], 1) == [0]
    assert select_top_b(Scores([0.1, 0.3], "bald"), 1) == [1]
    with pytest.raises(ValueError):
        select_top_b([1, 2], 3)


@given(st.lists(st.integers(-20, 20), min_size=1, max_size=30), st.data())
def test_top_b_invariant_under_increasing_transform(values, data):
    B = data.draw(st.integers(1, len(values)))
    v = np.array(values, dtype=float)
    assert select_top_b(v, B) == select_top_b(np.exp(v / 7) * 3 + 1, B)


def test_scores_reject_nonfinite():
    with pytest.raises(ValueError):
        Scores([1.0, np.nan], "bald")


@pytest.mark.parametrize("variant", ["power", "softmax", "softrank"])
def test_zero_noise_is_top_b(variant):
    s = np.random.default_rng(8).uniform(0.01, 1, size=20)
    got = select_stochastic(s, 5, variant, beta=1.0, noise=False)
    assert got == select_top_b(s, 5)


@pytest.mark.parametrize("variant", ["power", "softmax", "softrank"])
def test_stochastic_deterministic_per_seed(variant):
    s = np.random.default_rng(9).uniform(0.01, 1, size=30)
    a = select_stochastic(s, 6, variant, seed=4, iteration=2)
    assert a == select_stochastic(s, 6, variant, seed=4, iteration=2)
    assert len(set(a)) == 6


def test_key_formulas():
    s = np.array([0.5, 2.0, 1.0])
    np.testing.assert_allclose(stochastic_keys(s, "power", noise=False), np.log(s))
    np.testing.assert_allclose(stochastic_keys(s, "softmax", noise=False), s)
    np.testing.assert_allclose(stochastic_keys(s, "softrank", noise=False), -np.log([3, 1, 2]))


def draw_frequencies(s, variant, beta, draws=20_000):
    counts = np.zeros(len(s))
    for seed in range(draws):
        counts[select_stochastic(s, 1, variant, beta=beta, seed=seed)[0]] += 1
    return counts


@pytest.mark.parametrize("variant,beta,law", [
    ("power", 1.0, lambda s: s),
    ("power", 2.0, lambda s: s ** 2),
    ("softmax", 1.5, lambda s: np.exp(1.5 * s)),
    ("softrank", 1.0, lambda s: 1.0 / np.array([4, 3, 2, 1])),
])
def test_single_pick_sampling_law(variant, beta, law):
    s = np.array([0.1, 0.2, 0.3, 0.4])
    draws = 20_000
    p = law(s) / law(s).sum()
    counts = draw_frequencies(s, variant, beta, draws)
    sigma = np.sqrt(draws * p * (1 - p))
    assert np.all(np.abs(counts - draws * p) <= 3 * sigma), (counts, draws * p)


def test_power_clamps_nonpositive(caplog):
    keys = stochastic_keys(np.array([0.0, 1.0]), "power", noise=False)
    assert keys[0] == pytest.approx(np.log(1e-12))
    assert "clamping" in caplog.text


def test_bad_beta():
    with pytest.raises(ValueError):
        select_stochastic([1.0, 2.0], 1, "power", beta=0.0)
