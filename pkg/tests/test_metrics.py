import numpy as np
import pytest

from alrgan import metrics
from alrgan.errors import ConfigError, DataError
from alrgan.metrics import GaussianStats
from alrgan.ssm import SemMatrix
from alrgan.tensor import ShapeError, Tensor


def rand_psd(rng, d, scale=1.0):
    a = rng.normal(size=(d, d))
    return scale * (a @ a.T) / d + 0.1 * np.eye(d)


# ---------------------------------------------------------------- fid


def test_fid_identical_zero():
    rng = np.random.default_rng(0)
    s = GaussianStats(rng.normal(size=4), rand_psd(rng, 4))
    assert abs(metrics.fid(s, s)) <= 1e-9


def test_fid_1d_mean_shift():
    a = GaussianStats(np.array([0.0]), np.array([[1.0]]))
    b = GaussianStats(np.array([1.0]), np.array([[1.0]]))
    assert metrics.fid(a, b) == pytest.approx(1.0, abs=1e-9)


def test_fid_1d_variance_shift():
    # closed form: 1 + 4 - 2*sqrt(1*4) = 1
    a = GaussianStats(np.array([0.5]), np.array([[1.0]]))
    b = GaussianStats(np.array([0.5]), np.array([[4.0]]))
    assert metrics.fid(a, b) == pytest.approx(1.0, abs=1e-9)


def test_fid_symmetry_and_nonnegativity():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = GaussianStats(rng.normal(size=3), rand_psd(rng, 3))
        b = GaussianStats(rng.normal(size=3), rand_psd(rng, 3))
        ab, ba = metrics.fid(a, b), metrics.fid(b, a)
        assert ab == pytest.approx(ba, abs=1e-9)
        assert ab >= -1e-9


def test_fid_dimension_mismatch():
    a = GaussianStats(np.zeros(2), np.eye(2))
    b = GaussianStats(np.zeros(3), np.eye(3))
    with pytest.raises(ShapeError):
        metrics.fid(a, b)


def test_fid_rejects_non_psd():
    a = GaussianStats(np.zeros(2), np.array([[1.0, 0.0], [0.0, -0.5]]))
    b = GaussianStats(np.zeros(2), np.eye(2))
    with pytest.raises(DataError):
        metrics.fid(a, b)


def test_sqrt_eigh_matches_newton_schulz_oracle():
    rng = np.random.default_rng(2)
    for _ in range(100):
        m = rand_psd(rng, 3, scale=rng.uniform(0.2, 3.0))
        a = metrics._sqrt_psd(m)
        b = metrics.newton_schulz_sqrt(m)
        assert np.abs(a - b).max() <= 1e-6
        assert np.abs(a @ a - m).max() <= 1e-8


def test_gaussian_stats_unbiased_and_min_count():
    rng = np.random.default_rng(3)
    f = rng.normal(size=(10, 3))
    s = metrics.gaussian_stats(f)
    assert np.allclose(s.sigma, np.cov(f, rowvar=False))
    with pytest.raises(DataError):
        metrics.gaussian_stats(rng.normal(size=(3, 3)))


def test_stats_accumulator_merge_matches_single_pass():
    rng = np.random.default_rng(4)
    f = rng.normal(size=(40, 5))
    single = metrics.gaussian_stats(f)
    a, b = metrics.StatsAccumulator(5), metrics.StatsAccumulator(5)
    a.update(f[:17])
    b.update(f[17:])
    merged = a.merge(b).finalize()
    assert np.allclose(merged.mu, single.mu, atol=1e-12)
    assert np.allclose(merged.sigma, single.sigma, atol=1e-12)


# ---------------------------------------------------------------- inception score


def test_is_uniform_rows():
    p = np.full((7, 4), 0.25)
    assert metrics.inception_score(p) == pytest.approx(1.0, abs=1e-9)


def test_is_one_hot_balanced():
    c = 5
    assert metrics.inception_score(np.eye(c)) == pytest.approx(c, abs=1e-6)


def test_is_two_row_hand_value():
    # oracle: KL([1,0] || [.75,.25]) = ln(4/3); KL([.5,.5] || [.75,.25]) by hand
    p = np.array([[1.0, 0.0], [0.5, 0.5]])
    kl1 = np.log(1.0 / 0.75)
    kl2 = 0.5 * np.log(0.5 / 0.75) + 0.5 * np.log(0.5 / 0.25)
    expect = np.exp(0.5 * (kl1 + kl2))
    assert metrics.inception_score(p) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(1.24081, abs=1e-4)


def test_is_bounds():
    rng = np.random.default_rng(5)
    for _ in range(20):
        z = rng.normal(size=(6, 4)) * 3
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        val = metrics.inception_score(p)
        assert 1.0 - 1e-9 <= val <= 4.0 + 1e-9


def test_is_rejects_non_distribution():
    with pytest.raises(DataError):
        metrics.inception_score(np.array([[0.5, 0.4]]))


# ---------------------------------------------------------------- r-precision


def test_r_precision_exact_match():
    rng = np.random.default_rng(6)
    n, d = 8, 4
    q = np.eye(d)[rng.integers(0, d, size=n)]
    cands = np.zeros((n, 3, d))
    true_idx = rng.integers(0, 3, size=n)
    for i in range(n):
        for j in range(3):
            if j == true_idx[i]:
                cands[i, j] = q[i]
            else:
                # orthogonal negative
                k = np.argmax(q[i])
                cands[i, j, (k + 1 + j) % d] = 1.0
    assert metrics.r_precision(q, cands, true_idx, 3) == 100.0


def test_r_precision_chance_level():
    rng = np.random.default_rng(7)
    n, r, d = 10_000, 100, 8
    q = rng.normal(size=(n, d))
    c = rng.normal(size=(n, r, d))
    true_idx = rng.integers(0, r, size=n)
    score = metrics.r_precision(q, c, true_idx, r)
    assert abs(score - 1.0) <= 1.0


def test_r_precision_tie_breaks_to_lowest_index():
    q = np.array([[1.0, 0.0], [0.0, 1.0]])
    c = np.tile(np.array([[1.0, 1.0]]), (2, 4, 1))  # all candidates identical
    assert metrics.r_precision(q, c, [0, 0], 4) == 100.0
    assert metrics.r_precision(q, c, [1, 0], 4) == 50.0


def test_r_precision_pool_too_small():
    with pytest.raises(ConfigError):
        metrics.r_precision(np.ones((2, 3)), np.ones((2, 4, 3)), [0, 0], 9)


# ---------------------------------------------------------------- layout agreement


def mk_sem(arr):
    arr = np.asarray(arr, dtype=np.float64)
    n = arr.shape[1]
    side = int(np.sqrt(n)) if int(np.sqrt(n)) ** 2 == n else None
    grid = (side, side) if side else (1, n)
    return SemMatrix(Tensor(arr), grid)


def test_layout_agreement_identical():
    rng = np.random.default_rng(8)
    th = rng.uniform(size=(3, 4))
    assert metrics.layout_agreement(mk_sem(th), mk_sem(th.copy())) == 1.0


def test_layout_agreement_disjoint():
    a = np.array([[1.0, 1.0], [0.0, 0.0]])
    b = np.array([[0.0, 0.0], [1.0, 1.0]])
    assert metrics.layout_agreement(mk_sem(a), mk_sem(b)) == 0.0


def test_layout_agreement_half():
    a = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]])
    b = np.array([[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]])
    assert metrics.layout_agreement(mk_sem(a), mk_sem(b)) == 0.5


def test_layout_agreement_scale_invariant():
    rng = np.random.default_rng(9)
    scores = rng.normal(size=(4, 9))
    sm = lambda z: np.exp(z - z.max(0)) / np.exp(z - z.max(0)).sum(0)
    assert metrics.layout_agreement(
        mk_sem(sm(scores)), mk_sem(sm(5.0 * scores))
    ) == 1.0


def test_layout_agreement_shape_mismatch():
    with pytest.raises(ShapeError):
        metrics.layout_agreement(np.ones((2, 3)), np.ones((3, 2)))


# ---------------------------------------------------------------- toy extractor


def test_toy_extractor_deterministic():
    rng = np.random.default_rng(10)
    img = rng.uniform(-1, 1, size=(3, 16, 16))
    a = metrics.ToyFeatureExtractor().features(img)
    b = metrics.ToyFeatureExtractor().features(img.copy())
    assert np.array_equal(a, b)
    assert a.shape == (32,)


def test_toy_extractor_distinguishes_distributions():
    rng = np.random.default_rng(11)
    ext = metrics.ToyFeatureExtractor()
    dark = [ext.features(np.full((3, 16, 16), -0.8) + 0.1 * rng.normal(size=(3, 16, 16))) for _ in range(80)]
    light = [ext.features(np.full((3, 16, 16), 0.8) + 0.1 * rng.normal(size=(3, 16, 16))) for _ in range(80)]
    same = metrics.fid(metrics.gaussian_stats(dark[:40]), metrics.gaussian_stats(dark[40:]))
    cross = metrics.fid(metrics.gaussian_stats(dark), metrics.gaussian_stats(light))
    assert cross > 10 * max(same, 1e-6)


def test_toy_class_probs_valid():
    rng = np.random.default_rng(12)
    p = metrics.ToyFeatureExtractor().class_probs(rng.uniform(-1, 1, size=(3, 8, 8)))
    assert p.shape == (10,)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
