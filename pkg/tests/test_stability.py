import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from treelets.exceptions import EmptyConfidenceSetError, TreeletError
from treelets.matrix import center_columns, sample_covariance
from treelets.stability import (BootstrapConfig, ConfidenceSummary, bands_contain, bands_csv,
                                bootstrap_covariances, confidence_set_loadings, delta_quantile,
                                match_and_align, merge_agreement_rate, sup_distances)
from treelets.synthetic import example3_spec, sample_mixture


def _cov(X):
    Xc, _ = center_columns(X)
    return sample_covariance(Xc)


# -- bootstrap replicates ----------------------------------------------------

def test_replicates_symmetric_psd(rng):
    X = rng.standard_normal((30, 4))
    covs = bootstrap_covariances(X, BootstrapConfig(replicates=20, seed=3))
    assert len(covs) == 20
    for C in covs:
        assert np.array_equal(C, C.T)
        assert np.linalg.eigvalsh(C).min() > -1e-12


def test_constant_data_gives_zero_replicates():
    X = np.tile([1.0, -2.0, 3.0], (10, 1))
    for C in bootstrap_covariances(X, BootstrapConfig(replicates=5)):
        assert np.all(C == 0)


def test_replicate_mean_near_sample_covariance(rng):
    X = rng.standard_normal((40, 3))
    covs = np.stack(bootstrap_covariances(X, BootstrapConfig(replicates=2000, seed=1)))
    # the resampling mean is (n - 1)/n times the unbiased estimate
    target = _cov(X) * (39 / 40)
    se = covs.std(axis=0, ddof=1) / np.sqrt(len(covs))
    assert np.all(np.abs(covs.mean(axis=0) - target) <= 3 * se + 1e-12)


def test_replicates_reproducible_and_per_index(rng):
    X = rng.standard_normal((15, 3))
    a = bootstrap_covariances(X, BootstrapConfig(replicates=6, seed=9))
    b = bootstrap_covariances(X, BootstrapConfig(replicates=3, seed=9))
    for u, v in zip(a, b):
        assert np.array_equal(u, v)


def test_config_validation():
    with pytest.raises(TreeletError):
        BootstrapConfig(replicates=0)
    for a in (0.0, 1.0, -0.1):
        with pytest.raises(TreeletError):
            BootstrapConfig(alpha=a)


# -- delta quantile ----------------------------------------------------------

def test_delta_identical_replicates_is_zero(rng):
    X = rng.standard_normal((10, 3))
    assert delta_quantile(X, [_cov(X)] * 7, 0.1) == 0.0


def test_delta_order_statistic_convention(rng):
    X = rng.standard_normal((10, 2))
    S = _cov(X)
    covs = [S + d for d in (3.0, 1.0, 4.0, 2.0)]
    assert delta_quantile(X, covs, 0.25) == pytest.approx(3.0)
    assert delta_quantile(X, covs, 0.99) == pytest.approx(1.0)


def test_delta_empty_rejected(rng):
    with pytest.raises(TreeletError):
        delta_quantile(rng.standard_normal((5, 2)), [], 0.1)


def test_delta_root_n_scaling():
    rng = np.random.default_rng(0)
    ratios = []
    for rep in range(5):
        d = []
        for n in (200, 800):
            X = rng.standard_normal((n, 3))
            covs = bootstrap_covariances(X, BootstrapConfig(replicates=300, seed=rep))
            d.append(delta_quantile(X, covs, 0.1))
        ratios.append(d[0] / d[1])
    assert 1.6 <= np.mean(ratios) <= 2.6


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_delta_invariant_to_replicate_order(seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((12, 3))
    covs = bootstrap_covariances(X, BootstrapConfig(replicates=15, seed=seed))
    perm = rng.permutation(len(covs))
    assert delta_quantile(X, covs, 0.2) == delta_quantile(X, [covs[i] for i in perm], 0.2)


# -- bands -------------------------------------------------------------------

def test_collinear_pair_zero_width(rng):
    u = rng.standard_normal(30)
    X = np.column_stack([u, 2 * u])
    s = confidence_set_loadings(X, BootstrapConfig(replicates=50, alpha=0.1, level=1, top_k=1))
    assert np.allclose(s.upper - s.lower, 0, atol=1e-12)
    assert np.allclose(np.abs(s.point[0]), [1 / np.sqrt(5), 2 / np.sqrt(5)])


def test_summary_invariants(rng):
    X = rng.standard_normal((40, 5)) @ rng.standard_normal((5, 5))
    cfg = BootstrapConfig(replicates=60, alpha=0.2, seed=2, level=3, top_k=2)
    s = confidence_set_loadings(X, cfg)
    assert isinstance(s, ConfidenceSummary)
    assert 0 < s.accepted_count <= cfg.replicates
    assert np.all(s.lower <= s.upper)
    assert s.loadings.shape == (s.accepted_count, 2, 5)
    assert np.all(s.distances[s.accepted] <= s.delta_n)
    assert np.array_equal(s.lower, np.quantile(s.loadings, 0.1, axis=0))
    assert np.array_equal(s.upper, np.quantile(s.loadings, 0.9, axis=0))


def test_acceptance_monotone_in_alpha(rng):
    X = rng.standard_normal((30, 4))
    counts = [confidence_set_loadings(X, BootstrapConfig(80, a, 5, 2, 1)).accepted_count
              for a in (0.05, 0.2, 0.5, 0.9)]
    assert counts == sorted(counts, reverse=True)


def test_empty_confidence_set_error(monkeypatch, rng):
    import treelets.stability as stab
    monkeypatch.setattr(stab, "sup_distances", lambda S, covs: np.full(len(covs), np.nan))
    with pytest.raises(EmptyConfidenceSetError):
        stab.confidence_set_loadings(rng.standard_normal((10, 3)), BootstrapConfig(5))


@settings(max_examples=40)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_sign_alignment_idempotent(seed, k):
    rng = np.random.default_rng(seed)
    ref = np.linalg.qr(rng.standard_normal((6, 6)))[0][:, :k].T
    cand = ref[rng.permutation(k)] * rng.choice([-1.0, 1.0], size=(k, 1))
    cand = cand + 1e-3 * rng.standard_normal(cand.shape)
    once, _ = match_and_align(ref, cand)
    twice, flips = match_and_align(ref, once)
    assert np.array_equal(once, twice)
    assert not flips.any()
    assert np.allclose(np.sort(np.abs(once), axis=None), np.sort(np.abs(cand), axis=None))
    assert np.all(np.einsum("ij,ij->i", once, ref) > 0)


def test_bands_contain_point(rng):
    X = rng.standard_normal((50, 4))
    s = confidence_set_loadings(X, BootstrapConfig(40, 0.5, 1, 2, 2))
    assert bands_contain(s, s.lower)
    assert not bands_contain(s, s.upper + 1.0)


def test_merge_agreement_grows_with_n():
    S = np.eye(6)
    for i, j, r in [(0, 1, 0.6), (2, 3, 0.5), (4, 5, 0.4), (0, 2, 0.1), (1, 3, 0.1)]:
        S[i, j] = S[j, i] = r
    rates = [merge_agreement_rate(S, n, 200, seed=1, level=3) for n in (100, 1000, 10000)]
    assert rates[0] <= rates[1] <= rates[2]
    assert rates[2] >= 0.99
    assert rates[0] < 0.99


def test_example3_bands_concentrate_on_blocks():
    X, _, _ = sample_mixture(example3_spec(), 1000, seed=3)
    s = confidence_set_loadings(X, BootstrapConfig(100, 0.05, 1, 300, 2))
    w = np.maximum(np.abs(s.lower), np.abs(s.upper)) ** 2
    frac = w / w.sum(axis=1, keepdims=True)
    assert frac[0, 200:400].sum() > 0.99
    assert frac[1, :100].sum() > 0.99
    assert frac[1, 10:100].sum() > 0.5


def test_bands_csv_layout(rng):
    s = confidence_set_loadings(rng.standard_normal((20, 3)), BootstrapConfig(10, 0.2, 0, 1, 2))
    lines = bands_csv(s).splitlines()
    assert lines[0] == "treelet_rank,coordinate,lower,point,upper"
    assert len(lines) == 1 + 2 * 3
    assert lines[1].startswith("1,0,") and lines[-1].startswith("2,2,")
    assert float(lines[4].split(",")[3]) == s.point[1, 0]


def test_sup_distance_is_max_abs():
    S = np.zeros((2, 2))
    assert sup_distances(S, [np.array([[0.0, -3.0], [-3.0, 1.0]])])[0] == 3.0
