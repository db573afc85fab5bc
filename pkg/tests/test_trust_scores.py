import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lidartrust.errors import InsufficientSamples, LogitsAbsent
from lidartrust.taxonomy import ClassDef, ClassTable
from lidartrust.trust_scores import (
    MahalanobisModel,
    data_uncertainty,
    fit_mahalanobis,
    load_mahalanobis,
    mahalanobis_distance,
    model_uncertainty,
    normalize_trust,
    odin_score,
    save_mahalanobis,
    softmax,
    softmax_confidence,
)


def passes(*rows):
    """Build an (1, M, C) pass stack from per-pass probability rows."""
    return np.asarray(rows, dtype=np.float64)[None, :, :]


def prob_passes_strategy(max_m=4, max_c=8):
    def normalize(raw):
        raw = raw + 1e-6
        return raw / raw.sum(axis=-1, keepdims=True)

    return (
        st.tuples(st.integers(1, max_m), st.integers(2, max_c))
        .flatmap(
            lambda mc: arrays(
                np.float64,
                (3, mc[0], mc[1]),
                elements=st.floats(0.0, 1.0, allow_nan=False),
            )
        )
        .map(normalize)
    )


def test_conf_read_off():
    assert softmax_confidence(passes([0.25, 0.75]))[0] == pytest.approx(0.75)


def test_conf_uniform_case():
    p = np.full((1, 1, 11), 1.0 / 11.0)
    assert softmax_confidence(p)[0] == pytest.approx(1.0 / 11.0)


def test_conf_from_softmaxed_logits():
    p = softmax(np.array([[2.0, 0.0]]))
    assert softmax_confidence(p[None])[0] == pytest.approx(np.e**2 / (np.e**2 + 1))


def test_conf_is_pass_mean():
    p = passes([0.9, 0.1], [0.5, 0.5])
    assert softmax_confidence(p)[0] == pytest.approx(0.7)


def test_du_one_hot_is_zero():
    assert data_uncertainty(passes([1.0, 0.0]))[0] == 0.0


def test_du_binary_half():
    assert data_uncertainty(passes([0.5, 0.5]))[0] == pytest.approx(np.log(2), abs=1e-12)


def test_du_two_certain_passes():
    assert data_uncertainty(passes([1.0, 0.0], [0.0, 1.0]))[0] == 0.0


def test_mu_identical_passes_is_zero():
    assert model_uncertainty(passes([0.3, 0.7], [0.3, 0.7]))[0] == pytest.approx(0.0, abs=1e-15)


def test_mu_total_disagreement():
    assert model_uncertainty(passes([1.0, 0.0], [0.0, 1.0]))[0] == pytest.approx(
        np.log(2), abs=1e-12
    )


@given(p=prob_passes_strategy())
@settings(max_examples=80)
def test_mu_bounds_and_decomposition(p):
    mu = model_uncertainty(p)
    du = data_uncertainty(p)
    mean_entropy = data_uncertainty(p)
    total = -np.sum(
        np.where(p.mean(axis=1) > 0, p.mean(axis=1) * np.log(p.mean(axis=1)), 0.0), axis=-1
    )
    assert (mu >= 0).all()
    assert (mu <= total + 1e-9).all()
    assert np.allclose(mu + mean_entropy, total, atol=1e-9)
    assert (du >= 0).all()


def test_odin_equals_conf_at_unit_temperature():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((20, 3, 5))
    probs = softmax(logits)
    conf = softmax_confidence(probs)
    temp = odin_score(logits, temperature=1.0)
    assert np.array_equal(conf, temp)


def test_odin_hand_case():
    temp = odin_score(np.array([[[2.0, 0.0]]]), temperature=2.0)
    assert temp[0] == pytest.approx(np.e / (np.e + 1))


def test_odin_high_temperature_limit():
    temp = odin_score(np.array([[[2.0, 0.0]]]), temperature=1e6)
    assert temp[0] == pytest.approx(0.5, abs=1e-5)


def test_odin_requires_logits():
    with pytest.raises(LogitsAbsent):
        odin_score(None, temperature=1.0)


def _two_cluster_fit(n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    f0 = rng.standard_normal((n, 2))
    f1 = rng.standard_normal((n, 2)) + np.array([4.0, 0.0])
    features = np.vstack([f0, f1])
    gt = np.concatenate([np.zeros(n, int), np.ones(n, int)])
    return fit_mahalanobis(features, gt)


def test_fit_recovers_known_generator():
    model = _two_cluster_fit()
    assert model.class_ids == (0, 1)
    assert model.means[0] == pytest.approx([0.0, 0.0], abs=0.05)
    assert model.means[1] == pytest.approx([4.0, 0.0], abs=0.05)
    assert model.covariance == pytest.approx(np.eye(2), abs=0.05)
    assert model.md_tau > 0


def test_fit_excludes_tiny_classes_and_errors_when_all_gone():
    features = np.array([[0.0, 0.0], [4.0, 0.0]])
    gt = np.array([0, 1])
    with pytest.raises(InsufficientSamples):
        with pytest.warns(UserWarning):
            fit_mahalanobis(features, gt)


def test_fit_is_invariant_to_sample_duplication():
    rng = np.random.default_rng(1)
    features = rng.standard_normal((40, 3))
    gt = rng.integers(0, 2, 40)
    once = fit_mahalanobis(features, gt)
    twice = fit_mahalanobis(np.vstack([features, features]), np.concatenate([gt, gt]))
    assert np.allclose(once.means, twice.means)
    assert np.allclose(once.covariance, twice.covariance)
    assert once.md_tau == pytest.approx(twice.md_tau, rel=1e-9)


def test_md_zero_at_class_mean():
    model = MahalanobisModel.from_parameters([[0.0, 0.0], [4.0, 0.0]], np.eye(2))
    assert mahalanobis_distance(model, [0.0, 0.0]) == 0.0
    assert mahalanobis_distance(model, [4.0, 0.0]) == 0.0


def test_md_hand_quadratic_form():
    model = MahalanobisModel.from_parameters([[0.0, 0.0], [4.0, 0.0]], np.eye(2))
    assert mahalanobis_distance(model, [1.0, 0.0]) == pytest.approx(1.0, abs=1e-12)


def test_md_scales_inversely_with_covariance():
    means = [[0.0, 0.0], [4.0, 0.0]]
    base = MahalanobisModel.from_parameters(means, np.eye(2))
    wide = MahalanobisModel.from_parameters(means, 4.0 * np.eye(2))
    f = np.array([[1.0, 2.0], [3.0, -1.0]])
    assert np.allclose(mahalanobis_distance(wide, f), mahalanobis_distance(base, f) / 4.0)


@given(seed=st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_md_affine_invariance(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 5))
    means = rng.standard_normal((3, d))
    basis = rng.standard_normal((d, d))
    cov = basis @ basis.T + 0.5 * np.eye(d)
    model = MahalanobisModel.from_parameters(means, cov)
    f = rng.standard_normal((6, d))

    amap = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
    if np.linalg.cond(amap) > 1e4:
        amap += np.eye(d)
    shift = rng.standard_normal(d)
    mapped = MahalanobisModel.from_parameters(means @ amap.T + shift, amap @ cov @ amap.T)
    md0 = mahalanobis_distance(model, f)
    md1 = mahalanobis_distance(mapped, f @ amap.T + shift)
    assert np.allclose(md1, md0, rtol=1e-6, atol=1e-9)


def test_model_save_load_round_trip(tmp_path):
    model = _two_cluster_fit(n=200, seed=5)
    path = save_mahalanobis(model, tmp_path / "model.bin")
    back = load_mahalanobis(path)
    assert back.class_ids == model.class_ids
    assert np.array_equal(back.means, model.means)
    assert np.array_equal(back.covariance, model.covariance)
    assert back.md_tau == model.md_tau


def test_fit_respects_class_table_id_filter():
    rng = np.random.default_rng(2)
    table = ClassTable(
        classes=(ClassDef(0, "a", "large"), ClassDef(1, "b", "large"), ClassDef(2, "x", "ood")),
        merge_map={0: 0, 1: 1, 2: 2},
        ood_set=frozenset({2}),
    )
    features = rng.standard_normal((300, 2))
    gt = rng.integers(0, 3, 300)
    model = fit_mahalanobis(features, gt, table)
    assert model.class_ids == (0, 1)


def test_normalize_trust_maps():
    assert normalize_trust(0.0, "du", n_classes=11) == 1.0
    assert normalize_trust(np.log(11), "du", n_classes=11) == pytest.approx(0.0, abs=1e-12)
    assert normalize_trust(2.0, "md", md_tau=2.0) == pytest.approx(np.exp(-1.0))
    assert normalize_trust(0.42, "conf") == 0.42
    assert normalize_trust(0.42, "temp") == 0.42


@given(
    raw=st.lists(st.floats(0.0, 5.0, allow_nan=False), min_size=2, max_size=40),
    method=st.sampled_from(["du", "mu", "md"]),
)
@settings(max_examples=60)
def test_normalize_trust_is_monotone_decreasing_for_uncertainty(raw, method):
    raw = np.sort(np.asarray(raw))
    g = normalize_trust(raw, method, n_classes=4, md_tau=1.0)
    assert (np.diff(g) <= 1e-12).all()
    assert ((g >= 0) & (g <= 1)).all()
