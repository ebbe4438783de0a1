"""Evaluation tests: AUC vs brute force, k-nn, PCA baseline, permutation."""

import json

import numpy as np
import pytest

from graphsim.connectome import build_spatial_graph, signal_from_record, synth_atlas, synth_cohort
from graphsim.errors import ValidationError
from graphsim.evaluation import (
    evaluate,
    knn_classify,
    learned_distance,
    pca_euclidean_baseline,
    permutation_test,
    profile_feature_vectors,
    roc_auc,
    write_distances_csv,
    write_report_json,
    write_roc_csv,
)
from graphsim.model import init_model
from graphsim.spectral import normalized_laplacian, rescale_laplacian

from oracles import brute_auc, brute_knn_predict, direct_pca_distances


class TestRocAuc:
    def test_perfect_separation(self):
        auc, _ = roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0])
        assert auc == 1.0

    def test_all_scores_equal(self):
        auc, _ = roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
        assert auc == 0.5

    def test_small_instances_against_brute_force(self):
        # brute-force concordant-pair counting is the authority here
        scores = np.array([0.1, 0.4, 0.35, 0.8])
        assert roc_auc(scores, [0, 1, 0, 1])[0] == brute_auc(scores, [0, 1, 0, 1])
        assert roc_auc(scores, [0, 0, 1, 1])[0] == brute_auc(scores, [0, 0, 1, 1])
        assert brute_auc(scores, [0, 0, 1, 1]) == 0.75

    def test_exact_equality_with_brute_force_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 51))
            labels = np.zeros(n, dtype=int)
            labels[: int(rng.integers(1, n))] = 1
            rng.shuffle(labels)
            if rng.random() < 0.5:
                scores = rng.choice(np.linspace(0, 1, 7), size=n)  # forces ties
            else:
                scores = rng.random(n)
            auc, _ = roc_auc(scores, labels)
            assert auc == brute_auc(scores, labels)

    def test_roc_points_monotone(self):
        rng = np.random.default_rng(1)
        scores = rng.random(40)
        labels = (rng.random(40) < 0.5).astype(int)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        _, points = roc_auc(scores, labels)
        assert np.all(np.diff(points[:, 1]) >= 0)
        assert np.all(np.diff(points[:, 2]) >= 0)
        assert points[0, 1] == 0.0 and points[0, 2] == 0.0
        assert points[-1, 1] == 1.0 and points[-1, 2] == 1.0

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            roc_auc([0.1, 0.2], [1, 1])


class TestKnnClassify:
    def test_exact_duplicate_reference(self):
        d = np.array([[0.0, 0.7, 0.9]])
        assert knn_classify(d, [1, 0, 0], k=1)[0] == 1

    def test_majority_vote(self):
        d = np.array([[0.1, 0.2, 0.3, 0.9]])
        assert knn_classify(d, [1, 1, 0, 0], k=3)[0] == 1

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        d = rng.random((20, 15))
        labels = (rng.random(15) < 0.5).astype(int)
        for k in (1, 3, 5):
            np.testing.assert_array_equal(
                knn_classify(d, labels, k), brute_knn_predict(d, labels, k)
            )

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        d = rng.random((10, 8))
        labels = (rng.random(8) < 0.5).astype(int)
        base = knn_classify(d, labels, 3)
        np.testing.assert_array_equal(knn_classify(np.exp(3 * d), labels, 3), base)

    def test_distance_tie_breaks_by_reference_index(self):
        d = np.array([[0.5, 0.5, 0.9]])
        assert knn_classify(d, [0, 1, 1], k=1)[0] == 0


def make_eval_model(r, seed=0):
    atlas = synth_atlas(r, seed=seed)
    graph = build_spatial_graph(atlas, k=min(5, r - 1))
    lt = rescale_laplacian(normalized_laplacian(graph.adjacency))
    return init_model(r, layer_widths=(6, 6), k_order=3, seed=seed, l_scaled=lt)


class TestLearnedDistance:
    def test_zero_fc_model_gives_half(self):
        model = make_eval_model(8, seed=4)
        model.fc_weights = np.zeros_like(model.fc_weights)
        model.fc_bias = 0.0
        rng = np.random.default_rng(5)
        x = rng.standard_normal((8, 8))
        assert learned_distance(model, x, x, 1) == 0.5

    def test_symmetry(self):
        model = make_eval_model(8, seed=6)
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        assert learned_distance(model, a, b, 0) == learned_distance(model, b, a, 0)

    def test_complements_similarity(self):
        from graphsim.model import siamese_forward

        model = make_eval_model(8, seed=8)
        rng = np.random.default_rng(9)
        a, b = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
        sim, _ = siamese_forward(model, a, b, 1, mode="eval")
        assert learned_distance(model, a, b, 1) == 1.0 - sim


class TestPcaBaseline:
    def test_full_rank_keep_all_equals_raw_euclidean(self):
        rng = np.random.default_rng(10)
        train = rng.standard_normal((12, 4))
        test = rng.standard_normal((5, 4))
        d = pca_euclidean_baseline(train, test, variance_keep=1.0)
        diff = test[:, None, :] - test[None, :, :]
        raw = np.sqrt((diff**2).sum(-1))
        np.testing.assert_allclose(d, raw, atol=1e-9)

    def test_duplicated_subject_zero_distance(self):
        rng = np.random.default_rng(11)
        train = rng.standard_normal((8, 5))
        test = rng.standard_normal((3, 5))
        test = np.vstack([test, test[0]])
        d = pca_euclidean_baseline(train, test, variance_keep=0.95)
        assert d[0, 3] == pytest.approx(0.0, abs=1e-12)

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(12)
        train = rng.standard_normal((10, 6))
        test = rng.standard_normal((4, 6))
        for keep in (0.6, 0.9, 1.0):
            ours = pca_euclidean_baseline(train, test, variance_keep=keep)
            oracle = direct_pca_distances(train, test, keep)
            np.testing.assert_allclose(ours, oracle, atol=1e-9)

    def test_gram_path_consistent_with_direct_path(self):
        # wide features trigger the Gram-matrix route; distances must agree
        rng = np.random.default_rng(13)
        train = rng.standard_normal((9, 40))
        test = rng.standard_normal((4, 40))
        wide = pca_euclidean_baseline(train, test, variance_keep=0.9)
        oracle = direct_pca_distances(train, test, 0.9)
        np.testing.assert_allclose(wide, oracle, atol=1e-8)

    def test_centering_invariance(self):
        rng = np.random.default_rng(14)
        train = rng.standard_normal((10, 5))
        test = rng.standard_normal((4, 5))
        shift = rng.standard_normal(5)
        d0 = pca_euclidean_baseline(train, test, 0.99)
        d1 = pca_euclidean_baseline(train + shift, test + shift, 0.99)
        np.testing.assert_allclose(d0, d1, atol=1e-9)

    def test_too_few_samples(self):
        with pytest.raises(ValidationError):
            pca_euclidean_baseline(np.zeros((1, 4)), np.zeros((2, 4)))


class TestPermutationTest:
    def test_maximal_separation_minimal_p(self):
        p = permutation_test([0.0, 0.0, 0.0], [1.0, 1.0, 1.0], n_perm=999, seed=0)
        # only the two extreme assignments reproduce the observed statistic
        assert p <= (1 + 999 * 2 / 10) / 1000

    def test_single_permutation_bounds(self):
        p = permutation_test([0.1, 0.2], [0.8, 0.9], n_perm=1, seed=1)
        assert p in (0.5, 1.0)

    def test_p_value_range(self):
        rng = np.random.default_rng(15)
        p = permutation_test(rng.random(10), rng.random(12), n_perm=99, seed=2)
        assert 1.0 / 100 <= p <= 1.0

    def test_null_calibration_quick(self):
        # identical distributions: p < 0.05 should occur ~5% of the time
        rng = np.random.default_rng(16)
        hits = 0
        reps = 60
        for i in range(reps):
            a = rng.standard_normal(25)
            b = rng.standard_normal(25)
            if permutation_test(a, b, n_perm=199, seed=1000 + i) < 0.05:
                hits += 1
        assert hits / reps < 0.15


@pytest.fixture(scope="module")
def setup():
    cohort = synth_cohort(32, r=12, t=80, effect=1.0, seed=17)
    signals = [signal_from_record(rec) for rec in cohort]
    model = make_eval_model(12, seed=18)
    return evaluate(
        model, signals[:16], signals[16:], knn_k=3, variance_keep=0.99, n_perm=99, seed=19
    )


class TestEvaluate:
    def test_counts(self, setup):
        report = setup
        assert report.n_test == 16
        assert report.n_pairs == 16 * 15 // 2
        assert report.n_matching + report.n_non_matching == report.n_pairs

    def test_metric_ranges(self, setup):
        report = setup
        for metric in ("learned", "baseline"):
            assert 0.0 <= report.auc[metric]["all"] <= 1.0
            for v in report.auc[metric]["per_site"].values():
                assert 0.0 <= v <= 1.0
            assert 0.0 <= report.knn_accuracy[metric]["all"] <= 1.0
            assert 0.0 < report.permutation_p[metric]["all"] <= 1.0

    def test_pairs_table_full(self, setup):
        report = setup
        assert len(report.pairs_table) == report.n_pairs
        row = report.pairs_table[0]
        assert 0.0 < row["learned_distance"] < 1.0
        assert row["baseline_distance"] >= 0.0

    def test_writers_produce_parseable_files(self, setup, tmp_path):
        report = setup
        write_report_json(report, tmp_path / "report.json")
        write_roc_csv(report, tmp_path / "roc.csv")
        write_distances_csv(report, tmp_path / "distances.csv")
        doc = json.loads((tmp_path / "report.json").read_text())
        assert doc["schema_version"] == 1
        assert doc["counts"]["n_pairs"] == report.n_pairs
        roc_lines = (tmp_path / "roc.csv").read_text().strip().splitlines()
        assert roc_lines[0] == "metric,curve,threshold,fpr,tpr"
        dist_lines = (tmp_path / "distances.csv").read_text().strip().splitlines()
        assert len(dist_lines) == report.n_pairs + 1

    def test_too_few_subjects(self):
        cohort = synth_cohort(8, r=12, t=40, effect=0.0, seed=20)
        signals = [signal_from_record(rec) for rec in cohort]
        model = make_eval_model(12, seed=21)
        with pytest.raises(ValidationError):
            evaluate(model, signals[:1], signals[1:], n_perm=9)


class TestProfileFeatures:
    def test_shape_and_content(self):
        cohort = synth_cohort(4, r=6, t=30, effect=0.0, seed=22)
        signals = [signal_from_record(rec) for rec in cohort]
        feats = profile_feature_vectors(signals)
        assert feats.shape == (4, 6 * 5 // 2)
        assert feats[0][0] == signals[0].features[0, 1]
