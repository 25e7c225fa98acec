import math
import random

import numpy as np
import pytest

from coordscan.anomaly import (
    AnomalyRecord,
    average_path_length,
    cluster_eligibility,
    detect,
    expected_depth,
    fit_forest,
    iat_postfilter,
    label_scores,
    score,
    tree_shap,
    write_anomalies_csv,
    write_shap_summary_csv,
)
from coordscan.errors import ValidationError
from coordscan.features import EdgeFeatureRow
from oracles import shap_exhaustive


def cluster_rows(rng, n, cluster=0, outliers=0):
    rows = []
    for i in range(n):
        if i < outliers:
            w, cs, iat, ns = 40 + rng.random(), 0.99, 0.01, 0.99
        else:
            w = rng.randint(2, 6)
            cs = rng.uniform(-0.2, 0.4)
            iat = rng.uniform(5.0, 60.0)
            ns = rng.uniform(-0.3, 0.5)
        rows.append(
            EdgeFeatureRow(
                user_a=f"a{i:03d}", user_b=f"b{i:03d}", cluster=cluster,
                weight=int(w), content_sim=cs, iat_hours=iat, node_sim=ns,
            )
        )
    return rows


class TestAveragePathLength:
    def test_small_values(self):
        assert average_path_length(0) == 0.0
        assert average_path_length(1) == 0.0
        # c(2) = 2(ln 1 + gamma) - 2*1/2 = 2*gamma - 1
        assert math.isclose(average_path_length(2), 2 * 0.5772156649 - 1.0)

    def test_monotone(self):
        vals = [average_path_length(m) for m in range(2, 600)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestFitForest:
    def test_constant_features_single_leaf(self):
        X = np.ones((10, 4))
        model = fit_forest(X, n_estimators=5, psi=8, seed=0)
        for tree in model.trees:
            assert len(tree.feature) == 1
            assert tree.feature[0] == -1
        # every point lands in the single leaf: depth 0 + c(8)
        h = expected_depth(model, X)
        assert np.allclose(h, average_path_length(8))

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        X = rng.random((50, 4))
        m1 = fit_forest(X, n_estimators=10, psi=16, seed=3)
        m2 = fit_forest(X, n_estimators=10, psi=16, seed=3)
        for t1, t2 in zip(m1.trees, m2.trees):
            assert np.array_equal(t1.feature, t2.feature)
            assert np.array_equal(t1.threshold, t2.threshold)
        assert np.array_equal(score(m1, X), score(m2, X))

    def test_height_cap(self):
        rng = np.random.default_rng(2)
        X = rng.random((300, 4))
        model = fit_forest(X, n_estimators=10, psi=256, seed=1)
        cap = math.ceil(math.log2(256))
        for tree in model.trees:
            assert int(tree.depth.max()) <= cap

    def test_too_few_rows_rejected(self):
        with pytest.raises(ValidationError):
            fit_forest(np.ones((7, 4)), seed=0)

    def test_outlier_scores_higher(self):
        rng = random.Random(5)
        rows = cluster_rows(rng, 60, outliers=3)
        X = np.array([r.values() for r in rows])
        model = fit_forest(X, n_estimators=100, psi=32, seed=0)
        s = score(model, X)
        assert min(s[:3]) > max(s[3:])

    def test_score_formula_from_depth(self):
        rng = np.random.default_rng(7)
        X = rng.random((40, 4))
        model = fit_forest(X, n_estimators=20, psi=16, seed=2)
        h = expected_depth(model, X)
        assert np.allclose(score(model, X), 2.0 ** (-h / average_path_length(16)))


class TestLabelScores:
    def test_top_ceil_fraction(self):
        scores = {(f"u{i}", f"v{i}"): i / 100 for i in range(40)}
        labels = label_scores(scores, contamination=0.05)
        # ceil(0.05 * 40) = 2 anomalies: the two highest scores
        anom = {e for e, l in labels.items() if l == "anomalous"}
        assert anom == {("u39", "v39"), ("u38", "v38")}

    def test_tie_breaks_to_smallest_edge(self):
        scores = {("b", "c"): 0.9, ("a", "z"): 0.9, ("a", "b"): 0.1}
        labels = label_scores(scores, contamination=0.33)  # ceil(0.99) = 1
        assert labels[("a", "z")] == "anomalous"
        assert labels[("b", "c")] == "normal"

    def test_monotone_in_contamination(self):
        rng = random.Random(11)
        scores = {(f"u{i}", f"v{i}"): rng.random() for i in range(30)}
        prev: set = set()
        for c in (0.05, 0.1, 0.2, 0.4):
            anom = {e for e, l in label_scores(scores, c).items() if l == "anomalous"}
            assert prev <= anom
            prev = anom

    @pytest.mark.parametrize("c", [0.0, -0.1, 0.6])
    def test_invalid_contamination(self, c):
        with pytest.raises(ValidationError):
            label_scores({("a", "b"): 0.5}, contamination=c)


class TestTreeShap:
    def test_local_accuracy(self):
        rng = np.random.default_rng(3)
        X = rng.random((60, 4))
        model = fit_forest(X, n_estimators=30, psi=32, seed=4)
        for i in range(0, 60, 7):
            phi, base = tree_shap(model, X[i])
            h = float(expected_depth(model, X[i])[0])
            assert abs(base + phi.sum() - h) <= 1e-9

    def test_matches_exhaustive_subset_enumeration(self):
        rng = np.random.default_rng(8)
        X = rng.random((20, 4))
        model = fit_forest(X, n_estimators=5, psi=8, seed=5)
        for i in (0, 7, 19):
            phi, base = tree_shap(model, X[i])
            phi_o, base_o = shap_exhaustive(model, X[i])
            assert abs(base - base_o) <= 1e-9
            assert np.all(np.abs(phi - phi_o) <= 1e-9)

    def test_unused_feature_gets_zero(self):
        # column 3 is constant, so no tree can split on it
        rng = np.random.default_rng(9)
        X = rng.random((30, 4))
        X[:, 3] = 0.5
        model = fit_forest(X, n_estimators=20, psi=16, seed=6)
        for i in (0, 10, 29):
            phi, _ = tree_shap(model, X[i])
            assert phi[3] == 0.0

    def test_bad_shape_rejected(self):
        X = np.random.default_rng(0).random((20, 4))
        model = fit_forest(X, n_estimators=3, psi=8, seed=0)
        with pytest.raises(ValidationError):
            tree_shap(model, np.zeros(3))


class TestIatPostfilter:
    def rec(self, i, label, iat, cluster=0):
        return AnomalyRecord(
            user_a=f"a{i}", user_b=f"b{i}", cluster=cluster,
            score=0.5, label=label, iat_hours=iat,
        )

    def test_strictly_above_median_filtered(self):
        records = [
            self.rec(0, "normal", 1.0),
            self.rec(1, "normal", 3.0),   # lower median of {1, 3} = 1.0
            self.rec(2, "anomalous", 1.0),  # equal -> kept
            self.rec(3, "anomalous", 1.001),  # above -> filtered
        ]
        iat_postfilter(records)
        assert not records[2].filtered
        assert records[3].filtered

    def test_per_cluster_thresholds(self):
        records = [
            self.rec(0, "normal", 1.0, cluster=0),
            self.rec(1, "anomalous", 2.0, cluster=0),
            self.rec(2, "normal", 10.0, cluster=1),
            self.rec(3, "anomalous", 2.0, cluster=1),
        ]
        iat_postfilter(records)
        assert records[1].filtered
        assert not records[3].filtered

    def test_no_normals_skips_cluster(self):
        records = [self.rec(0, "anomalous", 99.0)]
        iat_postfilter(records)
        assert not records[0].filtered


class TestClusterEligibility:
    def test_small_cluster_reported(self):
        rng = random.Random(1)
        rows = cluster_rows(rng, 5, cluster=2)
        too_small, dropped, usable = cluster_eligibility(rows)
        assert too_small == [2]
        assert usable == {}
        assert dropped == {}

    def test_missing_content_rows_dropped_above_threshold(self):
        rng = random.Random(2)
        rows = cluster_rows(rng, 20, cluster=0)
        for r in rows[:5]:  # 25% missing > 20% rule
            r.content_missing = True
        too_small, dropped, usable = cluster_eligibility(rows)
        assert dropped == {0: 5}
        assert len(usable[0]) == 15
        assert all(not r.content_missing for r in usable[0])

    def test_missing_content_below_threshold_kept(self):
        rng = random.Random(3)
        rows = cluster_rows(rng, 20, cluster=0)
        rows[0].content_missing = True  # 5% <= 20%
        _, dropped, usable = cluster_eligibility(rows)
        assert dropped == {}
        assert len(usable[0]) == 20


class TestDetect:
    def test_end_to_end_labels_and_shap(self):
        rng = random.Random(6)
        rows = cluster_rows(rng, 60, cluster=0, outliers=2)
        records, info = detect(rows, n_estimators=50, psi=32,
                               contamination=0.05, seed=1)
        assert len(records) == 60
        anom = [r for r in records if r.label == "anomalous"]
        assert len(anom) == math.ceil(0.05 * 60)
        # planted outliers (extreme on every feature) are caught
        caught = {r.edge for r in anom}
        assert ("a000", "b000") in caught and ("a001", "b001") in caught
        for r in records:
            if r.label == "anomalous":
                assert r.shap is not None and r.base is not None
                assert r.shap.shape == (4,)
            else:
                assert r.shap is None

    def test_shap_mode_all(self):
        rng = random.Random(7)
        rows = cluster_rows(rng, 12)
        records, _ = detect(rows, n_estimators=10, psi=8, seed=0, shap_mode="all")
        assert all(r.shap is not None for r in records)

    def test_deterministic(self):
        rng = random.Random(8)
        rows = cluster_rows(rng, 30, outliers=1)
        r1, _ = detect(rows, n_estimators=20, psi=16, seed=5)
        r2, _ = detect(rows, n_estimators=20, psi=16, seed=5)
        assert [(r.edge, r.score, r.label, r.filtered) for r in r1] == \
            [(r.edge, r.score, r.label, r.filtered) for r in r2]

    def test_small_cluster_skipped_and_reported(self):
        rng = random.Random(9)
        rows = cluster_rows(rng, 20, cluster=0) + cluster_rows(rng, 4, cluster=1)
        records, info = detect(rows, n_estimators=10, psi=16, seed=0)
        assert info["too_small"] == [1]
        assert all(r.cluster == 0 for r in records)

    def test_unknown_shap_mode_rejected(self):
        with pytest.raises(ValidationError):
            detect([], shap_mode="sometimes")


class TestCsvOutputs:
    def test_anomalies_csv_shap_blank_for_normals(self, tmp_path):
        rng = random.Random(10)
        rows = cluster_rows(rng, 20, outliers=1)
        records, _ = detect(rows, n_estimators=10, psi=16, seed=2)
        path = tmp_path / "anomalies.csv"
        write_anomalies_csv(records, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("user_a,user_b,cluster,score,label,filtered")
        assert len(lines) == 21
        for line in lines[1:]:
            cells = line.split(",")
            if cells[4] == "normal":
                assert cells[6:] == ["", "", "", ""]
            else:
                assert all(c for c in cells[6:])

    def test_shap_summary_only_retained_anomalies(self, tmp_path):
        recs = [
            AnomalyRecord("a", "b", 0, 0.9, "anomalous", 1.0,
                          shap=np.array([1.0, -2.0, 0.0, 0.5]), base=3.0),
            AnomalyRecord("c", "d", 0, 0.8, "anomalous", 9.0, filtered=True,
                          shap=np.array([9.0, 9.0, 9.0, 9.0]), base=3.0),
            AnomalyRecord("e", "f", 0, 0.1, "normal", 1.0),
        ]
        path = tmp_path / "shap.csv"
        write_shap_summary_csv(recs, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "cluster,feature,mean_abs_shap"
        vals = {l.split(",")[1]: float(l.split(",")[2]) for l in lines[1:]}
        assert vals == {"weight": 1.0, "content_sim": 2.0,
                        "iat_hours": 0.0, "node_sim": 0.5}
