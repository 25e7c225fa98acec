"""Per-cluster isolation forests, per-feature attributions, and the
inter-arrival-time post-filter.

Trees are grown on uniform subsamples without replacement: each internal node
splits a uniformly chosen non-constant feature at a uniform point strictly
between its min and max, down to a height cap of ceil(log2 subsample size).
The anomaly score is 2**(-E[h]/c(psi)) where h is isolation depth plus the
average-path-length adjustment c(leaf size). Attributions use path-dependent
TreeSHAP over the expected-depth output, so base value plus attributions
equals E[h(x)] exactly. Finally, anomalies with an inter-arrival time above
the median of the cluster's normal rows are filtered out.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from coordscan.errors import ValidationError
from coordscan.features import FEATURE_NAMES, EdgeFeatureRow, lower_median

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649
MIN_CLUSTER_ROWS = 8
_MAX_SPLIT_DRAWS = 100


def average_path_length(m: int) -> float:
    """Expected unsuccessful-search path length in a BST of m points."""
    if m <= 1:
        return 0.0
    return 2.0 * (math.log(m - 1) + EULER_GAMMA) - 2.0 * (m - 1) / m


@dataclass
class IsolationTree:
    """Array-encoded binary tree; leaves have feature == -1."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    depth: np.ndarray

    def leaf_value(self, node: int) -> float:
        return float(self.depth[node]) + average_path_length(int(self.n_samples[node]))

    def path_lengths(self, X: np.ndarray) -> np.ndarray:
        h = np.zeros(len(X))
        stack = [(0, np.arange(len(X)))]
        while stack:
            node, idx = stack.pop()
            if idx.size == 0:
                continue
            if self.feature[node] < 0:
                h[idx] = self.leaf_value(node)
                continue
            go_left = X[idx, self.feature[node]] < self.threshold[node]
            stack.append((int(self.left[node]), idx[go_left]))
            stack.append((int(self.right[node]), idx[~go_left]))
        return h

    def baseline(self) -> float:
        """Coverage-weighted mean leaf value (expected depth of a random
        training instance)."""
        total = 0.0
        for node in range(len(self.feature)):
            if self.feature[node] < 0:
                total += self.n_samples[node] * self.leaf_value(node)
        return total / float(self.n_samples[0])


@dataclass
class ForestModel:
    trees: list[IsolationTree]
    psi: int
    c_psi: float
    n_features: int
    baselines: list[float] = field(default_factory=list)


def _grow_tree(X: np.ndarray, rng: np.random.Generator, height_limit: int) -> IsolationTree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    n_samples: list[int] = []
    depth: list[int] = []

    def add(idx: np.ndarray, d: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        n_samples.append(int(idx.size))
        depth.append(d)
        if d >= height_limit or idx.size <= 1:
            return node
        sub = X[idx]
        mins = sub.min(axis=0)
        maxs = sub.max(axis=0)
        usable = np.flatnonzero(maxs > mins)
        if usable.size == 0:
            return node
        f = int(usable[rng.integers(usable.size)])
        val = None
        for _ in range(_MAX_SPLIT_DRAWS):
            candidate = rng.uniform(mins[f], maxs[f])
            if mins[f] < candidate < maxs[f]:
                val = candidate
                break
        if val is None:
            return node
        feature[node] = f
        threshold[node] = float(val)
        go_left = X[idx, f] < val
        left[node] = add(idx[go_left], d + 1)
        right[node] = add(idx[~go_left], d + 1)
        return node

    add(np.arange(len(X)), 0)
    return IsolationTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        n_samples=np.array(n_samples, dtype=np.int64),
        depth=np.array(depth, dtype=np.int64),
    )


def fit_forest(
    X: np.ndarray,
    n_estimators: int = 100,
    psi: int = 256,
    seed: int = 0,
) -> ForestModel:
    """Fit an isolation forest on a feature matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"expected 2-D feature matrix, got shape {X.shape}")
    n, n_features = X.shape
    if n < MIN_CLUSTER_ROWS:
        raise ValidationError(f"need at least {MIN_CLUSTER_ROWS} rows, got {n}")
    psi_eff = min(psi, n)
    height_limit = math.ceil(math.log2(psi_eff)) if psi_eff > 1 else 0
    trees = []
    for t in range(n_estimators):
        rng = np.random.default_rng([seed, t])
        idx = rng.choice(n, size=psi_eff, replace=False)
        trees.append(_grow_tree(X[idx], rng, height_limit))
    model = ForestModel(
        trees=trees,
        psi=psi_eff,
        c_psi=average_path_length(psi_eff),
        n_features=n_features,
    )
    model.baselines = [tree.baseline() for tree in trees]
    return model


def expected_depth(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.n_features:
        raise ValidationError(
            f"expected {model.n_features} features, got {X.shape[1]}"
        )
    h = np.zeros(len(X))
    for tree in model.trees:
        h += tree.path_lengths(X)
    return h / len(model.trees)


def score(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Anomaly scores in (0, 1); higher is more anomalous."""
    h = expected_depth(model, X)
    return 2.0 ** (-h / model.c_psi)


def label_scores(
    scores: dict[tuple[str, str], float], contamination: float = 0.05
) -> dict[tuple[str, str], str]:
    """Top ceil(contamination * n) scores are anomalous; ties break toward
    the smallest edge key."""
    if not 0.0 < contamination <= 0.5:
        raise ValidationError(f"contamination must be in (0, 0.5], got {contamination}")
    n = len(scores)
    n_anom = math.ceil(contamination * n)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    labels = {edge: "normal" for edge in scores}
    for edge, _ in ranked[:n_anom]:
        labels[edge] = "anomalous"
    return labels


def _tree_shap_single(tree: IsolationTree, x: np.ndarray, phi: np.ndarray) -> None:
    # Path-dependent TreeSHAP over the expected-depth output of one tree.
    # Path elements are [feature, zero_fraction, one_fraction, weight].

    def extend(m, pz, po, pi):
        l = len(m)
        m = [row[:] for row in m]
        m.append([pi, pz, po, 1.0 if l == 0 else 0.0])
        for i in range(l - 1, -1, -1):
            m[i + 1][3] += po * m[i][3] * (i + 1) / (l + 1)
            m[i][3] = pz * m[i][3] * (l - i) / (l + 1)
        return m

    def unwind(m, i0):
        l = len(m)
        zi, oi = m[i0][1], m[i0][2]
        n = m[-1][3]
        out = [row[:] for row in m[:-1]]
        for j0 in range(l - 2, -1, -1):
            j1 = j0 + 1
            if oi != 0.0:
                t = out[j0][3]
                out[j0][3] = n * l / (j1 * oi)
                n = t - out[j0][3] * zi * (l - j1) / l
            else:
                out[j0][3] = out[j0][3] * l / (zi * (l - j1))
        for j0 in range(i0, l - 1):
            out[j0][0] = m[j0 + 1][0]
            out[j0][1] = m[j0 + 1][1]
            out[j0][2] = m[j0 + 1][2]
        return out

    def recurse(node, m, pz, po, pi):
        m = extend(m, pz, po, pi)
        if tree.feature[node] < 0:
            value = tree.leaf_value(node)
            for i0 in range(1, len(m)):
                w = sum(row[3] for row in unwind(m, i0))
                phi[m[i0][0]] += w * (m[i0][2] - m[i0][1]) * value
            return
        f = int(tree.feature[node])
        l_child = int(tree.left[node])
        r_child = int(tree.right[node])
        hot, cold = (l_child, r_child) if x[f] < tree.threshold[node] else (r_child, l_child)
        iz = io = 1.0
        k = next((i for i in range(len(m)) if m[i][0] == f), None)
        if k is not None:
            iz, io = m[k][1], m[k][2]
            m = unwind(m, k)
        r_parent = float(tree.n_samples[node])
        recurse(hot, m, iz * tree.n_samples[hot] / r_parent, io, f)
        recurse(cold, m, iz * tree.n_samples[cold] / r_parent, 0.0, f)

    recurse(0, [], 1.0, 1.0, None)


def tree_shap(model: ForestModel, x: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-feature attributions of the expected isolation depth.

    Returns (phi, base) with base + phi.sum() == E[h(x)] (local accuracy).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n_features,):
        raise ValidationError(f"expected a {model.n_features}-vector, got {x.shape}")
    phi = np.zeros(model.n_features)
    for tree in model.trees:
        tree_phi = np.zeros(model.n_features)
        _tree_shap_single(tree, x, tree_phi)
        phi += tree_phi
    phi /= len(model.trees)
    base = float(np.mean(model.baselines))
    return phi, base


@dataclass
class AnomalyRecord:
    """Scored edge with label, attribution, and post-filter status."""

    user_a: str
    user_b: str
    cluster: int
    score: float
    label: str
    iat_hours: float
    filtered: bool = False
    shap: np.ndarray | None = None
    base: float | None = None

    @property
    def edge(self) -> tuple[str, str]:
        return (self.user_a, self.user_b)


def iat_postfilter(records: list[AnomalyRecord]) -> list[AnomalyRecord]:
    """Mark anomalies whose IAT exceeds the median IAT of the cluster's
    normal rows (strictly above the threshold). Mutates in place."""
    clusters = sorted({r.cluster for r in records})
    for c in clusters:
        normal_iats = [r.iat_hours for r in records if r.cluster == c and r.label == "normal"]
        if not normal_iats:
            logger.warning("cluster %d has no normal rows; IAT filter skipped", c)
            continue
        threshold = lower_median(normal_iats)
        for r in records:
            if r.cluster == c and r.label == "anomalous" and r.iat_hours > threshold:
                r.filtered = True
    return records


def cluster_eligibility(
    rows: list[EdgeFeatureRow],
) -> tuple[list[int], dict[int, int], dict[int, list[EdgeFeatureRow]]]:
    """Apply the missing-content and minimum-size rules per cluster.

    Returns (too_small cluster ids, rows dropped for missing content per
    cluster, usable rows per eligible cluster).
    """
    by_cluster: dict[int, list[EdgeFeatureRow]] = {}
    for r in rows:
        by_cluster.setdefault(r.cluster, []).append(r)
    too_small: list[int] = []
    missing_dropped: dict[int, int] = {}
    usable: dict[int, list[EdgeFeatureRow]] = {}
    for c in sorted(by_cluster):
        crows = by_cluster[c]
        missing_frac = sum(r.content_missing for r in crows) / len(crows)
        if missing_frac > 0.2:
            missing_dropped[c] = sum(r.content_missing for r in crows)
            crows = [r for r in crows if not r.content_missing]
        if len(crows) < MIN_CLUSTER_ROWS:
            too_small.append(c)
            continue
        usable[c] = crows
    return too_small, missing_dropped, usable


def detect(
    rows: list[EdgeFeatureRow],
    n_estimators: int = 100,
    psi: int = 256,
    contamination: float = 0.05,
    seed: int = 0,
    shap_mode: str = "anomalous",
) -> tuple[list[AnomalyRecord], dict]:
    """Per-cluster fit/score/label/attribute/post-filter.

    Clusters with fewer than 8 rows are skipped and reported as too small.
    Clusters where more than 20% of rows have missing content similarity
    have those rows excluded from training and scoring (reported).
    shap_mode selects which rows get attributions: 'anomalous' (default,
    cheap) or 'all'.
    """
    if shap_mode not in ("anomalous", "all"):
        raise ValidationError(f"unknown shap mode: {shap_mode!r}")
    too_small, missing_dropped, usable = cluster_eligibility(rows)
    for c in too_small:
        logger.warning("cluster %d too small for anomaly detection", c)
    for c, dropped in missing_dropped.items():
        logger.warning("cluster %d: %d rows with missing content excluded", c, dropped)

    records: list[AnomalyRecord] = []
    info = {
        "too_small": too_small,
        "missing_dropped": missing_dropped,
        "contamination": contamination,
    }
    for c in sorted(usable):
        crows = usable[c]
        X = np.array([r.values() for r in crows])
        model = fit_forest(X, n_estimators=n_estimators, psi=psi, seed=seed + c)
        s = score(model, X)
        labels = label_scores(
            {r.edge: float(s[i]) for i, r in enumerate(crows)}, contamination
        )
        cluster_records = []
        for i, r in enumerate(crows):
            rec = AnomalyRecord(
                user_a=r.user_a,
                user_b=r.user_b,
                cluster=c,
                score=float(s[i]),
                label=labels[r.edge],
                iat_hours=r.iat_hours,
            )
            if shap_mode == "all" or rec.label == "anomalous":
                rec.shap, rec.base = tree_shap(model, X[i])
            cluster_records.append(rec)
        records.extend(iat_postfilter(cluster_records))
    records.sort(key=lambda r: (r.cluster, r.user_a, r.user_b))
    return records, info


def write_anomalies_csv(records: list[AnomalyRecord], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["user_a", "user_b", "cluster", "score", "label", "filtered",
             "shap_weight", "shap_content", "shap_iat", "shap_nodesim"]
        )
        for r in records:
            shap_cells = (
                [repr(float(v)) for v in r.shap] if r.shap is not None else ["", "", "", ""]
            )
            writer.writerow(
                [r.user_a, r.user_b, str(r.cluster), repr(r.score), r.label,
                 "1" if r.filtered else "0", *shap_cells]
            )


def write_shap_summary_csv(records: list[AnomalyRecord], path: str | Path) -> None:
    """Mean absolute attribution per feature over retained anomalies,
    per cluster."""
    path = Path(path)
    by_cluster: dict[int, list[AnomalyRecord]] = {}
    for r in records:
        if r.label == "anomalous" and not r.filtered and r.shap is not None:
            by_cluster.setdefault(r.cluster, []).append(r)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["cluster", "feature", "mean_abs_shap"])
        for c in sorted(by_cluster):
            mat = np.array([r.shap for r in by_cluster[c]])
            means = np.mean(np.abs(mat), axis=0)
            for fname, v in zip(FEATURE_NAMES, means):
                writer.writerow([str(c), fname, repr(float(v))])
