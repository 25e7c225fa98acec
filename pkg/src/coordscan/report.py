"""Run summaries: network statistics, per-cluster median feature tables, and
attribution summaries."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from coordscan.anomaly import AnomalyRecord
from coordscan.community import Partition
from coordscan.features import FEATURE_NAMES, EdgeFeatureRow, lower_median

logger = logging.getLogger(__name__)

STAT_ROWS = (
    "nodes", "edges", "density", "centralization", "modularity",
    "mean_edge_weight", "sd_edge_weight", "mean_node_degree", "sd_node_degree",
)


def network_stats(g, partition: Partition | None = None) -> dict:
    """Summary statistics for a weighted graph.

    Centralization is Freeman degree centralization on unweighted degrees;
    undefined (None) for fewer than 3 nodes.
    """
    n = len(g.nodes)
    e = len(g.edges)
    degrees = {node: 0 for node in g.nodes}
    for (a, b) in g.edges:
        degrees[a] += 1
        degrees[b] += 1
    deg = np.array(sorted(degrees.values()), dtype=float)
    weights = np.array(sorted(g.edges.values()), dtype=float)

    density = 2.0 * e / (n * (n - 1)) if n > 1 else 0.0
    if n >= 3:
        centralization = float(np.sum(deg.max() - deg)) / ((n - 1) * (n - 2))
    else:
        centralization = None
    return {
        "nodes": n,
        "edges": e,
        "density": density,
        "centralization": centralization,
        "modularity": partition.modularity if partition is not None else None,
        "mean_edge_weight": float(weights.mean()) if e else 0.0,
        "sd_edge_weight": float(weights.std()) if e else 0.0,
        "mean_node_degree": float(deg.mean()) if n else 0.0,
        "sd_node_degree": float(deg.std()) if n else 0.0,
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def write_stats_table(original: dict, backbone: dict, path: str | Path) -> None:
    """Network summary table, original vs backbone columns."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "original", "backbone"])
        for key in STAT_ROWS:
            writer.writerow([key, _fmt(original[key]), _fmt(backbone[key])])


def median_feature_table(
    rows: list[EdgeFeatureRow], records: list[AnomalyRecord]
) -> list[dict]:
    """Per-cluster medians of each feature, split into retained anomalies
    (post-filter) and normal rows. Clusters without anomalies get empty
    anomaly cells."""
    status = {r.edge: r for r in records}
    by_cluster: dict[int, list[EdgeFeatureRow]] = {}
    for row in rows:
        by_cluster.setdefault(row.cluster, []).append(row)

    table = []
    for c in sorted(by_cluster):
        anom = []
        norm = []
        for row in by_cluster[c]:
            rec = status.get(row.edge)
            if rec is None:
                continue
            if rec.label == "anomalous" and not rec.filtered:
                anom.append(row)
            elif rec.label == "normal":
                norm.append(row)
        entry = {"cluster": c}
        for fi, fname in enumerate(FEATURE_NAMES):
            entry[f"{fname}_anom"] = (
                lower_median([r.values()[fi] for r in anom]) if anom else None
            )
            entry[f"{fname}_norm"] = (
                lower_median([r.values()[fi] for r in norm]) if norm else None
            )
        table.append(entry)
    return table


def write_median_table(table: list[dict], path: str | Path) -> None:
    path = Path(path)
    columns = ["cluster"]
    for fname in FEATURE_NAMES:
        columns += [f"{fname}_anom", f"{fname}_norm"]
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for entry in table:
            writer.writerow(
                [str(entry["cluster"])] + [_fmt(entry[c]) for c in columns[1:]]
            )


def top_hashtags_by_cluster(
    corpus, records: list[AnomalyRecord], k: int = 10
) -> dict[int, list[str]]:
    """Most-shared hashtags among users on retained anomalous edges."""
    anomalous_users: dict[int, set[str]] = {}
    for r in records:
        if r.label == "anomalous" and not r.filtered:
            anomalous_users.setdefault(r.cluster, set()).update((r.user_a, r.user_b))
    out: dict[int, list[str]] = {}
    for c, users in sorted(anomalous_users.items()):
        counts: dict[str, int] = {}
        for p in corpus.posts:
            if p.user_id in users:
                for tag in set(p.hashtags):
                    counts[tag] = counts.get(tag, 0) + 1
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        out[c] = [tag for tag, _ in ranked[:k]]
    return out


def write_summary_json(summary: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
