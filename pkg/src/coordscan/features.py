"""Per-edge features: weight, content similarity, inter-arrival time, node
similarity.

Content similarity averages, over the hashtags two users share, the cosine
between their mean post embeddings under each hashtag. The temporal signature
collects cross-user absolute time differences per shared hashtag, keeps the
min(sigma_i, sigma_j) smallest per hashtag, pools them, and reports the
median in hours (lower median for even counts). Features are computed only
for backbone edges whose endpoints fall in the same cluster.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from coordscan.cosharing import BipartiteCounts
from coordscan.embedding import NodeEmbeddings, node_cosine
from coordscan.errors import ValidationError
from coordscan.ingest import Corpus, EmbeddingTable

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0

HashtagTimeline = dict[tuple[str, str], list[int]]


@dataclass
class EdgeFeatureRow:
    """Feature vector for one intra-cluster backbone edge."""

    user_a: str
    user_b: str
    cluster: int
    weight: int
    content_sim: float
    iat_hours: float
    node_sim: float
    content_missing: bool = False

    @property
    def edge(self) -> tuple[str, str]:
        return (self.user_a, self.user_b)

    def values(self) -> np.ndarray:
        return np.array([self.weight, self.content_sim, self.iat_hours, self.node_sim])


FEATURE_NAMES = ("weight", "content_sim", "iat_hours", "node_sim")


def build_timelines(corpus: Corpus) -> HashtagTimeline:
    """Sorted post timestamps per (user, hashtag); one entry per post."""
    timelines: HashtagTimeline = {}
    for p in corpus.posts:
        for tag in set(p.hashtags):
            timelines.setdefault((p.user_id, tag), []).append(p.timestamp)
    for times in timelines.values():
        times.sort()
    return timelines


def lower_median(values) -> float:
    """Median that is always an observed value (lower middle on even counts)."""
    ordered = sorted(values)
    if not ordered:
        raise ValidationError("median of an empty collection")
    return float(ordered[(len(ordered) - 1) // 2])


def _user_tags(counts: BipartiteCounts) -> dict[str, set[str]]:
    out: dict[str, set[str]] = {}
    for (user, tag) in counts:
        out.setdefault(user, set()).add(tag)
    return out


def shared_hashtags(counts: BipartiteCounts, i: str, j: str) -> list[str]:
    tags_i = {tag for (u, tag) in counts if u == i}
    tags_j = {tag for (u, tag) in counts if u == j}
    return sorted(tags_i & tags_j)


def mean_tag_embedding(
    posts_by_user_tag: dict[tuple[str, str], list[str]],
    embeddings: EmbeddingTable,
    user: str,
    tag: str,
) -> np.ndarray | None:
    """Mean embedding of a user's posts containing a hashtag; None if none
    of those posts has a usable embedding."""
    ids = [pid for pid in posts_by_user_tag.get((user, tag), []) if pid in embeddings]
    if not ids:
        return None
    return np.mean([embeddings.vectors[pid] for pid in ids], axis=0)


def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def content_similarity(
    i: str,
    j: str,
    shared: list[str],
    posts_by_user_tag: dict[tuple[str, str], list[str]],
    embeddings: EmbeddingTable,
) -> tuple[float, bool]:
    """Mean over shared hashtags of the cosine between per-hashtag mean post
    embeddings. Hashtags where either side has no embedded posts are skipped;
    if all are skipped the value is 0.0 with the missing flag set."""
    if not shared:
        raise ValidationError(f"users {i!r} and {j!r} share no hashtag")
    sims = []
    for tag in shared:
        mu_i = mean_tag_embedding(posts_by_user_tag, embeddings, i, tag)
        mu_j = mean_tag_embedding(posts_by_user_tag, embeddings, j, tag)
        if mu_i is None or mu_j is None:
            continue
        sims.append(_cosine(mu_i, mu_j))
    if not sims:
        return 0.0, True
    return float(np.mean(sims)), False


def temporal_signature(
    i: str,
    j: str,
    shared: list[str],
    timelines: HashtagTimeline,
    mode: str = "cross",
) -> float:
    """Median coordination lag between two users, in hours.

    cross mode (default): per shared hashtag, all |t_a - t_b| between the two
    users' post times, keeping the min(sigma_i, sigma_j) smallest.
    merged mode: gaps between consecutive posts of different users on the
    merged per-hashtag timeline, same keep rule. Kept values are pooled over
    hashtags before taking the median.
    """
    if mode not in ("cross", "merged"):
        raise ValidationError(f"unknown iat mode: {mode!r}")
    pooled: list[int] = []
    for tag in shared:
        ti = timelines.get((i, tag), [])
        tj = timelines.get((j, tag), [])
        if not ti or not tj:
            continue
        keep = min(len(ti), len(tj))
        if mode == "cross":
            diffs = sorted(abs(a - b) for a in ti for b in tj)
        else:
            merged = sorted([(t, 0) for t in ti] + [(t, 1) for t in tj])
            diffs = sorted(
                b[0] - a[0]
                for a, b in zip(merged, merged[1:])
                if a[1] != b[1]
            )
        pooled.extend(diffs[:keep])
    if not pooled:
        raise ValidationError(f"no co-share timestamps for {i!r} and {j!r}")
    return lower_median(pooled) / SECONDS_PER_HOUR


def assemble_features(
    backbone,
    partition,
    corpus: Corpus,
    counts: BipartiteCounts,
    embeddings: EmbeddingTable,
    node_embeddings: NodeEmbeddings | None,
    iat_mode: str = "cross",
) -> list[EdgeFeatureRow]:
    """One feature row per intra-cluster backbone edge, sorted by
    (cluster, edge). Inter-cluster edges are excluded."""
    timelines = build_timelines(corpus)
    user_tags = _user_tags(counts)
    posts_by_user_tag: dict[tuple[str, str], list[str]] = {}
    for p in corpus.posts:
        for tag in set(p.hashtags):
            posts_by_user_tag.setdefault((p.user_id, tag), []).append(p.post_id)

    assignment = partition.assignment
    rows: list[EdgeFeatureRow] = []
    skipped = 0
    for (a, b), w in backbone.edges.items():
        ca = assignment[a]
        cb = assignment[b]
        if ca != cb:
            skipped += 1
            continue
        shared = sorted(user_tags.get(a, set()) & user_tags.get(b, set()))
        csim, missing = content_similarity(a, b, shared, posts_by_user_tag, embeddings)
        iat = temporal_signature(a, b, shared, timelines, mode=iat_mode)
        if (
            node_embeddings is not None
            and a in node_embeddings.vectors
            and b in node_embeddings.vectors
        ):
            nsim = node_cosine(node_embeddings, a, b)
        else:
            nsim = 0.0
        rows.append(
            EdgeFeatureRow(
                user_a=a,
                user_b=b,
                cluster=ca,
                weight=w,
                content_sim=csim,
                iat_hours=iat,
                node_sim=nsim,
                content_missing=missing,
            )
        )
    if skipped:
        logger.info("excluded %d inter-cluster edges from features", skipped)
    rows.sort(key=lambda r: (r.cluster, r.user_a, r.user_b))
    for r in rows:
        if not np.all(np.isfinite(r.values())):
            raise ValidationError(f"non-finite feature for edge {r.edge}")
    return rows


def missing_content_fraction(rows: list[EdgeFeatureRow]) -> dict[int, float]:
    """Per-cluster share of rows whose content similarity is missing."""
    totals: dict[int, int] = {}
    missing: dict[int, int] = {}
    for r in rows:
        totals[r.cluster] = totals.get(r.cluster, 0) + 1
        if r.content_missing:
            missing[r.cluster] = missing.get(r.cluster, 0) + 1
    return {c: missing.get(c, 0) / totals[c] for c in totals}


def write_features_csv(rows: list[EdgeFeatureRow], path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["user_a", "user_b", "cluster", "weight", "content_sim", "iat_hours",
             "node_sim", "content_missing"]
        )
        for r in rows:
            writer.writerow(
                [r.user_a, r.user_b, str(r.cluster), str(r.weight),
                 repr(r.content_sim), repr(r.iat_hours), repr(r.node_sim),
                 "1" if r.content_missing else "0"]
            )


def read_features_csv(path: str | Path) -> list[EdgeFeatureRow]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"features file not found: {path}")
    rows = []
    with path.open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(
                EdgeFeatureRow(
                    user_a=row["user_a"],
                    user_b=row["user_b"],
                    cluster=int(row["cluster"]),
                    weight=int(row["weight"]),
                    content_sim=float(row["content_sim"]),
                    iat_hours=float(row["iat_hours"]),
                    node_sim=float(row["node_sim"]),
                    content_missing=row.get("content_missing") == "1",
                )
            )
    return rows
