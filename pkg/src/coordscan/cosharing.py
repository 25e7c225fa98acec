"""User-hashtag counts and projection to the weighted co-sharing graph.

The bipartite side is a count map sigma[(user, hashtag)] = number of that
user's posts containing the hashtag (message-level containment: a hashtag
repeated inside one post counts once). Projection connects every user pair
sharing at least one hashtag with weight sum_n min(sigma_i_n, sigma_j_n);
weight-1 edges are then dropped while the node set is kept intact.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

from coordscan.errors import ValidationError
from coordscan.ingest import Corpus

logger = logging.getLogger(__name__)

BipartiteCounts = dict[tuple[str, str], int]


def edge_key(a: str, b: str) -> tuple[str, str]:
    """Canonical unordered pair; self-pairs are invalid."""
    if a == b:
        raise ValidationError(f"self-loop edge for user {a!r}")
    return (a, b) if a < b else (b, a)


@dataclass
class CoShareGraph:
    """Undirected weighted graph over user accounts.

    Edge keys are lexicographically ordered pairs; isolated nodes are kept in
    ``nodes`` so node counts survive edge filtering.
    """

    nodes: set[str] = field(default_factory=set)
    edges: dict[tuple[str, str], int] = field(default_factory=dict)

    def weight(self, a: str, b: str) -> int:
        return self.edges.get(edge_key(a, b), 0)

    def degree(self, node: str) -> int:
        return sum(1 for k in self.edges if node in k)

    def adjacency(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {n: {} for n in self.nodes}
        for (a, b), w in self.edges.items():
            adj[a][b] = w
            adj[b][a] = w
        return adj


def count_shares(corpus: Corpus) -> BipartiteCounts:
    """sigma[(user, hashtag)] = count of the user's posts containing the tag."""
    sigma: BipartiteCounts = {}
    for post in corpus.posts:
        for tag in set(post.hashtags):
            key = (post.user_id, tag)
            sigma[key] = sigma.get(key, 0) + 1
    return sigma


def project(
    counts: BipartiteCounts, max_hashtag_degree: int | None = None
) -> CoShareGraph:
    """Project bipartite counts onto the user co-sharing graph.

    Computed per hashtag via an inverted index; identical to the definitional
    per-pair double loop. Hashtags used by more than ``max_hashtag_degree``
    users are skipped when the cap is set (their users still appear as nodes).
    """
    if not counts:
        raise ValidationError("empty bipartite counts")
    by_tag: dict[str, list[tuple[str, int]]] = {}
    nodes: set[str] = set()
    for (user, tag), c in counts.items():
        by_tag.setdefault(tag, []).append((user, c))
        nodes.add(user)

    edges: dict[tuple[str, str], int] = {}
    skipped = 0
    for tag, users in by_tag.items():
        if max_hashtag_degree is not None and len(users) > max_hashtag_degree:
            skipped += 1
            continue
        users.sort()
        for i in range(len(users)):
            ui, ci = users[i]
            for j in range(i + 1, len(users)):
                uj, cj = users[j]
                key = (ui, uj)
                edges[key] = edges.get(key, 0) + min(ci, cj)
    if skipped:
        logger.info("projection skipped %d hashtags above degree cap", skipped)
    return CoShareGraph(nodes=nodes, edges=edges)


def filter_weight_one(g: CoShareGraph) -> CoShareGraph:
    """Remove weight-1 edges; the node set is unchanged."""
    return CoShareGraph(
        nodes=set(g.nodes),
        edges={k: w for k, w in g.edges.items() if w >= 2},
    )


def write_edge_csv(g: CoShareGraph, path: str | Path, scores=None) -> None:
    """Deterministic edge-list export: ``user_a,user_b,weight[,score]``.

    Isolated nodes are written as rows with an empty ``user_b``, so the node
    set round-trips.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["user_a", "user_b", "weight"]
        if scores is not None:
            header.append("score")
        writer.writerow(header)
        touched: set[str] = set()
        for (a, b), w in sorted(g.edges.items()):
            touched.add(a)
            touched.add(b)
            row = [a, b, str(w)]
            if scores is not None:
                row.append(repr(scores[(a, b)]))
            writer.writerow(row)
        for node in sorted(g.nodes - touched):
            row = [node, "", "0"]
            if scores is not None:
                row.append("")
            writer.writerow(row)


def read_edge_csv(path: str | Path) -> tuple[CoShareGraph, dict[tuple[str, str], float]]:
    """Read an edge-list export; returns the graph and any score column."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"graph file not found: {path}")
    g = CoShareGraph()
    scores: dict[tuple[str, str], float] = {}
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            a = row["user_a"]
            b = row.get("user_b") or ""
            if not b:
                g.nodes.add(a)
                continue
            key = edge_key(a, b)
            g.nodes.update(key)
            g.edges[key] = int(row["weight"])
            if row.get("score"):
                scores[key] = float(row["score"])
    return g, scores
