"""Node embeddings via biased random walks and skip-gram negative sampling.

Walks are second-order: stepping from v after arriving from t, the
unnormalized probability of moving to x is w_vx/p if x == t, w_vx if x is
adjacent to t, and w_vx/q otherwise. Training is plain SGNS with noise
words drawn from the walk unigram distribution raised to 0.75 and a linear
learning-rate decay; the sequential update order makes results bit-for-bit
reproducible for a fixed seed.
"""

from __future__ import annotations

import bisect
import logging
import random
from dataclasses import dataclass

import numpy as np

from coordscan.errors import ValidationError

logger = logging.getLogger(__name__)


@dataclass
class WalkConfig:
    """Random-walk parameters (node2vec reference defaults)."""

    p: float = 1.0
    q: float = 1.0
    walk_length: int = 80
    walks_per_node: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.p <= 0 or self.q <= 0:
            raise ValidationError("walk bias parameters p and q must be > 0")
        if self.walk_length < 2:
            raise ValidationError("walk_length must be >= 2")
        if self.walks_per_node < 1:
            raise ValidationError("walks_per_node must be >= 1")


@dataclass
class NodeEmbeddings:
    """Trained vectors for every non-isolated node."""

    dim: int
    vectors: dict[str, np.ndarray]


def _walk_rng(seed: int, node: str, walk_index: int) -> random.Random:
    # String seeding hashes via sha512 in CPython, stable across runs, so
    # per-walk streams are independent of scheduling.
    return random.Random(f"{seed}|{node}|{walk_index}")


def _weighted_choice(items, cumulative, rng: random.Random):
    x = rng.random() * cumulative[-1]
    return items[bisect.bisect_right(cumulative, x)]


def generate_walks(g, cfg: WalkConfig) -> list[list[str]]:
    """Biased second-order walks from every non-isolated node."""
    if not g.edges:
        raise ValidationError("cannot walk an edgeless graph")
    adj = g.adjacency()
    nbrs = {n: sorted(adj[n]) for n in adj}
    nbr_sets = {n: set(adj[n]) for n in adj}
    first_cum = {}
    for n in adj:
        acc, total = [], 0.0
        for nb in nbrs[n]:
            total += adj[n][nb]
            acc.append(total)
        first_cum[n] = acc

    walks: list[list[str]] = []
    for node in sorted(adj):
        if not nbrs[node]:
            continue
        for wi in range(cfg.walks_per_node):
            rng = _walk_rng(cfg.seed, node, wi)
            walk = [node]
            cur = node
            prev = None
            for _ in range(cfg.walk_length - 1):
                choices = nbrs[cur]
                if not choices:
                    break
                if prev is None:
                    nxt = _weighted_choice(choices, first_cum[cur], rng)
                else:
                    prev_nbrs = nbr_sets[prev]
                    acc, total = [], 0.0
                    for x in choices:
                        w = adj[cur][x]
                        if x == prev:
                            w /= cfg.p
                        elif x in prev_nbrs:
                            pass
                        else:
                            w /= cfg.q
                        total += w
                        acc.append(total)
                    nxt = _weighted_choice(choices, acc, rng)
                walk.append(nxt)
                prev, cur = cur, nxt
            walks.append(walk)
    return walks


def train_skipgram(
    walks: list[list[str]],
    dim: int = 128,
    window: int = 10,
    negatives: int = 5,
    epochs: int = 5,
    lr: float = 0.025,
    seed: int = 0,
) -> NodeEmbeddings:
    """Sequential SGNS over the walk corpus.

    Maximizes log sigmoid(u.v) for observed center/context pairs plus
    log sigmoid(-u.v) for ``negatives`` noise nodes per pair; the learning
    rate decays linearly to lr/100 over all updates.
    """
    if dim < 2:
        raise ValidationError("embedding dim must be >= 2")
    if window < 1:
        raise ValidationError("window must be >= 1")
    usable = [w for w in walks if len(w) >= 2]
    if not usable:
        raise ValidationError("no walk of length >= 2")

    vocab = sorted({n for w in usable for n in w})
    index = {n: i for i, n in enumerate(vocab)}
    V = len(vocab)
    seqs = [np.array([index[n] for n in w], dtype=np.int64) for w in usable]

    counts = np.zeros(V)
    for s in seqs:
        np.add.at(counts, s, 1.0)
    noise = counts**0.75
    noise_cum = np.cumsum(noise / noise.sum())

    rng = np.random.default_rng(seed)
    w_in = (rng.random((V, dim)) - 0.5) / dim
    w_out = np.zeros((V, dim))

    total_pairs = sum(
        sum(min(i + window, len(s) - 1) - max(i - window, 0) for i in range(len(s)))
        for s in seqs
    )
    total_updates = max(1, total_pairs * epochs)
    min_frac = 0.01
    done = 0

    for _ in range(epochs):
        for s in seqs:
            for i, center in enumerate(s):
                lo = max(i - window, 0)
                hi = min(i + window, len(s) - 1)
                for j in range(lo, hi + 1):
                    if j == i:
                        continue
                    alpha = lr * (1.0 - (1.0 - min_frac) * done / total_updates)
                    done += 1
                    u = w_in[center]
                    du = np.zeros(dim)
                    targets = [(int(s[j]), 1.0)]
                    for _k in range(negatives):
                        neg = int(np.searchsorted(noise_cum, rng.random()))
                        targets.append((neg, 0.0))
                    for t, label in targets:
                        v = w_out[t]
                        f = 1.0 / (1.0 + np.exp(-float(u @ v)))
                        grad = (label - f) * alpha
                        du += grad * v
                        w_out[t] = v + grad * u
                    w_in[center] = u + du

    vectors = {node: w_in[index[node]].copy() for node in vocab}
    for node, vec in vectors.items():
        if not np.all(np.isfinite(vec)):
            raise ValidationError(f"non-finite embedding for node {node!r}")
    return NodeEmbeddings(dim=dim, vectors=vectors)


def node_cosine(e: NodeEmbeddings, i: str, j: str) -> float:
    """Cosine similarity of two trained node vectors."""
    u = e.vectors[i]
    v = e.vectors[j]
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("zero embedding vector")
    return float(u @ v) / (nu * nv)
