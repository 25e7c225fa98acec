"""Noise-corrected backbone extraction.

Edge weights are tested against a binomial null model built from node
strengths: with n_i the weighted degree of node i and n_tot the sum of all
strengths, an edge's connection probability is p_ij = n_i * n_j / n_tot**2,
its expected weight n_tot * p_ij, and its variance n_tot * p_ij * (1 - p_ij).
An edge is kept when its weight exceeds the noise threshold delta standard
deviations; the default test is on the residual (weight minus expectation),
with a raw-threshold variant testing the weight directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from coordscan.cosharing import CoShareGraph
from coordscan.errors import ValidationError

DEFAULT_DELTA = 2.32  # two-sided normal quantile approximating p = 0.01


@dataclass
class NullModelStats:
    """Strength-based binomial null model for edge weights."""

    strength: dict[str, float]
    total: float
    prior: tuple[float, float] | None = None

    def p_hat(self, i: str, j: str) -> float:
        p = self.strength[i] * self.strength[j] / (self.total * self.total)
        if self.prior is not None:
            a, b = self.prior
            p = (self.total * p + a) / (self.total + a + b)
        return p

    def expectation(self, i: str, j: str) -> float:
        return self.total * self.p_hat(i, j)

    def variance(self, i: str, j: str) -> float:
        p = self.p_hat(i, j)
        return self.total * p * (1.0 - p)


@dataclass
class BackboneGraph:
    """Filtered co-sharing graph plus per-edge significance scores."""

    nodes: set[str] = field(default_factory=set)
    edges: dict[tuple[str, str], int] = field(default_factory=dict)
    scores: dict[tuple[str, str], float] = field(default_factory=dict)

    def adjacency(self) -> dict[str, dict[str, float]]:
        adj: dict[str, dict[str, float]] = {n: {} for n in self.nodes}
        for (a, b), w in self.edges.items():
            adj[a][b] = w
            adj[b][a] = w
        return adj


def null_model(
    g: CoShareGraph, prior: tuple[float, float] | None = None
) -> NullModelStats:
    """Node strengths and totals for the binomial null.

    ``prior`` applies Beta(a, b) shrinkage to the connection probability for
    callers wanting the original Bayesian correction.
    """
    if not g.edges:
        raise ValidationError("null model undefined for an edgeless graph")
    strength: dict[str, float] = {}
    for (a, b), w in g.edges.items():
        strength[a] = strength.get(a, 0.0) + w
        strength[b] = strength.get(b, 0.0) + w
    total = sum(strength.values())
    return NullModelStats(strength=strength, total=total, prior=prior)


def extract_backbone(
    g: CoShareGraph,
    delta: float = DEFAULT_DELTA,
    raw_threshold: bool = False,
    prior: tuple[float, float] | None = None,
) -> BackboneGraph:
    """Keep edges whose weight beats the null by delta standard deviations.

    Residual form (default): keep iff W - E > delta * sqrt(V). Raw form:
    keep iff W > delta * sqrt(V). Zero-variance edges (degenerate one-edge
    graphs) are kept iff W > E. Isolated nodes are retained either way.
    """
    if delta < 0:
        raise ValidationError(f"delta must be >= 0, got {delta}")
    stats = null_model(g, prior=prior)
    out = BackboneGraph(nodes=set(g.nodes))
    for key, w in g.edges.items():
        i, j = key
        e = stats.expectation(i, j)
        v = stats.variance(i, j)
        if v <= 0.0:
            keep = w > e
            score = math.inf if keep else -math.inf
        else:
            score = (w - e) / math.sqrt(v)
            if raw_threshold:
                keep = w > delta * math.sqrt(v)
            else:
                keep = w - e > delta * math.sqrt(v)
        if keep:
            out.edges[key] = w
            out.scores[key] = score
    return out
