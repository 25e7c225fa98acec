"""Synthetic corpora with planted coordinated behavior, for testing.

Organic users post at exponential inter-arrival times on their topic's
hashtag pool with random unit-vector embeddings. Coordinated users live in
topic 0: they post organically like everyone else, and additionally co-post
in every coordination event within a short window, on the same hashtag, with
near-duplicate embeddings. Ground truth lists all coordinated user pairs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from coordscan.errors import ValidationError
from coordscan.ingest import Corpus, EmbeddingTable, Post

logger = logging.getLogger(__name__)


@dataclass
class SynthSpec:
    n_organic_users: int = 500
    n_coordinated_users: int = 20
    n_topics: int = 4
    hashtags_per_topic: int = 25
    # topics other than 0 get hashtags_per_topic * this factor tags; a broad
    # pool dilutes their co-sharing so only topic 0 forms a dense community
    distractor_tag_factor: int = 1
    posts_per_user: int = 20
    # organic post counts are drawn uniformly from
    # [posts_per_user - jitter, posts_per_user + jitter]; heterogeneous
    # activity keeps the null model from cancelling the whole organic clique
    posts_jitter: int = 0
    hashtags_per_post: int = 2
    coordination_events: int = 30
    coordination_window_s: int = 300
    # events rotate over this many dedicated campaign hashtags, separate from
    # the organic topic pools
    campaign_tags: int = 10
    # organic users who also post on campaign hashtags, at random times with
    # random content; they connect the campaign to the organic crowd without
    # being coordinated
    n_amplifiers: int = 0
    amplifier_posts: int = 12
    # the last background_groups * background_group_size organic users are
    # split into tiny isolated interest groups with their own tag pools and
    # high activity; they add bulk co-sharing weight that keeps the null
    # model calibrated without forming analyzable clusters
    background_groups: int = 0
    background_group_size: int = 4
    background_posts: int = 60
    background_tags: int = 8
    organic_iat_scale_s: float = 6 * 3600.0
    embedding_dim: int = 32
    embedding_noise: float = 0.05
    time_span_s: int = 90 * 24 * 3600
    seed: int = 0

    def __post_init__(self):
        if self.n_organic_users < 0 or self.n_coordinated_users < 0:
            raise ValidationError("user counts must be non-negative")
        if self.coordination_window_s >= self.organic_iat_scale_s:
            raise ValidationError(
                "coordination window must be well below the organic IAT scale"
            )
        if self.n_topics < 1 or self.hashtags_per_topic < 1:
            raise ValidationError("need at least one topic and hashtag")
        if self.distractor_tag_factor < 1:
            raise ValidationError("distractor_tag_factor must be >= 1")
        if not 0 <= self.posts_jitter < self.posts_per_user:
            raise ValidationError("posts_jitter must be in [0, posts_per_user)")
        if self.campaign_tags < 1:
            raise ValidationError("need at least one campaign hashtag")
        if not 0 <= self.n_amplifiers <= self.n_organic_users:
            raise ValidationError("n_amplifiers must be within the organic users")
        if self.background_groups * self.background_group_size > self.n_organic_users:
            raise ValidationError("background groups exceed the organic user count")


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def synth_corpus(
    spec: SynthSpec,
) -> tuple[Corpus, EmbeddingTable, set[tuple[str, str]]]:
    """Generate (corpus, embeddings, ground-truth coordinated pairs)."""
    rng = np.random.default_rng(spec.seed)
    posts: list[Post] = []
    vectors: dict[str, np.ndarray] = {}
    next_id = 0

    def add_post(user: str, ts: int, tags: list[str], vec: np.ndarray) -> None:
        nonlocal next_id
        pid = f"p{next_id:07d}"
        next_id += 1
        posts.append(
            Post(user_id=user, post_id=pid, timestamp=ts, text=f"synthetic {pid}",
                 hashtags=tuple(tags))
        )
        vectors[pid] = vec

    topic_tags = [
        [
            f"t{t}tag{k}"
            for k in range(
                spec.hashtags_per_topic
                * (1 if t == 0 else spec.distractor_tag_factor)
            )
        ]
        for t in range(spec.n_topics)
    ]

    organic_users = [f"org{u:04d}" for u in range(spec.n_organic_users)]
    coord_users = [f"coord{u:03d}" for u in range(spec.n_coordinated_users)]

    def organic_posts(user: str, pool: list[str], count: int) -> None:
        t = float(rng.uniform(0, spec.organic_iat_scale_s))
        for _ in range(count):
            t += rng.exponential(spec.organic_iat_scale_s)
            ts = int(t) % spec.time_span_s
            n_tags = min(spec.hashtags_per_post, len(pool))
            tags = list(rng.choice(pool, size=n_tags, replace=False))
            add_post(user, ts, tags, _unit(rng.normal(size=spec.embedding_dim)))

    def draw_count() -> int:
        if spec.posts_jitter == 0:
            return spec.posts_per_user
        return int(rng.integers(
            spec.posts_per_user - spec.posts_jitter,
            spec.posts_per_user + spec.posts_jitter + 1,
        ))

    n_background = spec.background_groups * spec.background_group_size
    topical = organic_users[: len(organic_users) - n_background]
    background = organic_users[len(organic_users) - n_background:]

    for u, user in enumerate(topical):
        organic_posts(user, topic_tags[u % spec.n_topics], draw_count())

    for g in range(spec.background_groups):
        pool = [f"bg{g}tag{k}" for k in range(spec.background_tags)]
        members = background[
            g * spec.background_group_size: (g + 1) * spec.background_group_size
        ]
        for user in members:
            organic_posts(user, pool, spec.background_posts)

    # Coordinated users blend into topic 0 with organic posting, then co-post
    # in synchronized bursts on campaign hashtags.
    for user in coord_users:
        organic_posts(user, topic_tags[0], spec.posts_per_user)

    campaign = [f"campaign{k}" for k in range(spec.campaign_tags)]
    for user in organic_users[: spec.n_amplifiers]:
        for _ in range(spec.amplifier_posts):
            tag = campaign[int(rng.integers(len(campaign)))]
            ts = int(rng.uniform(0, spec.time_span_s))
            add_post(user, ts, [tag], _unit(rng.normal(size=spec.embedding_dim)))

    event_times = np.sort(rng.uniform(0, spec.time_span_s, size=spec.coordination_events))
    for e, t0 in enumerate(event_times):
        tag = campaign[e % len(campaign)]
        base_vec = _unit(rng.normal(size=spec.embedding_dim))
        for user in coord_users:
            ts = int(t0 + rng.uniform(0, spec.coordination_window_s))
            vec = _unit(base_vec + spec.embedding_noise * rng.normal(size=spec.embedding_dim))
            add_post(user, ts, [tag], vec)

    truth = {
        (a, b)
        for i, a in enumerate(coord_users)
        for b in coord_users[i + 1:]
    }
    corpus = Corpus(posts=posts)
    table = EmbeddingTable(dim=spec.embedding_dim, vectors=vectors)
    logger.info(
        "synthesized %d posts, %d users, %d coordinated pairs",
        len(posts), len(corpus.users), len(truth),
    )
    return corpus, table, truth
