"""Corpus loading, preprocessing, and text-embedding tables.

Input posts arrive as jsonl (one object per line with keys ``user_id``,
``post_id``, ``timestamp``, ``text``, ``hashtags``) or csv with the same
columns (hashtags space-separated inside the field). Preprocessing collapses
duplicate post ids, strips mention/URL/hashtag tokens from the text, drops
posts without hashtags, and removes users left with fewer than two posts.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from coordscan.errors import ValidationError

logger = logging.getLogger(__name__)

REQUIRED_FIELDS = ("user_id", "post_id", "timestamp", "text", "hashtags")

_STRIP_PREFIXES = ("http", "www.", "@", "#")


@dataclass(frozen=True)
class Post:
    """One social-media message."""

    user_id: str
    post_id: str
    timestamp: int
    text: str
    hashtags: tuple[str, ...]


@dataclass
class Corpus:
    """A collection of posts with derived user and hashtag sets."""

    posts: list[Post]

    @property
    def users(self) -> set[str]:
        return {p.user_id for p in self.posts}

    @property
    def hashtags(self) -> set[str]:
        return {h for p in self.posts for h in p.hashtags}

    def posts_by_user(self) -> dict[str, list[Post]]:
        out: dict[str, list[Post]] = {}
        for p in self.posts:
            out.setdefault(p.user_id, []).append(p)
        return out

    def __len__(self) -> int:
        return len(self.posts)


@dataclass
class EmbeddingTable:
    """Per-post (or per-user) real vectors of a fixed dimension.

    ``flagged`` holds keys whose vector is all-zero (e.g. empty source text);
    downstream similarity treats those as missing.
    """

    dim: int
    vectors: dict[str, np.ndarray]
    flagged: frozenset[str] = field(default_factory=frozenset)

    def __contains__(self, key: str) -> bool:
        return key in self.vectors and key not in self.flagged


def _normalize_hashtags(raw) -> tuple[str, ...]:
    if not isinstance(raw, (list, tuple)):
        raise ValidationError(f"hashtags must be a list, got {type(raw).__name__}")
    tags = []
    for h in raw:
        h = str(h).lstrip("#").lower()
        if h:
            tags.append(h)
    return tuple(tags)


def _make_post(record: dict, where: str) -> Post:
    for key in REQUIRED_FIELDS:
        if key not in record or record[key] is None:
            raise ValidationError(f"{where}: missing required field '{key}'")
    try:
        ts = int(record["timestamp"])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"{where}: bad timestamp {record['timestamp']!r}") from exc
    if ts < 0:
        raise ValidationError(f"{where}: negative timestamp {ts}")
    return Post(
        user_id=str(record["user_id"]),
        post_id=str(record["post_id"]),
        timestamp=ts,
        text=str(record["text"]),
        hashtags=_normalize_hashtags(record["hashtags"]),
    )


def load_corpus(path: str | Path, format: str = "jsonl", max_bad: int = 0) -> Corpus:
    """Load a raw corpus from disk.

    Records with missing or malformed required fields raise ValidationError
    naming the offending line; up to ``max_bad`` such records are skipped
    (with a logged count) before the load fails.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"posts file not found: {path}")
    if format not in ("jsonl", "csv"):
        raise ValidationError(f"unknown corpus format: {format!r}")

    posts: list[Post] = []
    bad = 0
    if format == "jsonl":
        with path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    if not isinstance(record, dict):
                        raise ValidationError(f"line {lineno}: not an object")
                    posts.append(_make_post(record, f"line {lineno}"))
                except (json.JSONDecodeError, ValidationError) as exc:
                    bad += 1
                    if bad > max_bad:
                        if isinstance(exc, ValidationError):
                            raise
                        raise ValidationError(f"line {lineno}: invalid json") from exc
    else:
        with path.open(encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                try:
                    record = dict(row)
                    record["hashtags"] = (record.get("hashtags") or "").split()
                    posts.append(_make_post(record, f"line {lineno}"))
                except ValidationError:
                    bad += 1
                    if bad > max_bad:
                        raise
    if bad:
        logger.warning("rejected %d malformed records from %s", bad, path)
    return Corpus(posts=posts)


def clean_text(text: str) -> str:
    """Drop mention, URL, and hashtag tokens; collapse whitespace."""
    kept = [
        tok
        for tok in text.split()
        if not tok.lower().startswith(_STRIP_PREFIXES)
    ]
    return " ".join(kept)


def preprocess(corpus: Corpus) -> Corpus:
    """Deduplicate, clean, and filter the corpus.

    Steps, in order: collapse duplicate post_ids to the first occurrence;
    strip mention/URL/hashtag tokens from text; drop posts with no hashtags;
    drop users with fewer than two remaining posts (repeated to fixpoint).
    """
    seen: set[str] = set()
    deduped: list[Post] = []
    for p in corpus.posts:
        if p.post_id in seen:
            continue
        seen.add(p.post_id)
        deduped.append(p)

    cleaned = [
        Post(p.user_id, p.post_id, p.timestamp, clean_text(p.text), p.hashtags)
        for p in deduped
    ]
    cleaned = [p for p in cleaned if p.hashtags]

    while True:
        counts: dict[str, int] = {}
        for p in cleaned:
            counts[p.user_id] = counts.get(p.user_id, 0) + 1
        keep = {u for u, c in counts.items() if c >= 2}
        if len(keep) == len(counts):
            break
        cleaned = [p for p in cleaned if p.user_id in keep]

    if not cleaned:
        raise ValidationError("corpus is empty after preprocessing")
    return Corpus(posts=cleaned)


def load_embeddings(
    path: str | Path,
    corpus: Corpus | None = None,
    strict: bool = False,
) -> EmbeddingTable:
    """Load precomputed text embeddings.

    File format: first line ``{"dim": D}``, then one object per line
    ``{"post_id": ..., "v": [D floats]}``. Keys unknown to ``corpus`` raise
    in strict mode, otherwise they are skipped with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"embeddings file not found: {path}")
    known = {p.post_id for p in corpus.posts} if corpus is not None else None
    vectors: dict[str, np.ndarray] = {}
    skipped = 0
    with path.open(encoding="utf-8") as fh:
        header = fh.readline()
        try:
            dim = int(json.loads(header)["dim"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: bad embeddings header") from exc
        if dim < 1:
            raise ValidationError(f"{path}: non-positive dim {dim}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                key = str(record["post_id"])
                vec = np.asarray(record["v"], dtype=float)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValidationError(f"{path} line {lineno}: bad record") from exc
            if vec.shape != (dim,):
                raise ValidationError(
                    f"{path} line {lineno}: expected {dim} values, got {vec.size}"
                )
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"{path} line {lineno}: non-finite component")
            if known is not None and key not in known:
                if strict:
                    raise ValidationError(
                        f"{path} line {lineno}: post_id {key!r} not in corpus"
                    )
                skipped += 1
                continue
            vectors[key] = vec
    if skipped:
        logger.warning("skipped %d embeddings for unknown post ids", skipped)
    return EmbeddingTable(dim=dim, vectors=vectors)


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    """Write a table in the same jsonl format ``load_embeddings`` reads."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": table.dim}) + "\n")
        for key in sorted(table.vectors):
            fh.write(
                json.dumps({"post_id": key, "v": [float(x) for x in table.vectors[key]]})
                + "\n"
            )


def _token_bucket(token: str, dim: int, seed: int) -> tuple[int, int]:
    digest = hashlib.blake2b(f"{seed}|{token}".encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "big")
    return value % dim, 1 if (value >> 32) & 1 else -1


def fallback_embed(corpus: Corpus, dim: int = 64, seed: int = 0) -> EmbeddingTable:
    """Deterministic hashed bag-of-words embeddings (test substitute).

    Each lowercased token of the cleaned text is hashed into one of ``dim``
    buckets with a +/-1 sign; the vector is L2-normalized. Posts with empty
    cleaned text get a zero vector and are flagged.
    """
    if dim < 8:
        raise ValidationError(f"fallback embedding dim must be >= 8, got {dim}")
    vectors: dict[str, np.ndarray] = {}
    flagged: set[str] = set()
    for p in corpus.posts:
        vec = np.zeros(dim)
        for token in p.text.lower().split():
            bucket, sign = _token_bucket(token, dim, seed)
            vec[bucket] += sign
        norm = math.sqrt(float(vec @ vec))
        if norm == 0.0:
            flagged.add(p.post_id)
        else:
            vec /= norm
        vectors[p.post_id] = vec
    if flagged:
        logger.warning("fallback embedding: %d posts with empty text", len(flagged))
    return EmbeddingTable(dim=dim, vectors=vectors, flagged=frozenset(flagged))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Persist a corpus as jsonl (round-trips through ``load_corpus``)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for p in corpus.posts:
            fh.write(
                json.dumps(
                    {
                        "user_id": p.user_id,
                        "post_id": p.post_id,
                        "timestamp": p.timestamp,
                        "text": p.text,
                        "hashtags": list(p.hashtags),
                    }
                )
                + "\n"
            )
