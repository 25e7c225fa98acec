import json
import random

import numpy as np
import pytest

from coordscan.errors import ValidationError
from coordscan.ingest import (
    Corpus,
    Post,
    clean_text,
    fallback_embed,
    load_corpus,
    load_embeddings,
    preprocess,
    save_corpus,
    save_embeddings,
)


def make_post(user="u1", pid="p1", ts=0, text="hello", tags=("a",)):
    return Post(user_id=user, post_id=pid, timestamp=ts, text=text, hashtags=tuple(tags))


def write_jsonl(path, records):
    with path.open("w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")


VALID = [
    {"user_id": "u1", "post_id": "p1", "timestamp": 10, "text": "a b", "hashtags": ["X"]},
    {"user_id": "u1", "post_id": "p2", "timestamp": 20, "text": "c", "hashtags": ["y"]},
    {"user_id": "u2", "post_id": "p3", "timestamp": 30, "text": "d", "hashtags": ["y"]},
]


class TestLoadCorpus:
    def test_three_valid_lines(self, tmp_path):
        path = tmp_path / "posts.jsonl"
        write_jsonl(path, VALID)
        corpus = load_corpus(path)
        assert len(corpus) == 3
        assert corpus.users == {"u1", "u2"}

    def test_hashtags_lowercased_and_stripped(self, tmp_path):
        path = tmp_path / "posts.jsonl"
        write_jsonl(path, [dict(VALID[0], hashtags=["#News", "NEWS"])])
        corpus = load_corpus(path)
        assert corpus.posts[0].hashtags == ("news", "news")

    def test_missing_timestamp_names_line(self, tmp_path):
        record = {k: v for k, v in VALID[0].items() if k != "timestamp"}
        path = tmp_path / "posts.jsonl"
        write_jsonl(path, [VALID[0], record])
        with pytest.raises(ValidationError, match="line 2.*timestamp"):
            load_corpus(path)

    def test_bad_record_tolerance(self, tmp_path):
        record = {k: v for k, v in VALID[0].items() if k != "timestamp"}
        path = tmp_path / "posts.jsonl"
        write_jsonl(path, [record] + VALID)
        corpus = load_corpus(path, max_bad=1)
        assert len(corpus) == 3

    def test_csv_roundtrip(self, tmp_path):
        path = tmp_path / "posts.csv"
        path.write_text(
            "user_id,post_id,timestamp,text,hashtags\n"
            "u1,p1,10,hello world,a b\n"
            "u1,p2,20,more text,a\n"
        )
        corpus = load_corpus(path, format="csv")
        assert corpus.posts[0].hashtags == ("a", "b")
        assert corpus.posts[1].timestamp == 20

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError):
            load_corpus(tmp_path / "nope.jsonl")

    def test_negative_timestamp_rejected(self, tmp_path):
        path = tmp_path / "posts.jsonl"
        write_jsonl(path, [dict(VALID[0], timestamp=-5)])
        with pytest.raises(ValidationError):
            load_corpus(path)


class TestPreprocess:
    def test_single_post_user_removed(self):
        corpus = Corpus(posts=[
            make_post("u1", "p1", tags=["a"]),
            make_post("u2", "p2", tags=["a"]),
            make_post("u2", "p3", tags=["b"]),
        ])
        out = preprocess(corpus)
        assert out.users == {"u2"}

    def test_text_cleaning(self):
        assert clean_text("go #vote now @bob http://x.y") == "go now"
        assert clean_text("see www.site.com HTTP://Y") == "see"

    def test_duplicate_post_id_first_kept(self):
        corpus = Corpus(posts=[
            make_post("u1", "p1", text="first", tags=["a"]),
            make_post("u1", "p1", text="second", tags=["a"]),
            make_post("u1", "p2", tags=["a"]),
        ])
        out = preprocess(corpus)
        assert [p.text for p in out.posts] == ["first", "hello"]

    def test_order_stable_dedup_on_shuffled_fixture(self):
        # oracle: first occurrence in input order wins, whatever the order is
        rng = random.Random(7)
        for _ in range(20):
            base = [
                make_post("u1", f"p{i % 4}", text=f"t{i}", tags=["a"]) for i in range(12)
            ]
            rng.shuffle(base)
            expected = {}
            for p in base:
                expected.setdefault(p.post_id, p.text)
            out = preprocess(Corpus(posts=list(base)))
            assert {p.post_id: p.text for p in out.posts} == expected

    def test_empty_hashtag_posts_dropped_then_user_rule_reapplied(self):
        # u1 has 2 posts but one loses its hashtags -> falls below 2 -> dropped
        corpus = Corpus(posts=[
            make_post("u1", "p1", tags=["a"]),
            make_post("u1", "p2", tags=[]),
            make_post("u2", "p3", tags=["a"]),
            make_post("u2", "p4", tags=["b"]),
        ])
        out = preprocess(corpus)
        assert out.users == {"u2"}

    def test_idempotent(self):
        corpus = Corpus(posts=[
            make_post("u1", "p1", text="x #a @m", tags=["a"]),
            make_post("u1", "p2", tags=["b"]),
            make_post("u2", "p3", tags=["a"]),
            make_post("u2", "p4", tags=["a"]),
        ])
        once = preprocess(corpus)
        twice = preprocess(once)
        assert once.posts == twice.posts

    def test_invariants_after_preprocess(self):
        rng = random.Random(3)
        posts = [
            make_post(
                f"u{rng.randrange(6)}", f"p{i}",
                tags=[f"t{rng.randrange(4)}"] if rng.random() > 0.2 else [],
            )
            for i in range(40)
        ]
        out = preprocess(Corpus(posts=posts))
        per_user = out.posts_by_user()
        assert all(len(ps) >= 2 for ps in per_user.values())
        assert all(p.hashtags for p in out.posts)

    def test_empty_result_raises(self):
        with pytest.raises(ValidationError):
            preprocess(Corpus(posts=[make_post("u1", "p1", tags=["a"])]))

    def test_corpus_roundtrip(self, tmp_path):
        corpus = preprocess(Corpus(posts=[
            make_post("u1", "p1", tags=["a"]),
            make_post("u1", "p2", tags=["b"]),
        ]))
        save_corpus(corpus, tmp_path / "c.jsonl")
        loaded = load_corpus(tmp_path / "c.jsonl")
        assert loaded.posts == corpus.posts


class TestLoadEmbeddings:
    def write(self, path, dim, rows):
        with path.open("w") as fh:
            fh.write(json.dumps({"dim": dim}) + "\n")
            for pid, v in rows:
                fh.write(json.dumps({"post_id": pid, "v": v}) + "\n")

    def test_load(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        self.write(path, 4, [("p1", [1, 0, 0, 0]), ("p2", [0, 1, 0, 0])])
        table = load_embeddings(path)
        assert table.dim == 4
        assert set(table.vectors) == {"p1", "p2"}

    def test_dimension_mismatch(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        self.write(path, 4, [("p1", [1, 0, 0])])
        with pytest.raises(ValidationError, match="expected 4"):
            load_embeddings(path)

    def test_nan_rejected(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        self.write(path, 2, [("p1", [float("nan"), 0])])
        with pytest.raises(ValidationError, match="non-finite"):
            load_embeddings(path)

    def test_strict_vs_lenient_unknown_ids(self, tmp_path):
        corpus = Corpus(posts=[make_post("u1", "p1")])
        path = tmp_path / "emb.jsonl"
        self.write(path, 2, [("p1", [1, 0]), ("zz", [0, 1])])
        table = load_embeddings(path, corpus)
        assert set(table.vectors) == {"p1"}
        with pytest.raises(ValidationError, match="zz"):
            load_embeddings(path, corpus, strict=True)

    def test_roundtrip(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        self.write(path, 2, [("p1", [0.25, -1.5])])
        table = load_embeddings(path)
        save_embeddings(table, tmp_path / "emb2.jsonl")
        again = load_embeddings(tmp_path / "emb2.jsonl")
        assert np.array_equal(again.vectors["p1"], table.vectors["p1"])


class TestFallbackEmbed:
    def test_identical_texts_identical_vectors(self):
        corpus = Corpus(posts=[
            make_post("u1", "p1", text="same words here"),
            make_post("u2", "p2", text="same words here"),
        ])
        table = fallback_embed(corpus, dim=16, seed=1)
        v1, v2 = table.vectors["p1"], table.vectors["p2"]
        assert np.array_equal(v1, v2)
        assert abs(float(v1 @ v2) - 1.0) < 1e-12

    def test_pure_function_of_text_dim_seed(self):
        corpus = Corpus(posts=[make_post("u1", "p1", text="alpha beta")])
        a = fallback_embed(corpus, dim=32, seed=5).vectors["p1"]
        b = fallback_embed(corpus, dim=32, seed=5).vectors["p1"]
        c = fallback_embed(corpus, dim=32, seed=6).vectors["p1"]
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_matches_explicit_bucket_oracle(self):
        from coordscan.ingest import _token_bucket

        text = "one two three two"
        corpus = Corpus(posts=[make_post("u1", "p1", text=text)])
        dim, seed = 64, 9
        expected = np.zeros(dim)
        for token in text.lower().split():
            bucket, sign = _token_bucket(token, dim, seed)
            expected[bucket] += sign
        expected /= np.linalg.norm(expected)
        assert np.allclose(fallback_embed(corpus, dim, seed).vectors["p1"], expected)

    def test_disjoint_tokens_near_orthogonal(self):
        corpus = Corpus(posts=[
            make_post("u1", "p1", text="aaa bbb ccc"),
            make_post("u2", "p2", text="xxx yyy zzz"),
        ])
        table = fallback_embed(corpus, dim=4096, seed=2)
        cos = float(table.vectors["p1"] @ table.vectors["p2"])
        assert abs(cos) < 0.35  # zero unless buckets collide

    def test_empty_text_flagged(self):
        corpus = Corpus(posts=[make_post("u1", "p1", text="")])
        table = fallback_embed(corpus, dim=8, seed=0)
        assert np.all(table.vectors["p1"] == 0)
        assert "p1" in table.flagged
        assert "p1" not in table  # excluded from usable embeddings

    def test_dim_lower_bound(self):
        with pytest.raises(ValidationError):
            fallback_embed(Corpus(posts=[make_post()]), dim=4)
