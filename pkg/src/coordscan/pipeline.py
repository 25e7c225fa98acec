"""End-to-end orchestration with cached, resumable intermediate artifacts.

Every stage persists its output as plain CSV/JSON in the output directory;
``run_all`` recomputes only missing artifacts, so deleting one intermediate
file and re-running reproduces it byte-identically from its inputs. All
randomness derives from a single config seed expanded into named per-stage
streams.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from coordscan import anomaly as anomaly_mod
from coordscan import backbone as backbone_mod
from coordscan import community as community_mod
from coordscan import cosharing as cosharing_mod
from coordscan import features as features_mod
from coordscan import ingest as ingest_mod
from coordscan import report as report_mod
from coordscan.embedding import NodeEmbeddings, WalkConfig, generate_walks, train_skipgram
from coordscan.errors import StageError, ValidationError

logger = logging.getLogger(__name__)

STAGES = ("ingest", "graph", "backbone", "cluster", "embed", "features",
          "detect", "report")


def stage_seed(seed: int, name: str) -> int:
    """Stable per-stage seed derived from the single config seed."""
    digest = hashlib.blake2b(f"{seed}|{name}".encode("utf-8"), digest_size=4).digest()
    return int.from_bytes(digest, "big")


@dataclass
class PipelineConfig:
    posts_path: str = ""
    posts_format: str = "jsonl"
    embeddings_path: str | None = None
    strict_embeddings: bool = False
    fallback_embed: bool = False
    fallback_dim: int = 64
    max_hashtag_degree: int | None = None
    delta: float = backbone_mod.DEFAULT_DELTA
    raw_threshold: bool = False
    bayesian_prior: tuple[float, float] | None = None
    seed: int = 42
    walk_p: float = 1.0
    walk_q: float = 1.0
    walk_length: int = 80
    walks_per_node: int = 10
    embed_dim: int = 128
    window: int = 10
    negatives: int = 5
    epochs: int = 5
    lr: float = 0.025
    n_estimators: int = 100
    psi: int = 256
    contamination: float = 0.05
    iat_mode: str = "cross"
    shap_mode: str = "anomalous"
    top_k_hashtags: int = 10
    out_dir: str = "out"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        if cfg.bayesian_prior is not None:
            cfg.bayesian_prior = tuple(float(x) for x in cfg.bayesian_prior)
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib

            data = tomllib.loads(text)
        else:
            data = json.loads(text)
        return cls.from_dict(data)

    def echo(self) -> dict:
        data = dataclasses.asdict(self)
        if data["bayesian_prior"] is not None:
            data["bayesian_prior"] = list(data["bayesian_prior"])
        return data


@dataclass
class RunReport:
    summary: dict
    original_stats: dict
    backbone_stats: dict
    median_table: list[dict]
    timings: dict[str, float] = field(default_factory=dict)


def _load_node_embeddings(path: Path) -> NodeEmbeddings:
    table = ingest_mod.load_embeddings(path)
    return NodeEmbeddings(dim=table.dim, vectors=table.vectors)


def _save_node_embeddings(emb: NodeEmbeddings, path: Path) -> None:
    table = ingest_mod.EmbeddingTable(dim=emb.dim, vectors=emb.vectors)
    ingest_mod.save_embeddings(table, path)


def _read_anomalies_csv(path: Path, rows) -> list[anomaly_mod.AnomalyRecord]:
    import numpy as np

    iat = {r.edge: r.iat_hours for r in rows}
    records = []
    with path.open(encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            edge = (row["user_a"], row["user_b"])
            shap = None
            base = None
            if row["shap_weight"]:
                shap = np.array(
                    [float(row["shap_weight"]), float(row["shap_content"]),
                     float(row["shap_iat"]), float(row["shap_nodesim"])]
                )
            records.append(
                anomaly_mod.AnomalyRecord(
                    user_a=edge[0],
                    user_b=edge[1],
                    cluster=int(row["cluster"]),
                    score=float(row["score"]),
                    label=row["label"],
                    iat_hours=iat.get(edge, 0.0),
                    filtered=row["filtered"] == "1",
                    shap=shap,
                    base=base,
                )
            )
    return records


def run_all(cfg: PipelineConfig) -> RunReport:
    """Execute ingest through report, reusing cached artifacts."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    def timed(name):
        class _T:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                timings[name] = time.perf_counter() - self.t0
                if exc is not None and not isinstance(exc, StageError):
                    raise StageError(name, str(out), str(exc)) from exc

        return _T()

    corpus_path = out / "corpus.jsonl"
    embeddings_path = out / "embeddings.jsonl"
    graph_path = out / "graph.csv"
    graph_meta_path = out / "graph_meta.json"
    backbone_path = out / "backbone.csv"
    partition_path = out / "partition.csv"
    node_emb_path = out / "node_embeddings.jsonl"
    features_path = out / "features.csv"
    anomalies_path = out / "anomalies.csv"
    shap_summary_path = out / "shap_summary.csv"

    with timed("ingest"):
        if corpus_path.exists():
            corpus = ingest_mod.load_corpus(corpus_path, "jsonl")
        else:
            raw = ingest_mod.load_corpus(cfg.posts_path, cfg.posts_format)
            corpus = ingest_mod.preprocess(raw)
            ingest_mod.save_corpus(corpus, corpus_path)
        if embeddings_path.exists():
            embeddings = ingest_mod.load_embeddings(embeddings_path, corpus)
        elif cfg.embeddings_path:
            embeddings = ingest_mod.load_embeddings(
                cfg.embeddings_path, corpus, strict=cfg.strict_embeddings
            )
            ingest_mod.save_embeddings(embeddings, embeddings_path)
        elif cfg.fallback_embed:
            embeddings = ingest_mod.fallback_embed(
                corpus, dim=cfg.fallback_dim, seed=stage_seed(cfg.seed, "fallback_embed")
            )
            ingest_mod.save_embeddings(embeddings, embeddings_path)
        else:
            embeddings = None  # fails at the features stage if still needed

    with timed("graph"):
        counts = cosharing_mod.count_shares(corpus)
        if graph_path.exists():
            graph, _ = cosharing_mod.read_edge_csv(graph_path)
            meta = json.loads(graph_meta_path.read_text(encoding="utf-8"))
        else:
            projected = cosharing_mod.project(counts, cfg.max_hashtag_degree)
            graph = cosharing_mod.filter_weight_one(projected)
            meta = {
                "projected_edges": len(projected.edges),
                "retained_edges": len(graph.edges),
            }
            cosharing_mod.write_edge_csv(graph, graph_path)
            graph_meta_path.write_text(
                json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )

    with timed("backbone"):
        if backbone_path.exists():
            loaded, scores = cosharing_mod.read_edge_csv(backbone_path)
            bb = backbone_mod.BackboneGraph(
                nodes=loaded.nodes, edges=loaded.edges, scores=scores
            )
        else:
            bb = backbone_mod.extract_backbone(
                graph, delta=cfg.delta, raw_threshold=cfg.raw_threshold,
                prior=cfg.bayesian_prior,
            )
            cosharing_mod.write_edge_csv(bb, backbone_path, scores=bb.scores)

    with timed("cluster"):
        if partition_path.exists():
            partition = community_mod.read_partition_csv(partition_path, bb)
        else:
            partition = community_mod.louvain(bb, seed=stage_seed(cfg.seed, "louvain"))
            community_mod.write_partition_csv(partition, partition_path)

    with timed("embed"):
        if node_emb_path.exists():
            node_embeddings = _load_node_embeddings(node_emb_path)
        else:
            walk_cfg = WalkConfig(
                p=cfg.walk_p, q=cfg.walk_q, walk_length=cfg.walk_length,
                walks_per_node=cfg.walks_per_node,
                seed=stage_seed(cfg.seed, "walks"),
            )
            walks = generate_walks(bb, walk_cfg)
            node_embeddings = train_skipgram(
                walks, dim=cfg.embed_dim, window=cfg.window,
                negatives=cfg.negatives, epochs=cfg.epochs, lr=cfg.lr,
                seed=stage_seed(cfg.seed, "skipgram"),
            )
            _save_node_embeddings(node_embeddings, node_emb_path)

    with timed("features"):
        if features_path.exists():
            rows = features_mod.read_features_csv(features_path)
        else:
            if embeddings is None:
                raise ValidationError(
                    "no text embeddings: pass embeddings_path or enable fallback_embed"
                )
            rows = features_mod.assemble_features(
                bb, partition, corpus, counts, embeddings, node_embeddings,
                iat_mode=cfg.iat_mode,
            )
            features_mod.write_features_csv(rows, features_path)

    with timed("detect"):
        if anomalies_path.exists():
            records = _read_anomalies_csv(anomalies_path, rows)
            too_small, missing_dropped, _ = anomaly_mod.cluster_eligibility(rows)
            detect_info = {
                "too_small": too_small, "missing_dropped": missing_dropped,
                "contamination": cfg.contamination,
            }
            if not shap_summary_path.exists():
                anomaly_mod.write_shap_summary_csv(records, shap_summary_path)
        else:
            records, detect_info = anomaly_mod.detect(
                rows, n_estimators=cfg.n_estimators, psi=cfg.psi,
                contamination=cfg.contamination,
                seed=stage_seed(cfg.seed, "forest"), shap_mode=cfg.shap_mode,
            )
            anomaly_mod.write_anomalies_csv(records, anomalies_path)
            anomaly_mod.write_shap_summary_csv(records, shap_summary_path)

    with timed("report"):
        original_partition = community_mod.louvain(
            graph, seed=stage_seed(cfg.seed, "louvain_original")
        ) if graph.edges else None
        original_stats = report_mod.network_stats(graph, original_partition)
        backbone_stats = report_mod.network_stats(bb, partition)
        median_table = report_mod.median_feature_table(rows, records)
        report_mod.write_stats_table(original_stats, backbone_stats, out / "table1.csv")
        report_mod.write_median_table(median_table, out / "table2.csv")

        n_original = len(graph.edges)
        cluster_sizes = {
            str(c): len(members) for c, members in partition.clusters().items()
        }
        retained = [r for r in records if r.label == "anomalous" and not r.filtered]
        summary = {
            "config": cfg.echo(),
            "stages": list(STAGES),
            "threshold_form": "raw" if cfg.raw_threshold else "residual",
            "centralization_metric": "freeman_degree",
            "iat_median_convention": "lower",
            "corpus": {
                "posts": len(corpus),
                "users": len(corpus.users),
                "hashtags": len(corpus.hashtags),
            },
            "graph": {
                "projected_edges": meta["projected_edges"],
                "weight_one_removed_fraction": (
                    1.0 - meta["retained_edges"] / meta["projected_edges"]
                    if meta["projected_edges"] else 0.0
                ),
                **{f"original_{k}": v for k, v in original_stats.items()},
            },
            "backbone": {
                "edge_removal_fraction": (
                    1.0 - len(bb.edges) / n_original if n_original else 0.0
                ),
                **{f"backbone_{k}": v for k, v in backbone_stats.items()},
            },
            "clusters": {
                "count": len(cluster_sizes),
                "sizes": cluster_sizes,
                "too_small_for_detection": detect_info["too_small"],
                "missing_content_dropped": {
                    str(k): v for k, v in detect_info["missing_dropped"].items()
                },
            },
            "anomalies": {
                "contamination": detect_info["contamination"],
                "labeled": sum(r.label == "anomalous" for r in records),
                "retained_after_iat_filter": len(retained),
                "filtered_out": sum(r.filtered for r in records),
            },
            "top_hashtags_by_cluster": {
                str(c): tags
                for c, tags in report_mod.top_hashtags_by_cluster(
                    corpus, records, k=cfg.top_k_hashtags
                ).items()
            },
        }
        report_mod.write_summary_json(summary, out / "summary.json")

    return RunReport(
        summary=summary,
        original_stats=original_stats,
        backbone_stats=backbone_stats,
        median_table=median_table,
        timings=timings,
    )
