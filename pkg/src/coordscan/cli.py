"""Command-line interface: one subcommand per pipeline stage plus run-all
and the synthetic-corpus generator.

Exit codes: 0 on success, 2 on input validation errors, 1 on internal
errors.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from coordscan import anomaly as anomaly_mod
from coordscan import backbone as backbone_mod
from coordscan import community as community_mod
from coordscan import cosharing as cosharing_mod
from coordscan import features as features_mod
from coordscan import ingest as ingest_mod
from coordscan.embedding import WalkConfig, generate_walks, train_skipgram
from coordscan.errors import StageError, ValidationError
from coordscan.pipeline import PipelineConfig, run_all, stage_seed
from coordscan.synth import SynthSpec, synth_corpus

logger = logging.getLogger(__name__)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def cli(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@cli.command("ingest")
@click.option("--posts", "posts_path", required=True, type=click.Path())
@click.option("--format", "posts_format", type=click.Choice(["jsonl", "csv"]),
              default="jsonl", show_default=True)
@click.option("--embeddings", "embeddings_path", type=click.Path(), default=None)
@click.option("--strict-embeddings", is_flag=True)
@click.option("--fallback-embed", is_flag=True,
              help="Generate hashed bag-of-words embeddings instead of loading.")
@click.option("--fallback-dim", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), default="out", show_default=True)
def ingest_cmd(posts_path, posts_format, embeddings_path, strict_embeddings,
               fallback_embed, fallback_dim, seed, out_dir):
    """Load, preprocess, and persist the corpus (and text embeddings)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = ingest_mod.preprocess(ingest_mod.load_corpus(posts_path, posts_format))
    ingest_mod.save_corpus(corpus, out / "corpus.jsonl")
    if embeddings_path:
        table = ingest_mod.load_embeddings(embeddings_path, corpus, strict=strict_embeddings)
        ingest_mod.save_embeddings(table, out / "embeddings.jsonl")
    elif fallback_embed:
        table = ingest_mod.fallback_embed(
            corpus, dim=fallback_dim, seed=stage_seed(seed, "fallback_embed")
        )
        ingest_mod.save_embeddings(table, out / "embeddings.jsonl")
    click.echo(f"corpus: {len(corpus)} posts, {len(corpus.users)} users")


@cli.command("graph")
@click.option("--in", "in_path", required=True, type=click.Path(),
              help="Preprocessed corpus jsonl.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--max-hashtag-degree", type=int, default=None,
              help="Skip hashtags used by more than this many users.")
def graph_cmd(in_path, out_path, max_hashtag_degree):
    """Project the co-sharing graph and drop weight-1 edges."""
    corpus = ingest_mod.load_corpus(in_path, "jsonl")
    counts = cosharing_mod.count_shares(corpus)
    projected = cosharing_mod.project(counts, max_hashtag_degree)
    g = cosharing_mod.filter_weight_one(projected)
    cosharing_mod.write_edge_csv(g, out_path)
    click.echo(f"graph: {len(g.nodes)} nodes, {len(g.edges)} edges "
               f"({len(projected.edges) - len(g.edges)} weight-1 edges removed)")


@cli.command("backbone")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--delta", type=float, default=backbone_mod.DEFAULT_DELTA,
              show_default=True)
@click.option("--raw-threshold", is_flag=True,
              help="Test the raw weight instead of the residual.")
@click.option("--bayesian-prior", default=None,
              help="Beta prior 'a,b' applied as shrinkage to edge probabilities.")
def backbone_cmd(in_path, out_path, delta, raw_threshold, bayesian_prior):
    """Extract the noise-corrected backbone."""
    g, _ = cosharing_mod.read_edge_csv(in_path)
    prior = None
    if bayesian_prior:
        try:
            a, b = (float(x) for x in bayesian_prior.split(","))
        except ValueError as exc:
            raise ValidationError(f"bad prior {bayesian_prior!r}, expected 'a,b'") from exc
        prior = (a, b)
    bb = backbone_mod.extract_backbone(
        g, delta=delta, raw_threshold=raw_threshold, prior=prior
    )
    cosharing_mod.write_edge_csv(bb, out_path, scores=bb.scores)
    click.echo(f"backbone: kept {len(bb.edges)}/{len(g.edges)} edges at delta={delta}")


@cli.command("cluster")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--seed", type=int, default=42, show_default=True)
def cluster_cmd(in_path, out_path, seed):
    """Louvain community detection on the backbone."""
    g, _ = cosharing_mod.read_edge_csv(in_path)
    partition = community_mod.louvain(g, seed=seed)
    community_mod.write_partition_csv(partition, out_path)
    n = len(partition.clusters())
    click.echo(f"partition: {n} clusters, Q={partition.modularity:.4f}")


@cli.command("embed")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--dim", type=int, default=128, show_default=True)
@click.option("--walk-length", type=int, default=80, show_default=True)
@click.option("--walks-per-node", type=int, default=10, show_default=True)
@click.option("-p", type=float, default=1.0, show_default=True)
@click.option("-q", type=float, default=1.0, show_default=True)
@click.option("--window", type=int, default=10, show_default=True)
@click.option("--negatives", type=int, default=5, show_default=True)
@click.option("--epochs", type=int, default=5, show_default=True)
@click.option("--lr", type=float, default=0.025, show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
def embed_cmd(in_path, out_path, dim, walk_length, walks_per_node, p, q,
              window, negatives, epochs, lr, seed):
    """Train node embeddings on the backbone."""
    g, _ = cosharing_mod.read_edge_csv(in_path)
    walks = generate_walks(
        g, WalkConfig(p=p, q=q, walk_length=walk_length,
                      walks_per_node=walks_per_node, seed=seed)
    )
    emb = train_skipgram(walks, dim=dim, window=window, negatives=negatives,
                         epochs=epochs, lr=lr, seed=seed)
    ingest_mod.save_embeddings(
        ingest_mod.EmbeddingTable(dim=emb.dim, vectors=emb.vectors), out_path
    )
    click.echo(f"embeddings: {len(emb.vectors)} nodes, dim={emb.dim}")


@cli.command("features")
@click.option("--corpus", "corpus_path", required=True, type=click.Path())
@click.option("--backbone", "backbone_path", required=True, type=click.Path())
@click.option("--partition", "partition_path", required=True, type=click.Path())
@click.option("--embeddings", "embeddings_path", required=True, type=click.Path())
@click.option("--node-embeddings", "node_emb_path", type=click.Path(), default=None)
@click.option("--iat-mode", type=click.Choice(["cross", "merged"]), default="cross",
              show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def features_cmd(corpus_path, backbone_path, partition_path, embeddings_path,
                 node_emb_path, iat_mode, out_path):
    """Compute the four per-edge features for intra-cluster backbone edges."""
    corpus = ingest_mod.load_corpus(corpus_path, "jsonl")
    g, scores = cosharing_mod.read_edge_csv(backbone_path)
    bb = backbone_mod.BackboneGraph(nodes=g.nodes, edges=g.edges, scores=scores)
    partition = community_mod.read_partition_csv(partition_path, bb)
    embeddings = ingest_mod.load_embeddings(embeddings_path, corpus)
    node_embeddings = None
    if node_emb_path:
        table = ingest_mod.load_embeddings(node_emb_path)
        from coordscan.embedding import NodeEmbeddings

        node_embeddings = NodeEmbeddings(dim=table.dim, vectors=table.vectors)
    counts = cosharing_mod.count_shares(corpus)
    rows = features_mod.assemble_features(
        bb, partition, corpus, counts, embeddings, node_embeddings, iat_mode=iat_mode
    )
    features_mod.write_features_csv(rows, out_path)
    click.echo(f"features: {len(rows)} intra-cluster edges")


@cli.command("detect")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--shap-summary", "shap_path", type=click.Path(), default=None)
@click.option("--estimators", type=int, default=100, show_default=True)
@click.option("--psi", type=int, default=256, show_default=True)
@click.option("--contamination", type=float, default=0.05, show_default=True)
@click.option("--shap-mode", type=click.Choice(["anomalous", "all"]),
              default="anomalous", show_default=True)
@click.option("--seed", type=int, default=42, show_default=True)
def detect_cmd(in_path, out_path, shap_path, estimators, psi, contamination,
               shap_mode, seed):
    """Per-cluster isolation-forest anomaly detection with attributions."""
    rows = features_mod.read_features_csv(in_path)
    records, info = anomaly_mod.detect(
        rows, n_estimators=estimators, psi=psi, contamination=contamination,
        seed=seed, shap_mode=shap_mode,
    )
    anomaly_mod.write_anomalies_csv(records, out_path)
    if shap_path:
        anomaly_mod.write_shap_summary_csv(records, shap_path)
    retained = sum(r.label == "anomalous" and not r.filtered for r in records)
    click.echo(f"anomalies: {retained} retained after IAT filter "
               f"(too small: {info['too_small']})")


@cli.command("report")
@click.option("--config", "config_path", required=True, type=click.Path())
def report_cmd(config_path):
    """(Re)generate the report tables from cached artifacts."""
    cfg = PipelineConfig.from_file(config_path)
    run_report = run_all(cfg)
    click.echo(json.dumps(run_report.summary["anomalies"], indent=2, sort_keys=True))


@cli.command("run-all")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--posts", "posts_path", type=click.Path(), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
def run_all_cmd(config_path, posts_path, seed, out_dir):
    """Run every stage end to end, reusing cached artifacts."""
    cfg = PipelineConfig.from_file(config_path) if config_path else PipelineConfig()
    if posts_path is not None:
        cfg.posts_path = posts_path
    if seed is not None:
        cfg.seed = seed
    if out_dir is not None:
        cfg.out_dir = out_dir
    if not cfg.posts_path:
        raise ValidationError("no posts file: pass --posts or set posts_path in config")
    run_report = run_all(cfg)
    for stage, secs in run_report.timings.items():
        logger.info("stage %-8s %.2fs", stage, secs)
    click.echo(f"done: outputs in {cfg.out_dir}")


@cli.command("synth")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--organic", type=int, default=500, show_default=True)
@click.option("--coordinated", type=int, default=20, show_default=True)
@click.option("--window", type=int, default=300, show_default=True,
              help="Coordination window in seconds.")
@click.option("--events", type=int, default=30, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth_cmd(out_dir, organic, coordinated, window, events, seed):
    """Generate a synthetic corpus with planted coordination."""
    spec = SynthSpec(
        n_organic_users=organic, n_coordinated_users=coordinated,
        coordination_window_s=window, coordination_events=events, seed=seed,
    )
    corpus, table, truth = synth_corpus(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ingest_mod.save_corpus(corpus, out / "posts.jsonl")
    ingest_mod.save_embeddings(table, out / "embeddings.jsonl")
    with (out / "truth.csv").open("w", encoding="utf-8") as fh:
        fh.write("user_a,user_b\n")
        for a, b in sorted(truth):
            fh.write(f"{a},{b}\n")
    click.echo(f"synth: {len(corpus)} posts, {len(truth)} coordinated pairs")


def main():
    try:
        cli(standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except (ValidationError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        validation = isinstance(exc, ValidationError) or isinstance(
            exc.__cause__, ValidationError
        )
        sys.exit(2 if validation else 1)
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
