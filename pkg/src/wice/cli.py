"""Command-line pipeline: synth, preprocess, embed, train, evaluate, extract.

Stages read a shared declarative JSON config (`--config`) whose values
command-line flags override. Every artifact is written atomically and
gets a `<artifact>.meta.json` sidecar recording the resolved stage
config, its hash and the content hashes of the stage's inputs; stages
verify that their inputs form a consistent chain (e.g. an embedding
cache built from a different graphs file is rejected).

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import click

from . import dom, featurize, gnn, synth, training, wice_eval
from .errors import (
    DataError,
    MissingPrerequisite,
    NumericError,
    ProviderMismatch,
)

log = logging.getLogger("wice")

DEFAULT_ERROR_RATE = 0.5


# --------------------------------------------------------------------------
# Config resolution and provenance
# --------------------------------------------------------------------------

def load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def resolve_stage_config(file_config: dict, stage: str,
                         cli_values: dict) -> tuple[dict, str]:
    """Merge file config (common section then stage section) with CLI
    overrides; returns (resolved dict, hash)."""
    merged = {}
    merged.update(file_config.get("common", {}))
    merged.update(file_config.get(stage, {}))
    for key, value in cli_values.items():
        if value is not None:
            merged[key] = value
    canonical = json.dumps({"stage": stage, "config": merged},
                           sort_keys=True, separators=(",", ":"),
                           default=str)
    digest = hashlib.sha256(canonical.encode("utf-8")).hexdigest()
    return merged, digest


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_sidecar(artifact_path, stage: str, config: dict,
                  config_hash: str, inputs: dict):
    meta = {
        "stage": stage,
        "config": config,
        "config_hash": config_hash,
        "inputs": {name: file_sha256(p) for name, p in inputs.items()},
    }
    sidecar = str(artifact_path) + ".meta.json"
    payload = json.dumps(meta, sort_keys=True, indent=1, default=str)
    atomic_write_text(sidecar, payload + "\n")


def read_sidecar(artifact_path) -> dict | None:
    sidecar = Path(str(artifact_path) + ".meta.json")
    if not sidecar.exists():
        return None
    with open(sidecar, encoding="utf-8") as fh:
        return json.load(fh)


def check_chain(inputs: dict):
    """Verify that every input artifact's recorded upstream hashes match
    the artifacts this stage was actually given."""
    actual = {name: file_sha256(p) for name, p in inputs.items()}
    for name, path in inputs.items():
        meta = read_sidecar(path)
        if meta is None:
            continue
        for role, recorded in meta.get("inputs", {}).items():
            if role in actual and recorded != actual[role]:
                raise DataError(
                    f"artifact chain mismatch: {path} was built from a "
                    f"different {role} file than the one supplied")


def require(path, what: str):
    if path is None or not Path(path).exists():
        raise MissingPrerequisite(f"{what}: {path}")
    return path


def atomic_write_text(path, text: str):
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def atomic_writer(path, write_fn):
    """write_fn receives a temp path; the temp file is renamed over the
    target only after write_fn returns."""
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink(missing_ok=True)


# --------------------------------------------------------------------------
# CLI
# --------------------------------------------------------------------------

@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="Declarative JSON config file.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
@click.pass_context
def cli(ctx, config_path, verbose):
    """Web image context extraction pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )
    ctx.ensure_object(dict)
    ctx.obj["file_config"] = load_config_file(config_path)


@cli.command("synth")
@click.option("--pages", type=int, default=None)
@click.option("--sites", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None)
@click.pass_context
def synth_cmd(ctx, pages, sites, seed, out_dir):
    """Generate a synthetic corpus with ground truth."""
    cfg, cfg_hash = resolve_stage_config(
        ctx.obj["file_config"], "synth",
        {"pages": pages, "sites": sites, "seed": seed, "out": out_dir})
    cfg.setdefault("pages", 200)
    cfg.setdefault("sites", 5)
    cfg.setdefault("seed", 0)
    if "out" not in cfg:
        raise click.UsageError("synth needs --out")
    t0 = time.monotonic()
    summary = synth.generate_corpus(cfg["pages"], cfg["sites"], cfg["seed"],
                                    cfg["out"])
    manifest = Path(cfg["out"]) / "manifest.tsv"
    write_sidecar(manifest, "synth", cfg, cfg_hash, {})
    log.info("synth pages=%d sites=%d out=%s elapsed=%.1fs",
             summary["pages"], summary["sites"], cfg["out"],
             time.monotonic() - t0)


@cli.command("preprocess")
@click.option("--corpus", type=click.Path(), default=None)
@click.option("--manifest", type=click.Path(), default=None)
@click.option("--out", type=click.Path(), default=None)
@click.option("--denylist", "denylist_path", type=click.Path(exists=True),
              default=None, help="File with one tag per line.")
@click.option("--max-error-rate", type=float, default=None)
@click.pass_context
def preprocess_cmd(ctx, corpus, manifest, out, denylist_path, max_error_rate):
    """Parse and prune HTML pages into the graphs file."""
    cfg, cfg_hash = resolve_stage_config(
        ctx.obj["file_config"], "preprocess",
        {"corpus": corpus, "manifest": manifest, "out": out,
         "denylist": denylist_path, "max_error_rate": max_error_rate})
    corpus_dir = require(cfg.get("corpus"), "corpus directory")
    manifest_path = require(cfg.get("manifest"), "manifest")
    if "out" not in cfg:
        raise click.UsageError("preprocess needs --out")
    denylist = dom.DEFAULT_DENYLIST
    if cfg.get("denylist"):
        lines = Path(cfg["denylist"]).read_text(encoding="utf-8").split()
        denylist = frozenset(lines)
    threshold = cfg.get("max_error_rate", DEFAULT_ERROR_RATE)

    rows = dom.read_manifest(manifest_path)
    graphs = []
    drops: dict[str, int] = {}
    t0 = time.monotonic()
    for page_id, site_id, url in rows:
        try:
            html = dom.load_corpus_page(corpus_dir, page_id)
            record = dom.PageRecord(page_id, site_id, url, html)
            graphs.append(dom.preprocess_page(record, denylist))
        except DataError as exc:
            kind = type(exc).__name__
            drops[kind] = drops.get(kind, 0) + 1
            log.debug("drop page=%s reason=%s", page_id, kind)
    elapsed = time.monotonic() - t0
    n_dropped = sum(drops.values())
    rate = n_dropped / max(len(rows), 1)
    log.info("preprocess pages=%d kept=%d dropped=%d rate=%.3f "
             "pages_per_sec=%.1f", len(rows), len(graphs), n_dropped, rate,
             len(rows) / max(elapsed, 1e-9))
    for kind, count in sorted(drops.items()):
        log.info("preprocess drop_reason=%s count=%d", kind, count)
    atomic_writer(cfg["out"], lambda tmp: dom.write_graphs(graphs, tmp))
    write_sidecar(cfg["out"], "preprocess", cfg, cfg_hash,
                  {"manifest": manifest_path})
    if rate > threshold:
        raise DataError(
            f"dropped {n_dropped}/{len(rows)} pages (rate {rate:.2f} > "
            f"threshold {threshold})")


@cli.command("embed")
@click.option("--graphs", "graphs_path", type=click.Path(), default=None)
@click.option("--provider", type=click.Choice(["hashed", "cache"]),
              default=None)
@click.option("--cache", "cache_path", type=click.Path(), default=None)
@click.option("--dim", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def embed_cmd(ctx, graphs_path, provider, cache_path, dim, seed, out):
    """Compute or collect embeddings for every text a run needs."""
    cfg, cfg_hash = resolve_stage_config(
        ctx.obj["file_config"], "embed",
        {"graphs": graphs_path, "provider": provider, "cache": cache_path,
         "dim": dim, "seed": seed, "out": out})
    graphs_file = require(cfg.get("graphs"), "graphs file")
    if "out" not in cfg:
        raise click.UsageError("embed needs --out")
    provider_kind = cfg.get("provider", "hashed")
    check_chain({"graphs": graphs_file})

    graphs = dom.read_graphs(graphs_file)
    texts = featurize.collect_unique_texts(graphs)
    if provider_kind == "hashed":
        prov = featurize.HashedProvider(cfg.get("dim", featurize.DEFAULT_DIM),
                                        cfg.get("seed", 0))
    else:
        source = require(cfg.get("cache"), "embedding cache")
        prov = featurize.read_cache(source)
        if cfg.get("dim") and cfg["dim"] != prov.dim:
            raise DataError(f"cache dim {prov.dim} != requested {cfg['dim']}")
    t0 = time.monotonic()
    vectors = {}
    for text in texts:
        vec = featurize.ensure_unit_norm(prov.embed(text))
        vectors[featurize.text_key(text)] = vec
    log.info("embed texts=%d dim=%d provider=%s elapsed=%.1fs",
             len(texts), prov.dim, prov.provider_id, time.monotonic() - t0)
    atomic_writer(cfg["out"], lambda tmp: featurize.write_cache(
        tmp, prov.dim, prov.provider_id, vectors))
    write_sidecar(cfg["out"], "embed", cfg, cfg_hash,
                  {"graphs": graphs_file})


@cli.command("train")
@click.option("--graphs", "graphs_path", type=click.Path(), default=None)
@click.option("--embeddings", type=click.Path(), default=None)
@click.option("--split", "split_mode",
              type=click.Choice(["by_page", "by_site"]), default=None)
@click.option("--seed", type=int, default=None)
@click.option("--arch", type=click.Choice(list(gnn.ARCHITECTURES)),
              default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--optimizer", type=click.Choice(["adam", "sgd"]), default=None)
@click.option("--patience", type=int, default=None)
@click.option("--out", "ckpt_out", type=click.Path(), default=None)
@click.option("--metrics", "metrics_out", type=click.Path(), default=None)
@click.option("--split-out", type=click.Path(), default=None)
@click.option("--resume", type=click.Path(exists=True), default=None)
@click.pass_context
def train_cmd(ctx, graphs_path, embeddings, split_mode, seed, arch, epochs,
              lr, optimizer, patience, ckpt_out, metrics_out, split_out,
              resume):
    """Train a model on the proxy task; keeps the best-validation epoch."""
    cfg, cfg_hash = resolve_stage_config(
        ctx.obj["file_config"], "train",
        {"graphs": graphs_path, "embeddings": embeddings,
         "split": split_mode, "seed": seed, "arch": arch, "epochs": epochs,
         "lr": lr, "optimizer": optimizer, "patience": patience,
         "out": ckpt_out, "metrics": metrics_out, "split_out": split_out,
         "resume": resume})
    graphs_file = require(cfg.get("graphs"), "graphs file")
    cache_file = require(cfg.get("embeddings"), "embedding cache")
    if "out" not in cfg:
        raise click.UsageError("train needs --out")
    check_chain({"graphs": graphs_file, "embeddings": cache_file})

    graphs = dom.read_graphs(graphs_file)
    provider = featurize.read_cache(cache_file)
    examples, skipped = training.build_examples(graphs, provider)
    if skipped:
        log.info("train skipped_no_text_nodes=%d", len(skipped))

    spec = training.SplitSpec(mode=cfg.get("split", "by_page"),
                              seed=cfg.get("seed", 0))
    splits = training.split_dataset(
        [(g.page_id, g.site_id) for g in graphs], spec)
    split_path = cfg.get("split_out") or (str(cfg["out"]) + ".split.json")
    atomic_writer(split_path,
                  lambda tmp: training.write_split(splits, spec, tmp))

    tconf = training.TrainConfig(
        architecture=cfg.get("arch", "wgcn"),
        epochs=cfg.get("epochs", 40),
        lr=cfg.get("lr", 1e-3),
        optimizer=cfg.get("optimizer", "adam"),
        patience=cfg.get("patience", 10),
        seed=cfg.get("seed", 0),
    )
    start_params = None
    if cfg.get("resume"):
        start_params, _ = gnn.load_checkpoint(cfg["resume"])
        log.info("train resume=%s step=%d", cfg["resume"], start_params.step)
    t0 = time.monotonic()
    result = training.train(examples, splits, tconf, params=start_params,
                            log=lambda msg: log.info("train %s", msg))
    log.info("train best_epoch=%d best_valid_loss=%.4f elapsed=%.1fs",
             result.best_epoch, result.best_valid_loss,
             time.monotonic() - t0)
    result.params.provider_id = provider.provider_id
    extra = {"config_hash": cfg_hash, "split_mode": spec.mode,
             "best_epoch": result.best_epoch}
    atomic_writer(cfg["out"],
                  lambda tmp: gnn.save_checkpoint(result.params, tmp, extra))
    write_sidecar(cfg["out"], "train", cfg, cfg_hash,
                  {"graphs": graphs_file, "embeddings": cache_file})
    metrics_path = cfg.get("metrics")
    if metrics_path:
        atomic_writer(metrics_path,
                      lambda tmp: training.write_metrics(result.metrics, tmp))
        write_sidecar(metrics_path, "train", cfg, cfg_hash,
                      {"graphs": graphs_file, "embeddings": cache_file})


@cli.command("evaluate")
@click.option("--graphs", "graphs_path", type=click.Path(), default=None)
@click.option("--embeddings", type=click.Path(), default=None)
@click.option("--ckpt", type=click.Path(), default=None)
@click.option("--methods", default=None,
              help="Comma-separated list; default: ckpt arch + heuristics.")
@click.option("--split-file", type=click.Path(), default=None)
@click.option("--subset", type=click.Choice(["train", "valid", "test", "all"]),
              default=None)
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(), default=None)
@click.pass_context
def evaluate_cmd(ctx, graphs_path, embeddings, ckpt, methods, split_file,
                 subset, seed, out):
    """Run WICE methods over a page set and write per-page records."""
    cfg, cfg_hash = resolve_stage_config(
        ctx.obj["file_config"], "evaluate",
        {"graphs": graphs_path, "embeddings": embeddings, "ckpt": ckpt,
         "methods": methods, "split_file": split_file, "subset": subset,
         "seed": seed, "out": out})
    graphs_file = require(cfg.get("graphs"), "graphs file")
    cache_file = require(cfg.get("embeddings"), "embedding cache")
    if "out" not in cfg:
        raise click.UsageError("evaluate needs --out")

    params = None
    if cfg.get("ckpt"):
        require(cfg["ckpt"], "checkpoint")
        params, _ = gnn.load_checkpoint(cfg["ckpt"])
    check_chain({"graphs": graphs_file, "embeddings": cache_file})

    provider = featurize.read_cache(cache_file)
    if params is not None and params.provider_id and \
            params.provider_id != provider.provider_id:
        raise ProviderMismatch(
            f"checkpoint trained with {params.provider_id}, cache is "
            f"{provider.provider_id}")

    graphs = dom.read_graphs(graphs_file)
    examples, _ = training.build_examples(graphs, provider)

    chosen = cfg.get("subset", "test")
    if cfg.get("split_file"):
        split = training.read_split(cfg["split_file"])
        page_ids = (split["train"] + split["valid"] + split["test"]
                    if chosen == "all" else split[chosen])
    else:
        page_ids = [g.page_id for g in graphs]
    page_set = [examples[p] for p in sorted(page_ids) if p in examples]

    if cfg.get("methods"):
        method_list = [m.strip() for m in str(cfg["methods"]).split(",")
                       if m.strip()]
        for method in method_list:
            if method not in wice_eval.ALL_METHODS:
                raise click.UsageError(f"unknown method {method!r}")
            needs_model = (method in wice_eval.MODEL_METHODS
                           or method == "blind")
            if needs_model and params is None:
                raise MissingPrerequisite(f"checkpoint for method {method}")
            if method in wice_eval.MODEL_METHODS and \
                    params.architecture != method:
                raise click.UsageError(
                    f"checkpoint is {params.architecture}, cannot "
                    f"evaluate {method}")
    else:
        method_list = list(wice_eval.HEURISTIC_METHODS)
        if params is not None:
            method_list.insert(0, params.architecture)
        else:
            method_list.remove("blind")
    eval_seed = cfg.get("seed", 0)

    all_records = []
    summary = {}
    for method in method_list:
        needs_model = method in wice_eval.MODEL_METHODS or method == "blind"
        mean, records, excluded = wice_eval.evaluate_wice(
            method, page_set, params if needs_model else None, eval_seed)
        all_records.extend(records)
        summary[method] = {"mean_wice_loss": mean, "pages": len(records),
                           "excluded": excluded}
        log.info("evaluate method=%s mean_wice_loss=%.4f excluded=%d",
                 method, mean, excluded)
        if method in wice_eval.MODEL_METHODS:
            try:
                r = wice_eval.correlate_losses(records)
                summary[method]["pearson_r"] = r
                log.info("evaluate method=%s pearson_r=%.3f", method, r)
            except (ValueError, DataError):
                pass
            summary[method]["fraction_over_threshold"] = \
                wice_eval.threshold_report(records)
    atomic_writer(cfg["out"],
                  lambda tmp: wice_eval.write_results(all_records, tmp))
    write_sidecar(cfg["out"], "evaluate", cfg, cfg_hash,
                  {"graphs": graphs_file, "embeddings": cache_file})
    click.echo(json.dumps(summary, sort_keys=True, indent=1))


@cli.command("extract")
@click.option("--ckpt", type=click.Path(exists=True), required=True)
@click.option("--html", "html_path", type=click.Path(exists=True),
              required=True)
@click.option("--cache", "cache_path", type=click.Path(exists=True),
              default=None, help="Embedding cache for non-hashed providers.")
def extract_cmd(ckpt, html_path, cache_path):
    """Extract the context of one HTML file's main image."""
    params, _ = gnn.load_checkpoint(ckpt)
    page_id = Path(html_path).stem
    record = dom.PageRecord(page_id, "", html_path,
                            Path(html_path).read_bytes())
    graph = dom.preprocess_page(record)
    provider = _provider_for(params, cache_path)
    emb = featurize.featurize_graph(graph, provider)
    gt = gnn.graph_tensors(graph, emb)
    result = gnn.forward(params, gt)
    if result.weights is not None:
        node_id = wice_eval.extract_context(result.weights, gt)
        weight = result.weights.values[node_id]
    else:
        node_id = wice_eval.baseline_blind(result.z_hat_value(), gt)
        weight = float("nan")
    text = next(n.text for n in graph.nodes if n.node_id == node_id)
    click.echo(f"node_id: {node_id}")
    click.echo(f"weight: {weight:.6f}")
    click.echo(f"text: {text}")


def _provider_for(params, cache_path):
    if cache_path:
        return featurize.read_cache(cache_path)
    pid = params.provider_id or ""
    if pid.startswith("hashed-d"):
        body = pid[len("hashed-d"):]
        dim_s, _, seed_s = body.partition("-s")
        return featurize.HashedProvider(int(dim_s), int(seed_s))
    if not pid:
        return featurize.HashedProvider(params.emb_dim, 0)
    raise MissingPrerequisite(
        f"embedding cache for provider {pid!r} (pass --cache)")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False, obj={})
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except NumericError as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3
    except DataError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
