"""Corpus splitting, the proxy-task training loop and regression metrics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import gnn
from .dom import DomGraph
from .errors import EmptyCorpus, NoTextNodes
from .featurize import featurize_graph
from .gnn import GraphTensors, ModelParams, graph_tensors
from .optim import Optimizer, OptimizerConfig

TRAIN, VALID, TEST = "train", "valid", "test"


@dataclass
class SplitSpec:
    mode: str = "by_page"          # "by_page" | "by_site"
    ratios: tuple = (5, 2, 3)
    seed: int = 0


@dataclass
class TrainConfig:
    architecture: str = "wgcn"
    epochs: int = 40
    lr: float = 1e-3
    optimizer: str = "adam"
    patience: int = 10
    seed: int = 0
    weight_mode: str = "softmax"
    readout: str = "image"
    accumulate: int = 1            # pages per optimizer step
    hidden: tuple = gnn.DEFAULT_HIDDEN
    gat_heads: int = gnn.DEFAULT_GAT_HEADS
    gat_hidden: int = gnn.DEFAULT_GAT_HIDDEN
    dgcn_depth: int = gnn.DEFAULT_DGCN_DEPTH
    dgcn_width: int = gnn.DEFAULT_DGCN_WIDTH


def _cuts(n: int, ratios) -> tuple[int, int]:
    total = sum(ratios)
    n_train = math.floor(n * ratios[0] / total)
    n_valid = math.floor(n * ratios[1] / total)
    return n_train, n_valid


def split_dataset(pages: list[tuple[str, str]], spec: SplitSpec) -> dict:
    """Partition (page_id, site_id) pairs into train/valid/test.

    by_page shuffles pages and cuts at the 5:2:3 ratios (floor for train
    and valid, remainder to test); by_site applies the same cuts to the
    shuffled list of distinct sites so no site crosses partitions.
    """
    if not pages:
        raise EmptyCorpus("cannot split an empty corpus")
    if spec.mode not in ("by_page", "by_site"):
        raise ValueError(f"unknown split mode {spec.mode!r}")
    rng = np.random.default_rng(spec.seed)
    if spec.mode == "by_page":
        ids = [p for p, _ in pages]
        order = rng.permutation(len(ids))
        shuffled = [ids[i] for i in order]
        n_train, n_valid = _cuts(len(shuffled), spec.ratios)
        return {
            TRAIN: shuffled[:n_train],
            VALID: shuffled[n_train:n_train + n_valid],
            TEST: shuffled[n_train + n_valid:],
        }
    sites = []
    seen = set()
    for _, site in pages:
        if site not in seen:
            seen.add(site)
            sites.append(site)
    order = rng.permutation(len(sites))
    shuffled_sites = [sites[i] for i in order]
    n_train, n_valid = _cuts(len(shuffled_sites), spec.ratios)
    site_part = {}
    for site in shuffled_sites[:n_train]:
        site_part[site] = TRAIN
    for site in shuffled_sites[n_train:n_train + n_valid]:
        site_part[site] = VALID
    for site in shuffled_sites[n_train + n_valid:]:
        site_part[site] = TEST
    out = {TRAIN: [], VALID: [], TEST: []}
    for page_id, site in pages:
        out[site_part[site]].append(page_id)
    return out


def write_split(splits: dict, spec: SplitSpec, path):
    payload = {
        "mode": spec.mode,
        "ratios": list(spec.ratios),
        "seed": spec.seed,
        TRAIN: splits[TRAIN],
        VALID: splits[VALID],
        TEST: splits[TEST],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, separators=(",", ":"))
        fh.write("\n")


def read_split(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# --------------------------------------------------------------------------
# Example assembly
# --------------------------------------------------------------------------

def build_examples(graphs: list[DomGraph], provider):
    """Featurize graphs into GraphTensors; pages with no text nodes are
    skipped and returned separately."""
    examples: dict[str, GraphTensors] = {}
    skipped: list[str] = []
    for graph in graphs:
        if not graph.text_node_ids():
            skipped.append(graph.page_id)
            continue
        emb = featurize_graph(graph, provider)
        examples[graph.page_id] = graph_tensors(graph, emb)
    return examples, skipped


# --------------------------------------------------------------------------
# Training loop
# --------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: ModelParams
    metrics: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_loss: float = math.inf
    skipped_pages: int = 0


def init_model(config: TrainConfig, feature_dim: int, emb_dim: int,
               provider_id: str | None = None) -> ModelParams:
    params = gnn.init_params(
        config.architecture,
        feature_dim=feature_dim,
        emb_dim=emb_dim,
        seed=config.seed,
        hidden=tuple(config.hidden),
        heads=config.gat_heads,
        gat_hidden=config.gat_hidden,
        depth=config.dgcn_depth,
        width=config.dgcn_width,
        weight_mode=config.weight_mode,
        readout=config.readout,
    )
    params.provider_id = provider_id
    return params


def train(examples: dict[str, GraphTensors], splits: dict,
          config: TrainConfig, params: ModelParams | None = None,
          log=None) -> TrainResult:
    """Optimize the proxy loss; keeps the best-validation parameters.

    One page is one optimization step unless config.accumulate > 1.
    Resumable: pass the params loaded from a checkpoint to continue.
    """
    train_ids = [p for p in splits[TRAIN] if p in examples]
    valid_ids = [p for p in splits[VALID] if p in examples]
    skipped = (len(splits[TRAIN]) - len(train_ids)) + \
              (len(splits[VALID]) - len(valid_ids))

    first = examples[train_ids[0]] if train_ids else None
    if params is None:
        if first is None:
            raise EmptyCorpus("no training pages with text nodes")
        feature_dim = first.features.shape[1]
        emb_dim = first.reference.shape[0]
        params = init_model(config, feature_dim, emb_dim)
    result = TrainResult(params=params.copy(), skipped_pages=skipped)
    if config.epochs == 0 or not train_ids:
        return result

    work = params.copy()
    optimizer = Optimizer(
        OptimizerConfig(kind=config.optimizer, lr=config.lr), work.arrays)
    rng = np.random.default_rng(config.seed)
    bad_epochs = 0

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train_ids))
        epoch_losses = []
        pending: dict[str, np.ndarray] = {}
        pending_count = 0
        for j in order:
            gt = examples[train_ids[j]]
            loss, grads, _ = gnn.compute_gradients(work, gt)
            epoch_losses.append(loss)
            if config.accumulate > 1:
                for k, g in grads.items():
                    if k in pending:
                        pending[k] += g
                    else:
                        pending[k] = g.copy()
                pending_count += 1
                if pending_count >= config.accumulate:
                    for k in pending:
                        pending[k] /= pending_count
                    optimizer.step(work.arrays, pending, gt.page_id)
                    work.step += 1
                    pending = {}
                    pending_count = 0
            else:
                optimizer.step(work.arrays, grads, gt.page_id)
                work.step += 1
        if pending_count:
            for k in pending:
                pending[k] /= pending_count
            optimizer.step(work.arrays, pending)
            work.step += 1

        train_loss = float(np.mean(epoch_losses)) if epoch_losses else math.nan
        if valid_ids:
            valid_loss, _, _ = evaluate_regression(
                work, [examples[p] for p in valid_ids])
        else:
            valid_loss = train_loss
        result.metrics.append(
            {"epoch": epoch, "split": TRAIN, "mean_loss": train_loss})
        result.metrics.append(
            {"epoch": epoch, "split": VALID, "mean_loss": valid_loss})
        if log:
            log(f"epoch {epoch}: train {train_loss:.4f} valid {valid_loss:.4f}")

        if valid_loss < result.best_valid_loss - 1e-9:
            result.best_valid_loss = valid_loss
            result.best_epoch = epoch
            result.params = work.copy()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if config.patience and bad_epochs >= config.patience:
                break
    return result


def evaluate_regression(params: ModelParams, examples) -> tuple[float, int, int]:
    """Mean cosine loss over pages; returns (mean, included, skipped)."""
    losses = []
    skipped = 0
    for gt in examples:
        try:
            losses.append(gnn.page_loss(params, gt))
        except NoTextNodes:
            skipped += 1
    mean = float(np.mean(losses)) if losses else math.nan
    return mean, len(losses), skipped


def write_metrics(metrics: list[dict], path):
    with open(path, "w", encoding="utf-8") as fh:
        for record in metrics:
            fh.write(json.dumps(record, ensure_ascii=False,
                                separators=(",", ":")) + "\n")


def read_metrics(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out
