"""Context extraction, the six baselines and the evaluation metrics.

Every method either picks a text node (whose embedding is scored
against the reference) or is excluded for that page with a counted
reason. The oracle picks the best-possible node by definition, so its
per-page loss lower-bounds every node-choosing method.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from . import gnn
from .errors import (
    DegenerateVariance,
    EmptySet,
    NoTextNodes,
    NoTitle,
)
from .gnn import GraphTensors, ModelParams, NodeWeights

MODEL_METHODS = ("wgcn", "gcn", "gat", "dgcn")
HEURISTIC_METHODS = ("distance", "title", "text_after_image", "blind",
                     "random", "oracle")
ALL_METHODS = MODEL_METHODS + HEURISTIC_METHODS

# methods whose result is a text node (oracle dominance applies exactly)
NODE_METHODS = tuple(m for m in ALL_METHODS if m != "title")


@dataclass
class WiceResult:
    page_id: str
    method: str
    chosen_node: int | None
    wice_loss: float | None
    regression_loss: float | None = None
    weights: dict[int, float] | None = None
    excluded: bool = False
    reason: str | None = None


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    return float(a @ b) / max(na * nb, 1e-12)


def node_loss(gt: GraphTensors, node_id: int) -> float:
    """Cosine loss between a text node's embedding and the reference."""
    pos = int(np.nonzero(gt.text_ids == node_id)[0][0])
    return 1.0 - _cos(gt.text_embeddings[pos], gt.reference)


def extract_context(weights: NodeWeights, gt: GraphTensors) -> int:
    """Text node with maximal weight; ties break by document order."""
    if not weights.text_mask:
        raise NoTextNodes(f"page {gt.page_id} has no text nodes")
    best = None
    best_w = -math.inf
    for node_id in sorted(weights.text_mask):
        w = weights.values[node_id]
        if w > best_w:
            best = node_id
            best_w = w
    return best


def extract_context_multi(weights: NodeWeights, gt: GraphTensors,
                          top_k: int | None = None,
                          min_weight: float | None = None) -> list[int]:
    """Optional multi-node extension, off by default: the single argmax
    node, or the top_k heaviest nodes, or every node at or above a
    weight threshold. Results keep document order."""
    if top_k is None and min_weight is None:
        return [extract_context(weights, gt)]
    if not weights.text_mask:
        raise NoTextNodes(f"page {gt.page_id} has no text nodes")
    ordered = sorted(weights.text_mask)
    if min_weight is not None:
        chosen = [i for i in ordered if weights.values[i] >= min_weight]
        if not chosen:
            chosen = [extract_context(weights, gt)]
        return chosen
    ranked = sorted(ordered, key=lambda i: (-weights.values[i], i))
    return sorted(ranked[:max(1, top_k)])


def baseline_distance(gt: GraphTensors, graph=None):
    """Inverse-distance weights: w_i = 1/d_i to the image node.

    Returns (z_hat, normalized NodeWeights). The argmax of these weights
    is the nearest text node, which is the `text after image` rule.
    """
    if len(gt.text_ids) == 0:
        raise NoTextNodes(f"page {gt.page_id} has no text nodes")
    dists = _text_distances(gt, graph)
    raw = 1.0 / dists
    z_hat = raw @ gt.text_embeddings
    total = float(raw.sum())
    values = {i: 0.0 for i in range(gt.n_nodes)}
    for node_id, w in zip(gt.text_ids, raw / total):
        values[int(node_id)] = float(w)
    weights = NodeWeights(values=values,
                          text_mask={int(i) for i in gt.text_ids})
    return z_hat, weights


def _text_distances(gt: GraphTensors, graph=None) -> np.ndarray:
    """Tree distance from each text node to the image node (BFS)."""
    adj = [[] for _ in range(gt.n_nodes)]
    for p, c in gt.edges:
        adj[p].append(c)
        adj[c].append(p)
    dist = np.full(gt.n_nodes, -1, dtype=np.int64)
    dist[gt.image_id] = 0
    frontier = [gt.image_id]
    while frontier:
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    out = dist[gt.text_ids].astype(np.float64)
    if np.any(out <= 0):
        raise ValueError(f"page {gt.page_id}: text node at distance 0 "
                         "from the image")
    return out


def baseline_text_after_image(gt: GraphTensors) -> int:
    """Nearest text node to the image (window-based extraction)."""
    dists = _text_distances(gt)
    order = np.argsort(dists, kind="stable")
    return int(gt.text_ids[order[0]])


def baseline_title(gt: GraphTensors) -> float:
    """Cosine loss of the document title against the reference; the
    title is not a body node, so no node is chosen."""
    if gt.title_vector is None:
        raise NoTitle(f"page {gt.page_id} has no document title")
    return 1.0 - _cos(gt.title_vector, gt.reference)


def baseline_blind(z_hat: np.ndarray, gt: GraphTensors) -> int:
    """Text node most similar to a regressed embedding; ties break by
    document order."""
    if len(gt.text_ids) == 0:
        raise NoTextNodes(f"page {gt.page_id} has no text nodes")
    sims = gt.text_embeddings @ (z_hat / max(float(np.linalg.norm(z_hat)), 1e-12))
    best = int(np.argmax(sims))  # first maximum = document order
    return int(gt.text_ids[best])


def baseline_oracle(gt: GraphTensors) -> int:
    """Text node most similar to the actual reference embedding; the
    per-page lower bound on achievable WICE loss."""
    return baseline_blind(gt.reference, gt)


def baseline_random(gt: GraphTensors, seed: int = 0) -> int:
    """Uniform choice over text nodes, deterministic per (page_id, seed)."""
    if len(gt.text_ids) == 0:
        raise NoTextNodes(f"page {gt.page_id} has no text nodes")
    digest = hashlib.sha256(
        f"{gt.page_id}:{seed}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return int(gt.text_ids[rng.integers(len(gt.text_ids))])


# --------------------------------------------------------------------------
# Per-page evaluation
# --------------------------------------------------------------------------

def evaluate_page(method: str, gt: GraphTensors,
                  params: ModelParams | None = None,
                  seed: int = 0) -> WiceResult:
    if method == "title":
        try:
            loss = baseline_title(gt)
        except NoTitle:
            return WiceResult(gt.page_id, method, None, None,
                              excluded=True, reason="no_title")
        return WiceResult(gt.page_id, method, None, loss)

    try:
        if method == "oracle":
            chosen = baseline_oracle(gt)
            return WiceResult(gt.page_id, method, chosen,
                              node_loss(gt, chosen))
        if method == "random":
            chosen = baseline_random(gt, seed)
            return WiceResult(gt.page_id, method, chosen,
                              node_loss(gt, chosen))
        if method == "text_after_image":
            chosen = baseline_text_after_image(gt)
            return WiceResult(gt.page_id, method, chosen,
                              node_loss(gt, chosen))
        if method == "distance":
            z_hat, weights = baseline_distance(gt)
            chosen = extract_context(weights, gt)
            reg = 1.0 - _cos(z_hat, gt.reference)
            return WiceResult(gt.page_id, method, chosen,
                              node_loss(gt, chosen), regression_loss=reg,
                              weights=_text_weights(weights))
        if method == "blind":
            if params is None:
                raise ValueError("blind baseline needs a trained model")
            result = gnn.forward(params, gt)
            chosen = baseline_blind(result.z_hat_value(), gt)
            reg = float(gnn.cosine_loss(result.z_hat, gt.reference).value)
            return WiceResult(gt.page_id, method, chosen,
                              node_loss(gt, chosen), regression_loss=reg)
        if method in MODEL_METHODS:
            if params is None:
                raise ValueError(f"method {method} needs a trained model")
            if params.architecture != method:
                raise ValueError(
                    f"checkpoint is {params.architecture}, asked for {method}")
            result = gnn.forward(params, gt)
            reg = float(gnn.cosine_loss(result.z_hat, gt.reference).value)
            if result.weights is not None:
                chosen = extract_context(result.weights, gt)
                weights = _text_weights(result.weights)
            else:
                # plain models without usable importance weights fall
                # back to the blind rule on their own regression
                chosen = baseline_blind(result.z_hat_value(), gt)
                weights = None
            return WiceResult(gt.page_id, method, chosen,
                              node_loss(gt, chosen), regression_loss=reg,
                              weights=weights)
    except NoTextNodes:
        return WiceResult(gt.page_id, method, None, None,
                          excluded=True, reason="no_text_nodes")
    raise ValueError(f"unknown method {method!r}")


def _text_weights(weights: NodeWeights) -> dict[int, float]:
    return {i: weights.values[i] for i in sorted(weights.text_mask)}


def evaluate_wice(method: str, examples, params: ModelParams | None = None,
                  seed: int = 0):
    """Mean WICE loss over a page set plus per-page records.

    Returns (mean, records, n_excluded). Excluded pages (no title, no
    text nodes) are counted, never averaged.
    """
    examples = list(examples)
    if not examples:
        raise EmptySet("evaluation over an empty page set")
    records = [evaluate_page(method, gt, params, seed) for gt in examples]
    included = [r.wice_loss for r in records if not r.excluded]
    mean = float(np.mean(included)) if included else math.nan
    return mean, records, len(records) - len(included)


def correlate_losses(records) -> float:
    """Pearson r between per-page regression and WICE losses."""
    pairs = [(r.regression_loss, r.wice_loss) for r in records
             if not r.excluded and r.regression_loss is not None
             and r.wice_loss is not None]
    if len(pairs) < 3:
        raise ValueError("need at least 3 pages with both losses")
    x = np.array([p[0] for p in pairs])
    y = np.array([p[1] for p in pairs])
    sx = float(x.std())
    sy = float(y.std())
    if sx < 1e-15 or sy < 1e-15:
        raise DegenerateVariance("a loss series is constant")
    return float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))


def threshold_report(records, threshold: float = 0.6) -> float:
    """Fraction of included pages whose context reaches the similarity
    threshold (cosine loss <= 1 - threshold)."""
    included = [r.wice_loss for r in records if not r.excluded
                and r.wice_loss is not None]
    if not included:
        return math.nan
    cutoff = 1.0 - threshold
    return sum(1 for v in included if v <= cutoff) / len(included)


# --------------------------------------------------------------------------
# Results file
# --------------------------------------------------------------------------

def result_to_record(r: WiceResult) -> dict:
    return {
        "page_id": r.page_id,
        "method": r.method,
        "chosen_node": r.chosen_node,
        "wice_loss": r.wice_loss,
        "regression_loss": r.regression_loss,
        "weights": ({str(k): v for k, v in r.weights.items()}
                    if r.weights is not None else None),
        "excluded": r.excluded,
        "reason": r.reason,
    }


def record_to_result(d: dict) -> WiceResult:
    return WiceResult(
        page_id=d["page_id"],
        method=d["method"],
        chosen_node=d["chosen_node"],
        wice_loss=d["wice_loss"],
        regression_loss=d.get("regression_loss"),
        weights=({int(k): v for k, v in d["weights"].items()}
                 if d.get("weights") else None),
        excluded=d.get("excluded", False),
        reason=d.get("reason"),
    )


def write_results(records, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(result_to_record(r), ensure_ascii=False,
                                separators=(",", ":")) + "\n")


def read_results(path) -> list[WiceResult]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(record_to_result(json.loads(line)))
    return out
