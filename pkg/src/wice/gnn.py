"""Graph layers, the four model variants and checkpoint serialization.

All math runs in float64 on the autodiff tape; one graph is processed
at a time. The weight-producing variant (wgcn) emits a scalar logit per
node, softmax-normalized over text nodes, and regresses the reference
embedding as the weighted average of text-node embeddings. The plain
variants (gcn, gat, dgcn) regress the embedding from the image node's
final representation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Var
from .dom import DomGraph
from .errors import DimensionMismatch, NoTextNodes, ZeroVector
from .featurize import EmbeddingMatrix, assemble_features

ARCHITECTURES = ("wgcn", "gcn", "gat", "dgcn")

DEFAULT_HIDDEN = (256, 64)       # wgcn / gcn hidden widths
DEFAULT_GAT_HEADS = 4
DEFAULT_GAT_HIDDEN = 64          # per head
DEFAULT_DGCN_DEPTH = 8
DEFAULT_DGCN_WIDTH = 64

EPS = 1e-12


@dataclass
class ModelParams:
    architecture: str
    layer_dims: list[int]
    arrays: dict[str, np.ndarray]
    feature_dim: int
    emb_dim: int
    rng_seed: int
    heads: int | None = None
    depth: int | None = None
    weight_mode: str = "softmax"   # "softmax" | "raw" (ablation)
    readout: str = "image"         # "image" | "mean"
    provider_id: str | None = None
    step: int = 0

    def copy(self):
        return ModelParams(
            architecture=self.architecture,
            layer_dims=list(self.layer_dims),
            arrays={k: v.copy() for k, v in self.arrays.items()},
            feature_dim=self.feature_dim,
            emb_dim=self.emb_dim,
            rng_seed=self.rng_seed,
            heads=self.heads,
            depth=self.depth,
            weight_mode=self.weight_mode,
            readout=self.readout,
            provider_id=self.provider_id,
            step=self.step,
        )

    def n_parameters(self):
        return sum(a.size for a in self.arrays.values())


@dataclass
class NodeWeights:
    """Per-node importance weights; non-text nodes carry exactly 0."""
    values: dict[int, float]
    text_mask: set[int]

    def text_weight_sum(self):
        return sum(self.values[i] for i in self.text_mask)

    def argmax_text(self):
        best = None
        for node_id in sorted(self.text_mask):
            w = self.values[node_id]
            if best is None or w > self.values[best]:
                best = node_id
        return best


@dataclass
class ForwardResult:
    z_hat: Var
    weights: NodeWeights | None = None
    attention: dict[int, float] | None = None

    def z_hat_value(self):
        return np.asarray(self.z_hat.value, dtype=np.float64)


@dataclass
class GraphTensors:
    """Everything a forward pass needs, precomputed once per page."""
    page_id: str
    site_id: str
    n_nodes: int
    tag_groups: np.ndarray
    image_id: int
    text_ids: np.ndarray
    text_embeddings: np.ndarray   # (k, emb_dim) aligned with text_ids
    reference: np.ndarray         # (emb_dim,)
    edges: list[tuple[int, int]]
    features: np.ndarray          # (n, feature_dim)
    title_vector: np.ndarray | None = None
    _a_hat: np.ndarray | None = field(default=None, repr=False)
    _loops: tuple | None = field(default=None, repr=False)

    @property
    def a_hat(self):
        if self._a_hat is None:
            self._a_hat = normalized_adjacency_from_edges(self.n_nodes, self.edges)
        return self._a_hat

    @property
    def edges_with_loops(self):
        if self._loops is None:
            src = []
            dst = []
            for p, c in self.edges:
                src.append(p); dst.append(c)
                src.append(c); dst.append(p)
            src.extend(range(self.n_nodes))
            dst.extend(range(self.n_nodes))
            self._loops = (np.array(src, dtype=np.intp),
                           np.array(dst, dtype=np.intp))
        return self._loops


def graph_tensors(graph: DomGraph, emb: EmbeddingMatrix) -> GraphTensors:
    features = assemble_features(graph, emb)
    text_ids = np.array(graph.text_node_ids(), dtype=np.intp)
    if len(text_ids):
        text_embeddings = np.stack([emb.node_vectors[i] for i in text_ids])
    else:
        text_embeddings = np.zeros((0, emb.dim))
    return GraphTensors(
        page_id=graph.page_id,
        site_id=graph.site_id,
        n_nodes=len(graph.nodes),
        tag_groups=np.array([n.tag_group for n in graph.nodes], dtype=np.intp),
        image_id=graph.main_image_id(),
        text_ids=text_ids,
        text_embeddings=text_embeddings,
        reference=emb.reference_vector,
        edges=list(graph.edges),
        features=features,
        title_vector=emb.title_vector,
    )


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------

def normalized_adjacency(graph: DomGraph) -> np.ndarray:
    return normalized_adjacency_from_edges(len(graph.nodes), graph.edges)


def normalized_adjacency_from_edges(n: int, edges) -> np.ndarray:
    """Symmetric D^-1/2 (A+I) D^-1/2 with self loops."""
    a = np.eye(n, dtype=np.float64)
    for p, c in edges:
        a[p, c] = 1.0
        a[c, p] = 1.0
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def gcn_layer(h, a_hat, w, b, activation=ad.relu):
    """act(A H W + b); activation None means identity (final layers)."""
    h = ad.as_var(h)
    if h.value.shape[1] != w.value.shape[0]:
        raise DimensionMismatch(
            f"gcn layer got width {h.value.shape[1]}, weight expects "
            f"{w.value.shape[0]}")
    out = ad.add(ad.matmul(ad.matmul(ad.as_var(a_hat), h), w), b)
    return activation(out) if activation is not None else out


def gat_layer(h, edges_with_loops, n_nodes, head_params, bias=None,
              average=False):
    """Multi-head attention layer over an edge list (self loops included).

    head_params is a list of (W, a_src, a_dst) Var triples. Hidden layers
    concatenate heads (ELU), the final layer averages them (identity).
    Returns the output and the per-head attention coefficients (numpy,
    shape (E, 1) each).
    """
    src, dst = edges_with_loops
    head_outputs = []
    alphas = []
    for w, a_src, a_dst in head_params:
        hw = ad.matmul(h, w)
        s_src = ad.vsum(ad.mul(hw, a_src), axis=1, keepdims=True)
        s_dst = ad.vsum(ad.mul(hw, a_dst), axis=1, keepdims=True)
        scores = ad.leaky_relu(
            ad.add(ad.gather_rows(s_dst, dst), ad.gather_rows(s_src, src)),
            alpha=0.2)
        alpha = ad.segment_softmax(scores, dst, n_nodes)
        messages = ad.mul(alpha, ad.gather_rows(hw, src))
        head_outputs.append(ad.segment_sum(messages, dst, n_nodes))
        alphas.append(np.array(alpha.value))
    if average:
        out = head_outputs[0]
        for part in head_outputs[1:]:
            out = ad.add(out, part)
        out = ad.div(out, float(len(head_outputs)))
        if bias is not None:
            out = ad.add(out, bias)
    else:
        out = ad.concat(head_outputs, axis=1)
        if bias is not None:
            out = ad.add(out, bias)
        out = ad.elu(out)
    return out, alphas


def dgcn_block(h, a_hat, w, b):
    """Pre-activation residual block: H + A relu(norm(H)) W + b.

    With zero parameters the block is exactly the identity map.
    """
    f = gcn_layer(ad.relu(ad.layer_norm_rows(h)), a_hat, w, b,
                  activation=None)
    return ad.add(h, f)


def cosine_loss(z_hat, z_star) -> Var:
    """1 - cos(z_hat, z_star), in [0, 2]."""
    z_hat = ad.as_var(z_hat)
    if float(np.linalg.norm(z_hat.value)) < 1e-9:
        raise ZeroVector("regressed embedding has zero norm")
    if float(np.linalg.norm(np.asarray(z_star))) < 1e-9:
        raise ZeroVector("reference embedding has zero norm")
    return ad.sub(1.0, ad.cosine_similarity(z_hat, ad.as_var(z_star)))


# --------------------------------------------------------------------------
# Parameter initialization
# --------------------------------------------------------------------------

def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(architecture: str, feature_dim: int, emb_dim: int,
                seed: int = 0, hidden=DEFAULT_HIDDEN,
                heads: int = DEFAULT_GAT_HEADS,
                gat_hidden: int = DEFAULT_GAT_HIDDEN,
                depth: int = DEFAULT_DGCN_DEPTH,
                width: int = DEFAULT_DGCN_WIDTH,
                weight_mode: str = "softmax",
                readout: str = "image") -> ModelParams:
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}")
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}

    if architecture in ("wgcn", "gcn"):
        out_dim = 1 if architecture == "wgcn" else emb_dim
        dims = [feature_dim, *hidden, out_dim]
        for i in range(len(dims) - 1):
            arrays[f"layer{i}.W"] = _glorot(rng, dims[i], dims[i + 1])
            arrays[f"layer{i}.b"] = np.zeros(dims[i + 1])
        layer_dims = dims
        heads = None
        depth = None
    elif architecture == "gat":
        dims = [feature_dim, gat_hidden * heads, emb_dim]
        for h in range(heads):
            arrays[f"gat0.head{h}.W"] = _glorot(rng, feature_dim, gat_hidden)
            arrays[f"gat0.head{h}.a_src"] = _glorot(rng, 1, gat_hidden)[0]
            arrays[f"gat0.head{h}.a_dst"] = _glorot(rng, 1, gat_hidden)[0]
        arrays["gat0.b"] = np.zeros(gat_hidden * heads)
        for h in range(heads):
            arrays[f"gat1.head{h}.W"] = _glorot(rng, gat_hidden * heads, emb_dim)
            arrays[f"gat1.head{h}.a_src"] = _glorot(rng, 1, emb_dim)[0]
            arrays[f"gat1.head{h}.a_dst"] = _glorot(rng, 1, emb_dim)[0]
        arrays["gat1.b"] = np.zeros(emb_dim)
        layer_dims = dims
        depth = None
    else:  # dgcn
        arrays["proj.W"] = _glorot(rng, feature_dim, width)
        arrays["proj.b"] = np.zeros(width)
        for k in range(depth):
            arrays[f"block{k}.W"] = _glorot(rng, width, width)
            arrays[f"block{k}.b"] = np.zeros(width)
        arrays["out.W"] = _glorot(rng, width, emb_dim)
        arrays["out.b"] = np.zeros(emb_dim)
        layer_dims = [feature_dim] + [width] * depth + [emb_dim]
        heads = None

    return ModelParams(
        architecture=architecture,
        layer_dims=layer_dims,
        arrays=arrays,
        feature_dim=feature_dim,
        emb_dim=emb_dim,
        rng_seed=seed,
        heads=heads,
        depth=depth,
        weight_mode=weight_mode,
        readout=readout,
    )


# --------------------------------------------------------------------------
# Forward passes
# --------------------------------------------------------------------------

def _wrap(params: ModelParams, pvars):
    if pvars is None:
        return {k: Var(v) for k, v in params.arrays.items()}
    return pvars


def _node_weights(gt: GraphTensors, text_weights: np.ndarray) -> NodeWeights:
    values = {i: 0.0 for i in range(gt.n_nodes)}
    for node_id, w in zip(gt.text_ids, text_weights):
        values[int(node_id)] = float(w)
    return NodeWeights(values=values, text_mask={int(i) for i in gt.text_ids})


def wgcn_forward(params: ModelParams, gt: GraphTensors,
                 pvars=None) -> ForwardResult:
    """Scalar logit per node, softmax over text nodes, weighted-average
    readout over text-node embeddings."""
    if len(gt.text_ids) == 0:
        raise NoTextNodes(f"page {gt.page_id} has no text nodes")
    pv = _wrap(params, pvars)
    h = ad.as_var(gt.features)
    a_hat = gt.a_hat
    n_layers = len(params.layer_dims) - 1
    for i in range(n_layers):
        act = ad.relu if i < n_layers - 1 else None
        h = gcn_layer(h, a_hat, pv[f"layer{i}.W"], pv[f"layer{i}.b"], act)
    logits = ad.gather_rows(h, gt.text_ids)          # (k, 1)
    if params.weight_mode == "softmax":
        w = ad.softmax_vec(logits)
    else:
        w = logits
    z_hat = ad.vsum(ad.mul(w, ad.as_var(gt.text_embeddings)), axis=0)
    weights = _node_weights(gt, np.ravel(w.value))
    return ForwardResult(z_hat=z_hat, weights=weights)


def plain_forward(params: ModelParams, gt: GraphTensors,
                  pvars=None) -> ForwardResult:
    """Graph-level embedding via the image node's final representation
    (or mean pooling); GAT keeps its last-layer attention over the image
    node's neighbors as interpretation weights."""
    if len(gt.text_ids) == 0:
        raise NoTextNodes(f"page {gt.page_id} has no text nodes")
    pv = _wrap(params, pvars)
    h = ad.as_var(gt.features)
    attention = None

    if params.architecture == "gcn":
        a_hat = gt.a_hat
        n_layers = len(params.layer_dims) - 1
        for i in range(n_layers):
            act = ad.relu if i < n_layers - 1 else None
            h = gcn_layer(h, a_hat, pv[f"layer{i}.W"], pv[f"layer{i}.b"], act)
    elif params.architecture == "gat":
        loops = gt.edges_with_loops
        heads = params.heads
        layer0 = [(pv[f"gat0.head{k}.W"], pv[f"gat0.head{k}.a_src"],
                   pv[f"gat0.head{k}.a_dst"]) for k in range(heads)]
        layer1 = [(pv[f"gat1.head{k}.W"], pv[f"gat1.head{k}.a_src"],
                   pv[f"gat1.head{k}.a_dst"]) for k in range(heads)]
        h, _ = gat_layer(h, loops, gt.n_nodes, layer0, bias=pv["gat0.b"],
                         average=False)
        h, alphas = gat_layer(h, loops, gt.n_nodes, layer1,
                              bias=pv["gat1.b"], average=True)
        attention = _image_attention(gt, alphas)
    elif params.architecture == "dgcn":
        a_hat = gt.a_hat
        h = gcn_layer(h, a_hat, pv["proj.W"], pv["proj.b"], ad.relu)
        for k in range(params.depth):
            h = dgcn_block(h, a_hat, pv[f"block{k}.W"], pv[f"block{k}.b"])
        h = ad.add(ad.matmul(h, pv["out.W"]), pv["out.b"])
    else:
        raise ValueError(f"plain_forward cannot run {params.architecture!r}")

    if params.readout == "mean":
        z_hat = ad.div(ad.vsum(h, axis=0), float(gt.n_nodes))
    else:
        z_hat = ad.vsum(ad.gather_rows(h, np.array([gt.image_id])), axis=0)

    weights = None
    if attention is not None:
        weights = _attention_node_weights(gt, attention)
    return ForwardResult(z_hat=z_hat, weights=weights, attention=attention)


def _image_attention(gt: GraphTensors, alphas) -> dict[int, float]:
    """Mean over heads of the final-layer attention the image node pays
    to each of its neighbors (self loop included)."""
    src, dst = gt.edges_with_loops
    mask = dst == gt.image_id
    stacked = np.mean([np.ravel(a)[mask] for a in alphas], axis=0)
    return {int(s): float(v) for s, v in zip(src[mask], stacked)}


def _attention_node_weights(gt: GraphTensors,
                            attention: dict[int, float]) -> NodeWeights | None:
    text_set = {int(i) for i in gt.text_ids}
    masked = {i: attention.get(i, 0.0) for i in text_set}
    total = sum(masked.values())
    if total <= 0.0:
        return None
    values = {i: 0.0 for i in range(gt.n_nodes)}
    for i, v in masked.items():
        values[i] = v / total
    return NodeWeights(values=values, text_mask=text_set)


def forward(params: ModelParams, gt: GraphTensors, pvars=None) -> ForwardResult:
    if params.architecture == "wgcn":
        return wgcn_forward(params, gt, pvars)
    return plain_forward(params, gt, pvars)


def compute_gradients(params: ModelParams, gt: GraphTensors):
    """One forward/backward pass; returns (loss value, grads, result)."""
    pvars = {k: Var(v) for k, v in params.arrays.items()}
    result = forward(params, gt, pvars)
    loss = cosine_loss(result.z_hat, gt.reference)
    ad.backward(loss)
    grads = {
        k: (v.grad if v.grad is not None else np.zeros_like(v.value))
        for k, v in pvars.items()
    }
    return float(loss.value), grads, result


def page_loss(params: ModelParams, gt: GraphTensors) -> float:
    result = forward(params, gt)
    return float(cosine_loss(result.z_hat, gt.reference).value)


# --------------------------------------------------------------------------
# Checkpoint format: magic line, JSON header line, float64 LE blob
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"WICECKPT1\n"


def save_checkpoint(params: ModelParams, path, extra: dict | None = None):
    manifest = [[name, list(params.arrays[name].shape)]
                for name in params.arrays]
    header = {
        "version": 1,
        "architecture": params.architecture,
        "layer_dims": params.layer_dims,
        "feature_dim": params.feature_dim,
        "emb_dim": params.emb_dim,
        "rng_seed": params.rng_seed,
        "heads": params.heads,
        "depth": params.depth,
        "weight_mode": params.weight_mode,
        "readout": params.readout,
        "provider_id": params.provider_id,
        "step": params.step,
        "manifest": manifest,
        "extra": extra or {},
    }
    blob = b"".join(
        np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes()
        for name, _ in manifest
    )
    payload = (CHECKPOINT_MAGIC
               + json.dumps(header, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")
               + b"\n" + blob)
    with open(path, "wb") as fh:
        fh.write(payload)


def load_checkpoint(path):
    """Returns (ModelParams, extra dict)."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    arrays = {}
    offset = 0
    for name, shape in header["manifest"]:
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count,
                            offset=offset).reshape(shape)
        arrays[name] = arr.astype(np.float64)
        offset += count * 8
    params = ModelParams(
        architecture=header["architecture"],
        layer_dims=header["layer_dims"],
        arrays=arrays,
        feature_dim=header["feature_dim"],
        emb_dim=header["emb_dim"],
        rng_seed=header["rng_seed"],
        heads=header["heads"],
        depth=header["depth"],
        weight_mode=header["weight_mode"],
        readout=header["readout"],
        provider_id=header["provider_id"],
        step=header["step"],
    )
    return params, header.get("extra", {})
