"""Sentence embeddings for graph text nodes, plus the cache file format.

Two providers exist: `hashed`, a deterministic character n-gram
featurizer that needs no external model, and `cache`, which looks
vectors up in a precomputed cache file (the format the exporter tool
also writes). Every vector leaving this module is unit-norm float64.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .dom import N_TAG_GROUPS, KIND_TEXT, DomGraph
from .errors import (
    DimensionMismatch,
    EmptyText,
    MissingEmbedding,
    ZeroVector,
)

NORM_TOLERANCE = 1e-6
DEFAULT_DIM = 512
MIN_HASHED_DIM = 16

_FNV_PRIME = np.uint64(1099511628211)
_MIX_MULT = np.uint64(0x9E3779B97F4A7C15)
_SIGN_BIT = np.uint64(1) << np.uint64(62)


def text_key(text: str) -> str:
    """Cache lookup key: SHA-256 hex of the UTF-8 text."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _splitmix(h: np.ndarray) -> np.ndarray:
    h = (h ^ (h >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    h = (h ^ (h >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return h ^ (h >> np.uint64(31))


def hashed_featurizer(text: str, dim: int, seed: int) -> np.ndarray:
    """Character 3-5-gram counts hashed into `dim` signed buckets.

    Pure function of (text, dim, seed); the projection is the standard
    hashing trick (bucket index and sign both derived from the n-gram
    hash), followed by L2 normalization.
    """
    if not text:
        raise EmptyText("cannot featurize an empty string")
    if dim < MIN_HASHED_DIM:
        raise ValueError(f"hashed featurizer needs dim >= {MIN_HASHED_DIM}")
    normalized = " ".join(text.lower().split())
    data = (" " + normalized + " ").encode("utf-8")
    chars = np.frombuffer(data, dtype=np.uint8).astype(np.uint64)
    vec = np.zeros(dim, dtype=np.float64)
    udim = np.uint64(dim)
    for n in (3, 4, 5):
        if len(chars) < n:
            continue
        count = len(chars) - n + 1
        h = np.full(count, np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + np.uint64(n),
                    dtype=np.uint64)
        for k in range(n):
            h = h * _FNV_PRIME + chars[k:k + count]
        h = _splitmix(h * _MIX_MULT)
        idx = (h % udim).astype(np.int64)
        signs = np.where(h & _SIGN_BIT, 1.0, -1.0)
        np.add.at(vec, idx, signs)
    norm = float(np.linalg.norm(vec))
    if norm < 1e-12:
        # pathological cancellation; fall back to a single keyed bucket
        bucket = int(np.uint64(int(text_key(text)[:15], 16)) % udim)
        vec[bucket] = 1.0
        norm = 1.0
    return vec / norm


class HashedProvider:
    """Deterministic built-in fallback provider."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.provider_id = f"hashed-d{dim}-s{seed}"
        self._memo: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        vec = self._memo.get(text)
        if vec is None:
            vec = hashed_featurizer(text, self.dim, self.seed)
            self._memo[text] = vec
        return vec


class CacheProvider:
    """Provider backed by a precomputed embedding cache file."""

    def __init__(self, dim: int, provider_id: str,
                 vectors: dict[str, np.ndarray]):
        self.dim = dim
        self.provider_id = provider_id
        self.vectors = vectors

    def embed(self, text: str, page_id: str | None = None) -> np.ndarray:
        key = text_key(text)
        vec = self.vectors.get(key)
        if vec is None:
            raise MissingEmbedding(key, page_id)
        return vec


def embed_texts(texts, provider) -> list[np.ndarray]:
    """One unit-norm vector per input text; identical strings map to
    identical vectors."""
    return [ensure_unit_norm(provider.embed(t)) for t in texts]


def ensure_unit_norm(vec: np.ndarray) -> np.ndarray:
    """Renormalize a vector whose norm drifted outside tolerance;
    reject zero vectors."""
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm < 1e-9:
        raise ZeroVector("zero vector cannot be normalized")
    if abs(norm - 1.0) > NORM_TOLERANCE:
        return vec / norm
    return vec


# --------------------------------------------------------------------------
# Per-graph embeddings and the feature tensor
# --------------------------------------------------------------------------

@dataclass
class EmbeddingMatrix:
    dim: int
    node_vectors: dict[int, np.ndarray]
    reference_vector: np.ndarray
    provider_id: str
    title_vector: np.ndarray | None = field(default=None)


def featurize_graph(graph: DomGraph, provider,
                    embed_title: bool = True) -> EmbeddingMatrix:
    """Attach one vector per text node plus the reference vector (and the
    document title's vector when present, for the title baseline).

    A cache miss fails the whole page: MissingEmbedding is re-raised
    with the page id attached so the caller can report it."""
    def embed(text):
        try:
            return ensure_unit_norm(provider.embed(text))
        except MissingEmbedding as exc:
            raise MissingEmbedding(exc.text_hash, graph.page_id) from exc

    node_vectors = {}
    for node in graph.nodes:
        if node.kind == KIND_TEXT:
            vec = embed(node.text)
            if len(vec) != provider.dim:
                raise DimensionMismatch(
                    f"provider returned dim {len(vec)}, expected {provider.dim}")
            node_vectors[node.node_id] = vec
    reference = embed(graph.reference_text)
    title_vector = None
    if embed_title and graph.title:
        title_vector = embed(graph.title)
    return EmbeddingMatrix(
        dim=provider.dim,
        node_vectors=node_vectors,
        reference_vector=reference,
        provider_id=provider.provider_id,
        title_vector=title_vector,
    )


def assemble_features(graph: DomGraph, emb: EmbeddingMatrix) -> np.ndarray:
    """Per-node feature rows: one-hot tag group (22) | embedding (dim,
    zeros for non-text nodes) | is_main_image flag (1)."""
    dim = emb.dim
    width = N_TAG_GROUPS + dim + 1
    features = np.zeros((len(graph.nodes), width), dtype=np.float64)
    for node in graph.nodes:
        row = features[node.node_id]
        row[node.tag_group] = 1.0
        if node.kind == KIND_TEXT:
            vec = emb.node_vectors.get(node.node_id)
            if vec is None:
                raise MissingEmbedding(text_key(node.text or ""), graph.page_id)
            if len(vec) != dim:
                raise DimensionMismatch(
                    f"node {node.node_id} vector has dim {len(vec)}, "
                    f"matrix dim is {dim}")
            row[N_TAG_GROUPS:N_TAG_GROUPS + dim] = vec
        if node.is_main_image:
            row[-1] = 1.0
    return features


def feature_width(dim: int) -> int:
    return N_TAG_GROUPS + dim + 1


# --------------------------------------------------------------------------
# Embedding cache file format
# --------------------------------------------------------------------------
# Header line: `dim=<D> provider=<id>`, then one record per line:
# sha256 hex of the UTF-8 text, a tab, D space-separated decimal floats.
# Floats use shortest round-trip repr, so write/read is bit-exact.

def write_cache(path, dim: int, provider_id: str,
                vectors: dict[str, np.ndarray]):
    if " " in provider_id:
        raise ValueError("provider id must not contain spaces")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={dim} provider={provider_id}\n")
        for key in sorted(vectors):
            vec = vectors[key]
            if len(vec) != dim:
                raise DimensionMismatch(
                    f"vector for {key} has dim {len(vec)}, header says {dim}")
            fh.write(key + "\t" + " ".join(repr(float(x)) for x in vec) + "\n")


def read_cache(path) -> CacheProvider:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        fields = dict(part.split("=", 1) for part in header.split(" ") if "=" in part)
        if "dim" not in fields or "provider" not in fields:
            raise ValueError(f"bad cache header: {header!r}")
        dim = int(fields["dim"])
        provider_id = fields["provider"]
        vectors = {}
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, payload = line.partition("\t")
            vec = np.array([float(x) for x in payload.split(" ")],
                           dtype=np.float64)
            if len(vec) != dim:
                raise DimensionMismatch(
                    f"cache row {key} has dim {len(vec)}, header says {dim}")
            vectors[key] = vec
    return CacheProvider(dim=dim, provider_id=provider_id, vectors=vectors)


def collect_unique_texts(graphs) -> list[str]:
    """All strings a run needs embeddings for: text-node texts, reference
    texts and document titles, deduplicated, in first-seen order."""
    seen = {}
    for graph in graphs:
        for node in graph.nodes:
            if node.kind == KIND_TEXT and node.text:
                seen.setdefault(node.text, None)
        if graph.reference_text:
            seen.setdefault(graph.reference_text, None)
        if graph.title:
            seen.setdefault(graph.title, None)
    return list(seen)
