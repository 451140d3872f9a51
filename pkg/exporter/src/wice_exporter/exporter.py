"""Core export logic: graphs file in, embedding cache out.

Cache format (fixed, shared with the pipeline):
    dim=<D> provider=<id>\n
    <sha256 hex of UTF-8 text>\t<D space-separated floats>\n ...
Floats are written with shortest round-trip repr so the file is
bit-exact under write/read. Records are sorted by hash so the same
inputs always produce the same bytes.

Model ids starting with "dummy:" select a built-in deterministic
encoder (seeded per text hash) used for offline testing; anything else
is loaded through sentence-transformers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DUMMY_PREFIX = "dummy:"
DEFAULT_BATCH_SIZE = 64


class ModelUnavailable(Exception):
    """The requested embedding model cannot be loaded."""


@dataclass
class ExportManifest:
    model: str
    dim: int
    text_count: int
    cache_path: str
    content_hash: str

    def write(self, path):
        payload = {
            "model": self.model,
            "dim": self.dim,
            "text_count": self.text_count,
            "cache_path": self.cache_path,
            "content_hash": self.content_hash,
        }
        Path(path).write_text(
            json.dumps(payload, sort_keys=True, indent=1) + "\n",
            encoding="utf-8")


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def collect_texts(graphs_path) -> list[str]:
    """Unique strings the pipeline will ask the cache for: every text
    node, every reference text and every document title."""
    seen: dict[str, None] = {}
    with open(graphs_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            for node in record.get("nodes", []):
                text = node.get("text")
                if text:
                    seen.setdefault(text, None)
            if record.get("reference_text"):
                seen.setdefault(record["reference_text"], None)
            if record.get("title"):
                seen.setdefault(record["title"], None)
    return list(seen)


def _dummy_encode(texts, dim):
    out = np.empty((len(texts), dim), dtype=np.float64)
    for i, text in enumerate(texts):
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        out[i] = rng.normal(size=dim)
    return out


def _load_sentence_transformer(model_id):
    try:
        from sentence_transformers import SentenceTransformer
    except ImportError as exc:
        raise ModelUnavailable(
            "sentence-transformers is not installed; install the "
            "'model' extra or use a dummy:<dim> model") from exc
    try:
        return SentenceTransformer(model_id)
    except Exception as exc:
        raise ModelUnavailable(f"cannot load model {model_id!r}: {exc}") from exc


def encode_texts(texts, model_id: str,
                 batch_size: int = DEFAULT_BATCH_SIZE) -> np.ndarray:
    """Unit-norm float64 vectors, one row per text."""
    if model_id.startswith(DUMMY_PREFIX):
        try:
            dim = int(model_id[len(DUMMY_PREFIX):])
        except ValueError:
            raise ModelUnavailable(f"bad dummy model id {model_id!r}")
        vectors = _dummy_encode(texts, dim)
    else:
        model = _load_sentence_transformer(model_id)
        chunks = []
        for start in range(0, len(texts), batch_size):
            chunk = model.encode(texts[start:start + batch_size],
                                 batch_size=batch_size,
                                 convert_to_numpy=True,
                                 show_progress_bar=False)
            chunks.append(np.asarray(chunk, dtype=np.float64))
        vectors = (np.concatenate(chunks, axis=0) if chunks
                   else np.zeros((0, 0)))
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise ValueError("model produced a zero vector")
    return vectors / norms


def write_cache(path, dim: int, provider_id: str,
                rows: dict[str, np.ndarray]):
    if " " in provider_id:
        raise ValueError("provider id must not contain spaces")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={dim} provider={provider_id}\n")
        for key in sorted(rows):
            vec = rows[key]
            fh.write(key + "\t" + " ".join(repr(float(x)) for x in vec)
                     + "\n")


def export_embeddings(graphs_path, model_id: str, out_path,
                      batch_size: int = DEFAULT_BATCH_SIZE) -> ExportManifest:
    """Embed every unique text of a graphs file into a cache file."""
    texts = collect_texts(graphs_path)
    vectors = encode_texts(texts, model_id, batch_size)
    dim = int(vectors.shape[1]) if len(texts) else 0
    rows = {text_key(t): vectors[i] for i, t in enumerate(texts)}
    if len(rows) != len(texts):
        # distinct texts can share a hash only if sha256 collides;
        # treat silently dropped rows as a hard error instead
        raise ValueError("text hash collision while building the cache")
    provider_id = model_id.replace(" ", "_")
    write_cache(out_path, dim, provider_id, rows)
    digest = hashlib.sha256(Path(out_path).read_bytes()).hexdigest()
    manifest = ExportManifest(
        model=model_id,
        dim=dim,
        text_count=len(texts),
        cache_path=str(out_path),
        content_hash=digest,
    )
    manifest.write(str(out_path) + ".manifest.json")
    return manifest
