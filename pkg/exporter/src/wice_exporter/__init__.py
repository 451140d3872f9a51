"""Embedding exporter for wice graph files.

Runs a multilingual sentence-embedding model over every unique text in
a preprocessed graphs file and writes the bit-exact embedding-cache
format the wice pipeline consumes. Talks to the pipeline only through
those two file formats.
"""

from .exporter import ExportManifest, ModelUnavailable, export_embeddings

__all__ = ["ExportManifest", "ModelUnavailable", "export_embeddings"]
