"""Exception hierarchy shared across the pipeline.

Data errors (bad pages, missing artifacts) derive from DataError so the
CLI can map them to exit code 2; numeric failures map to exit code 3.
"""


class WiceError(Exception):
    """Base class for all library errors."""


class DataError(WiceError):
    """Input data cannot be processed (page dropped or run aborted)."""


class MalformedDocument(DataError):
    """No element tree could be recovered from the input bytes."""


class NoImage(DataError):
    """Page contains no <img> element; page is dropped from the corpus."""


class NoReferenceText(DataError):
    """alt, figcaption and title are all empty; page excluded from training."""


class UnknownNode(DataError):
    """A node id does not exist in the graph."""


class EmptyText(DataError):
    """The featurizer was given an empty string."""


class MissingEmbedding(DataError):
    """The cache provider has no vector for a requested text."""

    def __init__(self, text_hash, page_id=None):
        self.text_hash = text_hash
        self.page_id = page_id
        where = f" (page {page_id})" if page_id else ""
        super().__init__(f"no cached embedding for text {text_hash}{where}")


class ZeroVector(DataError):
    """A vector that must be non-zero has (near-)zero norm."""


class DimensionMismatch(DataError):
    """Vector or matrix dimensions are incompatible."""


class ProviderMismatch(DataError):
    """Embeddings from different providers were mixed in one run."""


class NoTextNodes(DataError):
    """Graph has zero text nodes; page is skipped and counted."""


class NoTitle(DataError):
    """Page has no document <title>; excluded from the title baseline."""


class EmptyCorpus(DataError):
    """Split requested over an empty corpus."""


class EmptySet(DataError):
    """Evaluation requested over an empty page set."""


class DegenerateVariance(DataError):
    """Pearson correlation is undefined because one series is constant."""


class MissingPrerequisite(DataError):
    """A pipeline stage was invoked before its input artifact exists."""

    def __init__(self, artifact):
        self.artifact = artifact
        super().__init__(f"missing prerequisite artifact: {artifact}")


class NumericError(WiceError):
    """Numeric failure during training; aborts the run (exit code 3)."""


class NonFiniteGradient(NumericError):
    """A gradient contained NaN or Inf; includes the parameter path."""

    def __init__(self, param_path, page_id=None):
        self.param_path = param_path
        self.page_id = page_id
        where = f" while training on page {page_id}" if page_id else ""
        super().__init__(f"non-finite gradient for parameter {param_path!r}{where}")
