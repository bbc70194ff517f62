"""Exception hierarchy shared across the package.

Exceptions are grouped into four families that the CLI maps onto stable
exit codes: data problems (2), backend or index-build failures (3),
evaluation mismatches (4), and configuration/usage mistakes (64).
"""

from __future__ import annotations


class FactGateError(Exception):
    """Base class for all package exceptions."""


class DataError(FactGateError):
    """Invalid or missing input data (CLI exit code 2)."""


class BackendBuildError(FactGateError):
    """Backend call or index build failure (CLI exit code 3)."""


class EvalMismatch(FactGateError):
    """Evaluation inputs are inconsistent (CLI exit code 4)."""


class ConfigError(FactGateError):
    """Bad configuration or usage (CLI exit code 64)."""


# -- corpus ----------------------------------------------------------------

class MissingFile(DataError):
    def __init__(self, path):
        super().__init__(f"required file not found: {path}")
        self.path = str(path)


class SchemaViolation(DataError):
    def __init__(self, line: int, field: str, message: str = ""):
        detail = f" ({message})" if message else ""
        super().__init__(f"schema violation at line {line}, field {field!r}{detail}")
        self.line = line
        self.field = field


class DanglingEvidenceRef(DataError):
    def __init__(self, claim_id: str, evidence_id: str):
        super().__init__(
            f"claim {claim_id!r} references unknown evidence {evidence_id!r}"
        )
        self.claim_id = claim_id
        self.evidence_id = evidence_id


class DuplicateAnnotation(DataError):
    def __init__(self, claim_id: str, annotator_id: str):
        super().__init__(
            f"duplicate annotation for claim {claim_id!r} by annotator {annotator_id!r}"
        )
        self.claim_id = claim_id
        self.annotator_id = annotator_id


class UnknownLabel(DataError):
    def __init__(self, raw: str):
        super().__init__(f"unknown verdict label: {raw!r}")
        self.raw = raw


class IOFailure(DataError):
    """Read/write failure while persisting artifacts."""


# -- vector index ----------------------------------------------------------

class DimensionMismatch(BackendBuildError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"vector dimension mismatch: expected {expected}, got {got}")
        self.expected = expected
        self.got = got


class ZeroVector(BackendBuildError):
    """Cosine similarity is undefined for an all-zero vector."""


class EmptyIndex(BackendBuildError):
    """Retrieval over an index with no entries."""


class BackendError(BackendBuildError):
    """An embedding backend failed on a specific item."""

    def __init__(self, item_id: str, message: str = ""):
        detail = f": {message}" if message else ""
        super().__init__(f"embedding backend failed on item {item_id!r}{detail}")
        self.item_id = item_id


class DimensionDrift(BackendBuildError):
    """A backend returned vectors of inconsistent dimension within one build."""


# -- agents ----------------------------------------------------------------

class MissingImage(DataError):
    """A prompt that requires an image was rendered without a readable one."""


class EmptyDocument(DataError):
    """Summarization requested for an empty or whitespace-only document."""


class BackendTimeout(BackendBuildError):
    """A chat backend did not respond within the transport deadline."""


class BackendHTTPError(BackendBuildError):
    def __init__(self, status: int, message: str = ""):
        detail = f": {message}" if message else ""
        super().__init__(f"chat backend returned HTTP {status}{detail}")
        self.status = status


class TranscriptMiss(BackendBuildError):
    """The scripted backend saw a request digest absent from its transcript."""

    def __init__(self, digest: str):
        super().__init__(f"no transcript entry for request digest {digest}")
        self.digest = digest


class UnparseableVerdict(FactGateError):
    """No verdict label could be extracted from a model response."""


class UnparseableNecessity(FactGateError):
    """No Yes/No necessity answer could be extracted from a model response."""


# -- pipeline --------------------------------------------------------------

class MissingIndex(BackendBuildError):
    """A retrieval-based configuration was requested without the needed index."""


class EmbeddingFailure(BackendBuildError):
    """Embedding a query failed during evidence assembly."""


# -- web evidence builder ----------------------------------------------------

class SearchBackendError(BackendBuildError):
    """The web-search backend failed or returned an unusable response."""


class QuotaExceeded(BackendBuildError):
    """The web-search backend reported an exhausted quota."""


# -- evalkit ---------------------------------------------------------------

class MissingGold(EvalMismatch):
    def __init__(self, claim_id: str):
        super().__init__(f"no gold verdict for claim {claim_id!r}")
        self.claim_id = claim_id


class ClaimSetMismatch(EvalMismatch):
    """Prediction runs being composed do not cover the same claim set."""


class EmptySample(EvalMismatch):
    """A statistical test received an empty sample."""


class DegenerateTable(EvalMismatch):
    """A contingency table has a zero marginal."""


class InsufficientData(EvalMismatch):
    """Agreement requires >= 2 annotators and >= 1 co-rated item."""
