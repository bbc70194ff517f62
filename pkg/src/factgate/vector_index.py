"""Embedding vectors and exact maximum-cosine-similarity retrieval.

The index is a brute-force linear scan: the knowledge source fits a scan
at the scale we target, and exact top-1 retrieval is what the verification
pipeline expects.  Vectors are stored as 32-bit floats on disk and
accumulated in 64-bit for dot products so that rankings stay stable.

Indexes are immutable after construction; ``top_k`` is pure and safe under
unlimited concurrent callers.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import EvidenceItem, Modality
from .errors import (
    BackendError,
    DimensionDrift,
    DimensionMismatch,
    EmptyIndex,
    MissingFile,
    SchemaViolation,
    ZeroVector,
)

INDEX_FORMAT = "vector-index/1"


class GateDecision(Enum):
    KEEP = "keep"
    DROP = "drop"


@dataclass(frozen=True)
class RetrievalHit:
    evidence_id: str
    score: float
    rank: int  # 1-based; consecutive, scores non-increasing with rank


def _as_vector(values, dtype=np.float64) -> np.ndarray:
    vec = np.asarray(values, dtype=dtype).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise SchemaViolation(0, "vector", "non-finite entries")
    return vec


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between two vectors, in [-1, 1] up to rounding.

    Inputs are accumulated in float64 regardless of their storage dtype.
    """
    va = _as_vector(a)
    vb = _as_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatch(va.shape[0], vb.shape[0])
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity with an all-zero vector")
    return float(np.dot(va, vb) / (na * nb))


def threshold_filter(claim_vec, image_vec, tau: float) -> GateDecision:
    """Keep the image iff claim-image cosine similarity is >= tau.

    The boundary is inclusive so that a duplicate image (similarity 1.0)
    survives even at tau = 1.
    """
    return GateDecision.KEEP if cosine_similarity(claim_vec, image_vec) >= tau else GateDecision.DROP


class VectorIndex:
    """Entries of (evidence_id, vector) for one modality, one embedder."""

    def __init__(
        self,
        ids: Sequence[str],
        vectors,
        modality: Modality,
        embedder_tag: str,
    ):
        ids = tuple(str(i) for i in ids)
        matrix = np.asarray(vectors, dtype=np.float32)
        if matrix.ndim != 2:
            matrix = matrix.reshape(len(ids), -1)
        if len(ids) != matrix.shape[0]:
            raise SchemaViolation(0, "vectors", "one vector per id required")
        if len(set(ids)) != len(ids):
            raise SchemaViolation(0, "evidence_id", "duplicate ids in index")
        if not np.all(np.isfinite(matrix)):
            raise SchemaViolation(0, "vector", "non-finite entries")
        norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
        zero = np.nonzero(norms == 0.0)[0]
        if len(ids) and zero.size:
            raise ZeroVector(f"all-zero vector for id {ids[int(zero[0])]!r}")
        self.ids = ids
        self.matrix = matrix
        self.matrix.setflags(write=False)
        self.modality = modality
        self.embedder_tag = embedder_tag
        self._norms = norms
        self._pos = {eid: i for i, eid in enumerate(ids)}

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1]) if len(self.ids) else 0

    def __contains__(self, evidence_id: str) -> bool:
        return evidence_id in self._pos

    def vector_for(self, evidence_id: str) -> np.ndarray:
        return self.matrix[self._pos[evidence_id]]


def _dot_rows(matrix: np.ndarray, q: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Row-wise float64 dot products with a fixed summation order.

    BLAS gemv can round byte-identical rows differently depending on their
    memory position, which would make exact ties order-dependent; the
    elementwise multiply + axis sum keeps equal rows bit-equal.
    """
    n = matrix.shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        block = matrix[start : start + chunk].astype(np.float64)
        out[start : start + chunk] = (block * q).sum(axis=1)
    return out


def top_k(query, index: VectorIndex, k: int) -> list[RetrievalHit]:
    """The k entries with highest cosine similarity to the query.

    Ties are broken by ascending evidence_id so runs are reproducible.
    Returns all entries, ranked, when k exceeds the index size.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise EmptyIndex("top_k over an empty index")
    q = _as_vector(query)
    if q.shape[0] != index.dim:
        raise DimensionMismatch(index.dim, q.shape[0])
    qnorm = float(np.linalg.norm(q))
    if qnorm == 0.0:
        raise ZeroVector("query vector is all-zero")
    scores = _dot_rows(index.matrix, q) / (index._norms * qnorm)
    # lexsort: primary key last -> sort by -score, break ties by ascending id
    order = np.lexsort((np.asarray(index.ids), -scores))
    top = order[: min(k, len(index))]
    return [
        RetrievalHit(evidence_id=index.ids[i], score=float(scores[i]), rank=rank)
        for rank, i in enumerate(top, start=1)
    ]


# -- embedding backends ------------------------------------------------------


class ScriptedEmbeddingBackend:
    """File-backed stub mapping exact input strings to fixed vectors."""

    def __init__(self, vectors: Mapping[str, Sequence[float]], tag: str = "scripted"):
        self._vectors = {str(k): list(map(float, v)) for k, v in vectors.items()}
        self.tag = tag

    @classmethod
    def from_file(cls, path, tag: str = "scripted") -> "ScriptedEmbeddingBackend":
        path = Path(path)
        if not path.exists():
            raise MissingFile(path)
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(data, tag=tag)

    def embed(self, inputs: Sequence[str]) -> list[list[float]]:
        out = []
        for item in inputs:
            key = str(item)
            if key not in self._vectors:
                raise BackendError(key, "no scripted vector for input")
            out.append(self._vectors[key])
        return out


class HTTPEmbeddingBackend:
    """Client for an embedding endpoint: POST {inputs: [...]} -> {vectors: [[f32]]}."""

    def __init__(self, base_url: str, tag: str, timeout: float = 30.0, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.tag = tag
        self.timeout = timeout
        self._session = session or requests.Session()

    def embed(self, inputs: Sequence[str]) -> list[list[float]]:
        resp = self._session.post(
            self.base_url, json={"inputs": list(inputs)}, timeout=self.timeout
        )
        if resp.status_code != 200:
            raise BackendError(str(inputs[0]) if inputs else "", f"HTTP {resp.status_code}")
        payload = resp.json()
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(inputs):
            raise BackendError(
                str(inputs[0]) if inputs else "", "malformed embedding response"
            )
        return vectors


def build_index(
    items: Iterable[EvidenceItem],
    embed_backend,
    *,
    batch_size: int = 64,
) -> VectorIndex:
    """Embed one modality's evidence items into a fresh index.

    The build is atomic: any backend failure aborts before anything is
    persisted, and the failing item is named.  A backend that changes
    output dimension mid-build raises DimensionDrift.
    """
    items = list(items)
    if not items:
        raise EmptyIndex("cannot build an index from zero items")
    modalities = {item.modality for item in items}
    if len(modalities) != 1:
        raise SchemaViolation(0, "modality", "index items must share one modality")
    modality = modalities.pop()

    ids: list[str] = []
    vectors: list[list[float]] = []
    dim: int | None = None
    for start in range(0, len(items), batch_size):
        batch = items[start : start + batch_size]
        inputs = [item.payload() for item in batch]
        try:
            batch_vecs = embed_backend.embed(inputs)
        except Exception as exc:  # find the culprit item for the error message
            failing = batch[0]
            for item in batch:
                try:
                    embed_backend.embed([item.payload()])
                except Exception:
                    failing = item
                    break
            raise BackendError(failing.evidence_id, str(exc)) from exc
        for item, vec in zip(batch, batch_vecs):
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise DimensionDrift(
                    f"vector for {item.evidence_id!r} has dim {len(vec)}, expected {dim}"
                )
            ids.append(item.evidence_id)
            vectors.append(vec)
    tag = getattr(embed_backend, "tag", embed_backend.__class__.__name__)
    return VectorIndex(ids, np.asarray(vectors, dtype=np.float32), modality, tag)


# -- persistence -------------------------------------------------------------
#
# Layout (vector-index/1): JSON lines.  The first line is a header
#   {"format", "dim", "modality", "embedder_tag", "count"}
# followed by one {"id", "v": [f32...]} record per entry.  Floats are
# round-tripped through float32 so rebuilds are byte-identical.


def save_index(index: VectorIndex, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format": INDEX_FORMAT,
        "dim": index.dim,
        "modality": index.modality.value,
        "embedder_tag": index.embedder_tag,
        "count": len(index),
    }
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, ensure_ascii=False) + "\n")
            for eid, row in zip(index.ids, index.matrix):
                record = {"id": eid, "v": [float(x) for x in row]}
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_index(path) -> VectorIndex:
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    with open(path, encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise SchemaViolation(1, "header", str(exc)) from exc
        if header.get("format") != INDEX_FORMAT:
            raise SchemaViolation(1, "format", f"unsupported index format {header.get('format')!r}")
        ids: list[str] = []
        vectors: list[list[float]] = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            ids.append(str(record["id"]))
            vectors.append(record["v"])
    if len(ids) != header.get("count"):
        raise SchemaViolation(1, "count", f"expected {header.get('count')} entries, found {len(ids)}")
    matrix = np.asarray(vectors, dtype=np.float32) if ids else np.zeros((0, header["dim"]), np.float32)
    return VectorIndex(ids, matrix, Modality(header["modality"]), header["embedder_tag"])
