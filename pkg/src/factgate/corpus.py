"""Claim/evidence datasets and the knowledge source, in one canonical schema.

Three dataset families (mocheg, finfact, webfc) are converted once into a
shared on-disk layout, so everything downstream reads a single format:

* ``claims.jsonl``      one claim per line:
  ``{claim_id, text, gold_verdict, gold_text_evidence: [id],
    gold_image_evidence: [id], source, factcheck_date?}``
* ``evidence.jsonl``    one knowledge-source item per line:
  ``{evidence_id, modality, text? | image_path?, provenance_url?, publish_date?}``
* ``annotations.jsonl`` one rating per line:
  ``{claim_id, annotator_id, necessity_label, claim_category?}``

All files are UTF-8 with one JSON object per line.  Image payloads live on
disk and are referenced by path; record files never embed bytes.  After
loading, every structure is immutable and safe to share across threads.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from datetime import date
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    ConfigError,
    DanglingEvidenceRef,
    DuplicateAnnotation,
    MissingFile,
    SchemaViolation,
    UnknownLabel,
)

logger = logging.getLogger(__name__)

FORMAT_TAGS = ("mocheg", "finfact", "webfc")

_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}")


class VerdictLabel(Enum):
    """Closed three-way verdict space; no other values are representable."""

    SUPPORTED = "Supported"
    REFUTED = "Refuted"
    NEI = "NEI"


class Modality(Enum):
    TEXT = "Text"
    IMAGE = "Image"


class NecessityLabel(Enum):
    NECESSARY = "Necessary"
    UNNECESSARY = "Unnecessary"


class ClaimCategory(Enum):
    VISUAL_SUCCESSFUL = "VisualSuccessful"
    VISUAL_UNSUCCESSFUL = "VisualUnsuccessful"


@dataclass(frozen=True)
class ClaimRecord:
    """A textual claim with its gold verdict and gold evidence references."""

    claim_id: str
    text: str
    gold_verdict: VerdictLabel
    gold_text_evidence: tuple[str, ...] = ()
    gold_image_evidence: tuple[str, ...] = ()
    source: str = ""
    factcheck_date: date | None = None


@dataclass(frozen=True)
class EvidenceItem:
    """One sentence or one image in the knowledge source."""

    evidence_id: str
    modality: Modality
    text: str | None = None
    image_path: str | None = None
    provenance_url: str | None = None
    publish_date: date | None = None

    def payload(self) -> str:
        return self.text if self.modality is Modality.TEXT else (self.image_path or "")


class KnowledgeSource:
    """Immutable pool of candidate evidence items, indexed by id.

    ``base_dir`` is the dataset directory that relative image paths are
    resolved against; it is set by ``load_dataset`` and never serialized.
    """

    def __init__(self, items: Iterable[EvidenceItem] = (), base_dir=None):
        by_id: dict[str, EvidenceItem] = {}
        for item in items:
            if item.evidence_id in by_id:
                raise SchemaViolation(0, "evidence_id", f"duplicate id {item.evidence_id!r}")
            by_id[item.evidence_id] = item
        self._by_id = by_id
        self.base_dir = Path(base_dir) if base_dir is not None else None

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, evidence_id: str) -> bool:
        return evidence_id in self._by_id

    def __getitem__(self, evidence_id: str) -> EvidenceItem:
        return self._by_id[evidence_id]

    def get(self, evidence_id: str) -> EvidenceItem | None:
        return self._by_id.get(evidence_id)

    def items(self) -> tuple[EvidenceItem, ...]:
        return tuple(self._by_id.values())

    def text_items(self) -> tuple[EvidenceItem, ...]:
        return tuple(i for i in self._by_id.values() if i.modality is Modality.TEXT)

    def image_items(self) -> tuple[EvidenceItem, ...]:
        return tuple(i for i in self._by_id.values() if i.modality is Modality.IMAGE)

    def resolve_image_path(self, item: EvidenceItem) -> str | None:
        if item.image_path is None:
            return None
        path = Path(item.image_path)
        if path.is_absolute() or self.base_dir is None:
            return str(path)
        return str(self.base_dir / path)


@dataclass(frozen=True)
class AnnotationRecord:
    """One annotator's necessity rating for one claim's visual evidence."""

    claim_id: str
    annotator_id: str
    necessity_label: NecessityLabel
    claim_category: ClaimCategory | None = None


def map_external_label(raw: str, format_tag: str) -> VerdictLabel:
    """Map a source dataset's label string onto the canonical verdict space.

    finfact uses True/False, mapped to Supported/Refuted.  mocheg and webfc
    labels pass through after case normalization ("not enough information"
    is accepted as a spelling of NEI).
    """
    _check_format_tag(format_tag)
    norm = raw.strip().lower()
    if format_tag == "finfact":
        if norm == "true":
            return VerdictLabel.SUPPORTED
        if norm == "false":
            return VerdictLabel.REFUTED
        raise UnknownLabel(raw)
    if norm == "supported":
        return VerdictLabel.SUPPORTED
    if norm == "refuted":
        return VerdictLabel.REFUTED
    if norm in ("nei", "not enough information"):
        return VerdictLabel.NEI
    raise UnknownLabel(raw)


def _check_format_tag(format_tag: str) -> None:
    if format_tag not in FORMAT_TAGS:
        raise ConfigError(f"unknown format tag {format_tag!r}; expected one of {FORMAT_TAGS}")


def parse_iso_date(value, *, where: str = "") -> date | None:
    """Parse an ISO-8601 calendar date, returning None (with a warning) on dirt.

    Web provenance dates are unreliable; a record with an unparseable date
    loads with the date absent, and temporal filters then treat it as
    excluded rather than silently admitted.
    """
    if value is None or value == "":
        return None
    text = str(value)
    if _ISO_DATE.match(text):
        try:
            return date.fromisoformat(text[:10])
        except ValueError:
            pass
    logger.warning("unparseable date %r%s; treating as absent", value, f" at {where}" if where else "")
    return None


def _read_jsonl(path: Path):
    """Yield (line_number, object) for each non-empty line of a JSONL file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(lineno, "<json>", str(exc)) from exc
            if not isinstance(obj, dict):
                raise SchemaViolation(lineno, "<json>", "expected a JSON object")
            yield lineno, obj


def _require(obj: Mapping, key: str, lineno: int) -> object:
    if key not in obj or obj[key] in (None, ""):
        raise SchemaViolation(lineno, key, "missing or empty")
    return obj[key]


def load_evidence(path) -> KnowledgeSource:
    """Load ``evidence.jsonl`` into a KnowledgeSource."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    items: list[EvidenceItem] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(path):
        evidence_id = str(_require(obj, "evidence_id", lineno))
        if evidence_id in seen:
            raise SchemaViolation(lineno, "evidence_id", f"duplicate id {evidence_id!r}")
        seen.add(evidence_id)
        modality_raw = str(_require(obj, "modality", lineno)).strip().lower()
        if modality_raw == "text":
            text = str(_require(obj, "text", lineno))
            image_path = None
            modality = Modality.TEXT
        elif modality_raw == "image":
            image_path = str(_require(obj, "image_path", lineno))
            text = None
            modality = Modality.IMAGE
        else:
            raise SchemaViolation(lineno, "modality", f"unknown modality {modality_raw!r}")
        items.append(
            EvidenceItem(
                evidence_id=evidence_id,
                modality=modality,
                text=text,
                image_path=image_path,
                provenance_url=obj.get("provenance_url") or None,
                publish_date=parse_iso_date(obj.get("publish_date"), where=f"{path}:{lineno}"),
            )
        )
    return KnowledgeSource(items, base_dir=path.parent)


def load_claims(path, format_tag: str, knowledge: KnowledgeSource) -> list[ClaimRecord]:
    """Load ``claims.jsonl``, validating references against the knowledge source."""
    _check_format_tag(format_tag)
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    claims: list[ClaimRecord] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(path):
        claim_id = str(_require(obj, "claim_id", lineno))
        if claim_id in seen:
            raise SchemaViolation(lineno, "claim_id", f"duplicate id {claim_id!r}")
        seen.add(claim_id)
        text = str(_require(obj, "text", lineno))
        raw_label = str(_require(obj, "gold_verdict", lineno))
        try:
            # Canonical files already carry canonical labels; fall back to the
            # source mapping so not-yet-normalized files convert in one pass.
            verdict = map_external_label(raw_label, "mocheg")
        except UnknownLabel:
            try:
                verdict = map_external_label(raw_label, format_tag)
            except UnknownLabel as exc:
                raise SchemaViolation(lineno, "gold_verdict", str(exc)) from exc
        text_refs = tuple(str(e) for e in obj.get("gold_text_evidence", []) or [])
        image_refs = tuple(str(e) for e in obj.get("gold_image_evidence", []) or [])
        for ref in (*text_refs, *image_refs):
            if ref not in knowledge:
                raise DanglingEvidenceRef(claim_id, ref)
        factcheck_date = parse_iso_date(obj.get("factcheck_date"), where=f"{path}:{lineno}")
        if format_tag == "webfc" and factcheck_date is None:
            raise SchemaViolation(lineno, "factcheck_date", "required for webfc records")
        claims.append(
            ClaimRecord(
                claim_id=claim_id,
                text=text,
                gold_verdict=verdict,
                gold_text_evidence=text_refs,
                gold_image_evidence=image_refs,
                source=str(obj.get("source", format_tag)),
                factcheck_date=factcheck_date,
            )
        )
    return claims


def load_dataset(path, format_tag: str) -> tuple[list[ClaimRecord], KnowledgeSource]:
    """Load a canonical dataset directory (claims.jsonl + evidence.jsonl).

    All records are validated and every gold evidence reference is checked
    against the knowledge source.  Empty files are valid and yield an empty
    dataset.
    """
    path = Path(path)
    knowledge = load_evidence(path / "evidence.jsonl")
    claims = load_claims(path / "claims.jsonl", format_tag, knowledge)
    logger.info("loaded %d claims, %d evidence items from %s", len(claims), len(knowledge), path)
    return claims, knowledge


def _claim_to_obj(claim: ClaimRecord) -> dict:
    obj = {
        "claim_id": claim.claim_id,
        "text": claim.text,
        "gold_verdict": claim.gold_verdict.value,
        "gold_text_evidence": list(claim.gold_text_evidence),
        "gold_image_evidence": list(claim.gold_image_evidence),
        "source": claim.source,
    }
    if claim.factcheck_date is not None:
        obj["factcheck_date"] = claim.factcheck_date.isoformat()
    return obj


def _evidence_to_obj(item: EvidenceItem) -> dict:
    obj: dict = {"evidence_id": item.evidence_id, "modality": item.modality.value}
    if item.modality is Modality.TEXT:
        obj["text"] = item.text
    else:
        obj["image_path"] = item.image_path
    if item.provenance_url:
        obj["provenance_url"] = item.provenance_url
    if item.publish_date is not None:
        obj["publish_date"] = item.publish_date.isoformat()
    return obj


def save_dataset(claims: Sequence[ClaimRecord], knowledge: KnowledgeSource, out_dir) -> None:
    """Write a dataset in the canonical schema; reconversion is byte-stable."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "evidence.jsonl", "w", encoding="utf-8") as fh:
        for item in knowledge.items():
            fh.write(json.dumps(_evidence_to_obj(item), ensure_ascii=False) + "\n")
    with open(out_dir / "claims.jsonl", "w", encoding="utf-8") as fh:
        for claim in claims:
            fh.write(json.dumps(_claim_to_obj(claim), ensure_ascii=False) + "\n")


def load_annotations(path) -> list[AnnotationRecord]:
    """Load necessity annotations, enforcing (claim_id, annotator_id) uniqueness."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(path)
    records: list[AnnotationRecord] = []
    seen: set[tuple[str, str]] = set()
    for lineno, obj in _read_jsonl(path):
        claim_id = str(_require(obj, "claim_id", lineno))
        annotator_id = str(_require(obj, "annotator_id", lineno))
        key = (claim_id, annotator_id)
        if key in seen:
            raise DuplicateAnnotation(claim_id, annotator_id)
        seen.add(key)
        label_raw = str(_require(obj, "necessity_label", lineno)).strip().lower()
        if label_raw == "necessary":
            label = NecessityLabel.NECESSARY
        elif label_raw == "unnecessary":
            label = NecessityLabel.UNNECESSARY
        else:
            raise SchemaViolation(lineno, "necessity_label", f"unknown label {label_raw!r}")
        category = None
        if obj.get("claim_category"):
            cat_raw = str(obj["claim_category"]).strip().lower()
            if cat_raw == "visualsuccessful":
                category = ClaimCategory.VISUAL_SUCCESSFUL
            elif cat_raw == "visualunsuccessful":
                category = ClaimCategory.VISUAL_UNSUCCESSFUL
            else:
                raise SchemaViolation(lineno, "claim_category", f"unknown category {cat_raw!r}")
        records.append(AnnotationRecord(claim_id, annotator_id, label, category))
    return records


def save_annotations(records: Sequence[AnnotationRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj: dict = {
                "claim_id": rec.claim_id,
                "annotator_id": rec.annotator_id,
                "necessity_label": rec.necessity_label.value,
            }
            if rec.claim_category is not None:
                obj["claim_category"] = rec.claim_category.value
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


# -- finfact sanitization ----------------------------------------------------
#
# Raw finfact records are JSON objects of the shape
#   {claim_id, claim, label ("True"/"False"), image_urls: [url],
#    evidence: [sentence], justification?}
# and the download report maps each referenced image URL to
#   {"status": "fetched"|"failed", "path"?: local file}  (or a bare bool).


@dataclass(frozen=True)
class FinfactRaw:
    claim_id: str
    text: str
    label: str
    image_urls: tuple[str, ...] = ()
    evidence: tuple[str, ...] = ()
    justification: str = ""


def _coerce_finfact_raw(obj) -> FinfactRaw:
    if isinstance(obj, FinfactRaw):
        return obj
    return FinfactRaw(
        claim_id=str(obj["claim_id"]),
        text=str(obj.get("claim") or obj.get("text") or ""),
        label=str(obj["label"]),
        image_urls=tuple(str(u) for u in obj.get("image_urls", []) or []),
        evidence=tuple(str(s) for s in obj.get("evidence", []) or []),
        justification=str(obj.get("justification", "")),
    )


def _fetched_urls(download_report: Mapping) -> set[str]:
    fetched = set()
    for url, entry in download_report.items():
        if isinstance(entry, Mapping):
            ok = str(entry.get("status", "")).lower() == "fetched"
        elif isinstance(entry, str):
            ok = entry.lower() == "fetched"
        else:
            ok = bool(entry)
        if ok:
            fetched.add(str(url))
    return fetched


def image_id_for_url(url: str) -> str:
    """Stable evidence id for an image URL (used by finfact conversion)."""
    import hashlib

    return "img-" + hashlib.sha1(url.encode("utf-8")).hexdigest()[:12]


def sanitize_finfact(raw_records: Iterable, download_report: Mapping) -> list[ClaimRecord]:
    """Filter raw finfact records against an image download report.

    Text-only claims are always retained.  Multimodal claims (those
    referencing at least one image URL) are retained only when at least one
    referenced image was actually fetched; their image references are
    reduced to the fetched ones, which makes the filter idempotent.
    """
    fetched = _fetched_urls(download_report)
    retained: list[ClaimRecord] = []
    for obj in raw_records:
        raw = _coerce_finfact_raw(obj)
        fetched_urls = tuple(u for u in raw.image_urls if u in fetched)
        if raw.image_urls and not fetched_urls:
            continue
        retained.append(
            ClaimRecord(
                claim_id=raw.claim_id,
                text=raw.text,
                gold_verdict=map_external_label(raw.label, "finfact"),
                gold_text_evidence=tuple(f"{raw.claim_id}-s{i}" for i in range(len(raw.evidence))),
                gold_image_evidence=tuple(image_id_for_url(u) for u in fetched_urls),
                source="finfact",
            )
        )
    return retained


def convert_finfact(
    raw_records: Iterable, download_report: Mapping
) -> tuple[list[ClaimRecord], KnowledgeSource]:
    """Convert raw finfact records into the canonical dataset.

    The knowledge source is built from every evidence sentence of the
    retained claims plus every successfully fetched image.
    """
    raw_list = [_coerce_finfact_raw(o) for o in raw_records]
    claims = sanitize_finfact(raw_list, download_report)
    retained_ids = {c.claim_id for c in claims}
    fetched = _fetched_urls(download_report)

    items: list[EvidenceItem] = []
    seen_imgs: set[str] = set()
    for raw in raw_list:
        if raw.claim_id not in retained_ids:
            continue
        for i, sentence in enumerate(raw.evidence):
            items.append(
                EvidenceItem(
                    evidence_id=f"{raw.claim_id}-s{i}",
                    modality=Modality.TEXT,
                    text=sentence,
                )
            )
        for url in raw.image_urls:
            if url not in fetched:
                continue
            evidence_id = image_id_for_url(url)
            if evidence_id in seen_imgs:
                continue
            seen_imgs.add(evidence_id)
            entry = download_report[url]
            path = entry.get("path") if isinstance(entry, Mapping) else None
            items.append(
                EvidenceItem(
                    evidence_id=evidence_id,
                    modality=Modality.IMAGE,
                    image_path=str(path) if path else f"images/{evidence_id}.jpg",
                    provenance_url=url,
                )
            )
    return claims, KnowledgeSource(items)


def dataset_digest(claims: Sequence[ClaimRecord]) -> str:
    """Content hash of a claim list, used to stamp run manifests."""
    import hashlib

    h = hashlib.sha256()
    for claim in claims:
        h.update(json.dumps(_claim_to_obj(claim), sort_keys=True).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()
