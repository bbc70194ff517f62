"""Shared fixtures: tiny datasets, image files, and scripted backend helpers."""

from __future__ import annotations

import pytest

from factgate import agents
from factgate.agents import Transcript, TranscriptEntry, canonical_request, request_digest
from factgate.corpus import (
    ClaimRecord,
    EvidenceItem,
    KnowledgeSource,
    Modality,
    VerdictLabel,
)

# 1x1 transparent PNG; enough for "readable image file" checks everywhere.
PNG_BYTES = bytes.fromhex(
    "89504e470d0a1a0a0000000d49484452000000010000000108060000001f15c489"
    "0000000d4944415478da63fcff9fa10e0002d50159e0216ff70000000049454e44ae426082"
)


@pytest.fixture
def image_file(tmp_path):
    path = tmp_path / "evidence.png"
    path.write_bytes(PNG_BYTES)
    return str(path)


def write_image(directory, name="img.png"):
    path = directory / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(PNG_BYTES)
    return str(path)


def make_knowledge(texts=None, images=None, base_dir=None):
    """texts: {id: sentence}; images: {id: path}."""
    items = [
        EvidenceItem(evidence_id=eid, modality=Modality.TEXT, text=s)
        for eid, s in (texts or {}).items()
    ]
    items += [
        EvidenceItem(evidence_id=eid, modality=Modality.IMAGE, image_path=p)
        for eid, p in (images or {}).items()
    ]
    return KnowledgeSource(items, base_dir=base_dir)


def make_claim(claim_id, text="some claim", verdict=VerdictLabel.SUPPORTED,
               text_refs=(), image_refs=(), source="mocheg", factcheck_date=None):
    return ClaimRecord(
        claim_id=claim_id,
        text=text,
        gold_verdict=verdict,
        gold_text_evidence=tuple(text_refs),
        gold_image_evidence=tuple(image_refs),
        source=source,
        factcheck_date=factcheck_date,
    )


def script(transcript: Transcript, msg, params, response, latency_ms=0.0) -> str:
    """Register a response for the exact rendered message; returns its digest."""
    digest = request_digest(canonical_request(msg, params))
    transcript.add(TranscriptEntry(digest, response, latency_ms))
    return digest


def classify_request(request) -> str:
    """Which role produced a canonical request, judged by its instruction text."""
    text = agents.request_text(request)
    if agents.NECESSITY_LABEL_ANSWER_CONTRACT in text:
        return "necessity"
    has_analysis = "Respond only with your analysis." in text
    has_verdict = "determine the correct verdict" in text
    if has_analysis and has_verdict:
        return "unified"
    if has_analysis:
        return "analyzer"
    if has_verdict:
        return "verifier"
    return "other"
