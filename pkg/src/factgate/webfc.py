"""Temporally-realistic web evidence construction.

For each seed claim: search the web for the top 10 documents and the top 1
image, fetch and parse them, enforce a strict publication-date cutoff
(evidence must be published before the claim's fact-check date), summarize
the surviving documents, and emit everything in the canonical corpus
schema.

Design choices that the emitted dataset depends on:

* undated documents are excluded — a missing date cannot certify the
  temporal guarantee;
* the cutoff comparison is strict (<) at date granularity, since same-day
  ordering is unknowable from date metadata;
* publication dates are taken from, in order: search-engine metadata, HTML
  meta tags (article:published_time, datePublished), then visible dateline
  heuristics — first hit wins;
* a claim is rejected when more than eight of its ten document URLs fail
  to fetch or parse.

The date restriction is applied both through the search backend's
date-restrict parameter and post-hoc; the build report counts what each
stage dropped.
"""

from __future__ import annotations

import base64
import html.parser
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

from . import agents
from .corpus import (
    ClaimRecord,
    EvidenceItem,
    KnowledgeSource,
    Modality,
    parse_iso_date,
    save_dataset,
)
from .errors import DataError, FactGateError, MissingFile, SearchBackendError

logger = logging.getLogger(__name__)

MAX_DOC_HITS = 10
MAX_FAILED_URLS = 8  # reject a claim when failures exceed this


@dataclass
class WebHit:
    """One search result after fetching and parsing."""

    url: str
    fetched_html: str | None = None
    extracted_text: str | None = None
    publish_date: date | None = None
    parse_status: str = "ok"  # ok | fetch_failed | parse_failed | undated
    local_path: str | None = None  # downloaded image file, when applicable


@dataclass
class SearchBundle:
    """Everything gathered for one claim before emission."""

    claim_id: str
    doc_hits: list = field(default_factory=list)  # up to MAX_DOC_HITS WebHits
    image_hit: WebHit | None = None
    cutoff_date: date | None = None


class AdmitDecision:
    ADMIT = "admit"
    REJECT = "reject"


@dataclass
class TemporalFilterStats:
    undated_dropped: int = 0
    post_cutoff_dropped: int = 0


# -- search backends -----------------------------------------------------------


class ScriptedSearchBackend:
    """Fixture-backed search: maps a query string to canned results."""

    def __init__(self, fixtures: Mapping[str, Mapping]):
        self._fixtures = dict(fixtures)

    @classmethod
    def from_file(cls, path) -> "ScriptedSearchBackend":
        path = Path(path)
        if not path.exists():
            raise MissingFile(path)
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def search(self, query: str, num: int, date_restrict: date | None = None) -> dict:
        entry = self._fixtures.get(query)
        if entry is None:
            raise SearchBackendError(f"no scripted search results for query {query!r}")
        return {
            "docs": list(entry.get("docs", []))[:num],
            "image": entry.get("image"),
        }


class HTTPSearchBackend:
    """JSON search endpoint: GET {q, num, date_restrict} -> {docs, image}."""

    def __init__(self, base_url: str, timeout: float = 30.0, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._session = session or requests.Session()

    def search(self, query: str, num: int, date_restrict: date | None = None) -> dict:
        params: dict = {"q": query, "num": num}
        if date_restrict is not None:
            params["date_restrict"] = date_restrict.isoformat()
        resp = self._session.get(self.base_url, params=params, timeout=self.timeout)
        if resp.status_code == 429:
            from .errors import QuotaExceeded

            raise QuotaExceeded("search backend quota exhausted")
        if resp.status_code != 200:
            raise SearchBackendError(f"search backend returned HTTP {resp.status_code}")
        return resp.json()


# -- fetchers ------------------------------------------------------------------


@dataclass
class FetchResult:
    ok: bool
    body: bytes = b""
    error: str = ""

    def text(self) -> str:
        return self.body.decode("utf-8", errors="replace")


class ScriptedFetcher:
    """Fixture-backed fetcher: url -> {"status": "ok", "html"|"image_b64": ...}."""

    def __init__(self, fixtures: Mapping[str, Mapping]):
        self._fixtures = dict(fixtures)

    @classmethod
    def from_file(cls, path) -> "ScriptedFetcher":
        path = Path(path)
        if not path.exists():
            raise MissingFile(path)
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def fetch(self, url: str) -> FetchResult:
        entry = self._fixtures.get(url)
        if entry is None or str(entry.get("status", "failed")) != "ok":
            return FetchResult(ok=False, error="scripted fetch failure")
        if "image_b64" in entry:
            return FetchResult(ok=True, body=base64.b64decode(entry["image_b64"]))
        return FetchResult(ok=True, body=str(entry.get("html", "")).encode("utf-8"))


class HTTPFetcher:
    """Polite fetcher: bounded concurrent requests per host plus a delay."""

    def __init__(self, per_host: int = 2, delay_s: float = 0.5, timeout: float = 30.0, session=None):
        import requests

        self.timeout = timeout
        self.delay_s = delay_s
        self._session = session or requests.Session()
        self._host_locks: dict[str, threading.Semaphore] = {}
        self._lock = threading.Lock()
        self._per_host = per_host

    def _semaphore(self, host: str) -> threading.Semaphore:
        with self._lock:
            if host not in self._host_locks:
                self._host_locks[host] = threading.Semaphore(self._per_host)
            return self._host_locks[host]

    def fetch(self, url: str) -> FetchResult:
        from urllib.parse import urlparse

        host = urlparse(url).netloc
        with self._semaphore(host):
            try:
                resp = self._session.get(url, timeout=self.timeout)
            except Exception as exc:
                return FetchResult(ok=False, error=str(exc))
            finally:
                if self.delay_s:
                    time.sleep(self.delay_s)
        if resp.status_code != 200:
            return FetchResult(ok=False, error=f"HTTP {resp.status_code}")
        return FetchResult(ok=True, body=resp.content)


# -- HTML extraction -----------------------------------------------------------

_SKIP_TAGS = {"script", "style", "nav", "header", "footer", "aside", "noscript", "template", "form"}
_BLOCK_TAGS = {"p", "h1", "h2", "h3", "li"}


class _MainTextParser(html.parser.HTMLParser):
    """Readability-style main-content heuristic: prefer <article>, drop boilerplate."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self._skip_depth = 0
        self._article_depth = 0
        self._block_depth = 0
        self._current: list[str] = []
        self.blocks: list[str] = []
        self.article_blocks: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip_depth += 1
        elif tag == "article":
            self._article_depth += 1
        elif tag in _BLOCK_TAGS:
            self._block_depth += 1
            self._current = []

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS:
            self._skip_depth = max(0, self._skip_depth - 1)
        elif tag == "article":
            self._article_depth = max(0, self._article_depth - 1)
        elif tag in _BLOCK_TAGS and self._block_depth:
            self._block_depth -= 1
            text = re.sub(r"\s+", " ", " ".join(self._current)).strip()
            if text:
                self.blocks.append(text)
                if self._article_depth:
                    self.article_blocks.append(text)
            self._current = []

    def handle_data(self, data):
        if self._skip_depth == 0 and self._block_depth > 0:
            self._current.append(data)


def extract_main_text(html_text: str) -> str:
    """Best-effort article text: block elements inside <article> when one
    exists, otherwise all non-boilerplate blocks."""
    parser = _MainTextParser()
    try:
        parser.feed(html_text)
        parser.close()
    except Exception:
        return ""
    blocks = parser.article_blocks or parser.blocks
    return "\n".join(blocks).strip()


_META_DATE_PATTERNS = (
    re.compile(
        r'<meta[^>]+property=["\']article:published_time["\'][^>]+content=["\']([^"\']+)',
        re.IGNORECASE,
    ),
    re.compile(
        r'<meta[^>]+content=["\']([^"\']+)["\'][^>]+property=["\']article:published_time["\']',
        re.IGNORECASE,
    ),
    re.compile(r'<meta[^>]+itemprop=["\']datePublished["\'][^>]+content=["\']([^"\']+)', re.IGNORECASE),
    re.compile(r'"datePublished"\s*:\s*"([^"]+)"'),
)

_ISO_IN_TEXT = re.compile(r"\b(\d{4}-\d{2}-\d{2})\b")
_MONTHS = (
    "January February March April May June July August "
    "September October November December".split()
)
_MONTH_DATELINE = re.compile(
    r"\b(" + "|".join(_MONTHS) + r")\s+(\d{1,2}),\s*(\d{4})\b"
)


def extract_publish_date(engine_date, html_text: str | None) -> date | None:
    """Publication date by decreasing structure: engine metadata, meta tags,
    visible dateline."""
    parsed = parse_iso_date(engine_date) if engine_date else None
    if parsed is not None:
        return parsed
    if not html_text:
        return None
    for pattern in _META_DATE_PATTERNS:
        match = pattern.search(html_text)
        if match:
            parsed = parse_iso_date(match.group(1))
            if parsed is not None:
                return parsed
    head = html_text[:5000]
    match = _ISO_IN_TEXT.search(head)
    if match:
        parsed = parse_iso_date(match.group(1))
        if parsed is not None:
            return parsed
    match = _MONTH_DATELINE.search(head)
    if match:
        month = _MONTHS.index(match.group(1)) + 1
        try:
            return date(int(match.group(3)), month, int(match.group(2)))
        except ValueError:
            return None
    return None


# -- build steps ---------------------------------------------------------------


def search_claim(claim: ClaimRecord, search_backend) -> SearchBundle:
    """Query the search backend for up to 10 documents and 1 image."""
    if claim.factcheck_date is None:
        raise DataError(f"claim {claim.claim_id!r} lacks a factcheck_date")
    results = search_backend.search(claim.text, MAX_DOC_HITS, date_restrict=claim.factcheck_date)
    doc_hits = [
        WebHit(url=str(d["url"]), publish_date=parse_iso_date(d.get("date")))
        for d in results.get("docs", [])[:MAX_DOC_HITS]
    ]
    image_hit = None
    image = results.get("image")
    if image:
        image_hit = WebHit(url=str(image["url"]), publish_date=parse_iso_date(image.get("date")))
    return SearchBundle(
        claim_id=claim.claim_id,
        doc_hits=doc_hits,
        image_hit=image_hit,
        cutoff_date=claim.factcheck_date,
    )


def process_doc_hit(hit: WebHit, fetcher) -> WebHit:
    """Fetch and parse one document hit, settling its parse_status."""
    result = fetcher.fetch(hit.url)
    if not result.ok:
        hit.parse_status = "fetch_failed"
        return hit
    hit.fetched_html = result.text()
    text = extract_main_text(hit.fetched_html)
    if not text:
        hit.parse_status = "parse_failed"
        return hit
    if hit.publish_date is None:
        hit.publish_date = extract_publish_date(None, hit.fetched_html)
    if hit.publish_date is None:
        hit.parse_status = "undated"
        return hit
    hit.extracted_text = text
    hit.parse_status = "ok"
    return hit


def apply_temporal_filter(hits: Sequence[WebHit], cutoff_date: date):
    """Keep hits published strictly before the cutoff; drop and count the rest."""
    if cutoff_date is None:
        raise DataError("temporal filter requires a cutoff date")
    stats = TemporalFilterStats()
    retained: list[WebHit] = []
    for hit in hits:
        if hit.publish_date is None:
            stats.undated_dropped += 1
            continue
        if hit.publish_date < cutoff_date:
            retained.append(hit)
        else:
            stats.post_cutoff_dropped += 1
    return retained, stats


def admit_claim(bundle: SearchBundle) -> str:
    """Reject a claim when more than eight of its ten URLs failed."""
    failed = sum(1 for h in bundle.doc_hits if h.parse_status in ("fetch_failed", "parse_failed"))
    return AdmitDecision.REJECT if failed > MAX_FAILED_URLS else AdmitDecision.ADMIT


def summarize_documents(hits: Sequence[WebHit], summarizer, recorder=None):
    """One summary per retained document; empty extractions are skipped."""
    summaries: list[tuple[WebHit, str]] = []
    skipped_empty = 0
    failed = 0
    for hit in hits:
        if not hit.extracted_text or not hit.extracted_text.strip():
            skipped_empty += 1
            continue
        try:
            msg = agents.render_summarizer_prompt(hit.extracted_text)
            result = agents.chat_complete(summarizer.backend, msg, summarizer.params, recorder)
            summaries.append((hit, result.text))
        except FactGateError as exc:
            failed += 1
            logger.warning("summarization failed for %s: %s", hit.url, exc)
    return summaries, {"empty_extraction_skipped": skipped_empty, "summary_failures": failed}


@dataclass
class ClaimBuildResult:
    claim: ClaimRecord
    bundle: SearchBundle
    summaries: list  # (WebHit, summary) pairs
    image: WebHit | None


def emit_webfc(results: Sequence[ClaimBuildResult], out_dir) -> None:
    """Write the built claims and evidence in the canonical corpus schema.

    Summaries become Text evidence items carrying provenance and publication
    dates; the image hit becomes an Image item.  The claims' gold evidence
    lists point at their own web-derived items, so both gold-style and
    retrieval-style runs work downstream.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    claims: list[ClaimRecord] = []
    items: list[EvidenceItem] = []
    for result in results:
        text_ids: list[str] = []
        for i, (hit, summary) in enumerate(result.summaries):
            evidence_id = f"{result.claim.claim_id}-web{i}"
            text_ids.append(evidence_id)
            items.append(
                EvidenceItem(
                    evidence_id=evidence_id,
                    modality=Modality.TEXT,
                    text=summary,
                    provenance_url=hit.url,
                    publish_date=hit.publish_date,
                )
            )
        image_ids: list[str] = []
        if result.image is not None:
            evidence_id = f"{result.claim.claim_id}-img"
            image_ids.append(evidence_id)
            items.append(
                EvidenceItem(
                    evidence_id=evidence_id,
                    modality=Modality.IMAGE,
                    image_path=result.image.local_path or f"images/{evidence_id}",
                    provenance_url=result.image.url,
                    publish_date=result.image.publish_date,
                )
            )
        claims.append(
            ClaimRecord(
                claim_id=result.claim.claim_id,
                text=result.claim.text,
                gold_verdict=result.claim.gold_verdict,
                gold_text_evidence=tuple(text_ids),
                gold_image_evidence=tuple(image_ids),
                source="webfc",
                factcheck_date=result.claim.factcheck_date,
            )
        )
    save_dataset(claims, KnowledgeSource(items), out_dir)


def build_webfc(
    seed_claims: Sequence[ClaimRecord],
    search_backend,
    fetcher,
    summarizer,
    out_dir,
    recorder=None,
) -> dict:
    """End-to-end dataset construction; returns the build report."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images_dir = out_dir / "images"

    report = {
        "admitted": 0,
        "rejected": 0,
        "undated_dropped": 0,
        "post_cutoff_dropped": 0,
        "failed_fetches": 0,
        "empty_extraction_skipped": 0,
        "summary_failures": 0,
        "rejected_reasons": {},
        "engine_date_restricted": True,
    }
    results: list[ClaimBuildResult] = []

    def reject(claim_id: str, reason: str) -> None:
        report["rejected"] += 1
        report["rejected_reasons"][claim_id] = reason

    for claim in seed_claims:
        try:
            bundle = search_claim(claim, search_backend)
        except FactGateError as exc:
            reject(claim.claim_id, str(exc))
            continue
        for hit in bundle.doc_hits:
            process_doc_hit(hit, fetcher)
        report["failed_fetches"] += sum(
            1 for h in bundle.doc_hits if h.parse_status == "fetch_failed"
        )
        if admit_claim(bundle) == AdmitDecision.REJECT:
            reject(claim.claim_id, "more than eight of ten URLs failed")
            continue

        retained, stats = apply_temporal_filter(
            [h for h in bundle.doc_hits if h.parse_status == "ok"], bundle.cutoff_date
        )
        # ok-status hits all carry dates; undated ones were already flagged
        report["undated_dropped"] += stats.undated_dropped + sum(
            1 for h in bundle.doc_hits if h.parse_status == "undated"
        )
        report["post_cutoff_dropped"] += stats.post_cutoff_dropped

        image = None
        if bundle.image_hit is not None:
            image_kept, image_stats = apply_temporal_filter([bundle.image_hit], bundle.cutoff_date)
            report["undated_dropped"] += image_stats.undated_dropped
            report["post_cutoff_dropped"] += image_stats.post_cutoff_dropped
            if image_kept:
                image = image_kept[0]
                fetch = fetcher.fetch(image.url)
                if fetch.ok:
                    images_dir.mkdir(parents=True, exist_ok=True)
                    local = images_dir / f"{claim.claim_id}-img"
                    local.write_bytes(fetch.body)
                    image.local_path = str(local.relative_to(out_dir))
                else:
                    report["failed_fetches"] += 1
                    image = None

        summaries, counters = summarize_documents(retained, summarizer, recorder)
        report["empty_extraction_skipped"] += counters["empty_extraction_skipped"]
        report["summary_failures"] += counters["summary_failures"]

        report["admitted"] += 1
        results.append(ClaimBuildResult(claim=claim, bundle=bundle, summaries=summaries, image=image))

    if results:
        emit_webfc(results, out_dir)
    with open(out_dir / "build_report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")
    return report
