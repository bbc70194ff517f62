"""Prompt rendering, chat-completion backends, and response parsing.

Every prompt used by the verification agents is rendered here as a
``ChatMessage`` of ordered text/image parts.  Renderers are pure: the same
inputs always produce byte-identical messages, which is what makes
record/replay testing of whole pipeline runs possible.

The wire contract is an HTTP JSON chat-completions endpoint with mixed
text and base64-image content parts.  A scripted backend speaks the same
contract from a recorded transcript keyed by request digest, so a full run
becomes a pure function of (dataset, config, transcript).
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .corpus import NecessityLabel, VerdictLabel
from .errors import (
    BackendHTTPError,
    BackendTimeout,
    EmptyDocument,
    MissingFile,
    MissingImage,
    TranscriptMiss,
    UnparseableNecessity,
    UnparseableVerdict,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_TOKENS = 1024
TRANSPORT_RETRIES = 3


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    path: str


@dataclass(frozen=True)
class ChatMessage:
    role: str  # "system" | "user"
    parts: tuple  # ordered TextPart / ImagePart

    def text(self) -> str:
        """Concatenation of the text parts (image parts contribute nothing)."""
        return "".join(p.text for p in self.parts if isinstance(p, TextPart))

    def has_image(self) -> bool:
        return any(isinstance(p, ImagePart) for p in self.parts)


@dataclass(frozen=True)
class DecodingParams:
    """Decoding settings for one agent role.

    Self-hosted models run greedy; API models run sampled at temperature 0.0
    (with an optional thinking budget where the provider supports one).
    Temperature is ignored under greedy decoding and excluded from request
    digests accordingly.
    """

    mode: str = "greedy"  # "greedy" | "sampled"
    temperature: float = 0.0
    max_tokens: int = DEFAULT_MAX_TOKENS
    thinking_budget: int | None = None


GREEDY = DecodingParams(mode="greedy")
API_DETERMINISTIC = DecodingParams(mode="sampled", temperature=0.0)


@dataclass(frozen=True)
class Assessment:
    """The Analyzer's judgment of visual-evidence necessity."""

    text: str
    necessity: NecessityLabel | None = None


# -- prompt templates --------------------------------------------------------

ANALYZER_INSTRUCTIONS = (
    "Your task is to determine whether the provided image evidence is necessary "
    "for verifying the given claim or clarifying the accompanying text evidence. "
    "Follow these steps:\n"
    "1. Analyze the claim and the text evidence to understand the context.\n"
    "2. Assess whether the image provides important information that is not "
    "already conveyed by the text.\n"
    "3. Decide whether the image is necessary for verification and justify your "
    "reasoning.\n"
    "Respond only with your analysis.\n"
)

VERIFIER_INSTRUCTIONS = (
    "Given a claim, your task is to determine the correct verdict based on the "
    "provided image evidence and text evidence. Provide a justification for your "
    "answer, then choose one of the following verdicts: 'Supported', 'Refuted', "
    "or 'NEI' (Not Enough Information).\n"
)

NECESSITY_LABEL_INSTRUCTIONS = (
    "Your task is to determine if the provided image evidence is essential to "
    "verify the given claim or clarify the provided text evidence. To do this, "
    "follow these steps:\n"
    "1. Analyze the claim and the text evidence to understand the context.\n"
    "2. Assess whether the image evidence provides critical information not "
    "conveyed by the text alone.\n"
    "3. Decide if the image evidence is necessary for verification or "
    "clarification.\n"
)

NECESSITY_LABEL_ANSWER_CONTRACT = (
    "Respond only with 'Yes' if the image evidence is necessary or 'No' if it is not."
)

SUMMARIZER_INSTRUCTIONS = (
    "Your task is to read the following document carefully and summarize it into "
    "a single, coherent paragraph. Focus on capturing the main ideas and "
    "essential details without adding new information or personal opinions.\n"
)

REFINEMENT_INSTRUCTIONS = (
    "You are a fact-checking assistant. Your task is to determine whether the "
    "given claim is complete in intention and clearly stated. If the claim is "
    "vague or incomplete (e.g., a keyword like \"Google PhoneBook\"), refine it "
    "into a clear and complete sentence using the provided evidence, "
    "justification, and label. If the claim is already clear and complete, "
    "return \"not needed\".\n"
)

REFINEMENT_ANSWER_CONTRACT = 'Return ONLY the refined claim or "not needed".'

NOT_NEEDED = "not needed"


def _image_part(image_path) -> ImagePart:
    if not image_path:
        raise MissingImage("prompt requires an image but none was provided")
    path = Path(image_path)
    if not path.is_file():
        raise MissingImage(f"image file not readable: {image_path}")
    return ImagePart(str(image_path))


def render_analyzer_prompt(claim: str, image_path, text_evidence: str) -> ChatMessage:
    """Necessity-assessment prompt; the image slot holds an attached image part."""
    part = _image_part(image_path)
    head = TextPart(f"{ANALYZER_INSTRUCTIONS}\nClaim: {claim}\nImage Evidence: ")
    tail = TextPart(f"\nText Evidence: {text_evidence}")
    return ChatMessage(role="user", parts=(head, part, tail))


def render_verifier_prompt(
    claim: str,
    image_path=None,
    analysis: Assessment | None = None,
    text_evidence: str = "",
) -> ChatMessage:
    """Verdict prompt; Image Evidence / Image Analysis lines appear only when provided."""
    analysis_line = f"\nImage Analysis: {analysis.text}" if analysis is not None else ""
    if image_path is not None:
        part = _image_part(image_path)
        head = TextPart(f"{VERIFIER_INSTRUCTIONS}Claim: {claim}\nImage Evidence: ")
        tail = TextPart(f"{analysis_line}\nText Evidence: {text_evidence}")
        return ChatMessage(role="user", parts=(head, part, tail))
    body = f"{VERIFIER_INSTRUCTIONS}Claim: {claim}{analysis_line}\nText Evidence: {text_evidence}"
    return ChatMessage(role="user", parts=(TextPart(body),))


def render_necessity_label_prompt(claim: str, image_path, text_evidence: str) -> ChatMessage:
    """Binary Yes/No necessity prompt; ends with the Yes/No answer contract."""
    part = _image_part(image_path)
    head = TextPart(f"{NECESSITY_LABEL_INSTRUCTIONS}\nClaim: {claim}\nImage Evidence: ")
    tail = TextPart(f"\nText Evidence: {text_evidence}\n\n{NECESSITY_LABEL_ANSWER_CONTRACT}")
    return ChatMessage(role="user", parts=(head, part, tail))


def render_unified_prompt(claim: str, image_path, text_evidence: str) -> ChatMessage:
    """Single-call prompt concatenating the analysis and verdict instructions.

    The model is expected to produce a natural-language analysis followed by
    the verdict, so verdict parsing uses the last-occurrence rule.
    """
    part = _image_part(image_path)
    head = TextPart(
        f"{ANALYZER_INSTRUCTIONS}\n{VERIFIER_INSTRUCTIONS}Claim: {claim}\nImage Evidence: "
    )
    tail = TextPart(f"\nText Evidence: {text_evidence}")
    return ChatMessage(role="user", parts=(head, part, tail))


def render_summarizer_prompt(document: str) -> ChatMessage:
    if not document or not document.strip():
        raise EmptyDocument("cannot summarize an empty document")
    return ChatMessage(role="user", parts=(TextPart(f"{SUMMARIZER_INSTRUCTIONS}Document:\n{document}"),))


def render_refinement_prompt(claim: str, evidence: str, justification: str, label: str) -> ChatMessage:
    body = (
        f"{REFINEMENT_INSTRUCTIONS}\n"
        f"Claim: {claim}\n"
        f"Evidence: {evidence}\n"
        f"Justification: {justification}\n"
        f"Label: {label}\n"
        f"\n{REFINEMENT_ANSWER_CONTRACT}"
    )
    return ChatMessage(role="user", parts=(TextPart(body),))


def apply_refinement(original_claim: str, response: str) -> str:
    """Resolve a refinement response: 'not needed' keeps the original claim."""
    cleaned = response.strip().strip('"').strip("'").strip()
    if cleaned.lower() == NOT_NEEDED:
        return original_claim
    return response.strip()


# -- canonical requests and digests -------------------------------------------


def _file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_request(msg: ChatMessage, params: DecodingParams) -> dict:
    """Backend-independent form of a request; the unit of record/replay.

    Image parts are represented by content hash, so digests are stable
    across machines and directory layouts.  The model id is deliberately
    not part of the digest: a transcript names its backend in the run
    manifest instead.
    """
    parts = []
    for part in msg.parts:
        if isinstance(part, TextPart):
            parts.append({"text": part.text})
        else:
            parts.append(
                {"image_sha256": _file_sha256(part.path), "image_name": Path(part.path).name}
            )
    params_obj: dict = {"mode": params.mode, "max_tokens": params.max_tokens}
    if params.mode != "greedy":
        params_obj["temperature"] = params.temperature
    if params.thinking_budget is not None:
        params_obj["thinking_budget"] = params.thinking_budget
    return {"role": msg.role, "parts": parts, "params": params_obj}


def request_digest(request: dict) -> str:
    canon = json.dumps(request, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def request_has_image(request: dict) -> bool:
    return any("image_sha256" in p for p in request.get("parts", []))


def request_text(request: dict) -> str:
    return "".join(p.get("text", "") for p in request.get("parts", []))


# -- transcripts ---------------------------------------------------------------


@dataclass(frozen=True)
class TranscriptEntry:
    digest: str
    response: str
    latency_ms: float = 0.0


class Transcript:
    """Recorded request-digest -> response store; replay reproduces responses exactly."""

    def __init__(self, entries: Sequence[TranscriptEntry] = ()):
        self.entries = list(entries)
        self._by_digest = {e.digest: e for e in self.entries}

    def add(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)
        self._by_digest[entry.digest] = entry

    def get(self, digest: str) -> TranscriptEntry | None:
        return self._by_digest.get(digest)

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def load(cls, path) -> "Transcript":
        path = Path(path)
        if not path.exists():
            raise MissingFile(path)
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                entries.append(
                    TranscriptEntry(
                        digest=obj["digest"],
                        response=obj["response"],
                        latency_ms=float(obj.get("latency_ms", 0.0)),
                    )
                )
        return cls(entries)

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(
                    json.dumps(
                        {"digest": e.digest, "response": e.response, "latency_ms": e.latency_ms},
                        ensure_ascii=False,
                    )
                    + "\n"
                )


class TranscriptRecorder:
    """Thread-safe capture of every request/response pair in a run.

    Keeps canonical requests in memory (tests assert routing contracts on
    them) and can persist the digest->response transcript for later replay.
    Repeated digests with diverging responses are logged as nondeterminism
    warnings, never raised.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.requests: list[dict] = []
        self.transcript = Transcript()
        self._seen: dict[str, str] = {}

    def record(self, request: dict, response: str, latency_ms: float) -> str:
        digest = request_digest(request)
        with self._lock:
            self.requests.append(request)
            prior = self._seen.get(digest)
            if prior is not None and prior != response:
                logger.warning(
                    "nondeterministic backend: digest %s produced diverging responses", digest[:12]
                )
            self._seen[digest] = response
            self.transcript.add(TranscriptEntry(digest, response, latency_ms))
        return digest

    def save(self, path) -> None:
        with self._lock:
            self.transcript.save(path)


# -- backends ------------------------------------------------------------------


@dataclass(frozen=True)
class BackendResult:
    text: str
    latency_ms: float


class ScriptedChatBackend:
    """Replays a transcript; unknown request digests raise TranscriptMiss."""

    def __init__(self, transcript: Transcript, tag: str = "scripted"):
        self.transcript = transcript
        self.tag = tag

    @classmethod
    def from_file(cls, path, tag: str = "scripted") -> "ScriptedChatBackend":
        return cls(Transcript.load(path), tag=tag)

    def complete(self, request: dict) -> BackendResult:
        digest = request_digest(request)
        entry = self.transcript.get(digest)
        if entry is None:
            raise TranscriptMiss(digest)
        return BackendResult(entry.response, entry.latency_ms)


class CallableChatBackend:
    """Adapter over a plain function, for building fixtures and transcripts."""

    def __init__(self, fn: Callable[[dict], str], tag: str = "callable", latency_ms: float = 0.0):
        self._fn = fn
        self.tag = tag
        self.latency_ms = latency_ms

    def complete(self, request: dict) -> BackendResult:
        return BackendResult(self._fn(request), self.latency_ms)


class HTTPChatBackend:
    """OpenAI-style chat completions over HTTP with multimodal content parts.

    Transport errors are retried up to three times with exponential
    backoff; HTTP error statuses and parse problems are never retried so
    failures stay attributable.
    """

    def __init__(
        self,
        base_url: str,
        model_id: str,
        tag: str,
        auth_env_var: str | None = None,
        timeout: float = 60.0,
        session=None,
    ):
        import requests

        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.tag = tag
        self.auth_env_var = auth_env_var
        self.timeout = timeout
        self._session = session or requests.Session()

    def complete_message(self, msg: ChatMessage, params: DecodingParams) -> BackendResult:
        import base64

        import requests

        content: list[dict] = []
        for part in msg.parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                with open(part.path, "rb") as fh:
                    b64 = base64.b64encode(fh.read()).decode("ascii")
                suffix = Path(part.path).suffix.lstrip(".").lower() or "jpeg"
                content.append(
                    {"type": "image_url", "image_url": {"url": f"data:image/{suffix};base64,{b64}"}}
                )
        payload: dict = {
            "model": self.model_id,
            "messages": [{"role": msg.role, "content": content}],
            "max_tokens": params.max_tokens,
        }
        if params.mode == "greedy":
            payload["temperature"] = 0.0
        else:
            payload["temperature"] = params.temperature
        if params.thinking_budget is not None:
            payload["thinking_budget"] = params.thinking_budget
        headers = {}
        if self.auth_env_var:
            key = os.environ.get(self.auth_env_var, "")
            headers["Authorization"] = f"Bearer {key}"

        last_exc: Exception | None = None
        for attempt in range(TRANSPORT_RETRIES):
            start = time.perf_counter()
            try:
                resp = self._session.post(
                    f"{self.base_url}/chat/completions",
                    json=payload,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.Timeout as exc:
                last_exc = exc
                time.sleep(0.5 * 2**attempt)
                continue
            except requests.RequestException as exc:
                last_exc = exc
                time.sleep(0.5 * 2**attempt)
                continue
            latency_ms = (time.perf_counter() - start) * 1000.0
            if resp.status_code != 200:
                raise BackendHTTPError(resp.status_code, resp.text[:200])
            body = resp.json()
            try:
                text = body["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise BackendHTTPError(200, f"malformed completion body: {exc}") from exc
            return BackendResult(text, latency_ms)
        raise BackendTimeout(f"backend unreachable after {TRANSPORT_RETRIES} attempts: {last_exc}")

    def complete(self, request: dict) -> BackendResult:  # pragma: no cover - guarded path
        raise BackendHTTPError(0, "HTTP backend must be called with complete_message")


@dataclass(frozen=True)
class ChatResult:
    text: str
    latency_ms: float
    digest: str


def chat_complete(
    backend,
    msg: ChatMessage,
    params: DecodingParams,
    recorder: TranscriptRecorder | None = None,
) -> ChatResult:
    """Send one message to a backend and capture the exchange.

    Scripted/callable backends consume the canonical request; the HTTP
    backend needs the original message for image bytes.  Either way the
    exchange is appended to the recorder (when given) so a later scripted
    replay reproduces every downstream artifact.
    """
    request = canonical_request(msg, params)
    if isinstance(backend, HTTPChatBackend):
        start = time.perf_counter()
        result = backend.complete_message(msg, params)
        latency_ms = result.latency_ms or (time.perf_counter() - start) * 1000.0
    else:
        result = backend.complete(request)
        latency_ms = result.latency_ms
    digest = request_digest(request)
    if recorder is not None:
        recorder.record(request, result.text, latency_ms)
    return ChatResult(result.text, latency_ms, digest)


# -- response parsing ----------------------------------------------------------

_VERDICT_TOKENS = (
    (re.compile(r"\bsupported\b", re.IGNORECASE), VerdictLabel.SUPPORTED),
    (re.compile(r"\brefuted\b", re.IGNORECASE), VerdictLabel.REFUTED),
    (re.compile(r"\bnot\s+enough\s+information\b", re.IGNORECASE), VerdictLabel.NEI),
    (re.compile(r"\bnei\b", re.IGNORECASE), VerdictLabel.NEI),
)

_LEADING_WORD = re.compile(r"[A-Za-z]+")


def parse_verdict(raw: str) -> VerdictLabel:
    """Extract the verdict label from a model response.

    Models justify first and conclude with the verdict, so when several
    distinct labels occur the last occurrence wins.
    """
    if not raw or not raw.strip():
        raise UnparseableVerdict("empty response")
    best_pos = -1
    best_label: VerdictLabel | None = None
    for pattern, label in _VERDICT_TOKENS:
        for match in pattern.finditer(raw):
            if match.end() > best_pos:
                best_pos = match.end()
                best_label = label
    if best_label is None:
        raise UnparseableVerdict(f"no verdict token in response: {raw[:80]!r}")
    return best_label


def parse_necessity(raw: str) -> NecessityLabel:
    """Leading-token Yes/No match, case-insensitive and punctuation-tolerant."""
    if not raw or not raw.strip():
        raise UnparseableNecessity("empty response")
    match = _LEADING_WORD.search(raw)
    if match is None:
        raise UnparseableNecessity(f"no leading token in response: {raw[:40]!r}")
    token = match.group(0).lower()
    if token == "yes":
        return NecessityLabel.NECESSARY
    if token == "no":
        return NecessityLabel.UNNECESSARY
    raise UnparseableNecessity(f"leading token {token!r} is not yes/no")
