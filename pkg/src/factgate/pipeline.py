"""Orchestration: evidence assembly and the verification strategy lattice.

A run pairs an evidence configuration (which text/image evidence the
verifier sees, and whether it was gold or retrieved) with a strategy (how
the necessity Analyzer and the Verifier collaborate), producing one
prediction per claim.

Routing contract per strategy:

* ``adaptive``            image present -> Analyzer writes a natural-language
                          assessment -> Verifier gets image + Image Analysis
                          line; no image -> text-only Verifier, no Analyzer call.
* ``label_only``          necessity prompt; the bare Yes/No goes into the
                          Image Analysis slot; the image is always passed.
* ``prefilter_analyzer``  necessity prompt; an image judged unnecessary is
                          removed from the Verifier input; no analysis text.
* ``prefilter_threshold`` claim-image cosine against tau decides inclusion;
                          no Analyzer call.
* ``no_analyzer`` / ``verifier_only`` / ``verifier_cot``
                          Verifier sees the bundle as-is, no analysis line.
* ``unified_verifier``    one call with concatenated instructions; the
                          response is parsed analysis-then-verdict.

Claims are processed independently with bounded parallelism; prediction
records are written by a single writer in claim-id order, so output files
are identical at any parallelism level.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from . import agents
from .agents import Assessment, ChatResult, DecodingParams, TranscriptRecorder, chat_complete
from .corpus import (
    ClaimRecord,
    KnowledgeSource,
    Modality,
    NecessityLabel,
    VerdictLabel,
    dataset_digest,
)
from .errors import (
    ConfigError,
    DanglingEvidenceRef,
    EmbeddingFailure,
    FactGateError,
    MissingIndex,
    UnparseableNecessity,
    UnparseableVerdict,
)
from .vector_index import GateDecision, VectorIndex, cosine_similarity, top_k

logger = logging.getLogger(__name__)

DEFAULT_TAU = 0.42
DEFAULT_PARALLELISM = 4


class ConfigMode(Enum):
    TEXT_ONLY = "text_only"
    TEXT_PLUS_GOLD_IMAGE = "gold_image"
    TEXT_PLUS_RETRIEVED_IMAGE = "retrieved_image"
    ORACLE_EVAL = "oracle"  # evaluation-time composition; never materialized here


class TextSource(Enum):
    GOLD = "gold"
    RETRIEVED = "retrieved"


@dataclass(frozen=True)
class EvidenceConfig:
    mode: ConfigMode
    text_source: TextSource = TextSource.GOLD
    k_text: int = 1

    @property
    def config_id(self) -> str:
        base = f"{self.mode.value}.{self.text_source.value}_text"
        if self.text_source is TextSource.RETRIEVED and self.k_text != 1:
            base += f".k{self.k_text}"
        return base


class StrategyKind(Enum):
    ADAPTIVE = "adaptive"
    LABEL_ONLY = "label_only"
    PREFILTER_ANALYZER = "prefilter_analyzer"
    PREFILTER_THRESHOLD = "prefilter_threshold"
    NO_ANALYZER = "no_analyzer"
    UNIFIED_VERIFIER = "unified_verifier"
    VERIFIER_COT = "verifier_cot"
    VERIFIER_ONLY = "verifier_only"


# Strategies that consult the Analyzer (assessment present in predictions).
_ANALYZER_STRATEGIES = {
    StrategyKind.ADAPTIVE,
    StrategyKind.LABEL_ONLY,
    StrategyKind.PREFILTER_ANALYZER,
}


@dataclass(frozen=True)
class Strategy:
    kind: StrategyKind
    tau: float = DEFAULT_TAU  # used by prefilter_threshold only

    @property
    def strategy_id(self) -> str:
        if self.kind is StrategyKind.PREFILTER_THRESHOLD:
            return f"{self.kind.value}@{self.tau:g}"
        return self.kind.value

    @property
    def needs_analyzer(self) -> bool:
        return self.kind in _ANALYZER_STRATEGIES


@dataclass
class EvidenceBundle:
    """The claim-specific evidence selection handed to a strategy."""

    claim_id: str
    text_evidence: tuple[str, ...]
    image_path: str | None
    selection_meta: dict = field(default_factory=dict)


@dataclass
class Prediction:
    claim_id: str
    strategy_id: str
    config_id: str
    verdict: VerdictLabel | None
    raw_text: str = ""
    assessment: Assessment | None = None
    parse_status: str = "ok"  # ok | fallback | error
    timing_ms: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class AgentEndpoint:
    backend: object
    params: DecodingParams = field(default_factory=DecodingParams)


@dataclass
class Roles:
    verifier: AgentEndpoint | None = None
    analyzer: AgentEndpoint | None = None
    summarizer: AgentEndpoint | None = None


@dataclass
class RetrievalHandles:
    """Indexes plus the query embedders that project claims into each space."""

    text_index: VectorIndex | None = None
    image_index: VectorIndex | None = None
    text_embedder: object | None = None
    image_embedder: object | None = None


def join_text_evidence(sentences) -> str:
    """Join evidence sentences for the prompt's text-evidence slot.

    A single sentence passes through untouched; several are bulleted.
    """
    sentences = [s for s in sentences if s]
    if not sentences:
        return ""
    if len(sentences) == 1:
        return sentences[0]
    return "• " + "\n• ".join(sentences)


def _embed_query(embedder, text: str):
    if embedder is None:
        raise MissingIndex("query embedder not configured for retrieval")
    try:
        return embedder.embed([text])[0]
    except FactGateError:
        raise
    except Exception as exc:
        raise EmbeddingFailure(f"embedding query failed: {exc}") from exc


def assemble_evidence(
    claim: ClaimRecord,
    config: EvidenceConfig,
    knowledge: KnowledgeSource,
    handles: RetrievalHandles | None = None,
) -> EvidenceBundle:
    """Materialize one evidence configuration for one claim.

    Gold modes resolve the claim's gold references; retrieved modes run
    maximum-cosine-similarity search over the configured index.  With
    several gold images available, the first one is used.
    """
    if config.mode is ConfigMode.ORACLE_EVAL:
        raise ConfigError("the oracle setting is composed at evaluation time, not materialized")
    handles = handles or RetrievalHandles()
    meta: dict = {"config": config.config_id, "text_source": config.text_source.value}

    if config.text_source is TextSource.GOLD:
        sentences = []
        for ref in claim.gold_text_evidence:
            item = knowledge.get(ref)
            if item is None:
                raise DanglingEvidenceRef(claim.claim_id, ref)
            sentences.append(item.text or "")
        meta["text_ids"] = list(claim.gold_text_evidence)
    else:
        if handles.text_index is None:
            raise MissingIndex("retrieved text requested but no text index configured")
        qvec = _embed_query(handles.text_embedder, claim.text)
        hits = top_k(qvec, handles.text_index, config.k_text)
        sentences = [knowledge[h.evidence_id].text or "" for h in hits]
        meta["text_ids"] = [h.evidence_id for h in hits]
        meta["text_scores"] = [h.score for h in hits]

    image_path = None
    if config.mode is ConfigMode.TEXT_PLUS_GOLD_IMAGE:
        if claim.gold_image_evidence:
            first = claim.gold_image_evidence[0]
            item = knowledge.get(first)
            if item is None:
                raise DanglingEvidenceRef(claim.claim_id, first)
            image_path = knowledge.resolve_image_path(item)
            meta["image_id"] = first
            meta["image_source"] = "gold"
        else:
            meta["gold_image_missing"] = True
    elif config.mode is ConfigMode.TEXT_PLUS_RETRIEVED_IMAGE:
        if handles.image_index is None:
            raise MissingIndex("retrieved image requested but no image index configured")
        qvec = _embed_query(handles.image_embedder, claim.text)
        hits = top_k(qvec, handles.image_index, 1)
        hit = hits[0]
        item = knowledge.get(hit.evidence_id)
        if item is None or item.modality is not Modality.IMAGE:
            raise DanglingEvidenceRef(claim.claim_id, hit.evidence_id)
        image_path = knowledge.resolve_image_path(item)
        meta["image_id"] = hit.evidence_id
        meta["image_score"] = hit.score
        meta["image_source"] = "retrieved"

    return EvidenceBundle(
        claim_id=claim.claim_id,
        text_evidence=tuple(sentences),
        image_path=image_path,
        selection_meta=meta,
    )


def _claim_image_similarity(
    claim: ClaimRecord, bundle: EvidenceBundle, handles: RetrievalHandles | None
) -> float:
    """Claim-image cosine for the threshold gate; reuses the retrieval score when present."""
    score = bundle.selection_meta.get("image_score")
    if score is not None:
        return float(score)
    handles = handles or RetrievalHandles()
    image_id = bundle.selection_meta.get("image_id")
    if handles.image_index is None or image_id is None or image_id not in handles.image_index:
        raise MissingIndex("threshold gating needs an image index covering the bundled image")
    qvec = _embed_query(handles.image_embedder, claim.text)
    return cosine_similarity(qvec, handles.image_index.vector_for(image_id))


def _require_role(endpoint: AgentEndpoint | None, role: str) -> AgentEndpoint:
    if endpoint is None or endpoint.backend is None:
        raise ConfigError(f"strategy requires a configured {role} backend")
    return endpoint


def run_strategy(
    claim: ClaimRecord,
    bundle: EvidenceBundle,
    strategy: Strategy,
    roles: Roles,
    handles: RetrievalHandles | None = None,
    recorder: TranscriptRecorder | None = None,
) -> Prediction:
    """Execute one strategy on one assembled evidence bundle."""
    verifier = _require_role(roles.verifier, "verifier")
    joined = join_text_evidence(bundle.text_evidence)
    timing: dict = {}
    assessment: Assessment | None = None
    kind = strategy.kind

    def call(endpoint: AgentEndpoint, msg) -> ChatResult:
        return chat_complete(endpoint.backend, msg, endpoint.params, recorder)

    if bundle.image_path is None:
        # Without an image candidate every strategy degenerates to the
        # text-only verifier request; no necessity question is asked.
        vmsg = agents.render_verifier_prompt(claim.text, None, None, joined)
    elif kind is StrategyKind.ADAPTIVE:
        analyzer = _require_role(roles.analyzer, "analyzer")
        amsg = agents.render_analyzer_prompt(claim.text, bundle.image_path, joined)
        ares = call(analyzer, amsg)
        timing["analyzer"] = ares.latency_ms
        assessment = Assessment(text=ares.text)
        vmsg = agents.render_verifier_prompt(claim.text, bundle.image_path, assessment, joined)
    elif kind is StrategyKind.LABEL_ONLY:
        analyzer = _require_role(roles.analyzer, "analyzer")
        nmsg = agents.render_necessity_label_prompt(claim.text, bundle.image_path, joined)
        nres = call(analyzer, nmsg)
        timing["analyzer"] = nres.latency_ms
        try:
            necessity = agents.parse_necessity(nres.text)
            label_text = "Yes" if necessity is NecessityLabel.NECESSARY else "No"
        except UnparseableNecessity:
            necessity = None
            label_text = nres.text.strip()
        assessment = Assessment(text=label_text, necessity=necessity)
        vmsg = agents.render_verifier_prompt(claim.text, bundle.image_path, assessment, joined)
    elif kind is StrategyKind.PREFILTER_ANALYZER:
        analyzer = _require_role(roles.analyzer, "analyzer")
        nmsg = agents.render_necessity_label_prompt(claim.text, bundle.image_path, joined)
        nres = call(analyzer, nmsg)
        timing["analyzer"] = nres.latency_ms
        try:
            necessity = agents.parse_necessity(nres.text)
        except UnparseableNecessity:
            necessity = None  # unparseable -> fail open, keep the image
        assessment = Assessment(text=nres.text.strip(), necessity=necessity)
        keep = necessity is not NecessityLabel.UNNECESSARY
        image = bundle.image_path if keep else None
        vmsg = agents.render_verifier_prompt(claim.text, image, None, joined)
    elif kind is StrategyKind.PREFILTER_THRESHOLD:
        similarity = _claim_image_similarity(claim, bundle, handles)
        keep = similarity >= strategy.tau  # same boundary as threshold_filter
        image = bundle.image_path if keep else None
        vmsg = agents.render_verifier_prompt(claim.text, image, None, joined)
    elif kind is StrategyKind.UNIFIED_VERIFIER:
        umsg = agents.render_unified_prompt(claim.text, bundle.image_path, joined)
        ures = call(verifier, umsg)
        timing["verifier"] = ures.latency_ms
        assessment = Assessment(text=ures.text)
        return _finish_prediction(claim, strategy, bundle, ures.text, assessment, timing)
    else:  # NO_ANALYZER, VERIFIER_ONLY, VERIFIER_COT: bundle as-is, no analysis line
        vmsg = agents.render_verifier_prompt(claim.text, bundle.image_path, None, joined)

    vres = call(verifier, vmsg)
    timing["verifier"] = vres.latency_ms
    return _finish_prediction(claim, strategy, bundle, vres.text, assessment, timing)


def _finish_prediction(
    claim: ClaimRecord,
    strategy: Strategy,
    bundle: EvidenceBundle,
    raw_text: str,
    assessment: Assessment | None,
    timing: dict,
) -> Prediction:
    try:
        verdict = agents.parse_verdict(raw_text)
        parse_status = "ok"
    except UnparseableVerdict:
        # The abstention label is the recorded fallback; surfaced, never hidden.
        verdict = VerdictLabel.NEI
        parse_status = "fallback"
    return Prediction(
        claim_id=claim.claim_id,
        strategy_id=strategy.strategy_id,
        config_id=bundle.selection_meta.get("config", ""),
        verdict=verdict,
        raw_text=raw_text,
        assessment=assessment,
        parse_status=parse_status,
        timing_ms=timing,
    )


def prediction_to_obj(pred: Prediction) -> dict:
    obj: dict = {
        "claim_id": pred.claim_id,
        "strategy": pred.strategy_id,
        "config": pred.config_id,
        "verdict": pred.verdict.value if pred.verdict is not None else None,
        "parse_status": pred.parse_status,
        "raw_text": pred.raw_text,
        "timing_ms": {k: round(v, 3) for k, v in sorted(pred.timing_ms.items())},
    }
    if pred.assessment is not None:
        obj["assessment_text"] = pred.assessment.text
    if pred.error is not None:
        obj["error"] = pred.error
    return obj


def prediction_from_obj(obj: dict) -> Prediction:
    verdict = VerdictLabel(obj["verdict"]) if obj.get("verdict") else None
    assessment = Assessment(text=obj["assessment_text"]) if "assessment_text" in obj else None
    return Prediction(
        claim_id=obj["claim_id"],
        strategy_id=obj.get("strategy", ""),
        config_id=obj.get("config", ""),
        verdict=verdict,
        raw_text=obj.get("raw_text", ""),
        assessment=assessment,
        parse_status=obj.get("parse_status", "ok"),
        timing_ms=dict(obj.get("timing_ms", {})),
        error=obj.get("error"),
    )


def load_predictions(path) -> list[Prediction]:
    preds = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                preds.append(prediction_from_obj(json.loads(line)))
    return preds


def _run_one(claim, config, strategy, knowledge, handles, roles, recorder, strict):
    try:
        bundle = assemble_evidence(claim, config, knowledge, handles)
        return run_strategy(claim, bundle, strategy, roles, handles, recorder)
    except FactGateError as exc:
        if strict:
            raise
        logger.warning("claim %s failed under %s: %s", claim.claim_id, strategy.strategy_id, exc)
        return Prediction(
            claim_id=claim.claim_id,
            strategy_id=strategy.strategy_id,
            config_id=config.config_id,
            verdict=None,
            parse_status="error",
            error=str(exc),
        )


def predictions_filename(config: EvidenceConfig, strategy: Strategy) -> str:
    return f"predictions_{config.config_id}__{strategy.strategy_id}.jsonl"


def run_dataset(
    claims,
    knowledge: KnowledgeSource,
    configs,
    strategies,
    roles: Roles,
    out_dir,
    handles: RetrievalHandles | None = None,
    parallelism: int = DEFAULT_PARALLELISM,
    strict: bool = False,
    recorder: TranscriptRecorder | None = None,
    transcript_path: str | None = None,
) -> dict:
    """Run every (config, strategy) pair over a claim list.

    Emits one predictions.jsonl per pair plus a run manifest.  Per-claim
    failures are recorded in-line and the run continues unless strict.
    """
    configs = list(configs)
    strategies = list(strategies)
    if not configs or not strategies:
        raise ConfigError("at least one evidence configuration and one strategy are required")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    claims = list(claims)
    started = datetime.now(timezone.utc).isoformat()
    wall_start = time.perf_counter()

    runs = []
    for config in configs:
        for strategy in strategies:
            if parallelism > 1 and claims:
                with ThreadPoolExecutor(max_workers=parallelism) as pool:
                    preds = list(
                        pool.map(
                            lambda c: _run_one(
                                c, config, strategy, knowledge, handles, roles, recorder, strict
                            ),
                            claims,
                        )
                    )
            else:
                preds = [
                    _run_one(c, config, strategy, knowledge, handles, roles, recorder, strict)
                    for c in claims
                ]
            preds.sort(key=lambda p: p.claim_id)
            path = out_dir / predictions_filename(config, strategy)
            with open(path, "w", encoding="utf-8") as fh:
                for pred in preds:
                    fh.write(json.dumps(prediction_to_obj(pred), ensure_ascii=False) + "\n")
            scored = [p for p in preds if p.error is None]
            sample_ms = [sum(p.timing_ms.values()) for p in scored]
            runs.append(
                {
                    "config": config.config_id,
                    "strategy": strategy.strategy_id,
                    "predictions": path.name,
                    "n_claims": len(preds),
                    "n_fallback": sum(1 for p in preds if p.parse_status == "fallback"),
                    "n_error": sum(1 for p in preds if p.parse_status == "error"),
                    "per_sample_ms": (sum(sample_ms) / len(sample_ms)) if sample_ms else 0.0,
                }
            )

    if recorder is not None and transcript_path is not None:
        recorder.save(transcript_path)

    manifest = {
        "dataset_digest": dataset_digest(claims),
        "backend_tags": {
            role: getattr(getattr(endpoint, "backend", None), "tag", None)
            for role, endpoint in (
                ("analyzer", roles.analyzer),
                ("verifier", roles.verifier),
            )
            if endpoint is not None
        },
        "transcript": str(transcript_path) if transcript_path else None,
        "parallelism": parallelism,
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": round(time.perf_counter() - wall_start, 3),
        "runs": runs,
    }
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    return manifest
