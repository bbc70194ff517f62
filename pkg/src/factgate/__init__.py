"""factgate: adaptive multimodal claim verification.

The package covers the full loop: loading claim/evidence corpora, exact
cosine-similarity evidence retrieval, necessity-gated agent strategies over
pluggable chat backends, temporally-filtered web evidence construction, and
the evaluation statistics used to compare strategies.
"""

from .corpus import (
    AnnotationRecord,
    ClaimCategory,
    ClaimRecord,
    EvidenceItem,
    KnowledgeSource,
    Modality,
    NecessityLabel,
    VerdictLabel,
    load_annotations,
    load_dataset,
    map_external_label,
    sanitize_finfact,
    save_dataset,
)
from .vector_index import (
    GateDecision,
    RetrievalHit,
    VectorIndex,
    build_index,
    cosine_similarity,
    load_index,
    save_index,
    threshold_filter,
    top_k,
)
from .agents import (
    Assessment,
    ChatMessage,
    DecodingParams,
    ScriptedChatBackend,
    Transcript,
    TranscriptRecorder,
    chat_complete,
    parse_necessity,
    parse_verdict,
    render_analyzer_prompt,
    render_necessity_label_prompt,
    render_refinement_prompt,
    render_summarizer_prompt,
    render_verifier_prompt,
)
from .pipeline import (
    AgentEndpoint,
    ConfigMode,
    EvidenceBundle,
    EvidenceConfig,
    Prediction,
    RetrievalHandles,
    Roles,
    Strategy,
    StrategyKind,
    TextSource,
    assemble_evidence,
    run_dataset,
    run_strategy,
)
from .evalkit import (
    ConfusionMatrix,
    MetricReport,
    chi_square_independence,
    krippendorff_alpha_nominal,
    mann_whitney_u,
    oracle_compose,
    score,
)
from .webfc import admit_claim, apply_temporal_filter, build_webfc, search_claim

__version__ = "0.1.0"

__all__ = [
    "AnnotationRecord",
    "ClaimCategory",
    "ClaimRecord",
    "EvidenceItem",
    "KnowledgeSource",
    "Modality",
    "NecessityLabel",
    "VerdictLabel",
    "load_annotations",
    "load_dataset",
    "map_external_label",
    "sanitize_finfact",
    "save_dataset",
    "GateDecision",
    "RetrievalHit",
    "VectorIndex",
    "build_index",
    "cosine_similarity",
    "load_index",
    "save_index",
    "threshold_filter",
    "top_k",
    "Assessment",
    "ChatMessage",
    "DecodingParams",
    "ScriptedChatBackend",
    "Transcript",
    "TranscriptRecorder",
    "chat_complete",
    "parse_necessity",
    "parse_verdict",
    "render_analyzer_prompt",
    "render_necessity_label_prompt",
    "render_refinement_prompt",
    "render_summarizer_prompt",
    "render_verifier_prompt",
    "AgentEndpoint",
    "ConfigMode",
    "EvidenceBundle",
    "EvidenceConfig",
    "Prediction",
    "RetrievalHandles",
    "Roles",
    "Strategy",
    "StrategyKind",
    "TextSource",
    "assemble_evidence",
    "run_dataset",
    "run_strategy",
    "ConfusionMatrix",
    "MetricReport",
    "chi_square_independence",
    "krippendorff_alpha_nominal",
    "mann_whitney_u",
    "oracle_compose",
    "score",
    "admit_claim",
    "apply_temporal_filter",
    "build_webfc",
    "search_claim",
]
