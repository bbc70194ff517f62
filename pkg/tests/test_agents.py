"""Prompt rendering purity, transcript record/replay, and response parsing."""

from __future__ import annotations

import pytest

from factgate import agents
from factgate.agents import (
    API_DETERMINISTIC,
    GREEDY,
    Assessment,
    CallableChatBackend,
    ChatMessage,
    DecodingParams,
    ImagePart,
    ScriptedChatBackend,
    TextPart,
    Transcript,
    TranscriptRecorder,
    canonical_request,
    chat_complete,
    parse_necessity,
    parse_verdict,
    render_analyzer_prompt,
    render_necessity_label_prompt,
    render_refinement_prompt,
    render_summarizer_prompt,
    render_unified_prompt,
    render_verifier_prompt,
    request_digest,
    request_has_image,
)
from factgate.corpus import NecessityLabel, VerdictLabel
from factgate.errors import (
    EmptyDocument,
    MissingImage,
    TranscriptMiss,
    UnparseableNecessity,
    UnparseableVerdict,
)

from conftest import script


# -- renderers ---------------------------------------------------------------


def test_analyzer_prompt_fields(image_file):
    msg = render_analyzer_prompt("X", image_file, "Y")
    text = msg.text()
    assert "Claim: X" in text
    assert "Text Evidence: Y" in text
    assert "necessary" in text
    assert "Respond only with your analysis." in text
    assert msg.has_image()
    # the image part sits exactly at the Image Evidence slot
    assert isinstance(msg.parts[1], ImagePart)
    assert msg.parts[0].text.endswith("Image Evidence: ")


def test_analyzer_prompt_empty_text_evidence(image_file):
    msg = render_analyzer_prompt("X", image_file, "")
    assert "Text Evidence: " in msg.text()


def test_analyzer_prompt_requires_image(tmp_path):
    with pytest.raises(MissingImage):
        render_analyzer_prompt("X", None, "Y")
    with pytest.raises(MissingImage):
        render_analyzer_prompt("X", str(tmp_path / "missing.png"), "Y")


def test_render_purity(image_file):
    a = render_analyzer_prompt("X", image_file, "Y")
    b = render_analyzer_prompt("X", image_file, "Y")
    assert a == b
    assert request_digest(canonical_request(a, GREEDY)) == request_digest(
        canonical_request(b, GREEDY)
    )


def test_verifier_prompt_with_analysis(image_file):
    assessment = Assessment(text="The image adds nothing new.")
    msg = render_verifier_prompt("X", image_file, assessment, "Y")
    text = msg.text()
    assert "Image Analysis: The image adds nothing new." in text
    assert "Claim: X" in text
    assert "Text Evidence: Y" in text
    assert msg.has_image()


def test_verifier_prompt_text_only():
    msg = render_verifier_prompt("X", None, None, "Y")
    assert len(msg.parts) == 1
    text = msg.text()
    assert "Image Analysis" not in text
    assert "Image Evidence" not in text
    assert "'Supported', 'Refuted', or 'NEI'" in text


def test_verifier_prompt_bare_label_slot(image_file):
    msg = render_verifier_prompt("X", image_file, Assessment(text="Yes"), "Y")
    assert "Image Analysis: Yes\n" in msg.text()


def test_necessity_prompt_ends_with_answer_contract(image_file):
    msg = render_necessity_label_prompt("X", image_file, "Y")
    assert msg.text().endswith(agents.NECESSITY_LABEL_ANSWER_CONTRACT)
    assert "Claim: X" in msg.text()
    assert render_necessity_label_prompt("X", image_file, "Y") == msg
    # empty text evidence renders without error
    render_necessity_label_prompt("X", image_file, "")


def test_unified_prompt_concatenates_both_instructions(image_file):
    msg = render_unified_prompt("X", image_file, "Y")
    text = msg.text()
    assert "Respond only with your analysis." in text
    assert "determine the correct verdict" in text
    assert "Image Analysis" not in text


def test_summarizer_prompt():
    msg = render_summarizer_prompt("D")
    assert "Document:\nD" in msg.text()
    assert render_summarizer_prompt("D") == msg
    with pytest.raises(EmptyDocument):
        render_summarizer_prompt("   \n ")


def test_refinement_prompt_and_parse():
    msg = render_refinement_prompt("Google PhoneBook", "ev", "just", "False")
    text = msg.text()
    for line in ("Claim: Google PhoneBook", "Evidence: ev", "Justification: just", "Label: False"):
        assert line in text
    assert render_refinement_prompt("Google PhoneBook", "ev", "just", "False") == msg
    assert agents.apply_refinement("orig", "not needed") == "orig"
    assert agents.apply_refinement("orig", ' "Not Needed" ') == "orig"
    refined = "Entering a phone number into Google can return a home address."
    assert agents.apply_refinement("Google PhoneBook", refined) == refined


# -- canonical requests and digests ----------------------------------------------


def test_greedy_digest_ignores_temperature():
    msg = ChatMessage(role="user", parts=(TextPart("hello"),))
    d1 = request_digest(canonical_request(msg, DecodingParams(mode="greedy", temperature=0.0)))
    d2 = request_digest(canonical_request(msg, DecodingParams(mode="greedy", temperature=0.7)))
    assert d1 == d2
    d3 = request_digest(canonical_request(msg, DecodingParams(mode="sampled", temperature=0.7)))
    assert d3 != d1


def test_request_image_detection(image_file):
    with_image = canonical_request(render_analyzer_prompt("X", image_file, "Y"), GREEDY)
    without = canonical_request(render_verifier_prompt("X", None, None, "Y"), GREEDY)
    assert request_has_image(with_image)
    assert not request_has_image(without)


def test_api_params_carry_thinking_budget():
    msg = ChatMessage(role="user", parts=(TextPart("hello"),))
    params = DecodingParams(mode="sampled", temperature=0.0, thinking_budget=128)
    request = canonical_request(msg, params)
    assert request["params"]["thinking_budget"] == 128
    assert request["params"]["temperature"] == 0.0


# -- transcripts and backends ------------------------------------------------------


def test_scripted_backend_replays_exact_text():
    transcript = Transcript()
    msg = ChatMessage(role="user", parts=(TextPart("ping"),))
    script(transcript, msg, GREEDY, "pong", latency_ms=42.0)
    backend = ScriptedChatBackend(transcript)
    result = chat_complete(backend, msg, GREEDY)
    assert result.text == "pong"
    assert result.latency_ms == 42.0


def test_scripted_backend_unknown_digest():
    backend = ScriptedChatBackend(Transcript())
    msg = ChatMessage(role="user", parts=(TextPart("never scripted"),))
    with pytest.raises(TranscriptMiss):
        chat_complete(backend, msg, GREEDY)


def test_transcript_save_load_round_trip(tmp_path):
    transcript = Transcript()
    msg = ChatMessage(role="user", parts=(TextPart("q"),))
    script(transcript, msg, API_DETERMINISTIC, "a", latency_ms=1.5)
    path = tmp_path / "transcript.jsonl"
    transcript.save(path)
    replayed = ScriptedChatBackend(Transcript.load(path))
    assert chat_complete(replayed, msg, API_DETERMINISTIC).text == "a"


def test_recorder_enables_replay(tmp_path):
    recorder = TranscriptRecorder()
    backend = CallableChatBackend(lambda req: "echo:" + agents.request_text(req), latency_ms=3.0)
    msg = ChatMessage(role="user", parts=(TextPart("live question"),))
    live = chat_complete(backend, msg, GREEDY, recorder)
    assert live.text == "echo:live question"
    path = tmp_path / "t.jsonl"
    recorder.save(path)
    replay = chat_complete(ScriptedChatBackend.from_file(path), msg, GREEDY)
    assert replay.text == live.text
    assert replay.latency_ms == live.latency_ms


def test_recorder_warns_on_nondeterminism(caplog):
    recorder = TranscriptRecorder()
    request = canonical_request(ChatMessage(role="user", parts=(TextPart("q"),)), GREEDY)
    with caplog.at_level("WARNING"):
        recorder.record(request, "first", 0.0)
        recorder.record(request, "second", 0.0)
    assert any("nondeterministic" in r.message for r in caplog.records)


# -- verdict parsing -----------------------------------------------------------------


def test_parse_verdict_single_label():
    assert parse_verdict("…Therefore the verdict is Refuted.") is VerdictLabel.REFUTED
    assert parse_verdict("Supported") is VerdictLabel.SUPPORTED


def test_parse_verdict_nei_synonym():
    assert parse_verdict("Not enough information.") is VerdictLabel.NEI
    assert parse_verdict("Verdict: NEI") is VerdictLabel.NEI


def test_parse_verdict_last_occurrence_wins():
    assert (
        parse_verdict("It seems Supported at first, but ultimately Refuted")
        is VerdictLabel.REFUTED
    )


# Hand-built ambiguity fixtures: (response, expected by the last-occurrence rule)
AMBIGUITY_FIXTURES = [
    ("Refuted? No -- after checking the image, Supported.", VerdictLabel.SUPPORTED),
    ("Supported, Refuted, NEI", VerdictLabel.NEI),
    ("NEI at first glance; the evidence settles it as Refuted", VerdictLabel.REFUTED),
    ("The claim is refuted. Wait, the second source says supported.", VerdictLabel.SUPPORTED),
    ("supported supported refuted", VerdictLabel.REFUTED),
    ("Not enough information, leaning Supported", VerdictLabel.SUPPORTED),
    ("Refuted\nRefuted\nRefuted", VerdictLabel.REFUTED),
    ("Verdict: Supported (earlier I wrote NEI by mistake: NEI)", VerdictLabel.NEI),
    ("nei... nei... but finally: REFUTED", VerdictLabel.REFUTED),
    ("Between Supported and Refuted I choose Supported", VerdictLabel.SUPPORTED),
]


@pytest.mark.parametrize("raw,expected", AMBIGUITY_FIXTURES)
def test_parse_verdict_ambiguity_fixtures(raw, expected):
    assert parse_verdict(raw) is expected


def test_parse_verdict_respects_word_boundaries():
    # "unsupported" must not read as Supported, "neither" not as NEI
    assert parse_verdict("unsupported claims are refuted") is VerdictLabel.REFUTED
    with pytest.raises(UnparseableVerdict):
        parse_verdict("neither here nor there")


def test_parse_verdict_noise_property():
    import random

    rng = random.Random(11)
    tokens = {
        "Supported": VerdictLabel.SUPPORTED,
        "Refuted": VerdictLabel.REFUTED,
        "NEI": VerdictLabel.NEI,
        "not enough information": VerdictLabel.NEI,
    }
    filler = ["the", "image", "shows", "a", "crowd;", "analysis", "text,", "claims..."]
    for _ in range(200):
        token, expected = rng.choice(list(tokens.items()))
        prefix = " ".join(rng.choices(filler, k=rng.randrange(0, 8)))
        suffix = " ".join(rng.choices(filler, k=rng.randrange(0, 8)))
        raw = f"{prefix} {token} {suffix}"
        assert parse_verdict(raw) is expected


def test_parse_verdict_unparseable():
    for raw in ("", "   ", "no label here", "???"):
        with pytest.raises(UnparseableVerdict):
            parse_verdict(raw)


# -- necessity parsing ----------------------------------------------------------------


def test_parse_necessity():
    assert parse_necessity("Yes") is NecessityLabel.NECESSARY
    assert parse_necessity("no.") is NecessityLabel.UNNECESSARY
    assert parse_necessity('"Yes, because the chart is unique."') is NecessityLabel.NECESSARY
    assert parse_necessity("  NO \n") is NecessityLabel.UNNECESSARY


def test_parse_necessity_unparseable():
    for raw in ("Maybe", "I think yes", "", "1"):
        with pytest.raises(UnparseableNecessity):
            parse_necessity(raw)
