"""Command-line entry point wiring every module together.

Subcommands: convert, index, run, webfc, eval.  Exit codes are a stable
contract: 0 success, 2 data errors, 3 backend/build errors, 4 evaluation
mismatches, 64 usage/config errors.

Runs are driven by one declarative config file (JSON or TOML) with CLI
flags taking precedence.  Secrets are only ever named as environment
variables so configs and manifests stay shareable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import agents, corpus, evalkit, pipeline, vector_index, webfc
from .errors import (
    BackendBuildError,
    ConfigError,
    DataError,
    EvalMismatch,
    FactGateError,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DATA = 2
EXIT_BACKEND = 3
EXIT_EVAL = 4
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for data."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix.lower() == ".toml":
        try:
            import tomllib  # Python >= 3.11
        except ImportError:
            import tomli as tomllib
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- backend wiring --------------------------------------------------------------


def _decoding_params(entry: dict) -> agents.DecodingParams:
    decoding = entry.get("decoding", {})
    return agents.DecodingParams(
        mode=decoding.get("mode", "greedy"),
        temperature=float(decoding.get("temperature", 0.0)),
        max_tokens=int(decoding.get("max_tokens", agents.DEFAULT_MAX_TOKENS)),
        thinking_budget=decoding.get("thinking_budget"),
    )


def build_chat_backend(entry: dict):
    kind = entry.get("kind", "http")
    if kind == "scripted":
        transcript = entry.get("transcript")
        if not transcript:
            raise ConfigError("scripted chat backend requires a 'transcript' path")
        return agents.ScriptedChatBackend.from_file(transcript, tag=entry.get("name", "scripted"))
    if kind == "http":
        base_url = entry.get("base_url")
        model_id = entry.get("model_id")
        if not base_url or not model_id:
            raise ConfigError("http chat backend requires 'base_url' and 'model_id'")
        return agents.HTTPChatBackend(
            base_url,
            model_id,
            tag=entry.get("name", model_id),
            auth_env_var=entry.get("auth_env_var"),
        )
    raise ConfigError(f"unknown chat backend kind {kind!r}")


def build_embedding_backend(entry: dict):
    kind = entry.get("kind", "http")
    if kind == "scripted":
        vectors = entry.get("vectors_file")
        if not vectors:
            raise ConfigError("scripted embedding backend requires a 'vectors_file' path")
        return vector_index.ScriptedEmbeddingBackend.from_file(
            vectors, tag=entry.get("name", "scripted")
        )
    if kind == "http":
        base_url = entry.get("base_url")
        if not base_url:
            raise ConfigError("http embedding backend requires 'base_url'")
        return vector_index.HTTPEmbeddingBackend(base_url, tag=entry.get("name", base_url))
    raise ConfigError(f"unknown embedding backend kind {kind!r}")


def _endpoint(entry: dict | None) -> pipeline.AgentEndpoint | None:
    if not entry:
        return None
    return pipeline.AgentEndpoint(backend=build_chat_backend(entry), params=_decoding_params(entry))


_CONFIG_MODES = {mode.value: mode for mode in pipeline.ConfigMode if mode is not pipeline.ConfigMode.ORACLE_EVAL}


def parse_evidence_config(spec) -> pipeline.EvidenceConfig:
    """Accept either a mode string ('text_only[@retrieved_text]') or an object."""
    if isinstance(spec, str):
        mode_part, _, text_part = spec.partition("@")
        mode = _CONFIG_MODES.get(mode_part.strip())
        if mode is None:
            raise ConfigError(f"unknown evidence configuration {spec!r}")
        text_source = pipeline.TextSource.GOLD
        if text_part:
            if text_part.strip() == "retrieved_text":
                text_source = pipeline.TextSource.RETRIEVED
            elif text_part.strip() != "gold_text":
                raise ConfigError(f"unknown text source in configuration {spec!r}")
        return pipeline.EvidenceConfig(mode=mode, text_source=text_source)
    mode = _CONFIG_MODES.get(str(spec.get("mode", "")))
    if mode is None:
        raise ConfigError(f"unknown evidence configuration mode {spec.get('mode')!r}")
    text_source = pipeline.TextSource(spec.get("text_source", "gold"))
    return pipeline.EvidenceConfig(
        mode=mode, text_source=text_source, k_text=int(spec.get("k_text", 1))
    )


def parse_strategy(spec: str, default_tau: float) -> pipeline.Strategy:
    name, _, tau_part = str(spec).partition("@")
    try:
        kind = pipeline.StrategyKind(name.strip())
    except ValueError:
        raise ConfigError(f"unknown strategy {spec!r}") from None
    tau = float(tau_part) if tau_part else default_tau
    return pipeline.Strategy(kind=kind, tau=tau)


def validate_run_config(cfg: dict) -> None:
    tau = float(cfg.get("tau", pipeline.DEFAULT_TAU))
    if not -1.0 <= tau <= 1.0:
        raise ConfigError(f"tau must be in [-1, 1], got {tau}")
    backends = cfg.get("backends", {})
    if "verifier" not in backends:
        raise ConfigError("missing required backend role: verifier")
    strategies = [parse_strategy(s, tau) for s in cfg.get("strategies", [])]
    for strategy in strategies:
        if strategy.needs_analyzer and "analyzer" not in backends:
            raise ConfigError(
                f"strategy {strategy.strategy_id!r} requires the analyzer backend role"
            )


# -- subcommands -----------------------------------------------------------------


def cmd_convert(args) -> int:
    out = Path(args.out)
    if args.format == "finfact":
        if not args.download_report:
            raise ConfigError("finfact conversion requires --download-report")
        with open(args.src, encoding="utf-8") as fh:
            raw = [json.loads(line) for line in fh if line.strip()]
        with open(args.download_report, encoding="utf-8") as fh:
            report = json.load(fh)
        claims, knowledge = corpus.convert_finfact(raw, report)
    else:
        claims, knowledge = corpus.load_dataset(args.src, args.format)
    corpus.save_dataset(claims, knowledge, out)
    validation = {
        "claims": len(claims),
        "evidence_items": len(knowledge),
        "text_items": len(knowledge.text_items()),
        "image_items": len(knowledge.image_items()),
    }
    print(json.dumps(validation, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_index(args) -> int:
    claims, knowledge = corpus.load_dataset(args.dataset, args.format)
    del claims
    items = knowledge.text_items() if args.modality == "text" else knowledge.image_items()
    backend = build_embedding_backend(
        {"kind": "scripted", "vectors_file": args.vectors_file, "name": args.tag}
        if args.vectors_file
        else {"kind": "http", "base_url": args.backend_url, "name": args.tag}
    )
    index = vector_index.build_index(items, backend)
    vector_index.save_index(index, args.out)
    print(f"indexed {len(index)} {args.modality} items (dim={index.dim}) -> {args.out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config_file(args.config) if args.config else {}
    if args.out:
        cfg["out_dir"] = args.out
    if args.parallelism is not None:
        cfg["parallelism"] = args.parallelism
    if args.strict:
        cfg["strict"] = True
    if args.strategies:
        cfg["strategies"] = [s.strip() for s in args.strategies.split(",") if s.strip()]
    if args.configs:
        cfg["configs"] = [c.strip() for c in args.configs.split(",") if c.strip()]
    if args.transcript:
        mode, _, path = args.transcript.partition(":")
        if mode not in ("record", "replay") or not path:
            raise ConfigError("--transcript expects record:PATH or replay:PATH")
        cfg["transcript"] = {"mode": mode, "path": path}

    for key in ("dataset", "out_dir", "strategies", "configs"):
        if not cfg.get(key):
            raise ConfigError(f"run config is missing {key!r}")
    validate_run_config(cfg)

    dataset_cfg = cfg["dataset"]
    claims, knowledge = corpus.load_dataset(dataset_cfg["path"], dataset_cfg.get("format", "mocheg"))

    backends_cfg = dict(cfg.get("backends", {}))
    transcript_cfg = cfg.get("transcript")
    if transcript_cfg and transcript_cfg.get("mode") == "replay":
        for role in ("analyzer", "verifier"):
            if role in backends_cfg:
                backends_cfg[role] = {
                    "kind": "scripted",
                    "transcript": transcript_cfg["path"],
                    "name": f"replay:{backends_cfg[role].get('name', role)}",
                }
    roles = pipeline.Roles(
        verifier=_endpoint(backends_cfg.get("verifier")),
        analyzer=_endpoint(backends_cfg.get("analyzer")),
    )

    handles = pipeline.RetrievalHandles(
        text_index=vector_index.load_index(cfg["text_index"]) if cfg.get("text_index") else None,
        image_index=vector_index.load_index(cfg["image_index"]) if cfg.get("image_index") else None,
        text_embedder=(
            build_embedding_backend(backends_cfg["embedder_text"])
            if backends_cfg.get("embedder_text")
            else None
        ),
        image_embedder=(
            build_embedding_backend(backends_cfg["embedder_image"])
            if backends_cfg.get("embedder_image")
            else None
        ),
    )

    tau = float(cfg.get("tau", pipeline.DEFAULT_TAU))
    strategies = [parse_strategy(s, tau) for s in cfg["strategies"]]
    configs = [parse_evidence_config(c) for c in cfg["configs"]]

    recorder = None
    transcript_path = None
    if transcript_cfg and transcript_cfg.get("mode") == "record":
        recorder = agents.TranscriptRecorder()
        transcript_path = transcript_cfg["path"]

    manifest = pipeline.run_dataset(
        claims,
        knowledge,
        configs,
        strategies,
        roles,
        cfg["out_dir"],
        handles=handles,
        parallelism=int(cfg.get("parallelism", pipeline.DEFAULT_PARALLELISM)),
        strict=bool(cfg.get("strict", False)),
        recorder=recorder,
        transcript_path=transcript_path,
    )
    print(json.dumps({"runs": manifest["runs"]}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_webfc(args) -> int:
    cfg = load_config_file(args.config)
    seeds_path = Path(args.seed_file)
    if not seeds_path.exists():
        raise DataError(f"seed file not found: {seeds_path}")
    seeds: list[corpus.ClaimRecord] = []
    with open(seeds_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            seeds.append(
                corpus.ClaimRecord(
                    claim_id=str(obj["claim_id"]),
                    text=str(obj["text"]),
                    gold_verdict=corpus.map_external_label(str(obj["gold_verdict"]), "webfc"),
                    source="webfc",
                    factcheck_date=corpus.parse_iso_date(obj.get("factcheck_date")),
                )
            )
    search_cfg = cfg.get("search", {})
    if search_cfg.get("kind") == "scripted":
        search_backend = webfc.ScriptedSearchBackend.from_file(search_cfg["fixtures"])
    else:
        search_backend = webfc.HTTPSearchBackend(search_cfg["base_url"])
    fetch_cfg = cfg.get("fetch", {})
    if fetch_cfg.get("kind") == "scripted":
        fetcher = webfc.ScriptedFetcher.from_file(fetch_cfg["fixtures"])
    else:
        fetcher = webfc.HTTPFetcher(
            per_host=int(fetch_cfg.get("per_host", 2)),
            delay_s=float(fetch_cfg.get("delay_s", 0.5)),
        )
    summarizer = _endpoint(cfg.get("backends", {}).get("summarizer"))
    if summarizer is None:
        raise ConfigError("webfc build requires a summarizer backend")
    out = args.out or cfg.get("out_dir")
    if not out:
        raise ConfigError("webfc build requires an output directory")
    report = webfc.build_webfc(seeds, search_backend, fetcher, summarizer, out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    claims, _ = corpus.load_dataset(args.gold, args.format)
    gold = evalkit.gold_map(claims)
    out = Path(args.out)
    results = []
    for path in args.predictions:
        preds = pipeline.load_predictions(path)
        cm, report = evalkit.score(preds, gold)
        strategy = preds[0].strategy_id if preds else Path(path).stem
        config = preds[0].config_id if preds else ""
        results.append(evalkit.RunResult(strategy=strategy, config=config, report=report, confusion=cm))

    comparisons = []
    if args.oracle:
        runs = [pipeline.load_predictions(p) for p in args.oracle]
        composed, oracle_report = evalkit.oracle_compose(runs, gold)
        del composed
        results.append(
            evalkit.RunResult(strategy="oracle", config="composed", report=oracle_report)
        )
    if args.agreement:
        annotations = corpus.load_annotations(args.agreement)
        alpha = evalkit.krippendorff_alpha_nominal(annotations)
        comparisons.append({"measure": "krippendorff_alpha", "value": round(alpha, 4)})

    written = evalkit.emit_report(results, out, comparisons)
    for result in results:
        print(
            f"{result.strategy} / {result.config}: "
            f"acc={result.report.accuracy:.3f} macro_f1={result.report.macro_f1:.3f} "
            f"(n={result.report.n_scored}, fallback={result.report.n_fallback})"
        )
    if comparisons:
        for comp in comparisons:
            print(f"{comp['measure']}: {comp['value']}")
    print(f"wrote {len(written)} report files to {out}")
    return EXIT_OK


def make_parser() -> _Parser:
    parser = _Parser(prog="factgate", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", parents=[], help="convert a source dataset to the canonical schema")
    p.add_argument("src", help="source dataset (directory, or raw JSONL for finfact)")
    p.add_argument("--format", required=True, choices=corpus.FORMAT_TAGS)
    p.add_argument("--out", required=True)
    p.add_argument("--download-report", help="image download report JSON (finfact)")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("index", help="build a vector index over one modality")
    p.add_argument("dataset", help="canonical dataset directory")
    p.add_argument("--format", default="mocheg", choices=corpus.FORMAT_TAGS)
    p.add_argument("--modality", required=True, choices=["text", "image"])
    p.add_argument("--out", required=True)
    p.add_argument("--vectors-file", help="scripted embedding backend fixture")
    p.add_argument("--backend-url", help="HTTP embedding backend endpoint")
    p.add_argument("--tag", default="default", help="embedder tag recorded in the index")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("run", help="run strategies over a dataset")
    p.add_argument("--config", help="run config file (JSON or TOML)")
    p.add_argument("--out")
    p.add_argument("--parallelism", type=int)
    p.add_argument("--strict", action="store_true")
    p.add_argument("--strategies", help="comma-separated strategy names")
    p.add_argument("--configs", help="comma-separated evidence configurations")
    p.add_argument("--transcript", help="record:PATH or replay:PATH")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("webfc", help="build a temporally-filtered web evidence dataset")
    p.add_argument("seed_file", help="JSONL of {claim_id, text, gold_verdict, factcheck_date}")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_webfc)

    p = sub.add_parser("eval", help="score prediction files and emit reports")
    p.add_argument("predictions", nargs="*", help="predictions.jsonl files")
    p.add_argument("--gold", required=True, help="canonical dataset directory with gold verdicts")
    p.add_argument("--format", default="mocheg", choices=corpus.FORMAT_TAGS)
    p.add_argument("--out", required=True)
    p.add_argument("--oracle", nargs="+", help="per-configuration prediction files to compose")
    p.add_argument("--agreement", help="annotations.jsonl for inter-annotator agreement")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"factgate: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"factgate: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BackendBuildError as exc:
        print(f"factgate: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except EvalMismatch as exc:
        print(f"factgate: evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except FactGateError as exc:
        print(f"factgate: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
