"""Command-line entry point.

Every subcommand writes a run manifest next to its outputs: command,
flags, seeds, input digests, tool version, timestamp. Re-running with
the manifest's flags reproduces the outputs byte for byte (timestamp
aside). Exit codes: 0 success, 1 validation error, 2 I/O or endpoint
failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from . import __version__
from .adapters import Transcript, dispatch, make_pool
from .corpus import load_corpus
from .errors import CorpusFormatError, DispatchError, GenerationError, HayragError
from .haystack import (
    BenchmarkSet,
    generate,
    load_benchmark,
    save_benchmark,
    subset_small,
    validate_benchmark,
)
from .metrics import (
    BiasGrid,
    emit_report,
    positional_bias_run,
    score,
    with_bootstrap,
)
from .miqa import cluster_by_keywords, inject_distractors, load_qa_items, save_miqa
from .oracles import (
    CaptionReasonerStub,
    DetectionTable,
    LabelListCaptioner,
    caption_aggregate,
    oracle_transcript,
    scripted_adapter,
)
from .retriever import (
    ModelConfig,
    RetrieverConfig,
    filter_relevant,
    load_featureset,
    model_config_from_store,
    relevance_of_compressed,
    compress,
    train,
)
from .neural import ParamStore


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for sub in sorted(p for p in path.rglob("*") if p.is_file()):
            h.update(sub.name.encode("utf-8"))
            h.update(bytes.fromhex(_sha256(sub)))
        return h.hexdigest()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(target, command: str, args: argparse.Namespace, inputs: list) -> Path:
    target = Path(target)
    if target.is_dir():
        path = target / "manifest.json"
    else:
        path = target.with_name(target.name + ".manifest.json")
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    doc = {
        "command": command,
        "flags": flags,
        "seeds": {"root": flags.get("seed")},
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if p and Path(p).exists()},
        "version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path.write_text(json.dumps(doc, indent=1, default=str) + "\n", encoding="utf-8")
    return path


class _PoolAnswerer:
    """Adapts a transport pool to the in-process answer() protocol."""

    def __init__(self, pool, timeout: float | None = None):
        self.pool = pool
        self.timeout = timeout

    def answer(self, req) -> str:
        reply, timed_out = self.pool.answer_raw(req, self.timeout)
        if timed_out or not isinstance(reply, dict) or "error" in reply:
            raise DispatchError(f"caption endpoint failed for {req.id}")
        return str(reply.get("answer", ""))

    def close(self) -> None:
        self.pool.close()


def _build_adapter(args, corpus):
    if getattr(args, "scripted", None):
        profile, _, extra = args.scripted.partition(":")
        kwargs = {"seed": getattr(args, "seed", 0) or 0}
        if profile == "noisy":
            kwargs["p_correct"] = float(extra) if extra else 0.5
        if getattr(args, "max_images", None):
            kwargs["max_images"] = args.max_images
        return scripted_adapter(profile, corpus=corpus, **kwargs)
    if getattr(args, "endpoint", None):
        return make_pool(args.endpoint, args.transport, parallelism=args.parallelism)
    raise GenerationError("provide --endpoint or --scripted")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    corpus = load_corpus(args.corpus)
    bench = generate(
        corpus,
        args.mode,
        args.n,
        args.size,
        n_needles=args.needles,
        seed=args.seed,
        any_fraction=args.any_fraction,
    )
    if args.subset:
        bench = subset_small(bench, args.subset, seed=args.seed)
    save_benchmark(bench, args.out)
    write_manifest(Path(args.out), "gen", args, [args.corpus])
    print(f"wrote {len(bench.specs)} questions to {args.out}")
    return 0


def cmd_validate(args) -> int:
    corpus = load_corpus(args.corpus)
    bench = load_benchmark(args.benchmark)
    report = validate_benchmark(bench, corpus)
    doc = {"violations": report.violations, "warnings": report.warnings, "stats": report.stats}
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
        write_manifest(Path(args.out), "validate", args, [args.corpus, args.benchmark])
    print(json.dumps(doc, indent=1))
    return 0 if report.ok else 1


def cmd_eval(args) -> int:
    corpus = load_corpus(args.corpus) if args.corpus else None
    bench = load_benchmark(args.benchmark)
    adapter = _build_adapter(args, corpus)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        transcript = dispatch(
            bench,
            adapter,
            corpus=corpus,
            parallelism=args.parallelism,
            timeout=args.timeout_secs,
            retries=args.retries,
        )
    except DispatchError as exc:
        if exc.partial is not None:
            exc.partial.save(out / "transcript.partial.json")
            print(f"endpoint failed; partial transcript saved: {exc}", file=sys.stderr)
        raise
    finally:
        if hasattr(adapter, "close"):
            adapter.close()
    transcript.save(out / "transcript.json")
    result = with_bootstrap(score(transcript, bench), b=args.bootstrap, seed=args.seed)
    (out / "results.json").write_text(
        json.dumps(result.to_dict(), indent=1) + "\n", encoding="utf-8"
    )
    emit_report(result, out)
    write_manifest(out, "eval", args, [args.benchmark, args.corpus])
    print(
        f"accuracy={result.accuracy:.4f} compliance={result.compliance_rate:.4f} "
        f"bootstrap_std={result.bootstrap_std:.4f} n={result.n}"
    )
    return 0


def cmd_bias(args) -> int:
    corpus = load_corpus(args.corpus)
    adapter = _build_adapter(args, corpus)
    sizes = [int(s) for s in args.sizes.split(",")]
    depths = [float(d) for d in args.depths.split(",")]
    try:
        grid = positional_bias_run(
            corpus,
            adapter,
            sizes=sizes,
            depths=depths,
            n_per_cell=args.n_per_cell,
            seed=args.seed,
            parallelism=args.parallelism,
            timeout=args.timeout_secs,
        )
    finally:
        if hasattr(adapter, "close"):
            adapter.close()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    grid.save(out / "bias_grid.json")
    emit_report(grid, out)
    write_manifest(out, "bias", args, [args.corpus])
    print(f"bias grid written to {out}")
    return 0


def cmd_oracle(args) -> int:
    corpus = load_corpus(args.corpus)
    bench = load_benchmark(args.benchmark)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "detector":
        if args.detections:
            table = DetectionTable.load(args.detections)
        else:
            table = DetectionTable.perfect(corpus)
        if args.tpr < 1.0:
            table = table.degraded(args.tpr, seed=args.seed)
        transcript = oracle_transcript(
            bench, table, anchor_threshold=args.anchor_threshold, target_threshold=args.target_threshold
        )
    elif args.kind == "caption":
        if args.captioner_endpoint or args.llm_endpoint:
            if not (args.captioner_endpoint and args.llm_endpoint):
                raise GenerationError("caption oracle needs both --captioner-endpoint and --llm-endpoint")
            captioner = _PoolAnswerer(make_pool(args.captioner_endpoint, "stdio"))
            llm = _PoolAnswerer(make_pool(args.llm_endpoint, "stdio"))
        else:
            captioner = LabelListCaptioner(corpus)
            llm = CaptionReasonerStub()
        transcript = Transcript(meta={"adapter": "caption_aggregation[scripted]"})
        for spec in bench.specs:
            transcript.verdicts[spec.question_id] = caption_aggregate(spec, captioner, llm, corpus)
    else:  # language_only: chance-level placeholder
        adapter = scripted_adapter("noisy", corpus=corpus, p_correct=0.5, seed=args.seed)
        transcript = dispatch(bench, adapter, corpus=corpus)
    transcript.save(out / "transcript.json")
    result = with_bootstrap(score(transcript, bench), b=args.bootstrap, seed=args.seed)
    (out / "results.json").write_text(
        json.dumps(result.to_dict(), indent=1) + "\n", encoding="utf-8"
    )
    emit_report(result, out)
    write_manifest(out, "oracle", args, [args.corpus, args.benchmark, args.detections])
    print(f"{args.kind} oracle accuracy={result.accuracy:.4f} n={result.n}")
    return 0


def cmd_train_retriever(args) -> int:
    features = load_featureset(args.features)
    config = RetrieverConfig(
        threshold=args.threshold,
        top_k_cap=args.top_k,
        positive_weight=args.pos_weight,
        schedule_split=args.split,
    )
    model_cfg = ModelConfig(
        dim=features.dim,
        n_queries=args.queries,
        compressor_blocks=args.compressor_blocks,
        head_blocks=args.head_blocks,
        n_heads=args.heads,
    )
    store, log = train(
        features,
        config,
        steps=args.steps,
        seed=args.seed,
        model_cfg=model_cfg,
        lr=args.lr,
        batch_positives=args.batch_positives,
        eval_interval=args.eval_interval,
    )
    store.save(args.out)
    log_path = Path(args.out).with_name(Path(args.out).name + ".log.json")
    log_path.write_text(json.dumps(log.to_dict(), indent=1) + "\n", encoding="utf-8")
    write_manifest(Path(args.out), "train-retriever", args, [args.features])
    final = log.entries[-1] if log.entries else {}
    print(
        f"trained {args.steps} steps; recall@{args.threshold}={final.get('recall')}"
        f" precision={final.get('precision')} -> {args.out}"
    )
    return 0


def cmd_score(args) -> int:
    store = ParamStore.load(args.checkpoint)
    model_cfg = model_config_from_store(store)
    features = load_featureset(args.features)
    config = RetrieverConfig(threshold=args.threshold, top_k_cap=args.top_k)
    out_doc = {"threshold": args.threshold, "questions": []}
    compressed = {}
    for q in features.questions:
        scores = []
        for img_idx in q.candidate_idx:
            img_idx = int(img_idx)
            if img_idx not in compressed:
                compressed[img_idx] = compress(features.patches[img_idx], store, model_cfg)
            scores.append(relevance_of_compressed(compressed[img_idx], q.query, store, model_cfg))
        retained = filter_relevant(scores, config)
        out_doc["questions"].append(
            {
                "id": q.qid,
                "scores": [round(s, 6) for s in scores],
                "retained": retained,
                "retained_ids": [features.image_ids[int(q.candidate_idx[i])] for i in retained],
            }
        )
    Path(args.out).write_text(json.dumps(out_doc, indent=1) + "\n", encoding="utf-8")
    write_manifest(Path(args.out), "score", args, [args.checkpoint, args.features])
    print(f"scored {len(out_doc['questions'])} questions -> {args.out}")
    return 0


def cmd_build_miqa(args) -> int:
    items = load_qa_items(args.items)
    clusters = cluster_by_keywords(items, min_overlap=args.min_overlap)
    built = []
    failures = []
    for item in items:
        try:
            built.append(
                inject_distractors(item, items, clusters, k_range=(args.k_min, args.k_max), seed=args.seed)
            )
        except ValueError as exc:
            failures.append(str(exc))
    save_miqa(built, args.out)
    stats = {
        "n_built": len(built),
        "n_failed": len(failures),
        "failures": failures[:10],
        "n_clusters": len(set(clusters)),
    }
    stats_path = Path(args.out).with_name(Path(args.out).name + ".stats.json")
    stats_path.write_text(json.dumps(stats, indent=1) + "\n", encoding="utf-8")
    write_manifest(Path(args.out), "build-miqa", args, [args.items])
    print(f"built {len(built)} multi-image items ({len(failures)} skipped) -> {args.out}")
    return 0


def cmd_report(args) -> int:
    doc = json.loads(Path(args.results).read_text(encoding="utf-8"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if "cells" in doc:
        emit_report(BiasGrid.load(args.results), out)
    else:
        from .metrics import EvalResult

        result = EvalResult(
            rows=doc.get("rows", []),
            accuracy=doc["accuracy"],
            compliance_rate=doc["compliance_rate"],
            n=doc["n"],
            size=doc.get("size"),
            bootstrap_mean=doc.get("bootstrap_mean"),
            bootstrap_std=doc.get("bootstrap_std"),
        )
        emit_report(result, out)
    write_manifest(out, "report", args, [args.results])
    print(f"report written to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hayrag", description=__doc__)
    p.add_argument("--version", action="version", version=f"hayrag {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a balanced benchmark")
    g.add_argument("--corpus", required=True)
    g.add_argument("--mode", required=True, choices=["single", "multi_all", "multi_any", "multi"])
    g.add_argument("--n", type=int, required=True, help="question count (even)")
    g.add_argument("--size", type=int, required=True, help="haystack size")
    g.add_argument("--needles", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--any-fraction", type=float, default=0.5)
    g.add_argument("--subset", type=int, default=None, help="stratified subsample size")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    v = sub.add_parser("validate", help="check benchmark invariants against its corpus")
    v.add_argument("--benchmark", required=True)
    v.add_argument("--corpus", required=True)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("eval", help="run an answerer over a benchmark and score it")
    e.add_argument("--benchmark", required=True)
    e.add_argument("--corpus", default=None)
    e.add_argument("--endpoint", default=None, help="adapter command or URL")
    e.add_argument("--transport", choices=["stdio", "http"], default="stdio")
    e.add_argument("--scripted", default=None, help="always_yes|ground_truth|noisy[:p]|positional")
    e.add_argument("--parallelism", type=int, default=1)
    e.add_argument("--timeout-secs", type=float, default=None)
    e.add_argument("--retries", type=int, default=0)
    e.add_argument("--bootstrap", type=int, default=1000)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--max-images", type=int, default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bias", help="positional-bias grid over sizes and needle depths")
    b.add_argument("--corpus", required=True)
    b.add_argument("--endpoint", default=None)
    b.add_argument("--transport", choices=["stdio", "http"], default="stdio")
    b.add_argument("--scripted", default=None)
    b.add_argument("--sizes", default="5,10,20")
    b.add_argument("--depths", default="0,0.25,0.5,0.75,1")
    b.add_argument("--n-per-cell", type=int, default=100)
    b.add_argument("--parallelism", type=int, default=1)
    b.add_argument("--timeout-secs", type=float, default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--max-images", type=int, default=None)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bias)

    o = sub.add_parser("oracle", help="detector / caption-aggregation / language-only baselines")
    o.add_argument("--kind", required=True, choices=["detector", "caption", "language_only"])
    o.add_argument("--benchmark", required=True)
    o.add_argument("--corpus", required=True)
    o.add_argument("--detections", default=None, help="detection table JSON; default: perfect")
    o.add_argument("--tpr", type=float, default=1.0, help="degrade true-positive rate")
    o.add_argument("--anchor-threshold", type=float, default=0.5)
    o.add_argument("--target-threshold", type=float, default=0.5)
    o.add_argument("--captioner-endpoint", default=None)
    o.add_argument("--llm-endpoint", default=None)
    o.add_argument("--bootstrap", type=int, default=1000)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_oracle)

    t = sub.add_parser("train-retriever", help="train the relevance filter on a feature set")
    t.add_argument("--features", required=True, help=".vhf file or directory of them")
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--pos-weight", type=float, default=5.0)
    t.add_argument("--split", type=float, default=0.6, help="fraction of steps before distractor injection")
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--threshold", type=float, default=0.5)
    t.add_argument("--top-k", type=int, default=None)
    t.add_argument("--queries", type=int, default=32)
    t.add_argument("--compressor-blocks", type=int, default=2)
    t.add_argument("--head-blocks", type=int, default=2)
    t.add_argument("--heads", type=int, default=1)
    t.add_argument("--batch-positives", type=int, default=4)
    t.add_argument("--eval-interval", type=int, default=200)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train_retriever)

    s = sub.add_parser("score", help="relevance scores and retained subset per question")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--features", required=True)
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--top-k", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_score)

    m = sub.add_parser("build-miqa", help="multi-image items via clustering + distractor injection")
    m.add_argument("--items", required=True, help="single-image QA JSON-lines")
    m.add_argument("--min-overlap", type=int, default=1)
    m.add_argument("--k-min", type=int, default=2)
    m.add_argument("--k-max", type=int, default=10)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_build_miqa)

    r = sub.add_parser("report", help="re-emit CSV and SVG from saved results")
    r.add_argument("--results", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors; flag errors are
        # validation failures here
        return 0 if exc.code in (0, None) else 1
    if args.command == "gen" and args.needles is None:
        args.needles = 1 if args.mode == "single" else 2
    try:
        return args.func(args)
    except (GenerationError, CorpusFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DispatchError as exc:
        print(f"endpoint error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except HayragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
