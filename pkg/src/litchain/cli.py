"""Pipeline CLI: each stage reads and writes versioned JSONL artifacts.

Stages communicate only through files under ``<output_dir>/<stage>/`` so any
stage can be re-run, resumed, or audited in isolation. Every manifest embeds
the hash of the config that produced it; downstream stages refuse mismatched
lineages unless --force is given. Artifacts carry no timestamps: identical
config means byte-identical output.
"""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from . import chainbuild, dataset, inference, metrics, negatives
from .chainbuild import BuildConfig, ReasoningChain, build_chain, chain_stats, stats_by_category
from .config import PipelineConfig, validate_config
from .corpus import Paper, fetch_citing, select_source
from .errors import ConfigError, LitchainError, ParseFailure, StageDependencyError
from .jsonl import canonical_dumps, derive_seed, read_json, read_jsonl, sha256_path, write_json, write_jsonl
from .providers import HttpProvider, SyntheticProvider
from .scoring import HttpChatBackend, JudgmentStore, MockChatBackend, OracleBackend

logger = logging.getLogger(__name__)

MANIFEST_SCHEMA_VERSION = 1

STAGE_ORDER = (
    "synth-graph",
    "build-chains",
    "sample-negatives",
    "window",
    "split",
    "emit-tasks",
)


def _stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    return Path(cfg.output_dir) / stage


def _write_manifest(cfg: PipelineConfig, stage: str, artifacts: dict[str, int], extra: dict | None = None) -> None:
    stage_path = _stage_dir(cfg, stage)
    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "stage": stage,
        "config_hash": cfg.config_hash(),
        "artifacts": {
            name: {"records": count, "sha256": sha256_path(stage_path / name)}
            for name, count in sorted(artifacts.items())
        },
    }
    if extra:
        manifest.update(extra)
    write_json(stage_path / "manifest.json", manifest)


def _read_manifest(cfg: PipelineConfig, stage: str, needed_by: str, force: bool) -> dict:
    path = _stage_dir(cfg, stage) / "manifest.json"
    if not path.exists():
        raise StageDependencyError(stage, needed_by)
    manifest = read_json(path)
    if not force and manifest.get("config_hash") != cfg.config_hash():
        raise ConfigError(
            f"{stage}/manifest.json",
            f"was produced by config {manifest.get('config_hash')}, current is "
            f"{cfg.config_hash()}; rerun upstream stages or pass --force",
        )
    return manifest


def _load_chains(cfg: PipelineConfig, stage: str, needed_by: str, force: bool) -> list[ReasoningChain]:
    _read_manifest(cfg, stage, needed_by, force)
    return [ReasoningChain.from_dict(d) for d in read_jsonl(_stage_dir(cfg, stage) / "chains.jsonl")]


def _make_provider(cfg: PipelineConfig, needed_by: str, force: bool):
    if cfg.provider.synthetic:
        _read_manifest(cfg, "synth-graph", needed_by, force)
        records = read_jsonl(_stage_dir(cfg, "synth-graph") / "graph.jsonl")
        return SyntheticProvider.from_records(records)
    return HttpProvider(cfg.provider)


def _make_scoring_backend(cfg: PipelineConfig, provider):
    if cfg.backend.kind == "oracle":
        if not isinstance(provider, SyntheticProvider):
            raise ConfigError("backend.kind", "oracle backend needs the synthetic provider")
        return OracleBackend(provider.labels, cfg.backend)
    if cfg.backend.kind == "http":
        return HttpChatBackend(cfg.backend)
    return MockChatBackend(cfg.backend)


def _make_chat_backend(cfg: PipelineConfig):
    """Backend for generation/judging; the scoring oracle cannot write prose."""
    if cfg.backend.kind == "http":
        return HttpChatBackend(cfg.backend)
    return MockChatBackend(cfg.backend)


def _scoring_template(cfg: PipelineConfig) -> str:
    if cfg.backend.template_path:
        return Path(cfg.backend.template_path).read_text(encoding="utf-8")
    return inference.load_templates(cfg.templates_dir).text_for("one_hop")


def _review_groups(cfg: PipelineConfig, provider) -> list[tuple[str, list[Paper], int]]:
    """(review_id, candidate source papers, target_year) per review group."""
    if isinstance(provider, SyntheticProvider):
        return [
            (g.review_id, [provider.papers[g.source_id]], g.target_year)
            for g in provider.graphs
        ]
    if not cfg.reviews_file:
        raise ConfigError("reviews_file", "live provider needs a reviews_file of review groups")
    groups = []
    for rec in read_jsonl(cfg.reviews_file):
        papers = [Paper.from_dict(p) for p in rec["papers"]]
        if cfg.build.target_year is None:
            raise ConfigError("build.target_year", "required in live mode")
        groups.append((rec["review_id"], papers, cfg.build.target_year))
    return groups


# ---------------------------------------------------------------- stages


def stage_synth_graph(cfg: PipelineConfig, args) -> int:
    if not cfg.provider.synthetic:
        raise ConfigError("provider.base_url", "synth-graph only applies to synthetic mode")
    provider = SyntheticProvider.from_config(cfg.synthetic)
    records = provider.to_records()
    n = write_jsonl(_stage_dir(cfg, "synth-graph") / "graph.jsonl", records)
    _write_manifest(
        cfg,
        "synth-graph",
        {"graph.jsonl": n},
        {"n_papers": len(provider.papers), "n_reviews": len(provider.graphs)},
    )
    print(f"synth-graph: {len(provider.papers)} papers across {n} review graphs")
    return 0


def stage_build_chains(cfg: PipelineConfig, args) -> int:
    provider = _make_provider(cfg, "build-chains", args.force)
    backend = _make_scoring_backend(cfg, provider)
    template = _scoring_template(cfg)
    groups = _review_groups(cfg, provider)
    votes = cfg.build.votes if args.votes is None else args.votes

    if args.dry_run:
        plan = []
        for review_id, papers, target_year in groups:
            source = select_source(papers, cfg.build.policy)
            citers = fetch_citing(source, provider)
            plan.append(
                {
                    "review_id": review_id,
                    "source_id": source.id,
                    "target_year": target_year,
                    "first_hop_candidates": len(citers),
                    "first_hop_backend_calls": len(citers) * votes,
                }
            )
        print(canonical_dumps({"stage": "build-chains", "dry_run": plan}))
        return 0

    store = JudgmentStore()
    judgments_path = _stage_dir(cfg, "build-chains") / "judgments.jsonl"
    if args.resume and judgments_path.exists():
        store = JudgmentStore.from_records(read_jsonl(judgments_path))
        logger.info("resumed %d cached judgments", len(store))

    chains = []
    for review_id, papers, target_year in groups:
        source = select_source(papers, cfg.build.policy)
        build_cfg = BuildConfig(
            target_year=target_year,
            chunk_size=cfg.build.chunk_size,
            top_k=cfg.build.top_k,
            max_length=cfg.build.max_length,
            policy=cfg.build.policy,
            seed=cfg.build.seed,
            votes=votes,
        )
        chain = build_chain(
            source,
            provider,
            backend,
            build_cfg,
            store=store,
            chain_id=f"{review_id}/{source.id}",
            template=template,
        )
        chain.review_id = review_id  # the group key, even when papers omit it
        chains.append(chain)

    stage_path = _stage_dir(cfg, "build-chains")
    n_chains = write_jsonl(stage_path / "chains.jsonl", (c.to_dict() for c in chains))
    n_judgments = write_jsonl(stage_path / "judgments.jsonl", store.to_records())
    _write_manifest(
        cfg,
        "build-chains",
        {"chains.jsonl": n_chains, "judgments.jsonl": n_judgments},
        {"mean_length": round(sum(len(c) for c in chains) / max(1, len(chains)), 3)},
    )
    print(f"build-chains: {n_chains} chains, {n_judgments} judgments")
    return 0


def stage_sample_negatives(cfg: PipelineConfig, args) -> int:
    provider = _make_provider(cfg, "sample-negatives", args.force)
    chains = _load_chains(cfg, "build-chains", "sample-negatives", args.force)
    _read_manifest(cfg, "build-chains", "sample-negatives", args.force)
    store = JudgmentStore.from_records(
        read_jsonl(_stage_dir(cfg, "build-chains") / "judgments.jsonl")
    )

    if isinstance(provider, SyntheticProvider):
        chain_source = negatives.PlantedDistractorChains(provider)
    else:
        backend = _make_scoring_backend(cfg, provider)
        chain_source = negatives.BuiltDistractorChains(
            provider, backend, cfg.build, template=_scoring_template(cfg)
        )

    out: list[ReasoningChain] = list(chains)
    skipped = 0
    for chain in chains:
        if chain.label != chainbuild.LABEL_VALID:
            continue
        pool = negatives.candidate_pool(chain, store)
        for fraction in cfg.negatives.easy_fractions:
            seed = derive_seed(cfg.negatives.seed, chain.chain_id, "easy", fraction)
            try:
                out.append(negatives.make_easy_negative(chain, fraction, pool, seed))
            except LitchainError as exc:
                logger.warning("easy negative skipped for %s: %s", chain.chain_id, exc)
                skipped += 1
        for n_breaks in cfg.negatives.hard_breaks:
            seed = derive_seed(cfg.negatives.seed, chain.chain_id, "hard", n_breaks)
            try:
                out.append(
                    negatives.make_hard_negative(
                        chain, n_breaks, pool, chain_source, seed, gold=cfg.negatives.hard_gold
                    )
                )
            except LitchainError as exc:
                logger.warning("hard negative skipped for %s: %s", chain.chain_id, exc)
                skipped += 1

    n = write_jsonl(_stage_dir(cfg, "sample-negatives") / "chains.jsonl", (c.to_dict() for c in out))
    by_label = {}
    for c in out:
        by_label[c.label] = by_label.get(c.label, 0) + 1
    _write_manifest(
        cfg, "sample-negatives", {"chains.jsonl": n}, {"by_label": by_label, "skipped": skipped}
    )
    print(f"sample-negatives: {n} chains ({by_label}), {skipped} skipped")
    return 0


def stage_window(cfg: PipelineConfig, args) -> int:
    chains = _load_chains(cfg, "sample-negatives", "window", args.force)
    out: list[ReasoningChain] = []
    for chain in chains:
        if chain.label == chainbuild.LABEL_VALID or args.all_labels:
            out.extend(dataset.window_subchains(chain, cfg.window.max_len, cfg.window.stride))
        else:
            out.append(chain)
    n = write_jsonl(_stage_dir(cfg, "window") / "chains.jsonl", (c.to_dict() for c in out))
    _write_manifest(cfg, "window", {"chains.jsonl": n}, {"input_chains": len(chains)})
    print(f"window: {len(chains)} chains -> {n} chains")
    return 0


def stage_split(cfg: PipelineConfig, args) -> int:
    chains = _load_chains(cfg, "window", "split", args.force)
    plan = dataset.split_by_review(chains, cfg.split.ratios, cfg.split.seed)
    dataset.assign_splits(chains, plan)
    stage_path = _stage_dir(cfg, "split")
    n = write_jsonl(stage_path / "chains.jsonl", (c.to_dict() for c in chains))
    write_json(stage_path / "plan.json", plan.to_dict())
    summary = dataset.split_summary(chains)
    _write_manifest(cfg, "split", {"chains.jsonl": n, "plan.json": 1}, {"summary": summary})
    print(f"split: {n} chains into " + ", ".join(f"{k}={v['n_chains']}" for k, v in summary.items()))
    return 0


def stage_emit_tasks(cfg: PipelineConfig, args) -> int:
    chains = _load_chains(cfg, "split", "emit-tasks", args.force)
    templates = inference.load_templates(cfg.templates_dir)
    stage_path = _stage_dir(cfg, "emit-tasks")
    artifacts: dict[str, int] = {}
    all_examples = []
    for task in cfg.tasks:
        examples = dataset.emit_task_examples(chains, task, templates)
        artifacts[f"{task}.jsonl"] = write_jsonl(
            stage_path / f"{task}.jsonl", (e.to_dict() for e in examples)
        )
        all_examples.extend(examples)
    report = dataset.validate_dataset(all_examples)
    write_json(stage_path / "report.json", report.to_dict())
    artifacts["report.json"] = 1
    _write_manifest(
        cfg,
        "emit-tasks",
        artifacts,
        {
            "template_ids": templates.ids(),
            "per_split": report.per_split,
            "split_seed": cfg.split.seed,
            "split_ratios": list(cfg.split.ratios),
        },
    )
    task_counts = ", ".join(f"{t}={artifacts[t + '.jsonl']}" for t in cfg.tasks)
    status = "ok" if report.ok else "VIOLATIONS"
    print(f"emit-tasks: {report.n_examples} examples ({task_counts}); validation {status}")
    if not report.ok:
        for v in report.violations[:20]:
            print(f"  violation: {v}", file=sys.stderr)
        return 1
    return 0


def stage_stats(cfg: PipelineConfig, args) -> int:
    if args.input:
        chains = [ReasoningChain.from_dict(d) for d in read_jsonl(args.input)]
    else:
        for stage in ("split", "window", "sample-negatives", "build-chains"):
            path = _stage_dir(cfg, stage) / "chains.jsonl"
            if path.exists():
                chains = [ReasoningChain.from_dict(d) for d in read_jsonl(path)]
                break
        else:
            raise StageDependencyError("build-chains", "stats")
    overall = chain_stats(chains)
    payload = {
        "overall": overall.to_dict(),
        "by_category": stats_by_category(chains),
        "by_split": dataset.split_summary(chains),
    }
    write_json(_stage_dir(cfg, "stats") / "stats.json", payload)
    _write_manifest(cfg, "stats", {"stats.json": 1})
    print(canonical_dumps(payload))
    return 0


def stage_generate(cfg: PipelineConfig, args) -> int:
    chains = _load_chains(cfg, "split", "generate", args.force)
    backend = _make_chat_backend(cfg)
    templates = inference.load_templates(cfg.templates_dir)
    template = templates.text_for("generation")
    wanted_split = args.split
    records = []
    failures = 0
    for chain in chains:
        if chain.label != chainbuild.LABEL_VALID and not args.all_labels:
            continue
        if wanted_split != "all" and chain.split != wanted_split:
            continue
        seed = derive_seed(cfg.build.seed, "generate", chain.chain_id)
        try:
            output = inference.generate_hypothesis(chain, backend, template, seed=seed)
        except ParseFailure as exc:
            records.append(
                {"chain_id": chain.chain_id, "error": "parse_failure", "raw": exc.raw, "seed": seed}
            )
            failures += 1
            continue
        records.append({"chain_id": chain.chain_id, "output": output.to_dict(), "seed": seed})
    n = write_jsonl(_stage_dir(cfg, "generate") / "generations.jsonl", records)
    _write_manifest(cfg, "generate", {"generations.jsonl": n}, {"parse_failures": failures})
    print(f"generate: {n} chains, {failures} parse failures")
    return 0


def stage_judge(cfg: PipelineConfig, args) -> int:
    _read_manifest(cfg, "generate", "judge", args.force)
    records = read_jsonl(_stage_dir(cfg, "generate") / "generations.jsonl")
    backend = _make_chat_backend(cfg)
    templates = inference.load_templates(cfg.templates_dir)
    rubric = templates.text_for("judge")
    out = []
    failures = 0
    for rec in records:
        if "output" not in rec:
            continue
        o = rec["output"]
        output = inference.GenerationOutput(
            analysis={int(k): v for k, v in o["analysis"].items()},
            rationale=o["rationale"],
            research_idea=o["research_idea"],
            hypothesis=o["hypothesis"],
            raw=o.get("raw", ""),
        )
        seed = derive_seed(cfg.build.seed, "judge", rec["chain_id"])
        try:
            scores = inference.judge_hypothesis(output, backend, rubric, seed=seed)
        except ParseFailure as exc:
            out.append({"chain_id": rec["chain_id"], "error": "parse_failure", "raw": exc.raw})
            failures += 1
            continue
        out.append({"chain_id": rec["chain_id"], "scores": scores.to_dict(), "seed": seed})
    n = write_jsonl(_stage_dir(cfg, "judge") / "scores.jsonl", out)
    means = {}
    scored = [r["scores"] for r in out if "scores" in r]
    if scored:
        for dim in inference.JUDGE_DIMENSIONS:
            means[dim] = round(sum(s[dim] for s in scored) / len(scored), 3)
    _write_manifest(cfg, "judge", {"scores.jsonl": n}, {"mean_scores": means, "parse_failures": failures})
    print(f"judge: {len(scored)} scored, {failures} parse failures, means {means}")
    return 0


def _parse_one_hop_prediction(text: str) -> int | None:
    m = re.search(r"\b([012])\b", text or "")
    return int(m.group(1)) if m else None


def _check_artifact_lineage(cfg: PipelineConfig, path: str, force: bool) -> None:
    """Refuse inputs whose sibling manifest carries a different config hash."""
    manifest_path = Path(path).parent / "manifest.json"
    if not manifest_path.exists():
        return
    manifest = read_json(manifest_path)
    if not force and manifest.get("config_hash") != cfg.config_hash():
        raise ConfigError(
            str(manifest_path),
            f"artifact lineage {manifest.get('config_hash')} does not match current "
            f"config {cfg.config_hash()}; pass --force to evaluate anyway",
        )


def stage_evaluate(cfg: PipelineConfig, args) -> int:
    _check_artifact_lineage(cfg, args.examples, args.force)
    if args.chains:
        _check_artifact_lineage(cfg, args.chains, args.force)
    examples = [dataset.TaskExample.from_dict(d) for d in read_jsonl(args.examples)]
    predictions = {r["example_id"]: r.get("output", "") for r in read_jsonl(args.predictions)}
    chains_by_id: dict[str, ReasoningChain] = {}
    if args.chains:
        chains_by_id = {
            c.chain_id: c
            for c in (ReasoningChain.from_dict(d) for d in read_jsonl(args.chains))
        }
    if args.split != "all":
        examples = [e for e in examples if e.split == args.split]
    if not examples:
        raise ConfigError("--examples", "no examples left after split filtering")

    tasks = sorted({e.task for e in examples})
    report_payload = {}
    class_rows, node_rows = [], []
    for task in tasks:
        members = [e for e in examples if e.task == task]
        if task == dataset.TASK_GENERATION:
            continue
        if task == dataset.TASK_ONE_HOP:
            golds = [e.gold for e in members]
            preds = [_parse_one_hop_prediction(predictions.get(e.example_id)) for e in members]
            report = metrics.classification_report(preds, golds)
        else:
            if not chains_by_id:
                raise ConfigError("--chains", f"required to resolve breakpoints for task {task}")
            golds, preds, pred_sets, gold_sets, lengths = [], [], [], [], []
            for e in members:
                chain = chains_by_id.get(e.chain_id)
                golds.append(e.gold["label"])
                gold_sets.append(set(e.gold["breakpoints"]))
                lengths.append(len(chain) if chain else 0)
                try:
                    label, refs = inference.parse_validation_output(
                        predictions.get(e.example_id), chain
                    )
                    preds.append(label)
                    pred_sets.append(set(refs))
                except ParseFailure:
                    preds.append(None)
                    pred_sets.append(set())
            report = metrics.classification_report(preds, golds)
            report.node_id = metrics.invalid_node_metrics(
                pred_sets, gold_sets, average=args.node_id_average
            )
            node_rows.append((task, report.node_id))
            buckets = metrics.length_bucket_report(preds, golds, lengths)
            report_payload[f"{task}_by_length"] = [b.to_dict() for b in buckets]
        class_rows.append((task, report))
        report_payload[task] = report.to_dict()

    write_json(_stage_dir(cfg, "evaluate") / "report.json", report_payload)
    _write_manifest(cfg, "evaluate", {"report.json": 1})
    print(metrics.format_report_table(class_rows))
    if node_rows:
        print()
        print(metrics.format_node_id_table(node_rows))
    return 0


STAGES = {
    "synth-graph": stage_synth_graph,
    "build-chains": stage_build_chains,
    "sample-negatives": stage_sample_negatives,
    "window": stage_window,
    "split": stage_split,
    "emit-tasks": stage_emit_tasks,
    "stats": stage_stats,
    "generate": stage_generate,
    "judge": stage_judge,
    "evaluate": stage_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="litchain",
        description="Construct, corrupt, split, emit, and evaluate literature reasoning chains.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config file (YAML)")
        p.add_argument("--force", action="store_true", help="ignore config-hash lineage checks")
        return p

    add("synth-graph", "generate the deterministic synthetic citation corpus")
    p = add("build-chains", "grow validated chains from each review's source paper")
    p.add_argument("--resume", action="store_true", help="replay cached judgments before calling the backend")
    p.add_argument("--dry-run", action="store_true", help="print planned backend call counts and exit")
    p.add_argument("--votes", type=int, default=None,
                   help="self-consistency votes per pair (overrides config)")
    add("sample-negatives", "derive easy and hard negatives from valid chains")
    p = add("window", "cut long chains into overlapping sub-chains")
    p.add_argument("--all-labels", action="store_true", help="window invalid chains too")
    add("split", "assign review-grouped train/val/test splits")
    add("emit-tasks", "serialize chains into per-task instruction examples")
    p = add("stats", "summarize a chain artifact")
    p.add_argument("--input", help="explicit chains.jsonl (default: most downstream stage output)")
    p = add("generate", "produce hypotheses for valid chains via the chat backend")
    p.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    p.add_argument("--all-labels", action="store_true", help="generate for invalid chains too")
    add("judge", "rubric-score generated hypotheses via the chat backend")
    p = add("evaluate", "score a predictions file against emitted task examples")
    p.add_argument("--examples", required=True, help="emitted task JSONL")
    p.add_argument("--predictions", required=True, help="JSONL of {example_id, output}")
    p.add_argument("--chains", help="chains.jsonl for breakpoint resolution and lengths")
    p.add_argument("--split", default="all", choices=["train", "val", "test", "all"])
    p.add_argument("--node-id-average", default="macro", choices=["macro", "micro"])

    p = sub.add_parser("validate-config", help="normalize and print a config file")
    p.add_argument("--config", required=True)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = validate_config(args.config)
        if args.command == "validate-config":
            print(canonical_dumps(cfg.to_dict()))
            return 0
        return STAGES[args.command](cfg, args)
    except LitchainError as exc:
        print(
            canonical_dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
