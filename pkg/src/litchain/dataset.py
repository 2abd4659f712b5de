"""Dataset assembly: sub-chain windowing, leak-free splitting, task serialization.

Splits are assigned per review id so no review ever spans two splits; task
records are self-contained JSONL rows carrying the rendered prompt, the gold,
and full provenance.
"""

from __future__ import annotations

import logging
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .chainbuild import (
    LABEL_VALID,
    SPLIT_UNASSIGNED,
    SPLITS,
    ChainNode,
    ReasoningChain,
)
from .errors import InsufficientGroups, InvalidStride, LeakageError
from .inference import TemplateSet, render_prompt

logger = logging.getLogger(__name__)

EXAMPLE_SCHEMA_VERSION = 1

TASK_ONE_HOP = "one_hop"
TASK_MULTI_HOP_AGNOSTIC = "multi_hop_agnostic"
TASK_MULTI_HOP_CONTEXTUAL = "multi_hop_contextual"
TASK_GENERATION = "generation"
TASK_KINDS = (TASK_ONE_HOP, TASK_MULTI_HOP_AGNOSTIC, TASK_MULTI_HOP_CONTEXTUAL, TASK_GENERATION)

DEFAULT_RATIOS = (0.70, 0.15, 0.15)
DEFAULT_WINDOW_MAX_LEN = 5
DEFAULT_WINDOW_STRIDE = 2


@dataclass
class TaskExample:
    """One serialized instruction record for a specific task kind."""

    example_id: str
    task: str
    prompt: str
    gold: object  # int score | {"label", "breakpoints"} | None for generation
    chain_id: str
    review_id: str | None
    split: str = SPLIT_UNASSIGNED
    chain_label: str = LABEL_VALID
    terminal_year: int | None = None
    template_id: str | None = None

    def to_dict(self) -> dict:
        return {
            "schema_version": EXAMPLE_SCHEMA_VERSION,
            "example_id": self.example_id,
            "task": self.task,
            "prompt": self.prompt,
            "gold": self.gold,
            "chain_id": self.chain_id,
            "review_id": self.review_id,
            "split": self.split,
            "chain_label": self.chain_label,
            "terminal_year": self.terminal_year,
            "template_id": self.template_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskExample":
        return cls(
            example_id=d["example_id"],
            task=d["task"],
            prompt=d["prompt"],
            gold=d.get("gold"),
            chain_id=d["chain_id"],
            review_id=d.get("review_id"),
            split=d.get("split", SPLIT_UNASSIGNED),
            chain_label=d.get("chain_label", LABEL_VALID),
            terminal_year=d.get("terminal_year"),
            template_id=d.get("template_id"),
        )


@dataclass
class SplitPlan:
    """Review-id to split assignment under fixed ratios and seed."""

    ratios: tuple[float, float, float]
    seed: int
    assignment: dict[str, str]

    def to_dict(self) -> dict:
        return {
            "ratios": list(self.ratios),
            "seed": self.seed,
            "assignment": dict(sorted(self.assignment.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(tuple(d["ratios"]), int(d["seed"]), dict(d["assignment"]))


def window_subchains(
    chain: ReasoningChain,
    max_len: int = DEFAULT_WINDOW_MAX_LEN,
    stride: int = DEFAULT_WINDOW_STRIDE,
) -> list[ReasoningChain]:
    """Overlapping sub-chains of up to `max_len` nodes, plus the original chain.

    Short chains pass through untouched. Windows start at multiples of
    `stride`; a final right-aligned window covers the tail. A window's first
    node becomes a source (its incoming link falls outside the window), so a
    breakpoint is inherited only when it sits at window position >= 1; windows
    inheriting none are relabeled valid.
    """
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    n = len(chain)
    if n <= max_len:
        return [chain]

    offsets = list(range(0, n - max_len + 1, stride))
    if offsets[-1] != n - max_len:
        offsets.append(n - max_len)

    windows = []
    for off in offsets:
        segment = chain.nodes[off : off + max_len]
        nodes = [
            ChainNode(paper=segment[0].paper, relevance_to_prev=None, explanation=None)
        ] + [
            ChainNode(paper=nd.paper, relevance_to_prev=nd.relevance_to_prev, explanation=nd.explanation)
            for nd in segment[1:]
        ]
        inherited = {nd.paper.id for nd in segment[1:]} & chain.breakpoints
        label = chain.label if inherited else LABEL_VALID
        window = ReasoningChain(
            chain_id=f"{chain.chain_id}::w{off}",
            nodes=nodes,
            label=label,
            breakpoints=inherited,
            review_id=chain.review_id,
            disruption_level=chain.disruption_level if inherited else None,
            n_breaks=chain.n_breaks if inherited else None,
            target_year=chain.target_year,
            split=chain.split,
        )
        # Tail-gold hard negatives mark coherent nodes as breakpoints; the
        # strict validator only applies when breakpoints are score-0 junctions.
        if all(nd.relevance_to_prev == 0 for nd in segment[1:] if nd.paper.id in inherited):
            window.validate()
        windows.append(window)
    return windows + [chain]


def split_by_review(
    chains: Sequence[ReasoningChain],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitPlan:
    """Review-grouped assignment targeting the ratios by chain count.

    Review ids are shuffled by seed and greedily sent to the split with the
    largest remaining chain-count deficit; a deterministic repair pass then
    moves whole groups while that shrinks the worst split deviation. No
    review id ever spans two splits.
    """
    if len(ratios) != len(SPLITS):
        raise ValueError(f"need {len(SPLITS)} ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be non-negative and sum to 1, got {ratios}")
    group_sizes: dict[str, int] = Counter()
    for chain in chains:
        if not chain.review_id:
            raise ValueError(f"chain {chain.chain_id} carries no review_id")
        group_sizes[chain.review_id] += 1
    active_splits = [s for s, r in zip(SPLITS, ratios) if r > 0]
    if len(group_sizes) < len(active_splits):
        raise InsufficientGroups(
            f"{len(group_sizes)} review groups cannot fill {len(active_splits)} splits"
        )

    total = sum(group_sizes.values())
    targets = {s: r * total for s, r in zip(SPLITS, ratios)}
    deficits = dict(targets)
    order = sorted(group_sizes)
    random.Random(seed).shuffle(order)

    assignment: dict[str, str] = {}
    for review_id in order:
        split = max(active_splits, key=lambda s: (deficits[s], -SPLITS.index(s)))
        assignment[review_id] = split
        deficits[split] -= group_sizes[review_id]

    _repair_split(assignment, group_sizes, targets, active_splits, order)
    assigned = set(assignment.values())
    for split in active_splits:
        if split not in assigned:
            logger.warning(
                "split %r ended up empty: %d review groups cannot fill the ratios closely",
                split,
                len(group_sizes),
            )
    return SplitPlan(ratios=tuple(ratios), seed=seed, assignment=assignment)


def _repair_split(assignment, group_sizes, targets, active_splits, order) -> None:
    """Move single groups between splits while the worst deviation shrinks."""
    counts = Counter()
    for review_id, split in assignment.items():
        counts[split] += group_sizes[review_id]

    def worst(c: Counter) -> float:
        return max(abs(c[s] - targets[s]) for s in active_splits)

    while True:
        current = worst(counts)
        best = None
        for review_id in order:
            size = group_sizes[review_id]
            source = assignment[review_id]
            for dest in active_splits:
                if dest == source:
                    continue
                counts[source] -= size
                counts[dest] += size
                candidate = worst(counts)
                counts[source] += size
                counts[dest] -= size
                if candidate < current - 1e-9 and (best is None or candidate < best[0] - 1e-12):
                    best = (candidate, review_id, dest)
        if best is None:
            return
        _, review_id, dest = best
        counts[assignment[review_id]] -= group_sizes[review_id]
        counts[dest] += group_sizes[review_id]
        assignment[review_id] = dest


def assign_splits(chains: Iterable[ReasoningChain], plan: SplitPlan) -> None:
    for chain in chains:
        chain.split = plan.assignment[chain.review_id]


def split_summary(chains: Sequence[ReasoningChain], terminal_years=(2023, 2024)) -> dict:
    """Per-split label counts and the fraction of chains ending in the given years."""
    years = frozenset(terminal_years)
    summary: dict[str, dict] = {}
    for split in (*SPLITS, SPLIT_UNASSIGNED):
        members = [c for c in chains if c.split == split]
        if not members:
            continue
        by_label = Counter(c.label for c in members)
        recent_valid = sum(
            1 for c in members if c.label == LABEL_VALID and c.terminal.year in years
        )
        summary[split] = {
            "n_chains": len(members),
            "by_label": dict(sorted(by_label.items())),
            "terminal_recent_fraction": sum(1 for c in members if c.terminal.year in years)
            / len(members),
            "valid_recent_fraction": recent_valid / len(members),
        }
    return summary


def _pair_chain(chain: ReasoningChain, idx: int) -> ReasoningChain:
    """Two-node view (predecessor as source) used to render one-hop prompts."""
    prev, node = chain.nodes[idx - 1], chain.nodes[idx]
    return ReasoningChain(
        chain_id=f"{chain.chain_id}#p{idx}",
        nodes=[
            ChainNode(paper=prev.paper),
            ChainNode(paper=node.paper, relevance_to_prev=node.relevance_to_prev,
                      explanation=node.explanation),
        ],
        label=LABEL_VALID if node.relevance_to_prev in (1, 2) else chain.label,
        breakpoints=set() if node.relevance_to_prev in (1, 2) else {node.paper.id},
        review_id=chain.review_id,
        target_year=chain.target_year,
    )


def emit_task_examples(
    chains: Sequence[ReasoningChain],
    task: str,
    templates: TemplateSet,
) -> list[TaskExample]:
    """Serialize chains into instruction examples for one task kind."""
    if task not in TASK_KINDS:
        raise ValueError(f"unknown task {task!r}; expected one of {TASK_KINDS}")
    template = templates.text_for(task)
    template_id = templates.id_for(task)
    examples: list[TaskExample] = []

    for chain in chains:
        common = dict(
            chain_id=chain.chain_id,
            review_id=chain.review_id,
            split=chain.split,
            chain_label=chain.label,
            terminal_year=chain.terminal.year,
            template_id=template_id,
        )
        if task == TASK_ONE_HOP:
            for idx in range(1, len(chain)):
                node = chain.nodes[idx]
                if node.relevance_to_prev is None:
                    logger.warning(
                        "SkippedPair: chain %s position %d has no stored judgment",
                        chain.chain_id,
                        idx,
                    )
                    continue
                pair = _pair_chain(chain, idx)
                examples.append(
                    TaskExample(
                        example_id=f"{chain.chain_id}::one_hop::{idx}",
                        task=task,
                        prompt=render_prompt(template, pair, task),
                        gold=node.relevance_to_prev,
                        **common,
                    )
                )
        elif task in (TASK_MULTI_HOP_AGNOSTIC, TASK_MULTI_HOP_CONTEXTUAL):
            gold = {
                "label": "valid" if chain.label == LABEL_VALID else "invalid",
                "breakpoints": sorted(chain.breakpoints),
            }
            examples.append(
                TaskExample(
                    example_id=f"{chain.chain_id}::{task}",
                    task=task,
                    prompt=render_prompt(template, chain, task),
                    gold=gold,
                    **common,
                )
            )
        else:  # generation: prompt-only, valid chains as scaffolds
            if chain.label != LABEL_VALID:
                continue
            examples.append(
                TaskExample(
                    example_id=f"{chain.chain_id}::generation",
                    task=task,
                    prompt=render_prompt(template, chain, task),
                    gold=None,
                    **common,
                )
            )
    return examples


@dataclass
class DatasetReport:
    n_examples: int
    per_split: dict
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "n_examples": self.n_examples,
            "per_split": self.per_split,
            "violations": list(self.violations),
            "ok": self.ok,
        }


def validate_dataset(
    examples: Sequence[TaskExample], terminal_years=(2023, 2024)
) -> DatasetReport:
    """No-leakage and schema consistency check over emitted examples.

    Raises LeakageError as soon as a review id spans two splits; other schema
    problems are collected into the returned report.
    """
    years = frozenset(terminal_years)
    review_splits: dict[str, set[str]] = defaultdict(set)
    violations: list[str] = []
    per_split: dict[str, dict] = {}

    for ex in examples:
        if ex.review_id:
            review_splits[ex.review_id].add(ex.split)
        if ex.task not in TASK_KINDS:
            violations.append(f"{ex.example_id}: unknown task {ex.task!r}")
        if ex.split not in SPLITS:
            violations.append(f"{ex.example_id}: unassigned or unknown split {ex.split!r}")
        if not ex.prompt:
            violations.append(f"{ex.example_id}: empty prompt")
        if ex.task == TASK_GENERATION:
            if ex.gold is not None:
                violations.append(f"{ex.example_id}: generation example carries gold")
        elif ex.task == TASK_ONE_HOP:
            if ex.gold not in (0, 1, 2):
                violations.append(f"{ex.example_id}: one_hop gold {ex.gold!r} not a score")
        else:
            gold = ex.gold if isinstance(ex.gold, dict) else {}
            label = gold.get("label")
            breakpoints = gold.get("breakpoints", [])
            if label not in ("valid", "invalid"):
                violations.append(f"{ex.example_id}: bad validity label {label!r}")
            elif (label == "valid") != (not breakpoints):
                violations.append(
                    f"{ex.example_id}: label {label!r} inconsistent with breakpoints {breakpoints}"
                )

    for review_id, splits in sorted(review_splits.items()):
        concrete = {s for s in splits if s in SPLITS}
        if len(concrete) > 1:
            raise LeakageError(review_id, tuple(concrete))

    chains_seen: dict[str, tuple[str, str, int | None]] = {}
    for ex in examples:
        chains_seen.setdefault(ex.chain_id, (ex.split, ex.chain_label, ex.terminal_year))
    for split in SPLITS:
        members = [ex for ex in examples if ex.split == split]
        if not members:
            continue
        split_chains = {
            cid: meta for cid, meta in chains_seen.items() if meta[0] == split
        }
        n_chains = len(split_chains)
        n_valid_recent = sum(
            1
            for _, label, year in split_chains.values()
            if label == LABEL_VALID and year in years
        )
        per_split[split] = {
            "n_examples": len(members),
            "by_task": dict(sorted(Counter(ex.task for ex in members).items())),
            "by_chain_label": dict(sorted(Counter(ex.chain_label for ex in members).items())),
            "n_chains": n_chains,
            "valid_recent_chain_fraction": (n_valid_recent / n_chains) if n_chains else 0.0,
        }

    return DatasetReport(
        n_examples=len(examples), per_split=per_split, violations=violations
    )
