"""Iterative reasoning-chain construction and descriptive chain statistics.

A chain grows from a source paper: every loop fetches in-window citers of the
newest node, scores them in batches, keeps the top-k of each batch, then
appends the single best candidate across batches. Growth stops at the target
year, on a dead end, or at the length cap.
"""

from __future__ import annotations

import logging
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .corpus import Paper, chunk_papers, fetch_citing
from .errors import EmptyCorpus, ParseFailure
from .jsonl import derive_seed
from .scoring import (
    JudgmentStore,
    RelevanceJudgment,
    ScoringBackend,
    majority_vote,
    relevance_impact,
    score_relevance,
)

logger = logging.getLogger(__name__)

CHAIN_SCHEMA_VERSION = 1

LABEL_VALID = "valid"
LABEL_INVALID_EASY = "invalid_easy"
LABEL_INVALID_HARD = "invalid_hard"
CHAIN_LABELS = (LABEL_VALID, LABEL_INVALID_EASY, LABEL_INVALID_HARD)

SPLITS = ("train", "val", "test")
SPLIT_UNASSIGNED = "unassigned"


@dataclass
class ChainNode:
    """One chain position: the paper plus its judged link to the previous node."""

    paper: Paper
    relevance_to_prev: int | None = None  # None only for the source node
    explanation: str | None = None

    def to_dict(self) -> dict:
        return {
            "paper": self.paper.to_dict(),
            "relevance_to_prev": self.relevance_to_prev,
            "explanation": self.explanation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainNode":
        rel = d.get("relevance_to_prev")
        return cls(
            paper=Paper.from_dict(d["paper"]),
            relevance_to_prev=None if rel is None else int(rel),
            explanation=d.get("explanation"),
        )


@dataclass
class ReasoningChain:
    """Ordered, timestamped paper sequence with label and gold breakpoints."""

    chain_id: str
    nodes: list[ChainNode]
    label: str = LABEL_VALID
    breakpoints: set[str] = field(default_factory=set)
    review_id: str | None = None
    disruption_level: float | None = None
    n_breaks: int | None = None
    target_year: int | None = None
    split: str = SPLIT_UNASSIGNED

    def __post_init__(self):
        self.breakpoints = set(self.breakpoints)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def source(self) -> Paper:
        return self.nodes[0].paper

    @property
    def terminal(self) -> Paper:
        return self.nodes[-1].paper

    @property
    def node_ids(self) -> list[str]:
        return [n.paper.id for n in self.nodes]

    def validate(self) -> None:
        if not self.nodes:
            raise ValueError(f"chain {self.chain_id}: empty")
        if self.label not in CHAIN_LABELS:
            raise ValueError(f"chain {self.chain_id}: unknown label {self.label!r}")
        if self.nodes[0].relevance_to_prev is not None:
            raise ValueError(f"chain {self.chain_id}: source node must not carry a relevance")
        years = [n.paper.year for n in self.nodes]
        if any(a > b for a, b in zip(years, years[1:])):
            raise ValueError(f"chain {self.chain_id}: years not non-decreasing: {years}")
        ids = self.node_ids
        if len(set(ids)) != len(ids):
            raise ValueError(f"chain {self.chain_id}: repeated paper")
        for node in self.nodes[1:]:
            if node.relevance_to_prev is None:
                raise ValueError(f"chain {self.chain_id}: node {node.paper.id} missing relevance")
        if self.label == LABEL_VALID:
            if self.breakpoints:
                raise ValueError(f"chain {self.chain_id}: valid chain with breakpoints")
            if any(n.relevance_to_prev not in (1, 2) for n in self.nodes[1:]):
                raise ValueError(f"chain {self.chain_id}: valid chain with a non-{{1,2}} link")
        else:
            if not self.breakpoints:
                raise ValueError(f"chain {self.chain_id}: invalid chain without breakpoints")
            by_id = {n.paper.id: n for n in self.nodes}
            for bp in self.breakpoints:
                node = by_id.get(bp)
                if node is None:
                    raise ValueError(f"chain {self.chain_id}: breakpoint {bp} not in chain")
                if node.relevance_to_prev != 0:
                    raise ValueError(
                        f"chain {self.chain_id}: breakpoint {bp} has relevance "
                        f"{node.relevance_to_prev}, expected 0"
                    )

    def to_dict(self) -> dict:
        return {
            "schema_version": CHAIN_SCHEMA_VERSION,
            "chain_id": self.chain_id,
            "label": self.label,
            "breakpoints": sorted(self.breakpoints),
            "review_id": self.review_id,
            "disruption_level": self.disruption_level,
            "n_breaks": self.n_breaks,
            "target_year": self.target_year,
            "split": self.split,
            "nodes": [n.to_dict() for n in self.nodes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReasoningChain":
        return cls(
            chain_id=d["chain_id"],
            nodes=[ChainNode.from_dict(n) for n in d["nodes"]],
            label=d.get("label", LABEL_VALID),
            breakpoints=set(d.get("breakpoints", ())),
            review_id=d.get("review_id"),
            disruption_level=d.get("disruption_level"),
            n_breaks=d.get("n_breaks"),
            target_year=d.get("target_year"),
            split=d.get("split", SPLIT_UNASSIGNED),
        )


@dataclass
class BuildConfig:
    """Knobs for the chain-growth loop."""

    target_year: int | None = None
    chunk_size: int = 10
    top_k: int = 3
    max_length: int = 28
    policy: str = "latest"
    seed: int = 0
    votes: int = 1

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if self.votes < 1:
            raise ValueError("votes must be >= 1")


def _rank(
    scored: Sequence[tuple[Paper, RelevanceJudgment]], k: int
) -> list[tuple[Paper, RelevanceJudgment]]:
    """Rank score-{1,2} candidates by relevance-impact, citations, id; keep k."""
    eligible = [(p, j) for p, j in scored if j.score in (1, 2)]
    if not eligible:
        return []
    max_cites = max(p.citation_count for p, _ in eligible)
    keyed = sorted(
        eligible,
        key=lambda pj: (
            -relevance_impact(pj[1].score, pj[0].citation_count, max_cites),
            -pj[0].citation_count,
            pj[0].id,
        ),
    )
    return keyed[:k]


def select_top(
    chunk_judgments: Sequence[tuple[Paper, RelevanceJudgment]], k: int
) -> list[Paper]:
    """Top-k papers of one chunk; score-0 papers are never ranked."""
    sources = {j.source_id for _, j in chunk_judgments}
    if len(sources) > 1:
        raise ValueError(f"chunk judgments span multiple sources: {sorted(sources)}")
    return [p for p, _ in _rank(chunk_judgments, k)]


def _score_paper(
    source: Paper,
    paper: Paper,
    backend: ScoringBackend,
    config: BuildConfig,
    store: JudgmentStore | None,
    template: str | None,
) -> tuple[RelevanceJudgment | None, list[RelevanceJudgment], list[int]]:
    """Majority-vote judgment for one candidate.

    Returns (aggregate or None, fresh per-seed votes, failed seeds). The store
    is only read here; writes happen in the caller, in input order, so the
    judgment log stays deterministic under concurrent scoring.
    """
    votes: list[RelevanceJudgment] = []
    fresh: list[RelevanceJudgment] = []
    failed: list[int] = []
    for v in range(config.votes):
        seed = derive_seed(config.seed, source.id, paper.id, v)
        cached = store.lookup(source.id, paper.id, seed) if store is not None else None
        if cached is not None:
            votes.append(cached)
            continue
        if store is not None and store.is_failure(source.id, paper.id, seed):
            continue
        try:
            if template is None:
                judgment = score_relevance(source, paper, backend, seed)
            else:
                judgment = score_relevance(source, paper, backend, seed, template=template)
        except ParseFailure:
            logger.warning("unparsable judgment for (%s, %s); vote skipped", source.id, paper.id)
            failed.append(seed)
            continue
        votes.append(judgment)
        fresh.append(judgment)
    if not votes:
        return None, fresh, failed
    final = majority_vote(votes)
    winning = next(j for j in votes if j.score == final)
    if len(votes) > 1:
        # Aggregate judgment: modal score with the first agreeing explanation.
        winning = RelevanceJudgment(
            source_id=source.id,
            target_id=paper.id,
            score=final,
            explanation=winning.explanation,
            echoed_title=winning.echoed_title,
            seed=votes[0].seed,
            raw=winning.raw,
        )
    return winning, fresh, failed


def build_chain(
    source: Paper,
    provider,
    backend: ScoringBackend,
    config: BuildConfig,
    store: JudgmentStore | None = None,
    chain_id: str | None = None,
    template: str | None = None,
) -> ReasoningChain:
    """Grow one validated chain from `source` toward `config.target_year`.

    Every fetched citer is scored against the newest node (fanning out up to
    the backend's max_concurrent); each batch keeps its top-k; the single best
    candidate across batches is appended. Papers already in the chain are
    skipped. All judgments (including score-0 rejections) go into `store` so
    negative sampling can reuse them.
    """
    if config.target_year is None:
        raise ValueError("build_chain needs an explicit target_year")
    if not source.abstract:
        raise ValueError(f"source {source.id} has no abstract")
    if config.target_year < source.year:
        raise ValueError("target_year must be >= source year")

    cid = chain_id or f"{source.review_id or 'chain'}/{source.id}"
    nodes = [ChainNode(paper=source)]
    visited = {source.id}
    hop = 0

    while True:
        current = nodes[-1].paper
        if current.year >= config.target_year:
            break
        if len(nodes) >= config.max_length:
            logger.info("chain %s hit max_length %d", cid, config.max_length)
            break
        citers = [p for p in fetch_citing(current, provider) if p.id not in visited]
        if not citers:
            break
        hop += 1

        max_workers = getattr(backend.config, "max_concurrent", 1)
        if max_workers > 1 and len(citers) > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                results = list(
                    pool.map(
                        lambda p: _score_paper(current, p, backend, config, store, template),
                        citers,
                    )
                )
        else:
            results = [_score_paper(current, p, backend, config, store, template) for p in citers]

        aggregate: dict[str, RelevanceJudgment] = {}
        for paper, (agg, fresh, failed) in zip(citers, results):
            if store is not None:
                for judgment in fresh:
                    store.record(judgment, paper, cid, hop)
                for seed in failed:
                    store.record_failure(current.id, paper.id, seed)
            if agg is not None:
                aggregate[paper.id] = agg

        winners: list[tuple[Paper, RelevanceJudgment]] = []
        for chunk in chunk_papers(citers, config.chunk_size):
            chunk_scored = [(p, aggregate[p.id]) for p in chunk if p.id in aggregate]
            winners.extend(_rank(chunk_scored, config.top_k))
        best = _rank(winners, 1)
        if not best:
            break
        paper, judgment = best[0]
        nodes.append(
            ChainNode(paper=paper, relevance_to_prev=judgment.score, explanation=judgment.explanation)
        )
        visited.add(paper.id)

    chain = ReasoningChain(
        chain_id=cid,
        nodes=nodes,
        label=LABEL_VALID,
        review_id=source.review_id,
        target_year=config.target_year,
    )
    chain.validate()
    return chain


@dataclass
class ChainStats:
    count: int
    mean_length: float
    min_length: int
    max_length: int
    mean_score2_fraction: float
    citations_min: int
    citations_max: int
    citations_median: float
    terminal_year_fraction: float
    terminal_years: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_length": self.mean_length,
            "min_length": self.min_length,
            "max_length": self.max_length,
            "mean_score2_fraction": self.mean_score2_fraction,
            "cumulative_citations": {
                "min": self.citations_min,
                "max": self.citations_max,
                "median": self.citations_median,
            },
            "terminal_year_fraction": self.terminal_year_fraction,
            "terminal_years": list(self.terminal_years),
        }


def score2_fraction(chain: ReasoningChain) -> float | None:
    """Fraction of non-source nodes scored 2; None for single-node chains."""
    tail = chain.nodes[1:]
    if not tail:
        return None
    return sum(1 for n in tail if n.relevance_to_prev == 2) / len(tail)


def chain_stats(
    chains: Sequence[ReasoningChain], terminal_years: Iterable[int] = (2023, 2024)
) -> ChainStats:
    """Descriptive statistics over a chain corpus."""
    if not chains:
        raise EmptyCorpus("no chains to summarize")
    years = frozenset(terminal_years)
    lengths = [len(c) for c in chains]
    fractions = [f for f in (score2_fraction(c) for c in chains) if f is not None]
    totals = [sum(n.paper.citation_count for n in c.nodes) for c in chains]
    return ChainStats(
        count=len(chains),
        mean_length=sum(lengths) / len(lengths),
        min_length=min(lengths),
        max_length=max(lengths),
        mean_score2_fraction=(sum(fractions) / len(fractions)) if fractions else 0.0,
        citations_min=min(totals),
        citations_max=max(totals),
        citations_median=float(statistics.median(totals)),
        terminal_year_fraction=sum(1 for c in chains if c.terminal.year in years) / len(chains),
        terminal_years=tuple(sorted(years)),
    )


def stats_by_category(chains: Sequence[ReasoningChain]) -> list[dict]:
    """Per-(label, disruption) summary rows, the shape of a chain-statistics table."""
    groups: dict[tuple, list[ReasoningChain]] = {}
    for c in chains:
        key = (c.label, c.disruption_level if c.label == LABEL_INVALID_EASY else None)
        groups.setdefault(key, []).append(c)
    rows = []
    for (label, disruption) in sorted(groups, key=lambda k: (k[0], k[1] is not None, k[1] or 0.0)):
        members = groups[(label, disruption)]
        stats = chain_stats(members)
        rows.append(
            {
                "label": label,
                "disruption_level": disruption,
                "count": stats.count,
                "mean_length": round(stats.mean_length, 2),
                "min_length": stats.min_length,
                "max_length": stats.max_length,
                "mean_score2_fraction": round(stats.mean_score2_fraction, 2),
            }
        )
    return rows
