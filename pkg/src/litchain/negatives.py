"""Controlled chain corruption: easy node swaps and hard random breaks.

Both corruptions are pure functions of (chain, pool, seed) and keep exact gold
breakpoint bookkeeping: a breakpoint is a node whose recorded link relevance
is 0, and the chain label tells which corruption family produced it.
"""

from __future__ import annotations

import logging
import math
import random
from dataclasses import dataclass, field
from typing import Protocol, Sequence

from .chainbuild import (
    LABEL_INVALID_EASY,
    LABEL_INVALID_HARD,
    LABEL_VALID,
    ChainNode,
    ReasoningChain,
)
from .corpus import Paper
from .errors import ChainTooShort, DistractorUnavailable, PoolExhausted
from .scoring import JudgmentStore, RelevanceJudgment, majority_vote

logger = logging.getLogger(__name__)

EASY_FRACTION_MIN = 0.1
EASY_FRACTION_MAX = 0.5

HARD_GOLD_JUNCTION = "junction"
HARD_GOLD_TAIL = "tail"


@dataclass
class DistractorPool:
    """Relevance-0 papers bucketed by citing year, harvested during construction."""

    candidates: dict[int, list[Paper]] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)  # paper id -> origin note
    judgments: dict[str, RelevanceJudgment] = field(default_factory=dict)

    def add(self, paper: Paper, judgment: RelevanceJudgment, origin: str) -> None:
        bucket = self.candidates.setdefault(paper.year, [])
        if all(p.id != paper.id for p in bucket):
            bucket.append(paper)
            bucket.sort(key=lambda p: p.id)
        self.provenance[paper.id] = origin
        self.judgments[paper.id] = judgment

    def year_counts(self) -> dict[int, int]:
        return {year: len(papers) for year, papers in sorted(self.candidates.items())}

    def by_year(self, year: int, widen: bool = True) -> list[Paper]:
        """Candidates of `year`, then +/-1-year neighbours when widening; deterministic order."""
        exact = list(self.candidates.get(year, ()))
        if not widen:
            return exact
        near = list(self.candidates.get(year - 1, ())) + list(self.candidates.get(year + 1, ()))
        return exact + sorted(near, key=lambda p: (abs(p.year - year), p.id))


def candidate_pool(chain: ReasoningChain, store: JudgmentStore) -> DistractorPool:
    """Score-0 papers rejected while this chain was built, deduplicated against it.

    Judgments are aggregated per pair by majority vote, so a paper enters the
    pool only when its final verdict was 0.
    """
    pool = DistractorPool()
    members = set(chain.node_ids)
    by_pair: dict[tuple[str, str], list] = {}
    for stored in store.for_chain(chain.chain_id):
        by_pair.setdefault((stored.judgment.source_id, stored.judgment.target_id), []).append(stored)
    for (source_id, target_id), entries in sorted(by_pair.items()):
        if target_id in members:
            continue
        final = majority_vote([e.judgment for e in entries])
        if final != 0:
            continue
        first = entries[0]
        pool.add(first.paper, first.judgment, origin=f"{chain.chain_id}@hop{first.hop}")
    return pool


class DistractorChainSource(Protocol):
    """Supplies a coherent relevance-linked sub-chain rooted at a pool member."""

    def sub_chain(self, root_id: str) -> list[tuple[Paper, int | None, str | None]] | None:
        """Chain starting at root as (paper, relevance_to_prev, explanation); the
        root entry's relevance is ignored (it becomes the junction's 0)."""


class PlantedDistractorChains:
    """Distractor-chain source backed by a synthetic provider's planted chains."""

    def __init__(self, provider):
        self._provider = provider

    def sub_chain(self, root_id: str):
        ids = self._provider.distractor_chains.get(root_id)
        if not ids:
            return None
        out = []
        prev = None
        for pid in ids:
            paper = self._provider.get_paper(pid)
            if prev is None:
                out.append((paper, None, None))
            else:
                score = self._provider.labels.get((prev.id, paper.id), 0)
                out.append((paper, score, f"planted relevance {score} link."))
            prev = paper
        return out


class BuiltDistractorChains:
    """Distractor-chain source that grows a chain from the pool member itself.

    Running the normal build loop from a score-0 root guarantees the tail is
    internally coherent while staying unrelated to the parent chain. Results
    are cached per root id.
    """

    def __init__(self, provider, backend, build_config, template: str | None = None):
        self._provider = provider
        self._backend = backend
        self._config = build_config
        self._template = template
        self._cache: dict[str, list | None] = {}

    def sub_chain(self, root_id: str):
        if root_id in self._cache:
            return self._cache[root_id]
        from .chainbuild import build_chain  # local import avoids a cycle

        try:
            root = self._provider.get_paper(root_id)
            chain = build_chain(
                root,
                self._provider,
                self._backend,
                self._config,
                chain_id=f"distractor/{root_id}",
                template=self._template,
            )
        except Exception as exc:  # a dead root just means no usable sub-chain
            logger.warning("could not grow distractor chain from %s: %s", root_id, exc)
            self._cache[root_id] = None
            return None
        entries = [
            (node.paper, node.relevance_to_prev, node.explanation) for node in chain.nodes
        ]
        self._cache[root_id] = entries
        return entries


def _copy_nodes(nodes: Sequence[ChainNode]) -> list[ChainNode]:
    return [
        ChainNode(paper=n.paper, relevance_to_prev=n.relevance_to_prev, explanation=n.explanation)
        for n in nodes
    ]


def easy_replacement_count(fraction: float, n_intermediate: int) -> int:
    """ceil(fraction * m) with a floor of one: a disruption must disrupt something."""
    return max(1, math.ceil(fraction * n_intermediate))


def make_easy_negative(
    chain: ReasoningChain,
    fraction: float,
    pool: DistractorPool,
    seed: int,
    chain_id: str | None = None,
) -> ReasoningChain:
    """Swap same-year score-0 papers into intermediate positions.

    Exactly max(1, ceil(fraction * m)) intermediates are replaced; source and
    terminal never move; replaced node ids become the gold breakpoints.
    """
    if chain.label != LABEL_VALID:
        raise ValueError(f"can only corrupt valid chains, got {chain.label}")
    if not (EASY_FRACTION_MIN <= fraction <= EASY_FRACTION_MAX):
        raise ValueError(
            f"fraction must be within [{EASY_FRACTION_MIN}, {EASY_FRACTION_MAX}], got {fraction}"
        )
    n = len(chain)
    if n < 3:
        raise ChainTooShort(f"chain {chain.chain_id} has no intermediate nodes")
    intermediates = list(range(1, n - 1))
    k = easy_replacement_count(fraction, len(intermediates))
    rng = random.Random(seed)
    positions = sorted(rng.sample(intermediates, k))

    nodes = _copy_nodes(chain.nodes)
    used = set(chain.node_ids)
    breakpoints: set[str] = set()
    for pos in positions:
        displaced = nodes[pos].paper
        prev_year = nodes[pos - 1].paper.year
        next_year = nodes[pos + 1].paper.year
        chosen = None
        for candidate in pool.by_year(displaced.year):
            if candidate.id in used:
                continue
            if not (prev_year <= candidate.year <= next_year):
                continue
            chosen = candidate
            break
        if chosen is None:
            raise PoolExhausted(
                f"no same-year (+/-1) pool candidate for position {pos} "
                f"(year {displaced.year}) of chain {chain.chain_id}"
            )
        judgment = pool.judgments.get(chosen.id)
        nodes[pos] = ChainNode(
            paper=chosen,
            relevance_to_prev=0,
            explanation=judgment.explanation if judgment else "irrelevant swap-in.",
        )
        used.add(chosen.id)
        breakpoints.add(chosen.id)

    corrupted = ReasoningChain(
        chain_id=chain_id or f"{chain.chain_id}~easy{int(round(fraction * 100))}",
        nodes=nodes,
        label=LABEL_INVALID_EASY,
        breakpoints=breakpoints,
        review_id=chain.review_id,
        disruption_level=fraction,
        target_year=chain.target_year,
    )
    corrupted.validate()
    return corrupted


def _break_positions(rng: random.Random, n: int, n_breaks: int) -> list[int]:
    """Random intermediate break positions; two breaks are never adjacent."""
    intermediates = list(range(1, n - 1))
    if n_breaks == 1:
        return [rng.choice(intermediates)]
    pairs = [
        (i, j)
        for i in intermediates
        for j in intermediates
        if j >= i + 2
    ]
    if not pairs:
        raise DistractorUnavailable(f"chain of length {n} has no non-adjacent break pair")
    return list(pairs[rng.randrange(len(pairs))])


def make_hard_negative(
    chain: ReasoningChain,
    n_breaks: int,
    pool: DistractorPool,
    distractor_chains: DistractorChainSource,
    seed: int,
    gold: str = HARD_GOLD_JUNCTION,
    chain_id: str | None = None,
) -> ReasoningChain:
    """Introduce 1 or 2 random breaks, each resuming as a coherent distractor chain.

    At each break position the node is replaced by a score-0 junction from the
    pool; positions up to the next break are filled by that junction's own
    chain; after the last break the distractor chain runs until it reaches the
    target year (so the corrupted chain's length is plausible but not pinned
    to the parent's). Years stay non-decreasing end to end.
    """
    if chain.label != LABEL_VALID:
        raise ValueError(f"can only corrupt valid chains, got {chain.label}")
    if n_breaks not in (1, 2):
        raise ValueError(f"n_breaks must be 1 or 2, got {n_breaks}")
    n = len(chain)
    if n < 4:
        raise ChainTooShort(f"hard negatives need chains of length >= 4, got {n}")
    if gold not in (HARD_GOLD_JUNCTION, HARD_GOLD_TAIL):
        raise ValueError(f"unknown gold mode {gold!r}")

    rng = random.Random(seed)
    positions = sorted(_break_positions(rng, n, n_breaks))
    segment_bounds = positions + [None]  # None = run to the target year

    nodes = _copy_nodes(chain.nodes[: positions[0]])
    used = set(chain.node_ids)
    breakpoints: set[str] = set()
    tail_ids: set[str] = set()

    for b, pos in enumerate(positions):
        next_break = segment_bounds[b + 1]
        need = None if next_break is None else next_break - pos
        displaced_year = chain.nodes[pos].paper.year
        prev_year = nodes[-1].paper.year
        # Ceiling for this segment's years: the next junction must still fit.
        ceiling = None if next_break is None else chain.nodes[next_break].paper.year + 1

        segment = None
        for candidate in pool.by_year(displaced_year):
            if candidate.id in used or candidate.year < prev_year:
                continue
            sub = distractor_chains.sub_chain(candidate.id)
            if sub is None or sub[0][0].id != candidate.id:
                continue
            picked = _take_segment(sub, need, chain.target_year, ceiling, used)
            if picked is None:
                continue
            segment = picked
            break
        if segment is None:
            raise DistractorUnavailable(
                f"no distractor sub-chain fits break at position {pos} of chain {chain.chain_id}"
            )
        junction_paper, _, _ = segment[0]
        judgment = pool.judgments.get(junction_paper.id)
        nodes.append(
            ChainNode(
                paper=junction_paper,
                relevance_to_prev=0,
                explanation=judgment.explanation if judgment else "irrelevant junction.",
            )
        )
        breakpoints.add(junction_paper.id)
        used.add(junction_paper.id)
        for paper, rel, expl in segment[1:]:
            nodes.append(ChainNode(paper=paper, relevance_to_prev=rel, explanation=expl))
            used.add(paper.id)
            tail_ids.add(paper.id)

    corrupted = ReasoningChain(
        chain_id=chain_id or f"{chain.chain_id}~hard{n_breaks}",
        nodes=nodes,
        label=LABEL_INVALID_HARD,
        breakpoints=breakpoints | tail_ids if gold == HARD_GOLD_TAIL else breakpoints,
        review_id=chain.review_id,
        n_breaks=n_breaks,
        target_year=chain.target_year,
    )
    if gold == HARD_GOLD_JUNCTION:
        # Tail-gold chains deliberately mark coherent (relevance 1/2) tail nodes
        # as breakpoints, which the strict validator rejects by design.
        corrupted.validate()
    return corrupted


def _take_segment(sub, need: int | None, target_year: int | None, ceiling: int | None, used: set):
    """Cut a usable prefix of a distractor chain; None when it cannot fit.

    `need` fixes the exact segment length (mid segments); None means run until
    the target year is reached or the chain is exhausted (final segment).
    `ceiling` caps member years so the following junction still fits.
    """
    if need is not None:
        if len(sub) < need:
            return None
        segment = sub[:need]
    else:
        # Final segment: run until the target year is reached (or exhausted).
        segment = []
        for entry in sub:
            segment.append(entry)
            if target_year is not None and entry[0].year >= target_year:
                break
    if any(paper.id in used for paper, _, _ in segment):
        return None
    if ceiling is not None and any(paper.year > ceiling for paper, _, _ in segment):
        return None
    years = [paper.year for paper, _, _ in segment]
    if any(a > b for a, b in zip(years, years[1:])):
        return None
    return segment
