"""Shared fixtures: paper factories, planted corpora, and scripted backends."""

from __future__ import annotations

import pytest

from litchain.chainbuild import BuildConfig, ChainNode, ReasoningChain, build_chain
from litchain.corpus import Paper
from litchain.providers import SyntheticConfig, SyntheticProvider
from litchain.scoring import JudgmentStore, OracleBackend, ScriptedBackend


def make_paper(
    paper_id="p1",
    title=None,
    year=2010,
    citation_count=10,
    abstract=None,
    review_id="REV1",
):
    return Paper(
        id=paper_id,
        title=title or f"Study {paper_id} on cohort outcomes",
        abstract=abstract or f"Abstract for study {paper_id}.",
        year=year,
        citation_count=citation_count,
        review_id=review_id,
    )


def make_chain(
    years,
    relevances=None,
    chain_id="REV1/c1",
    review_id="REV1",
    prefix="p",
    label="valid",
    breakpoints=(),
    target_year=None,
):
    """Chain fixture: years drive node order; relevances default to all 2."""
    if relevances is None:
        relevances = [2] * (len(years) - 1)
    assert len(relevances) == len(years) - 1
    nodes = [ChainNode(paper=make_paper(f"{prefix}0", year=years[0], review_id=review_id))]
    for i, (year, rel) in enumerate(zip(years[1:], relevances), start=1):
        nodes.append(
            ChainNode(
                paper=make_paper(f"{prefix}{i}", year=year, review_id=review_id),
                relevance_to_prev=rel,
                explanation=f"link {i}",
            )
        )
    return ReasoningChain(
        chain_id=chain_id,
        nodes=nodes,
        label=label,
        breakpoints=set(breakpoints),
        review_id=review_id,
        target_year=target_year if target_year is not None else years[-1],
    )


@pytest.fixture
def synthetic_provider():
    cfg = SyntheticConfig(seed=42, n_reviews=2, backbone_len=8, distractors_per_hop=3)
    return SyntheticProvider.from_config(cfg)


@pytest.fixture
def oracle_backend(synthetic_provider):
    return OracleBackend(synthetic_provider.labels)


@pytest.fixture
def built(synthetic_provider, oracle_backend):
    """(chain, store, graph) for the first planted review of the fixture corpus."""
    graph = synthetic_provider.graphs[0]
    source = synthetic_provider.papers[graph.source_id]
    store = JudgmentStore()
    chain = build_chain(
        source,
        synthetic_provider,
        oracle_backend,
        BuildConfig(target_year=graph.target_year, seed=1),
        store=store,
        chain_id=f"{graph.review_id}/{source.id}",
    )
    return chain, store, graph


def scripted(text_or_fn):
    """Backend returning a fixed completion (or one computed per call)."""
    if callable(text_or_fn):
        return ScriptedBackend(text_or_fn)
    return ScriptedBackend(lambda prompt, seed, meta: text_or_fn)


def scripted_score(score: int):
    return scripted(
        f"Relevance: {score}\nTitle: echoed\nExplanation: scripted verdict {score}."
    )


def make_pool_and_chains(chain, per_year=2, id_prefix="q"):
    """Hand-built distractor pool plus coherent +1-year sub-chains for `chain`.

    Every intermediate year gets `per_year` score-0 candidates; each candidate
    roots a mirror sub-chain stepping one year at a time up to the chain's
    target year, so any break layout is satisfiable.
    """
    from litchain.negatives import DistractorPool
    from litchain.scoring import RelevanceJudgment

    pool = DistractorPool()
    chains = {}
    target = chain.target_year if chain.target_year is not None else chain.terminal.year
    for pos, node in enumerate(chain.nodes[1:-1], start=1):
        year = node.paper.year
        for k in range(per_year):
            qid = f"{id_prefix}{pos}_{k}"
            candidate = make_paper(qid, year=year, review_id=chain.review_id)
            judgment = RelevanceJudgment(
                source_id=chain.nodes[pos - 1].paper.id,
                target_id=qid,
                score=0,
                explanation="fixture irrelevant paper.",
                echoed_title=candidate.title,
                seed=0,
            )
            pool.add(candidate, judgment, origin=f"fixture@{pos}")
            sub = [(candidate, None, None)]
            y, j = year, 0
            while y < target:
                y += 1
                cont = make_paper(f"{qid}.t{j}", year=y, review_id=chain.review_id)
                sub.append((cont, 2, "fixture coherent continuation."))
                j += 1
            chains[qid] = sub

    class _Source:
        def sub_chain(self, root_id):
            return chains.get(root_id)

    return pool, _Source()


def assert_hard_partition(original, corrupted, n_breaks):
    """The hard-negative invariant: original prefix + alternating distractor segments."""
    assert corrupted.label == "invalid_hard"
    assert len(corrupted.breakpoints) == n_breaks
    original_ids = original.node_ids
    ids = corrupted.node_ids
    # Original prefix runs until the first breakpoint.
    first_break = min(i for i, nid in enumerate(ids) if nid in corrupted.breakpoints)
    assert first_break >= 1
    assert ids[:first_break] == original_ids[:first_break]
    # After the prefix, no original node ever reappears.
    assert not (set(ids[first_break:]) & set(original_ids))
    # Breakpoints are exactly the score-0 links; all other links are 1/2.
    for node in corrupted.nodes[1:]:
        if node.paper.id in corrupted.breakpoints:
            assert node.relevance_to_prev == 0
        else:
            assert node.relevance_to_prev in (1, 2)
    years = [n.paper.year for n in corrupted.nodes]
    assert years == sorted(years)
