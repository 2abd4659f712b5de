"""Windowing, review-grouped splitting, task emission, and leakage validation."""

import random
from collections import Counter

import pytest

from litchain.dataset import (
    TaskExample,
    assign_splits,
    emit_task_examples,
    split_by_review,
    split_summary,
    validate_dataset,
    window_subchains,
)
from litchain.errors import InsufficientGroups, InvalidStride, LeakageError
from litchain.inference import load_templates
from litchain.jsonl import canonical_dumps

from conftest import make_chain


TEMPLATES = load_templates()


class TestWindowSubchains:
    def test_short_chain_passes_through(self):
        chain = make_chain([2000, 2001, 2002, 2003])
        assert window_subchains(chain) == [chain]

    def test_seven_nodes_two_windows_plus_original(self):
        chain = make_chain(list(range(2000, 2007)))
        result = window_subchains(chain, max_len=5, stride=2)
        assert len(result) == 3
        assert [n.paper.id for n in result[0].nodes] == ["p0", "p1", "p2", "p3", "p4"]
        assert [n.paper.id for n in result[1].nodes] == ["p2", "p3", "p4", "p5", "p6"]
        assert result[2] is chain

    def test_right_aligned_tail_window(self):
        chain = make_chain(list(range(2000, 2008)))  # 8 nodes
        result = window_subchains(chain, max_len=5, stride=2)
        offsets = [int(c.chain_id.split("::w")[1]) for c in result[:-1]]
        assert offsets == [0, 2, 3]  # 3 right-aligns to cover the tail

    def test_window_first_node_becomes_source(self):
        chain = make_chain(list(range(2000, 2007)))
        window = window_subchains(chain)[1]
        assert window.nodes[0].relevance_to_prev is None
        assert all(n.relevance_to_prev is not None for n in window.nodes[1:])

    def test_breakpoint_out_of_window_relabels_valid(self):
        chain = make_chain(
            list(range(2000, 2007)),
            relevances=[0, 2, 2, 2, 2, 2],
            label="invalid_easy",
            breakpoints={"p1"},
        )
        chain.disruption_level = 0.1
        result = window_subchains(chain, max_len=5, stride=2)
        w0, w2 = result[0], result[1]
        assert w0.label == "invalid_easy" and w0.breakpoints == {"p1"}
        assert w0.disruption_level == 0.1
        assert w2.label == "valid" and not w2.breakpoints
        assert w2.disruption_level is None

    def test_breakpoint_at_window_source_not_inherited(self):
        # p2 is broken, but window [2..6] starts at p2: the broken link is outside
        chain = make_chain(
            list(range(2000, 2007)),
            relevances=[2, 0, 2, 2, 2, 2],
            label="invalid_easy",
            breakpoints={"p2"},
        )
        w2 = window_subchains(chain, max_len=5, stride=2)[1]
        assert w2.nodes[0].paper.id == "p2"
        assert w2.label == "valid" and not w2.breakpoints

    def test_union_covers_every_node(self):
        rng = random.Random(2)
        for length in range(1, 29):
            years = [2000]
            for _ in range(length - 1):
                years.append(years[-1] + rng.choice((0, 1)))
            chain = make_chain(years, chain_id=f"c{length}", prefix=f"c{length}n")
            result = window_subchains(chain, max_len=5, stride=2)
            windows = [c for c in result if c is not chain]
            covered = {nid for c in windows for nid in c.node_ids}
            if length <= 5:
                assert result == [chain]
            else:
                assert covered == set(chain.node_ids)
                assert all(len(c) <= 5 for c in windows)
                assert result[-1] is chain

    def test_zero_stride_rejected(self):
        with pytest.raises(InvalidStride):
            window_subchains(make_chain([2000, 2001]), stride=0)

    def test_windows_inherit_review_id(self):
        chain = make_chain(list(range(2000, 2007)), review_id="REV9")
        chain.review_id = "REV9"
        for c in window_subchains(chain):
            assert c.review_id == "REV9"


def chain_stub(review_id, i, label="valid", terminal_year=2020):
    return make_chain(
        [terminal_year - 1, terminal_year],
        chain_id=f"{review_id}/c{i}",
        review_id=review_id,
        prefix=f"{review_id}c{i}n",
        label=label,
        breakpoints={f"{review_id}c{i}n1"} if label != "valid" else (),
        relevances=[0] if label != "valid" else None,
    )


class TestSplitByReview:
    def test_twenty_equal_groups_14_3_3(self):
        chains = [chain_stub(f"R{g:02d}", i) for g in range(20) for i in range(5)]
        plan = split_by_review(chains, (0.70, 0.15, 0.15), seed=0)
        counts = Counter(plan.assignment.values())
        assert counts == {"train": 14, "val": 3, "test": 3}

    def test_single_ratio_all_train(self):
        chains = [chain_stub(f"R{g}", i) for g in range(4) for i in range(3)]
        plan = split_by_review(chains, (1.0, 0.0, 0.0), seed=1)
        assert set(plan.assignment.values()) == {"train"}

    def test_no_review_spans_two_splits(self):
        rng = random.Random(3)
        chains = []
        for g in range(30):
            for i in range(rng.randint(1, 8)):
                chains.append(chain_stub(f"R{g:02d}", i))
        plan = split_by_review(chains, seed=7)
        assign_splits(chains, plan)
        by_review = {}
        for chain in chains:
            by_review.setdefault(chain.review_id, set()).add(chain.split)
        assert all(len(splits) == 1 for splits in by_review.values())

    def test_ratios_tracked_by_chain_count(self):
        rng = random.Random(4)
        chains = []
        for g in range(60):
            for i in range(rng.randint(1, 5)):
                chains.append(chain_stub(f"R{g:02d}", i))
        plan = split_by_review(chains, (0.70, 0.15, 0.15), seed=2)
        assign_splits(chains, plan)
        counts = Counter(c.split for c in chains)
        total = len(chains)
        assert abs(counts["train"] / total - 0.70) < 0.05
        assert abs(counts["val"] / total - 0.15) < 0.05
        assert abs(counts["test"] / total - 0.15) < 0.05

    def test_deterministic_under_seed(self):
        chains = [chain_stub(f"R{g}", i) for g in range(12) for i in range(2)]
        a = split_by_review(chains, seed=5)
        b = split_by_review(chains, seed=5)
        assert a.assignment == b.assignment
        c = split_by_review(chains, seed=6)
        assert a.assignment != c.assignment

    def test_insufficient_groups(self):
        chains = [chain_stub("R0", 0), chain_stub("R1", 0)]
        with pytest.raises(InsufficientGroups):
            split_by_review(chains, (0.7, 0.15, 0.15), seed=0)

    def test_missing_review_id_rejected(self):
        chain = chain_stub("R0", 0)
        chain.review_id = None
        with pytest.raises(ValueError):
            split_by_review([chain], seed=0)

    def test_bad_ratios_rejected(self):
        chains = [chain_stub(f"R{g}", 0) for g in range(5)]
        with pytest.raises(ValueError):
            split_by_review(chains, (0.7, 0.15, 0.05), seed=0)

    def test_split_summary_reports_labels_and_recency(self):
        chains = [
            chain_stub("R0", 0, terminal_year=2024),
            chain_stub("R0", 1, label="invalid_easy", terminal_year=2020),
            chain_stub("R1", 0, terminal_year=2019),
        ]
        for c in chains:
            c.split = "train"
        summary = split_summary(chains)
        train = summary["train"]
        assert train["n_chains"] == 3
        assert train["by_label"] == {"invalid_easy": 1, "valid": 2}
        assert train["valid_recent_fraction"] == pytest.approx(1 / 3)


class TestEmitTaskExamples:
    def test_one_hop_pair_count(self):
        chain = make_chain([2000, 2001, 2002, 2003])
        examples = emit_task_examples([chain], "one_hop", TEMPLATES)
        assert len(examples) == 3
        assert [e.gold for e in examples] == [2, 2, 2]
        assert all(e.task == "one_hop" for e in examples)

    def test_one_hop_skips_missing_judgment(self, caplog):
        chain = make_chain([2000, 2001, 2002])
        chain.nodes[2].relevance_to_prev = None
        chain.label = "valid"
        with caplog.at_level("WARNING"):
            examples = emit_task_examples([chain], "one_hop", TEMPLATES)
        assert len(examples) == 1
        assert any("SkippedPair" in r.message for r in caplog.records)

    def test_multi_hop_agnostic_gold_valid(self):
        chain = make_chain([2000, 2001, 2002])
        (example,) = emit_task_examples([chain], "multi_hop_agnostic", TEMPLATES)
        assert example.gold == {"label": "valid", "breakpoints": []}

    def test_multi_hop_gold_for_easy_negative(self):
        chain = make_chain(
            [2000, 2001, 2002, 2003],
            relevances=[2, 0, 2],
            label="invalid_easy",
            breakpoints={"p2"},
        )
        (example,) = emit_task_examples([chain], "multi_hop_agnostic", TEMPLATES)
        assert example.gold == {"label": "invalid", "breakpoints": ["p2"]}

    def test_contextual_prompt_carries_terminal_hypothesis(self):
        chain = make_chain([2000, 2001, 2002])
        (example,) = emit_task_examples([chain], "multi_hop_contextual", TEMPLATES)
        assert chain.terminal.abstract in example.prompt
        assert "Target hypothesis" in example.prompt

    def test_generation_only_from_valid_chains(self):
        valid = make_chain([2000, 2001], chain_id="v", prefix="v")
        invalid = make_chain(
            [2000, 2001, 2002],
            relevances=[0, 2],
            chain_id="i",
            prefix="i",
            label="invalid_easy",
            breakpoints={"i1"},
        )
        examples = emit_task_examples([valid, invalid], "generation", TEMPLATES)
        assert [e.chain_id for e in examples] == ["v"]
        assert examples[0].gold is None

    def test_examples_carry_provenance(self):
        chain = make_chain([2000, 2001, 2002])
        chain.split = "test"
        (example,) = emit_task_examples([chain], "multi_hop_agnostic", TEMPLATES)
        assert example.review_id == "REV1"
        assert example.split == "test"
        assert example.terminal_year == 2002
        assert example.template_id == TEMPLATES.id_for("multi_hop_agnostic")

    def test_serialization_round_trip_byte_stable(self):
        chain = make_chain([2000, 2001, 2002])
        (example,) = emit_task_examples([chain], "multi_hop_agnostic", TEMPLATES)
        clone = TaskExample.from_dict(example.to_dict())
        assert canonical_dumps(clone.to_dict()) == canonical_dumps(example.to_dict())

    def test_unknown_task_rejected(self):
        with pytest.raises(ValueError):
            emit_task_examples([make_chain([2000, 2001])], "zero_hop", TEMPLATES)


def emitted_corpus():
    chains = []
    for g in range(6):
        for i in range(3):
            chains.append(chain_stub(f"R{g}", i, terminal_year=2023 if i == 0 else 2020))
    plan = split_by_review(chains, seed=3)
    assign_splits(chains, plan)
    examples = []
    for task in ("one_hop", "multi_hop_agnostic"):
        examples.extend(emit_task_examples(chains, task, TEMPLATES))
    return chains, examples


class TestValidateDataset:
    def test_clean_corpus_passes(self):
        _, examples = emitted_corpus()
        report = validate_dataset(examples)
        assert report.ok
        assert report.n_examples == len(examples)
        assert set(report.per_split) <= {"train", "val", "test"}

    def test_leak_raises_naming_review(self):
        _, examples = emitted_corpus()
        moved = next(e for e in examples if e.split == "train")
        for e in examples:
            if e.chain_id == moved.chain_id:
                e.split = "test"
        with pytest.raises(LeakageError) as err:
            validate_dataset(examples)
        assert err.value.review_id == moved.review_id

    def test_unassigned_split_reported(self):
        _, examples = emitted_corpus()
        examples[0].split = "unassigned"
        report = validate_dataset(examples)
        assert not report.ok
        assert any("unassigned" in v for v in report.violations)

    def test_inconsistent_gold_reported(self):
        _, examples = emitted_corpus()
        target = next(e for e in examples if e.task == "multi_hop_agnostic")
        target.gold = {"label": "valid", "breakpoints": ["x"]}
        report = validate_dataset(examples)
        assert any("inconsistent" in v for v in report.violations)

    def test_recent_terminal_fraction_echoed(self):
        """A corpus engineered to 21.0% valid-with-recent-terminal echoes 21.0%."""
        chains = []
        recent = 0
        for g in range(10):
            for i in range(10):
                year = 2023 if recent < 21 else 2019
                if year == 2023:
                    recent += 1
                chains.append(chain_stub(f"R{g}", i, terminal_year=year))
        plan = split_by_review(chains, (1.0, 0.0, 0.0), seed=0)
        assign_splits(chains, plan)
        examples = emit_task_examples(chains, "multi_hop_agnostic", TEMPLATES)
        report = validate_dataset(examples)
        assert report.per_split["train"]["n_chains"] == 100
        assert report.per_split["train"]["valid_recent_chain_fraction"] == pytest.approx(0.21)
