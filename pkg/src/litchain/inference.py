"""Prompt rendering and structured-output parsing for validation, generation, judging.

Templates are plain text files with {named} placeholders; they are data, not
code, and can be overridden per run. Parsers are tolerant of formatting noise
and never raise anything but :class:`ParseFailure` on arbitrary text.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .chainbuild import ReasoningChain
from .errors import ParseFailure, TemplateError
from .jsonl import sha256_text

logger = logging.getLogger(__name__)

TEMPLATE_FILES = {
    "one_hop": "one_hop.txt",
    "multi_hop_agnostic": "multi_hop_agnostic.txt",
    "multi_hop_contextual": "multi_hop_contextual.txt",
    "generation": "generation.txt",
    "judge": "judge.txt",
}

JUDGE_DIMENSIONS = ("clarity", "relevance", "originality", "feasibility", "significance")

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")

PAPER_BLOCK = (
    "Paper {index}:\n"
    "Title: {title}\n"
    "Year: {year}\n"
    "Citation count: {citation_count}\n"
    "Abstract: {abstract}"
)


@dataclass
class TemplateSet:
    """Loaded prompt templates keyed by task kind, with content-hash ids."""

    texts: dict[str, str]

    def text_for(self, task: str) -> str:
        try:
            return self.texts[task]
        except KeyError:
            raise KeyError(f"no template for task {task!r}") from None

    def id_for(self, task: str) -> str:
        return sha256_text(self.text_for(task))[:12]

    def ids(self) -> dict[str, str]:
        return {task: self.id_for(task) for task in sorted(self.texts)}


def load_templates(directory: str | Path | None = None) -> TemplateSet:
    """Load templates from `directory`, falling back to the bundled defaults."""
    texts: dict[str, str] = {}
    for task, filename in TEMPLATE_FILES.items():
        if directory is not None:
            path = Path(directory) / filename
            if path.exists():
                texts[task] = path.read_text(encoding="utf-8")
                continue
        texts[task] = (
            resources.files("litchain.templates").joinpath(filename).read_text(encoding="utf-8")
        )
    return TemplateSet(texts=texts)


def render_with_context(template: str, context: Mapping[str, str]) -> str:
    """Substitute {name} placeholders; unknown names raise TemplateError."""

    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name not in context:
            raise TemplateError(name)
        return str(context[name])

    return _PLACEHOLDER_RE.sub(repl, template)


def render_paper_block(index: int, paper) -> str:
    return PAPER_BLOCK.format(
        index=index,
        title=paper.title,
        year=paper.year,
        citation_count=paper.citation_count,
        abstract=paper.abstract,
    )


def render_prompt(template: str, chain: ReasoningChain, task: str = "multi_hop_agnostic") -> str:
    """Render a chain into a prompt: papers oldest-first, chain id appended.

    The trailing chain-id line makes rendering injective on chain content even
    for templates that ignore every placeholder.
    """
    papers = [n.paper for n in chain.nodes]
    blocks = "\n\n".join(render_paper_block(i + 1, p) for i, p in enumerate(papers))
    source, terminal = papers[0], papers[-1]
    context = {
        "papers": blocks,
        "n_papers": str(len(papers)),
        "chain_id": chain.chain_id,
        "source_title": source.title,
        "source_abstract": source.abstract,
        "source_year": str(source.year),
        "source_citation_count": str(source.citation_count),
        "target_title": terminal.title,
        "target_abstract": terminal.abstract,
        "target_year": str(terminal.year),
        "target_citation_count": str(terminal.citation_count),
        "target_hypothesis": terminal.abstract,
    }
    rendered = render_with_context(template, context)
    return f"{rendered.rstrip()}\n\n[chain {chain.chain_id}]"


@dataclass
class GenerationOutput:
    """Parsed hypothesis-generation completion."""

    analysis: dict[int, str]
    rationale: str
    research_idea: str
    hypothesis: str
    raw: str = ""

    def to_dict(self) -> dict:
        return {
            "analysis": {str(k): v for k, v in sorted(self.analysis.items())},
            "rationale": self.rationale,
            "research_idea": self.research_idea,
            "hypothesis": self.hypothesis,
            "raw": self.raw,
        }


@dataclass(frozen=True)
class JudgeScores:
    """Five-dimension Likert ratings, each within 1..5."""

    clarity: int
    relevance: int
    originality: int
    feasibility: int
    significance: int

    def __post_init__(self):
        for name in JUDGE_DIMENSIONS:
            value = getattr(self, name)
            if not (1 <= value <= 5):
                raise ValueError(f"{name} score {value} outside [1, 5]")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in JUDGE_DIMENSIONS}


_INVALID_RE = re.compile(r"\binvalid\b", re.IGNORECASE)
_VALID_RE = re.compile(r"\bvalid\b", re.IGNORECASE)
_BREAKPOINT_SEG_RE = re.compile(
    r"break\s*-?\s*point[s]?\b[^:\n]*[:=]?(?P<seg>[^\n]*)", re.IGNORECASE
)
_INT_RE = re.compile(r"\d+")
_QUOTED_RE = re.compile(r"\"([^\"]{3,200})\"|'([^']{3,200})'")


def _normalize_title(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", " ", text.lower()).strip()


def parse_validation_output(text: str, chain: ReasoningChain | None = None):
    """Extract (verdict, breakpoint refs) from a chain-validation completion.

    Verdict-only outputs yield an empty breakpoint list. Without a chain,
    refs are the raw paper numbers (and quoted titles) the model cited; with a
    chain, refs resolve to node ids, numbers first (1-based, as prompts number
    papers), then normalized title matching. Unresolvable refs are dropped.
    """
    if not isinstance(text, str) or not text.strip():
        raise ParseFailure("empty validation output", raw=text if isinstance(text, str) else "")
    if _INVALID_RE.search(text):
        label = "invalid"
    elif _VALID_RE.search(text):
        label = "valid"
    else:
        raise ParseFailure("no valid/invalid verdict found", raw=text)

    refs: list[object] = []
    if label == "invalid":
        seg_match = _BREAKPOINT_SEG_RE.search(text)
        if seg_match:
            segment = seg_match.group("seg")
            for qa, qb in _QUOTED_RE.findall(segment):
                refs.append(qa or qb)
            # Digits inside quoted titles are not paper numbers.
            refs.extend(int(m) for m in _INT_RE.findall(_QUOTED_RE.sub(" ", segment)))
    if chain is None:
        return label, refs

    ids: list[str] = []
    n = len(chain)
    numbers = [r for r in refs if isinstance(r, int)]
    zero_based = bool(numbers) and min(numbers) == 0
    by_title = {_normalize_title(node.paper.title): node.paper.id for node in chain.nodes}
    for ref in refs:
        if isinstance(ref, int):
            idx = ref if zero_based else ref - 1
            if 0 <= idx < n:
                ids.append(chain.nodes[idx].paper.id)
        else:
            normalized = _normalize_title(ref)
            if normalized in by_title:
                ids.append(by_title[normalized])
    seen = set()
    unique = [i for i in ids if not (i in seen or seen.add(i))]
    return label, unique


_SECTION_NAMES = {
    "analysis": "analysis",
    "rationale": "rationale",
    "research idea": "research_idea",
    "research_idea": "research_idea",
    "researchidea": "research_idea",
    "generated research idea": "research_idea",
    "hypothesis": "hypothesis",
}
_SECTION_RE = re.compile(
    r"^\s*[#*\"']*\s*(analysis|rationale|research[ _]?idea|hypothesis)\s*[\"']*\s*[:=]",
    re.IGNORECASE | re.MULTILINE,
)
_ANALYSIS_ENTRY_RE = re.compile(r"^\s*[\"']?(\d+)[\"']?\s*[:.)-]\s*(.+?)\s*$", re.MULTILINE)


def _first_json_value(text: str):
    start = text.find("{")
    if start == -1:
        return None
    try:
        obj, _ = json.JSONDecoder().raw_decode(text[start:])
    except ValueError:
        return None
    return obj


def _norm_key(key: str) -> str:
    return re.sub(r"[\s_]+", " ", str(key).strip().strip("\"'").lower())


def _from_json_generation(obj) -> dict | None:
    if not isinstance(obj, dict):
        return None
    flat = {_norm_key(k): v for k, v in obj.items()}
    # Outputs sometimes nest the payload under a single wrapper key.
    if len(flat) == 1 and isinstance(next(iter(flat.values())), dict):
        return _from_json_generation(next(iter(obj.values())))
    fields: dict = {}
    for key, value in flat.items():
        if key in ("analysis",) and isinstance(value, (dict, list)):
            if isinstance(value, list):
                fields["analysis"] = {i: str(v).strip() for i, v in enumerate(value)}
            else:
                entries = {}
                for k, v in value.items():
                    m = _INT_RE.search(str(k))
                    if m is None:
                        return None
                    entries[int(m.group(0))] = str(v).strip()
                fields["analysis"] = entries
        elif key in ("rationale", "hypothesis") and isinstance(value, str):
            fields[key] = value.strip()
        elif key in ("research idea", "generated research idea") and isinstance(value, str):
            fields["research_idea"] = value.strip()
    return fields or None


def parse_generation_output(text: str) -> GenerationOutput:
    """Parse the four-field generation completion (JSON first, headings second)."""
    if not isinstance(text, str) or not text.strip():
        raise ParseFailure("empty generation output", raw=text if isinstance(text, str) else "")
    fields = _from_json_generation(_first_json_value(text)) or {}

    if len(fields) < 4:
        matches = list(_SECTION_RE.finditer(text))
        for i, m in enumerate(matches):
            name = _SECTION_NAMES.get(_norm_key(m.group(1)))
            if name is None or name in fields:
                continue
            end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
            body = text[m.end() : end].strip().strip("\",' \n")
            if name == "analysis":
                entries = {
                    int(num): val.strip().strip("\",'")
                    for num, val in _ANALYSIS_ENTRY_RE.findall(text[m.end() : end])
                }
                if entries:
                    fields["analysis"] = entries
            elif body:
                fields[name] = body

    missing = [
        name
        for name in ("analysis", "rationale", "research_idea", "hypothesis")
        if not fields.get(name)
    ]
    if missing:
        raise ParseFailure(f"generation output missing fields: {missing}", raw=text)
    return GenerationOutput(
        analysis=fields["analysis"],
        rationale=fields["rationale"],
        research_idea=fields["research_idea"],
        hypothesis=fields["hypothesis"],
        raw=text,
    )


_JUDGE_LINE_RE = re.compile(
    r"\b(clarity|relevance|originality|feasibility|significance)\b\s*(?:score)?\s*[:=]?\s*(-?\d+)",
    re.IGNORECASE,
)
_CSV_SCORES_RE = re.compile(r"^\s*(-?\d+)\s*(?:[,;]\s*(-?\d+)\s*){4}\s*$")


def parse_judge_output(text: str) -> JudgeScores:
    """Parse five Likert ratings; named lines, JSON, or a bare 5-number CSV."""
    if not isinstance(text, str) or not text.strip():
        raise ParseFailure("empty judge output", raw=text if isinstance(text, str) else "")
    found: dict[str, int] = {}
    obj = _first_json_value(text)
    if isinstance(obj, dict):
        for k, v in obj.items():
            name = _norm_key(k)
            if name in JUDGE_DIMENSIONS and isinstance(v, (int, float)) and float(v).is_integer():
                found[name] = int(v)
    for name, value in _JUDGE_LINE_RE.findall(text):
        found.setdefault(name.lower(), int(value))
    if len(found) < len(JUDGE_DIMENSIONS) and _CSV_SCORES_RE.match(text.strip()):
        values = [int(v) for v in _INT_RE.findall(text)]
        if len(values) == len(JUDGE_DIMENSIONS):
            found = dict(zip(JUDGE_DIMENSIONS, values))
    missing = [d for d in JUDGE_DIMENSIONS if d not in found]
    if missing:
        raise ParseFailure(f"judge output missing dimensions: {missing}", raw=text)
    out_of_range = {d: v for d, v in found.items() if not (1 <= v <= 5)}
    if out_of_range:
        raise ParseFailure(f"judge scores outside [1, 5]: {out_of_range}", raw=text)
    return JudgeScores(**{d: found[d] for d in JUDGE_DIMENSIONS})


GENERATION_FORMAT_REMINDER = (
    "\n\nReminder: reply with a single JSON object containing exactly the keys "
    '"Analysis" (an object mapping each paper number, starting at 0, to one '
    'sentence), "Rationale", "Research idea", and "Hypothesis".'
)

JUDGE_FORMAT_REMINDER = (
    "\n\nReminder: reply with five lines, one per dimension, e.g.\n"
    "Clarity: <1-5>\nRelevance: <1-5>\nOriginality: <1-5>\n"
    "Feasibility: <1-5>\nSignificance: <1-5>"
)


def generate_hypothesis(
    chain: ReasoningChain, backend, template: str, seed: int = 0
) -> GenerationOutput:
    """Render the generation prompt, call the backend, parse; one re-prompt."""
    if not chain.nodes:
        raise ValueError("cannot generate from an empty chain")
    prompt = render_prompt(template, chain, "generation")
    meta = {"kind": "generate", "chain_id": chain.chain_id, "n_papers": len(chain)}
    raw = backend.complete(prompt, seed=seed, meta=meta)
    try:
        return parse_generation_output(raw)
    except ParseFailure:
        logger.debug("re-prompting generation for chain %s", chain.chain_id)
        raw = backend.complete(prompt + GENERATION_FORMAT_REMINDER, seed=seed, meta=meta)
        return parse_generation_output(raw)


def judge_hypothesis(
    output: GenerationOutput, backend, rubric_template: str, seed: int = 0
) -> JudgeScores:
    """Score a generated hypothesis on the five rubric dimensions."""
    context = {
        "analysis": "\n".join(f"{k}: {v}" for k, v in sorted(output.analysis.items())),
        "rationale": output.rationale,
        "research_idea": output.research_idea,
        "hypothesis": output.hypothesis,
    }
    prompt = render_with_context(rubric_template, context)
    meta = {"kind": "judge"}
    raw = backend.complete(prompt, seed=seed, meta=meta)
    try:
        return parse_judge_output(raw)
    except ParseFailure:
        logger.debug("re-prompting judge")
        raw = backend.complete(prompt + JUDGE_FORMAT_REMINDER, seed=seed, meta=meta)
        return parse_judge_output(raw)
