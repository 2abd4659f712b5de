"""Relevancy scoring: backend contract, judgment parsing, voting, agreement stats.

A backend wraps any chat-style completion endpoint behind ``complete(prompt,
seed=..., meta=...)``. Scoring renders a pair prompt, asks the backend once,
re-prompts once with a format reminder on a parse failure, then gives up with
:class:`ParseFailure` (raw completion retained). Judgments are pure data and
may be aggregated in any order.
"""

from __future__ import annotations

import json
import logging
import math
import random
import re
import time
from abc import ABC, abstractmethod
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import requests

from .corpus import Paper
from .errors import (
    BackendUnavailable,
    EmptyVoteSet,
    IneligibleScore,
    InsufficientRaters,
    MixedPairError,
    ParseFailure,
    ShapeError,
)
from .jsonl import derive_seed

logger = logging.getLogger(__name__)

SCORE_VALUES = (0, 1, 2)

RELEVANCE_WEIGHT = 0.7
IMPACT_WEIGHT = 0.3

JUDGMENT_SCHEMA_VERSION = 1

FORMAT_REMINDER = (
    "\n\nReminder: reply in exactly this format and nothing else:\n"
    "Relevance: <0, 1, or 2>\n"
    "Title: <title of the citing paper>\n"
    "Explanation: <one or two sentences on why>"
)


@dataclass(frozen=True)
class RelevanceJudgment:
    """One backend verdict for a (source, target) pair under one seed."""

    source_id: str
    target_id: str
    score: int
    explanation: str
    echoed_title: str
    seed: int
    raw: str = ""

    def __post_init__(self):
        if self.score not in SCORE_VALUES:
            raise ValueError(f"score must be one of {SCORE_VALUES}, got {self.score}")

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "target_id": self.target_id,
            "score": self.score,
            "explanation": self.explanation,
            "echoed_title": self.echoed_title,
            "seed": self.seed,
            "raw": self.raw,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RelevanceJudgment":
        return cls(
            source_id=d["source_id"],
            target_id=d["target_id"],
            score=int(d["score"]),
            explanation=d["explanation"],
            echoed_title=d.get("echoed_title", ""),
            seed=int(d["seed"]),
            raw=d.get("raw", ""),
        )


@dataclass
class BackendConfig:
    """Endpoint settings for any chat-style backend."""

    kind: str = "mock"  # mock | oracle | http
    base_url: str | None = None
    model: str = "mock-scorer"
    temperature: float = 0.0
    auth_token_env: str | None = None
    max_concurrent: int = 1
    retry_budget: int = 2
    votes: int = 1
    template_path: str | None = None

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.votes < 1:
            raise ValueError("votes must be >= 1")


class ScoringBackend(ABC):
    """Chat-completion contract; implementations must accept concurrent calls."""

    def __init__(self, config: BackendConfig | None = None):
        self.config = config or BackendConfig()

    @abstractmethod
    def complete(self, prompt: str, *, seed: int, meta: Mapping[str, object] | None = None) -> str:
        """Return the completion text for `prompt` under `seed`."""


class ScriptedBackend(ScoringBackend):
    """Test backend driven by a (prompt, seed, meta) -> text function."""

    def __init__(self, fn: Callable[[str, int, Mapping | None], str], config: BackendConfig | None = None):
        super().__init__(config or BackendConfig(kind="scripted", model="scripted"))
        self._fn = fn

    def complete(self, prompt, *, seed, meta=None):
        return self._fn(prompt, seed, meta)


class OracleBackend(ScoringBackend):
    """Scores pairs from planted ground-truth labels (synthetic graphs).

    Unplanted pairs score 0: a paper that was never linked to its alleged
    source is irrelevant by construction.
    """

    def __init__(self, labels: Mapping[tuple[str, str], int], config: BackendConfig | None = None):
        super().__init__(config or BackendConfig(kind="oracle", model="synthetic-oracle"))
        self.labels = dict(labels)

    def complete(self, prompt, *, seed, meta=None):
        if not meta or "source_id" not in meta or "target_id" not in meta:
            raise ValueError("oracle backend needs source_id/target_id metadata")
        score = self.labels.get((str(meta["source_id"]), str(meta["target_id"])), 0)
        title = str(meta.get("target_title", ""))
        return (
            f"Relevance: {score}\n"
            f"Title: {title}\n"
            f"Explanation: planted relevance {score} for this citation pair."
        )


class MockChatBackend(ScoringBackend):
    """Offline backend producing deterministic, well-formed completions.

    Used to drive the generation and judging stages without a live model. The
    output kind is taken from ``meta['kind']`` (score | generate | judge).
    """

    def __init__(self, config: BackendConfig | None = None):
        super().__init__(config or BackendConfig(kind="mock", model="mock-chat"))

    def complete(self, prompt, *, seed, meta=None):
        kind = (meta or {}).get("kind", "score")
        rng = random.Random(derive_seed(seed, kind, prompt[:64]))
        if kind == "generate":
            n = len(re.findall(r"^Paper \d+:", prompt, re.MULTILINE)) or 1
            analysis = {
                str(i): f"Paper {i + 1} extends the preceding result with a follow-up cohort."
                for i in range(n)
            }
            body = {
                "Analysis": analysis,
                "Rationale": "The sequence narrows from a broad intervention to a specific cohort, "
                "leaving the maintenance phase untested.",
                "Research idea": "Assess whether the final intervention sustains its effect over a "
                "two-year maintenance window.",
                "Hypothesis": "Participants receiving the maintained intervention will retain "
                "outcome gains at 24 months compared with usual care.",
            }
            return json.dumps(body, ensure_ascii=False, indent=1)
        if kind == "judge":
            scores = [rng.randint(2, 5) for _ in range(5)]
            names = ("Clarity", "Relevance", "Originality", "Feasibility", "Significance")
            return "\n".join(f"{n}: {s}" for n, s in zip(names, scores))
        score = rng.choice(SCORE_VALUES)
        return (
            f"Relevance: {score}\n"
            f"Title: mock target\n"
            f"Explanation: mock deterministic verdict {score}."
        )


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class HttpChatBackend(ScoringBackend):
    """OpenAI-style chat-completions client.

    POSTs ``{model, messages, temperature, seed}`` to ``base_url`` and reads
    ``choices[0].message.content``.
    """

    def __init__(self, config: BackendConfig, session: requests.Session | None = None):
        if not config.base_url:
            raise ValueError("HttpChatBackend needs a base_url")
        super().__init__(config)
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_token_env:
            import os

            token = os.environ.get(self.config.auth_token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, prompt, *, seed, meta=None):
        payload = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "seed": seed,
        }
        last_err = None
        for attempt in range(self.config.retry_budget + 1):
            try:
                resp = self.session.post(
                    self.config.base_url, json=payload, headers=self._headers(), timeout=60
                )
            except requests.RequestException as exc:
                last_err = exc
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        raise BackendUnavailable(f"malformed completion payload: {exc}") from exc
                last_err = BackendUnavailable(f"HTTP {resp.status_code} from backend")
                if resp.status_code not in _RETRYABLE_STATUS:
                    break
            if attempt < self.config.retry_budget:
                time.sleep(min(0.05 * 2**attempt, 1.0))
        raise BackendUnavailable(f"backend gave up after {self.config.retry_budget + 1} tries: {last_err}")


# The bundled pair-scoring template; overridable per call or via config.
DEFAULT_PAIR_TEMPLATE = (
    resources.files("litchain.templates").joinpath("one_hop.txt").read_text(encoding="utf-8")
)


def render_pair_prompt(template: str, source: Paper, target: Paper) -> str:
    """Fill the scoring template's named placeholders from the two papers."""
    from .inference import render_with_context  # shared placeholder machinery

    return render_with_context(
        template,
        {
            "source_title": source.title,
            "source_abstract": source.abstract,
            "source_year": str(source.year),
            "source_citation_count": str(source.citation_count),
            "target_title": target.title,
            "target_abstract": target.abstract,
            "target_year": str(target.year),
            "target_citation_count": str(target.citation_count),
        },
    )


_SCORE_RE = re.compile(r"relevance\s*(?:score)?\s*[:=]\s*\[?\s*([012])\b", re.IGNORECASE)
_TITLE_RE = re.compile(r"^\s*title\s*[:=]\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_EXPLANATION_RE = re.compile(
    r"explanation\s*[:=]\s*(.+?)(?=^\s*[A-Z][A-Za-z ]{0,20}:|\Z)",
    re.IGNORECASE | re.DOTALL | re.MULTILINE,
)


def parse_score_completion(text: str) -> tuple[int, str, str]:
    """Extract (score, explanation, echoed title) from a completion.

    Accepts the line format the template asks for, or a JSON object with
    relevance/explanation/title keys. Raises ParseFailure when no score or no
    explanation can be recovered (the judgment invariant requires both).
    """
    if not isinstance(text, str) or not text.strip():
        raise ParseFailure("empty completion", raw=text if isinstance(text, str) else "")
    score = explanation = title = None
    m = _SCORE_RE.search(text)
    if m:
        score = int(m.group(1))
    m = _TITLE_RE.search(text)
    if m:
        title = m.group(1).strip()
    m = _EXPLANATION_RE.search(text)
    if m:
        explanation = m.group(1).strip()
    if score is None or not explanation:
        obj = _first_json_object(text)
        if isinstance(obj, dict):
            lowered = {str(k).strip().lower(): v for k, v in obj.items()}
            raw_score = lowered.get("relevance", lowered.get("score"))
            if score is None and raw_score in (0, 1, 2, "0", "1", "2"):
                score = int(raw_score)
            if not explanation and isinstance(lowered.get("explanation"), str):
                explanation = lowered["explanation"].strip()
            if not title and isinstance(lowered.get("title"), str):
                title = lowered["title"].strip()
    if score is None:
        raise ParseFailure("no relevance score found in completion", raw=text)
    if not explanation:
        raise ParseFailure("no explanation found in completion", raw=text)
    return score, explanation, title or ""


def _first_json_object(text: str):
    start = text.find("{")
    if start == -1:
        return None
    decoder = json.JSONDecoder()
    try:
        obj, _ = decoder.raw_decode(text[start:])
    except ValueError:
        return None
    return obj


def score_relevance(
    source: Paper,
    target: Paper,
    backend: ScoringBackend,
    seed: int,
    template: str = DEFAULT_PAIR_TEMPLATE,
) -> RelevanceJudgment:
    """Score one (source, target) pair; one re-prompt before giving up."""
    if not source.abstract or not target.abstract:
        raise ValueError("both papers must carry non-empty abstracts")
    if target.year < source.year:
        raise ValueError(
            f"target {target.id} ({target.year}) predates source {source.id} ({source.year})"
        )
    prompt = render_pair_prompt(template, source, target)
    meta = {
        "kind": "score",
        "source_id": source.id,
        "target_id": target.id,
        "source_title": source.title,
        "target_title": target.title,
    }
    raw = backend.complete(prompt, seed=seed, meta=meta)
    try:
        score, explanation, title = parse_score_completion(raw)
    except ParseFailure:
        logger.debug("re-prompting unparsable completion for (%s, %s)", source.id, target.id)
        raw = backend.complete(prompt + FORMAT_REMINDER, seed=seed, meta=meta)
        score, explanation, title = parse_score_completion(raw)
    return RelevanceJudgment(
        source_id=source.id,
        target_id=target.id,
        score=score,
        explanation=explanation,
        echoed_title=title,
        seed=seed,
        raw=raw,
    )


def majority_vote(judgments: Sequence[RelevanceJudgment]) -> int:
    """Modal score over repeated judgments of one pair; ties resolve downward."""
    if not judgments:
        raise EmptyVoteSet("majority vote needs at least one judgment")
    pairs = {(j.source_id, j.target_id) for j in judgments}
    if len(pairs) > 1:
        raise MixedPairError(f"judgments span multiple pairs: {sorted(pairs)}")
    counts = Counter(j.score for j in judgments)
    best = max(counts.values())
    return min(score for score, n in counts.items() if n == best)


def relevance_impact(score: int, citation_count: int, chunk_max_citations: int) -> float:
    """Composite ranking value: relevance 70%, log-scaled citation impact 30%.

    impact = log(1 + citations) / log(1 + chunk max), or 0 when the chunk max
    is 0, so the value is bounded in [0, 1] and monotone in both arguments.
    """
    if score not in (1, 2):
        raise IneligibleScore(f"only scores 1 and 2 are ranked, got {score}")
    if citation_count < 0 or chunk_max_citations < citation_count:
        raise ValueError("need chunk_max_citations >= citation_count >= 0")
    if chunk_max_citations == 0:
        impact = 0.0
    else:
        impact = math.log1p(citation_count) / math.log1p(chunk_max_citations)
    return RELEVANCE_WEIGHT * (score / 2.0) + IMPACT_WEIGHT * impact


@dataclass
class AgreementReport:
    """Inter-rater agreement over a raters x items label matrix."""

    cohen_kappa_pairwise: dict[tuple[int, int], float]
    percent_agreement: dict[tuple[int, int], float]
    fleiss_kappa: float
    mean_deviation_from_majority: float
    n_items: int
    n_complete_items: int

    def to_dict(self) -> dict:
        return {
            "cohen_kappa_pairwise": {f"{a}-{b}": v for (a, b), v in self.cohen_kappa_pairwise.items()},
            "percent_agreement": {f"{a}-{b}": v for (a, b), v in self.percent_agreement.items()},
            "fleiss_kappa": self.fleiss_kappa,
            "mean_deviation_from_majority": self.mean_deviation_from_majority,
            "n_items": self.n_items,
            "n_complete_items": self.n_complete_items,
        }


def cohen_kappa(labels_a: Sequence[int], labels_b: Sequence[int], categories: Sequence[int] = SCORE_VALUES) -> float:
    """Cohen's kappa between two aligned label vectors."""
    if len(labels_a) != len(labels_b):
        raise ShapeError("label vectors differ in length")
    n = len(labels_a)
    if n == 0:
        raise ShapeError("need at least one item")
    idx = {c: i for i, c in enumerate(categories)}
    confusion = np.zeros((len(categories), len(categories)), dtype=np.int64)
    for a, b in zip(labels_a, labels_b):
        confusion[idx[a], idx[b]] += 1
    po = confusion.trace() / n
    pe = float(np.dot(confusion.sum(axis=1), confusion.sum(axis=0))) / (n * n)
    if 1.0 - pe < 1e-12:
        return 1.0 if po >= 1.0 - 1e-12 else 0.0
    return float((po - pe) / (1.0 - pe))


def fleiss_kappa(counts: np.ndarray) -> float:
    """Fleiss' kappa from an items x categories count matrix (equal raters per item)."""
    counts = np.asarray(counts, dtype=np.float64)
    n_per_item = counts.sum(axis=1)
    if counts.size == 0 or not np.all(n_per_item == n_per_item[0]):
        raise ShapeError("all items must carry the same number of ratings")
    n = n_per_item[0]
    if n < 2:
        raise InsufficientRaters("Fleiss' kappa needs >= 2 ratings per item")
    p_items = (np.sum(counts * counts, axis=1) - n) / (n * (n - 1))
    p_bar = float(p_items.mean())
    proportions = counts.sum(axis=0) / counts.sum()
    p_e = float(np.dot(proportions, proportions))
    if 1.0 - p_e < 1e-12:
        return 1.0 if p_bar >= 1.0 - 1e-12 else 0.0
    return float((p_bar - p_e) / (1.0 - p_e))


def agreement_stats(label_matrix: Sequence[Sequence], missing=None) -> AgreementReport:
    """Pairwise Cohen's kappa, Fleiss' kappa, percent agreement, majority deviation.

    `label_matrix` is raters x items; entries equal to `missing` are ignored
    where possible. Items with no labels at all are excluded with a warning;
    Fleiss' kappa uses only items every rater labeled.
    """
    rows = [list(r) for r in label_matrix]
    if len(rows) < 2:
        raise InsufficientRaters(f"need >= 2 raters, got {len(rows)}")
    n_items = len(rows[0])
    if n_items == 0:
        raise ShapeError("need at least one item")
    if any(len(r) != n_items for r in rows):
        raise ShapeError("ragged label matrix")
    for r, row in enumerate(rows):
        for v in row:
            if v != missing and v not in SCORE_VALUES:
                raise ValueError(f"rater {r}: label {v!r} not in {SCORE_VALUES} and not missing")

    usable_items = []
    for i in range(n_items):
        column = [row[i] for row in rows]
        if all(v == missing for v in column):
            logger.warning("item %d has no labels from any rater; excluded", i)
            continue
        usable_items.append(i)

    kappas: dict[tuple[int, int], float] = {}
    agreements: dict[tuple[int, int], float] = {}
    for a in range(len(rows)):
        for b in range(a + 1, len(rows)):
            both = [
                (rows[a][i], rows[b][i])
                for i in usable_items
                if rows[a][i] != missing and rows[b][i] != missing
            ]
            if not both:
                kappas[(a, b)] = float("nan")
                agreements[(a, b)] = float("nan")
                continue
            va, vb = zip(*both)
            kappas[(a, b)] = cohen_kappa(va, vb)
            agreements[(a, b)] = 100.0 * sum(x == y for x, y in both) / len(both)

    complete = [
        i for i in usable_items if all(row[i] != missing for row in rows)
    ]
    if complete:
        counts = np.zeros((len(complete), len(SCORE_VALUES)), dtype=np.int64)
        for out_row, i in enumerate(complete):
            for row in rows:
                counts[out_row, SCORE_VALUES.index(row[i])] += 1
        fk = fleiss_kappa(counts)
    else:
        logger.warning("no complete items; Fleiss' kappa undefined")
        fk = float("nan")

    deviations = []
    for i in usable_items:
        present = [row[i] for row in rows if row[i] != missing]
        tally = Counter(present)
        top = max(tally.values())
        majority = min(s for s, c in tally.items() if c == top)
        deviations.extend(abs(v - majority) for v in present)
    mean_dev = float(np.mean(deviations)) if deviations else 0.0

    return AgreementReport(
        cohen_kappa_pairwise=kappas,
        percent_agreement=agreements,
        fleiss_kappa=fk,
        mean_deviation_from_majority=mean_dev,
        n_items=len(usable_items),
        n_complete_items=len(complete),
    )


@dataclass
class StoredJudgment:
    """A judgment plus the provenance needed for pooling and resumption."""

    judgment: RelevanceJudgment
    paper: Paper  # the target (citing) paper
    chain_id: str
    hop: int

    def to_dict(self) -> dict:
        return {
            "schema_version": JUDGMENT_SCHEMA_VERSION,
            "chain_id": self.chain_id,
            "hop": self.hop,
            "judgment": self.judgment.to_dict(),
            "paper": self.paper.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StoredJudgment":
        return cls(
            judgment=RelevanceJudgment.from_dict(d["judgment"]),
            paper=Paper.from_dict(d["paper"]),
            chain_id=d["chain_id"],
            hop=int(d["hop"]),
        )


class JudgmentStore:
    """Append-only judgment cache keyed by (source, target, seed).

    Persisted as one JSONL record per (pair, seed); reloading the file lets a
    rerun replay cached verdicts instead of calling the backend again.
    """

    def __init__(self):
        self._by_key: dict[tuple[str, str, int], StoredJudgment] = {}
        self._order: list[tuple[str, str, int]] = []
        self._failures: set[tuple[str, str, int]] = set()

    def __len__(self) -> int:
        return len(self._by_key)

    def record(self, judgment: RelevanceJudgment, paper: Paper, chain_id: str, hop: int) -> None:
        key = (judgment.source_id, judgment.target_id, judgment.seed)
        if key not in self._by_key:
            self._order.append(key)
        self._by_key[key] = StoredJudgment(judgment, paper, chain_id, hop)

    def record_failure(self, source_id: str, target_id: str, seed: int) -> None:
        self._failures.add((source_id, target_id, seed))

    def lookup(self, source_id: str, target_id: str, seed: int) -> RelevanceJudgment | None:
        stored = self._by_key.get((source_id, target_id, seed))
        return stored.judgment if stored else None

    def is_failure(self, source_id: str, target_id: str, seed: int) -> bool:
        return (source_id, target_id, seed) in self._failures

    def for_chain(self, chain_id: str) -> list[StoredJudgment]:
        return [self._by_key[k] for k in self._order if self._by_key[k].chain_id == chain_id]

    def to_records(self) -> list[dict]:
        return [self._by_key[k].to_dict() for k in self._order]

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "JudgmentStore":
        store = cls()
        for d in records:
            stored = StoredJudgment.from_dict(d)
            store.record(stored.judgment, stored.paper, stored.chain_id, stored.hop)
        return store
