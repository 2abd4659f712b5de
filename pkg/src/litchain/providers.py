"""Paper providers: a deterministic synthetic generator and a cached HTTP client.

The synthetic generator plants, per review graph:
  * one valid backbone chain b0 -> b1 -> ... (edge relevance 1 or 2),
  * per non-terminal backbone node, a configurable number of relevance-0
    distractor citers with in-window years,
  * from each distractor, a coherent distractor chain whose years mirror the
    remaining backbone years (used for hard-negative tails).

Unplanted pairs default to relevance 0 when scored by the oracle backend.
"""

from __future__ import annotations

import logging
import random
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable
from urllib.parse import quote

import requests

from .corpus import CitationGraph, Paper, ProviderConfig
from .errors import ProviderUnavailable, UnknownPaper
from .jsonl import read_json, sha256_text, write_json

logger = logging.getLogger(__name__)

GRAPH_SCHEMA_VERSION = 1


class CitationProvider(ABC):
    """Read-only access to papers and forward citations."""

    @abstractmethod
    def get_paper(self, paper_id: str) -> Paper:
        """Raise UnknownPaper if the id does not resolve."""

    @abstractmethod
    def citing_papers(self, paper_id: str) -> list[Paper]:
        """All papers citing `paper_id` (unfiltered); deterministic order."""


@dataclass(frozen=True)
class SyntheticConfig:
    seed: int = 0
    n_reviews: int = 1
    backbone_len: int = 8
    start_year: int = 1999
    distractors_per_hop: int = 3
    score2_fraction: float = 0.71
    distractor_chains: bool = True
    review_prefix: str = "R"

    def __post_init__(self):
        if self.backbone_len < 1:
            raise ValueError("backbone_len must be >= 1")
        if self.n_reviews < 1:
            raise ValueError("n_reviews must be >= 1")
        if self.distractors_per_hop < 0:
            raise ValueError("distractors_per_hop must be >= 0")
        if not (0.0 <= self.score2_fraction <= 1.0):
            raise ValueError("score2_fraction must be in [0, 1]")


@dataclass
class ReviewGraph:
    """One planted sub-graph: a backbone, its distractors, and true edge labels."""

    review_id: str
    source_id: str
    target_year: int
    backbone: list[str]
    distractor_chains: dict[str, list[str]]
    papers: dict[str, Paper]
    edges: set[tuple[str, str]]
    labels: dict[tuple[str, str], int]  # (earlier paper, citing paper) -> relevance

    def to_dict(self) -> dict:
        return {
            "schema_version": GRAPH_SCHEMA_VERSION,
            "review_id": self.review_id,
            "source_id": self.source_id,
            "target_year": self.target_year,
            "backbone": list(self.backbone),
            "distractor_chains": {k: list(v) for k, v in sorted(self.distractor_chains.items())},
            "papers": [self.papers[pid].to_dict() for pid in sorted(self.papers)],
            "edges": sorted(list(e) for e in self.edges),
            "labels": [[s, t, score] for (s, t), score in sorted(self.labels.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReviewGraph":
        papers = {p["id"]: Paper.from_dict(p) for p in d["papers"]}
        return cls(
            review_id=d["review_id"],
            source_id=d["source_id"],
            target_year=int(d["target_year"]),
            backbone=list(d["backbone"]),
            distractor_chains={k: list(v) for k, v in d["distractor_chains"].items()},
            papers=papers,
            edges={(a, b) for a, b in d["edges"]},
            labels={(s, t): int(score) for s, t, score in d["labels"]},
        )


def _planted_relevance(rng: random.Random, score2_fraction: float) -> int:
    return 2 if rng.random() < score2_fraction else 1


def generate_review_graph(review_id: str, seed: int, cfg: SyntheticConfig) -> ReviewGraph:
    """Deterministically plant one review graph from (review_id, seed)."""
    rng = random.Random(seed)
    papers: dict[str, Paper] = {}
    edges: set[tuple[str, str]] = set()
    labels: dict[tuple[str, str], int] = {}
    distractor_chains: dict[str, list[str]] = {}

    def add_paper(pid: str, year: int, cites: int) -> Paper:
        paper = Paper(
            id=pid,
            title=f"Study {pid}: planted cohort finding",
            abstract=(
                f"Synthetic abstract for study {pid}. The trial reports outcomes for a "
                f"planted cohort observed in {year} and discusses follow-up directions."
            ),
            year=year,
            citation_count=cites,
            review_id=review_id,
        )
        papers[pid] = paper
        return paper

    # Backbone years: strictly increasing, steps of 1 or 2 (inside the citing window).
    years = [cfg.start_year]
    for _ in range(cfg.backbone_len - 1):
        years.append(years[-1] + rng.choice((1, 2)))
    backbone = []
    for i, year in enumerate(years):
        pid = f"{review_id}.B{i:02d}"
        add_paper(pid, year, rng.randint(5, 2500))
        backbone.append(pid)
        if i > 0:
            edges.add((pid, backbone[i - 1]))
            labels[(backbone[i - 1], pid)] = _planted_relevance(rng, cfg.score2_fraction)
    target_year = years[-1]

    # Distractors: relevance-0 citers of each non-terminal backbone node, with the
    # same year as the next backbone node so corruption can swap them in place.
    for i in range(cfg.backbone_len - 1):
        hop_year = years[i + 1]
        for k in range(cfg.distractors_per_hop):
            did = f"{review_id}.D{i:02d}.{k}"
            add_paper(did, hop_year, rng.randint(0, 400))
            edges.add((did, backbone[i]))
            labels[(backbone[i], did)] = 0
            if not cfg.distractor_chains:
                continue
            # Coherent chain from the distractor, mirroring the remaining backbone years.
            chain_ids = [did]
            prev = did
            for j, mirror_year in enumerate(years[i + 2 :]):
                eid = f"{review_id}.E{i:02d}.{k}.{j}"
                add_paper(eid, mirror_year, rng.randint(0, 400))
                edges.add((eid, prev))
                labels[(prev, eid)] = _planted_relevance(rng, cfg.score2_fraction)
                chain_ids.append(eid)
                prev = eid
            distractor_chains[did] = chain_ids

    graph = ReviewGraph(
        review_id=review_id,
        source_id=backbone[0],
        target_year=target_year,
        backbone=backbone,
        distractor_chains=distractor_chains,
        papers=papers,
        edges=edges,
        labels=labels,
    )
    CitationGraph(papers=papers, edges=edges).validate()
    return graph


def generate_corpus(cfg: SyntheticConfig) -> list[ReviewGraph]:
    """One independent review graph per review id, each with a derived seed."""
    graphs = []
    for r in range(cfg.n_reviews):
        review_id = f"{cfg.review_prefix}{r:03d}"
        graphs.append(generate_review_graph(review_id, cfg.seed + r, cfg))
    return graphs


class SyntheticProvider(CitationProvider):
    """In-memory provider over one or more planted review graphs."""

    def __init__(self, graphs: Iterable[ReviewGraph]):
        self.graphs = list(graphs)
        self.papers: dict[str, Paper] = {}
        self.labels: dict[tuple[str, str], int] = {}
        self.distractor_chains: dict[str, list[str]] = {}
        self._citers: dict[str, list[str]] = {}
        for g in self.graphs:
            overlap = set(g.papers) & set(self.papers)
            if overlap:
                raise ValueError(f"duplicate paper ids across review graphs: {sorted(overlap)[:3]}")
            self.papers.update(g.papers)
            self.labels.update(g.labels)
            self.distractor_chains.update(g.distractor_chains)
            for citing, cited in g.edges:
                self._citers.setdefault(cited, []).append(citing)
        for cited in self._citers:
            self._citers[cited].sort(key=lambda pid: (self.papers[pid].year, pid))

    @classmethod
    def from_config(cls, cfg: SyntheticConfig) -> "SyntheticProvider":
        return cls(generate_corpus(cfg))

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "SyntheticProvider":
        return cls(ReviewGraph.from_dict(d) for d in records)

    def to_records(self) -> list[dict]:
        return [g.to_dict() for g in self.graphs]

    def get_paper(self, paper_id: str) -> Paper:
        try:
            return self.papers[paper_id]
        except KeyError:
            raise UnknownPaper(f"no paper with id {paper_id!r}") from None

    def citing_papers(self, paper_id: str) -> list[Paper]:
        if paper_id not in self.papers:
            raise UnknownPaper(f"no paper with id {paper_id!r}")
        return [self.papers[pid] for pid in self._citers.get(paper_id, [])]

    def review_sources(self) -> list[Paper]:
        """The planted source paper of each review graph."""
        return [self.papers[g.source_id] for g in self.graphs]


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class HttpProvider(CitationProvider):
    """Citation endpoint client with a local per-paper JSON cache.

    Endpoint contract:
      GET {base_url}/papers/{id}            -> paper object
      GET {base_url}/papers/{id}/citations  -> {"citations": [paper, ...]}

    Paper objects carry id, title, abstract, year, citation_count and an
    optional review_id. Papers without an abstract are dropped with a warning
    because scoring requires abstract text.
    """

    def __init__(self, config: ProviderConfig, session: requests.Session | None = None):
        if config.synthetic:
            raise ValueError("HttpProvider needs a real base_url, not 'synthetic'")
        self.config = config
        self.session = session or requests.Session()
        self.cache_dir = Path(config.cache_dir) if config.cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._cache_lock = threading.Lock()

    def _headers(self) -> dict:
        headers = {"Accept": "application/json"}
        if self.config.auth_token_env:
            import os

            token = os.environ.get(self.config.auth_token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def _cache_path(self, paper_id: str) -> Path:
        return self.cache_dir / f"{sha256_text(paper_id)[:24]}.json"

    def _cache_read(self, paper_id: str) -> dict:
        if not self.cache_dir:
            return {}
        path = self._cache_path(paper_id)
        if path.exists():
            try:
                return read_json(path)
            except ValueError:
                logger.warning("dropping unreadable cache entry %s", path)
        return {}

    def _cache_update(self, paper_id: str, **fields) -> None:
        if not self.cache_dir:
            return
        with self._cache_lock:
            doc = self._cache_read(paper_id)
            doc["id"] = paper_id
            doc.update(fields)
            write_json(self._cache_path(paper_id), doc)

    def _get(self, url: str):
        last_err = None
        for attempt in range(self.config.retry_budget + 1):
            try:
                resp = self.session.get(url, headers=self._headers(), timeout=30)
            except requests.RequestException as exc:
                last_err = exc
            else:
                if resp.status_code == 404:
                    raise UnknownPaper(f"endpoint returned 404 for {url}")
                if resp.status_code == 200:
                    return resp.json()
                last_err = ProviderUnavailable(f"HTTP {resp.status_code} from {url}")
                if resp.status_code not in _RETRYABLE_STATUS:
                    break
            if attempt < self.config.retry_budget:
                time.sleep(min(0.05 * 2**attempt, 1.0))
        raise ProviderUnavailable(f"gave up on {url} after {self.config.retry_budget + 1} tries: {last_err}")

    def _parse_paper(self, obj: dict) -> Paper | None:
        if not obj.get("abstract"):
            logger.warning("dropping paper %s: missing abstract", obj.get("id"))
            return None
        return Paper(
            id=str(obj["id"]),
            title=obj.get("title", ""),
            abstract=obj["abstract"],
            year=int(obj["year"]),
            citation_count=int(obj.get("citation_count", 0)),
            review_id=obj.get("review_id"),
        )

    def get_paper(self, paper_id: str) -> Paper:
        cached = self._cache_read(paper_id)
        obj = cached.get("paper")
        if obj is None:
            obj = self._get(f"{self.config.base_url}/papers/{quote(paper_id, safe='')}")
            self._cache_update(paper_id, paper=obj)
        paper = self._parse_paper(obj)
        if paper is None:
            raise UnknownPaper(f"paper {paper_id!r} has no usable abstract")
        return paper

    def citing_papers(self, paper_id: str) -> list[Paper]:
        cached = self._cache_read(paper_id)
        objs = cached.get("citations")
        if objs is None:
            data = self._get(f"{self.config.base_url}/papers/{quote(paper_id, safe='')}/citations")
            objs = data.get("citations", [])
            self._cache_update(paper_id, citations=objs)
        papers = [p for p in (self._parse_paper(o) for o in objs) if p is not None]
        return sorted(papers, key=lambda p: (p.year, p.id))


def make_provider(
    config: ProviderConfig,
    synthetic_cfg: SyntheticConfig | None = None,
    graph_records: Iterable[dict] | None = None,
) -> CitationProvider:
    """Provider factory: synthetic (from records or config) or HTTP."""
    if config.synthetic:
        if graph_records is not None:
            return SyntheticProvider.from_records(graph_records)
        if synthetic_cfg is None:
            synthetic_cfg = SyntheticConfig(seed=config.seed)
        return SyntheticProvider.from_config(synthetic_cfg)
    return HttpProvider(config)
