"""Citation-graph domain model and corpus-level operations.

A corpus is a set of papers plus directed citation edges (citing -> cited).
Operations here are pure: providers (synthetic or HTTP) live in
:mod:`litchain.providers`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .errors import EmptyReview, InvalidChunkSize

YEAR_MIN = 1900
YEAR_MAX = 2100

SOURCE_POLICIES = ("latest", "most_cited")

# Inclusive citing-year window relative to the cited paper's year.
CITING_WINDOW_YEARS = 2


@dataclass(frozen=True)
class Paper:
    """One node of the citation graph. The abstract carries the paper's key claim."""

    id: str
    title: str
    abstract: str
    year: int
    citation_count: int
    review_id: str | None = None

    def __post_init__(self):
        if not self.id:
            raise ValueError("paper id must be non-empty")
        if not (YEAR_MIN <= self.year <= YEAR_MAX):
            raise ValueError(f"paper {self.id}: year {self.year} outside [{YEAR_MIN}, {YEAR_MAX}]")
        if self.citation_count < 0:
            raise ValueError(f"paper {self.id}: negative citation_count")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "abstract": self.abstract,
            "year": self.year,
            "citation_count": self.citation_count,
            "review_id": self.review_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Paper":
        return cls(
            id=d["id"],
            title=d["title"],
            abstract=d["abstract"],
            year=int(d["year"]),
            citation_count=int(d["citation_count"]),
            review_id=d.get("review_id"),
        )


@dataclass
class CitationGraph:
    """Immutable-after-load citation graph; safe to share read-only across threads."""

    papers: dict[str, Paper] = field(default_factory=dict)
    edges: set[tuple[str, str]] = field(default_factory=set)  # (citing, cited)

    def validate(self) -> None:
        for citing, cited in self.edges:
            if citing == cited:
                raise ValueError(f"self-edge on {citing}")
            if citing not in self.papers or cited not in self.papers:
                raise ValueError(f"edge ({citing}, {cited}) has an endpoint outside the corpus")
            if self.papers[citing].year < self.papers[cited].year:
                raise ValueError(
                    f"edge ({citing}, {cited}) violates temporal order: "
                    f"{self.papers[citing].year} < {self.papers[cited].year}"
                )

    def citers_of(self, paper_id: str) -> list[Paper]:
        """All papers citing `paper_id`, unfiltered, sorted by (year, id)."""
        found = [self.papers[c] for (c, d) in self.edges if d == paper_id]
        return sorted(found, key=lambda p: (p.year, p.id))


@dataclass
class ProviderConfig:
    """How to reach a paper source: a live endpoint or the synthetic generator."""

    base_url: str = "synthetic"
    auth_token_env: str | None = None
    max_concurrent: int = 1
    retry_budget: int = 2
    seed: int = 0
    cache_dir: str | None = None

    def __post_init__(self):
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.retry_budget < 0:
            raise ValueError("retry_budget must be >= 0")

    @property
    def synthetic(self) -> bool:
        return self.base_url == "synthetic"


def select_source(review_papers: Sequence[Paper], policy: str = "latest") -> Paper:
    """Pick the review's source paper under `policy`.

    "latest" maximizes year, "most_cited" maximizes citation count. Ties break
    toward higher citation count, then lexicographically smallest id, so the
    result is unique and permutation-invariant.
    """
    if not review_papers:
        raise EmptyReview("cannot select a source from an empty review")
    if policy == "latest":
        key = lambda p: (-p.year, -p.citation_count, p.id)
    elif policy == "most_cited":
        key = lambda p: (-p.citation_count, p.id)
    else:
        raise ValueError(f"unknown source policy {policy!r}; expected one of {SOURCE_POLICIES}")
    return min(review_papers, key=key)


def fetch_citing(paper: Paper, provider) -> list[Paper]:
    """Citing papers within the inclusive window [year, year + 2], (year, id) sorted.

    `provider` is any object with ``citing_papers(paper_id) -> list[Paper]``
    (see :mod:`litchain.providers`). Raises UnknownPaper / ProviderUnavailable
    from the provider.
    """
    lo, hi = paper.year, paper.year + CITING_WINDOW_YEARS
    citers = [p for p in provider.citing_papers(paper.id) if lo <= p.year <= hi]
    return sorted(citers, key=lambda p: (p.year, p.id))


def chunk_papers(papers: Sequence[Paper], chunk_size: int) -> list[list[Paper]]:
    """Contiguous order-preserving chunks; all full-size except possibly the last."""
    if chunk_size < 1:
        raise InvalidChunkSize(f"chunk_size must be >= 1, got {chunk_size}")
    return [list(papers[i : i + chunk_size]) for i in range(0, len(papers), chunk_size)]
