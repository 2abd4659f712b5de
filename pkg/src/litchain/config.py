"""Declarative pipeline configuration: one YAML file drives every stage.

Defaults mirror the construction parameters the pipeline is built around
(batches of 10, top 3 per batch, 70/15/15 split, windows of 5 at stride 2),
and every seed is explicit so no stage consumes ambient randomness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import SOURCE_POLICIES, ProviderConfig
from .chainbuild import BuildConfig
from .errors import ConfigError
from .jsonl import canonical_dumps, sha256_text
from .negatives import EASY_FRACTION_MAX, EASY_FRACTION_MIN, HARD_GOLD_JUNCTION, HARD_GOLD_TAIL
from .providers import SyntheticConfig
from .scoring import BackendConfig

BACKEND_KINDS = ("oracle", "mock", "http")


@dataclass
class NegativesConfig:
    easy_fractions: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5)
    hard_breaks: tuple[int, ...] = (1, 2)
    hard_gold: str = HARD_GOLD_JUNCTION
    seed: int = 11


@dataclass
class SplitConfig:
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 13


@dataclass
class WindowConfig:
    max_len: int = 5
    stride: int = 2


@dataclass
class PipelineConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    backend: BackendConfig = field(default_factory=lambda: BackendConfig(kind="oracle"))
    build: BuildConfig = field(default_factory=BuildConfig)
    negatives: NegativesConfig = field(default_factory=NegativesConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    window: WindowConfig = field(default_factory=WindowConfig)
    tasks: tuple[str, ...] = (
        "one_hop",
        "multi_hop_agnostic",
        "multi_hop_contextual",
        "generation",
    )
    templates_dir: str | None = None
    reviews_file: str | None = None  # live mode: JSONL of review groups
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return {
            "provider": {
                "base_url": self.provider.base_url,
                "auth_token_env": self.provider.auth_token_env,
                "max_concurrent": self.provider.max_concurrent,
                "retry_budget": self.provider.retry_budget,
                "seed": self.provider.seed,
                "cache_dir": self.provider.cache_dir,
            },
            "synthetic": {
                "seed": self.synthetic.seed,
                "n_reviews": self.synthetic.n_reviews,
                "backbone_len": self.synthetic.backbone_len,
                "start_year": self.synthetic.start_year,
                "distractors_per_hop": self.synthetic.distractors_per_hop,
                "score2_fraction": self.synthetic.score2_fraction,
                "distractor_chains": self.synthetic.distractor_chains,
                "review_prefix": self.synthetic.review_prefix,
            },
            "backend": {
                "kind": self.backend.kind,
                "base_url": self.backend.base_url,
                "model": self.backend.model,
                "temperature": self.backend.temperature,
                "auth_token_env": self.backend.auth_token_env,
                "max_concurrent": self.backend.max_concurrent,
                "retry_budget": self.backend.retry_budget,
                "votes": self.backend.votes,
                "template_path": self.backend.template_path,
            },
            "build": {
                "target_year": self.build.target_year,
                "chunk_size": self.build.chunk_size,
                "top_k": self.build.top_k,
                "max_length": self.build.max_length,
                "policy": self.build.policy,
                "seed": self.build.seed,
                "votes": self.build.votes,
            },
            "negatives": {
                "easy_fractions": list(self.negatives.easy_fractions),
                "hard_breaks": list(self.negatives.hard_breaks),
                "hard_gold": self.negatives.hard_gold,
                "seed": self.negatives.seed,
            },
            "split": {"ratios": list(self.split.ratios), "seed": self.split.seed},
            "window": {"max_len": self.window.max_len, "stride": self.window.stride},
            "tasks": list(self.tasks),
            "templates_dir": self.templates_dir,
            "reviews_file": self.reviews_file,
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        """Stable fingerprint embedded in every artifact manifest."""
        payload = self.to_dict()
        # The output directory does not change artifact content.
        payload.pop("output_dir")
        return sha256_text(canonical_dumps(payload))[:16]


def _expect(section: dict, path: str, known: set[str]) -> None:
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}", "unknown field")


def _build_provider(raw: dict) -> ProviderConfig:
    _expect(raw, "provider", {"base_url", "auth_token_env", "max_concurrent", "retry_budget", "seed", "cache_dir"})
    try:
        return ProviderConfig(
            base_url=raw.get("base_url", "synthetic"),
            auth_token_env=raw.get("auth_token_env"),
            max_concurrent=int(raw.get("max_concurrent", 1)),
            retry_budget=int(raw.get("retry_budget", 2)),
            seed=int(raw.get("seed", 0)),
            cache_dir=raw.get("cache_dir"),
        )
    except ValueError as exc:
        raise ConfigError("provider", str(exc)) from exc


def _build_synthetic(raw: dict) -> SyntheticConfig:
    _expect(raw, "synthetic", {"seed", "n_reviews", "backbone_len", "start_year",
                               "distractors_per_hop", "score2_fraction", "distractor_chains",
                               "review_prefix"})
    try:
        return SyntheticConfig(
            seed=int(raw.get("seed", 0)),
            n_reviews=int(raw.get("n_reviews", 1)),
            backbone_len=int(raw.get("backbone_len", 8)),
            start_year=int(raw.get("start_year", 1999)),
            distractors_per_hop=int(raw.get("distractors_per_hop", 3)),
            score2_fraction=float(raw.get("score2_fraction", 0.71)),
            distractor_chains=bool(raw.get("distractor_chains", True)),
            review_prefix=str(raw.get("review_prefix", "R")),
        )
    except ValueError as exc:
        raise ConfigError("synthetic", str(exc)) from exc


def _build_backend(raw: dict) -> BackendConfig:
    _expect(raw, "backend", {"kind", "base_url", "model", "temperature", "auth_token_env",
                             "max_concurrent", "retry_budget", "votes", "template_path"})
    kind = raw.get("kind", "oracle")
    if kind not in BACKEND_KINDS:
        raise ConfigError("backend.kind", f"must be one of {BACKEND_KINDS}, got {kind!r}")
    if kind == "http" and not raw.get("base_url"):
        raise ConfigError("backend.base_url", "required when backend.kind is 'http'")
    try:
        return BackendConfig(
            kind=kind,
            base_url=raw.get("base_url"),
            model=str(raw.get("model", "synthetic-oracle" if kind == "oracle" else "mock-chat")),
            temperature=float(raw.get("temperature", 0.0)),
            auth_token_env=raw.get("auth_token_env"),
            max_concurrent=int(raw.get("max_concurrent", 1)),
            retry_budget=int(raw.get("retry_budget", 2)),
            votes=int(raw.get("votes", 1)),
            template_path=raw.get("template_path"),
        )
    except ValueError as exc:
        raise ConfigError("backend", str(exc)) from exc


def _build_build(raw: dict) -> BuildConfig:
    _expect(raw, "build", {"target_year", "chunk_size", "top_k", "max_length", "policy",
                           "seed", "votes"})
    policy = raw.get("policy", "latest")
    if policy not in SOURCE_POLICIES:
        raise ConfigError("build.policy", f"must be one of {SOURCE_POLICIES}, got {policy!r}")
    try:
        return BuildConfig(
            target_year=None if raw.get("target_year") is None else int(raw["target_year"]),
            chunk_size=int(raw.get("chunk_size", 10)),
            top_k=int(raw.get("top_k", 3)),
            max_length=int(raw.get("max_length", 28)),
            policy=policy,
            seed=int(raw.get("seed", 7)),
            votes=int(raw.get("votes", 1)),
        )
    except ValueError as exc:
        raise ConfigError("build", str(exc)) from exc


def _build_negatives(raw: dict) -> NegativesConfig:
    _expect(raw, "negatives", {"easy_fractions", "hard_breaks", "hard_gold", "seed"})
    fractions = tuple(float(f) for f in raw.get("easy_fractions", (0.1, 0.2, 0.3, 0.4, 0.5)))
    for i, f in enumerate(fractions):
        if not (EASY_FRACTION_MIN <= f <= EASY_FRACTION_MAX):
            raise ConfigError(
                f"negatives.easy_fractions[{i}]",
                f"fraction {f} outside [{EASY_FRACTION_MIN}, {EASY_FRACTION_MAX}]",
            )
    breaks = tuple(int(b) for b in raw.get("hard_breaks", (1, 2)))
    for i, b in enumerate(breaks):
        if b not in (1, 2):
            raise ConfigError(f"negatives.hard_breaks[{i}]", f"must be 1 or 2, got {b}")
    gold = raw.get("hard_gold", HARD_GOLD_JUNCTION)
    if gold not in (HARD_GOLD_JUNCTION, HARD_GOLD_TAIL):
        raise ConfigError("negatives.hard_gold", f"must be junction or tail, got {gold!r}")
    return NegativesConfig(
        easy_fractions=fractions,
        hard_breaks=breaks,
        hard_gold=gold,
        seed=int(raw.get("seed", 11)),
    )


def _build_split(raw: dict) -> SplitConfig:
    _expect(raw, "split", {"ratios", "seed"})
    ratios = tuple(float(r) for r in raw.get("ratios", (0.70, 0.15, 0.15)))
    if len(ratios) != 3:
        raise ConfigError("split.ratios", f"need exactly 3 ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ConfigError("split.ratios", "ratios must be non-negative")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError("split.ratios", f"ratios must sum to 1, got {sum(ratios)}")
    return SplitConfig(ratios=ratios, seed=int(raw.get("seed", 13)))


def _build_window(raw: dict) -> WindowConfig:
    _expect(raw, "window", {"max_len", "stride"})
    max_len = int(raw.get("max_len", 5))
    stride = int(raw.get("stride", 2))
    if max_len < 1:
        raise ConfigError("window.max_len", f"must be >= 1, got {max_len}")
    if stride < 1:
        raise ConfigError("window.stride", f"must be >= 1, got {stride}")
    if stride > max_len:
        raise ConfigError("window.stride", f"stride {stride} > max_len {max_len} leaves gaps")
    return WindowConfig(max_len=max_len, stride=stride)


TOP_LEVEL_FIELDS = {
    "provider", "synthetic", "backend", "build", "negatives", "split", "window",
    "tasks", "templates_dir", "reviews_file", "output_dir",
}


def normalize_config(raw: dict | None, base_dir: str | Path | None = None) -> PipelineConfig:
    """Fill defaults, range-check every field, and resolve referenced paths."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _expect(raw, "<root>", TOP_LEVEL_FIELDS)

    def section(name: str) -> dict:
        value = raw.get(name) or {}
        if not isinstance(value, dict):
            raise ConfigError(name, "must be a mapping")
        return value

    from .dataset import TASK_KINDS

    tasks = tuple(raw.get("tasks", TASK_KINDS))
    for i, t in enumerate(tasks):
        if t not in TASK_KINDS:
            raise ConfigError(f"tasks[{i}]", f"unknown task {t!r}")

    cfg = PipelineConfig(
        provider=_build_provider(section("provider")),
        synthetic=_build_synthetic(section("synthetic")),
        backend=_build_backend(section("backend")),
        build=_build_build(section("build")),
        negatives=_build_negatives(section("negatives")),
        split=_build_split(section("split")),
        window=_build_window(section("window")),
        tasks=tasks,
        templates_dir=raw.get("templates_dir"),
        reviews_file=raw.get("reviews_file"),
        output_dir=str(raw.get("output_dir", "out")),
    )

    base = Path(base_dir) if base_dir else Path.cwd()
    for attr in ("templates_dir", "reviews_file"):
        value = getattr(cfg, attr)
        if value is None:
            continue
        resolved = Path(value)
        if not resolved.is_absolute():
            resolved = base / resolved
        if not resolved.exists():
            raise ConfigError(attr, f"path {resolved} does not exist")
        setattr(cfg, attr, str(resolved))
    return cfg


def validate_config(path: str | Path) -> PipelineConfig:
    """Load and normalize a YAML (or JSON) config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("<file>", f"config file {path} not found")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"unparsable config: {exc}") from exc
    return normalize_config(raw, base_dir=path.parent)
