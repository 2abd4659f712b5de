"""Literature reasoning chains over citation graphs: build, corrupt, split, emit, evaluate."""

from .chainbuild import (
    BuildConfig,
    ChainNode,
    ChainStats,
    ReasoningChain,
    build_chain,
    chain_stats,
    select_top,
)
from .corpus import CitationGraph, Paper, ProviderConfig, chunk_papers, fetch_citing, select_source
from .dataset import (
    SplitPlan,
    TaskExample,
    emit_task_examples,
    split_by_review,
    validate_dataset,
    window_subchains,
)
from .inference import (
    GenerationOutput,
    JudgeScores,
    generate_hypothesis,
    judge_hypothesis,
    parse_generation_output,
    parse_judge_output,
    parse_validation_output,
    render_prompt,
)
from .metrics import (
    MetricsReport,
    classification_report,
    invalid_node_metrics,
    jaccard,
    length_bucket_report,
)
from .negatives import DistractorPool, candidate_pool, make_easy_negative, make_hard_negative
from .providers import HttpProvider, SyntheticConfig, SyntheticProvider
from .scoring import (
    AgreementReport,
    BackendConfig,
    HttpChatBackend,
    JudgmentStore,
    MockChatBackend,
    OracleBackend,
    RelevanceJudgment,
    ScoringBackend,
    agreement_stats,
    majority_vote,
    relevance_impact,
    score_relevance,
)

__version__ = "0.1.0"
