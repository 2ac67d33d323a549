"""Confidence-guided decoding strategies for reasoning models.

Token-wise and step-wise reasoning-path search with early acceptance of
confidently terminated chains, greedy/random/beam baselines, rollout-group
advantage and clipped-objective mathematics, token-efficiency metrics, and an
experiment harness with an HTTP service front end.
"""

from .candidate import CandidateSequence, Completion, QueryContext, extend, phi_score, retain_top
from .grouprl import (
    RatioInputs,
    RolloutGroup,
    SamplingConfig,
    build_group,
    group_advantages,
    grpo_token_terms,
    gspo_objective,
    gspo_sequence_ratio,
    partition_objective,
    score_group,
    with_advantages,
)
from .harness import ExperimentSpec, ProblemRecord, ingest_problems, run_experiment
from .metrics import MetricRow, eot_rank_ratio_stats, pass_at_1_mean, rfcs, token_efficiency
from .policy import (
    RemotePolicy,
    RemotePolicySpec,
    StepProposal,
    SyntheticPolicy,
    SyntheticPolicySpec,
    TokenDistribution,
    synthetic_from_spec,
)
from .sage import SageConfig, degrade_sage, random_decode, sage
from .trace import SearchTrace
from .tsearch import (
    SearchConfig,
    greedy_answer,
    greedy_decode,
    h_from_tolerance_ratio,
    tsearch,
    vanilla_beam_search,
)
from .verifiers import Verifier, parse_verifier

__version__ = "0.1.0"

__all__ = [
    "CandidateSequence",
    "Completion",
    "QueryContext",
    "extend",
    "phi_score",
    "retain_top",
    "RatioInputs",
    "RolloutGroup",
    "SamplingConfig",
    "build_group",
    "group_advantages",
    "grpo_token_terms",
    "gspo_objective",
    "gspo_sequence_ratio",
    "partition_objective",
    "score_group",
    "with_advantages",
    "ExperimentSpec",
    "ProblemRecord",
    "ingest_problems",
    "run_experiment",
    "MetricRow",
    "eot_rank_ratio_stats",
    "pass_at_1_mean",
    "rfcs",
    "token_efficiency",
    "RemotePolicy",
    "RemotePolicySpec",
    "StepProposal",
    "SyntheticPolicy",
    "SyntheticPolicySpec",
    "TokenDistribution",
    "synthetic_from_spec",
    "SageConfig",
    "degrade_sage",
    "random_decode",
    "sage",
    "SearchTrace",
    "SearchConfig",
    "greedy_answer",
    "greedy_decode",
    "h_from_tolerance_ratio",
    "tsearch",
    "vanilla_beam_search",
    "Verifier",
    "parse_verifier",
]
