"""Rollout-group construction and group-relative objective mathematics.

Builds mixed rollout groups (step-wise-searched completions plus plain random
samples), scores them with a rule-based binary verifier, normalizes rewards
into group advantages, and evaluates the clipped surrogate objectives with
token-level or sequence-level importance ratios. Objective values only; no
gradients, no parameter updates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import IO

from .candidate import Completion, QueryContext
from .errors import ConfigError, GroupTooSmall, ShapeMismatch
from .policy import Policy
from .sage import SageConfig, random_decode, sage
from .seeding import stable_seed
from .verifiers import BoundVerifier

DEFAULT_CLIP_EPSILON = 0.2  # no canonical value exists for this ratio clip; documented gap

# Training-loop regularizer coefficients recorded for completeness; they belong
# to parameter updates, which this module deliberately never performs.
TRAINING_KL_COEFF = 0.001
TRAINING_ENTROPY_COEFF = 0.001

SOURCE_SAGE = "sage"
SOURCE_RANDOM = "random"


@dataclass(frozen=True)
class SamplingConfig:
    """Plain random-sampling settings for the non-searched completions."""

    t_max_tokens: int = 32768
    temperature: float = 1.0
    top_p: float = 0.95
    answer_budget: int = 100


@dataclass(frozen=True)
class RolloutGroup:
    """G completions for one query with their sources, rewards, and advantages."""

    query_id: str
    completions: tuple[Completion, ...]
    sources: tuple[str, ...]
    rewards: tuple[float, ...] | None = None
    advantages: tuple[float, ...] | None = None
    degenerate: bool = False

    def __post_init__(self) -> None:
        if len(self.sources) != len(self.completions):
            raise ShapeMismatch("one source tag per completion required")
        if self.rewards is not None and len(self.rewards) != len(self.completions):
            raise ShapeMismatch("one reward per completion required")

    @property
    def size(self) -> int:
        return len(self.completions)

    @property
    def r_sage(self) -> int:
        return sum(1 for s in self.sources if s == SOURCE_SAGE)


def build_group(
    policy: Policy,
    ctx: QueryContext,
    group_size: int,
    r_sage: int,
    sage_cfg: SageConfig,
    sampling_cfg: SamplingConfig,
    seed: int,
    query_id: str = "",
) -> RolloutGroup:
    """Sample a hybrid rollout group: ``r_sage`` searched + the rest random.

    Rewards stay unset until the group is scored. Plain all-random groups are
    expressed by the caller skipping the hybrid path entirely, so r_sage=0 is
    rejected here.
    """
    if not 1 <= r_sage <= group_size:
        raise ConfigError("r_sage must satisfy 1 <= r_sage <= G")
    if sage_cfg.r != r_sage:
        raise ConfigError(f"sage_cfg.r={sage_cfg.r} must equal r_sage={r_sage}")
    searched, _ = sage(policy, ctx, sage_cfg, stable_seed(seed, "group-sage"))
    randoms = [
        random_decode(
            policy,
            ctx,
            sampling_cfg.t_max_tokens,
            sampling_cfg.temperature,
            sampling_cfg.top_p,
            stable_seed(seed, "group-random", i),
            answer_budget=sampling_cfg.answer_budget,
        )
        for i in range(group_size - r_sage)
    ]
    return RolloutGroup(
        query_id=query_id,
        completions=tuple(searched) + tuple(randoms),
        sources=(SOURCE_SAGE,) * r_sage + (SOURCE_RANDOM,) * (group_size - r_sage),
    )


def score_group(group: RolloutGroup, verifier: BoundVerifier) -> RolloutGroup:
    """Assign binary rewards by running the bound verifier on each answer text."""
    rewards = tuple(1.0 if verifier.check(c.answer_text) else 0.0 for c in group.completions)
    return replace(group, rewards=rewards)


@dataclass(frozen=True)
class AdvantageResult:
    advantages: tuple[float, ...]
    degenerate: bool


def group_advantages(rewards: list[float], *, sample_std: bool = False) -> AdvantageResult:
    """Center and scale rewards by the group mean and standard deviation.

    Population std by default; ``sample_std`` switches to the n-1 divisor for
    comparison studies. A zero-variance group (all rewards equal) yields
    all-zero advantages with the degenerate flag set instead of dividing by
    zero, so all-correct or all-wrong groups are inert rather than fatal.
    """
    n = len(rewards)
    if n < 2:
        raise GroupTooSmall("advantage normalization needs at least 2 rewards")
    mean = sum(rewards) / n
    var = sum((r - mean) ** 2 for r in rewards) / (n - 1 if sample_std else n)
    if var == 0.0:
        return AdvantageResult(advantages=(0.0,) * n, degenerate=True)
    std = math.sqrt(var)
    return AdvantageResult(advantages=tuple((r - mean) / std for r in rewards), degenerate=False)


def with_advantages(group: RolloutGroup) -> RolloutGroup:
    """Attach normalized advantages to a scored group."""
    if group.rewards is None:
        raise ConfigError("group must be scored before advantages are computed")
    result = group_advantages(list(group.rewards))
    return replace(group, advantages=result.advantages, degenerate=result.degenerate)


@dataclass(frozen=True)
class RatioInputs:
    """Aligned per-token log-probs under the current and rollout-time policies."""

    logprobs_new: tuple[tuple[float, ...], ...]
    logprobs_old: tuple[tuple[float, ...], ...]
    clip_epsilon: float = DEFAULT_CLIP_EPSILON

    def __post_init__(self) -> None:
        if len(self.logprobs_new) != len(self.logprobs_old):
            raise ShapeMismatch("old/new log-prob groups differ in completion count")
        for i, (new, old) in enumerate(zip(self.logprobs_new, self.logprobs_old)):
            if len(new) != len(old):
                raise ShapeMismatch(f"completion {i}: old/new token counts differ")
            if len(new) == 0:
                raise ShapeMismatch(f"completion {i} has no tokens")
        if not 0 < self.clip_epsilon < 1:
            raise ConfigError("clip epsilon must lie in (0, 1)")


def clipped_term(ratio: float, advantage: float, eps: float) -> float:
    """One pessimistic surrogate term: min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)."""
    clipped = min(max(ratio, 1.0 - eps), 1.0 + eps)
    return min(ratio * advantage, clipped * advantage)


@dataclass(frozen=True)
class TokenObjective:
    """Token-ratio surrogate: per-token terms, per-completion means, group value."""

    ratios: tuple[tuple[float, ...], ...]
    token_terms: tuple[tuple[float, ...], ...]
    per_completion: tuple[float, ...]
    objective: float


def grpo_token_terms(inputs: RatioInputs, advantages: tuple[float, ...]) -> TokenObjective:
    """Token-level clipped surrogate.

    Per token: ratio w = exp(lp_new - lp_old), term = min(w*A, clip(w)*A).
    The group objective is the mean over completions of each completion's
    mean token term.
    """
    if len(advantages) != len(inputs.logprobs_new):
        raise ShapeMismatch("one advantage per completion required")
    ratios = []
    terms = []
    per_completion = []
    for adv, new, old in zip(advantages, inputs.logprobs_new, inputs.logprobs_old):
        w = tuple(math.exp(n - o) for n, o in zip(new, old))
        t = tuple(clipped_term(wi, adv, inputs.clip_epsilon) for wi in w)
        ratios.append(w)
        terms.append(t)
        per_completion.append(sum(t) / len(t))
    g = len(per_completion)
    return TokenObjective(
        ratios=tuple(ratios),
        token_terms=tuple(terms),
        per_completion=tuple(per_completion),
        objective=sum(per_completion) / g,
    )


def gspo_sequence_ratio(lp_new: list[float], lp_old: list[float]) -> float:
    """Length-normalized sequence importance ratio.

    exp of the mean per-token log-ratio, which equals the |y|-th root of the
    product of per-token ratios.
    """
    if len(lp_new) != len(lp_old):
        raise ShapeMismatch("old/new log-prob vectors differ in length")
    if not lp_new:
        raise ShapeMismatch("sequence ratio needs at least one token")
    return math.exp(sum(n - o for n, o in zip(lp_new, lp_old)) / len(lp_new))


def gspo_objective(ratios: list[float], advantages: list[float], eps: float = DEFAULT_CLIP_EPSILON) -> float:
    """Sequence-level clipped surrogate: mean over completions of min(s*A, clip(s)*A)."""
    if len(ratios) != len(advantages):
        raise ShapeMismatch("one advantage per sequence ratio required")
    if not ratios:
        raise ShapeMismatch("objective needs at least one completion")
    if eps <= 0:
        raise ConfigError("clip epsilon must be positive")
    return sum(clipped_term(s, a, eps) for s, a in zip(ratios, advantages)) / len(ratios)


@dataclass(frozen=True)
class PartitionedObjective:
    """The same group objective split into searched and random contributions."""

    sage_part: float
    random_part: float

    @property
    def total(self) -> float:
        return self.sage_part + self.random_part


def partition_objective(per_completion: tuple[float, ...], sources: tuple[str, ...]) -> PartitionedObjective:
    """Split a group objective by completion source.

    Each part is (1/G) times the sum of its completions' values, so the two
    parts add up to the unpartitioned group mean.
    """
    if len(per_completion) != len(sources):
        raise ShapeMismatch("one source tag per completion value required")
    g = len(per_completion)
    sage_sum = sum(v for v, s in zip(per_completion, sources) if s == SOURCE_SAGE)
    random_sum = sum(v for v, s in zip(per_completion, sources) if s != SOURCE_SAGE)
    return PartitionedObjective(sage_part=sage_sum / g, random_part=random_sum / g)


def dump_group_jsonl(group: RolloutGroup, fp: IO[str]) -> None:
    """Serialize a group as JSONL, one object per completion."""
    for i, comp in enumerate(group.completions):
        record = {
            "query_id": group.query_id,
            "source": group.sources[i],
            "tokens": list(comp.tokens),
            "logprobs": list(comp.logprobs),
            "reward": None if group.rewards is None else group.rewards[i],
            "advantage": None if group.advantages is None else group.advantages[i],
        }
        fp.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
