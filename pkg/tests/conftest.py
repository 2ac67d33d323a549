"""Shared fixtures: tiny policy builders and random policy generators."""

from __future__ import annotations

import random

import pytest

from thinkstop.candidate import QueryContext
from thinkstop.policy import SyntheticPolicy, SyntheticPolicySpec, synthetic_from_spec

# Fixed id layout for the tiny policies used throughout the tests.
THINK, END_THINK, DELIM, QUERY = 0, 1, 2, 3


def make_policy(
    vocab_size: int,
    table: dict[tuple[int, ...], tuple[float, ...]],
    default: tuple[float, ...],
    eos_id: int | None = None,
    vocab: tuple[str, ...] | None = None,
) -> SyntheticPolicy:
    return synthetic_from_spec(
        SyntheticPolicySpec(
            vocab_size=vocab_size,
            table=table,
            default_dist=default,
            think_id=THINK,
            end_think_id=END_THINK,
            step_delim_ids=frozenset({DELIM}),
            eos_id=eos_id,
            vocab=vocab,
        )
    )


def uniform_policy(vocab_size: int) -> SyntheticPolicy:
    return make_policy(vocab_size, {}, (1.0 / vocab_size,) * vocab_size)


def query_ctx(insert_sot: bool = True) -> QueryContext:
    return QueryContext((QUERY,), insert_sot=insert_sot)


PROMPT = (QUERY, THINK)  # query_ctx() prompt with the start-of-thinking sentinel


def _random_dist(rng: random.Random, vocab_size: int) -> tuple[float, ...]:
    """Random distribution; occasionally zeroes entries or boosts early termination."""
    weights = [rng.random() for _ in range(vocab_size)]
    weights[THINK] = 0.0  # the opening sentinel never recurs mid-chain
    for i in range(vocab_size):
        if rng.random() < 0.2:
            weights[i] = 0.0
    if rng.random() < 0.4:
        weights[END_THINK] = rng.uniform(0.5, 3.0)
    if all(w == 0.0 for w in weights):
        weights[QUERY] = 1.0
    total = sum(weights)
    return tuple(w / total for w in weights)


def random_policy(rng: random.Random, vocab_size: int | None = None) -> SyntheticPolicy:
    """Random enumerable policy whose table rows sit on reachable contexts."""
    v = vocab_size if vocab_size is not None else rng.randint(4, 6)
    table: dict[tuple[int, ...], tuple[float, ...]] = {}
    for _ in range(rng.randint(0, 8)):
        depth = rng.randint(0, 3)
        suffix = tuple(rng.randrange(v) for _ in range(depth))
        table[PROMPT + suffix] = _random_dist(rng, v)
    return make_policy(v, table, _random_dist(rng, v))


def step_tree_policy(
    rng: random.Random, branches: int = 3, delim_prob: float = 1.0
) -> SyntheticPolicy:
    """Enumerable step-tree: a bounded set of distinct next steps per prefix.

    Content tokens act as branch markers; after a branch token the chain emits
    the step delimiter with probability ``delim_prob`` (else the
    end-of-thinking token), so each sampled step is (branch, delimiter),
    (branch, end), or the bare end token. With delim_prob=1 that is at most
    branches+1 distinct steps per prefix. The end token also gets mass at
    branch points so chains can terminate as a single-token step.
    """
    v = 4 + branches  # sentinels + query + branch tokens
    branch_ids = tuple(range(4, 4 + branches))
    weights = {b: rng.uniform(0.2, 1.0) for b in branch_ids}
    p_end = rng.uniform(0.05, 0.4)
    total = sum(weights.values()) / (1.0 - p_end)
    branch_dist = [0.0] * v
    for b in branch_ids:
        branch_dist[b] = weights[b] / total
    branch_dist[END_THINK] = p_end

    after_branch = [0.0] * v
    after_branch[DELIM] = delim_prob
    after_branch[END_THINK] = 1.0 - delim_prob

    table: dict[tuple[int, ...], tuple[float, ...]] = {}
    for b in branch_ids:
        # Any context ending in a fresh branch token emits a stop token next;
        # lookup is last-token based, these rows just carry the vectors.
        table[PROMPT + (b,)] = tuple(after_branch)
    spec = SyntheticPolicySpec(
        vocab_size=v,
        table=table,
        default_dist=tuple(branch_dist),
        think_id=THINK,
        end_think_id=END_THINK,
        step_delim_ids=frozenset({DELIM}),
    )
    return _StepTreePolicy(spec)


class _StepTreePolicy(SyntheticPolicy):
    """Synthetic policy whose post-branch distribution is position-aware.

    The plain longest-prefix table cannot express "delimiter right after any
    branch token" for arbitrarily deep chains, so the lookup is specialized:
    contexts ending in a branch token emit the delimiter with probability 1,
    anything else uses the branch distribution.
    """

    def full_distribution(self, prefix: tuple[int, ...]) -> tuple[float, ...]:
        prefix = tuple(prefix)
        if prefix and prefix[-1] >= 4:
            return self.spec.table[PROMPT + (prefix[-1],)]
        return self.spec.default_dist


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0FFEE)
