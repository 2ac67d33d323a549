"""Candidate-sequence values and the path/local confidence scores.

A candidate holds only generated tokens (never the query); its cached
cumulative log-probability is maintained by ``extend`` with a plain left-fold
so that incremental and from-scratch scores are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import ConfigError, EmptyCandidate


@dataclass(frozen=True)
class CandidateSequence:
    """Generated tokens with per-token base log-probabilities.

    ``terminated`` is true exactly when the last token closes the thinking
    phase; value semantics throughout (``extend`` returns a new candidate).
    """

    gen_tokens: tuple[int, ...] = ()
    gen_logprobs: tuple[float, ...] = ()
    cum_logprob: float = 0.0
    terminated: bool = False

    def __len__(self) -> int:
        return len(self.gen_tokens)

    @property
    def last_logprob(self) -> float:
        if not self.gen_logprobs:
            raise EmptyCandidate("candidate has no generated tokens")
        return self.gen_logprobs[-1]


@dataclass(frozen=True)
class QueryContext:
    """The query side of a search: prompt tokens plus the start-of-thinking flag."""

    query_tokens: tuple[int, ...]
    insert_sot: bool = True

    def __post_init__(self) -> None:
        if not self.query_tokens:
            raise ConfigError("query_tokens must be nonempty")

    def prompt_tokens(self, think_id: int) -> tuple[int, ...]:
        """Full conditioning prefix; appends the start-of-thinking sentinel when enabled."""
        if self.insert_sot:
            return self.query_tokens + (think_id,)
        return self.query_tokens


@dataclass(frozen=True)
class Completion:
    """A finished reasoning chain plus its greedily decoded answer.

    ``phi`` is the path confidence of the thinking chain. ``forced`` marks
    chains closed by appending the end-of-thinking token at the step budget
    rather than by the model choosing it. ``accept_rank`` is the 1-based rank
    the end token held in its parent's candidate window, when applicable.
    """

    think_tokens: tuple[int, ...]
    think_logprobs: tuple[float, ...]
    answer_tokens: tuple[int, ...] = ()
    answer_logprobs: tuple[float, ...] = ()
    answer_text: str = ""
    phi: float = 0.0
    forced: bool = False
    strategy: str = ""
    seed: int | None = None
    accept_step: int | None = None
    accept_rank: int | None = None

    @property
    def tokens(self) -> tuple[int, ...]:
        return self.think_tokens + self.answer_tokens

    @property
    def logprobs(self) -> tuple[float, ...]:
        return self.think_logprobs + self.answer_logprobs

    @property
    def think_len(self) -> int:
        return len(self.think_tokens)

    @property
    def response_len(self) -> int:
        return len(self.think_tokens) + len(self.answer_tokens)


def phi_score(cand: CandidateSequence, *, prompt_len: int = 0) -> float:
    """Average cumulative log-probability of the generated tokens.

    Normalization is over generated tokens only; pass ``prompt_len`` to opt
    into prompt-inclusive normalization for replicating implementations that
    divide by the total sequence length.
    """
    if len(cand.gen_tokens) == 0:
        raise EmptyCandidate("path confidence is undefined for an empty candidate")
    return cand.cum_logprob / (len(cand.gen_tokens) + prompt_len)


def extend(cand: CandidateSequence, token_id: int, logprob: float, end_think_id: int) -> CandidateSequence:
    """Append one token, updating the cached cumulative score and termination flag."""
    return replace(
        cand,
        gen_tokens=cand.gen_tokens + (token_id,),
        gen_logprobs=cand.gen_logprobs + (logprob,),
        cum_logprob=cand.cum_logprob + logprob,
        terminated=token_id == end_think_id,
    )


def retain_top(
    cands: list[CandidateSequence],
    m: int,
    key: str = "phi",
) -> list[CandidateSequence]:
    """Keep the min(m, len) highest-scoring candidates.

    ``key`` is "phi" for path confidence or "last_logprob" for the newest
    token's local confidence. Ordering is descending key with ties broken by
    the candidates' positions in the input list, which makes retention
    deterministic and idempotent.
    """
    if m < 1:
        raise ConfigError("m must be at least 1")
    if key == "phi":
        scores = [phi_score(c) for c in cands]
    elif key == "last_logprob":
        scores = [c.last_logprob for c in cands]
    else:
        raise ConfigError(f"unknown retention key {key!r}")
    order = sorted(range(len(cands)), key=lambda i: (-scores[i], i))
    return [cands[i] for i in order[:m]]
