"""Step-wise reasoning-chain exploration.

Instead of growing chains token by token, each of the top-m candidate chains
is extended by one whole reasoning step per iteration, with 2m steps sampled
independently per candidate. A chain whose newest step ends with the
end-of-thinking token is accepted as a completion immediately; no tolerance
rank is needed because high-confidence chains close themselves confidently.
Retention cuts the remaining pool to the top m by path confidence.

The no-exploration ablation (one sampled step per iteration, no ranking) and
plain ancestral sampling live here too; all three share the same seed
derivation so the ablation is bit-reproducible as the m=1 single-proposal
special case of the full search.
"""

from __future__ import annotations

from dataclasses import dataclass

from .candidate import CandidateSequence, Completion, QueryContext, phi_score, retain_top
from .errors import ConfigError
from .policy import Policy, StepProposal
from .seeding import stable_seed
from .trace import AcceptanceEvent, SearchTrace
from .tsearch import DEFAULT_ANSWER_BUDGET, _finish, _force_close, _pad_to_quota

DEFAULT_MAX_STEPS = 10
DEFAULT_PER_STEP_BUDGET = 100


@dataclass(frozen=True)
class SageConfig:
    """Step-wise search parameters.

    ``t_max`` counts reasoning steps, not tokens. ``proposal_count`` overrides
    the per-candidate proposal fan-out (default 2m); forcing it to 1 with m=1
    reproduces the no-exploration ablation on a shared RNG stream.
    """

    m: int = 2
    r: int = 1
    t_max: int = DEFAULT_MAX_STEPS
    per_step_budget: int = DEFAULT_PER_STEP_BUDGET
    temperature: float = 1.0
    top_p: float = 1.0
    answer_budget: int = DEFAULT_ANSWER_BUDGET
    proposal_count: int | None = None
    dedup_proposals: bool = False

    def validate(self) -> None:
        if self.m < 1:
            raise ConfigError("exploration width m must be >= 1")
        if not 1 <= self.r <= self.m:
            raise ConfigError("r must satisfy 1 <= r <= m")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.per_step_budget < 1:
            raise ConfigError("per_step_budget must be >= 1")
        if self.temperature <= 0 or not 0 < self.top_p <= 1:
            raise ConfigError("temperature must be positive and top_p in (0, 1]")
        if self.proposal_count is not None and self.proposal_count < 1:
            raise ConfigError("proposal_count must be >= 1 when set")
        if self.answer_budget < 0:
            raise ConfigError("answer_budget must be >= 0")

    @property
    def proposals_per_candidate(self) -> int:
        return 2 * self.m if self.proposal_count is None else self.proposal_count


def _extend_by_step(parent: CandidateSequence, prop: StepProposal, end_id: int) -> CandidateSequence:
    # Fold token by token: step-wise and token-wise construction must yield
    # bit-identical cumulative scores (re-chunking invariance).
    cum = parent.cum_logprob
    for lp in prop.logprobs:
        cum += lp
    terminated = bool(prop.tokens) and prop.tokens[-1] == end_id
    return CandidateSequence(
        gen_tokens=parent.gen_tokens + prop.tokens,
        gen_logprobs=parent.gen_logprobs + prop.logprobs,
        cum_logprob=cum,
        terminated=terminated,
    )


def sage(
    policy: Policy,
    ctx: QueryContext,
    cfg: SageConfig,
    seed: int,
) -> tuple[list[Completion], SearchTrace]:
    """Step-wise exploration returning exactly ``cfg.r`` completions plus the trace.

    One batched step-sampling call of width 2m per candidate per iteration;
    duplicate proposals are kept by default because they were independently
    sampled and deduplication would bias retention.
    """
    cfg.validate()
    trace = SearchTrace(strategy="sage", m=cfg.m, h=None, score_key="phi")
    end_id = policy.special.end_think_id
    prompt = ctx.prompt_tokens(policy.special.think_id)

    beam: list[CandidateSequence] = [CandidateSequence()]
    accepted: list[tuple[CandidateSequence, int]] = []  # (chain, step)
    final_step = cfg.t_max

    for step in range(1, cfg.t_max + 1):
        pool: list[CandidateSequence] = []
        arrivals: list[tuple[CandidateSequence, int]] = []  # (chain, parent)
        for j, parent in enumerate(beam):
            proposals = policy.sample_steps(
                prompt + parent.gen_tokens,
                cfg.proposals_per_candidate,
                cfg.per_step_budget,
                cfg.temperature,
                cfg.top_p,
                stable_seed(seed, "sage-step", step, j),
            )
            if cfg.dedup_proposals:
                seen: set[tuple[int, ...]] = set()
                unique = []
                for prop in proposals:
                    if prop.tokens not in seen:
                        seen.add(prop.tokens)
                        unique.append(prop)
                proposals = unique
            for prop in proposals:
                child = _extend_by_step(parent, prop, end_id)
                if prop.end_kind == "end_think":
                    arrivals.append((child, j))
                else:
                    pool.append(child)

        order = sorted(range(len(arrivals)), key=lambda i: (-phi_score(arrivals[i][0]), i))
        for i in order:
            chain, j = arrivals[i]
            took = len(accepted) < cfg.r
            trace.events.append(
                AcceptanceEvent(step, j, took, chain.gen_tokens, phi_score(chain), None)
            )
            if took:
                accepted.append((chain, step))

        if len(accepted) >= cfg.r:
            final_step = step
            break
        beam = retain_top(pool, cfg.m, key="phi")
        trace.record_step(step, [(c, phi_score(c)) for c in beam])
        if not beam:
            final_step = step
            break

    completions = [
        _finish(policy, prompt, chain, cfg.answer_budget, "sage", seed, step, None, forced=False)
        for chain, step in accepted
    ]
    completions.extend(
        _force_close(
            policy, prompt, beam, cfg.r - len(accepted), final_step, cfg.answer_budget, "sage", seed, trace
        )
    )
    _pad_to_quota(completions, cfg.r)
    return completions, trace


def degrade_sage(
    policy: Policy,
    ctx: QueryContext,
    cfg: SageConfig,
    seed: int,
) -> Completion:
    """No-exploration ablation: sample exactly one step per iteration, no pool.

    Shares the seed-derivation path of the full search, so it is bit-identical
    to ``sage`` with m=1 and proposal_count=1 under the same master seed.
    """
    cfg.validate()
    end_id = policy.special.end_think_id
    prompt = ctx.prompt_tokens(policy.special.think_id)
    chain = CandidateSequence()
    accept_step: int | None = None
    for step in range(1, cfg.t_max + 1):
        prop = policy.sample_steps(
            prompt + chain.gen_tokens,
            1,
            cfg.per_step_budget,
            cfg.temperature,
            cfg.top_p,
            stable_seed(seed, "sage-step", step, 0),
        )[0]
        chain = _extend_by_step(chain, prop, end_id)
        if chain.terminated:
            accept_step = step
            break
    forced = not chain.terminated
    if forced:
        lp = policy.score_token(prompt + chain.gen_tokens, end_id)
        chain = CandidateSequence(
            gen_tokens=chain.gen_tokens + (end_id,),
            gen_logprobs=chain.gen_logprobs + (0.0 if lp is None else lp,),
            cum_logprob=chain.cum_logprob + (0.0 if lp is None else lp),
            terminated=True,
        )
    return _finish(
        policy, prompt, chain, cfg.answer_budget, "degrade_sage", seed, accept_step, None, forced=forced
    )


def random_decode(
    policy: Policy,
    ctx: QueryContext,
    t_max_tokens: int,
    temperature: float = 1.0,
    top_p: float = 1.0,
    seed: int = 0,
    answer_budget: int = DEFAULT_ANSWER_BUDGET,
) -> Completion:
    """Plain ancestral sampling until the thinking phase closes or the token budget runs out.

    Implemented over the step sampler (continuing through step delimiters) so
    it works identically against synthetic and remote policies.
    """
    if t_max_tokens < 1:
        raise ConfigError("t_max_tokens must be >= 1")
    end_id = policy.special.end_think_id
    prompt = ctx.prompt_tokens(policy.special.think_id)
    chain = CandidateSequence()
    remaining = t_max_tokens
    piece = 0
    while remaining > 0 and not chain.terminated:
        piece += 1
        prop = policy.sample_steps(
            prompt + chain.gen_tokens,
            1,
            remaining,
            temperature,
            top_p,
            stable_seed(seed, "random-decode", piece),
        )[0]
        chain = _extend_by_step(chain, prop, end_id)
        remaining -= len(prop.tokens)
    forced = not chain.terminated
    if forced:
        lp = policy.score_token(prompt + chain.gen_tokens, end_id)
        chain = CandidateSequence(
            gen_tokens=chain.gen_tokens + (end_id,),
            gen_logprobs=chain.gen_logprobs + (0.0 if lp is None else lp,),
            cum_logprob=chain.cum_logprob + (0.0 if lp is None else lp),
            terminated=True,
        )
    return _finish(
        policy, prompt, chain, answer_budget, "random", seed, None, None, forced=forced
    )
