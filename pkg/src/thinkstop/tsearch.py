"""Token-wise reasoning-path exploration with confidence-based early acceptance.

The search keeps the top-m candidate chains, expands each by its 2m most
probable next tokens, and watches every expansion window for the
end-of-thinking token. A chain that ends thinking inside the window's top-h
ranks is accepted as a completion; one that ends it below rank h is discarded
outright (the model is not confident about stopping there); everything else
competes for retention. Two retention keys are supported: path confidence
(average cumulative log-probability) and the newest token's local
log-probability, the latter existing to demonstrate why path confidence is
the part that matters.

Also provides the two baselines the search is contrasted against: greedy
decoding (the zero-exploration degeneration) and classic length-normalized
beam search, which never early-accepts a terminated chain.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .candidate import CandidateSequence, Completion, QueryContext, extend, phi_score, retain_top
from .errors import ConfigError
from .policy import Policy
from .trace import AcceptanceEvent, ForcedCompletionEvent, RankObservation, SearchTrace

DEFAULT_T_MAX = 32768
DEFAULT_ANSWER_BUDGET = 100


@dataclass(frozen=True)
class SearchConfig:
    """Exploration parameters for token-wise search.

    ``m`` is the exploration width (0 degenerates to greedy decoding), ``r``
    the number of completions to return, ``h`` the tolerance rank for
    accepting the end-of-thinking token inside a 2m window (defaults to 2m,
    i.e. tolerance ratio 1.0), ``t_max`` the generation-step budget, and
    ``score_key`` selects retention by path confidence ("phi") or by the
    newest token's log-probability ("last_logprob").
    """

    m: int
    r: int = 1
    h: int | None = None
    t_max: int = DEFAULT_T_MAX
    score_key: str = "phi"
    answer_budget: int = DEFAULT_ANSWER_BUDGET

    def validate(self) -> None:
        if self.m < 0:
            raise ConfigError("exploration width m must be >= 0")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")
        if self.answer_budget < 0:
            raise ConfigError("answer_budget must be >= 0")
        if self.score_key not in ("phi", "last_logprob"):
            raise ConfigError(f"unknown score_key {self.score_key!r}")
        if self.m == 0:
            if self.r != 1:
                raise ConfigError("m=0 (greedy) supports exactly r=1")
            return
        if not 1 <= self.r <= self.m:
            raise ConfigError("r must satisfy 1 <= r <= m")
        if not 1 <= self.effective_h <= 2 * self.m:
            raise ConfigError("h must satisfy 1 <= h <= 2m")

    @property
    def effective_h(self) -> int:
        return 2 * self.m if self.h is None else self.h

    @property
    def tolerance_ratio(self) -> float:
        return self.effective_h / (2 * self.m)


def h_from_tolerance_ratio(tr: float, m: int) -> int:
    """Convert a tolerance accept-rank ratio to the integer rank bound h = TR * 2m."""
    if m < 1:
        raise ConfigError("tolerance ratio applies only when m >= 1")
    h = round(tr * 2 * m)
    if not 1 <= h <= 2 * m or abs(h - tr * 2 * m) > 1e-9:
        raise ConfigError(f"tolerance ratio {tr} does not map to an integer rank in [1, {2 * m}]")
    return h


def tsearch(
    policy: Policy,
    ctx: QueryContext,
    cfg: SearchConfig,
    seed: int | None = None,
) -> tuple[list[Completion], SearchTrace]:
    """Run the exploration and return exactly ``cfg.r`` completions plus the trace.

    The search is fully deterministic; ``seed`` is recorded as provenance
    only. At the step budget, surviving chains are closed by appending the
    end-of-thinking token (flagged forced) so the completion count contract
    always holds.
    """
    cfg.validate()
    strategy = "tsearch_phi" if cfg.score_key == "phi" else "tsearch_phi_token"
    if cfg.m == 0:
        trace = SearchTrace(strategy=strategy, m=0, h=None, score_key=cfg.score_key)
        comp = greedy_decode(policy, ctx, cfg.t_max, cfg.answer_budget)
        return [replace(comp, strategy=strategy, seed=seed)], trace

    trace = SearchTrace(strategy=strategy, m=cfg.m, h=cfg.effective_h, score_key=cfg.score_key)
    end_id = policy.special.end_think_id
    prompt = ctx.prompt_tokens(policy.special.think_id)
    window = 2 * cfg.m

    beam: list[CandidateSequence] = [CandidateSequence()]
    accepted: list[tuple[CandidateSequence, int, int]] = []  # (chain, step, rank)
    final_step = cfg.t_max

    for step in range(1, cfg.t_max + 1):
        pool: list[CandidateSequence] = []
        arrivals: list[tuple[CandidateSequence, int, int]] = []  # (chain, parent, rank)
        for j, parent in enumerate(beam):
            dist = policy.next_token_dist(prompt + parent.gen_tokens, window)
            for rank, (tok, lp) in enumerate(dist.entries, start=1):
                child = extend(parent, tok, lp, end_id)
                if tok == end_id:
                    trace.observations.append(RankObservation(step, j, rank, len(dist.entries)))
                    if rank <= cfg.effective_h:
                        arrivals.append((child, j, rank))
                    else:
                        trace.events.append(
                            AcceptanceEvent(step, j, False, child.gen_tokens, phi_score(child), rank)
                        )
                else:
                    pool.append(child)

        # Acceptances are processed highest path-confidence first; anything
        # beyond the completion quota is discarded, never banked.
        order = sorted(range(len(arrivals)), key=lambda i: (-phi_score(arrivals[i][0]), i))
        for i in order:
            chain, j, rank = arrivals[i]
            took = len(accepted) < cfg.r
            trace.events.append(
                AcceptanceEvent(step, j, took, chain.gen_tokens, phi_score(chain), rank)
            )
            if took:
                accepted.append((chain, step, rank))

        if len(accepted) >= cfg.r:
            final_step = step
            break
        beam = retain_top(pool, cfg.m, key=cfg.score_key)
        trace.record_step(step, [(c, phi_score(c)) for c in beam])
        if not beam:
            final_step = step
            break

    completions = [
        _finish(policy, prompt, chain, cfg.answer_budget, strategy, seed, step, rank, forced=False)
        for chain, step, rank in accepted
    ]
    completions.extend(
        _force_close(policy, prompt, beam, cfg.r - len(accepted), final_step, cfg.answer_budget, strategy, seed, trace)
    )
    _pad_to_quota(completions, cfg.r)
    return completions, trace


def _pad_to_quota(completions: list[Completion], r: int) -> None:
    """Duplicate existing completions cyclically when survivors ran out.

    Only reachable on degenerate policies where the end-of-thinking token is
    the sole continuation everywhere; the quota contract still holds.
    """
    base = list(completions)
    while len(completions) < r:
        completions.append(base[(len(completions) - len(base)) % len(base)])


def _force_close(
    policy: Policy,
    prompt: tuple[int, ...],
    beam: list[CandidateSequence],
    needed: int,
    step: int,
    answer_budget: int,
    strategy: str,
    seed: int | None,
    trace: SearchTrace,
) -> list[Completion]:
    """Close the best surviving chains with a forced end-of-thinking token.

    The end token contributes its true policy log-probability when the policy
    can report one, else 0.0; ranking is by path confidence of the appended
    sequence. If fewer chains survive than are needed, the ranked survivors
    are reused cyclically so the completion-count contract still holds.
    """
    if needed <= 0 or not beam:
        return []
    end_id = policy.special.end_think_id
    closed = []
    for cand in beam:
        lp = policy.score_token(prompt + cand.gen_tokens, end_id)
        closed.append(extend(cand, end_id, 0.0 if lp is None else lp, end_id))
    order = sorted(range(len(closed)), key=lambda i: (-phi_score(closed[i]), i))
    out = []
    for n in range(needed):
        chain = closed[order[n % len(order)]]
        trace.forced.append(ForcedCompletionEvent(step, chain.gen_tokens, phi_score(chain)))
        out.append(
            _finish(policy, prompt, chain, answer_budget, strategy, seed, step, None, forced=True)
        )
    return out


def _finish(
    policy: Policy,
    prompt: tuple[int, ...],
    chain: CandidateSequence,
    answer_budget: int,
    strategy: str,
    seed: int | None,
    accept_step: int | None,
    accept_rank: int | None,
    forced: bool,
) -> Completion:
    ans_tokens, ans_lps = _greedy_continuation(policy, prompt + chain.gen_tokens, answer_budget)
    return Completion(
        think_tokens=chain.gen_tokens,
        think_logprobs=chain.gen_logprobs,
        answer_tokens=ans_tokens,
        answer_logprobs=ans_lps,
        answer_text=policy.render(ans_tokens),
        phi=phi_score(chain),
        forced=forced,
        strategy=strategy,
        seed=seed,
        accept_step=accept_step,
        accept_rank=accept_rank,
    )


def _greedy_continuation(
    policy: Policy, context: tuple[int, ...], budget: int
) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Argmax continuation of ``context``, stopping at the end-of-sequence id."""
    tokens: list[int] = []
    logprobs: list[float] = []
    eos = policy.special.eos_id
    while len(tokens) < budget:
        dist = policy.next_token_dist(context + tuple(tokens), 1)
        tok, lp = dist.entries[0]
        if eos is not None and tok == eos:
            break
        tokens.append(tok)
        logprobs.append(lp)
    return tuple(tokens), tuple(logprobs)


def greedy_answer(
    policy: Policy, ctx: QueryContext, chain: CandidateSequence, budget: int
) -> tuple[int, ...]:
    """Greedy answer tokens for a terminated reasoning chain."""
    if not chain.terminated:
        raise ConfigError("answers are sampled only after the thinking phase is closed")
    prompt = ctx.prompt_tokens(policy.special.think_id)
    tokens, _ = _greedy_continuation(policy, prompt + chain.gen_tokens, budget)
    return tokens


def greedy_decode(
    policy: Policy,
    ctx: QueryContext,
    t_max: int = DEFAULT_T_MAX,
    answer_budget: int = DEFAULT_ANSWER_BUDGET,
) -> Completion:
    """Argmax decoding until the thinking phase closes or the budget runs out."""
    if t_max < 1:
        raise ConfigError("t_max must be >= 1")
    end_id = policy.special.end_think_id
    prompt = ctx.prompt_tokens(policy.special.think_id)
    chain = CandidateSequence()
    accept_step: int | None = None
    for step in range(1, t_max + 1):
        dist = policy.next_token_dist(prompt + chain.gen_tokens, 1)
        tok, lp = dist.entries[0]
        chain = extend(chain, tok, lp, end_id)
        if chain.terminated:
            accept_step = step
            break
    forced = not chain.terminated
    if forced:
        lp = policy.score_token(prompt + chain.gen_tokens, end_id)
        chain = extend(chain, end_id, 0.0 if lp is None else lp, end_id)
    return _finish(
        policy, prompt, chain, answer_budget, "greedy", None, accept_step, None, forced=forced
    )


def vanilla_beam_search(
    policy: Policy,
    ctx: QueryContext,
    m: int,
    t_max: int = DEFAULT_T_MAX,
    answer_budget: int = DEFAULT_ANSWER_BUDGET,
) -> list[Completion]:
    """Classic length-normalized beam search returning the final beam of ``m`` chains.

    Chains that close the thinking phase are carried along and survive or die
    by score alone; there is no early acceptance, so a terminated chain can be
    pruned by later expansions. Expansion uses the same top-2m token window as
    the exploration search so the two differ only in acceptance semantics.
    """
    if m < 1:
        raise ConfigError("beam width m must be >= 1")
    if t_max < 1:
        raise ConfigError("t_max must be >= 1")
    end_id = policy.special.end_think_id
    prompt = ctx.prompt_tokens(policy.special.think_id)
    window = 2 * m

    beam: list[CandidateSequence] = [CandidateSequence()]
    for _ in range(t_max):
        pool: list[CandidateSequence] = []
        for parent in beam:
            if parent.terminated:
                pool.append(parent)
                continue
            dist = policy.next_token_dist(prompt + parent.gen_tokens, window)
            for tok, lp in dist.entries:
                pool.append(extend(parent, tok, lp, end_id))
        beam = retain_top(pool, m, key="phi")
        if all(c.terminated for c in beam):
            break

    completions = []
    for cand in beam:
        forced = not cand.terminated
        chain = cand
        if forced:
            lp = policy.score_token(prompt + cand.gen_tokens, end_id)
            chain = extend(cand, end_id, 0.0 if lp is None else lp, end_id)
        completions.append(
            _finish(policy, prompt, chain, answer_budget, "beam", None, None, None, forced=forced)
        )
    return completions
