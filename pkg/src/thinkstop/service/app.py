"""FastAPI application exposing the decoding engine.

Routes:

* ``POST /v1/completions`` — OpenAI-style completions backed by the loaded
  synthetic policy; echoes per-token base log-probabilities, token ids, and
  top-logprob maps keyed by decimal token id. Stop tokens are included as the
  final token of a stopped completion.
* ``POST /v1/tokenize`` / ``POST /v1/detokenize`` — text/id conversion.
* ``POST /v1/search`` — run one decoding strategy for a single prompt.
* ``POST /v1/experiments`` — run a full problems-by-runs experiment and return
  the serialized metrics CSV and completions JSONL.

When the app is constructed with an API token, all /v1 routes except health
require ``Authorization: Bearer <token>``.
"""

from __future__ import annotations

import dataclasses

from fastapi import Depends, FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import harness
from ..candidate import QueryContext
from ..errors import ConfigError, IngestError, PolicyError, ThinkstopError
from ..policy import RemotePolicy, RemotePolicySpec, SyntheticPolicy, SyntheticPolicySpec, synthetic_from_spec
from ..seeding import stable_seed
from .models import (
    ChoiceLogprobs,
    CompletionChoice,
    CompletionModel,
    CompletionsRequest,
    CompletionsResponse,
    DetokenizeRequest,
    DetokenizeResponse,
    ExperimentRequest,
    ExperimentResponse,
    HealthResponse,
    SearchRequest,
    SearchResponse,
    TokenizeRequest,
    TokenizeResponse,
)


def _auth_guard(request: Request) -> None:
    expected = request.app.state.api_token
    if expected is None:
        return
    header = request.headers.get("authorization", "")
    if header != f"Bearer {expected}":
        raise HTTPException(status_code=401, detail="missing or invalid bearer token")


def _require_policy(request: Request) -> SyntheticPolicy:
    policy = request.app.state.policy
    if policy is None:
        raise HTTPException(status_code=503, detail="no policy loaded on this server")
    return policy


def _capability_error(requested: int, cap: int) -> JSONResponse:
    return JSONResponse(
        status_code=400,
        content={
            "error": {
                "message": f"logprobs={requested} exceeds this endpoint's limit of {cap}",
                "type": "invalid_request_error",
                "code": "logprobs_capability_exceeded",
            }
        },
    )


def create_app(
    policy: SyntheticPolicy | None = None,
    *,
    api_token: str | None = None,
    top_logprobs_cap: int | None = None,
) -> FastAPI:
    app = FastAPI(title="thinkstop", dependencies=[Depends(_auth_guard)])
    app.state.policy = policy
    app.state.api_token = api_token
    app.state.top_logprobs_cap = top_logprobs_cap

    @app.get("/v1/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        loaded = app.state.policy
        return HealthResponse(
            status="ok", vocab_size=loaded.vocab_size if loaded is not None else None
        )

    @app.post("/v1/completions")
    def completions(req: CompletionsRequest, request: Request):
        policy = _require_policy(request)
        cap = app.state.top_logprobs_cap or policy.vocab_size
        if req.logprobs is not None and req.logprobs > cap:
            return _capability_error(req.logprobs, cap)

        try:
            prefix = policy.tokenize(req.prompt) if isinstance(req.prompt, str) else tuple(req.prompt)
            stop_ids = _stop_ids(policy, req.stop)
            samples = policy.sample_with_stops(
                prefix,
                req.n,
                req.max_tokens,
                req.temperature if req.temperature > 0 else 1e-12,
                req.top_p,
                req.seed if req.seed is not None else 0,
                stop_ids,
            )
        except PolicyError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

        choices = []
        for i, (tokens, logprobs, stopped) in enumerate(samples):
            lp_block = None
            if req.logprobs is not None and req.logprobs >= 1:
                top_maps = []
                context = prefix
                for tok in tokens:
                    dist = policy.next_token_dist(context, req.logprobs)
                    top_maps.append({str(t): lp for t, lp in dist.entries})
                    context = context + (tok,)
                lp_block = ChoiceLogprobs(
                    tokens=[policy.render((t,)) for t in tokens],
                    token_ids=list(tokens),
                    token_logprobs=list(logprobs),
                    top_logprobs=top_maps,
                )
            choices.append(
                CompletionChoice(
                    index=i,
                    text=policy.render(tokens),
                    finish_reason="stop" if stopped else "length",
                    logprobs=lp_block,
                )
            )
        return CompletionsResponse(
            id=f"cmpl-{stable_seed(req.seed, req.prompt, req.n) % 10**12:012d}",
            model=req.model,
            choices=choices,
        )

    @app.post("/v1/tokenize", response_model=TokenizeResponse)
    def tokenize(req: TokenizeRequest, request: Request) -> TokenizeResponse:
        policy = _require_policy(request)
        try:
            return TokenizeResponse(tokens=list(policy.tokenize(req.text)))
        except PolicyError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.post("/v1/detokenize", response_model=DetokenizeResponse)
    def detokenize(req: DetokenizeRequest, request: Request) -> DetokenizeResponse:
        policy = _require_policy(request)
        return DetokenizeResponse(text=policy.render(tuple(req.tokens)))

    @app.post("/v1/search", response_model=SearchResponse)
    def search(req: SearchRequest, request: Request) -> SearchResponse:
        policy = _require_policy(request)
        spec = _spec_from_params(req)
        try:
            spec.validate()
            if req.prompt_tokens is not None:
                ctx = QueryContext(tuple(req.prompt_tokens), insert_sot=req.insert_sot)
            elif req.prompt is not None:
                ctx = QueryContext(policy.tokenize(req.prompt), insert_sot=req.insert_sot)
            else:
                raise ConfigError("search needs prompt or prompt_tokens")
            completions, trace = harness.run_strategy(policy, ctx, spec, req.seed)
        except ThinkstopError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return SearchResponse(
            completions=[
                CompletionModel(
                    think_tokens=list(c.think_tokens),
                    answer_tokens=list(c.answer_tokens),
                    text=policy.render(c.tokens),
                    answer_text=c.answer_text,
                    phi=c.phi,
                    forced=c.forced,
                    strategy=c.strategy,
                    accept_step=c.accept_step,
                    accept_rank=c.accept_rank,
                )
                for c in completions
            ],
            eot_observations=(
                [[o.rank, o.window_size] for o in trace.observations] if trace else []
            ),
        )

    @app.post("/v1/experiments", response_model=ExperimentResponse)
    def experiments(req: ExperimentRequest, request: Request) -> ExperimentResponse:
        spec = _spec_from_params(req)
        spec.runs = req.runs
        spec.seed = req.seed
        spec.model = req.model
        spec.policy = req.policy_endpoint  # None for synthetic; drives remote defaults
        try:
            policy = _resolve_experiment_policy(req, request)
            problems = [
                harness.ProblemRecord(
                    id=p.id,
                    prompt=p.prompt,
                    gold_answer=p.answer,
                    verifier=harness.parse_verifier(p.verifier),
                    prompt_tokens=tuple(p.prompt_tokens) if p.prompt_tokens is not None else None,
                )
                for p in req.problems
            ]
            seen: set[str] = set()
            for p in problems:
                if p.id in seen:
                    raise IngestError(f"duplicate problem id {p.id!r}")
                seen.add(p.id)
            result = harness.execute_experiment(spec, problems, policy)
        except ThinkstopError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return ExperimentResponse(
            metrics=dataclasses.asdict(result.row),
            metrics_csv=result.csv_text,
            completions_jsonl=result.jsonl_text,
        )

    return app


def _stop_ids(policy: SyntheticPolicy, stop: list[str] | None) -> frozenset[int]:
    """Map stop strings onto token ids by exact vocab match; unknown strings are inert."""
    if not stop:
        return frozenset()
    vocab = policy.spec.effective_vocab()
    by_text: dict[str, int] = {}
    for i, piece in enumerate(vocab):
        by_text.setdefault(piece, i)
    return frozenset(by_text[s] for s in stop if s in by_text)


def _spec_from_params(req) -> harness.ExperimentSpec:
    return harness.ExperimentSpec(
        strategy=req.strategy,
        m=req.m,
        r=req.r,
        tr=req.tr,
        t_max=req.t_max,
        per_step_budget=req.per_step_budget,
        temperature=req.temperature,
        top_p=req.top_p,
        answer_budget=req.answer_budget,
        insert_sot=req.insert_sot,
    )


def _resolve_experiment_policy(req: ExperimentRequest, request: Request):
    if req.policy_spec is not None:
        return synthetic_from_spec(SyntheticPolicySpec.from_json_dict(req.policy_spec))
    if req.policy_endpoint is not None:
        return RemotePolicy(
            RemotePolicySpec(
                endpoint=req.policy_endpoint,
                model=req.model,
                think_id=0,
                end_think_id=1,
                step_delim_ids=frozenset({2}),
                eos_id=3,
            )
        )
    return _require_policy(request)
