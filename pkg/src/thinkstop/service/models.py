"""Pydantic request/response models for the HTTP surface."""

from __future__ import annotations

from pydantic import BaseModel, Field


class CompletionsRequest(BaseModel):
    model: str = "synthetic"
    prompt: list[int] | str
    max_tokens: int = Field(default=16, ge=1)
    temperature: float = 1.0
    top_p: float = Field(default=1.0, gt=0.0, le=1.0)
    logprobs: int | None = Field(default=None, ge=0)
    stop: list[str] | None = None
    n: int = Field(default=1, ge=1)
    seed: int | None = None


class ChoiceLogprobs(BaseModel):
    tokens: list[str]
    token_ids: list[int]
    token_logprobs: list[float]
    top_logprobs: list[dict[str, float]]


class CompletionChoice(BaseModel):
    index: int
    text: str
    finish_reason: str  # "stop" | "length"
    logprobs: ChoiceLogprobs | None = None


class CompletionsResponse(BaseModel):
    id: str
    object: str = "text_completion"
    model: str
    choices: list[CompletionChoice]


class TokenizeRequest(BaseModel):
    text: str


class TokenizeResponse(BaseModel):
    tokens: list[int]


class DetokenizeRequest(BaseModel):
    tokens: list[int]


class DetokenizeResponse(BaseModel):
    text: str


class StrategyParams(BaseModel):
    """Shared strategy knobs for search and experiment requests."""

    strategy: str
    m: int = 4
    r: int = 1
    tr: float | None = None
    t_max: int | None = None
    per_step_budget: int = 100
    temperature: float | None = None
    top_p: float | None = None
    answer_budget: int = 100
    insert_sot: bool = True


class SearchRequest(StrategyParams):
    prompt: str | None = None
    prompt_tokens: list[int] | None = None
    seed: int = 0


class CompletionModel(BaseModel):
    think_tokens: list[int]
    answer_tokens: list[int]
    text: str
    answer_text: str
    phi: float
    forced: bool
    strategy: str
    accept_step: int | None = None
    accept_rank: int | None = None


class SearchResponse(BaseModel):
    completions: list[CompletionModel]
    eot_observations: list[list[int]] = Field(default_factory=list)


class ProblemModel(BaseModel):
    id: str
    prompt: str
    answer: str
    verifier: str = "boxed"
    prompt_tokens: list[int] | None = None


class ExperimentRequest(StrategyParams):
    problems: list[ProblemModel]
    runs: int = 1
    seed: int = 0
    policy_spec: dict | None = None
    policy_endpoint: str | None = None
    model: str = "synthetic"


class ExperimentResponse(BaseModel):
    metrics: dict
    metrics_csv: str
    completions_jsonl: str


class HealthResponse(BaseModel):
    status: str
    vocab_size: int | None = None
