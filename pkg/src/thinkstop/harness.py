"""Experiment runner: problem ingestion, strategy dispatch, and result persistence.

Every (problem, run) pair gets a seed derived from the master seed plus the
problem id and run index, so reordering the problem file never changes any
individual completion, and two invocations with the same spec and seed write
byte-identical outputs. Wrong answers are data, not errors: the run fails
only on malformed inputs or policy failures.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Sequence

from . import metrics
from .candidate import Completion, QueryContext
from .errors import ConfigError, IngestError
from .policy import (
    Policy,
    RemotePolicy,
    RemotePolicySpec,
    load_synthetic_spec,
    synthetic_from_spec,
)
from .sage import SageConfig, degrade_sage, random_decode, sage
from .seeding import stable_seed
from .trace import SearchTrace
from .tsearch import SearchConfig, greedy_decode, h_from_tolerance_ratio, tsearch, vanilla_beam_search
from .verifiers import Verifier, parse_verifier

STRATEGIES = (
    "greedy",
    "random",
    "beam",
    "tsearch_phi",
    "tsearch_phi_token",
    "sage",
    "degrade_sage",
)

STEPWISE_STRATEGIES = ("sage", "degrade_sage")

COMPLETIONS_FILENAME = "completions.jsonl"
METRICS_FILENAME = "metrics.csv"


@dataclass(frozen=True)
class ProblemRecord:
    """One benchmark item: prompt, gold answer, and how to verify it."""

    id: str
    prompt: str
    gold_answer: str
    verifier: Verifier
    prompt_tokens: tuple[int, ...] | None = None


def ingest_problems(path: str) -> list[ProblemRecord]:
    """Read problems from JSONL; one record per line, ids unique within the file."""
    records: list[ProblemRecord] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"line {lineno}: invalid JSON ({exc.msg})", line=lineno) from exc
            try:
                pid = str(obj["id"])
                prompt = str(obj["prompt"])
                answer = str(obj["answer"])
            except KeyError as exc:
                raise IngestError(f"line {lineno}: missing field {exc}", line=lineno) from exc
            if pid in seen:
                raise IngestError(f"line {lineno}: duplicate problem id {pid!r}", line=lineno)
            seen.add(pid)
            verifier = parse_verifier(str(obj.get("verifier", "boxed")))
            tokens = obj.get("prompt_tokens")
            records.append(
                ProblemRecord(
                    id=pid,
                    prompt=prompt,
                    gold_answer=answer,
                    verifier=verifier,
                    prompt_tokens=tuple(int(t) for t in tokens) if tokens is not None else None,
                )
            )
    return records


@dataclass
class ExperimentSpec:
    """Strategy, sampling settings, and I/O locations for one experiment.

    ``policy`` is a synthetic spec file path or an http(s) endpoint URL.
    ``t_max`` counts tokens for token-level strategies and reasoning steps for
    step-level ones; unset fields fall back to the documented defaults (step
    strategies: 10 steps of 100 tokens; token strategies: 32768 tokens;
    temperature 1.0; top-p 1.0 for synthetic policies and 0.95 for remote).
    """

    strategy: str
    problems_path: str | None = None
    policy: str | None = None
    out_dir: str | None = None
    runs: int = 1
    seed: int = 0
    m: int = 4
    r: int = 1
    tr: float | None = None
    t_max: int | None = None
    per_step_budget: int = 100
    temperature: float | None = None
    top_p: float | None = None
    answer_budget: int = 100
    insert_sot: bool = True
    model: str = "synthetic"
    # Remote-policy wiring; defaults mirror the default synthetic id layout.
    remote_think_id: int = 0
    remote_end_think_id: int = 1
    remote_step_delim_ids: tuple[int, ...] = (2,)
    remote_eos_id: int | None = 3
    remote_auth_env: str = "THINKSTOP_API_TOKEN"
    remote_top_logprobs_limit: int = 20

    def validate(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")
        if self.tr is not None and self.strategy not in ("tsearch_phi", "tsearch_phi_token"):
            raise ConfigError("tolerance ratio applies only to the token-wise search strategies")
        if self.strategy in ("beam", "sage") and self.m < 1:
            raise ConfigError(f"{self.strategy} requires m >= 1")
        if self.tr is not None:
            h_from_tolerance_ratio(self.tr, self.m)

    @property
    def is_remote(self) -> bool:
        return self.policy is not None and self.policy.startswith(("http://", "https://"))

    def effective_t_max(self) -> int:
        if self.t_max is not None:
            return self.t_max
        return 10 if self.strategy in STEPWISE_STRATEGIES else 32768

    def effective_temperature(self) -> float:
        return 1.0 if self.temperature is None else self.temperature

    def effective_top_p(self) -> float:
        if self.top_p is not None:
            return self.top_p
        return 0.95 if self.is_remote else 1.0


def parse_config_file(path: str) -> dict[str, str]:
    """Flat key=value config files mirroring the CLI flags; # starts a comment."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def build_policy(spec: ExperimentSpec) -> Policy:
    if spec.policy is None:
        raise ConfigError("experiment spec needs a policy file path or endpoint URL")
    if spec.is_remote:
        return RemotePolicy(
            RemotePolicySpec(
                endpoint=spec.policy,
                model=spec.model,
                think_id=spec.remote_think_id,
                end_think_id=spec.remote_end_think_id,
                step_delim_ids=frozenset(spec.remote_step_delim_ids),
                eos_id=spec.remote_eos_id,
                auth_env=spec.remote_auth_env,
                top_logprobs_limit=spec.remote_top_logprobs_limit,
            )
        )
    return synthetic_from_spec(load_synthetic_spec(spec.policy))


def run_strategy(
    policy: Policy, ctx: QueryContext, spec: ExperimentSpec, seed: int
) -> tuple[list[Completion], SearchTrace | None]:
    """Dispatch one (problem, run) execution to the configured strategy."""
    t_max = spec.effective_t_max()
    if spec.strategy == "greedy":
        return [greedy_decode(policy, ctx, t_max, spec.answer_budget)], None
    if spec.strategy == "random":
        comp = random_decode(
            policy,
            ctx,
            t_max,
            spec.effective_temperature(),
            spec.effective_top_p(),
            seed,
            answer_budget=spec.answer_budget,
        )
        return [comp], None
    if spec.strategy == "beam":
        return vanilla_beam_search(policy, ctx, spec.m, t_max, spec.answer_budget), None
    if spec.strategy in ("tsearch_phi", "tsearch_phi_token"):
        cfg = SearchConfig(
            m=spec.m,
            r=spec.r if spec.m >= 1 else 1,
            h=None if spec.tr is None else h_from_tolerance_ratio(spec.tr, spec.m),
            t_max=t_max,
            score_key="phi" if spec.strategy == "tsearch_phi" else "last_logprob",
            answer_budget=spec.answer_budget,
        )
        return tsearch(policy, ctx, cfg, seed)
    if spec.strategy in ("sage", "degrade_sage"):
        cfg = SageConfig(
            m=spec.m,
            r=spec.r,
            t_max=t_max,
            per_step_budget=spec.per_step_budget,
            temperature=spec.effective_temperature(),
            top_p=spec.effective_top_p(),
            answer_budget=spec.answer_budget,
        )
        if spec.strategy == "sage":
            return sage(policy, ctx, cfg, seed)
        return [degrade_sage(policy, ctx, replace(cfg, m=1, r=1), seed)], None
    raise ConfigError(f"unknown strategy {spec.strategy!r}")


@dataclass
class ExperimentResult:
    row: metrics.MetricRow
    records: list[dict]
    csv_text: str = field(default="")
    jsonl_text: str = field(default="")


def _query_context(policy: Policy, problem: ProblemRecord, insert_sot: bool) -> QueryContext:
    if problem.prompt_tokens is not None:
        return QueryContext(problem.prompt_tokens, insert_sot=insert_sot)
    return QueryContext(policy.tokenize(problem.prompt), insert_sot=insert_sot)


def execute_experiment(
    spec: ExperimentSpec, problems: Sequence[ProblemRecord], policy: Policy
) -> ExperimentResult:
    """Run strategy x problems x runs and aggregate one metrics row."""
    spec.validate()
    records: list[dict] = []
    for problem in problems:
        bound = problem.verifier.bind(problem.gold_answer)
        ctx = _query_context(policy, problem, spec.insert_sot)
        for run in range(spec.runs):
            seed = stable_seed(spec.seed, problem.id, run)
            completions, trace = run_strategy(policy, ctx, spec, seed)
            observations = (
                [[obs.rank, obs.window_size] for obs in trace.observations] if trace else []
            )
            for k, comp in enumerate(completions):
                correct = bound.check(comp.answer_text)
                full_text = policy.render(comp.tokens)
                rfcs_val = (
                    metrics.rfcs(full_text, problem.gold_answer, problem.verifier)
                    if correct
                    else None
                )
                records.append(
                    {
                        "problem_id": problem.id,
                        "run": run,
                        "seed": seed,
                        "strategy": spec.strategy,
                        "completion_index": k,
                        "think_tokens": list(comp.think_tokens),
                        "answer_tokens": list(comp.answer_tokens),
                        "think_len": comp.think_len,
                        "response_len": comp.response_len,
                        "phi": comp.phi,
                        "forced": comp.forced,
                        "accept_step": comp.accept_step,
                        "accept_rank": comp.accept_rank,
                        "text": full_text,
                        "answer_text": comp.answer_text,
                        "correct": correct,
                        "rfcs": rfcs_val,
                        "eot_observations": observations if k == 0 else [],
                    }
                )
    row = aggregate_records(records, spec.strategy)
    return ExperimentResult(
        row=row,
        records=records,
        csv_text=metrics.rows_to_csv([row]),
        jsonl_text=records_to_jsonl(records),
    )


def aggregate_records(records: Sequence[dict], strategy: str) -> metrics.MetricRow:
    """Fold per-completion records into one metrics row.

    A (problem, run) pair counts as solved when any of its completions
    verifies; lengths average over all completions.
    """
    run_correct: dict[tuple[int, str], bool] = {}
    problem_order: list[str] = []
    runs_seen: set[int] = set()
    for rec in records:
        key = (rec["run"], rec["problem_id"])
        if rec["problem_id"] not in problem_order:
            problem_order.append(rec["problem_id"])
        runs_seen.add(rec["run"])
        run_correct[key] = run_correct.get(key, False) or bool(rec["correct"])

    if records:
        grid = [
            [run_correct[(run, pid)] for pid in problem_order] for run in sorted(runs_seen)
        ]
        pass1 = metrics.pass_at_1_mean(grid)
        mean_len = sum(r["response_len"] for r in records) / len(records)
        mean_think = sum(r["think_len"] for r in records) / len(records)
        te = metrics.token_efficiency(pass1 * 100.0, mean_len) if mean_len > 0 else None
    else:
        pass1, mean_len, mean_think, te = 0.0, 0.0, 0.0, None

    rfcs_values = [
        (r["problem_id"], r["rfcs"]) for r in records if r["correct"] and r["rfcs"] is not None
    ]
    summary = metrics.rfcs_group_summary(rfcs_values)

    ratios = [rank / window for r in records for rank, window in r["eot_observations"]]
    eot = sum(ratios) / len(ratios) if ratios else None

    return metrics.MetricRow(
        strategy=strategy,
        pass1=pass1,
        mean_len=mean_len,
        mean_think_len=mean_think,
        te=te,
        rfcs_lt1_count=summary.lt1_count,
        rfcs_avg=summary.per_response_avg,
        eot_rank_ratio=eot,
    )


def records_to_jsonl(records: Sequence[dict]) -> str:
    return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)


def recompute_metrics_from_jsonl(jsonl_text: str, strategy: str) -> metrics.MetricRow:
    """Re-ingest a completions dump and rebuild its metrics row."""
    records = [json.loads(line) for line in jsonl_text.splitlines() if line.strip()]
    return aggregate_records(records, strategy)


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Load problems and policy, execute, and persist outputs when out_dir is set."""
    spec.validate()
    if spec.problems_path is None:
        raise ConfigError("experiment spec needs a problems file path")
    problems = ingest_problems(spec.problems_path)
    policy = build_policy(spec)
    result = execute_experiment(spec, problems, policy)
    if spec.out_dir is not None:
        write_outputs(spec.out_dir, result)
    return result


def write_outputs(out_dir: str, result: ExperimentResult) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    jsonl_path = os.path.join(out_dir, COMPLETIONS_FILENAME)
    csv_path = os.path.join(out_dir, METRICS_FILENAME)
    with open(jsonl_path, "w", encoding="utf-8") as f:
        f.write(result.jsonl_text)
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(result.csv_text)
    return jsonl_path, csv_path
