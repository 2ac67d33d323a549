"""Command-line interface.

The CLI is a thin client of the HTTP service: ``run`` and ``search`` build the
same request models the service consumes and POST them either to a remote
server (``--server URL``) or to an in-process instance over an in-memory ASGI
transport, so one code path covers both. ``serve`` hosts the service, which
doubles as the mock inference endpoint for wire tests.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

import httpx
import uvicorn

from . import harness, metrics
from .errors import ThinkstopError
from .policy import load_synthetic_spec, synthetic_from_spec
from .service.app import create_app


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thinkstop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="host the decoding service / mock inference server")
    serve.add_argument("--policy", required=True, help="synthetic policy spec JSON file")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8437)
    serve.add_argument("--api-token-env", default=None,
                       help="env var holding the bearer token clients must present")
    serve.add_argument("--logprobs-cap", type=int, default=None,
                       help="largest top-logprobs width the server will report")

    run = sub.add_parser("run", help="run an experiment over a problems file")
    _add_strategy_flags(run)
    run.add_argument("--problems", default=None, help="problems JSONL file")
    run.add_argument("--out", default=None, help="output directory for completions.jsonl and metrics.csv")
    run.add_argument("--runs", type=int, default=None)
    run.add_argument("--config", default=None, help="flat key=value config file; flags override it")

    search = sub.add_parser("search", help="run one strategy for a single prompt and print the result")
    _add_strategy_flags(search)
    search.add_argument("--prompt", required=True)

    return parser


def _add_strategy_flags(cmd: argparse.ArgumentParser) -> None:
    cmd.add_argument("--strategy", default=None, choices=harness.STRATEGIES)
    cmd.add_argument("--policy", default=None, help="synthetic policy spec file or endpoint URL")
    cmd.add_argument("--server", default=None, help="run against a remote thinkstop service")
    cmd.add_argument("--ew", type=int, default=None, help="exploration width m")
    cmd.add_argument("--tr", type=float, default=None, help="tolerance accept-rank ratio h/2m")
    cmd.add_argument("--r", type=int, default=None, help="required completions")
    cmd.add_argument("--max-steps", type=int, default=None,
                     help="generation budget: tokens for token-wise strategies, steps for step-wise")
    cmd.add_argument("--per-step-budget", type=int, default=None)
    cmd.add_argument("--seed", type=int, default=None)
    cmd.add_argument("--model", default=None)
    cmd.add_argument("--temperature", type=float, default=None)
    cmd.add_argument("--top-p", type=float, default=None)
    cmd.add_argument("--answer-budget", type=int, default=None)
    cmd.add_argument("--no-insert-sot", action="store_true",
                     help="do not append the start-of-thinking token to prompts")
    cmd.add_argument("--auth-env", default="THINKSTOP_API_TOKEN",
                     help="env var holding the bearer token for --server")


_CONFIG_KEYS = {
    "strategy": str, "policy": str, "server": str, "ew": int, "tr": float, "r": int,
    "max_steps": int, "per_step_budget": int, "runs": int, "seed": int, "model": str,
    "temperature": float, "top_p": float, "answer_budget": int, "problems": str, "out": str,
}


def _merged_settings(args: argparse.Namespace) -> dict:
    """Config file values first, explicit flags on top."""
    values: dict = {}
    if getattr(args, "config", None):
        raw = harness.parse_config_file(args.config)
        for key, text in raw.items():
            if key not in _CONFIG_KEYS:
                raise ThinkstopError(f"unknown config key {key!r}")
            values[key] = _CONFIG_KEYS[key](text)
    for key in _CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if getattr(args, "no_insert_sot", False):
        values["insert_sot"] = False
    return values


def _post(path: str, payload: dict, server: str | None, policy_file: str | None, auth_env: str) -> dict:
    """POST one request, against --server or an in-process service instance."""
    headers = {}
    token = os.environ.get(auth_env or "", "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    if server:
        try:
            with httpx.Client(base_url=server.rstrip("/"), headers=headers, timeout=600.0) as client:
                resp = client.post(path, json=payload)
        except httpx.HTTPError as exc:
            raise ThinkstopError(f"cannot reach {server}: {exc}") from exc
        return _unwrap(resp)

    policy = None
    if policy_file and not policy_file.startswith(("http://", "https://")):
        policy = synthetic_from_spec(load_synthetic_spec(policy_file))

    async def go() -> httpx.Response:
        transport = httpx.ASGITransport(app=create_app(policy))
        async with httpx.AsyncClient(transport=transport, base_url="http://service", timeout=600.0) as client:
            return await client.post(path, json=payload)

    return _unwrap(asyncio.run(go()))


def _unwrap(resp: httpx.Response) -> dict:
    if resp.status_code != 200:
        try:
            detail = resp.json()
        except ValueError:
            detail = resp.text
        raise ThinkstopError(f"service returned {resp.status_code}: {detail}")
    return resp.json()


def _strategy_payload(values: dict) -> dict:
    payload = {"strategy": values.get("strategy", "greedy")}
    for src, dst in (
        ("ew", "m"), ("r", "r"), ("tr", "tr"), ("max_steps", "t_max"),
        ("per_step_budget", "per_step_budget"), ("temperature", "temperature"),
        ("top_p", "top_p"), ("answer_budget", "answer_budget"), ("insert_sot", "insert_sot"),
    ):
        if src in values:
            payload[dst] = values[src]
    return payload


def cmd_serve(args: argparse.Namespace) -> int:
    spec = load_synthetic_spec(args.policy)
    token = os.environ.get(args.api_token_env) if args.api_token_env else None
    app = create_app(synthetic_from_spec(spec), api_token=token, top_logprobs_cap=args.logprobs_cap)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    values = _merged_settings(args)
    problems_path = values.get("problems")
    out_dir = values.get("out")
    if not problems_path or not out_dir:
        raise ThinkstopError("run needs --problems and --out")
    problems = harness.ingest_problems(problems_path)

    payload = _strategy_payload(values)
    payload["runs"] = values.get("runs", 1)
    payload["seed"] = values.get("seed", 0)
    payload["model"] = values.get("model", "synthetic")
    payload["problems"] = [
        {
            "id": p.id,
            "prompt": p.prompt,
            "answer": p.gold_answer,
            "verifier": _verifier_text(p),
            "prompt_tokens": list(p.prompt_tokens) if p.prompt_tokens is not None else None,
        }
        for p in problems
    ]
    policy = values.get("policy")
    if policy and policy.startswith(("http://", "https://")):
        payload["policy_endpoint"] = policy
    elif policy:
        payload["policy_spec"] = load_synthetic_spec(policy).to_json_dict()
    elif not values.get("server"):
        raise ThinkstopError("run needs --policy (file or URL) unless --server hosts one")

    body = _post("/v1/experiments", payload, values.get("server"), policy, args.auth_env)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, harness.COMPLETIONS_FILENAME), "w", encoding="utf-8") as f:
        f.write(body["completions_jsonl"])
    with open(os.path.join(out_dir, harness.METRICS_FILENAME), "w", encoding="utf-8") as f:
        f.write(body["metrics_csv"])
    row = metrics.MetricRow(**body["metrics"])
    sys.stdout.write(metrics.rows_to_text([row]))
    sys.stdout.write(f"wrote {out_dir}/{harness.COMPLETIONS_FILENAME} and {out_dir}/{harness.METRICS_FILENAME}\n")
    return 0


def cmd_search(args: argparse.Namespace) -> int:
    values = _merged_settings(args)
    payload = _strategy_payload(values)
    payload["prompt"] = args.prompt
    payload["seed"] = values.get("seed", 0)
    policy = values.get("policy")
    body = _post("/v1/search", payload, values.get("server"), policy, args.auth_env)
    sys.stdout.write(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return 0


def _verifier_text(problem: harness.ProblemRecord) -> str:
    v = problem.verifier
    if v.kind == "numeric":
        return f"numeric:{v.tolerance}"
    return v.kind


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "serve":
            return cmd_serve(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "search":
            return cmd_search(args)
    except (ThinkstopError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
