"""Language-model policies: a next-token distribution oracle plus a step sampler.

Two implementations share one interface: an enumerable synthetic policy driven
by an explicit probability table (the test substrate and the mock server
backend), and a remote policy speaking an OpenAI-style completions protocol.

Conventions that every caller relies on:

* distributions are sorted by descending log-probability, ties broken by
  ascending token id;
* recorded log-probabilities are always those of the base model, even when a
  step was sampled with temperature or nucleus truncation, because path
  confidence is defined on the unmodified policy;
* identical seeds yield byte-identical samples.
"""

from __future__ import annotations

import json
import math
import os
import random
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import httpx

from .errors import (
    ConfigError,
    InvalidBudget,
    PolicyError,
    RemoteCapabilityExceeded,
    SpecValidation,
    TransportError,
)

# Treat temperatures below this as the greedy (argmax) limit.
_GREEDY_TEMPERATURE = 1e-8

PROB_SUM_TOL = 1e-12


@dataclass(frozen=True)
class SpecialTokens:
    """Sentinel token ids a search needs regardless of the policy backend."""

    think_id: int
    end_think_id: int
    step_delim_ids: frozenset[int]
    eos_id: int | None = None

    def step_stop_ids(self) -> frozenset[int]:
        """Ids that terminate a reasoning step: delimiters plus end-of-thinking."""
        return self.step_delim_ids | {self.end_think_id}


@dataclass(frozen=True)
class TokenDistribution:
    """Top-k slice of a conditional next-token distribution.

    ``entries`` is sorted by descending log-probability with ties broken by
    ascending token id; ``context_len`` is the length of the conditioning
    prefix the distribution was computed for.
    """

    entries: tuple[tuple[int, float], ...]
    context_len: int

    def tokens(self) -> tuple[int, ...]:
        return tuple(tok for tok, _ in self.entries)

    def rank_of(self, token_id: int) -> int | None:
        """1-based rank of ``token_id`` within this slice, or None if absent."""
        for rank, (tok, _) in enumerate(self.entries, start=1):
            if tok == token_id:
                return rank
        return None


@dataclass(frozen=True)
class StepProposal:
    """One sampled reasoning step.

    ``end_kind`` records why the step ended: a step delimiter token, the
    end-of-thinking token, or budget exhaustion. Budget-ended steps are legal
    continuations, not terminations.
    """

    tokens: tuple[int, ...]
    logprobs: tuple[float, ...]
    end_kind: str  # "delimiter" | "end_think" | "budget"


class Policy(ABC):
    """Interface every search strategy runs against."""

    special: SpecialTokens

    @property
    @abstractmethod
    def max_top_k(self) -> int:
        """Largest k this policy can answer ``next_token_dist`` for."""

    @abstractmethod
    def next_token_dist(self, prefix: tuple[int, ...], k: int) -> TokenDistribution:
        """Top-k next-token log-probabilities conditioned on ``prefix``."""

    @abstractmethod
    def sample_steps(
        self,
        prefix: tuple[int, ...],
        n: int,
        budget: int,
        temperature: float,
        top_p: float,
        seed: int,
    ) -> list[StepProposal]:
        """Sample ``n`` independent reasoning steps continuing ``prefix``."""

    def score_token(self, prefix: tuple[int, ...], token_id: int) -> float | None:
        """Base log-probability of a specific token, or None if not obtainable."""
        return None

    def tokenize(self, text: str) -> tuple[int, ...]:
        raise PolicyError("this policy cannot tokenize text; supply prompt_tokens instead")

    @abstractmethod
    def render(self, tokens: tuple[int, ...]) -> str:
        """Detokenize for text-level metrics and verifiers."""


def _sample_from_probs(
    probs: tuple[float, ...],
    temperature: float,
    top_p: float,
    rng: random.Random,
) -> tuple[int, float]:
    """Draw one token id; returns (token, base log-prob of that token).

    Temperature rescales in log space; nucleus truncation keeps the smallest
    high-probability prefix reaching ``top_p``. Ordering for truncation and
    inverse-CDF walking is probability-descending with ascending-id ties, so
    a fixed RNG stream is reproducible across runs.
    """
    order = sorted((i for i, p in enumerate(probs) if p > 0.0), key=lambda i: (-probs[i], i))
    if not order:
        raise PolicyError("distribution has no positive-probability tokens")
    if temperature < _GREEDY_TEMPERATURE:
        tok = order[0]
        return tok, math.log(probs[tok])

    logw = [math.log(probs[i]) / temperature for i in order]
    peak = max(logw)
    weights = [math.exp(w - peak) for w in logw]
    total = sum(weights)

    kept = len(order)
    if top_p < 1.0:
        acc = 0.0
        for j, w in enumerate(weights):
            acc += w / total
            if acc >= top_p:
                kept = j + 1
                break
        total = sum(weights[:kept])

    r = rng.random() * total
    acc = 0.0
    choice = kept - 1
    for j in range(kept):
        acc += weights[j]
        if r < acc:
            choice = j
            break
    tok = order[choice]
    return tok, math.log(probs[tok])


@dataclass(frozen=True)
class SyntheticPolicySpec:
    """Explicit conditional table defining a tiny, fully enumerable model.

    ``table`` maps a context prefix (query plus generated tokens) to a full
    probability vector over the vocabulary; lookup picks the longest table key
    that is a prefix of the context, falling back to ``default_dist``.
    ``vocab`` optionally assigns each id a text form so harness-level metrics
    can tokenize prompts and render responses.
    """

    vocab_size: int
    table: dict[tuple[int, ...], tuple[float, ...]] = field(default_factory=dict)
    default_dist: tuple[float, ...] = ()
    think_id: int = 0
    end_think_id: int = 1
    step_delim_ids: frozenset[int] = frozenset({2})
    eos_id: int | None = None
    vocab: tuple[str, ...] | None = None

    def validate(self) -> None:
        if self.vocab_size < 2:
            raise SpecValidation("vocab_size must be at least 2")
        ids = {self.think_id, self.end_think_id, *self.step_delim_ids}
        if self.eos_id is not None:
            ids.add(self.eos_id)
        for i in ids:
            if not 0 <= i < self.vocab_size:
                raise SpecValidation(f"special token id {i} out of range for vocab_size {self.vocab_size}")
        if not self.default_dist:
            raise SpecValidation("default_dist is required so lookup is total")
        self._check_vector("default_dist", self.default_dist)
        for key, vec in self.table.items():
            if any(t < 0 or t >= self.vocab_size for t in key):
                raise SpecValidation(f"table prefix {key} contains out-of-range token ids")
            self._check_vector(f"table[{key}]", vec)
        if self.vocab is not None and len(self.vocab) != self.vocab_size:
            raise SpecValidation("vocab must list one string per token id")

    def _check_vector(self, name: str, vec: tuple[float, ...]) -> None:
        if len(vec) != self.vocab_size:
            raise SpecValidation(f"{name} has length {len(vec)}, expected {self.vocab_size}")
        if any(p < 0 for p in vec):
            raise SpecValidation(f"{name} has a negative entry")
        total = sum(vec)
        if abs(total - 1.0) > PROB_SUM_TOL:
            raise SpecValidation(f"{name} sums to {total!r}, expected 1 within {PROB_SUM_TOL}")

    def effective_vocab(self) -> tuple[str, ...]:
        """Explicit vocab, or generated token strings with canonical sentinels."""
        if self.vocab is not None:
            return self.vocab
        out = []
        for i in range(self.vocab_size):
            if i == self.think_id:
                out.append("<think>")
            elif i == self.end_think_id:
                out.append("</think>")
            elif i in self.step_delim_ids:
                out.append("\n\n")
            elif self.eos_id is not None and i == self.eos_id:
                out.append("<eos>")
            else:
                out.append(f"t{i} ")
        return tuple(out)

    def to_json_dict(self) -> dict:
        d: dict = {
            "vocab_size": self.vocab_size,
            "table": {" ".join(str(t) for t in key): list(vec) for key, vec in self.table.items()},
            "default": list(self.default_dist),
            "special": {
                "think": self.think_id,
                "end_think": self.end_think_id,
                "step_delimiters": sorted(self.step_delim_ids),
            },
        }
        if self.eos_id is not None:
            d["special"]["eos"] = self.eos_id
        if self.vocab is not None:
            d["vocab"] = list(self.vocab)
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "SyntheticPolicySpec":
        special = d.get("special", {})
        table = {}
        for key, vec in d.get("table", {}).items():
            prefix = tuple(int(t) for t in key.split()) if key.strip() else ()
            table[prefix] = tuple(float(p) for p in vec)
        return cls(
            vocab_size=int(d["vocab_size"]),
            table=table,
            default_dist=tuple(float(p) for p in d.get("default", ())),
            think_id=int(special.get("think", 0)),
            end_think_id=int(special.get("end_think", 1)),
            step_delim_ids=frozenset(int(t) for t in special.get("step_delimiters", [2])),
            eos_id=int(special["eos"]) if "eos" in special else None,
            vocab=tuple(d["vocab"]) if "vocab" in d else None,
        )


def load_synthetic_spec(path: str) -> SyntheticPolicySpec:
    with open(path, encoding="utf-8") as f:
        return SyntheticPolicySpec.from_json_dict(json.load(f))


class SyntheticPolicy(Policy):
    """Deterministic policy backed by a :class:`SyntheticPolicySpec`.

    Every reachable context resolves to a complete probability vector, so the
    policy is exhaustively enumerable and all searches over it are exact.
    """

    def __init__(self, spec: SyntheticPolicySpec):
        spec.validate()
        self.spec = spec
        self.special = SpecialTokens(
            think_id=spec.think_id,
            end_think_id=spec.end_think_id,
            step_delim_ids=frozenset(spec.step_delim_ids),
            eos_id=spec.eos_id,
        )
        self._vocab = spec.effective_vocab()

    @property
    def vocab_size(self) -> int:
        return self.spec.vocab_size

    @property
    def max_top_k(self) -> int:
        return self.spec.vocab_size

    def full_distribution(self, prefix: tuple[int, ...]) -> tuple[float, ...]:
        """Complete probability vector for the longest matching table prefix."""
        prefix = tuple(prefix)
        for length in range(len(prefix), -1, -1):
            vec = self.spec.table.get(prefix[:length])
            if vec is not None:
                return vec
        return self.spec.default_dist

    def next_token_dist(self, prefix: tuple[int, ...], k: int) -> TokenDistribution:
        if k < 1:
            raise ConfigError("k must be at least 1")
        probs = self.full_distribution(prefix)
        order = sorted((i for i in range(len(probs)) if probs[i] > 0), key=lambda i: (-probs[i], i))
        entries = tuple((i, math.log(probs[i])) for i in order[:k])
        return TokenDistribution(entries=entries, context_len=len(prefix))

    def score_token(self, prefix: tuple[int, ...], token_id: int) -> float:
        p = self.full_distribution(prefix)[token_id]
        return math.log(p) if p > 0 else float("-inf")

    def sample_with_stops(
        self,
        prefix: tuple[int, ...],
        n: int,
        budget: int,
        temperature: float,
        top_p: float,
        seed: int,
        stop_ids: frozenset[int],
    ) -> list[tuple[tuple[int, ...], tuple[float, ...], bool]]:
        """Sample ``n`` continuations, each ending at a stop token (included) or at budget.

        Returns (tokens, base log-probs, stopped) triples. All samples for one
        call are drawn sequentially from a single seeded stream, so the whole
        batch is a pure function of the arguments.
        """
        if n < 1:
            raise ConfigError("n must be at least 1")
        if budget < 1:
            raise InvalidBudget("per-step token budget must be at least 1")
        if temperature <= 0 or not 0 < top_p <= 1:
            raise ConfigError("temperature must be positive and top_p in (0, 1]")
        prefix = tuple(prefix)
        rng = random.Random(seed)
        samples = []
        for _ in range(n):
            tokens: list[int] = []
            logprobs: list[float] = []
            stopped = False
            context = prefix
            while len(tokens) < budget:
                probs = self.full_distribution(context)
                tok, lp = _sample_from_probs(probs, temperature, top_p, rng)
                tokens.append(tok)
                logprobs.append(lp)
                context = context + (tok,)
                if tok in stop_ids:
                    stopped = True
                    break
            samples.append((tuple(tokens), tuple(logprobs), stopped))
        return samples

    def sample_steps(
        self,
        prefix: tuple[int, ...],
        n: int,
        budget: int,
        temperature: float,
        top_p: float,
        seed: int,
    ) -> list[StepProposal]:
        samples = self.sample_with_stops(
            prefix, n, budget, temperature, top_p, seed, self.special.step_stop_ids()
        )
        proposals = []
        for tokens, logprobs, stopped in samples:
            if stopped and tokens[-1] == self.special.end_think_id:
                end_kind = "end_think"
            elif stopped:
                end_kind = "delimiter"
            else:
                end_kind = "budget"
            proposals.append(StepProposal(tokens, logprobs, end_kind))
        return proposals

    def enumerate_paths(
        self, prefix: tuple[int, ...], depth: int
    ) -> list[tuple[tuple[int, ...], float]]:
        """All positive-probability continuations of exactly ``depth`` tokens.

        Returns (token path, path probability) pairs; paths that reach the
        end-of-thinking token earlier are returned at their natural length.
        """
        results: list[tuple[tuple[int, ...], float]] = []

        def walk(context: tuple[int, ...], path: tuple[int, ...], prob: float) -> None:
            if path and path[-1] == self.special.end_think_id or len(path) == depth:
                results.append((path, prob))
                return
            probs = self.full_distribution(context)
            for tok, p in enumerate(probs):
                if p > 0:
                    walk(context + (tok,), path + (tok,), prob * p)

        walk(tuple(prefix), (), 1.0)
        return results

    def tokenize(self, text: str) -> tuple[int, ...]:
        """Greedy longest-match tokenization against the textual vocab."""
        tokens: list[int] = []
        pos = 0
        while pos < len(text):
            best_id, best_len = -1, 0
            for i, piece in enumerate(self._vocab):
                if piece and len(piece) > best_len and text.startswith(piece, pos):
                    best_id, best_len = i, len(piece)
            if best_id < 0:
                raise PolicyError(f"cannot tokenize text at offset {pos}: {text[pos:pos + 12]!r}")
            tokens.append(best_id)
            pos += best_len
        return tuple(tokens)

    def render(self, tokens: tuple[int, ...]) -> str:
        return "".join(self._vocab[t] for t in tokens)


def synthetic_from_spec(spec: SyntheticPolicySpec) -> SyntheticPolicy:
    """Build a policy from a spec, failing on the first violated invariant."""
    return SyntheticPolicy(spec)


@dataclass(frozen=True)
class RemotePolicySpec:
    """How to reach an OpenAI-compatible completions endpoint.

    ``top_logprobs_limit`` must be at least 2m for any search run against the
    policy. Sentinel ids and stop strings are part of the contract because the
    engine works at token-id level while the wire protocol stops on strings.
    """

    endpoint: str
    model: str
    think_id: int
    end_think_id: int
    step_delim_ids: frozenset[int]
    eos_id: int | None = None
    auth_env: str = "THINKSTOP_API_TOKEN"
    top_logprobs_limit: int = 20
    timeout: float = 30.0
    stop_strings: tuple[str, ...] = ("\n\n", "</think>")


class RemotePolicy(Policy):
    """Completions-protocol client.

    Wire protocol: POST {endpoint}/completions with fields {model, prompt
    (token ids), max_tokens, temperature, top_p, logprobs, stop, n, seed}.
    Responses must echo per-token log-probabilities (base distribution) and
    token ids; if the endpoint omits them the operation fails rather than
    approximating. Top-logprob map keys are decimal token ids. Stop tokens are
    included as the final token of a stopped completion. Auth is a bearer
    token read from the environment variable named in the spec.
    """

    def __init__(self, spec: RemotePolicySpec, transport: httpx.BaseTransport | None = None):
        self.spec = spec
        self.special = SpecialTokens(
            think_id=spec.think_id,
            end_think_id=spec.end_think_id,
            step_delim_ids=frozenset(spec.step_delim_ids),
            eos_id=spec.eos_id,
        )
        headers = {}
        token = os.environ.get(spec.auth_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=spec.endpoint.rstrip("/"),
            headers=headers,
            timeout=spec.timeout,
            transport=transport,
        )
        self._can_detokenize: bool | None = None

    @property
    def max_top_k(self) -> int:
        return self.spec.top_logprobs_limit

    def close(self) -> None:
        self._client.close()

    def _post(self, payload: dict) -> dict:
        try:
            resp = self._client.post("/completions", json=payload)
        except httpx.HTTPError as exc:
            raise TransportError(f"completions request failed: {exc}", retryable=True) from exc
        if resp.status_code == 401:
            raise TransportError("authentication rejected by endpoint", kind="auth", retryable=False)
        if resp.status_code == 400:
            body = _safe_json(resp)
            code = body.get("error", {}).get("code") if isinstance(body, dict) else None
            if code == "logprobs_capability_exceeded":
                raise RemoteCapabilityExceeded(body["error"].get("message", "logprobs too large"))
            raise PolicyError(f"endpoint rejected request: {resp.text[:200]}")
        if resp.status_code >= 500:
            raise TransportError(f"endpoint error {resp.status_code}", retryable=True)
        if resp.status_code != 200:
            raise PolicyError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def next_token_dist(self, prefix: tuple[int, ...], k: int) -> TokenDistribution:
        if k < 1:
            raise ConfigError("k must be at least 1")
        if k > self.spec.top_logprobs_limit:
            raise RemoteCapabilityExceeded(
                f"requested top-{k} but endpoint reports at most {self.spec.top_logprobs_limit}"
            )
        body = self._post(
            {
                "model": self.spec.model,
                "prompt": list(prefix),
                "max_tokens": 1,
                "temperature": 0.0,
                "top_p": 1.0,
                "logprobs": k,
                "n": 1,
            }
        )
        try:
            top = body["choices"][0]["logprobs"]["top_logprobs"][0]
        except (KeyError, IndexError, TypeError) as exc:
            raise PolicyError("endpoint did not echo top-logprobs") from exc
        entries = sorted(((int(tok), float(lp)) for tok, lp in top.items()), key=lambda e: (-e[1], e[0]))
        return TokenDistribution(entries=tuple(entries[:k]), context_len=len(prefix))

    def sample_steps(
        self,
        prefix: tuple[int, ...],
        n: int,
        budget: int,
        temperature: float,
        top_p: float,
        seed: int,
    ) -> list[StepProposal]:
        if budget < 1:
            raise InvalidBudget("per-step token budget must be at least 1")
        body = self._post(
            {
                "model": self.spec.model,
                "prompt": list(prefix),
                "max_tokens": budget,
                "temperature": temperature,
                "top_p": top_p,
                "logprobs": 1,
                "stop": list(self.spec.stop_strings),
                "n": n,
                "seed": seed,
            }
        )
        proposals = []
        for choice in body.get("choices", []):
            lp_block = choice.get("logprobs") or {}
            token_ids = lp_block.get("token_ids")
            token_lps = lp_block.get("token_logprobs")
            if token_ids is None or token_lps is None:
                raise PolicyError("endpoint did not echo per-token log-probabilities")
            tokens = tuple(int(t) for t in token_ids)
            if tokens and tokens[-1] == self.special.end_think_id:
                end_kind = "end_think"
            elif tokens and tokens[-1] in self.special.step_delim_ids:
                end_kind = "delimiter"
            else:
                end_kind = "budget"
            proposals.append(StepProposal(tokens, tuple(float(x) for x in token_lps), end_kind))
        if len(proposals) != n:
            raise PolicyError(f"endpoint returned {len(proposals)} completions, expected {n}")
        return proposals

    def score_token(self, prefix: tuple[int, ...], token_id: int) -> float | None:
        """Base log-prob of one token, when it falls inside the widest echo window."""
        dist = self.next_token_dist(prefix, self.spec.top_logprobs_limit)
        for tok, lp in dist.entries:
            if tok == token_id:
                return lp
        return None

    def tokenize(self, text: str) -> tuple[int, ...]:
        """Tokenize via the endpoint; id-level prompts avoid needing this."""
        try:
            resp = self._client.post("/tokenize", json={"text": text})
        except httpx.HTTPError as exc:
            raise TransportError(f"tokenize request failed: {exc}", retryable=True) from exc
        if resp.status_code != 200:
            raise PolicyError(
                "endpoint does not support tokenization; supply prompt_tokens instead"
            )
        return tuple(int(t) for t in resp.json()["tokens"])

    def render(self, tokens: tuple[int, ...]) -> str:
        """Detokenize via the endpoint when it supports it, else join decimal ids."""
        if self._can_detokenize is not False:
            try:
                resp = self._client.post("/detokenize", json={"tokens": list(tokens)})
            except httpx.HTTPError:
                resp = None
            if resp is not None and resp.status_code == 200:
                self._can_detokenize = True
                return resp.json()["text"]
            self._can_detokenize = False
        return " ".join(str(t) for t in tokens)


def _safe_json(resp: httpx.Response) -> dict:
    try:
        return resp.json()
    except ValueError:
        return {}
