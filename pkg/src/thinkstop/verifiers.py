"""Rule-based answer verification: exact match, boxed extraction, numeric tolerance."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import VerifierError

_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def extract_boxed(text: str) -> str | None:
    """Contents of the last \\boxed{...} in ``text``, honoring nested braces."""
    start = text.rfind("\\boxed{")
    if start < 0:
        return None
    depth = 0
    for i in range(start + len("\\boxed{") - 1, len(text)):
        if text[i] == "{":
            depth += 1
        elif text[i] == "}":
            depth -= 1
            if depth == 0:
                return text[start + len("\\boxed{") : i]
    return None


def _last_number(text: str) -> str | None:
    matches = _NUMBER_RE.findall(text)
    return matches[-1] if matches else None


@dataclass(frozen=True)
class Verifier:
    """A verification rule; ``bind`` attaches a gold answer and validates it."""

    kind: str  # "exact" | "boxed" | "numeric"
    tolerance: float = 0.0

    def bind(self, gold: str) -> "BoundVerifier":
        if self.kind == "numeric":
            try:
                gold_value = float(gold.strip())
            except ValueError as exc:
                raise VerifierError(f"gold answer {gold!r} is not numeric") from exc
            return BoundVerifier(self, gold.strip(), gold_value)
        return BoundVerifier(self, gold.strip(), None)


@dataclass(frozen=True)
class BoundVerifier:
    verifier: Verifier
    gold: str
    gold_value: float | None

    def check(self, text: str) -> bool:
        kind = self.verifier.kind
        if kind == "exact":
            return text.strip() == self.gold
        if kind == "boxed":
            candidate = extract_boxed(text)
            if candidate is None:
                candidate = text
            return candidate.strip() == self.gold
        if kind == "numeric":
            candidate = extract_boxed(text)
            if candidate is None:
                candidate = _last_number(text)
            if candidate is None:
                return False
            try:
                value = float(candidate.strip())
            except ValueError:
                return False
            return abs(value - self.gold_value) <= self.verifier.tolerance
        raise VerifierError(f"unknown verifier kind {kind!r}")


def parse_verifier(spec: str) -> Verifier:
    """Parse a verifier spec string: "exact", "boxed", or "numeric:<tol>"."""
    spec = spec.strip()
    if spec == "exact":
        return Verifier("exact")
    if spec == "boxed":
        return Verifier("boxed")
    if spec.startswith("numeric"):
        _, _, tol = spec.partition(":")
        try:
            tolerance = float(tol) if tol else 0.0
        except ValueError as exc:
            raise VerifierError(f"bad numeric tolerance in {spec!r}") from exc
        if tolerance < 0:
            raise VerifierError("numeric tolerance must be >= 0")
        return Verifier("numeric", tolerance=tolerance)
    raise VerifierError(f"unknown verifier spec {spec!r}")


DEFAULT_VERIFIER = Verifier("boxed")
