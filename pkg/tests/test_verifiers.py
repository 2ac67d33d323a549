"""Answer verification rules and spec parsing."""

from __future__ import annotations

import pytest

from thinkstop.errors import VerifierError
from thinkstop.verifiers import Verifier, extract_boxed, parse_verifier


class TestParse:
    def test_kinds(self):
        assert parse_verifier("exact").kind == "exact"
        assert parse_verifier("boxed").kind == "boxed"
        numeric = parse_verifier("numeric:1e-6")
        assert numeric.kind == "numeric" and numeric.tolerance == 1e-6

    def test_bare_numeric_defaults_to_zero_tolerance(self):
        assert parse_verifier("numeric").tolerance == 0.0

    def test_unknown_spec(self):
        with pytest.raises(VerifierError):
            parse_verifier("fuzzy")

    def test_bad_tolerance(self):
        with pytest.raises(VerifierError):
            parse_verifier("numeric:abc")


class TestExtractBoxed:
    def test_simple(self):
        assert extract_boxed("x = \\boxed{42}") == "42"

    def test_nested_braces(self):
        assert extract_boxed("\\boxed{\\frac{1}{2}}") == "\\frac{1}{2}"

    def test_last_occurrence_wins(self):
        assert extract_boxed("\\boxed{1} then \\boxed{2}") == "2"

    def test_absent(self):
        assert extract_boxed("no box here") is None

    def test_unclosed(self):
        assert extract_boxed("\\boxed{42") is None


class TestChecks:
    def test_exact(self):
        bound = Verifier("exact").bind("42")
        assert bound.check(" 42 ")
        assert not bound.check("the answer is 42")

    def test_boxed_with_fallback_to_whole_text(self):
        bound = Verifier("boxed").bind("42")
        assert bound.check("so \\boxed{42}")
        assert bound.check("42")  # no box: whole text compared
        assert not bound.check("so \\boxed{41}")

    def test_numeric_tolerance(self):
        bound = Verifier("numeric", tolerance=1e-6).bind("0.5")
        assert bound.check("\\boxed{0.5000000001}")
        assert bound.check("the value is 0.5")
        assert not bound.check("the value is 0.51")
        assert not bound.check("no numbers at all")

    def test_numeric_requires_numeric_gold(self):
        with pytest.raises(VerifierError):
            Verifier("numeric").bind("one half")
