"""Rollout-group construction and clipped-objective arithmetic."""

from __future__ import annotations

import io
import json
import math
import random

import pytest

from thinkstop.errors import ConfigError, GroupTooSmall, ShapeMismatch, VerifierError
from thinkstop.grouprl import (
    RatioInputs,
    SamplingConfig,
    build_group,
    clipped_term,
    dump_group_jsonl,
    group_advantages,
    grpo_token_terms,
    gspo_objective,
    gspo_sequence_ratio,
    partition_objective,
    score_group,
    with_advantages,
)
from thinkstop.sage import SageConfig
from thinkstop.verifiers import Verifier

from .conftest import query_ctx, step_tree_policy


class TestBuildGroup:
    def _policy(self, rng):
        return step_tree_policy(rng)

    def test_training_shape_eight_with_two_searched(self, rng):
        group = build_group(
            self._policy(rng),
            query_ctx(),
            group_size=8,
            r_sage=2,
            sage_cfg=SageConfig(m=2, r=2, t_max=4, per_step_budget=3, answer_budget=2),
            sampling_cfg=SamplingConfig(t_max_tokens=12, answer_budget=2),
            seed=71,
            query_id="q0",
        )
        assert group.size == 8
        assert group.sources == ("sage",) * 2 + ("random",) * 6
        assert group.rewards is None

    def test_all_sage_group(self, rng):
        group = build_group(
            self._policy(rng),
            query_ctx(),
            group_size=2,
            r_sage=2,
            sage_cfg=SageConfig(m=2, r=2, t_max=4, per_step_budget=3, answer_budget=2),
            sampling_cfg=SamplingConfig(t_max_tokens=12, answer_budget=2),
            seed=5,
        )
        assert group.r_sage == 2 and group.size == 2

    def test_zero_sage_rejected(self, rng):
        with pytest.raises(ConfigError):
            build_group(
                self._policy(rng),
                query_ctx(),
                group_size=4,
                r_sage=0,
                sage_cfg=SageConfig(m=2, r=2),
                sampling_cfg=SamplingConfig(),
                seed=0,
            )

    def test_mismatched_sage_quota_rejected(self, rng):
        with pytest.raises(ConfigError):
            build_group(
                self._policy(rng),
                query_ctx(),
                group_size=4,
                r_sage=1,
                sage_cfg=SageConfig(m=2, r=2),
                sampling_cfg=SamplingConfig(),
                seed=0,
            )

    def test_seeded_determinism(self, rng):
        kwargs = dict(
            group_size=4,
            r_sage=2,
            sage_cfg=SageConfig(m=2, r=2, t_max=3, per_step_budget=3, answer_budget=1),
            sampling_cfg=SamplingConfig(t_max_tokens=10, answer_budget=1),
            seed=99,
        )
        policy = self._policy(rng)
        g1 = build_group(policy, query_ctx(), **kwargs)
        g2 = build_group(policy, query_ctx(), **kwargs)
        assert [c.tokens for c in g1.completions] == [c.tokens for c in g2.completions]


class TestScoreGroup:
    def _group_with_answers(self, answers):
        # hand-built group: only answer_text matters for scoring
        from thinkstop.candidate import Completion
        from thinkstop.grouprl import RolloutGroup

        comps = tuple(
            Completion(think_tokens=(1,), think_logprobs=(-0.1,), answer_text=a) for a in answers
        )
        return RolloutGroup(query_id="q", completions=comps, sources=("sage",) * len(comps))

    def test_exact_match(self):
        group = self._group_with_answers(["42", "41"])
        scored = score_group(group, Verifier("exact").bind("42"))
        assert scored.rewards == (1.0, 0.0)

    def test_boxed_extraction(self):
        group = self._group_with_answers(["the answer is \\boxed{42}", "\\boxed{41}"])
        scored = score_group(group, Verifier("boxed").bind("42"))
        assert scored.rewards == (1.0, 0.0)

    def test_garbage_scores_zero(self):
        group = self._group_with_answers(["no idea!!", ""])
        scored = score_group(group, Verifier("boxed").bind("42"))
        assert scored.rewards == (0.0, 0.0)

    def test_malformed_gold_for_numeric(self):
        with pytest.raises(VerifierError):
            Verifier("numeric", tolerance=1e-6).bind("not-a-number")

    def test_with_advantages_roundtrip(self):
        group = self._group_with_answers(["42", "41", "42", "x"])
        scored = with_advantages(score_group(group, Verifier("exact").bind("42")))
        assert scored.advantages == (1.0, -1.0, 1.0, -1.0)
        assert not scored.degenerate


class TestGroupAdvantages:
    def test_two_one_pattern(self):
        result = group_advantages([1, 0, 0, 1])
        assert result.advantages == (1.0, -1.0, -1.0, 1.0)

    def test_degenerate_all_equal(self):
        result = group_advantages([1, 1, 1, 1])
        assert result.advantages == (0.0, 0.0, 0.0, 0.0)
        assert result.degenerate

    def test_two_point_symmetry(self):
        assert group_advantages([1, 0]).advantages == (1.0, -1.0)

    def test_group_too_small(self):
        with pytest.raises(GroupTooSmall):
            group_advantages([1])

    def test_sample_std_divisor(self):
        population = group_advantages([1, 0, 0, 1]).advantages
        sample = group_advantages([1, 0, 0, 1], sample_std=True).advantages
        # n/(n-1) variance ratio shrinks every advantage by sqrt(3)/2
        factor = math.sqrt(3.0 / 4.0)
        assert sample == pytest.approx(tuple(a * factor for a in population), abs=1e-12)

    def test_normalization_properties(self):
        rng = random.Random(7)
        for _ in range(200):
            g = rng.randint(2, 16)
            rewards = [float(rng.random() < 0.5) for _ in range(g)]
            result = group_advantages(rewards)
            if result.degenerate:
                assert set(result.advantages) == {0.0}
                continue
            n = len(result.advantages)
            mean = sum(result.advantages) / n
            var = sum((a - mean) ** 2 for a in result.advantages) / n
            assert abs(mean) < 1e-9
            assert abs(math.sqrt(var) - 1.0) < 1e-9


class TestGrpoTokenTerms:
    def test_identity_ratios_give_mean_advantage(self):
        lps = ((-1.0, -2.0), (-0.5,), (-3.0, -1.0, -2.0))
        adv = (1.0, -1.0, 0.5)
        out = grpo_token_terms(RatioInputs(lps, lps), adv)
        assert all(w == 1.0 for row in out.ratios for w in row)
        assert out.objective == pytest.approx(sum(adv) / len(adv), abs=1e-15)

    def test_clip_examples(self):
        assert clipped_term(1.5, 1.0, 0.2) == 1.2
        assert clipped_term(0.5, -1.0, 0.2) == -0.8
        assert clipped_term(1.0, 0.7, 0.2) == pytest.approx(0.7, abs=0)

    def test_pessimistic_branch_detail(self):
        # negative advantage with a shrunk ratio: both branches evaluated
        unclipped = 0.5 * -1.0
        clipped = 0.8 * -1.0
        assert clipped_term(0.5, -1.0, 0.2) == min(unclipped, clipped)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            RatioInputs(((-1.0,),), ((-1.0, -2.0),))
        with pytest.raises(ShapeMismatch):
            grpo_token_terms(RatioInputs(((-1.0,),), ((-1.0,),)), (1.0, 2.0))

    def test_objective_permutation_invariance(self):
        rng = random.Random(17)
        lps_old = tuple(tuple(-rng.random() for _ in range(rng.randint(1, 4))) for _ in range(6))
        lps_new = tuple(tuple(lp + rng.uniform(-0.3, 0.3) for lp in row) for row in lps_old)
        adv = tuple(rng.uniform(-1, 1) for _ in range(6))
        base = grpo_token_terms(RatioInputs(lps_new, lps_old), adv).objective
        idx = list(range(6))
        rng.shuffle(idx)
        permuted = grpo_token_terms(
            RatioInputs(
                tuple(lps_new[i] for i in idx), tuple(lps_old[i] for i in idx)
            ),
            tuple(adv[i] for i in idx),
        ).objective
        assert abs(base - permuted) < 1e-12

    def test_partitioned_sum_equals_group_objective(self):
        rng = random.Random(19)
        lps_old = tuple(tuple(-rng.random() for _ in range(3)) for _ in range(8))
        lps_new = tuple(tuple(lp + rng.uniform(-0.2, 0.2) for lp in row) for row in lps_old)
        adv = tuple(rng.uniform(-1, 1) for _ in range(8))
        out = grpo_token_terms(RatioInputs(lps_new, lps_old), adv)
        sources = ("sage",) * 2 + ("random",) * 6
        part = partition_objective(out.per_completion, sources)
        assert abs(part.total - out.objective) < 1e-12

    def test_clipping_inactive_when_ratios_near_one(self):
        rng = random.Random(3)
        for _ in range(50):
            g = rng.randint(2, 6)
            lps_old = tuple(
                tuple(-rng.random() for _ in range(rng.randint(1, 5))) for _ in range(g)
            )
            # perturb within the clip band: |w-1| <= eps
            lps_new = tuple(
                tuple(lp + rng.uniform(-0.09, 0.09) for lp in row) for row in lps_old
            )
            adv = tuple(rng.uniform(-1, 1) for _ in range(g))
            out = grpo_token_terms(RatioInputs(lps_new, lps_old, clip_epsilon=0.2), adv)
            unclipped = [
                sum(w * a for w in row) / len(row) for row, a in zip(out.ratios, adv)
            ]
            assert out.objective == pytest.approx(sum(unclipped) / g, abs=1e-12)


class TestGspo:
    def test_identity(self):
        assert gspo_sequence_ratio([-1.0, -2.0], [-1.0, -2.0]) == 1.0

    def test_symmetric_ratios_cancel(self):
        assert gspo_sequence_ratio([-1.0 + 0.1, -1.0 - 0.1], [-1.0, -1.0]) == pytest.approx(1.0, abs=1e-15)

    def test_log_two_tokens(self):
        ratio = gspo_sequence_ratio([math.log(2), math.log(2)], [0.0, 0.0])
        assert ratio == pytest.approx(2.0, abs=1e-12)

    def test_equals_geometric_mean_of_token_ratios(self):
        rng = random.Random(5)
        for _ in range(200):
            n = rng.randint(1, 20)
            old = [-rng.random() * 3 for _ in range(n)]
            new = [lp + rng.uniform(-0.5, 0.5) for lp in old]
            s = gspo_sequence_ratio(new, old)
            product = 1.0
            for a, b in zip(new, old):
                product *= math.exp(a - b)
            assert abs(s - product ** (1.0 / n)) < 1e-12

    def test_objective_zero_for_identity_ratios(self):
        adv = group_advantages([1, 0, 0, 1]).advantages
        assert gspo_objective([1.0] * 4, list(adv)) == pytest.approx(0.0, abs=1e-15)

    def test_objective_permutation_invariance(self):
        rng = random.Random(9)
        ratios = [rng.uniform(0.5, 1.5) for _ in range(8)]
        adv = [rng.uniform(-1, 1) for _ in range(8)]
        base = gspo_objective(ratios, adv)
        idx = list(range(8))
        rng.shuffle(idx)
        shuffled = gspo_objective([ratios[i] for i in idx], [adv[i] for i in idx])
        assert abs(base - shuffled) < 1e-12

    def test_partition_identity(self):
        rng = random.Random(13)
        for _ in range(200):
            g = rng.randint(2, 16)
            r = rng.randint(1, g)
            values = tuple(rng.uniform(-1, 1) for _ in range(g))
            sources = ("sage",) * r + ("random",) * (g - r)
            part = partition_objective(values, sources)
            assert abs(part.total - sum(values) / g) < 1e-12


class TestJsonlDump:
    def test_one_object_per_completion(self):
        from thinkstop.candidate import Completion
        from thinkstop.grouprl import RolloutGroup

        comps = (
            Completion(think_tokens=(1,), think_logprobs=(-0.5,), answer_tokens=(4,), answer_logprobs=(-0.2,)),
            Completion(think_tokens=(4, 1), think_logprobs=(-0.1, -0.3)),
        )
        group = RolloutGroup(
            query_id="q7",
            completions=comps,
            sources=("sage", "random"),
            rewards=(1.0, 0.0),
            advantages=(1.0, -1.0),
        )
        buf = io.StringIO()
        dump_group_jsonl(group, buf)
        lines = [json.loads(line) for line in buf.getvalue().splitlines()]
        assert len(lines) == 2
        assert lines[0] == {
            "query_id": "q7",
            "source": "sage",
            "tokens": [1, 4],
            "logprobs": [-0.5, -0.2],
            "reward": 1.0,
            "advantage": 1.0,
        }
        assert lines[1]["source"] == "random"
