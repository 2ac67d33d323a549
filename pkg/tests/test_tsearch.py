"""Token-wise search semantics: acceptance, tolerance ranks, baselines, oracles."""

from __future__ import annotations

import random

import pytest

from thinkstop.candidate import CandidateSequence, extend
from thinkstop.errors import ConfigError
from thinkstop.tsearch import (
    SearchConfig,
    greedy_answer,
    greedy_decode,
    h_from_tolerance_ratio,
    tsearch,
    vanilla_beam_search,
)

from .conftest import END_THINK, PROMPT, make_policy, query_ctx, random_policy
from .reference_search import reference_beam, reference_tsearch

END = END_THINK


class TestToleranceRank:
    def test_table_row_mapping(self):
        # m=4: ratio 1.0 -> 8, 0.75 -> 6, 0.5 -> 4
        assert h_from_tolerance_ratio(1.0, 4) == 8
        assert h_from_tolerance_ratio(0.75, 4) == 6
        assert h_from_tolerance_ratio(0.5, 4) == 4

    def test_non_integer_ratio_rejected(self):
        with pytest.raises(ConfigError):
            h_from_tolerance_ratio(0.3, 2)

    def test_config_invariants(self):
        with pytest.raises(ConfigError):
            SearchConfig(m=2, r=3).validate()
        with pytest.raises(ConfigError):
            SearchConfig(m=2, r=1, h=5).validate()
        with pytest.raises(ConfigError):
            SearchConfig(m=0, r=2).validate()
        SearchConfig(m=2, r=2, h=4).validate()


class TestAcceptance:
    def test_confident_end_accepted_at_step_one(self):
        # vocab {think, E, delim, a, b}; P(E)=0.6 everywhere: rank 1 in any window
        policy = make_policy(5, {}, (0.0, 0.6, 0.0, 0.3, 0.1))
        comps, trace = tsearch(policy, query_ctx(), SearchConfig(m=1, r=1, h=2, t_max=6))
        assert len(comps) == 1
        assert comps[0].think_tokens == (END,)
        assert not comps[0].forced
        assert comps[0].accept_step == 1 and comps[0].accept_rank == 1
        assert trace.events[0].accepted

    def test_low_rank_end_never_accepted_forces_completion(self):
        # E ranked 3rd of 3 active tokens; window is top-2, h=1: never seen
        policy = make_policy(5, {}, (0.0, 0.05, 0.0, 0.6, 0.35))
        comps, trace = tsearch(policy, query_ctx(), SearchConfig(m=1, r=1, h=1, t_max=4))
        assert len(comps) == 1
        assert comps[0].forced
        assert comps[0].think_tokens[-1] == END
        assert len(comps[0].think_tokens) == 5  # t_max tokens + forced end
        assert not trace.observations

    def test_end_inside_window_but_below_tolerance_is_discarded(self):
        # window top-2 = {a, E}; h=1 and E ranks 2nd: observed, rejected, siblings live on
        policy = make_policy(5, {}, (0.0, 0.3, 0.0, 0.6, 0.1))
        comps, trace = tsearch(policy, query_ctx(), SearchConfig(m=1, r=1, h=1, t_max=3))
        assert comps[0].forced
        assert all(not e.accepted for e in trace.events)
        assert all(o.rank == 2 for o in trace.observations)
        # surviving chain is made of the argmax token only
        assert all(t == 3 for t in comps[0].think_tokens[:-1])

    def test_surplus_acceptances_discarded_in_phi_order(self):
        # both beam parents see E at rank 1 in one step but only r=1 is kept
        policy = make_policy(5, {}, (0.0, 0.5, 0.0, 0.3, 0.2))
        comps, trace = tsearch(policy, query_ctx(), SearchConfig(m=2, r=1, h=4, t_max=4))
        assert len(comps) == 1
        taken = [e for e in trace.events if e.accepted]
        dropped = [e for e in trace.events if not e.accepted and e.rank is not None]
        assert len(taken) == 1
        assert all(taken[0].phi >= e.phi for e in dropped if e.step == taken[0].step)

    def test_completion_count_contract(self, rng):
        for _ in range(40):
            policy = random_policy(rng)
            m = rng.randint(1, 3)
            cfg = SearchConfig(
                m=m,
                r=rng.randint(1, m),
                h=rng.randint(1, 2 * m),
                t_max=rng.randint(1, 6),
                answer_budget=0,
            )
            comps, _ = tsearch(policy, query_ctx(), cfg)
            assert len(comps) == cfg.r
            for c in comps:
                assert c.think_tokens[-1] == END
                assert c.forced or c.accept_rank <= cfg.effective_h


class TestOracleEquivalence:
    def test_matches_exhaustive_reference(self, rng):
        for _ in range(30):
            policy = random_policy(rng)
            m = rng.randint(1, 3)
            r = rng.randint(1, m)
            h = rng.randint(1, 2 * m)
            t_max = rng.randint(1, 6)
            comps, trace = tsearch(
                policy, query_ctx(), SearchConfig(m=m, r=r, h=h, t_max=t_max, answer_budget=0)
            )
            ref = reference_tsearch(policy, PROMPT, m, r, h, t_max)
            assert [(c.think_tokens, c.phi, c.forced) for c in comps] == ref["completions"]
            assert [
                (e.step, e.parent_index, e.accepted, e.tokens, e.phi, e.rank) for e in trace.events
            ] == ref["events"]
            assert trace.beams() == ref["beams"]
            assert [
                (o.step, o.parent_index, o.rank, o.window_size) for o in trace.observations
            ] == ref["observations"]

    def test_local_score_variant_matches_its_reference(self, rng):
        from .reference_search import reference_tsearch_local

        for _ in range(25):
            policy = random_policy(rng)
            m = rng.randint(1, 3)
            r = rng.randint(1, m)
            h = rng.randint(1, 2 * m)
            t_max = rng.randint(1, 6)
            cfg = SearchConfig(
                m=m, r=r, h=h, t_max=t_max, score_key="last_logprob", answer_budget=0
            )
            comps, trace = tsearch(policy, query_ctx(), cfg)
            ref = reference_tsearch_local(policy, PROMPT, m, r, h, t_max)
            assert [(c.think_tokens, c.phi, c.forced) for c in comps] == ref["completions"]
            assert trace.beams() == ref["beams"]

    def test_beam_size_and_pool_bounds(self, rng):
        for _ in range(10):
            policy = random_policy(rng)
            m = rng.randint(1, 3)
            _, trace = tsearch(
                policy, query_ctx(), SearchConfig(m=m, r=1, t_max=5, answer_budget=0)
            )
            for rec in trace.steps:
                assert len(rec.beam) <= m


class TestTrMonotonicity:
    def test_termination_step_non_increasing_in_h(self, rng):
        for _ in range(25):
            policy = random_policy(rng)
            m = rng.randint(1, 3)
            steps = []
            for h in range(1, 2 * m + 1):
                comps, _ = tsearch(
                    policy, query_ctx(), SearchConfig(m=m, r=1, h=h, t_max=6, answer_budget=0)
                )
                steps.append(comps[0].accept_step)
            for earlier, later in zip(steps, steps[1:]):
                assert later <= earlier


class TestScoreKeyVariants:
    def test_phi_and_local_retention_diverge(self):
        # parent A keeps moderate children; parent B has one high-probability child
        a, b, c = 3, 4, 5
        table = {
            PROMPT: (0.0, 0.0, 0.0, 0.0, 0.9, 0.1),
            PROMPT + (a,): (0.0, 0.0, 0.0, 0.25, 0.4, 0.35),  # unused branch
            PROMPT + (b,): (0.0, 0.0, 0.0, 0.25, 0.4, 0.35),
            PROMPT + (c,): (0.0, 0.0, 0.0, 0.05, 0.9, 0.05),
        }
        policy = make_policy(6, table, (1 / 6,) * 6)
        cfg_phi = SearchConfig(m=2, r=1, h=4, t_max=2, score_key="phi", answer_budget=0)
        cfg_loc = SearchConfig(m=2, r=1, h=4, t_max=2, score_key="last_logprob", answer_budget=0)
        _, trace_phi = tsearch(policy, query_ctx(), cfg_phi)
        _, trace_loc = tsearch(policy, query_ctx(), cfg_loc)
        beams_phi = [tuple(t for t, _ in rec.beam) for rec in trace_phi.steps]
        beams_loc = [tuple(t for t, _ in rec.beam) for rec in trace_loc.steps]
        assert beams_phi[0] == beams_loc[0]
        assert beams_phi[1] != beams_loc[1]
        assert beams_phi[1] == ((b, b), (b, c))
        assert beams_loc[1] == ((c, b), (b, b))


class TestGreedy:
    def test_deterministic_single_path(self):
        # mass-1 path: a, a, E
        a = 3
        table = {
            PROMPT: (0.0, 0.0, 0.0, 1.0),
            PROMPT + (a,): (0.0, 0.0, 0.0, 1.0),
            PROMPT + (a, a): (0.0, 1.0, 0.0, 0.0),
        }
        policy = make_policy(4, table, (0.25,) * 4)
        comp = greedy_decode(policy, query_ctx(), t_max=10, answer_budget=0)
        assert comp.think_tokens == (a, a, END)
        assert not comp.forced

    def test_budget_exhaustion_forces_end(self):
        policy = make_policy(4, {}, (0.0, 0.1, 0.0, 0.9))
        comp = greedy_decode(policy, query_ctx(), t_max=5, answer_budget=0)
        assert comp.forced
        assert len(comp.think_tokens) == 6
        assert comp.think_tokens[-1] == END

    def test_tsearch_m0_equals_greedy(self, rng):
        for _ in range(40):
            policy = random_policy(rng)
            t_max = rng.randint(1, 6)
            comp = greedy_decode(policy, query_ctx(), t_max, answer_budget=2)
            comps, _ = tsearch(
                policy, query_ctx(), SearchConfig(m=0, r=1, t_max=t_max, answer_budget=2)
            )
            assert comps[0].think_tokens == comp.think_tokens
            assert comps[0].answer_tokens == comp.answer_tokens


class TestGreedyAnswer:
    def _policy(self):
        # post-thinking: emit token 4 then eos (id 3)
        table = {
            PROMPT + (END,): (0.0, 0.0, 0.0, 0.0, 1.0),
            PROMPT + (END, 4): (0.0, 0.0, 0.0, 1.0, 0.0),
        }
        return make_policy(5, table, (0.0, 1.0, 0.0, 0.0, 0.0), eos_id=3)

    def test_zero_budget_empty_answer(self):
        policy = self._policy()
        chain = extend(CandidateSequence(), END, -0.1, END)
        assert greedy_answer(policy, query_ctx(), chain, 0) == ()

    def test_deterministic_answer_stops_at_eos(self):
        policy = self._policy()
        chain = extend(CandidateSequence(), END, -0.1, END)
        assert greedy_answer(policy, query_ctx(), chain, 100) == (4,)

    def test_requires_terminated_chain(self):
        policy = self._policy()
        with pytest.raises(ConfigError):
            greedy_answer(policy, query_ctx(), CandidateSequence(), 10)

    def test_default_answer_budget_is_100(self):
        from thinkstop.tsearch import DEFAULT_ANSWER_BUDGET

        assert DEFAULT_ANSWER_BUDGET == 100


class TestVanillaBeam:
    def test_terminated_branch_pruned_by_score_but_accepted_by_tsearch(self):
        # At step 1 the end-token chain is retained in the beam; at step 2 both
        # children of the live chain outscore it, so classic search prunes it.
        a, b, c = 3, 4, 5
        table = {
            PROMPT: (0.0, 0.3, 0.0, 0.5, 0.2, 0.0),
            PROMPT + (a,): (0.0, 0.0, 0.0, 0.0, 0.35, 0.6)
        }
        # pad the second row so it normalizes
        row = list(table[PROMPT + (a,)])
        row[3] = 1.0 - sum(row)
        table[PROMPT + (a,)] = tuple(row)
        policy = make_policy(6, table, (0.0, 0.05, 0.0, 0.3, 0.3, 0.35))

        beams = vanilla_beam_search(policy, query_ctx(), m=2, t_max=3, answer_budget=0)
        assert all(comp.think_tokens != (END,) for comp in beams)

        comps, _ = tsearch(
            policy, query_ctx(), SearchConfig(m=2, r=1, h=4, t_max=3, answer_budget=0)
        )
        assert comps[0].think_tokens == (END,)
        assert not comps[0].forced

    def test_width_one_equals_greedy_chain(self, rng):
        for _ in range(25):
            policy = random_policy(rng)
            t_max = rng.randint(1, 6)
            greedy = greedy_decode(policy, query_ctx(), t_max, answer_budget=0)
            beams = vanilla_beam_search(policy, query_ctx(), m=1, t_max=t_max, answer_budget=0)
            assert beams[0].think_tokens == greedy.think_tokens

    def test_matches_reference_beam(self, rng):
        for _ in range(25):
            policy = random_policy(rng)
            m = rng.randint(1, 3)
            t_max = rng.randint(1, 6)
            got = vanilla_beam_search(policy, query_ctx(), m, t_max, answer_budget=0)
            ref = reference_beam(policy, PROMPT, m, t_max)
            assert [(c.think_tokens, c.phi, c.forced) for c in got] == ref
