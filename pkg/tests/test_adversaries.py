import random
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from clustervote.adversaries import (
    HONEST,
    AdversaryMix,
    Intel,
    Strategy,
    StrategyKind,
    cheat1_plan,
    cheat1_respond,
    cheat2_tamper,
    privacy_colluder_analyze,
    report_policy,
)
from clustervote.protocol import (
    ClusterConfig,
    CollisionReport,
    ConfigError,
    NodeState,
    ReportKind,
    VBallotId,
    create_pool,
    verify_list_consistency,
)
from clustervote.sim import run_election

from conftest import N, R, bid, case1_pool


class TestMix:
    def test_assign_counts(self):
        mix = AdversaryMix(dn=3, cheat2=1, nt=2, stallers=1)
        kinds = Counter(s.kind for s in mix.assign(25, 4))
        assert kinds[StrategyKind.CHEAT1] == 3
        assert kinds[StrategyKind.CHEAT2] == 1
        assert kinds[StrategyKind.PRIVACY_COLLUDER] == 2
        assert sum(s.stall for s in mix.assign(25, 4)) == 1

    def test_coordinated_single_active(self):
        strategies = AdversaryMix(dn=20, coordinated=True, active="single").assign(25, 1)
        members = [p for p, s in enumerate(strategies) if s.kind is StrategyKind.COALITION_MEMBER]
        assert len(members) == 20
        assert [p for p in members if strategies[p].active] == [min(members)]

    def test_positions_vary_with_seed(self):
        mix = AdversaryMix(dn=1)
        spots = {mix.assign(10, s).index(Strategy(StrategyKind.CHEAT1)) for s in range(40)}
        assert len(spots) > 5

    def test_too_many(self):
        with pytest.raises(ConfigError):
            AdversaryMix(dn=5).assign(4, 0)

    def test_bad_active(self):
        with pytest.raises(ConfigError):
            AdversaryMix(active="some")


class TestCheat1:
    @given(st.integers(2, 5), st.data())
    def test_plan_has_two_extra_target_ids(self, ao, data):
        c = ClusterConfig(sc=4, ao=ao)
        vote = data.draw(st.integers(0, ao - 1))
        plan = cheat1_plan(vote, c, seed=data.draw(st.integers(0, 9999)))
        counts = Counter(plan)
        assert len(plan) == c.rounds
        assert counts[vote] == 3
        assert sum(1 for o in range(ao) if counts[o] == 0) == 1

    def test_honest_answer_when_holding(self):
        node = NodeState(0, N, selected=[bid("N2"), bid("N4"), bid("N8")])
        assert cheat1_respond(node, N, set(), case1_pool(), seed=1).option == N

    def test_lie_is_an_extracted_id(self):
        pool = case1_pool()
        node = NodeState(0, N, selected=[bid("N2"), bid("N4"), bid("N8")])
        remaining = {bid(x) for x in ("N7", "R1", "R5", "R6")}
        for s in range(30):
            lie = cheat1_respond(node, R, remaining, pool, seed=s)
            assert lie.option == R and lie not in remaining

    def test_coalition_lie_uses_member_ids(self):
        pool = case1_pool()
        node = NodeState(0, N, selected=[bid("N2"), bid("N4"), bid("N8")])
        intel = Intel({0, 1}, {0: node.selected, 1: [bid("R8")]})
        assert cheat1_respond(node, R, set(), pool, intel, seed=3) == bid("R8")


class TestCheat2:
    def make_node(self):
        ids = [VBallotId(i % 2, i) for i in range(12)]
        node = NodeState(2, R, selected=[ids[11]])
        before = frozenset(ids) - {ids[11]}
        # others extracted 0, 2, 5 since the node's last view
        now = sorted(before - {ids[0], ids[2], ids[5]})
        node.list_history = [frozenset(ids), before, frozenset(now)]
        return node, now, ids

    def test_swap_direction_and_length(self):
        node, now, ids = self.make_node()
        forged = cheat2_tamper(node, now, favored=R, seed=0)
        assert len(forged) == len(now)
        added = set(forged) - set(now)
        dropped = set(now) - set(forged)
        assert len(added) == len(dropped) == 1
        assert next(iter(dropped)).option == R
        assert next(iter(added)) in {ids[0], ids[2]}

    def test_next_receiver_history_cannot_flag(self):
        node, now, ids = self.make_node()
        forged = cheat2_tamper(node, now, favored=R, seed=0)
        # a receiver that last saw the list before 0 and 2 vanished sees a subset
        receiver_prev = [frozenset(now) | {ids[0], ids[2]}]
        assert verify_list_consistency(receiver_prev, forged, 2) is None

    def test_nothing_to_reinsert(self):
        # only favoured ids vanished since the last view: no rival id to put back
        node, now, ids = self.make_node()
        node.list_history[-1] = frozenset(now) - {ids[7]}
        node.list_history[-2] = frozenset(now)
        shorter = sorted(node.list_history[-1])
        assert cheat2_tamper(node, shorter, favored=R, seed=0) == shorter


class TestReportPolicy:
    def test_honest_always_reports(self):
        rep = CollisionReport(0, ReportKind.DUPLICATE_RESPONSE, frozenset({1, 2}))
        assert report_policy(HONEST, rep, {1, 2})

    def test_member_suppresses_member_only_reports(self):
        member = Strategy(StrategyKind.COALITION_MEMBER, coalition=0)
        inside = CollisionReport(0, ReportKind.DUPLICATE_RESPONSE, frozenset({1, 2}))
        mixed = CollisionReport(0, ReportKind.DUPLICATE_RESPONSE, frozenset({1, 9}))
        assert not report_policy(member, inside, {0, 1, 2})
        assert report_policy(member, mixed, {0, 1, 2})


class TestPrivacyAnalyze:
    def test_reveal_needs_two_distinct_ids(self):
        a, b = VBallotId(0, 1), VBallotId(0, 2)
        responses = [(5, 3, 0, a), (6, 3, 0, b), (5, 4, 0, a), (6, 4, 0, a)]
        assert privacy_colluder_analyze(responses) == {(3, 0)}

    def test_members_excluded(self):
        responses = [(5, 6, 0, VBallotId(0, 1)), (7, 6, 0, VBallotId(0, 2))]
        assert privacy_colluder_analyze(responses, exclude={6}) == set()

    def test_k2_threshold(self):
        ids = [VBallotId(1, i) for i in range(3)]
        two = [(9, 0, 1, ids[0]), (8, 0, 1, ids[1])]
        assert privacy_colluder_analyze(two, k=2) == set()
        assert privacy_colluder_analyze(two + [(7, 0, 1, ids[2])], k=2) == {(0, 1)}

    def test_never_false_in_runs(self):
        c = ClusterConfig(sc=9, ao=3)
        for seed in range(200):
            rng = random.Random(seed)
            strategies = AdversaryMix(nt=3).assign(9, rng)
            votes = [rng.randrange(3) for _ in range(9)]
            e = run_election(c, [f"v{i}" for i in range(9)], strategies, votes, rng,
                             sealed=False, detailed=False)
            assert all(votes[p] == o for p, o in e.revealed)


class TestAttacksInRuns:
    def test_cheat1_alters_when_valid(self):
        c = ClusterConfig(sc=4, ao=2)
        outcomes = Counter()
        for seed in range(300):
            rng = random.Random(seed)
            strategies = AdversaryMix(dn=1).assign(4, rng)
            votes = [rng.randrange(2) for _ in range(4)]
            e = run_election(c, list("ABCD"), strategies, votes, rng, sealed=False, detailed=False)
            if e.result.valid:
                assert e.altered
                outcomes["valid"] += 1
            else:
                cheater = next(p for p, s in enumerate(strategies) if s.kind is StrategyKind.CHEAT1)
                assert cheater in e.warnings
                outcomes["cancelled"] += 1
        assert outcomes["valid"] and outcomes["cancelled"]

    def test_cheat2_mostly_caught(self):
        c = ClusterConfig(sc=10, ao=3)
        caught = 0
        for seed in range(200):
            rng = random.Random(seed)
            strategies = AdversaryMix(cheat2=1).assign(10, rng)
            votes = [rng.randrange(3) for _ in range(10)]
            e = run_election(c, [f"v{i}" for i in range(10)], strategies, votes, rng,
                             sealed=False, detailed=False)
            caught += not e.result.valid
            if e.result.valid:
                assert e.result.tally == e.true_tally or e.altered
        assert caught > 150
