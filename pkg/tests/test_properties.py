import random

from hypothesis import given, settings, strategies as st

from clustervote.adversaries import HONEST, AdversaryMix, Strategy, StrategyKind
from clustervote.protocol import ClusterConfig
from clustervote.sim import SimConfig, expected_messages, message_count, run_campaign, run_election

from oracles import (
    election_invariants,
    snapshot_feasible_vectors,
    tally_consistent_vectors,
    view_feasible_vectors,
)

configs = st.builds(
    lambda sc, ao, k: ClusterConfig(sc=sc, ao=ao, k=k),
    st.integers(2, 12), st.integers(2, 5), st.integers(1, 3),
)


def honest(config, seed, sealed=False):
    rng = random.Random(seed)
    votes = [rng.randrange(config.ao) for _ in range(config.sc)]
    return run_election(config, [f"v{i}" for i in range(config.sc)], [HONEST] * config.sc,
                        votes, rng, sealed=sealed, detailed=False)


class TestHonestRuns:
    @given(configs, st.integers(0, 2**32))
    @settings(max_examples=150, deadline=None)
    def test_completes_with_exact_tally(self, config, seed):
        e = honest(config, seed)
        assert e.result.valid
        assert e.result.tally == e.true_tally
        assert not election_invariants(e)

    @given(configs, st.integers(0, 2**32))
    @settings(max_examples=60, deadline=None)
    def test_message_formula(self, config, seed):
        e = honest(config, seed)
        counts = message_count(e.transcript)
        assert (counts["stage1"], counts["stage2"]) == expected_messages(config)

    @given(st.integers(2, 6), st.integers(2, 4), st.integers(0, 2**32))
    @settings(max_examples=25, deadline=None)
    def test_sealed_run_is_clean(self, sc, ao, seed):
        e = honest(ClusterConfig(sc=sc, ao=ao), seed, sealed=True)
        assert e.result.valid and e.result.tally == e.true_tally


class TestAttackedRuns:
    @given(st.integers(3, 12), st.integers(2, 4), st.integers(0, 2**32),
           st.sampled_from(["dn", "cheat2", "nt"]))
    @settings(max_examples=80, deadline=None)
    def test_invariants_and_no_false_reveal(self, sc, ao, seed, which):
        c = ClusterConfig(sc=sc, ao=ao)
        rng = random.Random(seed)
        strategies = AdversaryMix(**{which: 1 if which != "nt" else 2}).assign(sc, rng)
        votes = [rng.randrange(ao) for _ in range(sc)]
        e = run_election(c, [f"v{i}" for i in range(sc)], strategies, votes, rng,
                         sealed=False, detailed=False)
        assert e.false_reveals == 0
        for n in e.nodes:
            views = n.list_history
            assert all(b <= a for a, b in zip(views, views[1:]))
        if e.result.valid and which == "nt":
            assert e.result.tally == e.true_tally


class TestDeterminism:
    @given(st.integers(0, 2**32))
    @settings(max_examples=5, deadline=None)
    def test_reports_identical(self, seed):
        cfg = SimConfig.from_dict({"cluster": {"sc": 6, "ao": 3}, "mix": {"dn": 1},
                                   "trials": 15, "seed": seed})
        assert run_campaign(cfg).to_json() == run_campaign(cfg).to_json()


def observer_run(seed):
    c = ClusterConfig(sc=4, ao=2)
    rng = random.Random(seed)
    observer = rng.randrange(4)
    strategies = [HONEST] * 4
    strategies[observer] = Strategy(StrategyKind.PRIVACY_COLLUDER, coalition=1)
    votes = [rng.randrange(2) for _ in range(4)]
    e = run_election(c, list("ABCD"), strategies, votes, rng, sealed=False)
    answers = {t: b for a, t, _o, b in e.coalitions[1].responses if a == observer}
    return e, observer, answers


class TestPrivacyBruteForce:
    def test_view_reveals_nothing_beyond_tally(self):
        for seed in range(150):
            e, obs, answers = observer_run(seed)
            feasible = view_feasible_vectors(e, obs, answers)
            assert feasible == tally_consistent_vectors(e, obs)
            others = {v for p, v in enumerate(e.votes) if p != obs}
            if len(others) > 1:
                assert len(feasible) >= 2

    def test_watching_the_list_can_narrow_it(self):
        # seeing which ids vanish each round is more than the published view
        narrowed = 0
        for seed in range(60):
            e, obs, answers = observer_run(seed)
            truth = tuple(v for p, v in enumerate(e.votes) if p != obs)
            snap = snapshot_feasible_vectors(e, obs, answers)
            assert truth in snap
            narrowed += snap < tally_consistent_vectors(e, obs)
        assert narrowed > 0
