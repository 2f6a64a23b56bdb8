from decimal import Decimal, localcontext

import networkx as nx
import numpy as np
from django.test import SimpleTestCase

from apps.balancing.benchmarks import pft_exchange, pft_pair, pgo_pair
from apps.balancing.services import (
    BalancingError,
    SelectionContext,
    begin_iteration,
    candidate_neighbors,
    mark_balanced,
    p2p_energy_balance,
    pair_mobility,
    pair_social_context,
    pair_social_relations,
    predicted_contact_filter,
    run_iteration,
    select_seed,
    target_energy,
)
from apps.balancing.strategies import BENCHMARK_METHODS, STRATEGY_TAGS, get_strategy
from apps.crowd.mobility import MobilityHistory, Prediction
from apps.crowd.social import SocialGraph, Weights
from apps.crowd.state import BalanceState, CrowdState, SelfContactError, SimParams

TARGET_02 = 47.21359549995794


def _crowd(energies, locations=None, stays=None):
    m = len(energies)
    return CrowdState.build(
        energies,
        [0] * m if locations is None else locations,
        stays=[40.0] * m if stays is None else stays,
    )


def _histories(m):
    return [MobilityHistory() for _ in range(m)]


class TargetEnergyTests(SimpleTestCase):
    def test_half_without_loss(self):
        self.assertEqual(target_energy(0.0).normalized, 0.5)
        self.assertEqual(target_energy(0.0, 100.0).absolute, 50.0)

    def test_matches_quadratic_root(self):
        for beta in ("0.1", "0.2", "0.3", "0.4", "0.9"):
            with localcontext() as ctx:
                ctx.prec = 40
                b = Decimal(beta)
                root = (1 - b).sqrt()
                expected = (-(1 - b) + root) / b
            self.assertAlmostEqual(target_energy(float(b)).normalized, float(expected), places=12)

    def test_decreases_with_loss(self):
        levels = [target_energy(b).normalized for b in (0.0, 0.2, 0.4, 0.6, 0.8)]
        self.assertEqual(levels, sorted(levels, reverse=True))

    def test_domain(self):
        for beta in (-0.1, 1.0, 1.5):
            with self.assertRaises(BalancingError):
                target_energy(beta)


class ExchangeTests(SimpleTestCase):
    def setUp(self):
        self.params = SimParams(m=2, beta=0.2, alpha=0.5, delta_t=40.0)

    def test_transmitter_reaches_target(self):
        crowd = _crowd([60.0, 30.0])
        outcome = p2p_energy_balance(crowd, 0, 1, 40.0, 40.0, self.params)
        self.assertEqual(outcome.eta, 0)
        self.assertAlmostEqual(crowd.energies[0], TARGET_02, places=10)
        self.assertAlmostEqual(crowd.energies[1], 40.22912360003365)
        self.assertAlmostEqual(outcome.transmitted, 60.0 - TARGET_02)
        self.assertAlmostEqual(outcome.lam, 25.57280900008412)
        self.assertEqual(outcome.tx_state, BalanceState.COMPLETE)
        self.assertEqual(outcome.rx_state, BalanceState.INCOMPLETE)

    def test_receiver_reaches_target(self):
        crowd = _crowd([80.0, 35.0])
        outcome = p2p_energy_balance(crowd, 0, 1, 40.0, 40.0, self.params)
        self.assertEqual(outcome.eta, 0)
        self.assertAlmostEqual(crowd.energies[1], TARGET_02, places=10)
        self.assertAlmostEqual(outcome.transmitted, (TARGET_02 - 35.0) / 0.8)
        self.assertEqual(outcome.rx_state, BalanceState.COMPLETE)

    def test_time_budget_binds(self):
        crowd = _crowd([60.0, 30.0])
        outcome = p2p_energy_balance(crowd, 0, 1, 10.0, 25.0, self.params)
        self.assertEqual(outcome.eta, 1)
        np.testing.assert_allclose(crowd.energies, [55.0, 34.0])
        self.assertAlmostEqual(outcome.lam, 10.0)
        self.assertEqual(outcome.t_p2p, 10.0)
        self.assertEqual(outcome.tx_state, BalanceState.INCOMPLETE)

    def test_both_sides_land_on_target(self):
        # 10 sent, 8 received after a 20% loss: exactly the receiver's deficit.
        crowd = _crowd([TARGET_02 + 10.0, TARGET_02 - 8.0])
        outcome = p2p_energy_balance(crowd, 0, 1, 40.0, 40.0, self.params)
        self.assertEqual(outcome.eta, 0)
        self.assertAlmostEqual(crowd.energies[0], TARGET_02, places=12)
        self.assertAlmostEqual(crowd.energies[1], TARGET_02, places=12)
        self.assertEqual(crowd.energies[0], crowd.energies[1])
        self.assertAlmostEqual(outcome.transmitted, 10.0)
        self.assertEqual(outcome.tx_state, BalanceState.COMPLETE)
        self.assertEqual(outcome.rx_state, BalanceState.COMPLETE)

    def test_both_complete_counted_in_sweep(self):
        params = SimParams(m=2, beta=0.2, alpha=0.5, delta_t=40.0)
        crowd = _crowd([TARGET_02 + 10.0, TARGET_02 - 8.0])
        begin_iteration(crowd, TARGET_02, params)
        stats = run_iteration("mosaba-mob", crowd, _histories(2), SocialGraph.empty(2), None, params)
        self.assertEqual(stats.meetings, 1)
        self.assertEqual(stats.newly_complete, 2)
        self.assertEqual(list(crowd.states), [BalanceState.COMPLETE, BalanceState.COMPLETE])

    def test_same_side_is_noop(self):
        crowd = _crowd([60.0, 55.0])
        outcome = p2p_energy_balance(crowd, 0, 1, 40.0, 40.0, self.params)
        self.assertEqual(outcome.transmitted, 0.0)
        np.testing.assert_array_equal(crowd.energies, [60.0, 55.0])

    def test_no_time_is_noop(self):
        crowd = _crowd([60.0, 30.0])
        self.assertEqual(p2p_energy_balance(crowd, 0, 1, 0.0, 40.0, self.params).transmitted, 0.0)

    def test_self_exchange(self):
        with self.assertRaises(SelfContactError):
            p2p_energy_balance(_crowd([60.0, 30.0]), 1, 1, 40.0, 40.0, self.params)

    def test_pft_equal_split(self):
        params = SimParams(m=2, beta=0.2, alpha=0.5, delta_t=80.0)
        crowd = _crowd([80.0, 20.0])
        outcome = pft_exchange(crowd, 0, 1, 80.0, 80.0, params)
        np.testing.assert_allclose(crowd.energies, [50.0, 44.0])
        self.assertEqual(outcome.eta, 0)
        self.assertEqual(outcome.tx_state, BalanceState.INCOMPLETE)

    def test_pft_capped(self):
        crowd = _crowd([80.0, 20.0])
        outcome = pft_exchange(crowd, 0, 1, 20.0, 20.0, self.params)
        np.testing.assert_allclose(crowd.energies, [70.0, 28.0])
        self.assertEqual(outcome.eta, 1)


class SelectionTests(SimpleTestCase):
    def setUp(self):
        self.params = SimParams(m=5, beta=0.2)
        self.crowd = _crowd(
            [60.0, 30.0, 40.0, 55.0, 20.0],
            locations=[0, 0, 0, 1, 0],
            stays=[30.0, 30.0, 30.0, 30.0, 0.5],
        )

    def test_mark_balanced(self):
        crowd = _crowd([47.0, 30.0, 47.6])
        self.assertEqual(mark_balanced(crowd, TARGET_02, 0.5), 2)
        self.assertEqual(list(crowd.states), [BalanceState.COMPLETE, BalanceState.INCOMPLETE, BalanceState.COMPLETE])
        self.assertEqual(mark_balanced(crowd, TARGET_02, 0.5), 0)

    def test_begin_iteration_releases_busy(self):
        crowd = _crowd([60.0, 47.3])
        crowd.states[0] = BalanceState.BUSY
        crowd.elapsed[:] = 12.0
        begin_iteration(crowd, TARGET_02, self.params)
        self.assertEqual(list(crowd.states), [BalanceState.INCOMPLETE, BalanceState.COMPLETE])
        self.assertTrue(np.all(crowd.elapsed == 0.0))

    def test_seed_closest_to_target(self):
        self.assertEqual(select_seed(self.crowd, TARGET_02), 2)
        self.assertEqual(select_seed(self.crowd, TARGET_02, exclude=[2]), 3)
        self.crowd.states[:] = BalanceState.COMPLETE
        self.assertIsNone(select_seed(self.crowd, TARGET_02))

    def test_seed_ties_go_to_lowest_id(self):
        crowd = _crowd([50.0, 40.0, 50.0])
        self.assertEqual(select_seed(crowd, 45.0), 0)

    def test_candidates_other_side_same_place(self):
        np.testing.assert_array_equal(candidate_neighbors(self.crowd, 0, self.params, TARGET_02), [1, 2])
        np.testing.assert_array_equal(candidate_neighbors(self.crowd, 1, self.params, TARGET_02), [0])
        self.crowd.states[0] = BalanceState.COMPLETE
        self.assertEqual(candidate_neighbors(self.crowd, 1, self.params, TARGET_02).size, 0)

    def test_pair_mobility(self):
        self.assertEqual(pair_mobility(self.crowd, 0, np.array([1, 2]), TARGET_02), 2)
        self.assertIsNone(pair_mobility(self.crowd, 0, np.array([], dtype=int), TARGET_02))

    def test_pgo_ignores_location(self):
        crowd = _crowd([60.0, 30.0, 45.0], locations=[0, 1, 2])
        self.assertEqual(pgo_pair(crowd, 0, TARGET_02), 2)

    def test_pft_needs_a_friend(self):
        crowd = _crowd([60.0, 30.0, 45.0])
        graph = SocialGraph(nx.Graph([(0, 1)]), 3)
        self.assertEqual(pft_pair(crowd, 0, graph, self.params, TARGET_02), 1)
        self.assertIsNone(pft_pair(crowd, 2, graph, self.params, TARGET_02))

    def test_social_pairing_without_history(self):
        weights = Weights(0.33, 0.33, 0.33)
        histories = _histories(5)
        self.assertEqual(
            pair_social_context(self.crowd, 0, [1, 2], histories, weights, TARGET_02), 2
        )
        self.assertEqual(
            pair_social_relations(self.crowd, 0, [1, 2], histories, SocialGraph.empty(5), weights, TARGET_02), 2
        )
        self.assertIsNone(pair_social_context(self.crowd, 0, [], histories, weights, TARGET_02))

    def test_energy_only_weights_agree_with_mobility_pairing(self):
        rng = np.random.default_rng(11)
        weights = Weights(0.0, 0.0, 1.0)
        graph = SocialGraph.complete(12)
        params = SimParams(m=12, n=2, w_l=0.0, w_s=0.0, w_e=1.0)
        for _ in range(50):
            crowd = _crowd(rng.uniform(0, 100, 12), locations=rng.integers(0, 2, 12))
            for i in range(12):
                cands = candidate_neighbors(crowd, i, params, TARGET_02)
                expected = pair_mobility(crowd, i, cands, TARGET_02)
                got = pair_social_relations(crowd, i, cands, _histories(12), graph, weights, TARGET_02)
                self.assertEqual(got, expected)


class PredictedPairingTests(SimpleTestCase):
    def setUp(self):
        self.params = SimParams(m=3, beta=0.2, alpha=0.5, delta_t=40.0, t_min=1.0)
        self.graph = SocialGraph.empty(3)
        # User 2 is expected to leave right away.
        self.predictions = [Prediction(0, 0.0, 25.0), Prediction(0, 0.0, 25.0), Prediction(1, 0.9, 0.5)]

    def _ctx(self, crowd, predictions):
        return SelectionContext(crowd, _histories(3), self.graph, self.params, TARGET_02, predictions)

    def test_filter_drops_short_predicted_contacts(self):
        stays = np.array([25.0, 25.0, 0.5])
        np.testing.assert_array_equal(predicted_contact_filter([1, 2], 0, stays, 1.0), [1])
        np.testing.assert_array_equal(predicted_contact_filter([1, 2], 0, None, 1.0), [1, 2])
        self.assertEqual(predicted_contact_filter([0, 1], 2, stays, 1.0).size, 0)

    def test_mobility_aware_choice_follows_prediction(self):
        strategy = get_strategy("mosaba-mob")
        ctx = self._ctx(_crowd([60.0, 30.0, 40.0]), self.predictions)
        candidates = strategy.candidates(ctx, 0)
        np.testing.assert_array_equal(candidates, [1])
        self.assertEqual(strategy.pair(ctx, 0, candidates), 1)

        ctx = self._ctx(_crowd([60.0, 30.0, 40.0]), None)
        self.assertEqual(strategy.pair(ctx, 0, strategy.candidates(ctx, 0)), 2)

    def test_every_mobility_aware_strategy_filters(self):
        for tag in ("mosaba", "mosaba-sc", "mosaba-mob", "mobiweb"):
            ctx = self._ctx(_crowd([60.0, 30.0, 40.0]), self.predictions)
            np.testing.assert_array_equal(get_strategy(tag).candidates(ctx, 0), [1])

    def test_pgo_ignores_predictions(self):
        ctx = self._ctx(_crowd([60.0, 30.0, 40.0]), self.predictions)
        self.assertEqual(get_strategy("pgo").pair(ctx, 0, get_strategy("pgo").candidates(ctx, 0)), 2)

    def test_sweep_pairs_differently_with_predictions(self):
        crowd = _crowd([60.0, 30.0, 40.0])
        begin_iteration(crowd, TARGET_02, self.params)
        stats = run_iteration("mosaba-mob", crowd, _histories(3), self.graph, self.predictions, self.params)
        self.assertEqual([(e.tx, e.rx) for e in stats.exchanges], [(0, 1)])

        crowd = _crowd([60.0, 30.0, 40.0])
        begin_iteration(crowd, TARGET_02, self.params)
        stats = run_iteration("mosaba-mob", crowd, _histories(3), self.graph, None, self.params)
        self.assertEqual([(e.tx, e.rx) for e in stats.exchanges][0], (0, 2))


class RunIterationTests(SimpleTestCase):
    def setUp(self):
        self.params = SimParams(m=3, beta=0.2, alpha=0.5, delta_t=40.0, t_min=1.0)

    def _run(self, crowd, tag="mosaba-mob", graph=None):
        graph = graph or SocialGraph.empty(crowd.m)
        begin_iteration(crowd, TARGET_02, self.params)
        return run_iteration(tag, crowd, _histories(crowd.m), graph, None, self.params)

    def test_single_meeting(self):
        crowd = _crowd([60.0, 30.0])
        stats = self._run(crowd)
        self.assertEqual(stats.meetings, 1)
        self.assertEqual(stats.newly_complete, 1)
        self.assertAlmostEqual(crowd.energies[0], TARGET_02, places=10)
        self.assertAlmostEqual(crowd.energies[1], 40.22912360003365)
        self.assertEqual(list(crowd.states), [BalanceState.COMPLETE, BalanceState.INCOMPLETE])
        self.assertAlmostEqual(crowd.elapsed[1], 25.57280900008412)

    def test_residual_round_reuses_leftover_time(self):
        crowd = _crowd([80.0, 30.0, 35.0])
        stats = self._run(crowd)
        self.assertEqual(stats.meetings, 2)
        self.assertEqual([(e.tx, e.rx) for e in stats.exchanges], [(0, 2), (0, 1)])
        self.assertAlmostEqual(stats.transmitted, 20.0)
        self.assertAlmostEqual(crowd.energies[0], 60.0)
        self.assertAlmostEqual(crowd.energies[2], TARGET_02, places=10)
        np.testing.assert_allclose(crowd.elapsed, [40.0, 40.0, 30.53398874989485])
        self.assertNotIn(BalanceState.BUSY, list(crowd.states))

    def test_nobody_to_meet(self):
        crowd = _crowd([60.0, 30.0], locations=[0, 1])
        stats = self._run(crowd)
        self.assertEqual(stats.meetings, 0)
        np.testing.assert_array_equal(crowd.energies, [60.0, 30.0])

    def test_pgo_crosses_locations(self):
        crowd = _crowd([60.0, 30.0], locations=[0, 1])
        stats = self._run(crowd, tag="pgo")
        self.assertEqual(stats.meetings, 1)

    def test_every_strategy_conserves_energy(self):
        rng = np.random.default_rng(3)
        params = SimParams(m=30, n=3, beta=0.2)
        graph = SocialGraph.random(30, 0.3, seed=4)
        for tag in STRATEGY_TAGS:
            crowd = _crowd(rng.uniform(0, 100, 30), locations=rng.integers(0, 3, 30),
                           stays=rng.uniform(10, 40, 30))
            before = crowd.energies.sum()
            begin_iteration(crowd, TARGET_02, params)
            stats = run_iteration(tag, crowd, _histories(30), graph, None, params)
            self.assertAlmostEqual(before - crowd.energies.sum(), 0.2 * stats.transmitted, delta=1e-9)
            self.assertTrue(np.all(crowd.energies >= 0.0))
            self.assertTrue(np.all(crowd.elapsed <= np.maximum(crowd.stays, 0.0) + 1e-9))


class StrategyRegistryTests(SimpleTestCase):
    def test_registry(self):
        self.assertTrue(set(BENCHMARK_METHODS) <= set(STRATEGY_TAGS))
        self.assertEqual(get_strategy("mosaba").tag, "mosaba")
        self.assertFalse(get_strategy("pgo").mobility_aware)
        with self.assertRaises(BalancingError):
            get_strategy("nope")
