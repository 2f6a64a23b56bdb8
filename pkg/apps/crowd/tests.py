import itertools
import tempfile
from pathlib import Path

import networkx as nx
import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from apps.common.rng import RunStreams
from apps.crowd.mobility import (
    MobilityHistory,
    NoEstimate,
    OrderingError,
    draw_stay,
    dump_trace,
    move_crowd,
    pattern_count,
    predict_next,
    record_visit,
    stay_cdf_estimate,
    step_movement,
    stay_durations,
    transition_estimate,
)
from apps.crowd.social import (
    NoVisitError,
    SocialGraph,
    Weights,
    avg_stay_duration,
    location_attachment,
    peer_selectivity_sc,
    peer_selectivity_scr,
    social_attachment,
    social_attachment_vector,
    social_connection,
)
from apps.crowd.state import (
    CrowdError,
    CrowdState,
    DegenerateDistributionError,
    DimensionError,
    EmptyCrowdError,
    ParameterError,
    SelfContactError,
    SimParams,
    TransferBoundsError,
    apply_transfer,
    average_energy,
    contact_window,
    energy_distribution,
    is_valid_contact,
    total_energy,
    users_at_location,
    variation_distance,
)


def _history(locations, stays):
    history = MobilityHistory()
    for step, (loc, stay) in enumerate(zip(locations, stays)):
        record_visit(history, loc, step * 40.0, stay)
    return history


class CrowdStateTests(SimpleTestCase):
    def setUp(self):
        self.crowd = CrowdState.build([50.0, 20.0, 30.0], [0, 0, 1], stays=[30.0, 10.0, 0.5])
        self.params = SimParams(m=3, n=2)

    def test_totals_and_distribution(self):
        self.assertEqual(total_energy(self.crowd), 100.0)
        self.assertAlmostEqual(average_energy(self.crowd), 100.0 / 3)
        np.testing.assert_allclose(energy_distribution(self.crowd), [0.5, 0.2, 0.3])
        self.assertEqual(users_at_location(self.crowd, 0), 2)

    def test_empty_and_drained_crowds(self):
        with self.assertRaises(EmptyCrowdError):
            average_energy(CrowdState.build([], []))
        with self.assertRaises(DegenerateDistributionError):
            energy_distribution(CrowdState.build([0.0, 0.0], [0, 0]))

    def test_variation_distance(self):
        self.assertAlmostEqual(variation_distance([0.5, 0.5], [1.0, 0.0]), 1.0)
        self.assertEqual(variation_distance([0.2, 0.8], [0.2, 0.8]), 0.0)
        with self.assertRaises(DimensionError):
            variation_distance([1.0], [0.5, 0.5])

    def test_variation_distance_symmetric_and_bounded(self):
        rng = np.random.default_rng(8)
        for size in (2, 5, 40):
            for _ in range(20):
                p, q = rng.dirichlet(np.ones(size)), rng.dirichlet(np.ones(size))
                self.assertEqual(variation_distance(p, q), variation_distance(q, p))
                self.assertLessEqual(variation_distance(p, q), 2.0 + 1e-12)
                self.assertGreaterEqual(variation_distance(p, q), 0.0)

    def test_headcounts_cover_the_crowd(self):
        rng = np.random.default_rng(4)
        crowd = CrowdState.build(rng.uniform(0, 100, 50), rng.integers(0, 6, 50))
        self.assertEqual(sum(users_at_location(crowd, loc) for loc in range(6)), 50)
        self.assertEqual(users_at_location(crowd, 6), 0)

    def test_contact(self):
        window = contact_window(self.crowd, 0, 1)
        self.assertEqual(window.duration, 10.0)
        self.assertTrue(window.co_located)
        self.assertTrue(is_valid_contact(self.crowd, 0, 1, self.params))
        self.assertFalse(is_valid_contact(self.crowd, 0, 2, self.params))
        with self.assertRaises(SelfContactError):
            is_valid_contact(self.crowd, 1, 1, self.params)

    def test_apply_transfer_loses_beta(self):
        apply_transfer(self.crowd, 0, 1, 10.0, 0.2)
        np.testing.assert_allclose(self.crowd.energies, [40.0, 28.0, 30.0])
        self.assertAlmostEqual(total_energy(self.crowd), 98.0)

    def test_apply_transfer_bounds(self):
        with self.assertRaises(TransferBoundsError):
            apply_transfer(self.crowd, 1, 0, 25.0, 0.2)
        with self.assertRaises(TransferBoundsError):
            apply_transfer(self.crowd, 0, 1, -1.0, 0.2)
        with self.assertRaises(TransferBoundsError):
            apply_transfer(CrowdState.build([90.0, 95.0], [0, 0]), 0, 1, 10.0, 0.0)
        with self.assertRaises(SelfContactError):
            apply_transfer(self.crowd, 2, 2, 1.0, 0.2)

    def test_zero_transfer_is_noop(self):
        before = self.crowd.energies.copy()
        apply_transfer(self.crowd, 0, 1, 0.0, 0.5)
        np.testing.assert_array_equal(self.crowd.energies, before)

    def test_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            CrowdState.build([1.0, 2.0], [0])

    def test_params_validation(self):
        with self.assertRaises(ParameterError) as ctx:
            SimParams(beta=1.0)
        self.assertEqual(ctx.exception.field, "beta")
        with self.assertRaises(ParameterError):
            SimParams(k=0)
        with self.assertRaises(ParameterError):
            SimParams(w_s=1.5)
        with self.assertLogs("apps.crowd.state", level="WARNING"):
            SimParams(w_l=0.9, w_s=0.9, w_e=0.9)


class MobilityHistoryTests(SimpleTestCase):
    def setUp(self):
        self.history = _history([0, 1, 0, 1, 0], [10.0, 20.0, 30.0, 40.0, 50.0])

    def test_ordering(self):
        with self.assertRaises(OrderingError):
            record_visit(self.history, 1, 0.0, 5.0)

    def test_pattern_count_overlaps(self):
        self.assertEqual(pattern_count(self.history, [0, 1]), 2)
        self.assertEqual(pattern_count(self.history, [0, 1, 0]), 2)
        with self.assertRaises(CrowdError):
            pattern_count(self.history, [])

    def test_transition_estimate(self):
        self.assertEqual(transition_estimate(self.history, (0,), 1), 1.0)
        self.assertEqual(transition_estimate(self.history, (1, 0), 1), 1.0)
        self.assertEqual(transition_estimate(self.history, (1,), 1), 0.0)
        with self.assertRaises(NoEstimate):
            transition_estimate(self.history, (2,), 0)

    def test_stay_estimates(self):
        self.assertEqual(stay_durations(self.history, (0,), 1), [10.0, 30.0])
        self.assertEqual(stay_cdf_estimate(self.history, (0,), 1, 0.0, 20.0), 0.5)
        self.assertEqual(stay_cdf_estimate(self.history, (0,), 1, 15.0, 20.0), 0.5)
        with self.assertRaises(NoEstimate):
            stay_cdf_estimate(self.history, (1,), 1, 0.0, 20.0)

    def test_stay_cdf_grows_with_window(self):
        rng = np.random.default_rng(6)
        seq = [int(x) for x in rng.integers(0, 3, 40)]
        history = _history(seq, rng.uniform(10.0, 40.0, 40))
        for context in ((0,), (1,), (2, 0), (1, 1)):
            for x in range(3):
                if pattern_count(history, list(context) + [x]) == 0:
                    continue
                for elapsed in (0.0, 12.0, 30.0):
                    values = [stay_cdf_estimate(history, context, x, elapsed, d)
                              for d in (0.0, 5.0, 10.0, 20.0, 40.0, 80.0)]
                    self.assertEqual(values, sorted(values))
                    self.assertTrue(all(0.0 <= v <= 1.0 for v in values))
                    self.assertEqual(values[0], 0.0)

    def test_transition_estimates_sum_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            seq = [int(x) for x in rng.integers(0, 4, 25)]
            history = _history(seq, [20.0] * len(seq))
            for order in (1, 2, 3):
                context = tuple(seq[-order:])
                try:
                    total = sum(transition_estimate(history, context, x) for x in set(seq))
                except NoEstimate:
                    continue
                self.assertAlmostEqual(total, 1.0)

    def test_predict_next(self):
        prediction = predict_next(self.history, SimParams(k=2), 0.0, 40.0)
        self.assertEqual(prediction.next_location, 1)
        self.assertEqual(prediction.order, 2)
        self.assertEqual(prediction.move_within_prob, 1.0)
        self.assertEqual(prediction.expected_stay, 30.0)

    def test_predict_without_history(self):
        prediction = predict_next(MobilityHistory(), SimParams(), 0.0, 40.0, current=3)
        self.assertEqual(prediction.next_location, 3)
        self.assertEqual(prediction.move_within_prob, 0.0)

    def test_order_zero_fallback(self):
        prediction = predict_next(_history([2], [15.0]), SimParams(n=3), 0.0, 40.0)
        self.assertEqual(prediction.next_location, 2)
        self.assertEqual(prediction.order, 0)
        self.assertEqual(prediction.move_within_prob, 1.0)
        self.assertEqual(prediction.expected_stay, 15.0)

    def test_predict_matches_reference_enumeration(self):
        """Every location sequence of length <= 8 over 3 places, orders 1 and 2."""
        delta_t = 25.0
        for length in range(1, 9):
            for seq in itertools.product(range(3), repeat=length):
                seq = list(seq)
                stays = [5.0 + 7.0 * ((i * 3 + loc) % 5) for i, loc in enumerate(seq)]
                history = _history(seq, stays)
                for k in (1, 2):
                    got = predict_next(history, SimParams(n=3, k=k), 0.0, delta_t)
                    want_loc, want_prob = self._reference(seq, stays, k, delta_t)
                    self.assertEqual(got.next_location, want_loc, msg=(seq, k))
                    self.assertAlmostEqual(got.move_within_prob, want_prob, msg=(seq, k))

    @staticmethod
    def _reference(seq, stays, k, delta_t):
        places = sorted(set(seq))
        for order in range(min(k, len(seq)), 0, -1):
            ctx = seq[-order:]
            starts = [j for j in range(len(seq) - order) if seq[j:j + order] == ctx]
            if not starts:
                continue
            best, best_score = None, -1.0
            for x in places:
                hits = [j for j in starts if seq[j + order] == x]
                score = 0.0
                if hits:
                    before = [stays[j + order - 1] for j in hits]
                    score = len(hits) / len(starts) * sum(s < delta_t for s in before) / len(before)
                if score > best_score:
                    best, best_score = x, score
            return best, best_score
        counts = [seq.count(x) for x in places]
        return places[counts.index(max(counts))], sum(s < delta_t for s in stays) / len(stays)


class MovementTests(SimpleTestCase):
    def test_stays_within_range(self):
        params = SimParams(m=30, n=3, delta_t=40.0)
        rng = np.random.default_rng(1)
        graph = SocialGraph.empty(30)
        locations = rng.integers(0, 3, 30)
        stays = [draw_stay(rng, u, 0, locations, graph, params) for u in range(30)]
        self.assertTrue(all(10.0 <= s <= 40.0 for s in stays))

    def test_stays_clamped_to_window(self):
        params = SimParams(m=5, n=1, delta_t=12.0)
        rng = np.random.default_rng(2)
        graph = SocialGraph.complete(5)
        stays = [draw_stay(rng, u, 0, np.zeros(5, dtype=int), graph, params) for u in range(5)]
        self.assertTrue(all(s <= 12.0 for s in stays))

    def test_single_location_is_forced(self):
        params = SimParams(m=4, n=1)
        rng = np.random.default_rng(5)
        crowd = CrowdState.build(np.full(4, 50.0), np.zeros(4, dtype=int))
        for user in range(4):
            location, stay = step_movement(rng, user, crowd, SocialGraph.empty(4), params)
            self.assertEqual(location, 0)
            self.assertTrue(10.0 <= stay <= 40.0)

    def test_friends_extend_the_stay(self):
        # User 0 has four friends, all at location 0.
        params = SimParams(m=5, n=1, delta_t=60.0)
        graph = SocialGraph(nx.star_graph(4), 5)
        crowd = CrowdState.build(np.full(5, 50.0), np.zeros(5, dtype=int))
        rng = np.random.default_rng(12)
        stays = [step_movement(rng, 0, crowd, graph, params)[1] for _ in range(200)]
        self.assertTrue(all(10.0 <= s <= 44.0 for s in stays))
        self.assertGreater(max(stays), 40.0)

    def test_given_location_is_kept(self):
        params = SimParams(m=3, n=5)
        crowd = CrowdState.build(np.full(3, 50.0), [2, 2, 4])
        location, _ = step_movement(np.random.default_rng(0), 1, crowd, SocialGraph.empty(3), params, location=2)
        self.assertEqual(location, 2)

    def test_move_crowd_is_reproducible(self):
        params = SimParams(m=20, n=4)
        outcomes = []
        for _ in range(2):
            streams = RunStreams.from_seed(9)
            crowd = CrowdState.build(np.full(20, 50.0), np.zeros(20, dtype=int))
            move_crowd(streams.movement, crowd, SocialGraph.random(20, 0.2, seed=3), params, 40.0)
            outcomes.append((crowd.locations.copy(), crowd.stays.copy()))
            self.assertTrue(np.all(crowd.arrivals == 40.0))
            self.assertTrue(np.all((crowd.locations >= 0) & (crowd.locations < 4)))
        np.testing.assert_array_equal(outcomes[0][0], outcomes[1][0])
        np.testing.assert_array_equal(outcomes[0][1], outcomes[1][1])

    def test_dump_trace(self):
        histories = [_history([0, 1], [10.0, 12.0]), _history([2], [30.0])]
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "trace.csv"
            self.assertEqual(dump_trace(path, histories), 3)
            frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["user", "location", "arrival", "stay"])
        self.assertEqual(frame["user"].tolist(), [0, 0, 1])


class SocialTests(SimpleTestCase):
    def test_graph_drops_self_loops(self):
        graph = SocialGraph(nx.Graph([(0, 0), (0, 1)]), 3)
        self.assertFalse(graph.adjacency[0, 0])
        self.assertEqual(int(graph.adjacency[0].sum()), 1)
        self.assertEqual(int(graph.adjacency[2].sum()), 0)
        self.assertEqual(social_connection(graph, 0, 1), 1)
        self.assertEqual(social_connection(graph, 1, 1), 0)

    def test_graph_rejects_unknown_users(self):
        with self.assertRaises(CrowdError):
            SocialGraph(nx.Graph([(0, 5)]), 3)

    def test_edgelist(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "friends.txt"
            path.write_text("# friends\n0 1\n1 2\n0 1\n")
            graph = SocialGraph.from_edgelist(path, 4)
        self.assertEqual(int(graph.adjacency[1].sum()), 2)
        self.assertEqual(int(graph.adjacency[3].sum()), 0)

    def test_random_graph_seeded(self):
        a = SocialGraph.random(30, 0.1, seed=5)
        b = SocialGraph.random(30, 0.1, seed=5)
        np.testing.assert_array_equal(a.adjacency, b.adjacency)
        np.testing.assert_array_equal(a.adjacency, a.adjacency.T)

    def test_location_attachment(self):
        history = _history([0, 1, 0], [10.0, 30.0, 20.0])
        self.assertEqual(avg_stay_duration(history, 0), 15.0)
        self.assertAlmostEqual(location_attachment(history, 0), 1 / 3)
        self.assertAlmostEqual(location_attachment(history, 1), 2 / 3)
        self.assertEqual(location_attachment(history, 2), 0.0)
        self.assertEqual(location_attachment(MobilityHistory(), 0), 0.0)
        with self.assertRaises(NoVisitError):
            avg_stay_duration(history, 2)

    def test_social_attachment(self):
        crowd = CrowdState.build([10.0] * 4, [0, 0, 0, 1])
        graph = SocialGraph(nx.Graph([(0, 1), (0, 3)]), 4)
        self.assertAlmostEqual(social_attachment(graph, crowd, 0), 1 / 3)
        np.testing.assert_allclose(social_attachment_vector(graph, crowd), [1 / 3, 1 / 3, 0.0, 0.0])

    def test_selectivity(self):
        weights = Weights(0.33, 0.33, 0.33)
        self.assertAlmostEqual(peer_selectivity_sc(0.5, 0.2, 60.0, 50.0, weights, 100.0), 0.132)
        self.assertAlmostEqual(
            peer_selectivity_scr(0.5, 0.2, 0.1, 0.4, 60.0, 50.0, weights, 100.0), 0.231
        )
        scores = peer_selectivity_sc(0.5, np.array([0.5, 0.1]), 47.0, np.array([40.0, 20.0]), weights, 100.0)
        self.assertEqual(scores.shape, (2,))

    def test_scaling_weights_keeps_the_best_peer(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            la_j, sa_j = rng.uniform(0, 1, 8), rng.uniform(0, 1, 8)
            e2 = rng.uniform(0, 47.0, 8)
            w = rng.dirichlet(np.ones(3))
            weights = Weights(*w)
            halved = Weights(*(w / 2))
            best = np.argmin(peer_selectivity_scr(0.4, la_j, 0.2, sa_j, 60.0, e2, weights, 100.0))
            again = np.argmin(peer_selectivity_scr(0.4, la_j, 0.2, sa_j, 60.0, e2, halved, 100.0))
            self.assertEqual(best, again)
            best = np.argmin(peer_selectivity_sc(0.4, la_j, 60.0, e2, weights, 100.0))
            again = np.argmin(peer_selectivity_sc(0.4, la_j, 60.0, e2, halved, 100.0))
            self.assertEqual(best, again)
