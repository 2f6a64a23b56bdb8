# apps/crowd/mobility.py
"""
User movement (ground truth) and the fallback-order Markov predictor.

The predictor looks up the k most recent locations (the location context) in a
user's own history, estimates the transition probability to each location it
has seen, weights it by the probability of leaving within the next window and
falls back to shorter contexts, then to the most visited location, when the
context has never been followed by anything.
"""
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from apps.crowd.state import CrowdError, CrowdState, SimParams

# Midpoint of the default stay range, used when nothing has been observed yet.
DEFAULT_EXPECTED_STAY = 25.0


class OrderingError(CrowdError):
    """Visits must be recorded with strictly increasing arrival times."""
    pass


class NoEstimate(Exception):
    """The requested estimate has no supporting observations."""
    pass


@dataclass
class MobilityHistory:
    """Visited locations with their arrival times and stay durations."""
    locations: list = field(default_factory=list)
    arrivals: list = field(default_factory=list)
    stays: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.locations)

    def context(self, k: int) -> Tuple[int, ...]:
        if k <= 0:
            return ()
        return tuple(self.locations[-k:])

    def visits(self) -> Iterable[Tuple[int, float, float]]:
        return zip(self.locations, self.arrivals, self.stays)


@dataclass(frozen=True)
class Prediction:
    next_location: int
    move_within_prob: float
    expected_stay: float
    order: int = 0


# ---- movement ----

def draw_location(rng: np.random.Generator, params: SimParams) -> int:
    return int(rng.integers(0, params.n))


def draw_stay(rng: np.random.Generator, user: int, location: int, locations: np.ndarray,
              graph, params: SimParams) -> float:
    """Uniform(stay_min, stay_max) plus Uniform(0, f), f = friends at `location`; clamped to Δt."""
    friends_here = graph.friends_at(user, location, locations)
    stay = rng.uniform(params.stay_min, params.stay_max)
    if friends_here > 0:
        stay += rng.uniform(0.0, friends_here)
    return float(min(stay, params.delta_t))


def step_movement(rng: np.random.Generator, user: int, crowd: CrowdState, graph,
                  params: SimParams, location: Optional[int] = None) -> Tuple[int, float]:
    """
    Next (location, stay) of one user. Friends are counted where `crowd.locations`
    puts them; pass `location` when it was already drawn with everyone else's.
    """
    if location is None:
        location = draw_location(rng, params)
    return int(location), draw_stay(rng, user, location, crowd.locations, graph, params)


def move_crowd(rng: np.random.Generator, crowd: CrowdState, graph, params: SimParams,
               arrival: float) -> CrowdState:
    """
    Move every user at once. Locations are drawn first so the friend bonus of
    each stay counts friends at their new positions for this iteration.
    """
    crowd.locations = np.array([draw_location(rng, params) for _ in range(crowd.m)], dtype=np.int64)
    crowd.stays = np.array(
        [step_movement(rng, i, crowd, graph, params, location=crowd.locations[i])[1] for i in range(crowd.m)],
        dtype=float,
    )
    crowd.arrivals = np.full(crowd.m, float(arrival))
    return crowd


# ---- history ----

def record_visit(history: MobilityHistory, location: int, arrival: float, stay: float) -> MobilityHistory:
    if history.arrivals and arrival <= history.arrivals[-1]:
        raise OrderingError(
            f"Arrival {arrival} is not after the last recorded arrival {history.arrivals[-1]}."
        )
    if stay < 0:
        raise CrowdError(f"Negative stay duration {stay}.")
    history.locations.append(int(location))
    history.arrivals.append(float(arrival))
    history.stays.append(float(stay))
    return history


def _occurrences(sequence: Sequence[int], pattern: Sequence[int]):
    width = len(pattern)
    pattern = list(pattern)
    for start in range(len(sequence) - width + 1):
        if sequence[start:start + width] == pattern:
            yield start


def pattern_count(history: MobilityHistory, pattern: Sequence[int]) -> int:
    """Overlapping occurrences of `pattern` in the visited-location sequence."""
    if not pattern:
        raise CrowdError("Pattern must not be empty.")
    return sum(1 for _ in _occurrences(history.locations, pattern))


def _context_with_successor(history: MobilityHistory, context: Sequence[int]) -> int:
    # Occurrences ending on the last visit have no successor and are not counted.
    return sum(1 for _ in _occurrences(history.locations[:-1], context))


def transition_estimate(history: MobilityHistory, context: Sequence[int], x: int) -> float:
    denominator = _context_with_successor(history, context)
    if denominator == 0:
        raise NoEstimate(f"Context {tuple(context)} was never followed by a visit.")
    return pattern_count(history, list(context) + [x]) / denominator


def stay_durations(history: MobilityHistory, context: Sequence[int], x: int) -> list:
    """Stays at the end of the context, for every time the context was followed by `x`."""
    width = len(context)
    pattern = list(context) + [x]
    return [history.stays[start + width - 1] for start in _occurrences(history.locations, pattern)]


def stay_cdf_estimate(history: MobilityHistory, context: Sequence[int], x: int,
                      elapsed: float, delta_t: float) -> float:
    """Empirical P(elapsed <= s < elapsed + delta_t) over the stays that preceded `x`."""
    durations = stay_durations(history, context, x)
    if not durations:
        raise NoEstimate(f"No stays observed before {tuple(context)} -> {x}.")
    arr = np.asarray(durations, dtype=float)
    upper = np.count_nonzero(arr < elapsed + delta_t)
    lower = np.count_nonzero(arr < elapsed)
    return float((upper - lower) / arr.size)


def predict_move_within(history: MobilityHistory, context: Sequence[int], x: int,
                        elapsed: float, delta_t: float) -> float:
    transition = transition_estimate(history, context, x)
    if transition == 0.0:
        return 0.0
    return transition * stay_cdf_estimate(history, context, x, elapsed, delta_t)


def _argmax_lowest(scores: dict) -> int:
    best = max(scores.values())
    return min(loc for loc, score in scores.items() if score == best)


def _mean_stay(history: MobilityHistory) -> float:
    return float(np.mean(history.stays)) if history.stays else DEFAULT_EXPECTED_STAY


def predict_next(history: MobilityHistory, params: SimParams, elapsed: float, delta_t: float,
                 current: Optional[int] = None) -> Prediction:
    """
    Most likely next location with the fallback chain k, k-1, ..., 1, then order 0.
    Ties go to the lowest location id.
    """
    if len(history) == 0:
        return Prediction(
            next_location=int(current) if current is not None else 0,
            move_within_prob=0.0,
            expected_stay=DEFAULT_EXPECTED_STAY,
            order=0,
        )

    candidates = sorted(set(history.locations))
    for order in range(min(params.k, len(history)), 0, -1):
        context = history.context(order)
        if _context_with_successor(history, context) == 0:
            continue
        scores = {}
        for x in candidates:
            try:
                scores[x] = predict_move_within(history, context, x, elapsed, delta_t)
            except NoEstimate:
                scores[x] = 0.0
        chosen = _argmax_lowest(scores)
        durations = stay_durations(history, context, chosen)
        expected = float(np.mean(durations)) if durations else _mean_stay(history)
        return Prediction(chosen, scores[chosen], expected, order)

    # Order 0: most frequently visited location.
    counts = {loc: history.locations.count(loc) for loc in candidates}
    chosen = _argmax_lowest(counts)
    stays = np.asarray(history.stays, dtype=float)
    leave_prob = float(
        (np.count_nonzero(stays < elapsed + delta_t) - np.count_nonzero(stays < elapsed)) / stays.size
    )
    return Prediction(chosen, leave_prob, _mean_stay(history), 0)


def dump_trace(path, histories: Sequence[MobilityHistory]) -> int:
    """Write one row per visit (user, location, arrival, stay). Returns rows written."""
    frame = pd.DataFrame(
        [
            (user, location, float(arrival), float(stay))
            for user, history in enumerate(histories)
            for location, arrival, stay in history.visits()
        ],
        columns=["user", "location", "arrival", "stay"],
    )
    frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    return len(frame)
