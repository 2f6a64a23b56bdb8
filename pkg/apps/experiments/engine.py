# apps/experiments/engine.py
"""
One seeded run: movement -> prediction -> selection sweep -> metrics, repeated
for T iterations; plus replicated experiments averaged per iteration.
"""
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from apps.balancing.services import begin_iteration, run_iteration, target_energy
from apps.balancing.strategies import get_strategy
from apps.common.rng import RunStreams, effective_seed
from apps.crowd.mobility import MobilityHistory, move_crowd, predict_next, record_visit
from apps.crowd.social import SocialGraph
from apps.crowd.state import CrowdState, SimParams
from apps.experiments.metrics import MetricsTrace, aggregate, iteration_metrics

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    params: SimParams
    strategy: str = "mosaba"
    repetition: int = 0
    base_seed: Optional[int] = None
    # Edge-list file; when unset the graph is drawn from the run seed.
    social_graph_path: Optional[str] = None

    @property
    def seed(self) -> int:
        base = self.params.seed if self.base_seed is None else self.base_seed
        return effective_seed(base, self.repetition)


@dataclass
class RunResult:
    trace: MetricsTrace
    crowd: CrowdState
    histories: List[MobilityHistory]
    graph: SocialGraph
    prediction_hits: int = 0
    prediction_total: int = 0
    pairings: list = field(default_factory=list)

    @property
    def prediction_accuracy(self) -> Optional[float]:
        if not self.prediction_total:
            return None
        return self.prediction_hits / self.prediction_total


def init_crowd(streams: RunStreams, params: SimParams, social_graph_path: Optional[str] = None):
    """Uniform energies and locations, empty histories, everyone Incomplete."""
    energies = streams.init.uniform(0.0, params.e_max, params.m)
    locations = streams.init.integers(0, params.n, params.m)
    crowd = CrowdState.build(energies, locations, e_max=params.e_max)
    if social_graph_path:
        graph = SocialGraph.from_edgelist(social_graph_path, params.m)
    else:
        graph = SocialGraph.random(params.m, params.social_p, seed=streams.graph_seed())
    histories = [MobilityHistory() for _ in range(params.m)]
    return crowd, graph, histories


def simulate(config: RunConfig) -> RunResult:
    params = config.params
    strategy = get_strategy(config.strategy)
    streams = RunStreams.from_seed(config.seed)
    crowd, graph, histories = init_crowd(streams, params, config.social_graph_path)
    target = target_energy(params.beta, params.e_max).absolute

    trace = MetricsTrace(method=config.strategy, rep_count=1)
    result = RunResult(trace, crowd, histories, graph)
    predictions = None

    for t in range(1, params.iterations + 1):
        crowd.current_time = t
        arrival = (t - 1) * params.delta_t
        move_crowd(streams.movement, crowd, graph, params, arrival)
        for i, history in enumerate(histories):
            record_visit(history, int(crowd.locations[i]), arrival, float(crowd.stays[i]))

        if predictions is not None:
            result.prediction_hits += sum(
                p.next_location == loc for p, loc in zip(predictions, crowd.locations)
            )
            result.prediction_total += crowd.m
        if strategy.mobility_aware:
            # Users have just arrived: elapsed time at the current location is 0.
            predictions = [
                predict_next(h, params, 0.0, params.delta_t, current=int(crowd.locations[i]))
                for i, h in enumerate(histories)
            ]

        started = time.perf_counter_ns()
        begin_iteration(crowd, target, params)
        stats = run_iteration(strategy, crowd, histories, graph, predictions, params)
        exec_us = (time.perf_counter_ns() - started) / 1000.0

        result.pairings.extend((t, ex.tx, ex.rx) for ex in stats.exchanges)
        trace.records.append(
            iteration_metrics(crowd, stats.meetings, exec_us, iteration=t, transmitted=stats.transmitted)
        )

    logger.debug(
        "run %s seed=%s: final energy %.3f, %d/%d balanced, predictor hit rate %s",
        config.strategy, config.seed,
        trace.records[-1].total_energy if trace.records else float("nan"),
        int(np.count_nonzero(crowd.complete_mask())), crowd.m, result.prediction_accuracy,
    )
    return result


def run_simulation(config: RunConfig) -> MetricsTrace:
    return simulate(config).trace


def _run_repetition(config: RunConfig):
    result = simulate(config)
    return result.trace, result.prediction_hits, result.prediction_total


@dataclass
class ExperimentResult:
    trace: MetricsTrace
    prediction_accuracy: Optional[float] = None


def run_experiment(config: RunConfig, reps: int, jobs: int = 1) -> ExperimentResult:
    """Mean trace over `reps` repetitions with seeds base, base+1, ..."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    configs = [replace(config, repetition=r) for r in range(reps)]
    if jobs > 1:
        # map() yields in submission order, so output does not depend on completion order.
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_repetition, configs))
    else:
        outcomes = [_run_repetition(c) for c in configs]

    traces = [trace for trace, _, _ in outcomes]
    hits = sum(h for _, h, _ in outcomes)
    total = sum(n for _, _, n in outcomes)
    return ExperimentResult(
        trace=aggregate(traces),
        prediction_accuracy=(hits / total) if total else None,
    )
