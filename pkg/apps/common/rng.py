from dataclasses import dataclass

import numpy as np


def effective_seed(base_seed: int, repetition: int) -> int:
    """Seed of repetition `repetition` of an experiment started from `base_seed`."""
    return int(base_seed) + int(repetition)


@dataclass(frozen=True)
class RunStreams:
    """
    Independent random streams of one run, one per purpose.
    - init:     initial energies and locations
    - movement: next locations and stay durations
    - graph:    social graph generation
    Strategies never draw from these, so two strategies run with the same
    seed see the same crowd, the same graph and the same movements.
    """
    init: np.random.Generator
    movement: np.random.Generator
    graph: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> "RunStreams":
        init_ss, movement_ss, graph_ss = np.random.SeedSequence(int(seed)).spawn(3)
        return cls(
            init=np.random.default_rng(init_ss),
            movement=np.random.default_rng(movement_ss),
            graph=np.random.default_rng(graph_ss),
        )

    def graph_seed(self) -> int:
        """Integer seed for libraries that take one (networkx generators)."""
        return int(self.graph.integers(0, 2**31))
