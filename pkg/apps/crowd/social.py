# apps/crowd/social.py
"""
Social context (location attachment) and social relations (friendship graph,
social attachment), plus the two PeerSelectivity scores used to rank partners.
Lower selectivity is better.
"""
from dataclasses import dataclass
from typing import Sequence

import networkx as nx
import numpy as np

from apps.crowd.mobility import MobilityHistory
from apps.crowd.state import CrowdError, CrowdState, ParameterError, SelfContactError


class NoVisitError(CrowdError):
    """The user never visited the location."""
    pass


@dataclass(frozen=True)
class Weights:
    w_l: float = 0.33
    w_s: float = 0.33
    w_e: float = 0.33

    def __post_init__(self):
        for name in ("w_l", "w_s", "w_e"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(name, "weights must lie in [0, 1]")

    @classmethod
    def from_params(cls, params) -> "Weights":
        return cls(params.w_l, params.w_s, params.w_e)


class SocialGraph:
    """Undirected friendship relation over users 0..m-1, no self-loops."""

    def __init__(self, graph: nx.Graph, m: int):
        graph = nx.Graph(graph)
        graph.remove_edges_from(list(nx.selfloop_edges(graph)))
        graph.add_nodes_from(range(m))
        unknown = [u for u in graph.nodes if not 0 <= u < m]
        if unknown:
            raise CrowdError(f"Social graph references unknown users {sorted(unknown)[:5]}.")
        self.graph = graph
        self.m = m
        self.adjacency = nx.to_numpy_array(graph, nodelist=range(m), dtype=bool) if m else np.zeros((0, 0), dtype=bool)

    @classmethod
    def random(cls, m: int, p: float, seed: int) -> "SocialGraph":
        """Erdős–Rényi G(m, p)."""
        return cls(nx.gnp_random_graph(m, p, seed=seed), m)

    @classmethod
    def from_edgelist(cls, path, m: int) -> "SocialGraph":
        """One 'i j' pair per line; duplicates collapse, '#' starts a comment."""
        return cls(nx.read_edgelist(path, nodetype=int, data=False), m)

    @classmethod
    def complete(cls, m: int) -> "SocialGraph":
        return cls(nx.complete_graph(m), m)

    @classmethod
    def empty(cls, m: int) -> "SocialGraph":
        return cls(nx.empty_graph(m), m)

    def friends_at(self, user: int, location: int, locations: np.ndarray) -> int:
        """Friends of `user` whose location is `location`."""
        if self.m == 0:
            return 0
        return int(np.count_nonzero(self.adjacency[user] & (np.asarray(locations) == location)))


# ---- social context ----

def avg_stay_duration(history: MobilityHistory, location: int) -> float:
    stays = [s for loc, s in zip(history.locations, history.stays) if loc == location]
    if not stays:
        raise NoVisitError(f"Location {location} was never visited.")
    return float(sum(stays) / len(stays))


def _avg_stays(history: MobilityHistory) -> dict:
    totals, visits = {}, {}
    for loc, stay in zip(history.locations, history.stays):
        totals[loc] = totals.get(loc, 0.0) + stay
        visits[loc] = visits.get(loc, 0) + 1
    return {loc: totals[loc] / visits[loc] for loc in totals}


def location_attachment(history: MobilityHistory, location: int) -> float:
    """Average stay at `location` as a share of the summed averages over visited locations."""
    if len(history) == 0:
        return 0.0
    taus = _avg_stays(history)
    norm = sum(taus.values())
    if norm <= 0:
        return 0.0
    return taus.get(location, 0.0) / norm


def attachment_vector(histories: Sequence[MobilityHistory], crowd: CrowdState) -> np.ndarray:
    """Location attachment of every user to the location they are at now."""
    return np.array(
        [location_attachment(h, int(crowd.locations[i])) for i, h in enumerate(histories)],
        dtype=float,
    )


# ---- social relations ----

def social_connection(graph: SocialGraph, i: int, j: int) -> int:
    if i == j:
        return 0
    return int(graph.adjacency[i, j])


def social_attachment(graph: SocialGraph, crowd: CrowdState, i: int) -> float:
    """Friends of `i` at its location over the head count there (i included)."""
    here = crowd.locations == crowd.locations[i]
    phi = int(np.count_nonzero(here))
    if phi == 0:
        raise SelfContactError(f"User #{i} is not at its own location.")
    return graph.friends_at(i, int(crowd.locations[i]), crowd.locations) / phi


def social_attachment_vector(graph: SocialGraph, crowd: CrowdState) -> np.ndarray:
    if crowd.m == 0:
        return np.zeros(0)
    same_place = crowd.locations[:, None] == crowd.locations[None, :]
    friends = np.count_nonzero(graph.adjacency & same_place, axis=1)
    return friends / same_place.sum(axis=1)


# ---- selectivity ----

def peer_selectivity_sc(la_i, la_j, e1, e2, weights: Weights, e_max: float):
    """Location-attachment gap plus normalized energy gap. Accepts numpy arrays."""
    return weights.w_l * np.abs(la_i - la_j) + weights.w_e * (e1 - e2) / e_max


def peer_selectivity_scr(la_i, la_j, sa_i, sa_j, e1, e2, weights: Weights, e_max: float):
    return peer_selectivity_sc(la_i, la_j, e1, e2, weights, e_max) + weights.w_s * np.abs(sa_i - sa_j)
