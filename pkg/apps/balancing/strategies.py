# apps/balancing/strategies.py
from typing import Optional

import numpy as np

from apps.balancing import benchmarks
from apps.balancing.services import (
    BalancingError,
    ExchangeOutcome,
    SelectionContext,
    candidate_neighbors,
    p2p_energy_balance,
    pair_mobility,
    pair_social_context,
    pair_social_relations,
    predicted_contact_filter,
)


class Strategy:
    """Peer-selection policy plugged into the selection sweep."""
    tag = ""
    label = ""
    # Whether the engine refreshes mobility predictions for it; predicted stays
    # then filter out partners expected to leave before a valid contact.
    mobility_aware = True

    def candidates(self, ctx: SelectionContext, seed: int) -> np.ndarray:
        found = candidate_neighbors(ctx.crowd, seed, ctx.params, ctx.target, available=ctx.available_mask())
        if self.mobility_aware:
            found = predicted_contact_filter(found, seed, ctx.expected_stays(), ctx.params.t_min)
        return found

    def pair(self, ctx: SelectionContext, seed: int, candidates: np.ndarray) -> Optional[int]:
        raise NotImplementedError

    def exchange(self, crowd, tx, rx, s1, s2, params, target) -> ExchangeOutcome:
        return p2p_energy_balance(crowd, tx, rx, s1, s2, params, target)

    def __repr__(self):
        return f"<Strategy {self.tag}>"


class MobilityAware(Strategy):
    tag = "mosaba-mob"
    label = "MoSaBa (mobility only)"

    def pair(self, ctx, seed, candidates):
        return pair_mobility(ctx.crowd, seed, candidates, ctx.target)


class SocialContextAware(Strategy):
    tag = "mosaba-sc"
    label = "MoSaBa (social context)"

    def pair(self, ctx, seed, candidates):
        return pair_social_context(
            ctx.crowd, seed, candidates, ctx.histories, ctx.weights, ctx.target,
            attachments=ctx.location_attachments(),
        )


class SocialRelationsAware(Strategy):
    tag = "mosaba"
    label = "MoSaBa"

    def pair(self, ctx, seed, candidates):
        return pair_social_relations(
            ctx.crowd, seed, candidates, ctx.histories, ctx.graph, ctx.weights, ctx.target,
            attachments=ctx.location_attachments(),
            social=ctx.social_attachments(),
        )


class MobiWeb(Strategy):
    tag = "mobiweb"
    label = "MobiWEB"

    def pair(self, ctx, seed, candidates):
        return benchmarks.mobiweb_pair(ctx.crowd, seed, candidates, ctx.target)


class GreedyOptimal(Strategy):
    tag = "pgo"
    label = "P_GO"
    mobility_aware = False

    def candidates(self, ctx, seed):
        # Location is ignored: pgo_pair scans everyone available.
        return np.flatnonzero(ctx.available_mask())

    def pair(self, ctx, seed, candidates):
        available = np.zeros(ctx.crowd.m, dtype=bool)
        available[candidates] = True
        return benchmarks.pgo_pair(ctx.crowd, seed, ctx.target, available=available)


class FriendTransfer(Strategy):
    tag = "pft"
    label = "P_FT"
    mobility_aware = False

    def candidates(self, ctx, seed):
        return np.flatnonzero(ctx.available_mask())

    def pair(self, ctx, seed, candidates):
        available = np.zeros(ctx.crowd.m, dtype=bool)
        available[candidates] = True
        return benchmarks.pft_pair(ctx.crowd, seed, ctx.graph, ctx.params, ctx.target, available=available)

    def exchange(self, crowd, tx, rx, s1, s2, params, target):
        return benchmarks.pft_exchange(crowd, tx, rx, s1, s2, params, target)


STRATEGIES = {
    cls.tag: cls()
    for cls in (SocialRelationsAware, SocialContextAware, MobilityAware, MobiWeb, GreedyOptimal, FriendTransfer)
}
STRATEGY_TAGS = tuple(STRATEGIES)
BENCHMARK_METHODS = ("mosaba", "mobiweb", "pgo", "pft")


def get_strategy(tag: str) -> Strategy:
    try:
        return STRATEGIES[tag]
    except KeyError:
        raise BalancingError(f"Unknown strategy '{tag}'. Choose one of: {', '.join(STRATEGY_TAGS)}.")
