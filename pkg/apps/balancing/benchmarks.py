# apps/balancing/benchmarks.py
"""
Comparison strategies, with the fairness adjustments applied to all of them:
every exchange is bounded by the pair's meeting time, and partners are always
taken from the other side of the target level.

- MobiWEB: mobility aware, closest-to-target partner, no social input.
- P_GO:    greedy optimal on energy only, ignores where users are.
- P_FT:    friends only, both move towards the midpoint of their energies.
"""
from typing import Optional

import numpy as np

from apps.balancing.services import (
    ExchangeOutcome,
    closest_to_target,
    opposite_side_mask,
    pair_mobility,
    target_energy,
)
from apps.crowd.social import SocialGraph
from apps.crowd.state import (
    BalanceState,
    CrowdState,
    SelfContactError,
    SimParams,
    apply_transfer,
)


def mobiweb_pair(crowd: CrowdState, i: int, candidates, target: float) -> Optional[int]:
    return pair_mobility(crowd, i, candidates, target)


def pgo_pair(crowd: CrowdState, i: int, target: float,
             available: Optional[np.ndarray] = None) -> Optional[int]:
    """Opposite-side user closest to the target, wherever they are."""
    if available is None:
        available = crowd.states == BalanceState.INCOMPLETE
    mask = available & opposite_side_mask(crowd, i, target)
    mask[i] = False
    return closest_to_target(crowd, np.flatnonzero(mask), target)


def pft_pair(crowd: CrowdState, i: int, graph: SocialGraph, params: SimParams, target: float,
             available: Optional[np.ndarray] = None) -> Optional[int]:
    """Co-located friend on the other side of the target, closest to it."""
    if available is None:
        available = crowd.states == BalanceState.INCOMPLETE
    mask = (
        available
        & graph.adjacency[i]
        & (crowd.locations == crowd.locations[i])
        & (np.minimum(crowd.stays, crowd.stays[i]) >= params.t_min)
        & opposite_side_mask(crowd, i, target)
    )
    mask[i] = False
    return closest_to_target(crowd, np.flatnonzero(mask), target)


def pft_exchange(crowd: CrowdState, u1: int, u2: int, s1: float, s2: float, params: SimParams,
                 target: Optional[float] = None) -> ExchangeOutcome:
    """
    Equal split: the transmitter stops at the midpoint of the two energies, the
    receiver ends below it by the loss. Capped by alpha * t_p2p like any exchange.
    """
    if u1 == u2:
        raise SelfContactError(f"User #{u1} cannot exchange with itself.")
    if target is None:
        target = target_energy(params.beta, params.e_max).absolute
    t_p2p = min(s1, s2, params.delta_t)
    required = (crowd.energies[u1] - crowd.energies[u2]) / 2.0
    if t_p2p <= 0 or required <= 0:
        return ExchangeOutcome.none(t_p2p=max(t_p2p, 0.0))

    budget = params.alpha * t_p2p
    eta = 0 if required <= budget else 1
    sent = min(required, budget)
    apply_transfer(crowd, u1, u2, sent, params.beta)

    def _state(user):
        if abs(crowd.energies[user] - target) <= params.eps_balance:
            return BalanceState.COMPLETE
        return BalanceState.INCOMPLETE

    return ExchangeOutcome(
        transmitted=sent,
        received=(1.0 - params.beta) * sent,
        lam=sent / params.alpha,
        eta=eta,
        tx_state=_state(u1),
        rx_state=_state(u2),
        t_p2p=t_p2p,
    )
