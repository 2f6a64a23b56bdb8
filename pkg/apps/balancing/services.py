# apps/balancing/services.py
"""
Loss-aware energy balancing: the target level, seed/partner selection and the
bounded pairwise exchange, plus the per-iteration selection sweep shared by
every strategy.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from apps.crowd.mobility import MobilityHistory
from apps.crowd.social import (
    SocialGraph,
    Weights,
    attachment_vector,
    peer_selectivity_sc,
    peer_selectivity_scr,
    social_attachment_vector,
)
from apps.crowd.state import (
    BOUNDS_TOL,
    BalanceState,
    CrowdState,
    SelfContactError,
    SimParams,
    apply_transfer,
)

logger = logging.getLogger(__name__)


class BalancingError(Exception):
    """Raised for functional balancing errors (domain of beta, unknown strategy...)."""
    pass


@dataclass(frozen=True)
class TargetLevel:
    normalized: float
    absolute: float


@dataclass(frozen=True)
class ExchangeOutcome:
    transmitted: float
    received: float
    lam: float
    eta: int
    tx_state: BalanceState
    rx_state: BalanceState
    t_p2p: float = 0.0

    @classmethod
    def none(cls, tx_state=BalanceState.INCOMPLETE, rx_state=BalanceState.INCOMPLETE, t_p2p=0.0):
        return cls(0.0, 0.0, 0.0, 0, tx_state, rx_state, t_p2p)


@dataclass(frozen=True)
class Exchange:
    """One executed meeting, as seen before the transfer."""
    tx: int
    rx: int
    tx_energy: float
    rx_energy: float
    transmitted: float
    t_p2p: float
    lam: float


@dataclass
class IterationStats:
    meetings: int = 0
    newly_complete: int = 0
    transmitted: float = 0.0
    exchanges: list = field(default_factory=list)

    def record(self, exchange: Exchange):
        self.meetings += 1
        self.transmitted += exchange.transmitted
        self.exchanges.append(exchange)


def target_energy(beta: float, e_max: float = 100.0) -> TargetLevel:
    """
    Balance level reachable under transfer loss beta, on [0, 1] then scaled.
    (-(1-b) + sqrt(1-b)) / b rewritten as sqrt(1-b) / (1 + sqrt(1-b)),
    which is 1/2 at b = 0.
    """
    if not 0.0 <= beta < 1.0:
        raise BalancingError(f"Loss factor must lie in [0, 1), got {beta}.")
    root = math.sqrt(1.0 - beta)
    normalized = root / (1.0 + root)
    return TargetLevel(normalized=normalized, absolute=normalized * e_max)


def mark_balanced(crowd: CrowdState, target: float, eps: float) -> int:
    """Mark users within eps of the target Complete. Returns how many were newly marked."""
    near = np.abs(crowd.energies - target) <= eps
    fresh = near & (crowd.states != BalanceState.COMPLETE)
    crowd.states[fresh] = BalanceState.COMPLETE
    return int(np.count_nonzero(fresh))


def begin_iteration(crowd: CrowdState, target: float, params: SimParams) -> int:
    """Reset per-iteration timers, release Busy users, mark balanced ones."""
    crowd.elapsed[:] = 0.0
    crowd.states[crowd.states == BalanceState.BUSY] = BalanceState.INCOMPLETE
    return mark_balanced(crowd, target, params.eps_balance)


@dataclass
class SelectionContext:
    """Everything a strategy may consult while pairing during one iteration."""
    crowd: CrowdState
    histories: Sequence[MobilityHistory]
    graph: SocialGraph
    params: SimParams
    target: float
    predictions: Optional[Sequence] = None
    meetings: np.ndarray = None
    _la: Optional[np.ndarray] = None
    _sa: Optional[np.ndarray] = None
    _stays: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.meetings is None:
            self.meetings = np.zeros(self.crowd.m, dtype=np.int64)

    @property
    def weights(self) -> Weights:
        return Weights.from_params(self.params)

    @property
    def max_meetings(self) -> int:
        return math.ceil(self.params.delta_t / self.params.t_min)

    def location_attachments(self) -> np.ndarray:
        if self._la is None:
            self._la = attachment_vector(self.histories, self.crowd)
        return self._la

    def social_attachments(self) -> np.ndarray:
        # Depends on who is where right now; computed once per iteration.
        if self._sa is None:
            self._sa = social_attachment_vector(self.graph, self.crowd)
        return self._sa

    def expected_stays(self) -> Optional[np.ndarray]:
        """Predicted stay of every user at its current location, if predictions were made."""
        if self.predictions is None:
            return None
        if self._stays is None:
            self._stays = np.array([p.expected_stay for p in self.predictions], dtype=float)
        return self._stays

    def residual(self) -> np.ndarray:
        return np.minimum(self.crowd.stays, self.params.delta_t) - self.crowd.elapsed

    def available_mask(self) -> np.ndarray:
        return (
            (self.crowd.states == BalanceState.INCOMPLETE)
            & (self.residual() >= self.params.t_min)
            & (self.meetings < self.max_meetings)
        )


# ---- selection ----

def closest_to_target(crowd: CrowdState, pool: np.ndarray, target: float) -> Optional[int]:
    if pool.size == 0:
        return None
    pool = np.sort(pool)
    # argmin returns the first minimum, i.e. the lowest id on ties.
    return int(pool[np.argmin(np.abs(target - crowd.energies[pool]))])


def select_seed(crowd: CrowdState, target: float, exclude: Iterable[int] = (),
                mask: Optional[np.ndarray] = None) -> Optional[int]:
    """Incomplete user closest to the target level."""
    eligible = crowd.states == BalanceState.INCOMPLETE if mask is None else mask.copy()
    exclude = list(exclude)
    if exclude:
        eligible[exclude] = False
    return closest_to_target(crowd, np.flatnonzero(eligible), target)


def opposite_side_mask(crowd: CrowdState, i: int, target: float) -> np.ndarray:
    return (crowd.energies[i] - target) * (crowd.energies - target) < 0


def candidate_neighbors(crowd: CrowdState, i: int, params: SimParams, target: float,
                        available: Optional[np.ndarray] = None) -> np.ndarray:
    """Co-located partners with a valid contact, strictly on the other side of the target."""
    if available is None:
        available = crowd.states == BalanceState.INCOMPLETE
    mask = (
        available
        & (crowd.locations == crowd.locations[i])
        & (np.minimum(crowd.stays, crowd.stays[i]) >= params.t_min)
        & opposite_side_mask(crowd, i, target)
    )
    mask[i] = False
    return np.flatnonzero(mask)


def predicted_contact_filter(candidates: np.ndarray, i: int, expected_stays: Optional[np.ndarray],
                             t_min: float) -> np.ndarray:
    """Drop candidates whose predicted time together with `i` is shorter than t_min."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if expected_stays is None or candidates.size == 0:
        return candidates
    together = np.minimum(expected_stays[candidates], expected_stays[i])
    return candidates[together >= t_min]


def pair_mobility(crowd: CrowdState, i: int, candidates: np.ndarray, target: float) -> Optional[int]:
    return closest_to_target(crowd, np.asarray(candidates, dtype=np.int64), target)


def energy_terms(crowd: CrowdState, i: int, candidates: np.ndarray, target: float):
    """(E1, E2) per candidate: seed above target -> (target, E_j), else (E_j, target)."""
    e_j = crowd.energies[candidates]
    if crowd.energies[i] > target:
        return np.full_like(e_j, target), e_j
    return e_j, np.full_like(e_j, target)


def _argmin_score(candidates: np.ndarray, scores: np.ndarray) -> int:
    order = np.argsort(candidates, kind="stable")
    candidates, scores = candidates[order], scores[order]
    return int(candidates[np.argmin(scores)])


def pair_social_context(crowd: CrowdState, i: int, candidates, histories: Sequence[MobilityHistory],
                        weights: Weights, target: float,
                        attachments: Optional[np.ndarray] = None) -> Optional[int]:
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        return None
    la = attachments if attachments is not None else attachment_vector(histories, crowd)
    e1, e2 = energy_terms(crowd, i, candidates, target)
    scores = peer_selectivity_sc(la[i], la[candidates], e1, e2, weights, crowd.e_max)
    return _argmin_score(candidates, np.asarray(scores, dtype=float))


def pair_social_relations(crowd: CrowdState, i: int, candidates, histories: Sequence[MobilityHistory],
                          graph: SocialGraph, weights: Weights, target: float,
                          attachments: Optional[np.ndarray] = None,
                          social: Optional[np.ndarray] = None) -> Optional[int]:
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        return None
    la = attachments if attachments is not None else attachment_vector(histories, crowd)
    sa = social if social is not None else social_attachment_vector(graph, crowd)
    e1, e2 = energy_terms(crowd, i, candidates, target)
    scores = peer_selectivity_scr(la[i], la[candidates], sa[i], sa[candidates], e1, e2, weights, crowd.e_max)
    return _argmin_score(candidates, np.asarray(scores, dtype=float))


# ---- exchange ----

def p2p_energy_balance(crowd: CrowdState, u1: int, u2: int, s1: float, s2: float,
                       params: SimParams, target: Optional[float] = None) -> ExchangeOutcome:
    """
    Bounded exchange from u1 (above target) to u2 (below target).

    Whichever side reaches the target first does so exactly; the transfer is
    capped by alpha * t_p2p (eta = 1 when the cap binds). Budgets and lambda are
    counted on the transmitter side, so lambda = e / alpha on both branches.
    """
    if u1 == u2:
        raise SelfContactError(f"User #{u1} cannot exchange with itself.")
    if target is None:
        target = target_energy(params.beta, params.e_max).absolute
    t_p2p = min(s1, s2, params.delta_t)
    if t_p2p <= 0:
        return ExchangeOutcome.none()

    surplus = crowd.energies[u1] - target
    deficit = target - crowd.energies[u2]
    if surplus <= 0 or deficit <= 0:
        return ExchangeOutcome.none(t_p2p=t_p2p)

    keep = 1.0 - params.beta
    if surplus * keep < deficit:
        required, reaching = surplus, u1
    else:
        required, reaching = deficit / keep, u2

    budget = params.alpha * t_p2p
    eta = 0 if required <= budget else 1
    sent = min(required, budget)
    apply_transfer(crowd, u1, u2, sent, params.beta)
    # Surplus after loss equal to the deficit: both sides land on the target.
    both = math.isclose(surplus * keep, deficit, rel_tol=0.0, abs_tol=BOUNDS_TOL)
    reached = {u1, u2} if both else {reaching}
    if eta == 0:
        # Land exactly on the target despite rounding.
        for user in reached:
            crowd.energies[user] = target

    tx_state = BalanceState.COMPLETE if eta == 0 and u1 in reached else BalanceState.INCOMPLETE
    rx_state = BalanceState.COMPLETE if eta == 0 and u2 in reached else BalanceState.INCOMPLETE
    return ExchangeOutcome(
        transmitted=sent,
        received=keep * sent,
        lam=sent / params.alpha,
        eta=eta,
        tx_state=tx_state,
        rx_state=rx_state,
        t_p2p=t_p2p,
    )


def _engage(strategy, ctx: SelectionContext, seed: int, stats: IterationStats) -> bool:
    crowd = ctx.crowd
    candidates = strategy.candidates(ctx, seed)
    partner = strategy.pair(ctx, seed, candidates)
    if partner is None:
        return False
    if crowd.energies[seed] > crowd.energies[partner]:
        tx, rx = seed, partner
    else:
        tx, rx = partner, seed

    start = max(crowd.elapsed[tx], crowd.elapsed[rx])
    tx_energy, rx_energy = float(crowd.energies[tx]), float(crowd.energies[rx])
    outcome = strategy.exchange(
        crowd, tx, rx, crowd.stays[tx] - start, crowd.stays[rx] - start, ctx.params, ctx.target
    )
    if outcome.transmitted <= 0:
        return False

    crowd.elapsed[tx] = crowd.elapsed[rx] = start + outcome.lam
    ctx.meetings[[tx, rx]] += 1
    for user, state in ((tx, outcome.tx_state), (rx, outcome.rx_state)):
        if state == BalanceState.COMPLETE:
            crowd.states[user] = BalanceState.COMPLETE
            stats.newly_complete += 1
        else:
            crowd.states[user] = BalanceState.BUSY
    stats.record(Exchange(tx, rx, tx_energy, rx_energy, outcome.transmitted, outcome.t_p2p, outcome.lam))
    return True


def _residual_round(strategy, ctx: SelectionContext, stats: IterationStats) -> int:
    """Reconsider users with time left, least elapsed first."""
    crowd = ctx.crowd
    crowd.states[crowd.states == BalanceState.BUSY] = BalanceState.INCOMPLETE
    executed = 0
    tried = set()
    while True:
        avail = ctx.available_mask()
        if tried:
            avail[list(tried)] = False
        pool = np.flatnonzero(avail)
        if pool.size == 0:
            break
        seed = int(pool[np.lexsort((pool, crowd.elapsed[pool]))[0]])
        if _engage(strategy, ctx, seed, stats):
            executed += 1
        else:
            tried.add(seed)
    return executed


def run_iteration(strategy, crowd: CrowdState, histories: Sequence[MobilityHistory],
                  graph: SocialGraph, predictions, params: SimParams) -> IterationStats:
    """
    One selection sweep. Seeds are taken closest-to-target first; afterwards
    users with residual contact time are re-paired in ascending elapsed order
    until a full round executes no meeting.
    """
    if isinstance(strategy, str):
        from apps.balancing.strategies import get_strategy
        strategy = get_strategy(strategy)

    target = target_energy(params.beta, params.e_max).absolute
    ctx = SelectionContext(crowd, histories, graph, params, target, predictions)
    stats = IterationStats()

    tried = set()
    while True:
        seed = select_seed(crowd, target, exclude=tried, mask=ctx.available_mask())
        if seed is None:
            break
        tried.add(seed)
        _engage(strategy, ctx, seed, stats)

    while _residual_round(strategy, ctx, stats):
        pass

    crowd.states[crowd.states == BalanceState.BUSY] = BalanceState.INCOMPLETE
    logger.debug(
        "iteration %s [%s]: %d meetings, %.3f transmitted",
        crowd.current_time, strategy.tag, stats.meetings, stats.transmitted,
    )
    return stats
