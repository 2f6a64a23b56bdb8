# apps/crowd/state.py
import logging
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

logger = logging.getLogger(__name__)

# Tolerance used when checking transfer bounds on doubles.
BOUNDS_TOL = 1e-9


class CrowdError(Exception):
    """Raised for functional crowd errors (bounds, dimensions, degenerate inputs)."""
    pass


class EmptyCrowdError(CrowdError):
    pass


class DegenerateDistributionError(CrowdError):
    pass


class DimensionError(CrowdError):
    pass


class SelfContactError(CrowdError):
    pass


class TransferBoundsError(CrowdError):
    pass


class ParameterError(CrowdError):
    """Invalid simulation parameter; carries the offending field name."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


class BalanceState(IntEnum):
    INCOMPLETE = 0
    BUSY = 1
    COMPLETE = 2


@dataclass(frozen=True)
class SimParams:
    m: int = 100
    n: int = 5
    beta: float = 0.2
    alpha: float = 0.5
    delta_t: float = 40.0
    iterations: int = 30
    e_max: float = 100.0
    w_l: float = 0.33
    w_s: float = 0.33
    w_e: float = 0.33
    k: int = 2
    t_min: float = 1.0
    eps_balance: float = 0.5
    social_p: float = 0.1
    seed: int = 42
    stay_min: float = 10.0
    stay_max: float = 40.0

    def __post_init__(self):
        if not 0.0 <= self.beta < 1.0:
            raise ParameterError("beta", "must lie in [0, 1)")
        if self.alpha <= 0:
            raise ParameterError("alpha", "must be positive")
        if self.iterations < 0:
            raise ParameterError("iterations", "must be >= 0")
        if self.m < 0:
            raise ParameterError("m", "must be >= 0")
        if self.n < 1:
            raise ParameterError("n", "at least one location is required")
        if self.k < 1:
            raise ParameterError("k", "Markov order must be >= 1")
        if self.t_min <= 0:
            raise ParameterError("t_min", "must be positive")
        if self.delta_t <= 0:
            raise ParameterError("delta_t", "must be positive")
        if self.e_max <= 0:
            raise ParameterError("e_max", "must be positive")
        if not 0.0 <= self.social_p <= 1.0:
            raise ParameterError("social_p", "must lie in [0, 1]")
        if not 0.0 <= self.stay_min <= self.stay_max:
            raise ParameterError("stay_min", "stay range must satisfy 0 <= min <= max")
        for name in ("w_l", "w_s", "w_e"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ParameterError(name, "weights must lie in [0, 1]")
        total = self.w_l + self.w_s + self.w_e
        if abs(total - 1.0) > 0.02:
            logger.warning("Selectivity weights sum to %.3f (expected ~1)", total)


@dataclass
class CrowdState:
    """Energies, locations, balancing states and per-iteration timers of all users."""
    energies: np.ndarray
    locations: np.ndarray
    states: np.ndarray
    elapsed: np.ndarray
    stays: np.ndarray
    current_time: int = 0
    e_max: float = 100.0
    arrivals: np.ndarray = field(default=None)

    def __post_init__(self):
        self.energies = np.asarray(self.energies, dtype=float)
        m = self.energies.shape[0]
        self.locations = np.asarray(self.locations, dtype=np.int64)
        self.states = np.asarray(self.states, dtype=np.int8)
        self.elapsed = np.asarray(self.elapsed, dtype=float)
        self.stays = np.asarray(self.stays, dtype=float)
        if self.arrivals is None:
            self.arrivals = np.zeros(m, dtype=float)
        for name in ("locations", "states", "elapsed", "stays", "arrivals"):
            if getattr(self, name).shape != (m,):
                raise DimensionError(f"{name} must have length {m}")

    @classmethod
    def build(cls, energies, locations, stays=None, e_max: float = 100.0) -> "CrowdState":
        """Fresh crowd: everyone Incomplete, no elapsed time."""
        energies = np.asarray(energies, dtype=float)
        m = energies.shape[0]
        return cls(
            energies=energies,
            locations=locations,
            states=np.full(m, BalanceState.INCOMPLETE, dtype=np.int8),
            elapsed=np.zeros(m),
            stays=np.zeros(m) if stays is None else stays,
            e_max=e_max,
        )

    @property
    def m(self) -> int:
        return int(self.energies.shape[0])

    def complete_mask(self) -> np.ndarray:
        return self.states == BalanceState.COMPLETE


@dataclass(frozen=True)
class ContactWindow:
    duration: float
    co_located: bool

    def __post_init__(self):
        if self.duration < 0:
            raise CrowdError("Contact duration must be >= 0.")


def total_energy(crowd: CrowdState) -> float:
    return float(np.sum(crowd.energies))


def average_energy(crowd: CrowdState) -> float:
    if crowd.m == 0:
        raise EmptyCrowdError("Average energy of an empty crowd is undefined.")
    return total_energy(crowd) / crowd.m


def energy_distribution(crowd: CrowdState) -> np.ndarray:
    """Share of the network energy held by each user."""
    total = total_energy(crowd)
    if total <= 0:
        raise DegenerateDistributionError("Crowd holds no energy; distribution undefined.")
    return crowd.energies / total


def variation_distance(p, q) -> float:
    """Sum of absolute differences between two distributions over the same users (0..2)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise DimensionError(f"Distributions differ in shape: {p.shape} vs {q.shape}")
    return float(np.abs(p - q).sum())


def users_at_location(crowd: CrowdState, location: int) -> int:
    return int(np.count_nonzero(crowd.locations == location))


def contact_window(crowd: CrowdState, i: int, j: int) -> ContactWindow:
    return ContactWindow(
        duration=float(min(crowd.stays[i], crowd.stays[j])),
        co_located=bool(crowd.locations[i] == crowd.locations[j]),
    )


def is_valid_contact(crowd: CrowdState, i: int, j: int, params: SimParams) -> bool:
    """Co-located and together for at least t_min minutes."""
    if i == j:
        raise SelfContactError(f"User #{i} cannot meet itself.")
    window = contact_window(crowd, i, j)
    return window.co_located and window.duration >= params.t_min


def apply_transfer(crowd: CrowdState, tx: int, rx: int, e: float, beta: float) -> CrowdState:
    """
    Move `e` units out of `tx`; `rx` receives (1 - beta) * e.
    Mutates and returns `crowd`. Only the two entries change.
    """
    if tx == rx:
        raise SelfContactError(f"User #{tx} cannot transfer to itself.")
    if e < 0:
        raise TransferBoundsError(f"Negative transfer amount {e}.")
    if e == 0:
        return crowd
    if e > crowd.energies[tx] + BOUNDS_TOL:
        raise TransferBoundsError(
            f"User #{tx} holds {crowd.energies[tx]:.6f}, cannot send {e:.6f}."
        )
    received = (1.0 - beta) * e
    if crowd.energies[rx] + received > crowd.e_max + BOUNDS_TOL:
        raise TransferBoundsError(f"User #{rx} would exceed E_max={crowd.e_max}.")
    crowd.energies[tx] = max(0.0, crowd.energies[tx] - e)
    crowd.energies[rx] = min(crowd.e_max, crowd.energies[rx] + received)
    return crowd
