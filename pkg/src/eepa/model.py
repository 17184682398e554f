"""Scenario constants and the closed-form per-user energy-efficiency model.

All gains are linear.  Functions accept Python scalars or numpy arrays and
return a float for scalar input, an array otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DimensionError, DomainError

# Absolute tolerance used for real-valued equality checks (W, bit/J, ...).
ABS_TOL = 1e-12


@dataclass(frozen=True)
class CellConfig:
    """Constants of a single downlink cell.

    Either ``outage_threshold`` (a) is given directly, or ``bandwidth`` (W)
    is given and a is derived as ``2**(rate / bandwidth) - 1``.  When both
    are supplied they must agree to relative 1e-9.

    Attributes:
        num_users: Number of mobile users K.
        power_budget: Sum-power constraint P in Watts.
        noise_variance: Noise power sigma^2 in Watts.
        outage_threshold: SNR threshold a below which an outage occurs.
        rate: Transmission rate R in bit/s.
        bandwidth: Subband width W in Hz, only used to derive a.
        max_report: Largest gain G a user may report (linear).
    """

    num_users: int
    power_budget: float
    noise_variance: float = 5e-14
    outage_threshold: float | None = None
    rate: float = 1.0
    bandwidth: float | None = None
    max_report: float = 1.0
    _derived_a: bool = field(default=False, init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if isinstance(self.num_users, bool) or int(self.num_users) != self.num_users:
            raise DomainError(f"num_users must be an integer, got {self.num_users!r}")
        object.__setattr__(self, "num_users", int(self.num_users))
        if self.num_users < 1:
            raise DomainError(f"num_users must be >= 1, got {self.num_users}")
        for name in ("power_budget", "noise_variance", "rate", "max_report"):
            _require_positive(name, getattr(self, name))
        if self.bandwidth is not None:
            _require_positive("bandwidth", self.bandwidth)
            derived = 2.0 ** (self.rate / self.bandwidth) - 1.0
            if self.outage_threshold is None:
                object.__setattr__(self, "outage_threshold", derived)
                object.__setattr__(self, "_derived_a", True)
            elif not math.isclose(self.outage_threshold, derived, rel_tol=1e-9):
                raise DomainError(
                    f"outage_threshold={self.outage_threshold} inconsistent with "
                    f"2**(R/W)-1={derived}"
                )
        if self.outage_threshold is None:
            raise DomainError("either outage_threshold or bandwidth must be given")
        _require_positive("outage_threshold", self.outage_threshold)
        object.__setattr__(self, "outage_threshold", float(self.outage_threshold))

    @property
    def a(self) -> float:
        return self.outage_threshold  # type: ignore[return-value]

    def with_users(self, num_users: int) -> CellConfig:
        return self.replace(num_users=num_users)

    def with_budget(self, power_budget: float) -> CellConfig:
        return self.replace(power_budget=power_budget)

    def replace(self, **changes) -> CellConfig:
        """Copy with some fields changed.

        A derived threshold is re-derived, so changing ``rate`` or
        ``bandwidth`` on such a config does not trip the consistency check.
        """
        params = {
            "num_users": self.num_users,
            "power_budget": self.power_budget,
            "noise_variance": self.noise_variance,
            "outage_threshold": None if self._derived_a else self.outage_threshold,
            "rate": self.rate,
            "bandwidth": self.bandwidth,
            "max_report": self.max_report,
        }
        params.update(changes)
        return CellConfig(**params)


def _require_positive(name: str, value: float) -> None:
    if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value)):
        raise DomainError(f"{name} must be a finite real, got {value!r}")
    if value <= 0:
        raise DomainError(f"{name} must be > 0, got {value}")


def _out(x: NDArray[np.float64]) -> float | NDArray[np.float64]:
    return float(x) if x.ndim == 0 else x


def _finite(name: str, x: ArrayLike) -> NDArray[np.float64]:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def check_gains(gains: ArrayLike, num_users: int | None = None) -> NDArray[np.float64]:
    """Validate a vector of true channel gains and return it as a float array."""
    arr = _finite("gains", gains)
    if arr.ndim != 1:
        raise DimensionError(f"gains must be one-dimensional, got shape {arr.shape}")
    if num_users is not None and arr.size != num_users:
        raise DimensionError(f"expected {num_users} gains, got {arr.size}")
    if np.any(arr < 0):
        raise DomainError("gains must be non-negative")
    return arr


def check_reports(reports: ArrayLike, cfg: CellConfig) -> NDArray[np.float64]:
    """Validate a report profile: length K, every entry in [0, G]."""
    arr = check_gains(reports, cfg.num_users)
    if np.any(arr > cfg.max_report):
        raise DomainError(f"reports must not exceed max_report={cfg.max_report}")
    return arr


@dataclass(frozen=True)
class PowerAllocation:
    """Per-user powers in Watts satisfying ``p >= 0`` and ``sum(p) <= P``."""

    powers: NDArray[np.float64]
    budget: float

    def __post_init__(self) -> None:
        p = _finite("powers", self.powers).copy()
        if p.ndim != 1:
            raise DimensionError("powers must be one-dimensional")
        if np.any(p < 0):
            raise DomainError("powers must be non-negative")
        if p.sum() > self.budget + ABS_TOL:
            raise DomainError(f"sum of powers {p.sum()!r} exceeds budget {self.budget!r}")
        p.setflags(write=False)
        object.__setattr__(self, "powers", p)

    @property
    def total(self) -> float:
        return float(self.powers.sum())

    def __len__(self) -> int:
        return self.powers.size


def snr(p: ArrayLike, gain: ArrayLike, sigma2: float) -> float | NDArray[np.float64]:
    """Instantaneous SNR ``p * gain / sigma2``."""
    p = _finite("p", p)
    gain = _finite("gain", gain)
    if not math.isfinite(sigma2) or sigma2 <= 0:
        raise DomainError(f"sigma2 must be finite and > 0, got {sigma2!r}")
    if np.any(p < 0) or np.any(gain < 0):
        raise DomainError("p and gain must be non-negative")
    return _out(p * gain / sigma2)


def efficiency_f(gamma: ArrayLike, a: float) -> float | NDArray[np.float64]:
    """Packet success rate ``exp(-a / gamma)``, with f(0) = 0."""
    gamma = _finite("gamma", gamma)
    if np.any(gamma < 0):
        raise DomainError("gamma must be non-negative")
    with np.errstate(divide="ignore"):
        return _out(np.exp(-a / gamma))


def user_utility(p: ArrayLike, gain: ArrayLike, cfg: CellConfig) -> float | NDArray[np.float64]:
    """Energy efficiency ``R f(gamma) / p`` of one user in bit/Joule (0 at p = 0)."""
    p = _finite("p", p)
    gain = _finite("gain", gain)
    if np.any(p < 0):
        raise DomainError("p must be non-negative")
    p, gain = np.broadcast_arrays(p, gain)
    gamma = p * gain / cfg.noise_variance
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(p > 0, cfg.rate * np.exp(-cfg.a / gamma) / p, 0.0)
    return _out(u)


def cell_utility(alloc: PowerAllocation | ArrayLike, gains: ArrayLike, cfg: CellConfig) -> float:
    """Sum of per-user energy efficiencies for a whole allocation."""
    powers = alloc.powers if isinstance(alloc, PowerAllocation) else _finite("powers", alloc)
    gains = check_gains(gains)
    if powers.shape != gains.shape:
        raise DimensionError(f"allocation has {powers.size} entries, gains {gains.size}")
    return float(np.sum(user_utility(powers, gains, cfg)))


def individual_optimal_power(gain: ArrayLike, cfg: CellConfig) -> float | NDArray[np.float64]:
    """Power maximising one user's efficiency, ``min(sigma2 * a / gain, P)``.

    A zero gain demands the full budget.
    """
    gain = _finite("gain", gain)
    if np.any(gain < 0):
        raise DomainError("gain must be non-negative")
    with np.errstate(divide="ignore"):
        demand = np.minimum(cfg.noise_variance * cfg.a / gain, cfg.power_budget)
    return _out(demand)


def db_to_linear(db: ArrayLike) -> float | NDArray[np.float64]:
    return _out(10.0 ** (np.asarray(db, dtype=float) / 10.0))


def linear_to_db(x: ArrayLike) -> float | NDArray[np.float64]:
    with np.errstate(divide="ignore"):
        return _out(10.0 * np.log10(np.asarray(x, dtype=float)))
