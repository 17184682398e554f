"""Selfish channel-gain reporting game.

Each user reports a gain in [0, G] and is paid its SNR under the
allocation the base station computes from the reports.  The unique
equilibrium has everybody report ``K a sigma^2 / P`` so that the budget
is split evenly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .allocator import allocate, greedy_allocation
from .errors import DomainError, InfeasibleEquilibriumError
from .model import CellConfig, PowerAllocation, cell_utility, check_gains, check_reports


@dataclass(frozen=True)
class GameOutcome:
    reports: NDArray[np.float64]
    allocation: PowerAllocation
    player_snrs: NDArray[np.float64]
    believed_cell_utility: float
    actual_cell_utility: float


def play(reports: ArrayLike, true_gains: ArrayLike, cfg: CellConfig) -> GameOutcome:
    """Allocate from ``reports`` and score the result against the true gains."""
    reports = check_reports(reports, cfg)
    true_gains = check_gains(true_gains, cfg.num_users)
    alloc = allocate(reports, cfg).allocation
    return GameOutcome(
        reports=reports,
        allocation=alloc,
        player_snrs=alloc.powers * true_gains / cfg.noise_variance,
        believed_cell_utility=cell_utility(alloc, reports, cfg),
        actual_cell_utility=cell_utility(alloc, true_gains, cfg),
    )


def player_utility(k: int, reports: ArrayLike, true_gains: ArrayLike, cfg: CellConfig) -> float:
    """SNR of player ``k`` given everybody's reports."""
    if not 0 <= k < cfg.num_users:
        raise IndexError(f"player index {k} out of range for K={cfg.num_users}")
    reports = check_reports(reports, cfg)
    true_gains = check_gains(true_gains, cfg.num_users)
    power = allocate(reports, cfg).powers[k]
    return float(power * true_gains[k] / cfg.noise_variance)


def equilibrium_report(cfg: CellConfig) -> float:
    """``K a sigma^2 / P`` without checking it against G."""
    return cfg.num_users * cfg.a * cfg.noise_variance / cfg.power_budget


def nash_report(cfg: CellConfig) -> float:
    """Common report of the unique Nash equilibrium.

    Raises:
        InfeasibleEquilibriumError: if the report exceeds ``cfg.max_report``.
    """
    g = equilibrium_report(cfg)
    if g > cfg.max_report:
        raise InfeasibleEquilibriumError(
            f"equilibrium report {g!r} exceeds max_report G={cfg.max_report!r}"
        )
    return g


def _demand(g: float, cfg: CellConfig) -> float:
    if g == 0.0:
        return cfg.power_budget
    return min(cfg.noise_variance * cfg.a / g, cfg.power_budget)


def _deviation_powers(k: int, candidates: list[float], others: list[float], cfg: CellConfig):
    """Power of player k for each candidate report, others fixed.

    ``others`` holds the K-1 reports of the remaining players in index order.
    """
    other_demands = [_demand(g, cfg) for g in others]
    out = []
    for g in candidates:
        demands = other_demands[:k] + [_demand(g, cfg)] + other_demands[k:]
        out.append(greedy_allocation(demands, cfg.power_budget)[k])
    return out


def deviation_grid(g_star: float, cfg: CellConfig, points: int) -> NDArray[np.float64]:
    """``{0}`` plus ``points`` log-spaced reports from ``1e-3 g*`` to G."""
    low = 1e-3 * g_star
    if not low < cfg.max_report:
        raise DomainError(f"grid lower end {low!r} must lie below G={cfg.max_report!r}")
    return np.concatenate([[0.0], np.geomspace(low, cfg.max_report, points)])


def audit_equilibrium(true_gains: ArrayLike, cfg: CellConfig, deviation_grid_points: int = 200) -> float:
    """Largest relative SNR gain any player obtains by deviating from g*.

    Every player in turn tries each report of :func:`deviation_grid` while
    the others stay at g*.  Gains are measured relative to the player's
    equilibrium SNR (absolute when that SNR is 0).  A value <= 0 up to
    rounding confirms the equilibrium.
    """
    if deviation_grid_points < 10:
        raise DomainError("deviation grid needs at least 10 points")
    true_gains = check_gains(true_gains, cfg.num_users)
    g_star = nash_report(cfg)
    grid = deviation_grid(g_star, cfg, deviation_grid_points).tolist()
    k_users = cfg.num_users
    eq_powers = greedy_allocation([_demand(g_star, cfg)] * k_users, cfg.power_budget)
    worst = -math.inf
    for k in range(k_users):
        u_eq = eq_powers[k] * true_gains[k] / cfg.noise_variance
        others = [g_star] * (k_users - 1)
        for p in _deviation_powers(k, grid, others, cfg):
            u = p * true_gains[k] / cfg.noise_variance
            worst = max(worst, (u - u_eq) / u_eq if u_eq > 0 else u - u_eq)
    return worst


def best_response(
    k: int,
    reports_others: ArrayLike,
    true_gains: ArrayLike,
    cfg: CellConfig,
    grid: int = 1000,
) -> float:
    """Best report of player ``k`` on a grid, the others' reports fixed.

    Candidates are 0 and ``grid`` log-spaced values from ``1e-3 g*`` to G.
    Utilities equal to within relative 1e-12 count as ties, and ties go to
    the largest report.
    """
    if grid < 100:
        raise DomainError("best-response grid needs at least 100 points")
    if not 0 <= k < cfg.num_users:
        raise IndexError(f"player index {k} out of range for K={cfg.num_users}")
    others = np.asarray(reports_others, dtype=float)
    if others.shape != (cfg.num_users - 1,):
        raise DomainError(f"expected {cfg.num_users - 1} reports of other players")
    check_reports(np.append(others, 0.0), cfg)
    true_gains = check_gains(true_gains, cfg.num_users)
    candidates = deviation_grid(equilibrium_report(cfg), cfg, grid).tolist()
    powers = np.array(_deviation_powers(k, candidates, others.tolist(), cfg))
    utilities = powers * true_gains[k] / cfg.noise_variance
    top = utilities.max()
    ties = np.flatnonzero(utilities >= top - 1e-12 * abs(top))
    return float(candidates[ties[-1]])


def believed_cell_utility_at_ne(cfg: CellConfig) -> float:
    """Cell efficiency the base station computes from the equilibrium reports."""
    k = cfg.num_users
    return cfg.rate * k * k / cfg.power_budget * math.exp(-1.0)


def _outage_terms(true_gains: ArrayLike, cfg: CellConfig) -> NDArray[np.float64]:
    gains = check_gains(true_gains, cfg.num_users)
    g_star = equilibrium_report(cfg)
    with np.errstate(divide="ignore"):
        return np.where(gains > 0, -g_star / gains, -np.inf)


def actual_cell_utility_at_ne(true_gains: ArrayLike, cfg: CellConfig) -> float:
    """True cell efficiency under the even split P/K; zero gains contribute 0."""
    terms = np.exp(_outage_terms(true_gains, cfg))
    return float(cfg.rate * cfg.num_users / cfg.power_budget * terms.sum())


def ne_efficiency_ratio(true_gains: ArrayLike, cfg: CellConfig) -> float:
    """Actual over believed equilibrium efficiency, ``mean(exp(1 - g*/|h|^2))``."""
    terms = np.exp(1.0 + _outage_terms(true_gains, cfg))
    return float(terms.sum() / cfg.num_users)


def equilibrium_outcome(true_gains: ArrayLike, cfg: CellConfig) -> GameOutcome:
    g_star = nash_report(cfg)
    return play(np.full(cfg.num_users, g_star), true_gains, cfg)
