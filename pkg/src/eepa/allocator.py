"""Base-station power allocation.

``allocate`` is the greedy sorted-demand algorithm: users are ranked by
their individual optimal power and served in that order until the budget
runs out.  ``oracle_allocate`` is an exhaustive reference for small K and
``kkt_diagnostics`` checks the slope-equality optimality condition.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import CapabilityError, DomainError
from .model import (
    ABS_TOL,
    CellConfig,
    PowerAllocation,
    cell_utility,
    check_gains,
    check_reports,
    individual_optimal_power,
    user_utility,
)

MAX_ORACLE_USERS = 4
SNAP_TO_ZERO = 1e-15
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class AllocationResult:
    allocation: PowerAllocation
    served_set: frozenset[int]
    saturated: bool

    @property
    def powers(self) -> NDArray[np.float64]:
        return self.allocation.powers

    @classmethod
    def from_powers(cls, powers: ArrayLike, budget: float) -> AllocationResult:
        alloc = PowerAllocation(np.asarray(powers, dtype=float), budget)
        served = frozenset(int(k) for k in np.flatnonzero(alloc.powers > 0))
        saturated = abs(alloc.total - budget) <= ABS_TOL
        return cls(alloc, served, saturated)


@dataclass(frozen=True)
class KktDiagnostics:
    """Slopes of the per-user utilities at an allocation.

    Attributes:
        slopes: d u_k / d p at each user's power; 0 for unserved users.
        lambda_estimate: Mean slope over served users strictly inside (0, P).
        max_slope_spread: Largest pairwise slope difference among served users.
    """

    slopes: NDArray[np.float64]
    lambda_estimate: float
    max_slope_spread: float


def utility_slope(p: ArrayLike, gain: ArrayLike, cfg: CellConfig) -> float | NDArray[np.float64]:
    """Analytic derivative of the per-user utility with respect to power."""
    p = np.asarray(p, dtype=float)
    gain = np.asarray(gain, dtype=float)
    if np.any(~np.isfinite(p)) or np.any(p <= 0):
        raise DomainError("utility_slope requires p > 0")
    if np.any(~np.isfinite(gain)) or np.any(gain <= 0):
        raise DomainError("utility_slope requires gain > 0")
    c = cfg.noise_variance * cfg.a / gain
    slope = cfg.rate * np.exp(-c / p) * (c - p) / p**3
    return float(slope) if slope.ndim == 0 else slope


def greedy_allocation(demands: list[float], budget: float, tie_tol: float = 0.0) -> list[float]:
    """Greedy allocation on individual optimal powers, in the caller's order.

    Users are visited by ascending demand (stable, so equal demands keep
    their index order).  Each user gets its full demand while the running
    total stays within ``budget``; the first user that would overflow gets
    the remainder.  A run of demands that are equal (within ``tie_tol``)
    is treated as a block: it is served in full if it fits, otherwise the
    remainder is split evenly across the block.  Everyone after is left at 0.
    """
    n = len(demands)
    order = sorted(range(n), key=demands.__getitem__)
    out = [0.0] * n
    allocated = 0.0
    i = 0
    while i < n and allocated < budget:
        j = i
        while i + 1 < n and demands[order[i + 1]] - demands[order[i]] <= tie_tol:
            i += 1
        if i == j:
            d = demands[order[i]]
            # `<=` rather than `<`: identical result at equality, keeps p* exact
            out[order[i]] = d if allocated + d <= budget else budget - allocated
            allocated += out[order[i]]
        else:
            block = [order[m] for m in range(j, i + 1)]
            need = math.fsum(demands[k] for k in block)
            if allocated + need <= budget:
                for k in block:
                    out[k] = demands[k]
            else:
                share = (budget - allocated) / len(block)
                for k in block:
                    out[k] = share
            for k in block:
                allocated += out[k]
        i += 1
    return out


def allocate(reports: ArrayLike, cfg: CellConfig, tie_tol: float = 0.0) -> AllocationResult:
    """Allocate the budget from reported gains; powers come back in user order."""
    reports = check_reports(reports, cfg)
    demands = individual_optimal_power(reports, cfg)
    powers = greedy_allocation(np.atleast_1d(demands).tolist(), cfg.power_budget, tie_tol)
    return AllocationResult.from_powers(powers, cfg.power_budget)


def allocate_demands(demands: ArrayLike, budget: float, tie_tol: float = 0.0) -> AllocationResult:
    """Same as :func:`allocate` but starting from individual optimal powers."""
    demands = np.asarray(demands, dtype=float)
    if np.any(demands < 0) or np.any(~np.isfinite(demands)):
        raise DomainError("demands must be finite and non-negative")
    return AllocationResult.from_powers(
        greedy_allocation(demands.tolist(), budget, tie_tol), budget
    )


def greedy_allocation_batch(
    demands: NDArray[np.float64], budget: float, tie_tol: float = 0.0
) -> NDArray[np.float64]:
    """Row-wise :func:`greedy_allocation` for a (trials, K) demand matrix.

    Rows without ties are handled vectorised; rows containing equal
    demands fall back to the scalar routine.  Both paths accumulate the
    running total in the same order, so results agree bit for bit.
    """
    demands = np.asarray(demands, dtype=float)
    trials, k = demands.shape
    if k == 0:
        return demands.copy()
    order = np.argsort(demands, axis=1, kind="stable")
    d = np.take_along_axis(demands, order, axis=1)
    # sequential cumsum matches the scalar `allocated += ...` accumulation
    cum = np.cumsum(d, axis=1)
    before = np.concatenate([np.zeros((trials, 1)), cum[:, :-1]], axis=1)
    full = cum <= budget
    first_over = (~full) & np.concatenate(
        [np.ones((trials, 1), dtype=bool), full[:, :-1]], axis=1
    )
    sorted_out = np.where(full, d, 0.0)
    sorted_out = np.where(first_over & (before < budget), budget - before, sorted_out)
    out = np.empty_like(sorted_out)
    np.put_along_axis(out, order, sorted_out, axis=1)

    if k > 1:
        tied = np.any(np.diff(d, axis=1) <= tie_tol, axis=1)
        for row in np.flatnonzero(tied):
            out[row] = greedy_allocation(demands[row].tolist(), budget, tie_tol)
    return out


def _golden_max(h, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Golden-section maximisation of ``h`` on [lo, hi]; returns (x, h(x)).

    Ties move the bracket right, which is the correct choice for utilities
    that are flat (underflowed to 0) near zero power.
    """
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    hc, hd = h(c), h(d)
    while b - a > tol:
        if hc > hd:
            b, d, hd = d, c, hc
            c = b - _INV_PHI * (b - a)
            hc = h(c)
        else:
            a, c, hc = c, d, hd
            d = a + _INV_PHI * (b - a)
            hd = h(d)
    return (c, hc) if hc > hd else (d, hd)


def _line_max(h, lo: float, hi: float, x0: float, tol: float, scan: int = 64) -> float:
    """Maximise a possibly multimodal 1-D function near-globally on [lo, hi].

    A uniform scan picks the best basin, golden section polishes it, and the
    current point and both end points are kept as candidates.
    """
    if hi - lo <= tol:
        return x0
    xs = np.linspace(lo, hi, scan + 1)
    hs = np.array([h(x) for x in xs])
    m = int(np.argmax(hs))
    best_x, best_h = x0, h(x0)
    if hs[m] > best_h:
        best_x, best_h = float(xs[m]), float(hs[m])
    gx, gh = _golden_max(h, float(xs[max(m - 1, 0)]), float(xs[min(m + 1, scan)]), tol)
    if gh > best_h:
        best_x, best_h = gx, gh
    for end in (lo, hi):
        if h(end) > best_h:
            best_x, best_h = end, h(end)
    return best_x


def _refine(x: NDArray[np.float64], gains, cfg: CellConfig, tol: float, max_rounds: int = 200):
    """Coordinate-wise polishing: single-user moves and pairwise transfers."""
    budget = cfg.power_budget
    k = x.size
    x = x.copy()
    with np.errstate(divide="ignore"):
        cs = (cfg.noise_variance * cfg.a / gains).tolist()
    rate = cfg.rate

    def u(i: int, p: float) -> float:
        # scalar fast path of user_utility; c = inf encodes a zero gain
        if p <= 0.0 or cs[i] == math.inf:
            return 0.0
        return rate * math.exp(-cs[i] / p) / p

    total = cell_utility(x, gains, cfg)
    for _ in range(max_rounds):
        previous = total
        for i in range(k):
            room = max(budget - (x.sum() - x[i]), 0.0)
            x[i] = _line_max(lambda p: u(i, p), 0.0, room, min(x[i], room), tol)
        for i, j in itertools.combinations(range(k), 2):
            s = x[i] + x[j]
            t = _line_max(lambda t: u(i, t) + u(j, s - t), 0.0, s, x[i], tol)
            x[i], x[j] = t, s - t
        total = cell_utility(x, gains, cfg)
        if total - previous <= 1e-15 * max(1.0, abs(total)):
            break
    return _slope_polish(x, cs, rate, tol, total, gains, cfg)


def _slope_polish(x, cs, rate, tol, total, gains, cfg: CellConfig, rounds: int = 20):
    """Equalise slopes of served pairs by bisection on the slope difference.

    Utility values stop resolving the optimum once the residual gain drops
    below float precision; the derivative keeps resolving it.  A transfer is
    kept only if the cell utility does not drop beyond rounding noise.
    """

    def slope(i: int, p: float) -> float:
        c = cs[i]
        return rate * math.exp(-c / p) * (c - p) / p**3

    served = [i for i in range(x.size) if x[i] > 0 and cs[i] != math.inf]
    for _ in range(rounds):
        moved = False
        for i, j in itertools.combinations(served, 2):
            s = x[i] + x[j]
            lo, hi = max(x[i] - 4 * tol, 0.0), min(x[i] + 4 * tol, s)
            if not (0.0 < lo and hi < s):
                continue
            def diff(t):
                return slope(i, t) - slope(j, s - t)
            if not (diff(lo) > 0.0 > diff(hi)):
                continue
            for _ in range(100):
                mid = 0.5 * (lo + hi)
                if mid in (lo, hi):
                    break
                if diff(mid) > 0.0:
                    lo = mid
                else:
                    hi = mid
            trial = x.copy()
            trial[i], trial[j] = lo, s - lo
            value = cell_utility(trial, gains, cfg)
            if value >= total - 4e-16 * abs(total) and trial[i] != x[i]:
                x, total, moved = trial, value, True
        if not moved:
            break
    return x


def _grid_candidates(tables: NDArray[np.float64], n: int, keep: int) -> list[tuple[float, tuple]]:
    """Best ``keep`` grid points of sum_k tables[k, i_k] with sum_k i_k <= n - 1.

    Ties are ordered by lexicographically smallest index tuple, so the
    result does not depend on evaluation order.
    """
    k = tables.shape[0]
    tail = min(k, 3)
    head = k - tail
    idx = np.indices((n,) * tail).reshape(tail, -1)
    base_sum = idx.sum(axis=0)
    tail_u = sum(tables[head + m][idx[m]] for m in range(tail))
    found: list[tuple[float, tuple]] = []
    for prefix in itertools.product(range(n), repeat=head):
        used = sum(prefix)
        if used > n - 1:
            continue
        vals = np.where(base_sum <= n - 1 - used, tail_u, -np.inf)
        if head:
            vals = vals + sum(tables[m][prefix[m]] for m in range(head))
        top = np.argpartition(-vals, min(keep, vals.size - 1))[:keep] if vals.size > keep else np.arange(vals.size)
        for flat in top:
            if np.isfinite(vals[flat]):
                found.append((float(vals[flat]), prefix + tuple(int(v) for v in idx[:, flat])))
    found.sort(key=lambda item: (-item[0], item[1]))
    return found[:keep]


def oracle_allocate(
    gains: ArrayLike,
    cfg: CellConfig,
    grid_points_per_axis: int = 101,
    tol: float | None = None,
    starts: int = 8,
) -> AllocationResult:
    """Brute-force reference solution of the sum-power problem for K <= 4.

    Evaluates the cell utility on the grid ``{0, P/(n-1), ..., P}^K``
    restricted to the budget, then polishes the ``starts`` best grid points
    by coordinate-wise golden-section search and returns the best result.

    Args:
        gains: True channel gains, length K.
        cfg: Cell configuration.
        grid_points_per_axis: Grid size n per user (>= 2).
        tol: Bracket tolerance of the line searches in Watts; defaults to
            ``1e-9 * P``.
        starts: Number of grid points refined.
    """
    gains = check_gains(gains, cfg.num_users)
    k = gains.size
    if k > MAX_ORACLE_USERS:
        raise CapabilityError(f"oracle supports K <= {MAX_ORACLE_USERS}, got K={k}")
    n = int(grid_points_per_axis)
    if n < 2:
        raise DomainError("grid_points_per_axis must be >= 2")
    budget = cfg.power_budget
    tol = 1e-9 * budget if tol is None else tol

    axis = budget * np.arange(n) / (n - 1)
    tables = np.stack([user_utility(axis, g, cfg) for g in gains])
    best_x, best_u = None, -np.inf
    for _, index in _grid_candidates(tables, n, starts):
        x = _refine(axis[list(index)], gains, cfg, tol)
        x[x < SNAP_TO_ZERO] = 0.0
        excess = x.sum() - budget
        if excess > 0:
            x[int(np.argmax(x))] -= excess
        value = cell_utility(x, gains, cfg)
        if value > best_u or (value == best_u and tuple(x) < tuple(best_x)):
            best_x, best_u = x, value
    return AllocationResult.from_powers(best_x, budget)


def kkt_diagnostics(result: AllocationResult, gains: ArrayLike, cfg: CellConfig) -> KktDiagnostics:
    """Per-user utility slopes and how far the served users are from a common slope."""
    gains = check_gains(gains, cfg.num_users)
    powers = result.powers
    slopes = np.zeros(powers.size)
    served = np.flatnonzero(powers > 0)
    live = served[gains[served] > 0]
    if live.size:
        slopes[live] = utility_slope(powers[live], gains[live], cfg)
    interior = served[powers[served] < cfg.power_budget]
    lam = float(slopes[interior].mean()) if interior.size else 0.0
    spread = float(np.ptp(slopes[served])) if served.size > 1 else 0.0
    return KktDiagnostics(slopes, lam, spread)
