"""Seeded Monte-Carlo sweeps: truthful reporting vs. the selfish equilibrium.

Random numbers come from SplitMix64, written out here so that any
implementation can regenerate the same draws:

* ``mix(z)``: ``z ^= z >> 30; z *= 0xBF58476D1CE4E5B9; z ^= z >> 27;
  z *= 0x94D049BB133111EB; z ^= z >> 31`` (all arithmetic mod 2**64).
* A stream with state ``s`` yields ``mix(s + i * GAMMA)`` for i = 1, 2, ...
  with ``GAMMA = 0x9E3779B97F4A7C15``; a 64-bit output ``x`` becomes the
  uniform ``(x >> 11) * 2**-53`` in [0, 1).
* The stream of one trial is keyed by
  ``mix(mix(mix(mix(seed) ^ k_index) ^ p_index) ^ trial)``, where the
  indices are the positions in ``user_counts`` and ``power_budgets``.

A gain is ``-mean_gain * ln(1 - u)``.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .allocator import greedy_allocation_batch
from .errors import DomainError, InfeasibleEquilibriumError
from .game import believed_cell_utility_at_ne, nash_report
from .model import CellConfig, user_utility

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def mix64(z: NDArray[np.uint64]) -> NDArray[np.uint64]:
    """SplitMix64 finaliser, elementwise on a uint64 array (wraps mod 2**64)."""
    z = np.array(z, dtype=np.uint64, copy=True, ndmin=1)
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def trial_keys(seed: int, k_index: int, p_index: int, trials: int) -> NDArray[np.uint64]:
    """Stream states for trials ``0..trials-1`` of one (K, P) cell."""
    h = mix64(np.uint64(seed & _MASK64))
    h = mix64(h ^ np.uint64(k_index))
    h = mix64(h ^ np.uint64(p_index))
    return mix64(h ^ np.arange(trials, dtype=np.uint64))


class UniformStream:
    """SplitMix64 stream of uniforms in [0, 1); ``draw`` continues where it left off."""

    def __init__(self, state: int):
        self.state = np.uint64(state & _MASK64)
        self.counter = 0

    def draw(self, n: int) -> NDArray[np.float64]:
        steps = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return uniforms_from_states(np.full(n, self.state, dtype=np.uint64) + steps * GAMMA)


def uniforms_from_states(states: NDArray[np.uint64]) -> NDArray[np.float64]:
    return (mix64(states) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def uniform_matrix(keys: NDArray[np.uint64], n: int) -> NDArray[np.float64]:
    """First ``n`` uniforms of each stream in ``keys``, one row per stream."""
    steps = np.arange(1, n + 1, dtype=np.uint64) * GAMMA
    states = keys[:, None] + steps[None, :]
    return uniforms_from_states(states.ravel()).reshape(keys.size, n)


def exponential_from_uniforms(u: NDArray[np.float64], mean_gain: float) -> NDArray[np.float64]:
    return -mean_gain * np.log(1.0 - u)


def sample_gains(k: int, mean_gain: float, stream: UniformStream) -> NDArray[np.float64]:
    """K i.i.d. exponential gains with the given mean, by inverse CDF."""
    if not mean_gain > 0:
        raise DomainError(f"mean_gain must be > 0, got {mean_gain!r}")
    if k == 0:
        return np.empty(0)
    return exponential_from_uniforms(stream.draw(k), mean_gain)


@dataclass(frozen=True)
class ExperimentConfig:
    cell: CellConfig
    user_counts: list[int] = field(default_factory=lambda: list(range(1, 21)))
    power_budgets: list[float] = field(default_factory=lambda: [0.1, 1.0])
    mean_gain: float = 10.0**-11.2
    trials: int = 10_000
    seed: int = 42
    snr_average: str = "all"

    def __post_init__(self) -> None:
        if self.trials < 1:
            raise DomainError("trials must be >= 1")
        if not self.mean_gain > 0:
            raise DomainError("mean_gain must be > 0")
        if not self.user_counts or not self.power_budgets:
            raise DomainError("user_counts and power_budgets must be non-empty")
        if any(int(k) != k or k < 1 for k in self.user_counts):
            raise DomainError("user counts must be positive integers")
        if not 0 <= self.seed <= _MASK64:
            raise DomainError("seed must be an unsigned 64-bit integer")
        if self.snr_average not in ("all", "served"):
            raise DomainError("snr_average must be 'all' or 'served'")


@dataclass(frozen=True)
class ExperimentRecord:
    """Averages for one (K, P) cell; selfish fields are None when skipped."""

    K: int
    P: float
    ee_truthful: float
    ee_selfish_actual: float | None
    ee_selfish_believed: float | None
    mean_snr_truthful_db: float
    mean_snr_selfish_db: float | None
    trials: int
    seed: int

    @property
    def skipped(self) -> bool:
        return self.ee_selfish_actual is None


RECORD_COLUMNS = (
    "K",
    "P",
    "ee_truthful",
    "ee_selfish_actual",
    "ee_selfish_believed",
    "mean_snr_truthful_db",
    "mean_snr_selfish_db",
    "trials",
    "seed",
)


def _to_db(x: float) -> float:
    return 10.0 * math.log10(x) if x > 0 else -math.inf


def run_cell(config: ExperimentConfig, k_index: int, p_index: int) -> ExperimentRecord:
    """Simulate one (K, P) pair of the sweep."""
    k = int(config.user_counts[k_index])
    budget = float(config.power_budgets[p_index])
    cfg = config.cell.replace(num_users=k, power_budget=budget)
    sigma2 = cfg.noise_variance

    keys = trial_keys(config.seed, k_index, p_index, config.trials)
    gains = exponential_from_uniforms(uniform_matrix(keys, k), config.mean_gain)

    # truthful reports: allocation from the true gains
    with np.errstate(divide="ignore"):
        demands = np.minimum(sigma2 * cfg.a / gains, budget)
    powers = greedy_allocation_batch(demands, budget)
    ee_truthful = np.sum(user_utility(powers, gains, cfg), axis=1)
    snrs = powers * gains / sigma2
    if config.snr_average == "all":
        snr_truthful = snrs.mean(axis=1)
    else:
        served = np.count_nonzero(powers > 0, axis=1)
        snr_truthful = snrs.sum(axis=1) / np.maximum(served, 1)

    common = dict(
        K=k,
        P=budget,
        ee_truthful=float(ee_truthful.mean()),
        mean_snr_truthful_db=_to_db(float(snr_truthful.mean())),
        trials=config.trials,
        seed=config.seed,
    )
    try:
        g_star = nash_report(cfg)
    except InfeasibleEquilibriumError:
        return ExperimentRecord(
            ee_selfish_actual=None, ee_selfish_believed=None, mean_snr_selfish_db=None, **common
        )

    # equilibrium: even split P/K, scored on the true gains
    with np.errstate(divide="ignore"):
        terms = np.exp(np.where(gains > 0, -g_star / gains, -np.inf))
    ee_selfish = cfg.rate * k / budget * terms.sum(axis=1)
    snr_selfish = (budget / k) * gains / sigma2
    return ExperimentRecord(
        ee_selfish_actual=float(ee_selfish.mean()),
        ee_selfish_believed=believed_cell_utility_at_ne(cfg),
        mean_snr_selfish_db=_to_db(float(snr_selfish.mean(axis=1).mean())),
        **common,
    )


def resolve_workers(workers: int | None = None) -> int:
    """Worker count: explicit value, else ``EEPA_THREADS``, 0 meaning all CPUs."""
    if workers is None:
        workers = int(os.environ.get("EEPA_THREADS", "0") or 0)
    if workers < 0:
        raise DomainError("worker count must be >= 0")
    return workers or os.cpu_count() or 1


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> list[ExperimentRecord]:
    """Run the full (K, P) sweep; records are ordered by K then P.

    Each cell draws from its own keyed streams, so the records do not depend
    on sweep order or on the number of workers.
    """
    cells = [
        (ki, pi) for ki in range(len(config.user_counts)) for pi in range(len(config.power_budgets))
    ]
    n = resolve_workers(workers)
    if n == 1:
        return [run_cell(config, ki, pi) for ki, pi in cells]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(lambda c: run_cell(config, *c), cells))


@dataclass(frozen=True)
class OrderingChecks:
    """Qualitative orderings of a sweep.

    Attributes:
        ee_violations: (K, P) rows where truthful efficiency < equilibrium efficiency.
        snr_violations: (K, P) rows where equilibrium SNR < truthful SNR.
        inversion_onset: Smallest swept K from which, for every larger swept
            K, the equilibrium efficiency at the largest budget is <= that at
            the smallest budget; None if it fails at the largest K.
    """

    ee_violations: list[tuple[int, float]]
    snr_violations: list[tuple[int, float]]
    inversion_onset: int | None

    @property
    def truthful_ee_dominates(self) -> bool:
        return not self.ee_violations

    @property
    def selfish_snr_dominates(self) -> bool:
        return not self.snr_violations


def ordering_checks(records: list[ExperimentRecord]) -> OrderingChecks:
    rows = [r for r in records if not r.skipped]
    ee_bad = [(r.K, r.P) for r in rows if r.ee_truthful < r.ee_selfish_actual]
    snr_bad = [(r.K, r.P) for r in rows if r.mean_snr_selfish_db < r.mean_snr_truthful_db]
    onset = None
    budgets = sorted({r.P for r in rows})
    if len(budgets) >= 2:
        ee = {(r.K, r.P): r.ee_selfish_actual for r in rows}
        low, high = budgets[0], budgets[-1]
        ks = sorted({r.K for r in rows if (r.K, low) in ee and (r.K, high) in ee})
        for k in reversed(ks):
            if ee[(k, high)] <= ee[(k, low)]:
                onset = k
            else:
                break
    return OrderingChecks(ee_bad, snr_bad, onset)
