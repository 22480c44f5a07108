"""Multilevel ensemble Kalman filter.

A multilevel ensemble holds, for each level ``l = 0..L``, ``M_l`` coupled
pairs ``(fine, coarse)`` integrated with ``N_l`` and ``N_{l-1}`` steps on
the same Brownian path. Moments are telescoping sums of per-level sample
moments. The resulting covariance can be indefinite, so the gain uses its
positive part in the innovation covariance and the raw estimate in front.
Each pair is corrected with one perturbed observation shared by both
members, which keeps fine and coarse close through the update.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .enkf import (Observable, correct, initial_members, perturbed_observations,
                   run_chunked)
from .errors import InvalidInputError
from .integrate import CostCounter, CoupledPair, LevelGrid, propagate_level, propagate_pair_path
from .kalman import GaussianMoments, kalman_gain
from .linalg import truncate_psd
from .models import ObservationModel, SdeModel
from .stochastic import Role, Stream, brownian_path
from .trace import CostRecord, FilterTrace


@dataclass(frozen=True)
class Rates:
    """Weak rate ``alpha``, strong/variance rate ``beta``, cost rate ``gamma``."""

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) <= 0:
            raise InvalidInputError("rates must be positive")
        if self.alpha < min(self.beta, self.gamma) / 2:
            raise InvalidInputError("need alpha >= min(beta, gamma) / 2")


@dataclass(frozen=True)
class Allocation:
    L: int
    m_per_level: tuple
    rates: Rates
    c_m: float
    epsilon: float

    def cost_per_epoch(self, grid: LevelGrid) -> int:
        """``sum_l M_l (N_l + N_{l-1})`` with ``N_{-1} = 0``."""
        total = 0
        for level, m in enumerate(self.m_per_level):
            total += m * (grid.steps(level) + (grid.steps(level - 1) if level else 0))
        return total


# ceil() slack so that exact powers (e.g. eps = 2^-3) do not round up a level
_CEIL_SLACK = 1e-9


def _ceil(x: float) -> int:
    return math.ceil(x - _CEIL_SLACK * max(1.0, abs(x)))


def level_for_epsilon(epsilon: float, alpha: float, nhat: int) -> int:
    """Smallest ``L`` with ``nhat^{-alpha L} <= epsilon``."""
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    if nhat < 2:
        raise InvalidInputError("choosing L from epsilon needs nhat >= 2")
    return max(0, _ceil(math.log(1.0 / epsilon) / (alpha * math.log(nhat))))


def allocate(epsilon: float, rates: Rates, grid: LevelGrid, c_m: float = 1.0,
             L: int | None = None) -> Allocation:
    """Levels and per-level sample sizes for target accuracy ``epsilon``.

    ``M_l = ceil(c_m N_l^{-(beta + 2 gamma)/3} F)`` where ``F`` depends on
    which of the variance and cost rates dominates. ``L`` may be forced.
    """
    if not c_m > 0:
        raise InvalidInputError("c_m must be positive")
    if L is None:
        L = level_for_epsilon(epsilon, rates.alpha, grid.nhat)
    if L < 0:
        raise InvalidInputError("L must be >= 0")
    a, b, g = rates.alpha, rates.beta, rates.gamma
    log_nl = math.log2(grid.steps(L))
    if b > g:
        log_f = 2 * a * log_nl
    elif b == g:
        # L = 0 would zero every M_l; one level is the minimum hierarchy
        log_f = 2 * math.log2(max(L, 1)) + 2 * a * log_nl
    else:
        log_f = (2 * a + 2 * (g - b) / 3) * log_nl
    q = (b + 2 * g) / 3
    sizes = []
    for level in range(L + 1):
        value = c_m * 2.0 ** (log_f - q * math.log2(grid.steps(level)))
        sizes.append(max(1, _ceil(value)))
    return Allocation(L, tuple(sizes), rates, float(c_m), float(epsilon))


def allocate_for_budget(budget: float, rates: Rates, grid: LevelGrid, c_m: float = 1.0,
                        max_level: int = 40) -> Allocation:
    """Finest allocation whose per-epoch substep cost stays within ``budget``.

    Sample sizes depend on epsilon only through L, so inverting the cost model
    amounts to searching over L. Falls back to L = 0 if even that is over budget.
    """
    if grid.nhat < 2:
        raise InvalidInputError("budget allocation needs nhat >= 2")
    best = allocate(1.0, rates, grid, c_m, L=0)
    for L in range(1, max_level + 1):
        cand = allocate(1.0, rates, grid, c_m, L=L)
        if cand.cost_per_epoch(grid) > budget:
            break
        best = cand
    eps = float(grid.nhat) ** (-rates.alpha * best.L)
    return Allocation(best.L, best.m_per_level, rates, best.c_m, eps)


class MultilevelEnsemble:
    """Per-level coupled pairs; ``levels[l].fine`` / ``.coarse`` are (M_l, d)."""

    def __init__(self, levels: Sequence[CoupledPair]):
        self.levels = list(levels)
        for level, pair in enumerate(self.levels):
            if pair.level != level or pair.fine.shape != pair.coarse.shape:
                raise InvalidInputError("malformed multilevel ensemble")

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    @property
    def sizes(self) -> tuple:
        return tuple(p.fine.shape[0] for p in self.levels)

    @classmethod
    def from_arrays(cls, fines, coarses=None) -> "MultilevelEnsemble":
        """Build from per-level arrays; ``coarses[0]`` is ignored (zero convention)."""
        levels = []
        for level, fine in enumerate(fines):
            fine = np.asarray(fine, dtype=float)
            if fine.ndim == 1:
                fine = fine[:, None]
            if level == 0 or coarses is None:
                coarse = np.zeros_like(fine) if level == 0 else fine.copy()
            else:
                coarse = np.asarray(coarses[level], dtype=float).reshape(fine.shape)
            levels.append(CoupledPair(fine, coarse, level))
        return cls(levels)


def initial_multilevel(alloc: Allocation, init: GaussianMoments, seed: int) -> MultilevelEnsemble:
    """Both members of every pair start from the same draw of the initial law."""
    fines = [initial_members(init, m, level, seed) for level, m in enumerate(alloc.m_per_level)]
    return MultilevelEnsemble.from_arrays(fines)


def _per_level_cov(x: np.ndarray) -> np.ndarray:
    dev = x - x.mean(axis=0)
    cov = dev.T @ dev / x.shape[0]
    return 0.5 * (cov + cov.T)


def ml_mean(e: MultilevelEnsemble) -> np.ndarray:
    """``sum_l E_{M_l}[fine_l - coarse_l]`` with coarse_0 = 0."""
    total = None
    for pair in e.levels:
        term = (pair.fine - pair.coarse).mean(axis=0) if pair.level else pair.fine.mean(axis=0)
        total = term if total is None else total + term
    return total


def ml_cov(e: MultilevelEnsemble) -> np.ndarray:
    """``sum_l cov_{M_l}[fine_l] - cov_{M_l}[coarse_l]``; symmetric, maybe indefinite."""
    total = None
    for pair in e.levels:
        term = _per_level_cov(pair.fine)
        if pair.level:
            term = term - _per_level_cov(pair.coarse)
        total = term if total is None else total + term
    return total


def ml_estimate(e: MultilevelEnsemble, phi: Observable) -> float:
    """Multilevel empirical measure applied to ``phi``.

    ``sum_l (1/M_l) sum_i [phi(fine) - phi(coarse)]`` without the level-0
    coarse term. ``phi`` maps (n, d) rows to n values.
    """
    total = 0.0
    for pair in e.levels:
        if pair.level == 0:
            total += float(np.mean(phi(pair.fine)))
        else:
            total += float(np.mean(phi(pair.fine) - phi(pair.coarse)))
    return total


def ml_gain_flagged(c_ml, obs: ObservationModel) -> tuple[np.ndarray, bool]:
    """Gain plus whether PSD truncation changed the denominator covariance."""
    c_ml = np.atleast_2d(np.asarray(c_ml, dtype=float))
    c_pos, truncated = truncate_psd(c_ml)
    return kalman_gain(c_ml, c_pos, obs.H, obs.gamma), truncated


def ml_gain(c_ml, obs: ObservationModel) -> np.ndarray:
    """``C H^T (H C+ H^T + gamma)^{-1}`` with ``C+`` the PSD truncation of ``C``."""
    return ml_gain_flagged(c_ml, obs)[0]


def ml_update(e: MultilevelEnsemble, gain, obs: ObservationModel, y, epoch: int, seed: int,
              perturbations: Sequence | None = None) -> MultilevelEnsemble:
    """Correct every pair with one perturbed observation per pair.

    ``perturbations`` optionally supplies the per-level ``eta`` arrays
    (M_l, m) instead of drawing them.
    """
    K = np.atleast_2d(np.asarray(gain, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    out = []
    for pair in e.levels:
        n = pair.fine.shape[0]
        if perturbations is None:
            ytilde = perturbed_observations(obs, y, n, epoch, pair.level, seed)
        else:
            ytilde = y + np.asarray(perturbations[pair.level], dtype=float).reshape(n, obs.m)
        fine = correct(pair.fine, K, obs.H, ytilde)
        coarse = correct(pair.coarse, K, obs.H, ytilde) if pair.level else pair.coarse
        out.append(CoupledPair(fine, coarse, pair.level))
    return MultilevelEnsemble(out)


def predict_multilevel(e: MultilevelEnsemble, model: SdeModel, grid: LevelGrid, epoch: int,
                       seed: int, cost: CostCounter | None = None,
                       workers: int = 1) -> MultilevelEnsemble:
    """Advance every pair one epoch; level 0 fines alone, higher levels coupled."""
    out = []
    for pair in e.levels:
        level = pair.level

        def work(lo, hi, counter, pair=pair, level=level):
            src = Stream(seed, epoch, level, Role.DRIVE, np.arange(lo, hi))
            path = brownian_path(src, grid.steps(level), model.noise_dim)
            if level == 0:
                u = propagate_level(model, grid, 0, model.to_state(pair.fine[lo:hi]), epoch,
                                    path, counter)
                return model.to_filter(u), pair.coarse[lo:hi]
            sub = CoupledPair(model.to_state(pair.fine[lo:hi]),
                              model.to_state(pair.coarse[lo:hi]), level)
            moved = propagate_pair_path(model, grid, sub, epoch, path, counter)
            return model.to_filter(moved.fine), model.to_filter(moved.coarse)

        parts, substeps = run_chunked(work, pair.fine.shape[0], workers)
        if cost is not None:
            cost.add(substeps)
        fine = np.concatenate([p[0] for p in parts], axis=0)
        coarse = np.concatenate([p[1] for p in parts], axis=0)
        out.append(CoupledPair(fine, coarse, level))
    return MultilevelEnsemble(out)


def mlenkf_step(e: MultilevelEnsemble, model: SdeModel, grid: LevelGrid, obs: ObservationModel,
                y, epoch: int, seed: int, cost: CostCounter | None = None,
                workers: int = 1) -> tuple[MultilevelEnsemble, bool]:
    """One predict/update cycle. Returns the new ensemble and the truncation flag."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != obs.m:
        raise InvalidInputError(f"observation has length {y.size}, expected {obs.m}")
    pred = predict_multilevel(e, model, grid, epoch, seed, cost, workers)
    K, truncated = ml_gain_flagged(ml_cov(pred), obs)
    return ml_update(pred, K, obs, y, epoch, seed), truncated


def mlenkf_run(alloc: Allocation, model: SdeModel, grid: LevelGrid, obs: ObservationModel, ys,
               init: GaussianMoments, seed: int,
               observables: Mapping[str, Observable] | None = None,
               workers: int = 1) -> FilterTrace:
    """Filter ``ys`` (times 1..N) with one persistent multilevel ensemble.

    The trace records the raw multilevel mean and covariance after each
    update, and whether the gain needed a truncated covariance.
    """
    observables = dict(observables or {})
    start = time.perf_counter()
    cost = CostCounter()
    e = initial_multilevel(alloc, init, seed)
    means, covs, flags = [ml_mean(e)], [ml_cov(e)], [False]
    est = {k: [ml_estimate(e, f)] for k, f in observables.items()}
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    for k, y in enumerate(ys):
        e, truncated = mlenkf_step(e, model, grid, obs, y, k, seed, cost, workers)
        means.append(ml_mean(e))
        covs.append(ml_cov(e))
        flags.append(truncated)
        for name, f in observables.items():
            est[name].append(ml_estimate(e, f))
    record = CostRecord(cost.substeps, time.perf_counter() - start, alloc.m_per_level)
    return FilterTrace.collect(means, covs, "mlenkf", flags, est, record)
