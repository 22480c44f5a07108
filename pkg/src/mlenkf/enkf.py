"""Single-level ensemble Kalman filter with perturbed observations."""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidInputError
from .integrate import CostCounter, LevelGrid, propagate_level
from .kalman import GaussianMoments, kalman_gain
from .linalg import psd_sqrt_factor
from .models import ObservationModel, SdeModel
from .stochastic import Role, Stream, brownian_path
from .trace import CostRecord, FilterTrace

Observable = Callable[[np.ndarray], np.ndarray]


@dataclass
class Ensemble:
    """``members`` has shape (M, d), in filter coordinates."""

    members: np.ndarray
    level: int = 0

    def __post_init__(self):
        self.members = np.atleast_2d(np.asarray(self.members, dtype=float))

    @property
    def size(self) -> int:
        return self.members.shape[0]


def _rows(e) -> np.ndarray:
    x = e.members if isinstance(e, Ensemble) else np.asarray(e, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise InvalidInputError("empty ensemble")
    return x


def sample_mean(e) -> np.ndarray:
    """``(1/M) sum_i v_i``."""
    return _rows(e).mean(axis=0)


def sample_cov(e) -> np.ndarray:
    """``E_M[v v^T] - E_M[v] E_M[v]^T`` with 1/M normalisation.

    Evaluated in centred form, which is algebraically identical and always PSD.
    """
    x = _rows(e)
    dev = x - x.mean(axis=0)
    cov = dev.T @ dev / x.shape[0]
    return 0.5 * (cov + cov.T)


def enkf_estimate(e, phi: Observable) -> float:
    """Empirical-measure average ``(1/M) sum_i phi(v_i)``."""
    return float(np.mean(phi(_rows(e))))


def split_ranges(n: int, workers: int) -> list[tuple[int, int]]:
    workers = max(1, min(int(workers), n)) if n else 1
    edges = np.linspace(0, n, workers + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def run_chunked(fn, n: int, workers: int):
    """Call ``fn(lo, hi, counter)`` over particle ranges and stitch the results.

    Streams are keyed by particle index, so the split does not change any
    draw. Each chunk tallies its own cost; tallies are summed afterwards.
    """
    ranges = split_ranges(n, workers)
    counters = [CostCounter() for _ in ranges]
    if len(ranges) == 1:
        results = [fn(*ranges[0], counters[0])]
    else:
        with ThreadPoolExecutor(len(ranges)) as pool:
            results = list(pool.map(lambda rc: fn(*rc[0], rc[1]), zip(ranges, counters)))
    return results, sum(c.substeps for c in counters)


def predict_members(model: SdeModel, grid: LevelGrid, level: int, x: np.ndarray, epoch: int,
                    seed: int, cost: CostCounter | None = None, workers: int = 1,
                    exact: bool = False) -> np.ndarray:
    """Push filter-coordinate members one epoch through the level-``level`` solver.

    With ``exact`` the model's exact transition is used instead (one draw of
    d normals per member, counted as one substep).
    """
    if exact and model.exact_transition is None:
        raise InvalidInputError(f"model {model.name!r} has no exact transition")

    def work(lo, hi, counter):
        src = Stream(seed, epoch, level, Role.DRIVE, np.arange(lo, hi))
        if exact:
            counter.add(hi - lo)
            return model.exact_transition(x[lo:hi], epoch, src.normals(model.dim))
        path = brownian_path(src, grid.steps(level), model.noise_dim)
        u = propagate_level(model, grid, level, model.to_state(x[lo:hi]), epoch, path, counter)
        return model.to_filter(u)

    parts, substeps = run_chunked(work, x.shape[0], workers)
    if cost is not None:
        cost.add(substeps)
    return np.concatenate(parts, axis=0)


def perturbed_observations(obs: ObservationModel, y, n: int, epoch: int, level: int,
                           seed: int) -> np.ndarray:
    """``y + eta_i`` for particles 0..n-1, ``eta_i ~ N(0, gamma)``."""
    src = Stream(seed, epoch, level, Role.PERTURB, np.arange(n))
    return np.atleast_1d(np.asarray(y, dtype=float)) + src.normals(obs.m) @ obs.gamma_chol.T


def correct(x: np.ndarray, K: np.ndarray, H: np.ndarray, ytilde: np.ndarray) -> np.ndarray:
    """Rows ``(I - K H) x_i + K ytilde_i``."""
    return x @ (np.eye(x.shape[1]) - K @ H).T + ytilde @ K.T


def initial_members(init: GaussianMoments, M: int, level: int, seed: int) -> np.ndarray:
    """``M`` draws from ``N(init.mean, init.cov)`` keyed by the init role."""
    src = Stream(seed, 0, level, Role.INIT, np.arange(M))
    factor = psd_sqrt_factor(init.cov)
    return init.mean + src.normals(init.mean.size) @ factor.T


def enkf_step(e: Ensemble, model: SdeModel, grid: LevelGrid, obs: ObservationModel, y,
              epoch: int, seed: int, cost: CostCounter | None = None, workers: int = 1,
              exact: bool = False) -> Ensemble:
    """Predict every member to the next observation time, then assimilate ``y``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != obs.m:
        raise InvalidInputError(f"observation has length {y.size}, expected {obs.m}")
    xhat = predict_members(model, grid, e.level, e.members, epoch, seed, cost, workers, exact)
    C = sample_cov(xhat)
    K = kalman_gain(C, C, obs.H, obs.gamma)
    ytilde = perturbed_observations(obs, y, xhat.shape[0], epoch, e.level, seed)
    return Ensemble(correct(xhat, K, obs.H, ytilde), e.level)


def enkf_run(M: int, level: int, model: SdeModel, grid: LevelGrid, obs: ObservationModel, ys,
             init: GaussianMoments, seed: int, observables: Mapping[str, Observable] | None = None,
             workers: int = 1, exact: bool = False) -> FilterTrace:
    """Filter the observation sequence ``ys`` (times 1..N) with ``M`` members."""
    if M < 1:
        raise InvalidInputError("ensemble size must be >= 1")
    observables = dict(observables or {})
    start = time.perf_counter()
    cost = CostCounter()
    e = Ensemble(initial_members(init, M, level, seed), level)
    means, covs = [sample_mean(e)], [sample_cov(e)]
    est = {k: [enkf_estimate(e, f)] for k, f in observables.items()}
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    for k, y in enumerate(ys):
        e = enkf_step(e, model, grid, obs, y, k, seed, cost, workers, exact)
        means.append(sample_mean(e))
        covs.append(sample_cov(e))
        for name, f in observables.items():
            est[name].append(enkf_estimate(e, f))
    record = CostRecord(cost.substeps, time.perf_counter() - start, (M,))
    return FilterTrace.collect(means, covs, "enkf", estimates=est, cost=record)
