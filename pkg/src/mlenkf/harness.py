"""Experiment drivers: synthetic data, reference filter, errors, rate fits,
level-decay estimation and cost-vs-error sweeps."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import ndtr

from .enkf import enkf_run
from .errors import InvalidInputError
from .integrate import CoupledPair, LevelGrid, propagate_level, propagate_pair_path
from .kalman import GaussianMoments, kf_run
from .linalg import spectral_norm
from .models import ObservationModel, SdeModel, observe
from .multilevel import Rates, allocate_for_budget, mlenkf_run
from .stochastic import Role, Stream, brownian_path
from .trace import CostRecord, FilterTrace

CSV_HEADER = ("method", "budget", "substeps", "wall_seconds", "rmse_mean", "rmse_cov", "seed")


def fmt_real(x: float) -> str:
    """17 significant digits, positional notation."""
    return np.format_float_positional(float(x), precision=17, unique=False,
                                      fractional=False, trim="-")


def synthesize(model: SdeModel, obs: ObservationModel, n_epochs: int, seed: int,
               signal_noise: bool = True, obs_noise: bool = True):
    """One exact signal realisation and its observations.

    Returns ``truth`` with shape (N+1, d) (row 0 is the initial state, in
    filter coordinates) and ``ys`` with shape (N, m) for times 1..N.
    """
    if model.exact_transition is None:
        raise InvalidInputError(f"model {model.name!r} has no exact transition")
    x = np.atleast_2d(model.initial.astype(float))
    truth, ys = [x[0]], []
    for n in range(n_epochs):
        z = Stream(seed, n, 0, Role.TRUTH, 0).normals(model.dim)
        x = model.exact_transition(x, n, z if signal_noise else np.zeros_like(z))
        eta = Stream(seed, n + 1, 0, Role.TRUTH, 1).normals(obs.m)
        ys.append(observe(x, obs, noise=eta if obs_noise else np.zeros_like(eta))[0])
        truth.append(x[0])
    return np.array(truth), np.array(ys).reshape(n_epochs, obs.m)


def initial_law(model: SdeModel) -> GaussianMoments:
    """Point mass at the model's initial state (u(0) = 1 for both built-ins)."""
    return GaussianMoments(model.initial, np.zeros((model.dim, model.dim)))


def gold_standard(model: SdeModel, obs: ObservationModel, ys) -> FilterTrace:
    """Exact Kalman filter in filter coordinates."""
    if model.linear_signal is None:
        raise InvalidInputError(f"model {model.name!r} is not linear-Gaussian in filter coordinates")
    return kf_run(model.linear_signal, obs, ys, initial_law(model))


def rmse(est: FilterTrace, ref: FilterTrace, field: str = "mean") -> float:
    """Root mean square over epochs 1..N of the distance between the traces.

    Means use the Euclidean norm, covariances the induced 2-norm.
    """
    if est.epochs != ref.epochs:
        raise InvalidInputError("traces cover different numbers of epochs")
    if est.epochs == 0:
        raise InvalidInputError("need at least one epoch")
    if field == "mean":
        err = np.linalg.norm(ref.means[1:] - est.means[1:], axis=1)
    elif field == "cov":
        diff = ref.covs[1:] - est.covs[1:]
        if diff.shape[-1] == 1:
            err = np.abs(diff[:, 0, 0])
        else:
            err = np.array([spectral_norm(0.5 * (c + c.T)) for c in diff])
    elif field in ref.estimates and field in est.estimates:
        err = np.abs(np.asarray(ref.estimates[field][1:]) - np.asarray(est.estimates[field][1:]))
    else:
        raise InvalidInputError(f"unknown field {field!r}")
    return float(np.sqrt(np.sum(err**2) / est.epochs))


@dataclass(frozen=True)
class RatePoint:
    x: float
    y: float


def fit_rate(points: Iterable) -> float:
    """Least-squares slope of log y against log x."""
    pts = [(p.x, p.y) if isinstance(p, RatePoint) else tuple(p) for p in points]
    if len(pts) < 2:
        raise InvalidInputError("need at least two points")
    xs, ys = np.array(pts, dtype=float).T
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise InvalidInputError("rate fitting needs positive coordinates")
    lx, ly = np.log(xs), np.log(ys)
    if np.ptp(lx) == 0:
        raise InvalidInputError("x values must not all coincide")
    lx0 = lx - lx.mean()
    return float(np.dot(lx0, ly - ly.mean()) / np.dot(lx0, lx0))


def exceedance_ref(m: float, c: float, threshold: float) -> float:
    """``P(X > threshold)`` for ``X ~ N(m, c)``."""
    if not c > 0:
        raise InvalidInputError("variance must be positive")
    return float(ndtr((m - threshold) / math.sqrt(c)))


def indicator(threshold: float = 0.1) -> Callable[[np.ndarray], np.ndarray]:
    def phi(x):
        return (x[..., 0] > threshold).astype(float)
    return phi


def identity(x):
    return x[..., 0]


@dataclass
class DecayEstimate:
    levels: np.ndarray
    steps: np.ndarray
    weak: np.ndarray  # |E[phi(fine) - phi(coarse)]|
    strong: dict  # p -> ||phi(fine) - phi(coarse)||_p
    alpha: float
    beta: dict  # p -> 2 * (-slope of strong)


def level_decay(model: SdeModel, grid: LevelGrid, phi, max_level: int, M: int,
                p: int | Sequence[int] = 2, seed: int = 0, epoch: int = 0,
                x0=None, chunk: int = 20000) -> DecayEstimate:
    """Estimate weak and strong level-difference rates over one epoch.

    Pairs at each level start from the same point ``x0`` (filter coordinates,
    default the model's initial state) and are integrated on coupled paths;
    ``phi`` is evaluated on the integrated SDE state. Slopes are fitted
    against ``N_l`` over levels 1..max_level.
    """
    if M < 2:
        raise InvalidInputError("need at least two samples")
    if max_level < 2:
        raise InvalidInputError("need max_level >= 2 to fit a slope")
    ps = [p] if np.isscalar(p) else list(p)
    u0 = model.to_state(np.atleast_2d(model.initial if x0 is None else x0).astype(float))
    levels = np.arange(1, max_level + 1)
    weak, strong = [], {q: [] for q in ps}
    for level in levels:
        total, moments = 0.0, {q: 0.0 for q in ps}
        for lo in range(0, M, chunk):
            hi = min(M, lo + chunk)
            src = Stream(seed, epoch, int(level), Role.DRIVE, np.arange(lo, hi))
            path = brownian_path(src, grid.steps(level), model.noise_dim)
            start = np.repeat(u0, hi - lo, axis=0)
            pair = propagate_pair_path(model, grid, CoupledPair(start, start.copy(), int(level)),
                                       epoch, path)
            diff = phi(pair.fine) - phi(pair.coarse)
            total += float(diff.sum())
            for q in ps:
                moments[q] += float(np.sum(np.abs(diff) ** q))
        weak.append(abs(total / M))
        for q in ps:
            strong[q].append((moments[q] / M) ** (1.0 / q))
    steps = np.array([grid.steps(int(l)) for l in levels], dtype=float)
    weak = np.array(weak)
    ok = weak > 0
    alpha = -fit_rate(zip(steps[ok], weak[ok])) if ok.sum() >= 2 else float("nan")
    beta = {}
    for q in ps:
        s = np.array(strong[q])
        good = s > 0
        beta[q] = -2.0 * fit_rate(zip(steps[good], s[good])) if good.sum() >= 2 else float("nan")
    return DecayEstimate(levels, steps, weak, {q: np.array(v) for q, v in strong.items()},
                         alpha, beta)


@dataclass
class BenchmarkConfig:
    """A cost-vs-error sweep. Budgets are integrator substeps per epoch."""

    model: SdeModel
    obs: ObservationModel
    n_epochs: int
    grid: LevelGrid
    rates: Rates
    budgets: Sequence[float]
    seeds: Sequence[int]
    data_seed: int = 0
    c_m: float = 1.0
    c_ens: float = 1.0
    c_steps: float = 1.0
    methods: Sequence[str] = ("enkf", "mlenkf")
    workers: int = 1


@dataclass
class BenchmarkRow:
    method: str
    budget: float
    substeps: int
    wall_seconds: float
    rmse_mean: float
    rmse_cov: float
    seed: int


def enkf_sizes(budget: float, c_ens: float = 1.0, c_steps: float = 1.0) -> tuple[int, int]:
    """Ensemble size ~ J^{2/3} and steps per epoch ~ J^{1/3} for budget J."""
    if not budget > 0:
        raise InvalidInputError("budget must be positive")
    return (max(1, math.ceil(c_ens * budget ** (2 / 3))),
            max(1, math.ceil(c_steps * budget ** (1 / 3))))


def run_cell(cfg: BenchmarkConfig, method: str, budget: float, seed: int, ys,
             ref: FilterTrace) -> BenchmarkRow:
    init = initial_law(cfg.model)
    if method == "mlenkf":
        alloc = allocate_for_budget(budget, cfg.rates, cfg.grid, cfg.c_m)
        trace = mlenkf_run(alloc, cfg.model, cfg.grid, cfg.obs, ys, init, seed,
                           workers=cfg.workers)
    elif method == "enkf":
        M, n_steps = enkf_sizes(budget, cfg.c_ens, cfg.c_steps)
        trace = enkf_run(M, 0, cfg.model, LevelGrid(n_steps, cfg.grid.nhat), cfg.obs, ys, init,
                         seed, workers=cfg.workers)
    else:
        raise InvalidInputError(f"unknown method {method!r}")
    return BenchmarkRow(method, float(budget), trace.cost.substeps, trace.cost.wall_seconds,
                        rmse(trace, ref, "mean"), rmse(trace, ref, "cov"), int(seed))


def benchmark(cfg: BenchmarkConfig, progress: Callable[[BenchmarkRow], None] | None = None):
    """Run every (method, budget, seed) cell against one observation record."""
    _, ys = synthesize(cfg.model, cfg.obs, cfg.n_epochs, cfg.data_seed)
    ref = gold_standard(cfg.model, cfg.obs, ys)
    rows = []
    for method in cfg.methods:
        for budget in cfg.budgets:
            for seed in cfg.seeds:
                row = run_cell(cfg, method, budget, seed, ys, ref)
                if progress is not None:
                    progress(row)
                rows.append(row)
    rows.sort(key=lambda r: (r.method, r.budget, r.seed))
    return rows


def slopes_by_seed(rows: Sequence[BenchmarkRow], method: str, field: str) -> dict:
    """Per-seed fitted slope of ``rmse_<field>`` against substeps."""
    out = {}
    for seed in sorted({r.seed for r in rows if r.method == method}):
        pts = [(r.substeps, getattr(r, f"rmse_{field}")) for r in rows
               if r.method == method and r.seed == seed]
        out[seed] = fit_rate(pts)
    return out


def median_slope(rows: Sequence[BenchmarkRow], method: str, field: str) -> float:
    return float(np.median(list(slopes_by_seed(rows, method, field).values())))


def write_rows_csv(rows: Sequence[BenchmarkRow], fh=None) -> str:
    buf = io.StringIO() if fh is None else fh
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([r.method, fmt_real(r.budget), r.substeps, fmt_real(r.wall_seconds),
                    fmt_real(r.rmse_mean), fmt_real(r.rmse_cov), r.seed])
    return buf.getvalue() if fh is None else ""


def write_trace_csv(trace: FilterTrace, fh=None) -> str:
    """One row per epoch: mean components, upper-triangle covariance, flag."""
    buf = io.StringIO() if fh is None else fh
    d = trace.means.shape[1]
    mean_cols = ["mean"] if d == 1 else [f"mean_{i}" for i in range(d)]
    cov_cols = ["cov"] if d == 1 else [f"cov_{i}_{j}" for i in range(d) for j in range(i, d)]
    names = sorted(trace.estimates)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", *mean_cols, *cov_cols, "truncated", *names])
    iu = np.triu_indices(d)
    for n in range(trace.means.shape[0]):
        w.writerow([n, *(fmt_real(v) for v in trace.means[n]),
                    *(fmt_real(v) for v in trace.covs[n][iu]), int(trace.truncated[n]),
                    *(fmt_real(trace.estimates[k][n]) for k in names)])
    return buf.getvalue() if fh is None else ""
