"""One-epoch time stepping and fine/coarse pair propagation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InstabilityError, InvalidInputError
from .models import SdeModel
from .stochastic import BrownianPath, Stream, brownian_path, coarsen


@dataclass(frozen=True)
class LevelGrid:
    """Uniform step hierarchy: level ``l`` takes ``n0 * nhat**l`` steps per epoch."""

    n0: int = 2
    nhat: int = 2

    def __post_init__(self):
        if int(self.n0) != self.n0 or self.n0 < 1:
            raise InvalidInputError("n0 must be a positive integer")
        if int(self.nhat) != self.nhat or self.nhat < 1:
            raise InvalidInputError("nhat must be a positive integer")

    def steps(self, level: int) -> int:
        if level < 0:
            raise InvalidInputError("level must be >= 0")
        return int(self.n0 * self.nhat**level)

    def dt(self, level: int) -> float:
        return 1.0 / self.steps(level)


class CostCounter:
    """Tally of integrator substeps (one Euler/Milstein step of one particle)."""

    def __init__(self):
        self.substeps = 0

    def add(self, n: int):
        self.substeps += int(n)


def _finite(u):
    if not np.all(np.isfinite(u)):
        raise InstabilityError("integration produced non-finite values; time step too large?")
    return u


def em_step(model: SdeModel, u, epoch: int, dt: float, dW) -> np.ndarray:
    """Euler-Maruyama: ``u + a(u) dt + b(u) dW``. ``dW`` has shape ``(n, r)``."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    u = np.asarray(u, dtype=float)
    dW = np.asarray(dW, dtype=float)
    b = model.diffusion(u, epoch)
    if b.shape[-1] == 1:
        noise = b[..., 0] * dW[..., :1]
    else:
        noise = np.einsum("...ij,...j->...i", b, dW)
    out = u + model.drift(u, epoch) * dt + noise
    return _finite(out)


def milstein_step(model: SdeModel, u, epoch: int, dt: float, dW) -> np.ndarray:
    """Scalar Milstein: Euler-Maruyama plus ``b b' (dW^2 - dt) / 2``."""
    if model.dim != 1 or model.noise_dim != 1 or model.diffusion_slope is None:
        raise InvalidInputError("Milstein needs a scalar model with diffusion_slope")
    u = np.asarray(u, dtype=float)
    dW = np.asarray(dW, dtype=float)
    out = em_step(model, u, epoch, dt, dW) + 0.5 * model.diffusion_slope(u, epoch) * (dW * dW - dt)
    return _finite(out)


def _stepper(model: SdeModel):
    return milstein_step if model.scheme == "milstein" else em_step


def integrate_path(model: SdeModel, u, epoch: int, path: BrownianPath, cost: CostCounter | None = None):
    """Apply one step per increment of ``path``, starting from state ``u`` (n, d)."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    inc = path.increments
    if inc.ndim == 2:
        inc = inc[None]
    if inc.shape[0] not in (1, u.shape[0]):
        raise InvalidInputError("path particle count does not match state")
    step = _stepper(model)
    for m in range(inc.shape[-2]):
        u = step(model, u, epoch, path.dt, inc[:, m, :])
    if cost is not None:
        cost.add(inc.shape[-2] * u.shape[0])
    return u


def propagate_level(model: SdeModel, grid: LevelGrid, level: int, u, epoch: int,
                    path: BrownianPath, cost: CostCounter | None = None) -> np.ndarray:
    """Level-``level`` solution operator over one epoch, driven by ``path``."""
    n = grid.steps(level)
    if path.n_steps != n or not np.isclose(path.dt * n, 1.0, rtol=0, atol=1e-12):
        raise InvalidInputError(f"level {level} needs {n} increments of dt=1/{n}, "
                                f"got {path.n_steps} of dt={path.dt}")
    return integrate_path(model, u, epoch, path, cost)


@dataclass
class CoupledPair:
    """Fine (level ``level``) and coarse (level ``level - 1``) states, shape (n, d).

    At level 0 the coarse slot holds zeros and is never integrated.
    """

    fine: np.ndarray
    coarse: np.ndarray
    level: int


def propagate_pair_path(model: SdeModel, grid: LevelGrid, pair: CoupledPair, epoch: int,
                        fine_path: BrownianPath, cost: CostCounter | None = None) -> CoupledPair:
    """Advance both members of a pair on one fine path and its coarsened sum."""
    if pair.level < 1:
        raise InvalidInputError("pairs below level 1 have no coarse partner")
    coarse_path = coarsen(fine_path, grid.nhat)
    fine = propagate_level(model, grid, pair.level, pair.fine, epoch, fine_path, cost)
    coarse = propagate_level(model, grid, pair.level - 1, pair.coarse, epoch, coarse_path, cost)
    return CoupledPair(fine, coarse, pair.level)


def propagate_pair(model: SdeModel, grid: LevelGrid, pair: CoupledPair, epoch: int,
                   source: Stream, cost: CostCounter | None = None) -> CoupledPair:
    """Draw the fine path from ``source`` (one row per particle) and advance the pair."""
    path = brownian_path(source, grid.steps(pair.level), model.noise_dim)
    return propagate_pair_path(model, grid, pair, epoch, path, cost)
