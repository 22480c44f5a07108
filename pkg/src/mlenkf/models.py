"""Signal and observation models.

States are handled in two coordinates. The integrator works on the SDE
state ``u``; the filters compute moments and apply updates in a *filter
coordinate* ``x``. For the Ornstein-Uhlenbeck model the two coincide, for
the drift-alternating GBM ``x = log u``. Ensembles are stored in filter
coordinates and mapped with ``to_state`` / ``to_filter`` around each
integration.

All callables are vectorised: ``u`` has shape ``(n, d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError, NotSPDError
from .linalg import as_sym, cholesky, sym_eigen
from .stochastic import Stream


def _identity(x):
    return x


@dataclass(frozen=True)
class LinearSignal:
    """``x' = A x + offset + xi`` with ``xi ~ N(0, sigma)``."""

    A: np.ndarray
    sigma: np.ndarray
    offset: Optional[np.ndarray] = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        sigma = as_sym(self.sigma, "sigma")
        if A.shape[0] != A.shape[1] or sigma.shape != A.shape:
            raise InvalidInputError("A and sigma must be d x d")
        offset = np.zeros(A.shape[0]) if self.offset is None else \
            np.atleast_1d(np.asarray(self.offset, dtype=float))
        if offset.shape != (A.shape[0],):
            raise InvalidInputError("offset must have length d")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "offset", offset)


@dataclass(frozen=True)
class SdeModel:
    """``du = a(u, epoch) dt + b(u, epoch) dW`` over one unit epoch.

    ``diffusion`` returns shape ``(n, d, r)``. ``diffusion_slope`` is the
    scalar ``b * db/du`` used by the Milstein correction (d = r = 1 only).
    ``exact_transition(x, epoch, z)`` maps filter coordinates one epoch
    forward given standard normals ``z`` of shape ``(n, d)``.
    """

    name: str
    dim: int
    noise_dim: int
    drift: Callable[[np.ndarray, int], np.ndarray]
    diffusion: Callable[[np.ndarray, int], np.ndarray]
    scheme: str = "euler"
    diffusion_slope: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    exact_transition: Optional[Callable[[np.ndarray, int, np.ndarray], np.ndarray]] = None
    linear_signal: Optional[Callable[[int], LinearSignal]] = None
    to_filter: Callable[[np.ndarray], np.ndarray] = _identity
    to_state: Callable[[np.ndarray], np.ndarray] = _identity
    initial: np.ndarray = field(default_factory=lambda: np.zeros(1))
    params: dict = field(default_factory=dict)


def _check_sigma(sigma) -> float:
    sigma = float(sigma)
    if not sigma > 0 or not math.isfinite(sigma):
        raise InvalidInputError(f"sigma must be a positive finite number, got {sigma}")
    return sigma


def ou_variance(sigma: float) -> float:
    """Variance of the one-epoch OU transition noise, sigma^2 (1 - e^{-2}) / 2."""
    return sigma**2 * (1.0 - math.exp(-2.0)) / 2.0


def ou_model(sigma: float = 0.5) -> SdeModel:
    """``du = -u dt + sigma dW``, started from u(0) = 1."""
    sigma = _check_sigma(sigma)
    var = ou_variance(sigma)
    decay = math.exp(-1.0)
    sd = math.sqrt(var)

    def drift(u, epoch):
        return -u

    def diffusion(u, epoch):
        return np.full(u.shape + (1,), sigma)

    def slope(u, epoch):
        return np.zeros_like(u)

    def exact(x, epoch, z):
        return decay * x + sd * z

    def linear(epoch):
        return LinearSignal([[decay]], [[var]])

    return SdeModel("ou", 1, 1, drift, diffusion, scheme="milstein",
                    diffusion_slope=slope, exact_transition=exact,
                    linear_signal=linear, initial=np.array([1.0]),
                    params={"sigma": sigma})


def gbm_log_step(z, epoch: int, sigma: float, noise):
    """Exact log-space GBM transition ``z + (-1)^n sigma^2/2 + sigma * noise``."""
    sign = 1.0 if epoch % 2 == 0 else -1.0
    return z + sign * sigma**2 / 2.0 + sigma * noise


def gbm_model(sigma: float = 0.25) -> SdeModel:
    """Drift-alternating GBM: drift sigma^2 u on even epochs, zero on odd ones.

    Filtering happens on ``z = log u``, which evolves as a Gaussian random
    walk with alternating deterministic offset.
    """
    sigma = _check_sigma(sigma)
    s2 = sigma**2

    def drift(u, epoch):
        return s2 * u if epoch % 2 == 0 else np.zeros_like(u)

    def diffusion(u, epoch):
        return sigma * u[..., None]

    def slope(u, epoch):
        return s2 * u

    def exact(x, epoch, z):
        return gbm_log_step(x, epoch, sigma, z)

    def linear(epoch):
        sign = 1.0 if epoch % 2 == 0 else -1.0
        return LinearSignal([[1.0]], [[s2]], [sign * s2 / 2.0])

    def to_filter(u):
        if np.any(u <= 0):
            raise InvalidInputError("GBM state left the positive half-line")
        return np.log(u)

    return SdeModel("gbm", 1, 1, drift, diffusion, scheme="euler",
                    diffusion_slope=slope, exact_transition=exact,
                    linear_signal=linear, to_filter=to_filter, to_state=np.exp,
                    initial=np.array([0.0]), params={"sigma": sigma})


class ObservationModel:
    """``y = H x + eta`` with ``eta ~ N(0, gamma)`` and SPD ``gamma``."""

    def __init__(self, H, gamma):
        H = np.atleast_2d(np.asarray(H, dtype=float))
        gamma = as_sym(gamma, "gamma")
        if gamma.shape[0] != H.shape[0]:
            raise InvalidInputError("gamma must be m x m where H is m x d")
        if not np.all(np.isfinite(H)):
            raise InvalidInputError("H has non-finite entries")
        self.H = H
        self.gamma = gamma
        self.gamma_chol = cholesky(gamma)
        self.gamma_min = float(sym_eigen(gamma).eigenvalues[-1])
        if not self.gamma_min > 0:
            raise NotSPDError("gamma must be positive definite")

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def d(self) -> int:
        return self.H.shape[1]

    @classmethod
    def scalar(cls, gamma: float, h: float = 1.0) -> "ObservationModel":
        return cls([[h]], [[gamma]])

    def __repr__(self):
        return f"ObservationModel(H={self.H.tolist()}, gamma={self.gamma.tolist()})"


def observe(x, obs: ObservationModel, source: Stream | None = None, noise=None) -> np.ndarray:
    """``H x + eta``. ``eta`` is ``gamma_chol @ noise``; ``noise`` is drawn
    from ``source`` when not given. Rows of ``x`` are independent states."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    if x2.shape[-1] != obs.d:
        raise InvalidInputError(f"state dimension {x2.shape[-1]} != H columns {obs.d}")
    if noise is None:
        if source is None:
            raise InvalidInputError("need either a stream or explicit noise")
        noise = source.normals(obs.m)
    noise = np.atleast_2d(np.asarray(noise, dtype=float))
    y = x2 @ obs.H.T + noise @ obs.gamma_chol.T
    return y[0] if single else y
