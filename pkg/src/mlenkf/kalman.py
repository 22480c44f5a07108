"""Exact Kalman filter for linear-Gaussian models (the reference solution)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import InvalidInputError
from .linalg import spd_solve, symmetrize
from .models import LinearSignal, ObservationModel
from .trace import FilterTrace


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidInputError("cov must be d x d for a length-d mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def kalman_gain(c_num, c_den, H, gamma) -> np.ndarray:
    """``c_num H^T (H c_den H^T + gamma)^{-1}``.

    The two covariance slots coincide for the ordinary filters; the
    multilevel filter passes its raw estimate and its PSD truncation.
    """
    S = symmetrize(H @ c_den @ H.T + gamma)
    # K = C H^T S^{-1}  <=>  S K^T = H C^T
    return spd_solve(S, H @ c_num.T).T


def kf_predict(m: GaussianMoments, sig: LinearSignal) -> GaussianMoments:
    if m.mean.size != sig.A.shape[0]:
        raise InvalidInputError("moment and signal dimensions differ")
    mean = sig.A @ m.mean + sig.offset
    cov = symmetrize(sig.A @ m.cov @ sig.A.T + sig.sigma)
    return GaussianMoments(mean, cov)


def kf_update(m: GaussianMoments, obs: ObservationModel, y) -> tuple[GaussianMoments, np.ndarray]:
    """Condition on observation ``y``; returns the posterior and the gain."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != obs.m or m.mean.size != obs.d:
        raise InvalidInputError("observation and state dimensions do not match H")
    K = kalman_gain(m.cov, m.cov, obs.H, obs.gamma)
    innovation = y - obs.H @ m.mean
    mean = m.mean + K @ innovation
    cov = symmetrize((np.eye(m.mean.size) - K @ obs.H) @ m.cov)
    return GaussianMoments(mean, cov), K


SignalSpec = Union[LinearSignal, Callable[[int], LinearSignal]]


def _signal_at(sig: SignalSpec, epoch: int) -> LinearSignal:
    return sig if isinstance(sig, LinearSignal) else sig(epoch)


def kf_run(sig: SignalSpec, obs: ObservationModel, ys: Sequence, init: GaussianMoments) -> FilterTrace:
    """Filter ``ys[0..N-1]`` (observations at times 1..N).

    ``sig`` is either fixed or a function of the epoch; the transition into
    time ``n`` uses epoch ``n - 1``.
    """
    means, covs = [init.mean], [init.cov]
    m = init
    ys = np.asarray(ys, dtype=float)
    if ys.ndim == 1:
        ys = ys[:, None]
    for k, y in enumerate(ys):
        m, _ = kf_update(kf_predict(m, _signal_at(sig, k)), obs, y)
        means.append(m.mean)
        covs.append(m.cov)
    return FilterTrace.collect(means, covs, "kalman")
