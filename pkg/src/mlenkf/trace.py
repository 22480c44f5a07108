"""Filter outputs: per-epoch moment estimates and cost accounting."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass
class CostRecord:
    substeps: int = 0
    wall_seconds: float = 0.0
    ensemble_sizes: tuple = ()


@dataclass
class FilterTrace:
    """Moment estimates for epochs 0..N; index 0 is the initial law.

    ``estimates`` maps observable names to per-epoch values (same indexing).
    """

    means: np.ndarray
    covs: np.ndarray
    method: str
    truncated: np.ndarray = None
    estimates: dict = field(default_factory=dict)
    cost: CostRecord = field(default_factory=CostRecord)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        if self.means.ndim == 1:
            self.means = self.means[:, None]
        self.covs = np.asarray(self.covs, dtype=float)
        if self.covs.ndim == 1:
            self.covs = self.covs[:, None, None]
        n = self.means.shape[0]
        if self.truncated is None:
            self.truncated = np.zeros(n, dtype=bool)
        self.truncated = np.asarray(self.truncated, dtype=bool)
        if self.covs.shape[0] != n or self.truncated.shape[0] != n:
            raise InvalidInputError("trace fields have inconsistent lengths")
        for name, vals in self.estimates.items():
            if len(vals) != n:
                raise InvalidInputError(f"estimate {name!r} has the wrong length")

    @property
    def epochs(self) -> int:
        return self.means.shape[0] - 1

    @classmethod
    def collect(cls, means, covs, method, truncated=None, estimates=None, cost=None):
        return cls(np.array(means), np.array(covs), method,
                   None if truncated is None else np.array(truncated),
                   {k: np.array(v) for k, v in (estimates or {}).items()},
                   cost or CostRecord())
