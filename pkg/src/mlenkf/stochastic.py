"""Keyed, counter-based random streams and Brownian increments.

Every draw is a pure function of ``(seed, epoch, level, particle, role,
draw index)``: the key is hashed through the Philox4x32-10 bijection, so
particles can be generated in any order, in any batch split, and always
reproduce bit-for-bit. Normals come from the inverse normal CDF of 53-bit
uniforms, which fixes the number of counter blocks consumed per draw.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .errors import InvalidInputError

_MUL0 = np.uint64(0xD2511F53)
_MUL1 = np.uint64(0xCD9E8D57)
_WEYL0 = 0x9E3779B9
_WEYL1 = 0xBB67AE85
_LO32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_ROUNDS = 10


class Role(enum.IntEnum):
    DRIVE = 0
    PERTURB = 1
    INIT = 2
    TRUTH = 3


@dataclass(frozen=True)
class StreamKey:
    epoch: int
    level: int
    particle: int
    role: Role


def philox4x32(c0, c1, c2, c3, k0: int, k1: int):
    """Philox4x32-10 block function on arrays of 32-bit counters (held as uint64)."""
    c0, c1, c2, c3 = (np.array(c) for c in np.broadcast_arrays(
        *(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))))
    p0 = np.empty_like(c0)
    p1 = np.empty_like(c0)
    for r in range(_ROUNDS):
        rk0 = np.uint64((k0 + r * _WEYL0) & 0xFFFFFFFF)
        rk1 = np.uint64((k1 + r * _WEYL1) & 0xFFFFFFFF)
        np.multiply(c0, _MUL0, out=p0)
        np.multiply(c2, _MUL1, out=p1)
        # buffers are recycled in place; the tuple rotation below restores names
        np.right_shift(p1, _SHIFT32, out=c2)
        np.bitwise_xor(c2, c1, out=c1)
        c1 ^= rk0
        np.right_shift(p0, _SHIFT32, out=c2)
        np.bitwise_xor(c2, c3, out=c3)
        c3 ^= rk1
        np.bitwise_and(p1, _LO32, out=c2)
        np.bitwise_and(p0, _LO32, out=c0)
        c0, c1, c2, c3 = c1, c2, c3, c0
    return c0, c1, c2, c3


def _to_unit(hi, lo) -> np.ndarray:
    bits = (hi >> np.uint64(5)) * np.uint64(1 << 26) + (lo >> np.uint64(6))
    return (bits.astype(np.float64) + 0.5) * 2.0**-53


_CHUNK = 1 << 15


def _check_u32(name: str, value: int) -> int:
    value = int(value)
    if not 0 <= value < 2**32:
        raise InvalidInputError(f"{name} must fit in 32 bits, got {value}")
    return value


class Stream:
    """Draws for a batch of particles sharing ``(epoch, level, role)``.

    Row ``j`` of every returned array belongs to particle ``particles[j]`` and
    is identical to what a stream built for that particle alone would return.
    Each instance keeps its own draw counter, so successive calls continue
    the sequence; instances are not meant to be shared between threads.
    """

    def __init__(self, seed: int, epoch: int, level: int, role: Role, particles=0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise InvalidInputError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.epoch = _check_u32("epoch", epoch)
        self.level = _check_u32("level", level)
        self.role = Role(role)
        if self.level >= 2**24:
            raise InvalidInputError("level must be < 2**24")
        self.particles = np.atleast_1d(np.asarray(particles, dtype=np.uint64))
        if self.particles.ndim != 1 or (self.particles.size and int(self.particles.max()) >= 2**32):
            raise InvalidInputError("particle indices must be a 1-d array of 32-bit values")
        self._k0 = seed & 0xFFFFFFFF
        self._k1 = seed >> 32
        self._tag = np.uint64((self.level << 8) | int(self.role))
        self._block = 0

    @classmethod
    def from_key(cls, key: StreamKey, seed: int) -> "Stream":
        return cls(seed, key.epoch, key.level, key.role, key.particle)

    def __len__(self) -> int:
        return self.particles.size

    def uniforms(self, k: int) -> np.ndarray:
        """``(n_particles, k)`` uniforms in the open interval (0, 1).

        Each call starts on a fresh counter block, two uniforms per block.
        """
        k = int(k)
        if k < 0:
            raise InvalidInputError("k must be non-negative")
        nblocks = (k + 1) // 2
        start = self._block
        if start + nblocks >= 2**32:
            raise InvalidInputError("stream exhausted")
        self._block += nblocks
        npart = self.particles.size
        out = np.empty((npart, 2 * nblocks))
        flat = out.reshape(-1, 2)
        total = npart * nblocks
        for lo in range(0, total, _CHUNK):
            idx = np.arange(lo, min(lo + _CHUNK, total), dtype=np.uint64)
            ctr = idx % np.uint64(max(nblocks, 1)) + np.uint64(start)
            part = self.particles[idx // np.uint64(max(nblocks, 1))]
            w0, w1, w2, w3 = philox4x32(ctr, part, np.uint64(self.epoch), self._tag,
                                        self._k0, self._k1)
            flat[lo:lo + idx.size, 0] = _to_unit(w0, w1)
            flat[lo:lo + idx.size, 1] = _to_unit(w2, w3)
        return out[:, :k]

    def normals(self, k: int) -> np.ndarray:
        """``(n_particles, k)`` standard normals via the inverse normal CDF."""
        return ndtri(self.uniforms(k))


def stream(key: StreamKey, seed: int) -> Stream:
    return Stream.from_key(key, seed)


def gaussian(source: Stream, mean, cov_chol) -> np.ndarray:
    """``mean + cov_chol @ z`` with ``z`` standard normal, one row per particle."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    factor = np.atleast_2d(np.asarray(cov_chol, dtype=float))
    if factor.shape[0] != mean.shape[-1]:
        raise InvalidInputError("factor rows must match the mean dimension")
    z = source.normals(factor.shape[1])
    return mean + z @ factor.T


@dataclass(frozen=True)
class BrownianPath:
    """Increments over one unit observation interval.

    ``increments`` has shape ``(..., n_steps, r)``; the leading axes index
    particles.
    """

    dt: float
    increments: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.increments.shape[-2]


def brownian_path(source: Stream, n_steps: int, r: int = 1) -> BrownianPath:
    """Draw one path per particle with ``n_steps`` increments of variance 1/n_steps."""
    if n_steps < 1:
        raise InvalidInputError("n_steps must be positive")
    dt = 1.0 / n_steps
    z = source.normals(n_steps * r).reshape(len(source), n_steps, r)
    return BrownianPath(dt, z * np.sqrt(dt))


def coarsen(path: BrownianPath, ratio: int) -> BrownianPath:
    """Sum consecutive groups of ``ratio`` increments (left to right)."""
    n = path.n_steps
    if ratio < 1 or n % ratio:
        raise InvalidInputError(f"ratio {ratio} does not divide {n} steps")
    if ratio == 1:
        return path
    grouped = path.increments.reshape(*path.increments.shape[:-2], n // ratio, ratio, -1)
    acc = grouped[..., 0, :].copy()
    for j in range(1, ratio):
        acc += grouped[..., j, :]
    return BrownianPath(path.dt * ratio, acc)


def coupled_brownian(source: Stream, n_fine: int, ratio: int, r: int = 1):
    """Fine path drawn from ``source`` and the coarse path obtained by summing it."""
    if ratio < 1 or n_fine % ratio:
        raise InvalidInputError(f"ratio {ratio} does not divide n_fine={n_fine}")
    fine = brownian_path(source, n_fine, r)
    return fine, coarsen(fine, ratio)
