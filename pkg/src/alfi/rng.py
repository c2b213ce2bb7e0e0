"""Deterministic, splittable random source and the distribution samplers.

A ``RandomSource`` wraps a counter-based Philox generator.  Child sources are
derived by hashing the parent key together with a label, so a child's stream
never depends on how much the parent has drawn.  This keeps parallel or
reordered evaluation bit-reproducible.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np


class ParameterError(ValueError):
    """Raised for distribution parameters outside their valid domain."""


class RandomSource:
    """Seeded stream of random draws with labelled, independent children."""

    def __init__(self, seed, _digest=None):
        if _digest is None:
            _digest = hashlib.sha256(f"root:{int(seed)}".encode()).digest()
        self._digest = _digest
        key = int.from_bytes(_digest[:16], "little")
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, label):
        """Derive an independent stream identified by ``label``."""
        digest = hashlib.sha256(self._digest + f"/{label}".encode()).digest()
        return RandomSource(0, _digest=digest)

    # -- primitive draws ----------------------------------------------------

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None):
        if not low < high:
            raise ParameterError(f"uniform: need low < high, got [{low}, {high}]")
        return self._gen.uniform(low, high, size)

    def random(self, size=None):
        return self._gen.random(size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def exponential(self, rate, size=None):
        if rate <= 0:
            raise ParameterError(f"exponential: rate must be positive, got {rate}")
        return self._gen.standard_exponential(size) / rate

    def poisson(self, lam, size=None):
        """Poisson counts with a platform-stable sampler.

        Inversion by sequential search for rates up to 30; above that a
        normal approximation with continuity correction (the simulators
        reach rates around e^7, where exact inversion is needlessly slow).
        """
        lam = np.asarray(lam, dtype=np.float64)
        if np.any(lam < 0):
            raise ParameterError("poisson: rate must be non-negative")
        if size is not None:
            lam = np.broadcast_to(lam, size)
        scalar = lam.ndim == 0
        lam = np.atleast_1d(lam)
        out = np.zeros(lam.shape, dtype=np.int64)

        small = lam <= 30.0
        if small.any():
            ls = lam[small].ravel()
            u = self._gen.random(lam[small].shape).ravel()
            p = np.exp(-ls)
            cdf = p.copy()
            k = np.zeros(ls.shape, dtype=np.int64)
            idx = np.nonzero(u > cdf)[0]  # shrink the active set as draws finish
            while idx.size:
                k[idx] += 1
                p[idx] *= ls[idx] / k[idx]
                cdf[idx] += p[idx]
                idx = idx[u[idx] > cdf[idx]]
            out[small] = k.reshape(lam[small].shape)
        big = ~small
        if big.any():
            lb = lam[big]
            z = self._gen.standard_normal(lb.shape)
            out[big] = np.maximum(0.0, np.floor(lb + np.sqrt(lb) * z + 0.5)).astype(np.int64)
        return out[0] if scalar else out


# -- declarative distribution specs for the generic sampler ------------------

@dataclass(frozen=True)
class Normal:
    mean: float = 0.0
    std: float = 1.0


@dataclass(frozen=True)
class Uniform:
    low: float
    high: float


@dataclass(frozen=True)
class Poisson:
    rate: float


@dataclass(frozen=True)
class Exponential:
    rate: float


@dataclass(frozen=True)
class GaussianMixture:
    weights: tuple
    means: tuple
    stds: tuple


def sample(dist, n, rng: RandomSource):
    """Draw ``n`` i.i.d. samples from a distribution spec."""
    if n < 1:
        raise ParameterError("sample: n must be >= 1")
    if isinstance(dist, Normal):
        if dist.std <= 0:
            raise ParameterError(f"normal: std must be positive, got {dist.std}")
        return dist.mean + dist.std * rng.normal(n)
    if isinstance(dist, Uniform):
        return rng.uniform(dist.low, dist.high, n)
    if isinstance(dist, Poisson):
        if dist.rate <= 0:
            raise ParameterError(f"poisson: rate must be positive, got {dist.rate}")
        return rng.poisson(dist.rate, size=(n,)).astype(np.float64)
    if isinstance(dist, Exponential):
        return rng.exponential(dist.rate, n)
    if isinstance(dist, GaussianMixture):
        w = np.asarray(dist.weights, dtype=np.float64)
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-12:
            raise ParameterError(f"mixture: weights must be non-negative and sum to 1, got {dist.weights}")
        if len(dist.means) != len(w) or len(dist.stds) != len(w):
            raise ParameterError("mixture: weights, means and stds must have equal length")
        comp = np.searchsorted(np.cumsum(w), rng.random(n), side="right")
        comp = np.minimum(comp, len(w) - 1)
        means = np.asarray(dist.means)[comp]
        stds = np.asarray(dist.stds)[comp]
        return means + stds * rng.normal(n)
    raise ParameterError(f"unknown distribution spec {dist!r}")
