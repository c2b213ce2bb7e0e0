"""Diagonal-Gaussian proposal over simulator parameters.

The proposal q(theta | psi) is N(mu, diag(sigma^2)) with psi = [mu, rho] and
sigma = exp(rho), so updates act on an unconstrained vector and positivity of
sigma is automatic.  ``psi`` may carry a leading batch axis: shape (2 d,) for
a single proposal or (P, 2 d) for a batch of P proposals.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

LOG_2PI = float(np.log(2.0 * np.pi))

INITIAL_LOG_STD = 0.5  # every proposal starts with sigma = e^0.5 per component


class ProposalParams:
    """Mean and log-standard-deviation of a diagonal Gaussian proposal."""

    def __init__(self, psi):
        psi = psi if isinstance(psi, Tensor) else Tensor(psi)
        if psi.shape[-1] % 2 != 0:
            raise T.ShapeError(f"proposal: psi last axis must be even, got {psi.shape}")
        self.psi = psi
        self.d_theta = psi.shape[-1] // 2

    @classmethod
    def from_arrays(cls, mu, rho):
        mu = np.asarray(mu, dtype=np.float64)
        rho = np.asarray(rho, dtype=np.float64)
        if mu.shape != rho.shape:
            raise T.ShapeError(f"proposal: mu {mu.shape} and rho {rho.shape} differ")
        return cls(np.concatenate([mu, rho], axis=-1))

    @property
    def mu(self):
        return self.psi.data[..., :self.d_theta]

    @property
    def rho(self):
        return self.psi.data[..., self.d_theta:]

    @property
    def sigma(self):
        return np.exp(self.rho)

    def mu_tensor(self):
        return self.psi[..., :self.d_theta]

    def rho_tensor(self):
        return self.psi[..., self.d_theta:]

    def detach(self):
        return ProposalParams(self.psi.detach())


def init_proposal(prior, rng, batch=None):
    """Fresh proposal: mu drawn from the parameter prior, rho = 0.5 everywhere."""
    n = 1 if batch is None else batch
    mu = prior.sample(n, rng)
    rho = np.full_like(mu, INITIAL_LOG_STD)
    if batch is None:
        mu, rho = mu[0], rho[0]
    return ProposalParams.from_arrays(mu, rho)


def sample_proposal(pp, B, rng):
    """Draw B candidate parameter vectors per proposal; plain arrays, detached."""
    if B < 1:
        raise ValueError("B must be >= 1")
    mu, sigma = pp.mu, pp.sigma
    eps = rng.normal(mu.shape[:-1] + (B, pp.d_theta))
    return mu[..., None, :] + sigma[..., None, :] * eps


def log_density(theta, pp):
    """Differentiable log q(theta | psi); sums over the parameter dimension."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape[-1] != pp.d_theta:
        raise T.ShapeError(f"log_density: theta {theta.shape} does not match d_theta={pp.d_theta}")
    mu = pp.mu_tensor()
    rho = pp.rho_tensor()
    diff = T.add(Tensor(theta), T.mul(mu, -1.0))
    quad = T.mul(T.mul(T.square(diff), T.exp(T.mul(rho, -2.0))), 0.5)
    nd = pp.psi.data.ndim
    return T.add(T.mul(T.tsum(T.add(rho, quad), axis=nd - 1), -1.0),
                 Tensor(-0.5 * LOG_2PI * pp.d_theta))


def score(theta, pp):
    """Closed-form gradient of log q(theta|psi) w.r.t. psi, as a plain array.

    d/d mu  = (theta - mu) / sigma^2
    d/d rho = ((theta - mu) / sigma)^2 - 1

    ``theta`` may carry extra candidate axes, e.g. (P, B, d) against a
    proposal batch of shape (P, 2 d).
    """
    theta = np.asarray(theta, dtype=np.float64)
    mu, sigma = pp.mu, pp.sigma
    extra = theta.ndim - mu.ndim
    for _ in range(extra):
        mu = mu[..., None, :]
        sigma = sigma[..., None, :]
    z = (theta - mu) / sigma
    return np.concatenate([z / sigma, z * z - 1.0], axis=-1)


def proposal_mean(pp):
    """Expected parameter under the proposal (the mean vector, rho-invariant)."""
    return pp.mu.copy()
