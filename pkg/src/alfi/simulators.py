"""Stochastic forward simulators, their parameter priors, and MLE baselines.

Four generators are provided:

* ``poisson``      -- counts from P(rate = e^theta), theta in [0.2, 7.0].
* ``linreg``       -- observations [x, 1, y] on a noisy line, slope angle in
                      [0, pi/2) and offset in [-1, 1].
* ``multivariate`` -- five canonical marginals mixed by a fixed positive
                      definite matrix R (shipped as a data file).
* ``weinberg``     -- cosine of the muon scattering angle in a simplified
                      e+ e- -> mu+ mu- collision, parametrised by beam energy
                      and Fermi constant.  The angular density is quadratic in
                      the cosine, p(c) proportional to max(1 + c^2 + A c, 0)
                      with the forward-backward coefficient
                      A = 2 tanh((2 E - 90) / 9) * G, sampled by rejection
                      under a uniform envelope on [-1, 1].

The first three have tractable likelihoods and come with MLE oracles used as
the evaluation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.optimize import minimize

from .rng import RandomSource


class SimulationError(RuntimeError):
    """Raised for parameters a forward process cannot handle."""


class MLEError(RuntimeError):
    """Raised when a maximum-likelihood oracle is undefined for the data."""


class BoxPrior:
    """Uniform prior over an axis-aligned box; upper edges are excluded."""

    def __init__(self, low, high):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        if self.low.shape != self.high.shape or np.any(self.low >= self.high):
            raise ValueError(f"invalid prior box [{low}, {high}]")

    @property
    def dim(self):
        return self.low.size

    def sample(self, n, rng: RandomSource):
        return rng.uniform(0.0, 1.0, (n, self.dim)) * (self.high - self.low) + self.low

    def contains(self, theta):
        theta = np.atleast_2d(theta)
        return np.all((theta >= self.low) & (theta <= self.high), axis=-1)

    @property
    def center(self):
        return 0.5 * (self.low + self.high)


@dataclass(frozen=True)
class SimulatorDefaults:
    """Per-simulator training hyperparameters."""
    epochs: int
    iterations: int
    meta_dataset_size: int
    meta_batch_size: int
    theta_batch: int
    x_batch: int
    learning_rate: float
    clip: float


def _ensure_theta(theta, d):
    theta = np.asarray(theta, dtype=np.float64)
    scalar = theta.ndim <= 1
    theta = np.atleast_2d(theta)
    if theta.shape[-1] != d:
        raise ValueError(f"theta has dimension {theta.shape[-1]}, expected {d}")
    return theta, scalar


class Simulator:
    """Forward sampler plus prior, defaults, and an optional MLE oracle."""

    name: str
    d_theta: int
    d_x: int
    has_mle = False

    def forward(self, theta, M, rng):
        raise NotImplementedError

    def valid_params(self, theta):
        """Rows of theta the forward process can simulate."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        return np.ones(theta.shape[0], dtype=bool)

    def safe_params(self):
        """A parameter value that always simulates (used for masked candidates)."""
        return self.prior.center

    def mle(self, X):
        raise MLEError(f"simulator {self.name!r} has no MLE oracle")


class PoissonSimulator(Simulator):
    name = "poisson"
    d_theta = 1
    d_x = 1
    has_mle = True

    def __init__(self):
        self.prior = BoxPrior([0.2], [7.0])
        self.defaults = SimulatorDefaults(
            epochs=300, iterations=15, meta_dataset_size=10_000, meta_batch_size=16,
            theta_batch=20, x_batch=20, learning_rate=1e-3, clip=0.5)

    def forward(self, theta, M, rng):
        theta, scalar = _ensure_theta(theta, 1)
        lam = np.exp(theta[:, 0])
        x = rng.poisson(lam[:, None], size=(theta.shape[0], M)).astype(np.float64)
        out = x[:, :, None]
        return out[0] if scalar else out

    def mle(self, X):
        X = np.asarray(X, dtype=np.float64).reshape(-1)
        if X.size == 0:
            raise MLEError("poisson MLE needs at least one observation")
        m = X.mean()
        if m <= 0:
            raise MLEError("poisson MLE undefined for an all-zero sample")
        return np.array([np.log(m)])


class LinearRegressionSimulator(Simulator):
    """Observations [x, 1, y] with y = tan(theta_0) x + theta_1 + noise."""

    name = "linreg"
    d_theta = 2
    d_x = 3
    has_mle = True
    NOISE_STD = float(np.sqrt(0.1))  # N(0, 0.1) read as variance 0.1

    def __init__(self):
        # Half-open at pi/2 where tan is singular.
        self.prior = BoxPrior([0.0, -1.0], [np.pi / 2.0, 1.0])
        self.defaults = SimulatorDefaults(
            epochs=300, iterations=15, meta_dataset_size=10_000, meta_batch_size=16,
            theta_batch=20, x_batch=20, learning_rate=1e-3, clip=0.25)

    def forward(self, theta, M, rng, noise=True):
        theta, scalar = _ensure_theta(theta, 2)
        bad = ~self.valid_params(theta)
        if bad.any():
            raise SimulationError(f"linreg: tan singular at theta_0 = {theta[bad][0, 0]!r}")
        n = theta.shape[0]
        x = rng.uniform(-1.0, 1.0, (n, M))
        eps = rng.normal((n, M)) * self.NOISE_STD if noise else 0.0
        y = np.tan(theta[:, 0])[:, None] * x + theta[:, 1][:, None] + eps
        out = np.stack([x, np.ones_like(x), y], axis=-1)
        return out[0] if scalar else out

    def valid_params(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        dist = np.abs(np.remainder(theta[:, 0] - np.pi / 2.0, np.pi))
        return np.minimum(dist, np.pi - dist) > 1e-9

    def mle(self, X):
        X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
        if X.shape[0] == 0:
            raise MLEError("linreg MLE needs at least one observation")
        design = X[:, :2]
        coeff, *_ = np.linalg.lstsq(design, X[:, 2], rcond=None)
        return np.array([np.arctan(coeff[0]), coeff[1]])


def _load_mixing_matrix():
    with resources.files("alfi.data").joinpath("multivariate_R.txt").open() as fh:
        R = np.loadtxt(fh)
    if R.shape != (5, 5):
        raise ValueError(f"mixing matrix file has shape {R.shape}, expected (5, 5)")
    return R


class MultivariateSimulator(Simulator):
    """Five canonical marginals mixed linearly: x = R z.

    z0 ~ N(theta0, 1), z1 ~ N(3, std e^(theta1/3)),
    z2 ~ GMM(1/2 N(-2, 0.5), 1/2 N(2, 1)), z3 ~ U(-5, theta2),
    z4 ~ Exp(rate 0.5).  Second Gaussian arguments are standard deviations.
    """

    name = "multivariate"
    d_theta = 3
    d_x = 5
    has_mle = True

    def __init__(self, R=None):
        self.prior = BoxPrior([-3.0] * 3, [3.0] * 3)
        self.defaults = SimulatorDefaults(
            epochs=300, iterations=15, meta_dataset_size=10_000, meta_batch_size=16,
            theta_batch=20, x_batch=20, learning_rate=1e-3, clip=0.2)
        self.R = _load_mixing_matrix() if R is None else np.asarray(R, dtype=np.float64)
        try:
            self.R_inv = np.linalg.inv(self.R)
        except np.linalg.LinAlgError as err:
            raise SimulationError("multivariate: mixing matrix R is not invertible") from err

    def forward(self, theta, M, rng):
        theta, scalar = _ensure_theta(theta, 3)
        bad = ~self.valid_params(theta)
        if bad.any():
            raise SimulationError(
                f"multivariate: uniform upper bound must exceed -5, got theta2 = {theta[bad][0, 2]}")
        n = theta.shape[0]
        z = np.empty((n, M, 5))
        z[:, :, 0] = theta[:, 0][:, None] + rng.normal((n, M))
        z[:, :, 1] = 3.0 + np.exp(theta[:, 1] / 3.0)[:, None] * rng.normal((n, M))
        comp = rng.random((n, M)) < 0.5
        z[:, :, 2] = np.where(comp, -2.0 + 0.5 * rng.normal((n, M)), 2.0 + rng.normal((n, M)))
        z[:, :, 3] = -5.0 + (theta[:, 2] + 5.0)[:, None] * rng.random((n, M))
        z[:, :, 4] = rng.exponential(0.5, (n, M))
        out = z @ self.R.T
        return out[0] if scalar else out

    def valid_params(self, theta):
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        return theta[:, 2] > -5.0 + 1e-12

    def _neg_log_likelihood(self, theta, z):
        t0, t1, t2 = theta
        n = z.shape[0]
        nll = 0.5 * np.sum((z[:, 0] - t0) ** 2)
        s1 = np.exp(t1 / 3.0)
        nll += n * (t1 / 3.0) + np.sum((z[:, 1] - 3.0) ** 2) / (2.0 * s1 * s1)
        nll += n * np.log(t2 + 5.0)
        return nll

    def mle(self, X):
        """Numeric maximiser of the exact log-likelihood of z = R^-1 x.

        The theta-independent marginals (mixture and exponential) contribute
        constants and are dropped; the uniform support constrains theta2 from
        below by max(z3).  Multi-start L-BFGS-B inside the prior box.
        """
        X = np.asarray(X, dtype=np.float64).reshape(-1, 5)
        if X.shape[0] == 0:
            raise MLEError("multivariate MLE needs at least one observation")
        z = X @ self.R_inv.T
        if np.any(z[:, 3] < -5.0 - 1e-6):
            raise MLEError("multivariate MLE: data outside the uniform support")
        lo2 = min(max(float(z[:, 3].max()), -3.0), 3.0)
        bounds = [(-3.0, 3.0), (-3.0, 3.0), (lo2, 3.0)]
        best = None
        for start in ([-2.0, -2.0, 3.0], [0.0, 0.0, 3.0], [2.0, 2.0, 3.0]):
            start[2] = max(start[2], lo2)
            res = minimize(self._neg_log_likelihood, np.asarray(start), args=(z,),
                           method="L-BFGS-B", bounds=bounds)
            if best is None or res.fun < best.fun:
                best = res
        return np.asarray(best.x)


class WeinbergSimulator(Simulator):
    """Simplified collider benchmark: one observable, the scattering cosine."""

    name = "weinberg"
    d_theta = 2
    d_x = 1
    has_mle = False

    def __init__(self):
        self.prior = BoxPrior([40.0, 0.5], [50.0, 1.5])
        self.defaults = SimulatorDefaults(
            epochs=130, iterations=15, meta_dataset_size=1_000, meta_batch_size=16,
            theta_batch=8, x_batch=64, learning_rate=2e-4, clip=0.2)

    @staticmethod
    def asymmetry(e_beam, g_f):
        """Forward-backward asymmetry coefficient of the angular density."""
        sqrt_s = 2.0 * np.asarray(e_beam, dtype=np.float64)
        return 2.0 * np.tanh((sqrt_s - 90.0) / 9.0) * np.asarray(g_f, dtype=np.float64)

    @staticmethod
    def density(c, a):
        """Unnormalised angular density max(1 + c^2 + a c, 0) on [-1, 1]."""
        return np.maximum(1.0 + c * c + a * c, 0.0)

    def forward(self, theta, M, rng, strict=True):
        theta, scalar = _ensure_theta(theta, 2)
        if strict and not np.all(self.prior.contains(theta)):
            raise SimulationError(
                f"weinberg: parameters outside the validated box "
                f"[{self.prior.low}, {self.prior.high}]")
        if not np.all(np.isfinite(theta)):
            raise SimulationError("weinberg: non-finite parameters")
        a = self.asymmetry(theta[:, 0], theta[:, 1])
        n = theta.shape[0]
        a_flat = np.repeat(a, M)
        envelope = 2.0 + np.abs(a_flat)
        out = np.empty(n * M)
        pending = np.arange(n * M)
        while pending.size:
            c = rng.uniform(-1.0, 1.0, pending.size)
            u = rng.random(pending.size) * envelope[pending]
            accept = u <= self.density(c, a_flat[pending])
            out[pending[accept]] = c[accept]
            pending = pending[~accept]
        out = out.reshape(n, M, 1)
        return out[0] if scalar else out


_REGISTRY = {
    "poisson": PoissonSimulator,
    "linreg": LinearRegressionSimulator,
    "multivariate": MultivariateSimulator,
    "weinberg": WeinbergSimulator,
}


def simulator_names():
    return sorted(_REGISTRY)


def get_simulator(name) -> Simulator:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown simulator {name!r}; choose from {simulator_names()}") from None


def mle_oracle(sim: Simulator, X):
    """Maximum-likelihood estimate of the simulator parameters from data."""
    if not sim.has_mle:
        raise MLEError(f"simulator {sim.name!r} has no MLE oracle")
    return sim.mle(X)


def sample_prior(sim: Simulator, n, rng: RandomSource):
    """Draw parameter vectors from the simulator's training prior."""
    return sim.prior.sample(n, rng)
