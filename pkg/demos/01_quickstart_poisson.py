"""Train a small updater on the Poisson simulator and watch it infer a rate.

The model never sees a likelihood: at every step it simulates candidate
parameters, compares the generated draws against the observed ones, and
nudges its Gaussian proposal.  After a short meta-training run the proposal
mean should land close to the maximum-likelihood estimate, which for this
simulator (parameterised by the log of the rate) is log(sample mean).

Runs from scratch in a few minutes on one core:

    python3 demos/01_quickstart_poisson.py
"""

import numpy as np

from alfi.evaluate import marginalized_estimate
from alfi.meta import default_config, make_meta_dataset, train
from alfi.proposal import proposal_mean
from alfi.rng import RandomSource
from alfi.simulators import get_simulator

SMALL_ARCH = dict(code_dim=16, data_widths=(32, 32), comb_widths=(32, 32),
                  comb_dim=16, pre_dim=32, hidden_dim=64)


def main():
    sim = get_simulator("poisson")
    cfg = default_config(sim, epochs=10, meta_dataset_size=500, seed=1234)

    print(f"meta-training on '{sim.name}' "
          f"({cfg.epochs} epochs x {cfg.meta_dataset_size} problems)...")
    f, logs = train(sim, cfg, arch=SMALL_ARCH,
                    progress=lambda log: print(f"  {log}"))

    # a fresh test problem the model has never seen; the parameter is the
    # log of the Poisson rate, so the MLE is log(sample mean)
    rng = RandomSource(5678)
    prob = make_meta_dataset(sim, 1, cfg.x_batch, rng.child("test"))[0]
    theta_true = prob.theta_star[0]
    theta_mle = float(sim.mle(prob.x_real)[0])

    pp = marginalized_estimate(f, prob, n_init=100, t_test=15,
                               rng=rng.child("inference"), cfg=cfg)
    theta_hat = float(proposal_mean(pp)[0])

    print(f"\ntrue log-rate  theta* = {theta_true:.3f}")
    print(f"MLE  log(sample mean) = {theta_mle:.3f}")
    print(f"inferred (15 steps)   = {theta_hat:.3f}  "
          f"(sigma = {float(pp.sigma[0]):.3f})")
    print(f"|inferred - true|     = {abs(theta_hat - theta_true):.3f}")


if __name__ == "__main__":
    main()
