"""Check the Weinberg model by the distribution it implies, not by RMSE.

The Weinberg simulator draws scattering angles whose density depends on a
beam energy and a coupling; different parameter pairs can induce nearly the
same observable distribution, so a parameter-space error metric is
misleading.  Instead this demo compares histograms: real draws at the true
parameters vs draws at the inferred proposal mean, with their
total-variation distance.

Needs the cached desk checkpoint (``python3 tests/desk.py weinberg``);
otherwise it trains a small model first (~20 min).

    python3 demos/03_weinberg_histograms.py
"""

import pathlib

from alfi import svg
from alfi.evaluate import HISTOGRAM_DRAWS, histogram_distance, marginalized_estimate
from alfi.meta import default_config, load_model, make_meta_dataset, train
from alfi.rng import RandomSource
from alfi.simulators import get_simulator

import numpy as np

SMALL_ARCH = dict(code_dim=16, data_widths=(32, 32), comb_widths=(32, 32),
                  comb_dim=16, pre_dim=32, hidden_dim=64)


def main():
    sim = get_simulator("weinberg")
    ckpt = pathlib.Path(__file__).resolve().parents[1] / "tests" / "_artifacts" / "weinberg.ckpt"
    cfg = default_config(sim, epochs=15, meta_dataset_size=300, seed=1234)
    if ckpt.exists():
        print(f"loading cached model {ckpt}")
        f, _ = load_model(ckpt)
    else:
        print(f"no cached model; meta-training a small one ({cfg.epochs} epochs)...")
        f, _ = train(sim, cfg, arch=SMALL_ARCH,
                     progress=lambda log: print(f"  {log}"))

    rng = RandomSource(321)
    outdir = pathlib.Path(__file__).resolve().parent / "out" / "weinberg"
    outdir.mkdir(parents=True, exist_ok=True)
    edges = np.linspace(-1.0, 1.0, 51)

    for k in range(3):
        prob = make_meta_dataset(sim, 1, cfg.x_batch, rng.child(f"prob-{k}"))[0]
        pp = marginalized_estimate(f, prob, n_init=100, t_test=30,
                                   rng=rng.child(f"inf-{k}"), cfg=cfg)
        theta_hat = pp.mu
        real = sim.forward(prob.theta_star, HISTOGRAM_DRAWS, rng.child(f"real-{k}"))
        gen = sim.forward(theta_hat, HISTOGRAM_DRAWS, rng.child(f"gen-{k}"),
                          strict=False)
        tv = histogram_distance(real, gen)

        rh, _ = np.histogram(real, bins=edges, density=True)
        gh, _ = np.histogram(gen, bins=edges, density=True)
        path = outdir / f"histogram_{k}.svg"
        svg.histogram_pair(path, {
            "theta_star": prob.theta_star.tolist(),
            "theta_hat": np.asarray(theta_hat).tolist(),
            "edges": edges.tolist(), "real": rh.tolist(),
            "generated": gh.tolist(),
        })
        print(f"problem {k}: true {np.round(prob.theta_star, 3)} "
              f"inferred {np.round(theta_hat, 3)}  TV = {tv:.3f}  -> {path}")


if __name__ == "__main__":
    main()
