"""Evaluate a trained updater and render its convergence figures.

Loads the cached desk checkpoint from tests/_artifacts/ when available
(produced by ``python3 tests/desk.py poisson``); otherwise trains a small
model first.  Writes rmse_per_step.csv, final_rmse.csv, report.json and the
SVG figures into demos/out/<simulator>/.

    python3 demos/02_convergence_report.py [simulator]
"""

import pathlib
import sys

from alfi.evaluate import evaluate, render_report, write_report
from alfi.meta import default_config, load_model, train
from alfi.rng import RandomSource
from alfi.simulators import get_simulator

SMALL_ARCH = dict(code_dim=16, data_widths=(32, 32), comb_widths=(32, 32),
                  comb_dim=16, pre_dim=32, hidden_dim=64)


def main(sim_name="poisson"):
    sim = get_simulator(sim_name)
    ckpt = pathlib.Path(__file__).resolve().parents[1] / "tests" / "_artifacts" / f"{sim_name}.ckpt"
    if ckpt.exists():
        print(f"loading cached model {ckpt}")
        f, _ = load_model(ckpt)
        cfg = default_config(sim, epochs=10, meta_dataset_size=500, seed=1234)
    else:
        cfg = default_config(sim, epochs=10, meta_dataset_size=500, seed=1234)
        print(f"no cached model; meta-training a small one ({cfg.epochs} epochs)...")
        f, _ = train(sim, cfg, arch=SMALL_ARCH,
                     progress=lambda log: print(f"  {log}"))

    print("evaluating on 30 fresh problems (n_init=100, 15 steps each)...")
    report = evaluate(f, sim, n_problems=30, t_test=15, n_init=100,
                      rng=RandomSource(99), cfg=cfg)

    outdir = pathlib.Path(__file__).resolve().parent / "out" / sim_name
    summary = write_report(report, outdir)
    figures = render_report(outdir)
    print(f"\nmean RMSE step 1  = {report.step_rmse_mean[0]:.4f}")
    print(f"mean RMSE step 15 = {report.step_rmse_mean[14]:.4f}")
    if "mle_median_rmse" in summary:
        print(f"median RMSE: model {summary['alfi_median_rmse']:.4f} "
              f"vs MLE {summary['mle_median_rmse']:.4f}")
    print(f"wrote {outdir}/: report.json, CSVs, {', '.join(figures)}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
