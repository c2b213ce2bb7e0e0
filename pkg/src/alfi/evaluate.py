"""Evaluation of a trained updater against maximum-likelihood baselines.

Test problems are drawn from the prior under a seed label disjoint from the
training labels.  For each problem the initial proposal is marginalised out:
``n_init`` independent rollouts are run and their proposal parameters are
averaged componentwise, stepwise along the trajectory.  The headline metric
is the RMSE between the true parameters and the (averaged) proposal mean.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .meta import MetaProblem, TrainConfig, make_meta_dataset, rollout_batch
from .proposal import ProposalParams, proposal_mean
from .rng import RandomSource
from .simulators import MLEError, Simulator, get_simulator

HISTOGRAM_BINS = 50
HISTOGRAM_DRAWS = 10_000


def rmse(pp: ProposalParams, theta_star):
    """Euclidean distance between the true parameters and the proposal mean."""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    return float(np.linalg.norm(theta_star - proposal_mean(pp)))


def histogram_distance(real, generated, bins=HISTOGRAM_BINS, lo=-1.0, hi=1.0):
    """Total-variation distance between normalised histograms on [lo, hi]."""
    real = np.asarray(real, dtype=np.float64).reshape(-1)
    generated = np.asarray(generated, dtype=np.float64).reshape(-1)
    if real.size == 0 or generated.size == 0:
        raise ValueError("histogram_distance needs non-empty sample sets")
    edges = np.linspace(lo, hi, bins + 1)
    p, _ = np.histogram(np.clip(real, lo, hi), bins=edges)
    q, _ = np.histogram(np.clip(generated, lo, hi), bins=edges)
    return float(0.5 * np.abs(p / p.sum() - q / q.sum()).sum())


def _marginalized_trajectory(f, sim, problems, cfg, t_test, n_init, rng, start_index=0):
    """Average psi over n_init rollouts per problem, stepwise.

    Each problem gets its own child stream keyed by its absolute index, so
    the result does not depend on how problems are grouped into batches.
    Returns (psi_bar (T, P, 2 d), sigma_mean (T, P)) where sigma_mean is the
    mean proposal standard deviation over inits and components.
    """
    d = sim.d_theta
    psi_bars, sigma_means = [], []
    with T.no_grad():
        for i, p in enumerate(problems):
            child = rng.child(f"problem-{start_index + i}")
            roll = rollout_batch(f, sim, [p] * n_init, cfg, child,
                                 n_steps=t_test, compute_loss=False)
            psi = roll.psi_values()                      # (T, n_init, 2 d)
            psi_bars.append(psi.mean(axis=1))
            sigma_means.append(np.exp(psi[:, :, d:]).mean(axis=(1, 2)))
    return np.stack(psi_bars, axis=1), np.stack(sigma_means, axis=1)


def marginalized_estimate(f, prob: MetaProblem, n_init, t_test, rng, cfg=None):
    """Final proposal with the initial proposal marginalised out."""
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    sim = get_simulator(prob.simulator)
    cfg = cfg or _eval_config(sim, prob.x_real.shape[0])
    psi_bar, _ = _marginalized_trajectory(f, sim, [prob], cfg, t_test, n_init, rng)
    return ProposalParams(psi_bar[-1, 0])


def _eval_config(sim, m_real):
    d = sim.defaults
    return TrainConfig(epochs=1, iterations=d.iterations, meta_dataset_size=1,
                       meta_batch_size=1, theta_batch=d.theta_batch, x_batch=m_real,
                       learning_rate=d.learning_rate, clip=d.clip)


@dataclass
class EvalReport:
    """Aggregated evaluation results for one trained model."""
    simulator: str
    t_train: int
    t_test: int
    n_init: int
    n_problems: int
    step_rmse_mean: np.ndarray          # (t_test,)
    step_rmse_std: np.ndarray           # (t_test,)
    step_sigma_mean: np.ndarray         # (t_test,)
    theta_star: np.ndarray              # (n_problems, d_theta)
    alfi_rmse: np.ndarray               # (n_problems,)
    mle_rmse: np.ndarray | None         # (n_problems,) where MLE succeeded
    mle_failed: list = field(default_factory=list)   # flagged problem indices
    histograms: list = field(default_factory=list)   # weinberg-only per-problem data
    tv_distances: np.ndarray | None = None
    config: dict | None = None
    step_rmse_median: np.ndarray | None = None      # (t_test,)

    _ARRAYS = ("step_rmse_mean", "step_rmse_std", "step_sigma_mean",
               "theta_star", "alfi_rmse", "mle_rmse", "tv_distances",
               "step_rmse_median")

    def to_dict(self):
        """JSON-serializable form (ndarrays become nested lists)."""
        out = asdict(self)
        for key in self._ARRAYS:
            if out[key] is not None:
                out[key] = np.asarray(out[key]).tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        kwargs = dict(d)
        for key in cls._ARRAYS:
            if kwargs.get(key) is not None:
                kwargs[key] = np.asarray(kwargs[key], dtype=np.float64)
        return cls(**kwargs)


def evaluate(f, sim: Simulator, n_problems, t_test, n_init, rng: RandomSource,
             cfg: TrainConfig | None = None, max_batch_rollouts=1000):
    """Run the full evaluation protocol and collect an EvalReport."""
    cfg = cfg or _eval_config(sim, sim.defaults.x_batch)
    problems = make_meta_dataset(sim, n_problems, cfg.x_batch, rng.child("test-problems"))

    group = max(1, max_batch_rollouts // n_init)
    roll_rng = rng.child("rollouts")
    psi_bars = []
    sigma_means = []
    for start in range(0, n_problems, group):
        chunk = problems[start:start + group]
        psi_bar, sig = _marginalized_trajectory(
            f, sim, chunk, cfg, t_test, n_init, roll_rng, start_index=start)
        psi_bars.append(psi_bar)
        sigma_means.append(sig)
    psi_bar = np.concatenate(psi_bars, axis=1)      # (T, P, 2 d)
    sigma_mean = np.concatenate(sigma_means, axis=1)

    theta_star = np.stack([p.theta_star for p in problems])
    d = sim.d_theta
    step_err = np.linalg.norm(theta_star[None] - psi_bar[:, :, :d], axis=-1)  # (T, P)

    final_mu = psi_bar[-1, :, :d]
    alfi_rmse = step_err[-1]

    mle_rmse = None
    mle_failed = []
    if sim.has_mle:
        mle_rmse = np.full(n_problems, np.nan)
        for i, p in enumerate(problems):
            try:
                est = sim.mle(p.x_real)
                mle_rmse[i] = np.linalg.norm(p.theta_star - est)
            except MLEError:
                mle_failed.append(i)

    histograms = []
    tv = None
    if sim.name == "weinberg":
        tv = np.empty(n_problems)
        edges = np.linspace(-1.0, 1.0, HISTOGRAM_BINS + 1)
        for i, p in enumerate(problems):
            hist_rng = rng.child(f"hist-{i}")
            real = sim.forward(p.theta_star, HISTOGRAM_DRAWS, hist_rng.child("real"))
            gen = sim.forward(final_mu[i], HISTOGRAM_DRAWS, hist_rng.child("gen"), strict=False)
            tv[i] = histogram_distance(real, gen)
            if i < 3:
                rh, _ = np.histogram(real, bins=edges, density=True)
                gh, _ = np.histogram(gen, bins=edges, density=True)
                histograms.append({
                    "theta_star": p.theta_star.tolist(),
                    "theta_hat": final_mu[i].tolist(),
                    "edges": edges.tolist(),
                    "real": rh.tolist(),
                    "generated": gh.tolist(),
                })

    return EvalReport(
        simulator=sim.name, t_train=cfg.iterations, t_test=t_test, n_init=n_init,
        n_problems=n_problems,
        step_rmse_mean=step_err.mean(axis=1), step_rmse_std=step_err.std(axis=1),
        step_rmse_median=np.median(step_err, axis=1),
        step_sigma_mean=sigma_mean.mean(axis=1),
        theta_star=theta_star, alfi_rmse=alfi_rmse, mle_rmse=mle_rmse,
        mle_failed=mle_failed, histograms=histograms, tv_distances=tv,
        config={"iterations": cfg.iterations, "theta_batch": cfg.theta_batch,
                "x_batch": cfg.x_batch, "clip": cfg.clip})


def boxplot_stats(values):
    """Five-number summary with 1.5 IQR whiskers and outliers."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    return {
        "min": float(inside.min()) if inside.size else float(v.min()),
        "q1": float(q1), "median": float(med), "q3": float(q3),
        "max": float(inside.max()) if inside.size else float(v.max()),
        "outliers": [float(x) for x in v[(v < lo_fence) | (v > hi_fence)]],
    }


def write_report(report: EvalReport, outdir):
    """Emit rmse_per_step.csv, final_rmse.csv and report.json into outdir."""
    import os
    os.makedirs(outdir, exist_ok=True)

    with open(os.path.join(outdir, "rmse_per_step.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean", "std"])
        for t in range(report.t_test):
            w.writerow([t + 1, f"{report.step_rmse_mean[t]:.10g}",
                        f"{report.step_rmse_std[t]:.10g}"])

    d = report.theta_star.shape[1]
    with open(os.path.join(outdir, "final_rmse.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["problem_id"] + [f"theta_star_{j}" for j in range(d)] + ["alfi_rmse"]
        if report.mle_rmse is not None:
            header.append("mle_rmse")
        w.writerow(header)
        for i in range(report.n_problems):
            if i in report.mle_failed:
                continue
            row = [i] + [f"{v:.10g}" for v in report.theta_star[i]] \
                + [f"{report.alfi_rmse[i]:.10g}"]
            if report.mle_rmse is not None:
                row.append(f"{report.mle_rmse[i]:.10g}")
            w.writerow(row)

    paired = [i for i in range(report.n_problems) if i not in report.mle_failed]
    summary = {
        "simulator": report.simulator,
        "t_train": report.t_train,
        "t_test": report.t_test,
        "n_init": report.n_init,
        "n_problems": report.n_problems,
        "n_mle_failed": len(report.mle_failed),
        "mle_failed_problems": report.mle_failed,
        "config": report.config,
        "step_rmse_mean": report.step_rmse_mean.tolist(),
        "step_rmse_std": report.step_rmse_std.tolist(),
        "step_rmse_median": None if report.step_rmse_median is None
        else report.step_rmse_median.tolist(),
        "step_sigma_mean": report.step_sigma_mean.tolist(),
        "alfi_boxplot": boxplot_stats(report.alfi_rmse[paired]),
    }
    if report.mle_rmse is not None:
        summary["mle_boxplot"] = boxplot_stats(report.mle_rmse[paired])
        summary["alfi_median_rmse"] = float(np.median(report.alfi_rmse[paired]))
        summary["mle_median_rmse"] = float(np.median(report.mle_rmse[paired]))
    if report.tv_distances is not None:
        summary["tv_distances"] = report.tv_distances.tolist()
        summary["histograms"] = report.histograms
    with open(os.path.join(outdir, "report.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def render_report(outdir):
    """Render SVG figures from a report directory written by write_report."""
    import os
    from . import svg

    with open(os.path.join(outdir, "report.json")) as fh:
        summary = json.load(fh)
    mean = np.asarray(summary["step_rmse_mean"])
    std = np.asarray(summary["step_rmse_std"])
    steps = np.arange(1, mean.size + 1)
    svg.line_with_band(os.path.join(outdir, "rmse_per_step.svg"),
                       steps, mean, std, title=f"{summary['simulator']}: RMSE per step",
                       xlabel="step", ylabel="RMSE")
    boxes = {"alfi": summary["alfi_boxplot"]}
    if "mle_boxplot" in summary:
        boxes["mle"] = summary["mle_boxplot"]
    svg.box_plot(os.path.join(outdir, "final_rmse_boxplot.svg"), boxes,
                 title=f"{summary['simulator']}: final RMSE", ylabel="RMSE")
    written = ["rmse_per_step.svg", "final_rmse_boxplot.svg"]
    for k, h in enumerate(summary.get("histograms", [])):
        name = f"histogram_{k}.svg"
        svg.histogram_pair(os.path.join(outdir, name), h)
        written.append(name)
    return written
