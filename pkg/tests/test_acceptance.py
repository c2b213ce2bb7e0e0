"""Acceptance gate: nine pass/fail criteria for the full pipeline.

Criteria 2-7 read cached desk-scale training/evaluation artifacts produced
by ``tests/desk.py`` (run ``python3 tests/desk.py`` first, or let the first
test invocation train on demand -- that takes a couple of hours on one
core).  Criteria 1, 8 and 9 are self-contained.  Each criterion prints one
``[PASS]``/``[FAIL]`` line; run with ``pytest -s`` to see them as they go.
"""

import time

import numpy as np

import desk
from alfi import tensor as T
from alfi.meta import (default_config, load_model, make_meta_dataset,
                       rollout_batch, save_model, train)
from alfi.nn import RecurrentUpdater, SetEncoder
from alfi.rng import RandomSource
from alfi.selftest import run_selftest
from alfi.simulators import get_simulator
from alfi.tensor import Tensor


def _check(num, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    print(line, flush=True)
    assert ok, line


def _paired_medians(report):
    keep = [i for i in range(report.n_problems) if i not in report.mle_failed]
    return (float(np.median(report.alfi_rmse[keep])),
            float(np.median(report.mle_rmse[keep])))


# -- 1: oracle suites -------------------------------------------------------

def test_criterion_1_oracle_suites():
    t0 = time.perf_counter()
    ok = run_selftest(seed=0, emit=lambda s: None)
    wall = time.perf_counter() - t0
    _check(1, ok and wall < 120.0,
           f"oracle suites {'green' if ok else 'RED'} in {wall:.1f}s (< 120s)")


# -- 2: poisson headline vs MLE --------------------------------------------

def test_criterion_2_poisson_vs_mle():
    report = desk.ensure_evaluated("poisson")
    # the eval runs a 30-step trajectory; per-step randomness depends only on
    # the step label, so step 15 of that run is the T_test=15 protocol
    alfi_med = float(report.step_rmse_median[14])
    keep = [i for i in range(report.n_problems) if i not in report.mle_failed]
    mle_med = float(np.median(report.mle_rmse[keep]))
    ok = alfi_med <= 1.5 * mle_med
    _check(2, ok, f"poisson median RMSE at step 15: {alfi_med:.4f} vs MLE "
           f"{mle_med:.4f} (ratio {alfi_med / mle_med:.2f} <= 1.5), "
           f"{report.n_problems} problems, n_init={report.n_init}")


# -- 3: convergence trend ---------------------------------------------------

def test_criterion_3_poisson_convergence_trend():
    report = desk.ensure_evaluated("poisson")
    mean = report.step_rmse_mean
    halved = mean[14] < 0.5 * mean[0]
    violations = sum(1 for t in range(11) if mean[t + 4] > mean[t])
    ok = halved and violations <= 1
    _check(3, ok, f"poisson mean RMSE step1={mean[0]:.4f} step15={mean[14]:.4f} "
           f"(halved={halved}), {violations} increasing 5-step window(s) (<= 1)")


# -- 4: longer horizons don't hurt -----------------------------------------

def test_criterion_4_horizon_robustness():
    details, ok = [], True
    for name in ("poisson", "multivariate"):
        mean = desk.ensure_evaluated(name).step_rmse_mean
        good = mean[29] <= mean[14] + 0.05
        ok &= good
        details.append(f"{name} step30={mean[29]:.4f} vs step15={mean[14]:.4f}")
    _check(4, ok, "; ".join(details))


# -- 5: multivariate mean and spread both converge -------------------------

def test_criterion_5_multivariate_capacity():
    report = desk.ensure_evaluated("multivariate")
    mean, sigma = report.step_rmse_mean, report.step_sigma_mean
    halved = mean[14] < 0.5 * mean[0]
    shrunk = sigma[14] < sigma[0]
    _check(5, halved and shrunk,
           f"multivariate RMSE step1={mean[0]:.4f} step15={mean[14]:.4f} "
           f"(halved={halved}); sigma step1={sigma[0]:.4f} "
           f"step15={sigma[14]:.4f} (shrunk={shrunk})")


# -- 6: linear regression vs MLE -------------------------------------------

def test_criterion_6_linreg_vs_mle():
    report = desk.ensure_evaluated("linreg")
    alfi_med, mle_med = _paired_medians(report)
    ok = alfi_med <= 2.0 * mle_med
    _check(6, ok, f"linreg median RMSE {alfi_med:.4f} vs MLE {mle_med:.4f} "
           f"(ratio {alfi_med / mle_med:.2f} <= 2.0), "
           f"{len(report.mle_failed)} MLE failure(s) excluded")


# -- 7: weinberg distribution match ----------------------------------------

def test_criterion_7_weinberg_distribution_match():
    report = desk.ensure_evaluated("weinberg")
    tv = report.tv_distances
    frac = float(np.mean(tv < 0.10))

    # sampling-noise floor oracle: TV between two independent draw sets at
    # the same parameter must sit well below the 0.10 acceptance threshold
    from alfi.evaluate import histogram_distance
    sim = get_simulator("weinberg")
    rng = RandomSource(424242)
    floors = []
    for k in range(10):
        theta = sim.prior.sample(1, rng.child(f"theta-{k}"))[0]
        a = sim.forward(theta, 10_000, rng.child(f"a-{k}"))
        b = sim.forward(theta, 10_000, rng.child(f"b-{k}"))
        floors.append(histogram_distance(a, b))
    floor = float(np.median(floors))

    ok = frac >= 0.70 and floor < 0.05
    _check(7, ok, f"weinberg TV<0.10 on {frac:.0%} of {tv.size} problems "
           f"(>= 70%); same-theta noise floor {floor:.3f} (< 0.05)")


# -- 8: structural invariants ----------------------------------------------

def test_criterion_8_structural_invariants(tmp_path):
    rng = RandomSource(88)
    arch = dict(code_dim=8, data_widths=(16,), comb_widths=(16,), comb_dim=8,
                pre_dim=16, hidden_dim=16)
    clip = 0.3
    f = RecurrentUpdater(2, 3, clip=clip, rng=rng.child("w"), **arch)
    # the output layer starts at zero (first update is a no-op), which would
    # make the clip check vacuous -- give it large random weights instead
    f.post.W.data[...] = rng.child("post-w").normal(f.post.W.shape) * 5.0
    f.post.b.data[...] = rng.child("post-b").normal(f.post.b.shape) * 5.0

    # (a) update clipping over 1e5 random evaluations at hostile scales
    P, B, M = 2000, 4, 6
    worst = 0.0
    with T.no_grad():
        for rep in range(50):
            r = rng.child(f"clip-{rep}")
            scale = 10.0 ** r.child("scale").uniform(-2.0, 3.0)
            psi = Tensor(r.child("psi").normal((P, 4)) * scale)
            e_real = f.encoder.encode(r.child("xr").normal((P, M, 3)) * scale)
            e_gen = f.encoder.encode(r.child("xg").normal((P, B, M, 3)) * scale)
            scores = r.child("s").normal((P, B, 4)) * scale
            delta, _ = f.step_batch(psi, f.initial_state(P), e_real, e_gen, scores)
            worst = max(worst, float(np.abs(delta.data).max()))
    ok_clip = worst <= clip + 1e-12

    # (b) exact permutation invariance: set elements and candidate ordering
    with T.no_grad():
        perm_rng = rng.child("perm")
        ok_perm = True
        for d_in, label in ((1, "scalar"), (3, "vector")):
            enc = SetEncoder(d_in, code_dim=8, widths=(16,), rng=perm_rng.child(label))
            X = perm_rng.child(f"{label}-x").normal((5, 12, d_in)) * 7.0
            base = enc.encode(X).data
            for k in range(5):
                p = np.argsort(perm_rng.child(f"{label}-p{k}").uniform(size=(12,)))
                ok_perm &= np.array_equal(base, enc.encode(X[:, p]).data)
        r = perm_rng.child("cand")
        psi = Tensor(r.child("psi").normal((P // 10, 4)))
        e_real = Tensor(r.child("er").normal((P // 10, arch["code_dim"])))
        e_gen_arr = r.child("eg").normal((P // 10, B, arch["code_dim"]))
        scores_arr = r.child("s").normal((P // 10, B, 4))
        base, _ = f.step_batch(psi, f.initial_state(P // 10),
                               e_real, Tensor(e_gen_arr), scores_arr)
        p = np.array([2, 0, 3, 1])
        permuted, _ = f.step_batch(psi, f.initial_state(P // 10),
                                   e_real, Tensor(e_gen_arr[:, p]), scores_arr[:, p])
        ok_perm &= np.array_equal(base.data, permuted.data)

    # (c) one encoder feeds both the observed and the generated data path:
    # mutating its weights must change both encodings
    with T.no_grad():
        xr = rng.child("mr").normal((7, M, 3))
        xg = rng.child("mg").normal((7, B, M, 3))
        er0, eg0 = f.encoder.encode(xr).data.copy(), f.encoder.encode(xg).data.copy()
        w = f.encoder.mlp.layers[0].W
        w.data[0, 0] += 0.37
        er1, eg1 = f.encoder.encode(xr).data, f.encoder.encode(xg).data
        w.data[0, 0] -= 0.37
        ok_share = (not np.array_equal(er0, er1)) and (not np.array_equal(eg0, eg1))

    # (d) checkpoint round-trip is bitwise
    path = tmp_path / "roundtrip.ckpt"
    save_model(f, path, simulator="poisson")
    g, _ = load_model(path)
    params_f, params_g = dict(f.parameters()), dict(g.parameters())
    ok_ckpt = set(params_f) == set(params_g) and all(
        np.array_equal(params_f[n].data, params_g[n].data) for n in params_f)

    # (e) fixed-seed training is bit-reproducible over 2 epochs
    sim = get_simulator("poisson")
    cfg = default_config(sim, epochs=2, meta_dataset_size=8, meta_batch_size=4,
                         iterations=3, theta_batch=2, x_batch=4, seed=777)
    tiny = dict(code_dim=4, data_widths=(6,), comb_widths=(6,), comb_dim=4,
                pre_dim=6, hidden_dim=8)
    fa, _ = train(sim, cfg, arch=tiny, n_val=4)
    fb, _ = train(sim, cfg, arch=tiny, n_val=4)
    ok_repro = all(np.array_equal(pa.data, dict(fb.parameters())[n].data)
                   for n, pa in fa.parameters())

    ok = ok_clip and ok_perm and ok_share and ok_ckpt and ok_repro
    _check(8, ok, f"clip(max|d|={worst:.3f}<= {clip})={ok_clip} "
           f"permutation={ok_perm} shared-encoder={ok_share} "
           f"checkpoint={ok_ckpt} bit-reproducible-training={ok_repro}")


# -- 9: end-to-end gradient on a frozen micro-rollout ----------------------

def test_criterion_9_micro_rollout_gradient():
    sim = get_simulator("poisson")
    cfg = default_config(sim, iterations=3, theta_batch=2, x_batch=4)
    rng = RandomSource(99)
    tiny = dict(code_dim=4, data_widths=(6,), comb_widths=(6,), comb_dim=4,
                pre_dim=6, hidden_dim=8)
    f = RecurrentUpdater(sim.d_theta, sim.d_x, clip=cfg.clip,
                         rng=rng.child("w"), **tiny)
    probs = make_meta_dataset(sim, 1, cfg.x_batch, rng.child("data"))
    recorded = rollout_batch(f, sim, probs, cfg, rng.child("roll"),
                             n_steps=3, record=True)

    def loss_value():
        with T.no_grad():
            return rollout_batch(f, sim, probs, cfg, RandomSource(0),
                                 replay=recorded).total.item()

    replay = rollout_batch(f, sim, probs, cfg, RandomSource(0), replay=recorded)
    replay.total.backward()

    h = 1e-5
    worst = 0.0
    coord_rng = rng.child("coords")
    for name, p in f.parameters():
        if p.grad is None:
            continue
        flat = p.data.reshape(-1)
        n_pick = min(4, flat.size)
        picks = np.argsort(coord_rng.child(name).uniform(size=(flat.size,)))[:n_pick]
        for j in picks:
            orig = flat[j]
            flat[j] = orig + h
            up = loss_value()
            flat[j] = orig - h
            down = loss_value()
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            analytic = p.grad.reshape(-1)[j]
            worst = max(worst, abs(analytic - numeric) / (abs(numeric) + 1e-8))
    _check(9, worst < 1e-4,
           f"frozen micro-rollout (T=3, B=2, M=4) gradient vs finite "
           f"differences: max rel err {worst:.2e} (< 1e-4)")


# -- extra: trained encoder codes track the sample mean --------------------

def test_trained_encoder_code_tracks_poisson_sample_mean():
    f = desk.ensure_trained("poisson")
    sim = get_simulator("poisson")
    rng = RandomSource(515151)
    probs = make_meta_dataset(sim, 200, 20, rng)
    X = np.stack([p.x_real for p in probs])            # (200, 20, 1)
    with T.no_grad():
        codes = f.encoder.encode(X).data               # (200, code_dim)
    means = X.mean(axis=(1, 2))
    corr = np.array([abs(np.corrcoef(codes[:, j], means)[0, 1])
                     for j in range(codes.shape[1])])
    assert np.nanmax(corr) > 0.5
