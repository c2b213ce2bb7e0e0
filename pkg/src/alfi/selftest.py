"""Built-in oracle suites: gradient checks, sampler statistics, MLE consistency.

These are the independent checks behind the library's correctness claims,
runnable outside pytest via the ``selftest`` CLI subcommand.
"""

from __future__ import annotations

import numpy as np

from . import proposal as prop
from . import tensor as T
from .nn import DenseLayer, GruCell, RecurrentUpdater, SetEncoder
from .rng import Exponential, Poisson, RandomSource, Uniform, sample
from .simulators import get_simulator
from .tensor import Tensor, grad_check


def _op_suite(rng):
    """grad_check over 50 random instances of every differentiable op."""
    def cases(const):
        # row sums bounded away from zero: the gradient of sum(x @ mat) is the
        # row-sum vector, and a near-zero coordinate makes the relative
        # finite-difference error meaningless
        mat = np.linspace(0.2, 2.0, 15).reshape(5, 3)
        return {
            "add": lambda x: T.tsum(T.mul(T.add(x, const), 0.7)),
            "mul": lambda x: T.tsum(T.mul(x, const)),
            "div": lambda x: T.tsum(T.div(x, np.abs(const) + 0.5)),
            "matmul": lambda x: T.tsum(T.matmul(T.reshape(x, (4, 5)), Tensor(mat))),
            "sigmoid": lambda x: T.tsum(T.sigmoid(x)),
            "tanh": lambda x: T.tsum(T.tanh(x)),
            "relu": lambda x: T.tsum(T.relu(T.add(x, 0.05))),
            "exp": lambda x: T.tsum(T.exp(x)),
            "log": lambda x: T.tsum(T.log(T.add(T.square(x), 1.0))),
            "square": lambda x: T.tsum(T.square(x)),
            "mean": lambda x: T.mean(T.mul(x, const)),
            "concat": lambda x: T.tsum(T.square(T.concat([x, T.mul(x, 2.0)], axis=-1))),
            "slice": lambda x: T.tsum(T.square(x[2:14])),
            "tile": lambda x: T.tsum(T.square(T.tile_axis(T.reshape(x, (4, 5)), 1, 3))),
            "clamp": lambda x: T.tsum(T.clamp(x, -0.4, 0.4)),
        }
    worst = {name: 0.0 for name in cases(np.zeros(20))}
    for _ in range(50):
        const = rng.normal(20)
        for name, fn in cases(const).items():
            at = rng.uniform(-1.0, 1.0, 20)
            if name == "clamp":  # keep away from the kink where FD is invalid
                kink = np.abs(np.abs(at) - 0.4) < 1e-3
                at[kink] = 0.0
            worst[name] = max(worst[name], grad_check(fn, at))
    bad = {k: v for k, v in worst.items() if v >= 1e-5}
    return not bad, f"max rel err {max(worst.values()):.2e}" + (f" FAIL {bad}" if bad else "")


def _proposal_suite(rng):
    """Closed-form score versus finite differences of the log-density."""
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 4))
        theta = rng.normal(d) * 2.0
        psi = rng.uniform(-1.0, 1.0, 2 * d)

        def f(x):
            return prop.log_density(theta, prop.ProposalParams(x))

        analytic = prop.score(theta, prop.ProposalParams(psi))
        x = Tensor(psi, requires_grad=True)
        f(x).backward()
        worst = max(worst, float(np.max(np.abs(analytic - x.grad) / (np.abs(x.grad) + 1e-8))))
        worst = max(worst, grad_check(f, psi, step=1e-6))
    return worst < 1e-6, f"max rel err {worst:.2e}"


def _sampler_suite(rng):
    """Empirical moments against analytic moments within 3 sigma MC bounds."""
    n = 100_000
    checks = []
    mean = sample(Poisson(1.0), n, rng.child("poisson-unit")).mean()
    checks.append(("poisson(1) mean", abs(mean - 1.0), 3.0 * np.sqrt(1.0 / n)))
    lam = float(np.exp(4.0))  # exercises the large-rate branch
    big = sample(Poisson(lam), n, rng.child("poisson-big"))
    checks.append((f"poisson({lam:.0f}) mean", abs(big.mean() - lam), 3.0 * np.sqrt(lam / n)))
    u = sample(Uniform(-1.0, 1.0), n, rng.child("uniform"))
    checks.append(("uniform(-1,1) mean", abs(u.mean()), 3.0 * (2.0 / np.sqrt(12.0)) / np.sqrt(n)))
    e = sample(Exponential(0.5), n, rng.child("exponential"))
    checks.append(("exponential(0.5) mean", abs(e.mean() - 2.0), 3.0 * 2.0 / np.sqrt(n)))
    z = prop.sample_proposal(prop.ProposalParams(np.array([0.0, 0.5])), n, rng.child("prop"))
    sd = float(np.exp(0.5))
    checks.append(("proposal std", abs(z.std() - sd), 3.0 * sd / np.sqrt(2.0 * n)))
    bad = [c for c in checks if c[1] >= c[2]]
    detail = "; ".join(f"{name} dev {dev:.2e} bound {bound:.2e}" for name, dev, bound in bad) \
        or f"{len(checks)} moment checks in bounds"
    return not bad, detail


def _mle_suite(rng):
    """Median estimation error shrinks as the sample size grows."""
    sizes = (100, 1_000, 10_000)
    trials = 50
    results = {}
    for name in ("poisson", "linreg", "multivariate"):
        sim = get_simulator(name)
        medians = []
        for m in sizes:
            errs = []
            for k in range(trials):
                r = rng.child(f"{name}-{m}-{k}")
                theta = sim.prior.sample(1, r.child("theta"))[0]
                X = sim.forward(theta, m, r.child("x"))
                errs.append(np.linalg.norm(sim.mle(X) - theta))
            medians.append(float(np.median(errs)))
        results[name] = medians
    bad = {k: v for k, v in results.items() if not (v[0] > v[1] > v[2])}
    return not bad, f"median errors {results}" + (f" NOT MONOTONE {bad}" if bad else "")


def _structure_suite(rng):
    """Cheap structural invariants: clipping, permutation invariance, sharing."""
    r = RandomSource(7)
    f = RecurrentUpdater(2, 3, clip=0.25, rng=r.child("w"), code_dim=8,
                         data_widths=(16,), comb_widths=(16,), comb_dim=8,
                         pre_dim=16, hidden_dim=16)
    P, B = 64, 5
    with T.no_grad():
        psi = Tensor(r.child("psi").normal((P, 4)) * 3.0)
        h = f.initial_state(P)
        e_real = f.encoder.encode(r.child("xr").normal((P, 6, 3)) * 10.0)
        e_gen = f.encoder.encode(r.child("xg").normal((P, B, 6, 3)) * 10.0)
        scores = r.child("s").normal((P, B, 4)) * 20.0
        delta, _ = f.step_batch(psi, h, e_real, e_gen, scores)
        ok_clip = float(np.abs(delta.data).max()) <= 0.25 + 1e-12

        enc = SetEncoder(3, code_dim=8, widths=(16,), rng=r.child("enc"))
        X = r.child("obs").normal((10, 3))
        a = enc.encode(X).data
        b = enc.encode(X[::-1].copy()).data
        ok_perm = np.array_equal(a, b)
    ok = ok_clip and ok_perm
    return ok, f"clip={ok_clip} permutation={ok_perm}"


SUITES = [
    ("autodiff gradient checks", _op_suite),
    ("proposal score vs finite differences", _proposal_suite),
    ("sampler moments", _sampler_suite),
    ("MLE consistency", _mle_suite),
    ("structural invariants", _structure_suite),
]


def run_selftest(seed=0, emit=print):
    """Run every oracle suite; returns True iff all pass."""
    rng = RandomSource(seed)
    all_ok = True
    for name, fn in SUITES:
        ok, detail = fn(rng.child(name))
        all_ok &= ok
        emit(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return all_ok
