"""Meta-training of the recurrent updater.

A rollout runs the updater for T steps on one inference problem: at each step
it samples candidate parameters from the current proposal, simulates a batch
of observations per candidate, encodes everything, and applies the update.
Gradients flow only through the proposal-parameter chain and the GRU hidden
state; sampled candidates, simulated data and score features are detached
inputs.  The weighted sum of per-step losses is minimised with Adam across a
meta-dataset of problems with known true parameters.
"""

from __future__ import annotations

import csv
import json
import struct
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import proposal as prop
from . import tensor as T
from .nn import RecurrentUpdater
from .rng import RandomSource
from .simulators import Simulator, SimulationError, get_simulator
from .tensor import Tensor

WEIGHTINGS = ("final", "uniform", "exponential")
LOSSES = ("nll", "mse")

CHECKPOINT_MAGIC = b"ALFICKPT"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    """Hyperparameters of one training run (defaults vary by simulator)."""
    epochs: int
    iterations: int
    meta_dataset_size: int
    meta_batch_size: int
    theta_batch: int
    x_batch: int
    learning_rate: float
    clip: float
    weighting: str = "exponential"
    beta: float = 4.0
    loss: str = "nll"
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "iterations", "meta_dataset_size", "meta_batch_size",
                     "theta_batch", "x_batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive count")
        if self.learning_rate <= 0 or self.clip <= 0:
            raise ConfigError("learning_rate and clip must be positive")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"weighting must be one of {WEIGHTINGS}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")


def default_config(sim: Simulator, **overrides) -> TrainConfig:
    d = sim.defaults
    base = dict(epochs=d.epochs, iterations=d.iterations,
                meta_dataset_size=d.meta_dataset_size, meta_batch_size=d.meta_batch_size,
                theta_batch=d.theta_batch, x_batch=d.x_batch,
                learning_rate=d.learning_rate, clip=d.clip)
    unknown = set(overrides) - set(TrainConfig.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class MetaProblem:
    """One inference problem: true parameters and their real observations."""
    theta_star: np.ndarray
    x_real: np.ndarray
    simulator: str
    seed: str


def make_meta_dataset(sim: Simulator, n, m_real, rng: RandomSource):
    """Draw n problems from the prior and simulate m_real observations each."""
    if n < 1:
        raise ConfigError("meta-dataset size must be >= 1")
    thetas = sim.prior.sample(n, rng.child("theta-star"))
    xs = sim.forward(thetas, m_real, rng.child("observations"))
    return [MetaProblem(thetas[i], xs[i], sim.name, f"problem-{i}") for i in range(n)]


def step_weight(t, T_total, scheme, beta=4.0):
    """Weight of the step-t partial loss in the total loss."""
    if not 1 <= t <= T_total:
        raise ConfigError(f"step index {t} outside [1, {T_total}]")
    if scheme == "final":
        return 1.0 if t == T_total else 0.0
    if scheme == "uniform":
        return 1.0
    if scheme == "exponential":
        x = t / T_total
        if abs(beta) < 1e-12:
            return x  # analytic beta -> 0 limit of (e^(beta x) - 1)/(e^beta - 1)
        return float(np.expm1(beta * x) / np.expm1(beta))
    raise ConfigError(f"unknown weighting scheme {scheme!r}")


def partial_loss(pp: prop.ProposalParams, theta_star, tag):
    """Per-step loss comparing a proposal against the true parameters.

    mse: squared distance between the proposal mean and theta_star.
    nll: negative log-density of the proposal at theta_star.
    Returns a Tensor with the proposal's batch shape.
    """
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if tag == "mse":
        diff = T.add(pp.mu_tensor(), Tensor(-theta_star))
        return T.tsum(T.square(diff), axis=pp.psi.data.ndim - 1)
    if tag == "nll":
        return T.mul(prop.log_density(theta_star, pp), -1.0)
    raise ConfigError(f"unknown partial loss {tag!r}")


@dataclass
class RolloutStep:
    """Frozen per-step draws, kept for replay-based gradient checking."""
    theta: np.ndarray        # (P, B, d_theta)
    x_gen: np.ndarray        # (P, B, M, d_x)
    scores: np.ndarray       # (P, B, 2 d_theta)
    mask: np.ndarray | None  # (P, B) candidate weights, None if all valid


@dataclass
class Rollout:
    """Trajectory of proposals with losses for a batch of problems."""
    psis: list                      # T ProposalParams, psi Tensor (P, 2 d)
    hidden: list                    # T Tensors (P, hidden_dim)
    step_losses: list               # T Tensors (P,)
    total: Tensor | None            # scalar Tensor
    steps: list = field(default_factory=list)  # T-1 RolloutSteps when recorded

    @property
    def horizon(self):
        return len(self.psis)

    def psi_values(self):
        return np.stack([p.psi.data for p in self.psis])


def _sample_candidates(sim, pp, B, rng):
    """Candidate draws with the resample-once-then-mask failure policy."""
    theta = prop.sample_proposal(pp, B, rng.child("theta"))
    P = theta.shape[0]
    flat = theta.reshape(P * B, -1)
    valid = sim.valid_params(flat)
    mask = None
    if not valid.all():
        redraw = prop.sample_proposal(pp, B, rng.child("resample")).reshape(P * B, -1)
        flat[~valid] = redraw[~valid]
        valid = sim.valid_params(flat)
        if not valid.all():
            flat[~valid] = sim.safe_params()
            mask = valid.reshape(P, B).astype(np.float64)
            if not mask.any(axis=1).all():
                raise SimulationError("all candidates failed for a problem at one step")
    return flat.reshape(P, B, -1), mask


def _simulate(sim, theta_flat, M, rng):
    if sim.name == "weinberg":
        return sim.forward(theta_flat, M, rng, strict=False)
    return sim.forward(theta_flat, M, rng)


def rollout_batch(f: RecurrentUpdater, sim: Simulator, problems, cfg: TrainConfig,
                  rng: RandomSource, n_steps=None, record=False, replay: Rollout | None = None,
                  compute_loss=True, keep_psis=True):
    """Run the updater over a batch of problems sharing one simulator.

    ``replay`` re-runs a recorded rollout on frozen candidate draws, simulated
    data and score features, making the result a deterministic function of
    the updater weights alone (the basis of the end-to-end gradient check).
    """
    P = len(problems)
    B, M = cfg.theta_batch, cfg.x_batch
    T_total = n_steps or cfg.iterations
    x_real = np.stack([p.x_real for p in problems])
    theta_star = np.stack([p.theta_star for p in problems])

    e_real = f.encoder.encode(x_real)  # encoded once; X^r is constant per rollout
    if replay is not None:
        pp = prop.ProposalParams(replay.psis[0].psi.data.copy())
    else:
        pp = prop.init_proposal(sim.prior, rng.child("init"), batch=P)
    state = f.initial_state(P)

    psis = [pp]
    hidden = [state]
    steps = []
    for t in range(1, T_total):
        if replay is not None:
            frozen = replay.steps[t - 1]
            theta, x_gen, scores, mask = frozen.theta, frozen.x_gen, frozen.scores, frozen.mask
        else:
            step_rng = rng.child(f"step-{t}")
            theta, mask = _sample_candidates(sim, pp, B, step_rng)
            x_gen = _simulate(sim, theta.reshape(P * B, -1), M,
                              step_rng.child("simulate")).reshape(P, B, M, sim.d_x)
            scores = prop.score(theta, pp)
        e_gen = f.encoder.encode(x_gen)
        delta, state = f.step_batch(pp.psi, state, e_real, e_gen, scores, mask=mask)
        pp = prop.ProposalParams(T.add(pp.psi, delta))
        if keep_psis:
            psis.append(pp)
            hidden.append(state)
        else:
            psis[-1], hidden[-1] = pp, state
        if record and replay is None:
            steps.append(RolloutStep(theta, x_gen, scores, mask))

    losses, total = [], None
    if compute_loss:
        for t, p in enumerate(psis, start=1):
            losses.append(partial_loss(p, theta_star, cfg.loss))
        total = total_loss_from_steps(losses, cfg.weighting, cfg.beta)
    return Rollout(psis, hidden, losses, total, steps)


def total_loss_from_steps(step_losses, scheme, beta):
    """Mean over problems of the weighted sum of per-step losses."""
    T_total = len(step_losses)
    acc = None
    for t, loss in enumerate(step_losses, start=1):
        w = step_weight(t, T_total, scheme, beta)
        if w == 0.0:
            continue
        term = T.mul(loss, w)
        acc = term if acc is None else T.add(acc, term)
    return T.mean(acc)


def total_loss(roll: Rollout, theta_star, scheme, beta, tag):
    """Recompute the weighted total loss of a finished rollout."""
    theta_star = np.asarray(theta_star, dtype=np.float64)
    losses = [partial_loss(p, theta_star, tag) for p in roll.psis]
    return total_loss_from_steps(losses, scheme, beta)


def rollout(f, prob: MetaProblem, cfg: TrainConfig, rng, n_steps=None, record=False):
    """Single-problem rollout (batch of one)."""
    sim = get_simulator(prob.simulator)
    return rollout_batch(f, sim, [prob], cfg, rng, n_steps=n_steps, record=record)


class Adam:
    """Adam with bias correction; steps with non-finite gradients are skipped."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0
        self.skipped = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if not all(np.all(np.isfinite(g)) for g in grads):
            self.skipped += 1
            return False
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return True


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    val_rmse: float
    wall_time: float


def _validation_rmse(f, sim, problems, cfg, rng):
    """Worst final RMSE over the trained horizon and twice that horizon.

    Selecting checkpoints on the doubled horizon keeps models whose update
    rule stays put after the proposal has converged, instead of ones that
    drift once they run past the horizon they were trained on.
    """
    with T.no_grad():
        roll = rollout_batch(f, sim, problems, cfg, rng,
                             n_steps=2 * cfg.iterations, compute_loss=False,
                             keep_psis=True)
    theta_star = np.stack([p.theta_star for p in problems])

    def final_rmse(pp):
        return float(np.mean(np.linalg.norm(theta_star - pp.mu, axis=-1)))

    return max(final_rmse(roll.psis[cfg.iterations]), final_rmse(roll.psis[-1]))


def train(sim: Simulator, cfg: TrainConfig, arch=None, n_val=64, progress=None):
    """Meta-train an updater on the simulator; returns (updater, epoch logs).

    ``arch`` optionally overrides RecurrentUpdater width arguments.  The
    returned updater carries the weights of the best validation epoch.
    """
    rng = RandomSource(cfg.seed)
    dataset = make_meta_dataset(sim, cfg.meta_dataset_size, cfg.x_batch, rng.child("train-data"))
    val = make_meta_dataset(sim, n_val, cfg.x_batch, rng.child("val-data"))

    f = RecurrentUpdater(sim.d_theta, sim.d_x, clip=cfg.clip,
                         rng=rng.child("weights"), **(arch or {}))
    params = [p for _, p in f.parameters()]
    adam = Adam(params, cfg.learning_rate)

    logs = []
    best = None
    bad_streak = 0
    start = time.monotonic()
    n = len(dataset)
    bs = cfg.meta_batch_size
    for epoch in range(1, cfg.epochs + 1):
        order = rng.child(f"shuffle-{epoch}").permutation(n)
        epoch_losses = []
        for bi in range(0, n, bs):
            batch = [dataset[i] for i in order[bi:bi + bs]]
            roll = rollout_batch(f, sim, batch, cfg, rng.child(f"roll-{epoch}-{bi}"),
                                 keep_psis=True)
            loss = roll.total.item()
            epoch_losses.append(loss)
            if not np.isfinite(loss):
                bad_streak += 1
                if bad_streak >= 3:
                    raise TrainingDiverged(
                        f"non-finite loss for {bad_streak} consecutive meta-batches "
                        f"(epoch {epoch}, last losses {epoch_losses[-3:]})")
                continue
            bad_streak = 0
            adam.zero_grad()
            roll.total.backward()
            adam.step()
        val_rmse = _validation_rmse(f, sim, val, cfg, rng.child(f"val-{epoch}"))
        row = EpochLog(epoch, float(np.mean(epoch_losses)), val_rmse,
                       time.monotonic() - start)
        logs.append(row)
        if best is None or val_rmse < best[0]:
            best = (val_rmse, [p.data.copy() for p in params])
        if progress is not None:
            progress(row)
    if best is not None:
        for p, w in zip(params, best[1]):
            p.data[...] = w
    return f, logs


def write_training_log(logs, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss", "val_rmse", "wall_time"])
        for row in logs:
            writer.writerow([row.epoch, f"{row.mean_loss:.10g}",
                             f"{row.val_rmse:.10g}", f"{row.wall_time:.3f}"])


# -- checkpointing -----------------------------------------------------------

def save_model(f: RecurrentUpdater, path, simulator="", config=None):
    """Single-file checkpoint: JSON manifest + raw little-endian float64."""
    entries = []
    blobs = []
    offset = 0
    for name, p in f.parameters():
        data = np.ascontiguousarray(p.data, dtype="<f8")
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    manifest = {
        "version": CHECKPOINT_VERSION,
        "simulator": simulator,
        "config": asdict(config) if config is not None else None,
        "arch": f.arch(),
        "weights": entries,
        "payload_bytes": offset,
    }
    raw = json.dumps(manifest).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)


def load_model(path):
    """Rebuild an updater from a checkpoint; returns (updater, manifest)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        header = fh.read(4)
        if len(header) < 4:
            raise CheckpointError(f"{path}: truncated header")
        (mlen,) = struct.unpack("<I", header)
        raw = fh.read(mlen)
        if len(raw) < mlen:
            raise CheckpointError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(raw)
        except json.JSONDecodeError as err:
            raise CheckpointError(f"{path}: corrupt manifest") from err
        if manifest.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: expected version {CHECKPOINT_VERSION}, found {manifest.get('version')}")
        payload = fh.read()
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(
            f"{path}: expected {manifest['payload_bytes']} payload bytes, found {len(payload)}")
    arch = dict(manifest["arch"])
    arch["data_widths"] = tuple(arch["data_widths"])
    arch["comb_widths"] = tuple(arch["comb_widths"])
    f = RecurrentUpdater(rng=None, **arch)
    named = dict(f.parameters())
    for entry in manifest["weights"]:
        p = named.get(entry["name"])
        if p is None:
            raise CheckpointError(f"{path}: unknown weight entry {entry['name']!r}")
        shape = tuple(entry["shape"])
        if shape != p.data.shape:
            raise CheckpointError(
                f"{path}: weight {entry['name']!r} has shape {shape}, expected {p.data.shape}")
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        vals = np.frombuffer(payload, dtype="<f8", count=count, offset=start)
        p.data[...] = vals.reshape(shape)
    return f, manifest
