"""Meta-training: datasets, rollouts, losses, Adam, checkpoints, training."""

import numpy as np
import pytest

from alfi import tensor as T
from alfi import proposal as prop
from alfi.meta import (Adam, CheckpointError, ConfigError, MetaProblem, TrainConfig,
                       default_config, load_model, make_meta_dataset, partial_loss,
                       rollout, rollout_batch, save_model, step_weight, total_loss,
                       total_loss_from_steps, train, write_training_log)
from alfi.nn import RecurrentUpdater
from alfi.proposal import ProposalParams
from alfi.rng import RandomSource
from alfi.simulators import get_simulator
from alfi.tensor import Tensor

TINY_ARCH = dict(code_dim=4, data_widths=(6,), comb_widths=(6,), comb_dim=4,
                 pre_dim=6, hidden_dim=8)


def tiny_setup(sim_name="poisson", seed=0, P=2, **cfg_overrides):
    sim = get_simulator(sim_name)
    over = dict(iterations=4, theta_batch=3, x_batch=5)
    over.update(cfg_overrides)
    cfg = default_config(sim, **over)
    rng = RandomSource(seed)
    f = RecurrentUpdater(sim.d_theta, sim.d_x, clip=cfg.clip,
                         rng=rng.child("weights"), **TINY_ARCH)
    probs = make_meta_dataset(sim, P, cfg.x_batch, rng.child("data"))
    return sim, cfg, f, probs, rng


# -- config -----------------------------------------------------------------

def test_default_config_matches_simulator_tables():
    cfg = default_config(get_simulator("poisson"))
    assert (cfg.epochs, cfg.iterations, cfg.meta_dataset_size) == (300, 15, 10_000)
    assert (cfg.meta_batch_size, cfg.theta_batch, cfg.x_batch) == (16, 20, 20)
    assert (cfg.learning_rate, cfg.clip) == (1e-3, 0.5)
    assert (cfg.weighting, cfg.loss) == ("exponential", "nll")
    wb = default_config(get_simulator("weinberg"))
    assert (wb.theta_batch, wb.x_batch, wb.learning_rate) == (8, 64, 2e-4)


def test_config_validation():
    with pytest.raises(ConfigError):
        default_config(get_simulator("poisson"), epochs=0)
    with pytest.raises(ConfigError):
        default_config(get_simulator("poisson"), weighting="quadratic")
    with pytest.raises(ConfigError):
        default_config(get_simulator("poisson"), loss="huber")


# -- meta dataset -----------------------------------------------------------

def test_meta_dataset_shapes_and_prior_support():
    sim = get_simulator("multivariate")
    probs = make_meta_dataset(sim, 6, 9, RandomSource(1))
    assert len(probs) == 6
    for p in probs:
        assert sim.prior.contains(p.theta_star)
        assert p.x_real.shape == (9, 5)
        assert p.simulator == "multivariate"


def test_meta_dataset_deterministic():
    sim = get_simulator("poisson")
    a = make_meta_dataset(sim, 4, 5, RandomSource(2))
    b = make_meta_dataset(sim, 4, 5, RandomSource(2))
    for pa, pb in zip(a, b):
        np.testing.assert_array_equal(pa.theta_star, pb.theta_star)
        np.testing.assert_array_equal(pa.x_real, pb.x_real)


# -- step weights -----------------------------------------------------------

def test_step_weight_values():
    assert step_weight(15, 15, "exponential") == 1.0
    assert step_weight(15, 15, "final") == 1.0
    assert step_weight(7, 15, "final") == 0.0
    assert step_weight(3, 15, "uniform") == 1.0
    expected = (np.exp(4.0 / 15.0) - 1.0) / (np.exp(4.0) - 1.0)
    assert step_weight(1, 15, "exponential", beta=4.0) == pytest.approx(expected)
    assert expected == pytest.approx(0.00571, abs=5e-5)


def test_step_weight_beta_zero_limit():
    # analytic limit of (e^(beta t/T) - 1)/(e^beta - 1) as beta -> 0 is t/T
    assert step_weight(3, 15, "exponential", beta=0.0) == pytest.approx(0.2)
    assert step_weight(3, 15, "exponential", beta=1e-9) == pytest.approx(0.2, rel=1e-6)


def test_step_weight_monotone_in_t():
    w = [step_weight(t, 15, "exponential") for t in range(1, 16)]
    assert all(a < b for a, b in zip(w, w[1:]))


def test_step_weight_range_validation():
    with pytest.raises(ConfigError):
        step_weight(0, 15, "uniform")
    with pytest.raises(ConfigError):
        step_weight(16, 15, "uniform")


# -- partial and total loss -------------------------------------------------

def test_mse_loss_zero_at_truth():
    pp = ProposalParams.from_arrays([1.0, 2.0], [0.3, 0.3])
    assert partial_loss(pp, np.array([1.0, 2.0]), "mse").item() == 0.0


def test_nll_loss_at_mode_unit_sigma():
    pp = ProposalParams.from_arrays([0.5], [0.0])
    val = partial_loss(pp, np.array([0.5]), "nll").item()
    assert val == pytest.approx(0.5 * np.log(2 * np.pi), abs=1e-12)


def test_nll_decreases_as_sigma_shrinks_at_mode():
    theta = np.array([1.0])
    wide = partial_loss(ProposalParams.from_arrays([1.0], [0.5]), theta, "nll").item()
    narrow = partial_loss(ProposalParams.from_arrays([1.0], [-0.5]), theta, "nll").item()
    assert narrow < wide


def test_total_loss_uniform_equal_steps():
    pp = ProposalParams.from_arrays([[0.0]], [[0.0]])
    theta = np.array([[1.0]])
    losses = [partial_loss(pp, theta, "mse") for _ in range(5)]
    total = total_loss_from_steps(losses, "uniform", 4.0)
    assert total.item() == pytest.approx(5.0 * 1.0)


def test_total_loss_final_scheme_keeps_last_step():
    theta = np.array([[0.0]])
    losses = [partial_loss(ProposalParams.from_arrays([[float(k)]], [[0.0]]), theta, "mse")
              for k in range(4)]
    total = total_loss_from_steps(losses, "final", 4.0)
    assert total.item() == pytest.approx(9.0)  # only psi_T (mu=3) counts


# -- rollouts ---------------------------------------------------------------

def test_rollout_zero_init_post_layer_keeps_psi_fixed():
    sim, cfg, f, probs, rng = tiny_setup()
    roll = rollout(f, probs[0], cfg, rng.child("r"))
    psis = roll.psi_values()
    assert psis.shape[0] == cfg.iterations
    for t in range(1, psis.shape[0]):
        np.testing.assert_array_equal(psis[t], psis[0])


def test_rollout_step_sizes_respect_clip():
    sim, cfg, f, probs, rng = tiny_setup(seed=3)
    r2 = RandomSource(33)
    f.post.W = Tensor(r2.normal((f.hidden_dim, f.d_psi)) * 10.0, requires_grad=True)
    f.post.b = Tensor(r2.normal((f.d_psi,)), requires_grad=True)
    roll = rollout(f, probs[0], cfg, rng.child("r"))
    psis = roll.psi_values()
    deltas = np.abs(np.diff(psis, axis=0))
    assert np.max(deltas) <= cfg.clip + 1e-15
    assert np.max(np.abs(psis[-1] - psis[0])) <= (cfg.iterations - 1) * cfg.clip


def test_rollout_prefix_stability_across_horizons():
    # the step-t child streams do not depend on the total horizon, so a
    # longer rollout extends a shorter one without changing its prefix
    sim, cfg, f, probs, rng = tiny_setup(seed=4)
    f.post.W = Tensor(RandomSource(44).normal((f.hidden_dim, f.d_psi)), requires_grad=True)
    short = rollout_batch(f, sim, probs, cfg, RandomSource(9), n_steps=3)
    long = rollout_batch(f, sim, probs, cfg, RandomSource(9), n_steps=6)
    np.testing.assert_array_equal(short.psi_values(), long.psi_values()[:3])


def test_rollout_deterministic_under_seed():
    sim, cfg, f, probs, rng = tiny_setup(seed=5)
    a = rollout_batch(f, sim, probs, cfg, RandomSource(10))
    b = rollout_batch(f, sim, probs, cfg, RandomSource(10))
    np.testing.assert_array_equal(a.psi_values(), b.psi_values())
    assert a.total.item() == b.total.item()


def test_rollout_batch_matches_single_problem_rollouts():
    sim, cfg, f, probs, rng = tiny_setup(seed=6, P=1)
    batch = rollout_batch(f, sim, probs, cfg, RandomSource(11))
    single = rollout(f, probs[0], cfg, RandomSource(11))
    np.testing.assert_allclose(batch.psi_values()[:, 0], single.psi_values()[:, 0],
                               atol=1e-12)


def test_gradients_do_not_reach_sampled_values():
    sim, cfg, f, probs, _ = tiny_setup(seed=7)
    roll = rollout_batch(f, sim, probs, cfg, RandomSource(12), record=True)
    roll.total.backward()
    # recorded candidate draws and simulated data are plain arrays (detached)
    for step in roll.steps:
        assert isinstance(step.theta, np.ndarray)
        assert isinstance(step.x_gen, np.ndarray)
        assert isinstance(step.scores, np.ndarray)
    # and the updater weights did receive gradient
    assert any(p.grad is not None and np.any(p.grad) for _, p in f.parameters())


def _slice_rollout(recorded, i):
    from alfi.meta import Rollout, RolloutStep
    first = ProposalParams(Tensor(recorded.psis[0].psi.data[i:i + 1].copy()))
    steps = [RolloutStep(s.theta[i:i + 1], s.x_gen[i:i + 1], s.scores[i:i + 1],
                         None if s.mask is None else s.mask[i:i + 1])
             for s in recorded.steps]
    return Rollout([first], [], [], None, steps)


def test_meta_batch_gradient_is_mean_of_per_problem_gradients():
    sim, cfg, f, probs, _ = tiny_setup(seed=8, P=2)
    f.post.W = Tensor(RandomSource(88).normal((f.hidden_dim, f.d_psi)), requires_grad=True)
    recorded = rollout_batch(f, sim, probs, cfg, RandomSource(13), record=True)
    recorded.total.backward()
    batch_grads = {n: p.grad.copy() for n, p in f.parameters()}
    for _, p in f.parameters():
        p.grad = None
    for i in range(2):
        replay = rollout_batch(f, sim, [probs[i]], cfg, RandomSource(0),
                               replay=_slice_rollout(recorded, i))
        replay.total.backward()
    for n, p in f.parameters():
        np.testing.assert_allclose(p.grad / 2.0, batch_grads[n], atol=1e-12,
                                   err_msg=n)


def test_replay_reproduces_rollout_and_freezes_randomness():
    sim, cfg, f, probs, _ = tiny_setup(seed=9)
    recorded = rollout_batch(f, sim, probs, cfg, RandomSource(14), record=True)
    replayed = rollout_batch(f, sim, probs, cfg, RandomSource(999), replay=recorded)
    np.testing.assert_array_equal(recorded.psi_values(), replayed.psi_values())
    assert replayed.total.item() == pytest.approx(recorded.total.item(), rel=1e-12)


def test_linreg_candidate_masking_survives_singularities():
    # near the tan singularity candidates can be invalid; the rollout must
    # mask them rather than abort
    sim, cfg, f, probs, _ = tiny_setup("linreg", seed=10)
    roll = rollout_batch(f, sim, probs, cfg, RandomSource(15))
    assert np.all(np.isfinite(roll.psi_values()))


# -- Adam -------------------------------------------------------------------

def test_adam_first_step_magnitude():
    p = Tensor(np.zeros(4), requires_grad=True)
    opt = Adam([p], lr=0.01)
    p.grad = np.array([5.0, -3.0, 0.5, -0.1])
    opt.step()
    np.testing.assert_allclose(p.data, -0.01 * np.sign(p.grad), rtol=1e-6)


def test_adam_zero_gradient_keeps_weights():
    p = Tensor(np.ones(3), requires_grad=True)
    opt = Adam([p], lr=0.1)
    for _ in range(5):
        p.grad = np.zeros(3)
        opt.step()
    np.testing.assert_array_equal(p.data, np.ones(3))


def test_adam_constant_gradient_displacement():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([p], lr=0.01)
    for _ in range(100):
        p.grad = np.array([1.0, -2.0])
        opt.step()
    np.testing.assert_allclose(p.data, [-1.0, 1.0], rtol=0.01)


def test_adam_skips_nonfinite_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([np.nan, 1.0])
    assert opt.step() is False
    assert opt.skipped == 1
    np.testing.assert_array_equal(p.data, np.zeros(2))


# -- training ---------------------------------------------------------------

def test_training_smoke_loss_decreases():
    sim = get_simulator("poisson")
    cfg = default_config(sim, epochs=5, meta_dataset_size=32, iterations=4,
                         theta_batch=4, x_batch=5, seed=21)
    f, logs = train(sim, cfg, arch=TINY_ARCH, n_val=8)
    assert len(logs) == 5
    assert logs[-1].mean_loss < logs[0].mean_loss
    assert all(np.isfinite(row.val_rmse) for row in logs)


def test_training_is_bit_reproducible():
    sim = get_simulator("poisson")
    cfg = default_config(sim, epochs=2, meta_dataset_size=16, iterations=3,
                         theta_batch=3, x_batch=4, seed=22)
    f1, logs1 = train(sim, cfg, arch=TINY_ARCH, n_val=4)
    f2, logs2 = train(sim, cfg, arch=TINY_ARCH, n_val=4)
    for (_, p1), (_, p2) in zip(f1.parameters(), f2.parameters()):
        np.testing.assert_array_equal(p1.data, p2.data)
    assert [r.mean_loss for r in logs1] == [r.mean_loss for r in logs2]


def test_training_log_csv_format(tmp_path):
    sim = get_simulator("poisson")
    cfg = default_config(sim, epochs=2, meta_dataset_size=16, iterations=3,
                         theta_batch=3, x_batch=4, seed=23)
    _, logs = train(sim, cfg, arch=TINY_ARCH, n_val=4)
    path = tmp_path / "log.csv"
    write_training_log(logs, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,mean_loss,val_rmse,wall_time"
    assert len(lines) == 3


# -- checkpointing ----------------------------------------------------------

def test_checkpoint_round_trip_bitwise(tmp_path):
    sim, cfg, f, probs, _ = tiny_setup(seed=30)
    f.post.W = Tensor(RandomSource(31).normal((f.hidden_dim, f.d_psi)), requires_grad=True)
    path = tmp_path / "model.ckpt"
    save_model(f, path, simulator="poisson", config=cfg)
    g, manifest = load_model(path)
    assert manifest["simulator"] == "poisson"
    assert manifest["config"]["iterations"] == cfg.iterations
    for (n1, p1), (n2, p2) in zip(f.parameters(), g.parameters()):
        assert n1 == n2
        np.testing.assert_array_equal(p1.data, p2.data)
    a = rollout_batch(f, sim, probs, cfg, RandomSource(32))
    b = rollout_batch(g, sim, probs, cfg, RandomSource(32))
    np.testing.assert_array_equal(a.psi_values(), b.psi_values())


def test_checkpoint_truncation_detected(tmp_path):
    sim, cfg, f, _, _ = tiny_setup(seed=33)
    path = tmp_path / "model.ckpt"
    save_model(f, path)
    blob = path.read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(blob[:len(blob) // 2])
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "cut.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "junk.ckpt")


def test_checkpoint_simulator_dimension_mismatch(tmp_path):
    sim, cfg, f, _, _ = tiny_setup(seed=34)  # poisson model, d_theta = 1
    path = tmp_path / "model.ckpt"
    save_model(f, path, simulator="poisson", config=cfg)
    g, manifest = load_model(path)
    other = get_simulator("multivariate")
    assert g.d_theta != other.d_theta  # dimensions cannot silently mix
