"""Neural building blocks: dense layers, a GRU cell, the permutation-invariant
set encoder, and their composition into the recurrent proposal updater.

All forward passes accept a leading batch axis so that many inference problems
(and many candidate parameters per problem) are processed with a handful of
large matrix multiplies.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class EmptyInputError(ValueError):
    """Raised when a set encoder receives an empty observation set."""


_ACTIVATIONS = {
    "identity": lambda x: x,
    "relu": T.relu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
}

# (forward, derivative-as-a-function-of-the-output) pairs for the fused dense op
_AFFINE_ACTIVATIONS = {
    "identity": None,
    "relu": (lambda x: np.maximum(x, 0.0), lambda out: out > 0.0),
    "tanh": (np.tanh, lambda out: 1.0 - out * out),
    "sigmoid": (lambda x: 1.0 / (1.0 + np.exp(-x)), lambda out: out * (1.0 - out)),
}


def _uniform_init(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    if rng is None:
        return np.zeros(shape)
    return rng.uniform(-bound, bound, shape)


class DenseLayer:
    """Affine map plus activation; weights stored as (in, out)."""

    def __init__(self, n_in, n_out, activation="identity", rng=None, zero_init=False):
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in = n_in
        self.n_out = n_out
        self.activation = activation
        init = rng if not zero_init else None
        self.W = Tensor(_uniform_init(init, (n_in, n_out), n_in), requires_grad=True)
        self.b = Tensor(_uniform_init(init, (n_out,), n_in), requires_grad=True)

    def __call__(self, x):
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.shape[-1] != self.n_in:
            raise T.ShapeError(
                f"dense: input {x.shape} does not match layer ({self.n_in} -> {self.n_out})")
        lead = x.shape[:-1]
        flat = T.reshape(x, (-1, self.n_in)) if len(lead) != 1 else x
        out = T.affine(flat, self.W, self.b, _AFFINE_ACTIVATIONS[self.activation])
        if len(lead) != 1:
            out = T.reshape(out, lead + (self.n_out,))
        return out

    def parameters(self):
        return [("W", self.W), ("b", self.b)]


class MLP:
    """A plain stack of dense layers."""

    def __init__(self, dims, hidden_activation="relu", out_activation="identity", rng=None):
        self.layers = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            act = out_activation if i == len(dims) - 2 else hidden_activation
            self.layers.append(DenseLayer(a, b, act, rng=rng))

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self):
        return [(f"layer{i}.{n}", p) for i, l in enumerate(self.layers) for n, p in l.parameters()]


class GruCell:
    """Standard gated recurrent unit: update gate z, reset gate r, candidate c.

    h' = (1 - z) * h + z * c   with   c = tanh(W_c x + U_c (r * h) + b_c)
    """

    def __init__(self, n_in, n_hidden, rng=None):
        self.n_in = n_in
        self.n_hidden = n_hidden
        k, h = n_in, n_hidden

        def block(shape, fan):
            return Tensor(_uniform_init(rng, shape, fan), requires_grad=True)

        self.Wz, self.Uz, self.bz = block((k, h), k), block((h, h), h), block((h,), k)
        self.Wr, self.Ur, self.br = block((k, h), k), block((h, h), h), block((h,), k)
        self.Wc, self.Uc, self.bc = block((k, h), k), block((h, h), h), block((h,), k)

    def step(self, x, h):
        x = x if isinstance(x, Tensor) else Tensor(x)
        h = h if isinstance(h, Tensor) else Tensor(h)
        if x.shape[-1] != self.n_in or h.shape[-1] != self.n_hidden:
            raise T.ShapeError(
                f"gru: inputs {x.shape}/{h.shape} do not match cell ({self.n_in}, {self.n_hidden})")
        z = T.sigmoid(T.add(T.add(T.matmul(x, self.Wz), T.matmul(h, self.Uz)), self.bz))
        r = T.sigmoid(T.add(T.add(T.matmul(x, self.Wr), T.matmul(h, self.Ur)), self.br))
        c = T.tanh(T.add(T.add(T.matmul(x, self.Wc), T.matmul(T.mul(r, h), self.Uc)), self.bc))
        return T.add(T.mul(T.add(Tensor(1.0), T.mul(z, -1.0)), h), T.mul(z, c))

    def parameters(self):
        names = ["Wz", "Uz", "bz", "Wr", "Ur", "br", "Wc", "Uc", "bc"]
        return [(n, getattr(self, n)) for n in names]


class SetEncoder:
    """Per-element MLP followed by a mean over the set axis.

    The output code has a fixed dimension regardless of set size, and the mean
    makes it exactly permutation-invariant.  Inputs optionally pass through a
    sign-preserving log squash so that heavy-tailed observables (Poisson
    counts reach ~e^7) do not saturate downstream nonlinearities.
    """

    def __init__(self, d_in, code_dim=32, widths=(64, 64), rng=None, squash_inputs=True):
        self.d_in = d_in
        self.code_dim = code_dim
        self.squash_inputs = squash_inputs
        self.mlp = MLP((d_in,) + tuple(widths) + (code_dim,), rng=rng)

    def encode(self, X):
        """Encode sets stored as an array of shape (..., M, d_in) into (..., code_dim)."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim < 2 or X.shape[-2] == 0:
            raise EmptyInputError("set encoder requires at least one observation")
        if X.shape[-1] != self.d_in:
            raise T.ShapeError(f"set encoder: observations {X.shape} do not match d_in={self.d_in}")
        lead, M = X.shape[:-2], X.shape[-2]
        if self.d_in == 1 and getattr(self, "dedup", True):
            out = self._encode_scalar_sets(X.reshape(-1, M))
            return T.reshape(out, lead + (self.code_dim,)) if len(lead) != 1 else out
        if self.squash_inputs:
            X = T.symlog(X)
        codes = self.mlp(Tensor(X))
        return T.sorted_mean(codes, axis=codes.data.ndim - 2)

    def _encode_scalar_sets(self, X):
        """Scalar observables: run the MLP once per distinct value.

        Integer-valued observables (e.g. counts) repeat heavily, so the per-set
        mean is taken as counts @ codes over the unique values.  Exactly
        equivalent to the direct path, including permutation invariance.
        """
        n_sets, M = X.shape
        flat = X.reshape(-1)
        uniq, inv = np.unique(flat, return_inverse=True)
        if self.squash_inputs:
            uniq_in = T.symlog(uniq)[:, None]
        else:
            uniq_in = uniq[:, None]
        if uniq.size > 0.5 * flat.size:  # continuous data: dedup buys nothing
            codes = self.mlp(Tensor(uniq_in[inv].reshape(n_sets, M, 1)))
            return T.sorted_mean(codes, axis=1)
        codes_u = self.mlp(Tensor(uniq_in))
        d = codes_u.data.shape[-1]
        # gathering by the (sorted) unique index keeps each set's summation
        # order canonical, so permutation invariance stays bitwise exact
        gathered = np.sort(codes_u.data[inv].reshape(n_sets, M, d), axis=1)
        out = gathered.mean(axis=1)

        def vjp(g):
            gu = np.zeros_like(codes_u.data)
            gx = np.broadcast_to(g[:, None, :] / M, (n_sets, M, d)).reshape(n_sets * M, d)
            np.add.at(gu, inv, gx)
            return (gu,)

        return Tensor._result(out, (codes_u,), vjp)

    def encode_set(self, observations):
        """Encode one set given as a sequence of observation vectors."""
        obs = [np.atleast_1d(np.asarray(o, dtype=np.float64)) for o in observations]
        if not obs:
            raise EmptyInputError("set encoder requires at least one observation")
        return self.encode(np.stack(obs))

    def parameters(self):
        return [(f"mlp.{n}", p) for n, p in self.mlp.parameters()]


class RecurrentUpdater:
    """The trainable update machine for proposal parameters.

    One set encoder ingests both the real and the generated observation sets
    (literal weight sharing: it is a single object).  For every candidate
    parameter the combining encoder sees the real code, the candidate's code
    and the candidate's score feature; the combined codes are mean-pooled over
    candidates, concatenated with the current proposal parameters, passed
    through a pre-processing layer into the GRU, and the post-processing layer
    emits the proposal update, clamped componentwise to [-clip, clip].
    """

    def __init__(self, d_theta, d_x, clip=0.5, rng=None, code_dim=32,
                 data_widths=(64, 64), comb_widths=(64, 64), comb_dim=32,
                 pre_dim=64, hidden_dim=128, squash_inputs=True, squash_scores=True):
        if clip <= 0:
            raise ValueError("clip bound must be positive")
        self.d_theta = d_theta
        self.d_x = d_x
        self.d_psi = 2 * d_theta
        self.clip = float(clip)
        self.code_dim = code_dim
        self.comb_dim = comb_dim
        self.pre_dim = pre_dim
        self.hidden_dim = hidden_dim
        self.squash_scores = squash_scores

        self.encoder = SetEncoder(d_x, code_dim, data_widths, rng=rng, squash_inputs=squash_inputs)
        self.combiner = MLP((2 * code_dim + self.d_psi,) + tuple(comb_widths) + (comb_dim,), rng=rng)
        self.pre = DenseLayer(self.d_psi + comb_dim, pre_dim, "relu", rng=rng)
        self.gru = GruCell(pre_dim, hidden_dim, rng=rng)
        # Zero-initialised output: the untrained policy is "no update".
        self.post = DenseLayer(hidden_dim, self.d_psi, "identity", rng=rng, zero_init=True)

    def arch(self):
        """Constructor arguments needed to rebuild an identical architecture."""
        return {
            "d_theta": self.d_theta, "d_x": self.d_x, "clip": self.clip,
            "code_dim": self.code_dim,
            "data_widths": [l.n_out for l in self.encoder.mlp.layers[:-1]],
            "comb_widths": [l.n_out for l in self.combiner.layers[:-1]],
            "comb_dim": self.comb_dim, "pre_dim": self.pre_dim, "hidden_dim": self.hidden_dim,
            "squash_inputs": self.encoder.squash_inputs, "squash_scores": self.squash_scores,
        }

    def initial_state(self, batch):
        return Tensor(np.zeros((batch, self.hidden_dim)))

    def step_batch(self, psi, state, e_real, e_gen, scores, mask=None):
        """One update for a batch of problems.

        psi     : Tensor (P, 2 d_theta), current proposal parameters
        state   : Tensor (P, hidden_dim)
        e_real  : Tensor (P, code_dim)
        e_gen   : Tensor (P, B, code_dim)
        scores  : ndarray (P, B, 2 d_theta), detached score features
        mask    : optional ndarray (P, B) of candidate weights (0 = skipped)

        Returns (delta_psi, new_state).
        """
        P, B = e_gen.shape[0], e_gen.shape[1]
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (P, B, self.d_psi):
            raise T.ShapeError(f"updater: score features {scores.shape} != {(P, B, self.d_psi)}")
        if self.squash_scores:
            scores = T.symlog(scores)
        er = T.tile_axis(e_real, 1, B)
        combined = self.combiner(T.concat([er, e_gen, Tensor(scores)], axis=-1))
        if mask is None:
            agg = T.sorted_mean(combined, axis=1)
        else:
            w = np.asarray(mask, dtype=np.float64)[:, :, None]
            counts = np.maximum(w.sum(axis=1), 1.0)                 # (P, 1)
            # the tape only broadcasts trailing suffixes; expand explicitly
            wb = np.ascontiguousarray(np.broadcast_to(w, combined.shape))
            scale = np.ascontiguousarray(
                np.broadcast_to(B / counts, (P, combined.shape[-1])))
            agg = T.mul(T.sorted_mean(T.mul(combined, Tensor(wb)), axis=1),
                        Tensor(scale))
        u = self.pre(T.concat([psi, agg], axis=-1))
        new_state = self.gru.step(u, state)
        delta = T.clamp(self.post(new_state), -self.clip, self.clip)
        return delta, new_state

    def forward(self, psi, state, e_real, candidates):
        """Single-problem step from per-candidate (code, score) pairs.

        ``candidates`` is a non-empty list of ``(e_gen_i, score_i)`` where
        ``e_gen_i`` is a code Tensor of shape (code_dim,) and ``score_i`` has
        the dimension of psi.
        """
        if not candidates:
            raise EmptyInputError("updater requires at least one candidate")
        e_gen = T.reshape(T.concat([T.reshape(e, (1, self.code_dim)) for e, _ in candidates], axis=0)
                          if len(candidates) > 1 else T.reshape(candidates[0][0], (1, self.code_dim)),
                          (1, len(candidates), self.code_dim))
        scores = np.stack([np.asarray(s, dtype=np.float64) for _, s in candidates])[None]
        psi2 = T.reshape(psi, (1, self.d_psi))
        er = T.reshape(e_real, (1, self.code_dim))
        state2 = T.reshape(state, (1, self.hidden_dim))
        delta, new_state = self.step_batch(psi2, state2, er, e_gen, scores)
        return T.reshape(delta, (self.d_psi,)), T.reshape(new_state, (self.hidden_dim,))

    def parameters(self):
        groups = [("encoder", self.encoder), ("combiner", self.combiner),
                  ("pre", self.pre), ("gru", self.gru), ("post", self.post)]
        return [(f"{g}.{n}", p) for g, mod in groups for n, p in mod.parameters()]
