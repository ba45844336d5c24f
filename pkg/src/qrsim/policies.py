"""Discard policies over the chain state, and the observation encoding.

A policy decision is a boolean vector over the controllable pairs: every
node pair except the end-to-end pair (0, n), in triangular order (9 of the
10 pairs of a four-segment chain).  Observations are the per-pair
accumulated storage times scaled by tau0/tau_c, with 0 encoding an absent
pair; active states read >= 1 step at the observation point, so 0 is
unambiguous.
"""

from __future__ import annotations

import math

import numpy as np

from .mdp import ChainState, pair_index
from .physics import DerivedParams

# Probabilities are clamped before taking logs; keeps log-probabilities
# finite when the sigmoid saturates.
PROB_CLAMP = 1e-7


def n_pairs(n_nodes: int) -> int:
    return n_nodes * (n_nodes - 1) // 2


def controllable_indices(n_nodes: int) -> np.ndarray:
    """Pair indices a policy may discard: all but the end-to-end pair."""
    e2e = pair_index(0, n_nodes - 1, n_nodes)
    return np.array([q for q in range(n_pairs(n_nodes)) if q != e2e], dtype=np.int64)


def obs_scale(d: DerivedParams) -> float:
    """Observation normalization tau0/tau_c; keeps network inputs O(1)."""
    return -math.log(d.decay_per_step)


def encode_observation(state: ChainState, d: DerivedParams) -> np.ndarray:
    """Vector over all pairs: storage_steps * tau0/tau_c if active, else 0."""
    scale = obs_scale(d)
    return np.where(state.storage >= 0, state.storage * scale, 0.0)


def decode_observation(obs: np.ndarray, d: DerivedParams) -> np.ndarray:
    """Recover the integer storage map (-1 for absent) from an observation.
    Exact for integer storages: the encoding is injective given tau0/tau_c."""
    scale = obs_scale(d)
    obs = np.asarray(obs, dtype=np.float64)
    storages = np.rint(obs / scale).astype(np.int64)
    storages[obs == 0.0] = -1
    return storages


def no_cutoff_policy(obs) -> np.ndarray:
    """Keep everything: all-false over the controllable pairs."""
    return np.zeros(len(obs) - 1, dtype=bool)


def uniform_cutoff_policy(state: ChainState, c: int) -> np.ndarray:
    """Flag every controllable pair whose accumulated storage time has used
    up the allowance: storage_steps >= c.  The end-to-end pair is exempt.

    At c = 1 only states created this very step survive within it (they
    merge or die), the minimal cut-off regime.  For c above the longest
    reachable storage time the decisions match ``no_cutoff_policy``.
    """
    if c < 1:
        raise ValueError(f"cutoff must be >= 1, got {c}")
    ctrl = controllable_indices(state.n_nodes)
    return (state.storage[ctrl] >= c) & (state.storage[ctrl] >= 0)


def stable_sigmoid(z):
    """Elementwise logistic function, overflow-safe for large |z|."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bernoulli_logprob(probs: np.ndarray, bits: np.ndarray) -> float:
    """Joint log-probability of independent per-pair discard bits,
    sum_i [a_i ln p_i + (1-a_i) ln(1-p_i)], with probabilities clamped."""
    p = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    bits = np.asarray(bits, dtype=np.float64)
    return float(np.sum(bits * np.log(p) + (1.0 - bits) * np.log(1.0 - p)))


def neural_policy(obs, net, rng=None, mode="sample", uniforms=None):
    """Evaluate the policy network on an observation.

    The network's sigmoid outputs are per-pair discard probabilities.
    ``sample`` draws independent Bernoulli bits, ``greedy`` thresholds at
    0.5.  Returns (bits, joint log-probability).  ``uniforms`` may supply
    the pre-drawn uniforms used for sampling (one per controllable pair).
    """
    probs, _ = net.forward(np.asarray(obs, dtype=np.float64))
    if mode == "sample":
        if uniforms is None:
            uniforms = rng.random(probs.shape[0])
        bits = uniforms < probs
    elif mode == "greedy":
        bits = probs >= 0.5
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return bits, bernoulli_logprob(probs, bits)


class NoCutoffPolicy:
    """State-independent keep-everything policy."""

    def __call__(self, state: ChainState) -> np.ndarray:
        return np.zeros(len(controllable_indices(state.n_nodes)), dtype=bool)


class UniformCutoffPolicy:
    """Discard any controllable pair with storage_steps >= c."""

    def __init__(self, c: int):
        if c < 1:
            raise ValueError(f"cutoff must be >= 1, got {c}")
        self.c = int(c)

    def __call__(self, state: ChainState) -> np.ndarray:
        return uniform_cutoff_policy(state, self.c)


class NeuralPolicy:
    """Network-driven policy; owns its sampling stream unless the trajectory
    engine feeds per-step uniforms for reproducible parallel collection."""

    def __init__(self, net, mode="sample", rng=None):
        self.net = net
        self.mode = mode
        self.rng = rng
        self.d: DerivedParams | None = None  # set by the trajectory engine
        self.last_logp = 0.0

    def decide(self, obs, uniforms=None):
        bits, logp = neural_policy(obs, self.net, rng=self.rng, mode=self.mode, uniforms=uniforms)
        self.last_logp = logp
        return bits

    def __call__(self, state: ChainState) -> np.ndarray:
        if self.d is None:
            raise ValueError("NeuralPolicy needs DerivedParams (set .d) to encode observations")
        return self.decide(encode_observation(state, self.d))
