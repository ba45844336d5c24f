"""Exact small-instance solvers used as test oracles for the Monte Carlo
engine and the MDP transition kernel.

The two-segment chain is a renewal process that can be enumerated exactly:
from an empty chain each step delivers immediately (both segments generate,
probability p^2), starts a waiting phase (exactly one generates), or stays
empty.  A waiting pair of age a either merges with a fresh partner next step
(delivering accumulated storage a+2) or ages out against the cut-off.  The
enumeration propagates probability mass through this chain until the
undelivered remainder is negligible, giving the expected cycle length, the
delivery-time distribution, and E[decay^t] without sampling error.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import mdp
from .physics import DerivedParams, binary_entropy
from .policies import controllable_indices


@dataclass(frozen=True)
class ExactResult:
    """Exact renewal statistics of a two-segment chain.

    expected_cycle_steps is the mean number of steps between deliveries;
    raw_rate_per_s = 1 / (expected_cycle * tau0); expected_decay is
    E[decay^t] over delivered storage times t; rate_per_s applies the BB84
    secret key fraction; truncation_tail is the probability mass left
    unaccounted by the series truncation (< 1e-12).
    """

    expected_cycle_steps: float
    raw_rate_per_s: float
    expected_decay: float
    rate_per_s: float
    truncation_tail: float


def exact_two_segment(d: DerivedParams, cutoff: int | None = None) -> ExactResult:
    """Enumerate the two-segment renewal cycle exactly.

    Transitions follow the simulated step order (generate, age, swap,
    cut-off discard at storage >= c with the end-to-end pair exempt,
    delivery), so a waiting pair of age a delivers t = a + 2 whenever its
    partner segment generates, and survives the step only while a + 1 < c.
    """
    if cutoff is not None and cutoff < 1:
        raise ValueError(f"cutoff must be >= 1 or None, got {cutoff}")
    p = d.p_gen
    q = 1.0 - p
    if p <= 0.0:
        raise ValueError("p_gen must be positive for a renewal cycle to exist")
    decay = d.decay_per_step
    c = np.inf if cutoff is None else float(cutoff)

    mass_empty = 1.0
    wait = {}  # age -> probability mass, ages are post-step storage values
    e_cycle = 0.0
    delivered_mass = 0.0
    e_decay = 0.0
    tol = 1e-13
    s = 0
    # the live (undelivered) mass is tracked directly as sums of q-factor
    # products; computing it as 1 - delivered would stall at the float64
    # rounding floor and never pass the threshold below
    live = 1.0
    while live * (s + 10.0 / p) > tol and s < 10_000_000:
        s += 1
        deliver = mass_empty * p * p  # both fresh: t = 2
        e_decay += deliver * decay**2
        new_wait = {}
        new_empty = mass_empty * q * q
        single = mass_empty * 2.0 * p * q
        if 1.0 < c:
            new_wait[1] = single
        else:
            new_empty += single  # at c = 1 a fresh single dies within its step
        for a, m in wait.items():
            deliver_a = m * p  # partner fresh: t = (a + 1) + 1
            deliver += deliver_a
            e_decay += deliver_a * decay ** (a + 2)
            survive = m * q
            if a + 1 < c:
                new_wait[a + 1] = new_wait.get(a + 1, 0.0) + survive
            else:
                new_empty += survive
        e_cycle += s * deliver
        delivered_mass += deliver
        mass_empty = new_empty
        wait = new_wait
        live = mass_empty + sum(wait.values())

    e_cycle /= delivered_mass
    e_decay /= delivered_mass
    raw = 1.0 / (e_cycle * d.tau0_s)
    e_x = 0.5 * (1.0 - e_decay)
    rate = raw * max(0.0, 1.0 - binary_entropy(e_x))
    return ExactResult(
        expected_cycle_steps=e_cycle,
        raw_rate_per_s=raw,
        expected_decay=e_decay,
        rate_per_s=rate,
        truncation_tail=live,
    )


def transition_check(state: mdp.ChainState, decision, d: DerivedParams, trials: int, seed=0) -> float:
    """Compare the exact one-step successor distribution with Monte Carlo
    frequencies of ``mdp.step`` under a fixed discard decision.

    Enumerates all 2^f generation outcomes over the f attemptable segments
    (exact probabilities), then samples ``trials`` steps; returns the
    maximum absolute deviation between frequencies and probabilities.
    """
    decision = np.asarray(decision, dtype=bool)
    n_ctrl = len(controllable_indices(state.n_nodes))
    if decision.shape != (n_ctrl,):
        raise ValueError(f"expected {n_ctrl} decision flags")
    policy = lambda s: decision

    attemptable = [
        k
        for k in range(state.n_segments)
        if not state.right_busy(k) and not state.left_busy(k + 1)
    ]
    p = d.p_gen
    exact: dict[tuple, float] = {}
    for bits in product((0, 1), repeat=len(attemptable)):
        prob = 1.0
        for b in bits:
            prob *= p if b else (1.0 - p)
        if prob == 0.0:
            continue
        uniforms = np.ones(state.n_segments)  # u = 1 never generates
        for k, b in zip(attemptable, bits):
            if b:
                uniforms[k] = 0.0  # u = 0 always generates (p > 0)
        succ = state.copy()
        mdp.step(succ, policy, d, gen_uniforms=uniforms)
        key = succ.key()
        exact[key] = exact.get(key, 0.0) + prob

    rng = np.random.default_rng(seed)
    counts: dict[tuple, int] = {}
    for _ in range(trials):
        succ = state.copy()
        mdp.step(succ, policy, d, rng=rng)
        key = succ.key()
        counts[key] = counts.get(key, 0) + 1

    keys = set(exact) | set(counts)
    return max(abs(counts.get(k, 0) / trials - exact.get(k, 0.0)) for k in keys)
