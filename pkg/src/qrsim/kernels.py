"""JIT-compiled trajectory kernels for the Monte Carlo hot loops.

These mirror ``mdp.step`` exactly (same stage order, same per-segment
uniform consumption) but run the whole trajectory inside one nopython numba
function.  The pure-Python engine in ``montecarlo`` stays the readable
reference; tests assert the two produce identical trajectories from the same
pre-drawn uniforms.  If numba is unavailable everything falls back to the
Python engine.

State layout inside a kernel: one int64 array over pair indices, -1 for an
absent pair.  Pauli x/z counters are omitted here because no channel in this
model increments them (they stay 0 along any trajectory).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


PROB_CLAMP = 1e-7  # must match policies.PROB_CLAMP


@njit(cache=True, inline="always")
def _pidx(i, j, n_nodes):
    return i * (2 * n_nodes - i - 1) // 2 + (j - i - 1)


@njit(cache=True, inline="always")
def _segment_free(storage, n_nodes, k):
    # right memory of node k
    for j in range(k + 1, n_nodes):
        if storage[_pidx(k, j, n_nodes)] >= 0:
            return False
    # left memory of node k+1
    for i in range(k + 1):
        if storage[_pidx(i, k + 1, n_nodes)] >= 0:
            return False
    return True


@njit(cache=True, inline="always")
def _generate_and_age(storage, n_nodes, p_gen, u_row):
    for k in range(n_nodes - 1):
        if u_row[k] < p_gen and _segment_free(storage, n_nodes, k):
            storage[_pidx(k, k + 1, n_nodes)] = 0
    for q in range(storage.shape[0]):
        if storage[q] >= 0:
            storage[q] += 1


@njit(cache=True, inline="always")
def _swap_asap(storage, n_nodes):
    changed = True
    while changed:
        changed = False
        for m in range(1, n_nodes - 1):
            left = -1
            for i in range(m):
                if storage[_pidx(i, m, n_nodes)] >= 0:
                    left = i
                    break
            if left < 0:
                continue
            right = -1
            for j in range(m + 1, n_nodes):
                if storage[_pidx(m, j, n_nodes)] >= 0:
                    right = j
                    break
            if right < 0:
                continue
            merged = storage[_pidx(left, m, n_nodes)] + storage[_pidx(m, right, n_nodes)]
            storage[_pidx(left, m, n_nodes)] = -1
            storage[_pidx(m, right, n_nodes)] = -1
            storage[_pidx(left, right, n_nodes)] = merged
            changed = True


@njit(cache=True, nogil=True)
def cutoff_rollout(n_nodes, p_gen, cutoff, t_max, gen_u, deliv_step, deliv_storage):
    """Full trajectory under a uniform cut-off policy (cutoff < 0: none).

    gen_u is a (T, n_segments) block of uniforms, one column per segment.
    Deliveries are appended to the output arrays; returns their count.
    """
    n_pairs = n_nodes * (n_nodes - 1) // 2
    storage = np.full(n_pairs, -1, dtype=np.int64)
    e2e = _pidx(0, n_nodes - 1, n_nodes)
    count = 0
    for t in range(gen_u.shape[0]):
        _generate_and_age(storage, n_nodes, p_gen, gen_u[t])
        _swap_asap(storage, n_nodes)
        if cutoff >= 0:
            for q in range(n_pairs):
                if q != e2e and storage[q] >= cutoff:
                    storage[q] = -1
        if storage[e2e] >= 0:
            deliv_step[count] = t
            deliv_storage[count] = storage[e2e]
            count += 1
            storage[e2e] = -1
        if t_max >= 0:
            for q in range(n_pairs):
                if storage[q] > t_max:
                    storage[q] = -1
    return count


@njit(cache=True, nogil=True)
def mlp_rollout(
    n_nodes,
    p_gen,
    t_max,
    scale,
    w1,
    b1,
    w2,
    b2,
    w3,
    b3,
    greedy,
    gen_u,
    act_u,
    obs_out,
    act_out,
    logp_out,
    deliv_step,
    deliv_storage,
):
    """Full trajectory under a two-hidden-layer sigmoid policy network.

    Per step: builds the scaled observation from the post-swap state, runs
    the network, samples one Bernoulli bit per controllable pair from
    act_u[t] (or thresholds at 0.5 when greedy), records the observation,
    action bits and joint log-probability, then applies discards/extraction.
    Returns the delivery count.
    """
    n_pairs = n_nodes * (n_nodes - 1) // 2
    h1n = b1.shape[0]
    h2n = b2.shape[0]
    n_ctrl = b3.shape[0]
    storage = np.full(n_pairs, -1, dtype=np.int64)
    e2e = _pidx(0, n_nodes - 1, n_nodes)
    obs = np.empty(n_pairs, dtype=np.float64)
    h1 = np.empty(h1n, dtype=np.float64)
    h2 = np.empty(h2n, dtype=np.float64)
    count = 0
    for t in range(gen_u.shape[0]):
        _generate_and_age(storage, n_nodes, p_gen, gen_u[t])
        _swap_asap(storage, n_nodes)
        # observation of the post-swap state
        for q in range(n_pairs):
            obs[q] = storage[q] * scale if storage[q] >= 0 else 0.0
            obs_out[t, q] = obs[q]
        # forward pass: tanh, tanh, sigmoid
        for a in range(h1n):
            acc = b1[a]
            for q in range(n_pairs):
                acc += obs[q] * w1[q, a]
            h1[a] = np.tanh(acc)
        for a in range(h2n):
            acc = b2[a]
            for q in range(h1n):
                acc += h1[q] * w2[q, a]
            h2[a] = np.tanh(acc)
        logp = 0.0
        c = 0
        for q in range(n_pairs):
            if q == e2e:
                continue
            z = b3[c]
            for a in range(h2n):
                z += h2[a] * w3[a, c]
            if z >= 0.0:
                p = 1.0 / (1.0 + np.exp(-z))
            else:
                ez = np.exp(z)
                p = ez / (1.0 + ez)
            if greedy:
                bit = p >= 0.5
            else:
                bit = act_u[t, c] < p
            pc = min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)
            if bit:
                logp += np.log(pc)
                if storage[q] >= 0:
                    storage[q] = -1
            else:
                logp += np.log(1.0 - pc)
            act_out[t, c] = 1 if bit else 0
            c += 1
        logp_out[t] = logp
        if storage[e2e] >= 0:
            deliv_step[count] = t
            deliv_storage[count] = storage[e2e]
            count += 1
            storage[e2e] = -1
        if t_max >= 0:
            for q in range(n_pairs):
                if storage[q] > t_max:
                    storage[q] = -1
    return count
