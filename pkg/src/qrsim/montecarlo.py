"""Trajectory execution, key-rate estimation, and cut-off sweeps.

Trajectories are embarrassingly parallel: every trajectory gets its own
seed derived from (master seed, block index, trajectory index) through
``numpy.random.SeedSequence`` spawn keys, and pre-draws all its uniforms up
front (one column per segment and, for sampling policies, one per
controllable pair).  Results are therefore bit-identical for any worker
count and any engine, and sweeps are reproducible from the master seed
alone.

Two engines execute a trajectory: the readable pure-Python loop over
``mdp.step``, and numba kernels that consume the same uniform blocks (used
automatically for uniform-cut-off and two-hidden-layer network policies).
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels, mdp
from .physics import DerivedParams, KeyRateEstimate, RepeaterParams, decay_power, derive, key_rate_from_deliveries
from .policies import (
    NeuralPolicy,
    NoCutoffPolicy,
    UniformCutoffPolicy,
    controllable_indices,
    encode_observation,
    obs_scale,
)

SWEEP_CSV_HEADER = "cutoff,rate_per_s,ci3sigma,raw_rate_per_s,e_x,M,T,seed"


@dataclass(frozen=True)
class TrajectoryRecord:
    """Deliveries of one trajectory: array of (step_index, storage_steps)
    rows, step indices strictly increasing and < total_steps."""

    total_steps: int
    deliveries: np.ndarray
    seed: int

    @property
    def storage_times(self) -> np.ndarray:
        return self.deliveries[:, 1] if self.deliveries.size else np.empty(0, dtype=np.int64)


@dataclass(frozen=True)
class SweepRow:
    cutoff: int | None
    estimate: KeyRateEstimate
    M: int
    T: int
    seed: int


def _resolve_seed(seed) -> tuple[np.random.SeedSequence, int]:
    if isinstance(seed, np.random.SeedSequence):
        return seed, int(seed.generate_state(1, np.uint64)[0])
    return np.random.SeedSequence(int(seed)), int(seed)


def trajectory_seed(master_seed: int, block: int, index: int) -> np.random.SeedSequence:
    """Splittable per-trajectory seed: (master, block, index) -> stream."""
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(block), int(index)))


def _policy_cutoff(policy):
    """Cut-off value for kernel dispatch: -1 none, >=1 uniform, None if the
    policy is not a cut-off policy at all."""
    if isinstance(policy, NoCutoffPolicy):
        return -1
    if isinstance(policy, UniformCutoffPolicy):
        return policy.c
    return None


def _kernel_supported(policy) -> bool:
    if not kernels.HAVE_NUMBA:
        return False
    if _policy_cutoff(policy) is not None:
        return True
    return isinstance(policy, NeuralPolicy) and len(policy.net.weights) == 3


def run_trajectory(params: RepeaterParams, policy, T: int, seed, engine="auto") -> TrajectoryRecord:
    """Execute T steps from an empty chain and record every delivery.

    ``policy`` is a callable over the post-swap ChainState returning discard
    flags for the controllable pairs (see ``policies``).  ``engine`` selects
    "python", "numba", or "auto" (numba when the policy has a kernel).
    """
    record, _ = _rollout(params, policy, T, seed, engine, want_buffer=False)
    return record


def neural_rollout(params: RepeaterParams, net, T: int, seed, mode="sample", engine="auto"):
    """Trajectory under a policy network, also returning the experience
    buffer arrays (observations (T, pairs), action bits (T, ctrl) and joint
    log-probabilities (T,)) needed for training and the census."""
    policy = NeuralPolicy(net, mode=mode)
    return _rollout(params, policy, T, seed, engine, want_buffer=True)


def _rollout(params, policy, T, seed, engine, want_buffer):
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    d = derive(params)
    ss, seed_int = _resolve_seed(seed)
    rng = np.random.default_rng(ss)
    n_seg = params.n_segments
    gen_u = rng.random((T, n_seg))

    use_kernel = _kernel_supported(policy) if engine == "auto" else (engine == "numba")
    if engine == "numba" and not _kernel_supported(policy):
        raise ValueError("no numba kernel for this policy (or numba unavailable)")
    if engine not in ("auto", "numba", "python"):
        raise ValueError(f"unknown engine {engine!r}")

    t_max = params.t_max_steps if params.t_max_steps is not None else -1
    n_nodes = params.n_segments + 1
    dstep = np.empty(T, dtype=np.int64)
    dstor = np.empty(T, dtype=np.int64)

    cutoff = _policy_cutoff(policy)
    if cutoff is not None:
        if use_kernel:
            count = kernels.cutoff_rollout(n_nodes, d.p_gen, cutoff, t_max, gen_u, dstep, dstor)
        else:
            count = _python_policy_rollout(params, d, policy, gen_u, dstep, dstor)
        record = _make_record(T, dstep, dstor, count, seed_int)
        return record, None

    if isinstance(policy, NeuralPolicy):
        n_ctrl = len(controllable_indices(n_nodes))
        act_u = rng.random((T, n_ctrl))
        obs_out = np.empty((T, n_nodes * (n_nodes - 1) // 2), dtype=np.float64)
        act_out = np.zeros((T, n_ctrl), dtype=np.int8)
        logp_out = np.empty(T, dtype=np.float64)
        if use_kernel:
            w = policy.net.weights
            b = policy.net.biases
            count = kernels.mlp_rollout(
                n_nodes, d.p_gen, t_max, obs_scale(d),
                w[0], b[0], w[1], b[1], w[2], b[2],
                policy.mode == "greedy", gen_u, act_u,
                obs_out, act_out, logp_out, dstep, dstor,
            )
        else:
            count = _python_neural_rollout(
                params, d, policy, gen_u, act_u, obs_out, act_out, logp_out, dstep, dstor
            )
        record = _make_record(T, dstep, dstor, count, seed_int)
        if want_buffer:
            return record, (obs_out, act_out, logp_out)
        return record, None

    # arbitrary callable: python engine only
    count = _python_policy_rollout(params, d, policy, gen_u, dstep, dstor)
    return _make_record(T, dstep, dstor, count, seed_int), None


def _make_record(T, dstep, dstor, count, seed_int) -> TrajectoryRecord:
    deliveries = np.stack([dstep[:count], dstor[:count]], axis=1) if count else np.empty((0, 2), dtype=np.int64)
    return TrajectoryRecord(total_steps=T, deliveries=deliveries, seed=seed_int)


def _python_policy_rollout(params, d, policy, gen_u, dstep, dstor):
    state = mdp.ChainState(params.n_segments)
    count = 0
    for t in range(gen_u.shape[0]):
        out = mdp.step(
            state, policy, d, gen_uniforms=gen_u[t], t_max_steps=params.t_max_steps
        )
        if out.delivered is not None:
            dstep[count] = t
            dstor[count] = out.delivered
            count += 1
    return count


def _python_neural_rollout(params, d, policy, gen_u, act_u, obs_out, act_out, logp_out, dstep, dstor):
    state = mdp.ChainState(params.n_segments)
    count = 0
    for t in range(gen_u.shape[0]):
        def decide(s):
            obs = encode_observation(s, d)
            obs_out[t] = obs
            bits = policy.decide(obs, uniforms=act_u[t])
            act_out[t] = bits
            logp_out[t] = policy.last_logp
            return bits

        out = mdp.step(state, decide, d, gen_uniforms=gen_u[t], t_max_steps=params.t_max_steps)
        if out.delivered is not None:
            dstep[count] = t
            dstor[count] = out.delivered
            count += 1
    return count


def estimate(records, d: DerivedParams) -> KeyRateEstimate:
    """Aggregate M >= 2 independent trajectories of identical length.

    The rate estimate is the mean of the per-trajectory key rates and
    ci3sigma = 3 * sample std / sqrt(M) (replication, assumption-free);
    e_x and mean_decay are pooled over all deliveries.
    """
    if len(records) < 2:
        raise ValueError(f"need >= 2 trajectories for a confidence interval, got {len(records)}")
    T = records[0].total_steps
    if any(r.total_steps != T for r in records):
        raise ValueError("records have differing trajectory lengths")
    singles = [key_rate_from_deliveries(r.storage_times, T, d) for r in records]
    # canonical (sorted) aggregation order makes the estimate exactly
    # invariant under permutation of the records list
    rates = np.sort([s.rate_per_s for s in singles])
    raws = np.sort([s.raw_rate_per_s for s in singles])
    all_times = np.sort(np.concatenate([r.storage_times for r in records]))
    n = int(all_times.size)
    if n:
        mean_decay = float(np.mean(decay_power(d, all_times)))
        e_x = 0.5 * (1.0 - mean_decay)
    else:
        mean_decay, e_x = 0.0, 0.5
    ci = float(3.0 * np.std(rates, ddof=1) / np.sqrt(len(records)))
    return KeyRateEstimate(
        rate_per_s=float(np.mean(rates)),
        raw_rate_per_s=float(np.mean(raws)),
        mean_decay=mean_decay,
        e_x=e_x,
        ci3sigma=ci,
        n_samples=n,
    )


def _policy_for(cutoff):
    return NoCutoffPolicy() if cutoff is None else UniformCutoffPolicy(cutoff)


def sweep_cutoff(
    params: RepeaterParams,
    c_values,
    T: int,
    M: int,
    seed: int,
    workers: int = 1,
    engine="auto",
) -> list[SweepRow]:
    """M independent trajectories for every entry of c_values (integers or
    None for the no-cut-off baseline), rows in input order.

    Trajectory m of every row runs on the seed derived from (seed, m):
    rows are compared on common random numbers, so a cut-off too large to
    ever fire reproduces the no-cut-off row exactly and duplicate c values
    produce identical rows."""
    if M < 2:
        raise ValueError(f"M must be >= 2, got {M}")
    for c in c_values:
        if c is not None and c < 1:
            raise ValueError(f"cutoff values must be >= 1 or None, got {c}")
    d = derive(params)
    _, master = _resolve_seed(seed)

    def one(c, m):
        return run_trajectory(params, _policy_for(c), T, trajectory_seed(master, 0, m), engine)

    rows = []
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                (ci, m): pool.submit(one, c, m)
                for ci, c in enumerate(c_values)
                for m in range(M)
            }
            for ci, c in enumerate(c_values):
                records = [futures[(ci, m)].result() for m in range(M)]
                rows.append(SweepRow(c, estimate(records, d), M, T, master))
    else:
        for ci, c in enumerate(c_values):
            records = [one(c, m) for m in range(M)]
            rows.append(SweepRow(c, estimate(records, d), M, T, master))
    return rows


def benchmark(params, c_values, T, M, seed, workers=1, engine="auto") -> SweepRow:
    """Best row of the sweep, always including the no-cut-off baseline.
    Ties break to the first maximal row; deterministic given the seed."""
    cs = list(c_values)
    if not any(c is None for c in cs):
        cs.append(None)
    rows = sweep_cutoff(params, cs, T, M, seed, workers=workers, engine=engine)
    best = max(range(len(rows)), key=lambda i: (rows[i].estimate.rate_per_s, -i))
    return rows[best]


def write_sweep_csv(rows, path) -> None:
    """Sweep CSV: one row per cut-off value, 'none' for the baseline."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SWEEP_CSV_HEADER.split(","))
        for r in rows:
            e = r.estimate
            w.writerow(
                [
                    "none" if r.cutoff is None else r.cutoff,
                    repr(float(e.rate_per_s)),
                    repr(float(e.ci3sigma)),
                    repr(float(e.raw_rate_per_s)),
                    repr(float(e.e_x)),
                    r.M,
                    r.T,
                    r.seed,
                ]
            )


def read_sweep_csv(path) -> list[dict]:
    """Rows of the sweep CSV with numeric fields parsed back."""
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                {
                    "cutoff": None if row["cutoff"] == "none" else int(row["cutoff"]),
                    "rate_per_s": float(row["rate_per_s"]),
                    "ci3sigma": float(row["ci3sigma"]),
                    "raw_rate_per_s": float(row["raw_rate_per_s"]),
                    "e_x": float(row["e_x"]),
                    "M": int(row["M"]),
                    "T": int(row["T"]),
                    "seed": int(row["seed"]),
                }
            )
    return out
