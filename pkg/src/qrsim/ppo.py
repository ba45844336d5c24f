"""PPO-clip with non-additive suffix key-rate returns.

The optimization target is the secret key rate of a whole trajectory, which
is not a sum of per-step rewards.  Instead of an episodic reward, every step
t is assigned the key rate of the trajectory suffix starting at t (computed
over the remaining duration), the value network regresses on those suffix
returns, and the advantage is their difference.  Policy updates maximize the
standard clipped surrogate with Adam ascent, early-stopped on the
approximate KL divergence; the value function is fitted by mean-squared
error regression.

Per-epoch collection is deterministic for any worker count: trajectory i of
epoch e always runs on the seed derived from (seed, 2, e, i), and results
are merged by trajectory index.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .montecarlo import estimate, neural_rollout, trajectory_seed
from .nn import Adam, Mlp, NonFiniteError
from .physics import KeyRateEstimate, RepeaterParams, derive, key_rate_from_deliveries
from .policies import PROB_CLAMP, n_pairs, obs_scale

EPOCH_LOG_HEADER = "epoch,mean_key_rate,mean_advantage,approx_kl,policy_loss,value_loss,seconds"


@dataclass
class TrainConfig:
    """Hyperparameters of one learning run (defaults: the 50.6569 km /
    1.45271 ms configuration's tuned values)."""

    params: RepeaterParams
    L: int = 8000              # trajectory length in steps
    N: int = 4                 # trajectories per epoch
    alpha_pi: float = 4e-4     # policy learning rate
    alpha_v: float = 1e-3      # value-function learning rate
    eps_clip: float = 0.2
    n_pi: int = 120            # max policy gradient steps per epoch
    n_v: int = 80              # value gradient steps per epoch
    kl_max: float = 0.015      # early stop for the policy update
    eps_adam: float = 1e-8
    epochs: int = 100
    workers: int = 1
    seed: int = 0
    checkpoint_every: int = 100
    hidden: tuple = (32, 32)
    advantage_norm: bool = True        # per-epoch zero-mean unit-variance
    suffix_full_horizon: bool = False  # ablation: divide by L*tau0 instead of (L-t)*tau0
    init_scale: float = 1.0

    def validate(self):
        for name in ("L", "N", "n_pi", "n_v", "epochs", "workers", "checkpoint_every"):
            if name != "epochs" and getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not (self.alpha_pi > 0 and self.alpha_v > 0 and self.kl_max > 0):
            raise ValueError("learning rates and kl_max must be > 0")
        if not 0.0 < self.eps_clip < 1.0:
            raise ValueError("eps_clip must be in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def config_hash(self) -> str:
        """Identity of the run for resume checks: everything except the stop
        point and execution details (epochs, workers, checkpoint cadence)."""
        doc = self.to_dict()
        for transient in ("epochs", "workers", "checkpoint_every"):
            doc.pop(transient)
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class ExperienceBuffer:
    """One epoch of experience: N trajectories of length L, flattened."""

    obs: np.ndarray        # (N*L, pairs)
    acts: np.ndarray       # (N*L, ctrl) float64 in {0, 1}
    logp_old: np.ndarray   # (N*L,) joint log-probabilities at collection
    returns: np.ndarray    # (N*L,) suffix key rates
    values: np.ndarray = None
    advantages: np.ndarray = None
    raw_advantage_mean: float = 0.0
    traj_rates: list = field(default_factory=list)


def suffix_returns(record, L: int, d, full_horizon: bool = False) -> np.ndarray:
    """Key rate of every trajectory suffix: R_t from the deliveries at steps
    >= t over the remaining duration (L - t) * tau0 (or the full horizon
    L * tau0 when ablating the normalization).  R is 0 wherever the suffix
    contains no delivery."""
    from .physics import binary_entropy

    if record.total_steps != L:
        raise ValueError(f"record length {record.total_steps} != L = {L}")
    counts = np.zeros(L, dtype=np.float64)
    decays = np.zeros(L, dtype=np.float64)
    if record.deliveries.size:
        steps = record.deliveries[:, 0]
        stor = record.deliveries[:, 1]
        w = np.exp(stor * np.log(d.decay_per_step))
        np.add.at(counts, steps, 1.0)
        np.add.at(decays, steps, w)
    suffix_cnt = np.cumsum(counts[::-1])[::-1]
    suffix_dec = np.cumsum(decays[::-1])[::-1]
    if full_horizon:
        durations = np.full(L, L * d.tau0_s)
    else:
        durations = (L - np.arange(L)) * d.tau0_s
    have = suffix_cnt > 0
    mean_decay = np.ones(L)
    mean_decay[have] = suffix_dec[have] / suffix_cnt[have]
    e_x = 0.5 * (1.0 - mean_decay)
    fraction = np.maximum(0.0, 1.0 - binary_entropy(np.clip(e_x, 0.0, 0.5)))
    rates = (suffix_cnt / durations) * fraction
    rates[~have] = 0.0
    return rates


def _forward_logp(net: Mlp, obs, acts):
    """Batched policy forward: discard probabilities, cache and the joint
    Bernoulli log-probability of the recorded actions."""
    probs, cache = net.forward_batch(obs)
    pc = np.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    logp = np.sum(acts * np.log(pc) + (1.0 - acts) * np.log(1.0 - pc), axis=1)
    return probs, cache, logp


def collect_epoch(cfg: TrainConfig, policy_net: Mlp, epoch: int):
    """Run N trajectories (sample mode) and assemble the experience buffer.
    Every advantage-related field is left for ``compute_advantages``."""
    d = derive(cfg.params)

    def one(i):
        ss = np.random.SeedSequence(cfg.seed, spawn_key=(2, epoch, i))
        return neural_rollout(cfg.params, policy_net, cfg.L, ss, mode="sample")

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, range(cfg.N)))
    else:
        results = [one(i) for i in range(cfg.N)]

    obs = np.concatenate([r[1][0] for r in results])
    acts = np.concatenate([r[1][1] for r in results]).astype(np.float64)
    logp = np.concatenate([r[1][2] for r in results])
    returns = np.concatenate(
        [suffix_returns(r[0], cfg.L, d, cfg.suffix_full_horizon) for r in results]
    )
    traj_rates = [
        key_rate_from_deliveries(r[0].storage_times, cfg.L, d).rate_per_s for r in results
    ]
    return ExperienceBuffer(obs, acts, logp, returns, traj_rates=traj_rates)


def compute_advantages(buffer: ExperienceBuffer, value_net: Mlp, normalize: bool = True) -> None:
    """A_t = R_t - V(s_t), optionally normalized over the epoch to zero mean
    and unit variance (all-equal advantages normalize to exactly zero)."""
    values, _ = value_net.forward_batch(buffer.obs)
    buffer.values = values[:, 0]
    raw = buffer.returns - buffer.values
    buffer.raw_advantage_mean = float(np.mean(raw))
    if normalize:
        std = float(np.std(raw))
        centered = raw - np.mean(raw)
        buffer.advantages = centered / std if std > 0.0 else np.zeros_like(raw)
    else:
        buffer.advantages = raw


def policy_update(policy_net: Mlp, buffer: ExperienceBuffer, cfg: TrainConfig, adam: Adam):
    """Adam ascent on the mean clipped surrogate.

    The old log-probabilities are recomputed from the buffer's (obs, action)
    pairs with the same batched forward used for the new ones, so the ratio
    is exactly 1 (and the surrogate exactly the mean advantage) before the
    first step.  After each step the approximate KL
    mean(logp_old - logp_new) is evaluated; steps stop when it exceeds
    kl_max.  Returns (steps taken, final KL, final surrogate value).
    """
    if buffer.advantages is None:
        raise ValueError("advantages not computed (run compute_advantages first)")
    obs, acts, adv = buffer.obs, buffer.acts, buffer.advantages
    B = adv.shape[0]
    if B == 0:
        raise ValueError("empty experience buffer")
    _, _, logp_old = _forward_logp(policy_net, obs, acts)
    params = policy_net.parameters()
    lo, hi = 1.0 - cfg.eps_clip, 1.0 + cfg.eps_clip
    steps = 0
    while True:
        probs, cache, logp_new = _forward_logp(policy_net, obs, acts)
        ratio = np.exp(logp_new - logp_old)
        kl = float(np.mean(logp_old - logp_new))
        surrogate = float(np.mean(np.minimum(ratio * adv, np.clip(ratio, lo, hi) * adv)))
        if steps > 0 and kl > cfg.kl_max:
            break
        if steps >= cfg.n_pi:
            break
        # clip-inactive samples carry gradient A * ratio * dlogp/dtheta
        active = np.where(adv >= 0.0, ratio < hi, ratio > lo)
        w = np.where(active, adv * ratio, 0.0) / B
        dz = w[:, None] * (acts - probs)
        dWs, dbs, _ = policy_net.backward_batch(cache, dz, wrt="preact")
        adam.update(params, policy_net.gradients_flat(dWs, dbs), cfg.alpha_pi, maximize=True)
        steps += 1
    if not np.isfinite(surrogate):
        raise NonFiniteError("policy surrogate became non-finite")
    return steps, kl, surrogate


def value_update(value_net: Mlp, buffer: ExperienceBuffer, cfg: TrainConfig, adam: Adam) -> float:
    """n_v Adam descent steps on the mean squared error between V(s_t) and
    the suffix returns; returns the final MSE."""
    obs, targets = buffer.obs, buffer.returns
    B = targets.shape[0]
    if B == 0:
        raise ValueError("empty experience buffer")
    params = value_net.parameters()
    for _ in range(cfg.n_v):
        v, cache = value_net.forward_batch(obs)
        err = v[:, 0] - targets
        dout = (2.0 / B) * err[:, None]
        dWs, dbs, _ = value_net.backward_batch(cache, dout, wrt="output")
        adam.update(params, value_net.gradients_flat(dWs, dbs), cfg.alpha_v, maximize=False)
    v, _ = value_net.forward_batch(obs)
    mse = float(np.mean((v[:, 0] - targets) ** 2))
    if not np.isfinite(mse):
        raise NonFiniteError("value loss became non-finite")
    return mse


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, net: Mlp, adam: Adam | None, epoch: int, config_hash: str) -> None:
    doc = net.to_dict()
    doc = {
        "arch": {
            "input": doc["input"],
            "hidden": doc["hidden"],
            "output": doc["output"],
            "hidden_act": doc["hidden_act"],
            "out_act": doc["out_act"],
        },
        "weights": doc["weights"],
        "biases": doc["biases"],
        "adam": adam.state_dict() if adam is not None else None,
        "epoch": epoch,
        "config_hash": config_hash,
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    """Returns (net, adam_state | None, epoch, config_hash)."""
    with open(path) as f:
        doc = json.load(f)
    net = Mlp.from_dict(doc["arch"], doc["weights"], doc["biases"])
    return net, doc.get("adam"), int(doc["epoch"]), doc.get("config_hash", "")


def _net_for(obj, params: RepeaterParams, role="policy") -> Mlp:
    """Accept an Mlp or a checkpoint path; validate dimensions."""
    net = obj if isinstance(obj, Mlp) else load_checkpoint(obj)[0]
    P = n_pairs(params.n_segments + 1)
    want_out = P - 1 if role == "policy" else 1
    if net.dims[0] != P or net.dims[-1] != want_out:
        raise ValueError(f"{role} net dims {net.dims} do not fit {params.n_segments} segments")
    return net


# -- training loop -----------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def train(cfg: TrainConfig, out_dir, resume: bool = False) -> Path:
    """Run the training loop; returns the run directory.

    The run directory holds config.json (the effective configuration and its
    hash), epoch_log.csv, and checkpoints/policy_NNNNNN.json +
    value_NNNNNN.json where NNNNNN counts completed epochs.  A non-finite
    loss or parameter persists the current state before raising.  With
    resume=True the latest checkpoint pair continues the epoch numbering;
    collection seeds depend only on (seed, epoch, index), so an interrupted
    and resumed run matches an uninterrupted one.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    chash = cfg.config_hash()
    log_path = out_dir / "epoch_log.csv"

    cfg_doc = cfg.to_dict()
    cfg_doc["config_hash"] = chash
    with open(out_dir / "config.json", "w") as f:
        json.dump(cfg_doc, f, indent=2, sort_keys=True)

    P = n_pairs(cfg.params.n_segments + 1)
    n_ctrl = P - 1
    if resume:
        done = sorted(int(p.stem.split("_")[1]) for p in ckpt_dir.glob("policy_*.json"))
        if not done:
            raise FileNotFoundError(f"resume requested but no checkpoints in {ckpt_dir}")
        start = done[-1]
        policy_net, pol_adam_state, _, old_hash = load_checkpoint(
            ckpt_dir / f"policy_{start:06d}.json"
        )
        value_net, val_adam_state, _, _ = load_checkpoint(ckpt_dir / f"value_{start:06d}.json")
        if old_hash and old_hash != chash:
            raise ValueError(f"checkpoint config_hash {old_hash} != current {chash}")
        pol_adam = Adam.from_state_dict(pol_adam_state, policy_net.parameters())
        val_adam = Adam.from_state_dict(val_adam_state, value_net.parameters())
        # drop log rows past the checkpoint (an abort may have logged further)
        if log_path.exists():
            with open(log_path) as f:
                lines = f.read().splitlines()
            kept = [lines[0]] + [ln for ln in lines[1:] if ln and int(ln.split(",")[0]) < start]
            with open(log_path, "w") as f:
                f.write("\n".join(kept) + "\n")
    else:
        start = 0
        policy_net = Mlp.init(
            [P, *cfg.hidden, n_ctrl],
            np.random.SeedSequence(cfg.seed, spawn_key=(0,)),
            scale=cfg.init_scale,
            out_act="sigmoid",
        )
        value_net = Mlp.init(
            [P, *cfg.hidden, 1],
            np.random.SeedSequence(cfg.seed, spawn_key=(1,)),
            scale=cfg.init_scale,
            out_act="identity",
        )
        pol_adam = Adam(policy_net.parameters(), eps=cfg.eps_adam)
        val_adam = Adam(value_net.parameters(), eps=cfg.eps_adam)
        save_checkpoint(ckpt_dir / "policy_000000.json", policy_net, pol_adam, 0, chash)
        save_checkpoint(ckpt_dir / "value_000000.json", value_net, val_adam, 0, chash)
        with open(log_path, "w") as f:
            f.write(EPOCH_LOG_HEADER + "\n")

    def persist(completed: int):
        save_checkpoint(ckpt_dir / f"policy_{completed:06d}.json", policy_net, pol_adam, completed, chash)
        save_checkpoint(ckpt_dir / f"value_{completed:06d}.json", value_net, val_adam, completed, chash)

    for epoch in range(start, cfg.epochs):
        t0 = time.perf_counter()
        try:
            buffer = collect_epoch(cfg, policy_net, epoch)
            compute_advantages(buffer, value_net, normalize=cfg.advantage_norm)
            _, kl, surrogate = policy_update(policy_net, buffer, cfg, pol_adam)
            mse = value_update(value_net, buffer, cfg, val_adam)
            policy_net.assert_finite()
            value_net.assert_finite()
        except NonFiniteError:
            persist(epoch)
            raise
        seconds = time.perf_counter() - t0
        with open(log_path, "a") as f:
            f.write(
                ",".join(
                    [
                        str(epoch),
                        _fmt(float(np.mean(buffer.traj_rates))),
                        _fmt(buffer.raw_advantage_mean),
                        _fmt(kl),
                        _fmt(-surrogate),
                        _fmt(mse),
                        _fmt(seconds),
                    ]
                )
                + "\n"
            )
        if (epoch + 1) % cfg.checkpoint_every == 0 or epoch + 1 == cfg.epochs:
            persist(epoch + 1)
    if cfg.epochs == start:
        persist(start)
    return out_dir


# -- frozen-policy analysis ---------------------------------------------------


def evaluate(
    checkpoint,
    params: RepeaterParams,
    M: int = 100,
    T: int = 100_000,
    seed: int = 0,
    workers: int = 1,
    engine="auto",
) -> KeyRateEstimate:
    """Key-rate estimate of a frozen policy run in sample mode over M
    independent trajectories of length T."""
    net = _net_for(checkpoint, params)
    d = derive(params)

    def one(i):
        return neural_rollout(params, net, T, trajectory_seed(seed, 0, i), mode="sample", engine=engine)[0]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(one, range(M)))
    else:
        records = [one(i) for i in range(M)]
    return estimate(records, d)


def census(checkpoint, params: RepeaterParams, T: int, seed: int = 0, engine="auto") -> dict:
    """Visit/action counts of a frozen policy over one T-step rollout.

    Returns {storage tuple -> {action bit tuple -> count}}; the storage
    tuple is the observed post-swap state with 0 for absent pairs (recovered
    exactly from the scaled observation).  Counts sum to T.
    """
    net = _net_for(checkpoint, params)
    d = derive(params)
    _, (obs, acts, _) = neural_rollout(params, net, T, trajectory_seed(seed, 0, 0), mode="sample", engine=engine)
    storages = np.rint(obs / obs_scale(d)).astype(np.int64)
    table: dict = {}
    for row in range(obs.shape[0]):
        skey = tuple(int(v) for v in storages[row])
        akey = tuple(int(v) for v in acts[row])
        per = table.setdefault(skey, {})
        per[akey] = per.get(akey, 0) + 1
    return table


def write_census_csv(table: dict, path) -> None:
    """Sorted census CSV: state '0;1;...;0', action '010...', count."""
    with open(path, "w") as f:
        f.write("state,action,count\n")
        for skey in sorted(table):
            for akey in sorted(table[skey]):
                state = ";".join(str(v) for v in skey)
                action = "".join(str(v) for v in akey)
                f.write(f"{state},{action},{table[skey][akey]}\n")
