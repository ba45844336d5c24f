"""Physical parameters of a repeater chain and BB84 secret-key-rate math.

All rate formulas assume the loss-and-dephasing-only error model: photons are
lost in fiber with transmissivity eta = exp(-L0/L_att), and stored qubits
dephase so that a bipartite state kept for t steps has fidelity
F = (1 + exp(-t*tau0/tau_c)) / 2.  Under that model e_Z = 0 and
e_X = (1 - E[exp(-t/tau_c)]) / 2, which is what ``key_rate_from_deliveries``
evaluates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RepeaterParams:
    """Physical configuration of a repeater chain.

    Lengths in km, coherence time in ms, signal speed in m/s (the units used
    in the experimental literature); everything is converted to seconds and
    steps once, by ``derive``.

    Attributes:
        n_segments: number of elementary links (nodes = n_segments + 1).
        L0_km: segment length.
        tau_c_ms: memory coherence time for a *bipartite* state.
        L_att_km: fiber attenuation length (22 km at 1550 nm).
        c_signal_mps: classical/optical signal speed in fiber.
        p_x: efficiency factor multiplying the transmissivity (sources,
            couplings, detectors, memory write-in).
        t_max_steps: optional hard cap on accumulated storage time; states
            older than this are forcibly discarded by the environment.
    """

    n_segments: int
    L0_km: float
    tau_c_ms: float
    L_att_km: float = 22.0
    c_signal_mps: float = 2e8
    p_x: float = 1.0
    t_max_steps: int | None = None

    def __post_init__(self):
        if self.n_segments < 1:
            raise ValueError(f"n_segments must be >= 1, got {self.n_segments}")
        if not self.L0_km > 0:
            raise ValueError(f"L0_km must be > 0, got {self.L0_km}")
        if not self.L_att_km > 0:
            raise ValueError(f"L_att_km must be > 0, got {self.L_att_km}")
        if not self.c_signal_mps > 0:
            raise ValueError(f"c_signal_mps must be > 0, got {self.c_signal_mps}")
        if not self.tau_c_ms > 0:
            raise ValueError(f"tau_c_ms must be > 0, got {self.tau_c_ms}")
        if not 0.0 <= self.p_x <= 1.0:
            raise ValueError(f"p_x must be in [0, 1], got {self.p_x}")
        if self.t_max_steps is not None and self.t_max_steps < 1:
            raise ValueError(f"t_max_steps must be >= 1, got {self.t_max_steps}")


@dataclass(frozen=True)
class DerivedParams:
    """Per-step quantities derived from a :class:`RepeaterParams`.

    Attributes:
        tau0_s: duration of one time step, L0/c (one round of communication).
        eta: fiber transmissivity exp(-L0/L_att).
        p_gen: per-step, per-segment entanglement generation probability.
        decay_per_step: bipartite dephasing factor exp(-tau0/tau_c).
    """

    tau0_s: float
    eta: float
    p_gen: float
    decay_per_step: float


@dataclass(frozen=True)
class KeyRateEstimate:
    """Secret-key-rate estimate with its ingredients.

    rate_per_s is Y * max(0, 1 - h(e_x)) in secret bits per second;
    raw_rate_per_s is the delivery rate Y; mean_decay is the sample mean of
    exp(-t/tau_c) over delivered states; ci3sigma is the half-width of the
    3-sigma confidence interval on rate_per_s (0 for a single trajectory);
    n_samples counts deliveries.
    """

    rate_per_s: float
    raw_rate_per_s: float
    mean_decay: float
    e_x: float
    ci3sigma: float
    n_samples: int


def derive(params: RepeaterParams) -> DerivedParams:
    """Compute per-step quantities: tau0 = L0/c, eta = exp(-L0/L_att),
    p_gen = p_x * eta, decay_per_step = exp(-tau0/tau_c)."""
    tau0 = params.L0_km * 1e3 / params.c_signal_mps
    eta = math.exp(-params.L0_km / params.L_att_km)
    p_gen = params.p_x * eta
    decay = math.exp(-tau0 / (params.tau_c_ms * 1e-3))
    return DerivedParams(tau0_s=tau0, eta=eta, p_gen=p_gen, decay_per_step=decay)


def binary_entropy(x):
    """Binary entropy h(x) = -x log2(x) - (1-x) log2(1-x), h(0) = h(1) = 0.

    Accepts scalars or arrays; raises ValueError outside [0, 1].
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise ValueError(f"binary_entropy argument outside [0, 1]: {x}")
    interior = (arr > 0.0) & (arr < 1.0)
    safe = np.where(interior, arr, 0.5)
    h = np.where(interior, -safe * np.log2(safe) - (1 - safe) * np.log2(1 - safe), 0.0)
    return float(h) if np.isscalar(x) or arr.ndim == 0 else h


def secret_key_fraction(e1, e2):
    """Secret key fraction 1 - h(e1) - h(e2); may be negative, callers clamp
    at 0 when reporting rates."""
    return 1.0 - binary_entropy(e1) - binary_entropy(e2)


def decay_power(d: DerivedParams, t_steps):
    """decay_per_step ** t, computed as exp(t * ln(decay)) so large t does
    not accumulate repeated-multiplication drift."""
    return np.exp(np.asarray(t_steps, dtype=np.float64) * math.log(d.decay_per_step))


def fidelity_from_storage(t_steps: int, d: DerivedParams) -> float:
    """Fidelity (1 + decay^t) / 2 of a state stored t steps; the MDP reward."""
    if t_steps < 0:
        raise ValueError(f"t_steps must be >= 0, got {t_steps}")
    return 0.5 * (1.0 + float(decay_power(d, t_steps)))


def key_rate_from_deliveries(delivery_times, total_steps: int, d: DerivedParams) -> KeyRateEstimate:
    """Secret key rate of one trajectory from its delivered storage times.

    Y = count / (total_steps * tau0), e_x = (1 - mean decay^t) / 2,
    rate = Y * max(0, 1 - h(e_x)).  With no deliveries the rate is 0 and
    e_x is reported as 0.5 (maximal uncertainty, display only).
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    times = np.asarray(delivery_times, dtype=np.int64)
    n = int(times.size)
    if n == 0:
        return KeyRateEstimate(0.0, 0.0, 0.0, 0.5, 0.0, 0)
    duration = total_steps * d.tau0_s
    raw = n / duration
    mean_decay = float(np.mean(decay_power(d, times)))
    e_x = 0.5 * (1.0 - mean_decay)
    fraction = secret_key_fraction(0.0, e_x)
    rate = raw * max(0.0, fraction)
    return KeyRateEstimate(rate, raw, mean_decay, e_x, 0.0, n)
