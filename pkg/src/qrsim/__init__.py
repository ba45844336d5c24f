"""Secret-key distribution over memory-based quantum repeater chains:
Monte Carlo simulation, cut-off policy sweeps, and PPO policy search."""

from .physics import (
    DerivedParams,
    KeyRateEstimate,
    RepeaterParams,
    binary_entropy,
    derive,
    fidelity_from_storage,
    key_rate_from_deliveries,
    secret_key_fraction,
)
from .mdp import ChainState, ErrorRecord, StepOutcome
from .policies import (
    NeuralPolicy,
    NoCutoffPolicy,
    UniformCutoffPolicy,
    encode_observation,
    neural_policy,
    no_cutoff_policy,
    uniform_cutoff_policy,
)
from .nn import Adam, Mlp, NonFiniteError
from .montecarlo import (
    SweepRow,
    TrajectoryRecord,
    benchmark,
    estimate,
    run_trajectory,
    sweep_cutoff,
    write_sweep_csv,
)
from .oracle import ExactResult, exact_two_segment, transition_check
from .ppo import TrainConfig, census, evaluate, load_checkpoint, save_checkpoint, suffix_returns, train

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "ChainState",
    "DerivedParams",
    "ErrorRecord",
    "ExactResult",
    "KeyRateEstimate",
    "Mlp",
    "NeuralPolicy",
    "NoCutoffPolicy",
    "NonFiniteError",
    "RepeaterParams",
    "StepOutcome",
    "SweepRow",
    "TrainConfig",
    "TrajectoryRecord",
    "UniformCutoffPolicy",
    "benchmark",
    "binary_entropy",
    "census",
    "derive",
    "encode_observation",
    "estimate",
    "evaluate",
    "exact_two_segment",
    "fidelity_from_storage",
    "key_rate_from_deliveries",
    "load_checkpoint",
    "neural_policy",
    "no_cutoff_policy",
    "run_trajectory",
    "save_checkpoint",
    "secret_key_fraction",
    "suffix_returns",
    "sweep_cutoff",
    "train",
    "transition_check",
    "uniform_cutoff_policy",
    "write_sweep_csv",
]
