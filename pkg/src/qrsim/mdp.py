"""Repeater-chain Markov decision process: state matrix and one-step dynamics.

The chain state is a triangular matrix over node pairs (i, j), i < j.  Each
entry is either absent or an error record whose integer counters accumulate
additively through entanglement swapping (Pauli channels commute with the
Bell measurement, so counting errors on an otherwise ideal state is exact).
One step executes, in order: entanglement generation in free segments, aging
of every stored record, swap-as-soon-as-possible at every node, policy
discards (the end-to-end pair is never policy-controlled), extraction of the
end-to-end state as the delivery, and finally the optional hard storage cap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def pair_index(i: int, j: int, n_nodes: int) -> int:
    """Row-major triangular index of pair (i, j), i < j:
    (0,1), (0,2), ..., (0,n), (1,2), ..."""
    if not 0 <= i < j < n_nodes:
        raise ValueError(f"bad pair ({i}, {j}) for {n_nodes} nodes")
    return i * (2 * n_nodes - i - 1) // 2 + (j - i - 1)


def pair_list(n_nodes: int) -> list[tuple[int, int]]:
    """All node pairs in triangular index order."""
    return [(i, j) for i in range(n_nodes) for j in range(i + 1, n_nodes)]


@dataclass
class ErrorRecord:
    """Accumulated error counters of one stored bipartite state.

    storage_steps counts dephasing steps; x_count/z_count are carried for
    generality but no channel in this model increments them.
    """

    storage_steps: int
    x_count: int = 0
    z_count: int = 0


@dataclass
class StepOutcome:
    delivered: int | None = None  # storage_steps of the extracted end-to-end state
    reward: float = 0.0
    swaps_performed: list = field(default_factory=list)
    generated: list = field(default_factory=list)


class ChainState:
    """Triangular matrix of stored states for an n-segment chain.

    Internally three int64 arrays indexed by pair_index; storage -1 encodes
    an absent pair.  Each node owns one memory per adjacent direction, so at
    most one active pair may end at a node from the left and one from the
    right (checked by ``occupancy_ok``).
    """

    def __init__(self, n_segments: int):
        if n_segments < 1:
            raise ValueError(f"n_segments must be >= 1, got {n_segments}")
        self.n_segments = n_segments
        self.n_nodes = n_segments + 1
        self.n_pairs = self.n_nodes * (self.n_nodes - 1) // 2
        self.e2e_index = pair_index(0, self.n_nodes - 1, self.n_nodes)
        self.storage = np.full(self.n_pairs, -1, dtype=np.int64)
        self.xerr = np.zeros(self.n_pairs, dtype=np.int64)
        self.zerr = np.zeros(self.n_pairs, dtype=np.int64)

    def index(self, i: int, j: int) -> int:
        return pair_index(i, j, self.n_nodes)

    def get(self, i: int, j: int) -> ErrorRecord | None:
        q = self.index(i, j)
        if self.storage[q] < 0:
            return None
        return ErrorRecord(int(self.storage[q]), int(self.xerr[q]), int(self.zerr[q]))

    def put(self, i: int, j: int, record: ErrorRecord) -> None:
        q = self.index(i, j)
        self.storage[q] = record.storage_steps
        self.xerr[q] = record.x_count
        self.zerr[q] = record.z_count

    def clear(self, i: int, j: int) -> None:
        q = self.index(i, j)
        self.storage[q] = -1
        self.xerr[q] = 0
        self.zerr[q] = 0

    def active_pairs(self) -> list[tuple[int, int]]:
        return [p for p in pair_list(self.n_nodes) if self.storage[self.index(*p)] >= 0]

    def is_empty(self) -> bool:
        return bool(np.all(self.storage < 0))

    def copy(self) -> "ChainState":
        out = ChainState(self.n_segments)
        out.storage[:] = self.storage
        out.xerr[:] = self.xerr
        out.zerr[:] = self.zerr
        return out

    def key(self) -> tuple:
        """Hashable snapshot (active pairs with counters), for enumeration."""
        return tuple(
            (i, j, int(self.storage[q]), int(self.xerr[q]), int(self.zerr[q]))
            for q, (i, j) in enumerate(pair_list(self.n_nodes))
            if self.storage[q] >= 0
        )

    def left_busy(self, node: int) -> bool:
        """True if some active pair (i, node), i < node, occupies this node."""
        return any(self.storage[self.index(i, node)] >= 0 for i in range(node))

    def right_busy(self, node: int) -> bool:
        """True if some active pair (node, j), j > node, occupies this node."""
        return any(self.storage[self.index(node, j)] >= 0 for j in range(node + 1, self.n_nodes))

    def occupancy_ok(self) -> bool:
        """At most one active pair per node and direction."""
        for k in range(self.n_nodes):
            if sum(self.storage[self.index(i, k)] >= 0 for i in range(k)) > 1:
                return False
            if sum(self.storage[self.index(k, j)] >= 0 for j in range(k + 1, self.n_nodes)) > 1:
                return False
        return True

    def dump(self) -> str:
        """Debug dump, one line per active pair: 'i j storage x z'."""
        lines = [
            f"{i} {j} {int(self.storage[q])} {int(self.xerr[q])} {int(self.zerr[q])}"
            for q, (i, j) in enumerate(pair_list(self.n_nodes))
            if self.storage[q] >= 0
        ]
        return "\n".join(lines)


def generate(state: ChainState, p_gen: float, rng=None, uniforms=None) -> list[int]:
    """Attempt entanglement generation in every segment whose two facing
    memories are free; success with probability p_gen creates a fresh record
    with storage 0 (aging brings it to 1 within the same step).

    Segments blocked at either facing memory do not attempt.  ``uniforms``
    may supply one pre-drawn uniform per segment (used by the trajectory
    engines for cross-engine reproducibility); otherwise ``rng`` draws them.
    """
    if uniforms is None:
        uniforms = rng.random(state.n_segments)
    created = []
    for k in range(state.n_segments):
        if uniforms[k] < p_gen and not state.right_busy(k) and not state.left_busy(k + 1):
            state.put(k, k + 1, ErrorRecord(storage_steps=0))
            created.append(k)
    return created


def age(state: ChainState) -> None:
    """Increment storage_steps of every active record by one (fresh records
    included: a state is stored one round before success is communicated)."""
    active = state.storage >= 0
    state.storage[active] += 1


def swap_at(state: ChainState, node: int) -> tuple[int, int]:
    """Bell measurement at an interior node: merge pairs (i, node) and
    (node, j) into (i, j) with component-wise summed counters.  Swapping is
    error-free and deterministic; no counter is incremented."""
    left = next((i for i in range(node) if state.storage[state.index(i, node)] >= 0), None)
    right = next(
        (j for j in range(node + 1, state.n_nodes) if state.storage[state.index(node, j)] >= 0),
        None,
    )
    if left is None or right is None:
        raise ValueError(f"swap at node {node} needs two adjacent active pairs")
    a, b = state.index(left, node), state.index(node, right)
    merged = ErrorRecord(
        int(state.storage[a] + state.storage[b]),
        int(state.xerr[a] + state.xerr[b]),
        int(state.zerr[a] + state.zerr[b]),
    )
    state.clear(left, node)
    state.clear(node, right)
    state.put(left, right, merged)
    return (left, right)


def swap_asap(state: ChainState) -> list[int]:
    """Swap at every node holding two adjacent active pairs, repeatedly,
    until no such node remains.  Record addition is commutative and
    associative, so the final state does not depend on the visit order."""
    swaps = []
    changed = True
    while changed:
        changed = False
        for node in range(1, state.n_nodes - 1):
            has_left = any(state.storage[state.index(i, node)] >= 0 for i in range(node))
            has_right = any(
                state.storage[state.index(node, j)] >= 0 for j in range(node + 1, state.n_nodes)
            )
            if has_left and has_right:
                swap_at(state, node)
                swaps.append(node)
                changed = True
    return swaps


def discard(state: ChainState, flags) -> None:
    """Set every flagged pair to absent; flags over absent pairs are no-ops.
    ``flags`` is a boolean array over all pairs in triangular order."""
    flags = np.asarray(flags, dtype=bool)
    if flags.shape != (state.n_pairs,):
        raise ValueError(f"expected {state.n_pairs} discard flags, got {flags.shape}")
    drop = flags & (state.storage >= 0)
    state.storage[drop] = -1
    state.xerr[drop] = 0
    state.zerr[drop] = 0


def extract_delivery(state: ChainState) -> int | None:
    """If the end-to-end pair (0, n) is active, clear it and return its
    storage_steps; otherwise None."""
    q = state.e2e_index
    if state.storage[q] < 0:
        return None
    t = int(state.storage[q])
    state.storage[q] = -1
    state.xerr[q] = 0
    state.zerr[q] = 0
    return t


def enforce_t_max(state: ChainState, t_max_steps: int) -> None:
    """Environment-level forced discard of records exceeding the hard cap."""
    over = state.storage > t_max_steps
    state.storage[over] = -1
    state.xerr[over] = 0
    state.zerr[over] = 0


def step(state, policy, d, rng=None, *, gen_uniforms=None, t_max_steps=None) -> StepOutcome:
    """One MDP step: generate, age, swap-asap, policy discards, delivery.

    ``policy`` is called with the post-swap state and returns discard flags
    over the controllable pairs (every pair except (0, n), in triangular
    order); swapping is environment-controlled, not policy-controlled.  The
    reward is the fidelity of the delivered state, or 0.
    """
    from .policies import controllable_indices

    created = generate(state, d.p_gen, rng=rng, uniforms=gen_uniforms)
    age(state)
    swaps = swap_asap(state)
    decision = np.asarray(policy(state), dtype=bool)
    ctrl = controllable_indices(state.n_nodes)
    if decision.shape != (len(ctrl),):
        raise ValueError(f"expected {len(ctrl)} policy flags, got {decision.shape}")
    full = np.zeros(state.n_pairs, dtype=bool)
    full[ctrl] = decision
    discard(state, full)
    delivered = extract_delivery(state)
    if t_max_steps is not None:
        enforce_t_max(state, t_max_steps)
    if delivered is None:
        return StepOutcome(None, 0.0, swaps, created)
    from .physics import fidelity_from_storage

    return StepOutcome(delivered, fidelity_from_storage(delivered, d), swaps, created)
