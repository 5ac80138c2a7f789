#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Finite-horizon tabular MDPs, policies and exact dynamic programming.

Steps are 0-indexed in code: step h in [0, H) holds P[h], r[h] and pi[h].
"""

import itertools
from dataclasses import dataclass
from enum import StrEnum

import numpy as np

from offrl.errors import DimensionError, PolicyCapError
from offrl.settings import SETTINGS
from offrl.utils import array_hash

PROBABILITY_TOLERANCE = 1e-12


class RewardNoise(StrEnum):
    DETERMINISTIC = "deterministic"
    BERNOULLI = "bernoulli"


def _frozen(array, dtype=float) -> np.ndarray:
    a = np.array(array, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """
    A finite-horizon MDP with S states, A actions and H steps.

    Attributes:
        P (np.ndarray): transition kernel, shape (H, S, A, S).
        r (np.ndarray): mean rewards in [0, 1], shape (H, S, A).
        d1 (np.ndarray): initial state distribution, shape (S,).
        reward_noise (RewardNoise): deterministic rewards, or Bernoulli with mean r.
    """
    P: np.ndarray
    r: np.ndarray
    d1: np.ndarray
    reward_noise: RewardNoise = RewardNoise.DETERMINISTIC

    def __post_init__(self):
        object.__setattr__(self, "P", _frozen(self.P))
        object.__setattr__(self, "r", _frozen(self.r))
        object.__setattr__(self, "d1", _frozen(self.d1))
        object.__setattr__(self, "reward_noise", RewardNoise(self.reward_noise))
        if self.P.ndim != 4 or self.P.shape[1] != self.P.shape[3]:
            raise DimensionError(f"P must have shape (H, S, A, S), got {self.P.shape}")
        if self.r.shape != self.P.shape[:3]:
            raise DimensionError(f"r must have shape {self.P.shape[:3]}, got {self.r.shape}")
        if self.d1.shape != (self.S,):
            raise DimensionError(f"d1 must have shape ({self.S},), got {self.d1.shape}")
        if self.H < 1 or self.S < 1 or self.A < 1:
            raise DimensionError("S, A and H must be positive")

    @property
    def H(self) -> int:
        return self.P.shape[0]

    @property
    def S(self) -> int:
        return self.P.shape[1]

    @property
    def A(self) -> int:
        return self.P.shape[2]

    @property
    def hash(self) -> str:
        return array_hash(self.P, self.r, self.d1, [self.reward_noise == RewardNoise.BERNOULLI])

    def reward_variance(self) -> np.ndarray:
        """Per-cell reward variance, shape (H, S, A)."""
        if self.reward_noise == RewardNoise.BERNOULLI:
            return self.r * (1.0 - self.r)
        return np.zeros_like(self.r)

    def with_rewards(self, r) -> "TabularMDP":
        return TabularMDP(P=self.P, r=r, d1=self.d1, reward_noise=self.reward_noise)


@dataclass(frozen=True, eq=False)
class Policy:
    """A non-stationary policy; pi[h, s] is a distribution over actions."""
    pi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pi", _frozen(self.pi))
        if self.pi.ndim != 3:
            raise DimensionError(f"pi must have shape (H, S, A), got {self.pi.shape}")

    @property
    def H(self) -> int:
        return self.pi.shape[0]

    @property
    def S(self) -> int:
        return self.pi.shape[1]

    @property
    def A(self) -> int:
        return self.pi.shape[2]

    @property
    def hash(self) -> str:
        return array_hash(self.pi)

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "Policy":
        """Build a policy from an (H, S) table of action indices."""
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_actions)[actions])

    @classmethod
    def uniform(cls, H: int, S: int, A: int) -> "Policy":
        return cls(np.full((H, S, A), 1.0 / A))

    def is_deterministic(self) -> bool:
        return bool(np.all((self.pi == 0.0) | (self.pi == 1.0)))

    def actions(self) -> np.ndarray:
        """(H, S) table of the most likely action, lowest index on ties."""
        return np.argmax(self.pi, axis=-1)

    def validate(self) -> list:
        violations = []
        if (self.pi < 0).any():
            violations.append("pi has negative entries")
        sums = self.pi.sum(axis=-1)
        bad = np.argwhere(np.abs(sums - 1.0) > PROBABILITY_TOLERANCE)
        for h, s in bad[:10]:
            violations.append(f"pi[{h}, {s}] sums to {sums[h, s]!r}")
        return violations


@dataclass(frozen=True, eq=False)
class ValueTables:
    """V has shape (H, S) and Q has shape (H, S, A); the terminal value is zero."""
    V: np.ndarray
    Q: np.ndarray
    v: float

    def next_values(self, h: int) -> np.ndarray:
        """V at step h + 1, zeros past the horizon."""
        if h + 1 >= self.V.shape[0]:
            return np.zeros(self.V.shape[1])
        return self.V[h + 1]


@dataclass(frozen=True, eq=False)
class OccupancyTables:
    """
    Occupancy measures of one policy.

    Attributes:
        d (np.ndarray): state-action occupancy, shape (H, S, A).
        d_state (np.ndarray): state occupancy, shape (H, S).
        d_final (np.ndarray): distribution of the state after the last step, shape (S,).
    """
    d: np.ndarray
    d_state: np.ndarray
    d_final: np.ndarray


def check_dimensions(mdp: TabularMDP, policy: Policy):
    if policy.pi.shape != (mdp.H, mdp.S, mdp.A):
        raise DimensionError(
            f"policy shape {policy.pi.shape} does not match MDP (H, S, A) = {(mdp.H, mdp.S, mdp.A)}")


def validate_mdp(mdp: TabularMDP) -> list:
    """
    List every violated invariant of an MDP; an empty list means valid.
    """
    violations = []
    if (mdp.P < 0).any():
        for h, s, a, t in np.argwhere(mdp.P < 0)[:10]:
            violations.append(f"P[{h}, {s}, {a}, {t}] is negative ({mdp.P[h, s, a, t]!r})")
    sums = mdp.P.sum(axis=-1)
    for h, s, a in np.argwhere(np.abs(sums - 1.0) > PROBABILITY_TOLERANCE)[:10]:
        violations.append(
            f"P[{h}, {s}, {a}] sums to {sums[h, s, a]!r} (off by {abs(sums[h, s, a] - 1.0):.3e})")
    for h, s, a in np.argwhere((mdp.r < 0) | (mdp.r > 1))[:10]:
        violations.append(f"r[{h}, {s}, {a}] = {mdp.r[h, s, a]!r} is outside [0, 1]")
    if (mdp.d1 < 0).any() or abs(mdp.d1.sum() - 1.0) > PROBABILITY_TOLERANCE:
        violations.append(f"d1 is not a distribution (sums to {mdp.d1.sum()!r})")
    return violations


def policy_value(mdp: TabularMDP, policy: Policy) -> ValueTables:
    """Backward Bellman recursion for a fixed policy."""
    check_dimensions(mdp, policy)
    V = np.zeros((mdp.H + 1, mdp.S))
    Q = np.zeros((mdp.H, mdp.S, mdp.A))
    for h in reversed(range(mdp.H)):
        Q[h] = mdp.r[h] + mdp.P[h] @ V[h + 1]
        V[h] = np.sum(policy.pi[h] * Q[h], axis=-1)
    return ValueTables(V=V[:mdp.H], Q=Q, v=float(mdp.d1 @ V[0]))


def optimal_policy(mdp: TabularMDP) -> tuple:
    """
    Backward induction with the maximum over actions.

    Returns:
        (Policy, ValueTables): a deterministic optimal policy (lowest action
        index among exact ties) and its value tables.
    """
    V = np.zeros((mdp.H + 1, mdp.S))
    Q = np.zeros((mdp.H, mdp.S, mdp.A))
    actions = np.zeros((mdp.H, mdp.S), dtype=int)
    for h in reversed(range(mdp.H)):
        Q[h] = mdp.r[h] + mdp.P[h] @ V[h + 1]
        actions[h] = np.argmax(Q[h], axis=-1)
        V[h] = Q[h].max(axis=-1)
    policy = Policy.deterministic(actions, mdp.A)
    return policy, ValueTables(V=V[:mdp.H], Q=Q, v=float(mdp.d1 @ V[0]))


def occupancy(mdp: TabularMDP, policy: Policy) -> OccupancyTables:
    """Forward recursion for the marginal state and state-action distributions."""
    check_dimensions(mdp, policy)
    d = np.zeros((mdp.H, mdp.S, mdp.A))
    state = np.array(mdp.d1)
    for h in range(mdp.H):
        d[h] = state[:, None] * policy.pi[h]
        state = np.einsum("sa,sat->t", d[h], mdp.P[h])
    return OccupancyTables(d=d, d_state=d.sum(axis=-1), d_final=state)


def occupancy_batch(mdp: TabularMDP, actions: np.ndarray) -> np.ndarray:
    """
    Occupancies of many deterministic policies at once.

    Args:
        actions (np.ndarray): (K, H, S) action tables.
    Returns:
        np.ndarray: (K, H, S, A) state-action occupancies.
    """
    actions = np.asarray(actions, dtype=int)
    K = actions.shape[0]
    d = np.zeros((K, mdp.H, mdp.S, mdp.A))
    state = np.tile(mdp.d1, (K, 1))
    onehot = np.eye(mdp.A)
    for h in range(mdp.H):
        d[:, h] = state[:, :, None] * onehot[actions[:, h]]
        state = np.einsum("ksa,sat->kt", d[:, h], mdp.P[h])
    return d


def policy_values_batch(mdp: TabularMDP, actions: np.ndarray) -> np.ndarray:
    """Values of many deterministic policies, shape (K,)."""
    return np.einsum("khsa,hsa->k", occupancy_batch(mdp, actions), mdp.r)


def policy_count(S: int, A: int, H: int) -> int:
    return A ** (S * H)


def enumerate_deterministic(S: int, A: int, H: int, cap: int | None = None) -> np.ndarray:
    """
    Every deterministic policy as a (K, H, S) action table.

    Policy k is the base-A expansion of k with the digit for (h, s) at
    position h * S + s counted from the most significant end.

    Raises:
        PolicyCapError: A^(S*H) exceeds the cap.
    """
    cap = SETTINGS.enum_cap if cap is None else cap
    count = policy_count(S, A, H)
    if count > cap:
        raise PolicyCapError(count, cap)
    table = np.array(list(itertools.product(range(A), repeat=S * H)), dtype=int)
    return table.reshape(count, H, S)


def policy_index(actions: np.ndarray, A: int) -> int:
    """Position of an (H, S) action table in enumerate_deterministic's order."""
    index = 0
    for digit in np.asarray(actions, dtype=int).ravel():
        index = index * A + int(digit)
    return index


def reachable_states(mdp: TabularMDP) -> np.ndarray:
    """(H, S) mask of states reachable at each step under some policy."""
    mask = np.zeros((mdp.H, mdp.S), dtype=bool)
    mask[0] = mdp.d1 > 0
    for h in range(1, mdp.H):
        mask[h] = (mdp.P[h - 1][mask[h - 1]] > 0).any(axis=(0, 1))
    return mask
