#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Logged trajectories: simulation, count statistics and the dataset file format."""

import math
from dataclasses import dataclass, field

import numpy as np

from offrl.errors import (
    ChainError,
    DatasetParseError,
    DimensionError,
    IndexRangeError,
    MalformedHeaderError,
    TruncatedRecordError,
)
from offrl.mdp import Policy, RewardNoise, TabularMDP, check_dimensions
from offrl.utils import philox_key

CHUNK = 65536


@dataclass(frozen=True)
class DatasetMeta:
    seed: int | None = None
    policy_hash: str | None = None
    mdp_hash: str | None = None


@dataclass(frozen=True)
class Transitions:
    """Pooled view of a dataset: N = n * H transitions in trajectory-major order."""
    h: np.ndarray
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray

    @property
    def N(self) -> int:
        return len(self.s)


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    n trajectories of H steps.

    Attributes:
        S (int): declared state count.
        A (int): declared action count.
        states (np.ndarray): (n, H + 1) visited states, column h + 1 is s' of step h.
        actions (np.ndarray): (n, H) actions.
        rewards (np.ndarray): (n, H) rewards.
        meta (DatasetMeta): provenance; fields are None for external data.
    """
    S: int
    A: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    meta: DatasetMeta = field(default_factory=DatasetMeta)

    def __post_init__(self):
        states = np.array(self.states, dtype=np.int64, ndmin=2)
        actions = np.array(self.actions, dtype=np.int64, ndmin=2)
        rewards = np.array(self.rewards, dtype=float, ndmin=2)
        if states.shape[1] != actions.shape[1] + 1 or actions.shape != rewards.shape \
                or states.shape[0] != actions.shape[0]:
            raise DimensionError(
                f"inconsistent dataset arrays: states {states.shape}, actions {actions.shape}, "
                f"rewards {rewards.shape}")
        if states.size and (states.min() < 0 or states.max() >= self.S):
            raise DimensionError(f"state index outside [0, {self.S})")
        if actions.size and (actions.min() < 0 or actions.max() >= self.A):
            raise DimensionError(f"action index outside [0, {self.A})")
        for name, value in (("states", states), ("actions", actions), ("rewards", rewards)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n(self) -> int:
        return self.actions.shape[0]

    @property
    def H(self) -> int:
        return self.actions.shape[1]

    def transitions(self) -> Transitions:
        n, H = self.n, self.H
        return Transitions(
            h=np.tile(np.arange(H), n),
            s=self.states[:, :H].ravel(),
            a=self.actions.ravel(),
            r=self.rewards.ravel(),
            s_next=self.states[:, 1:].ravel(),
        )

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=int)
        return Dataset(self.S, self.A, self.states[indices], self.actions[indices],
                       self.rewards[indices], self.meta)

    def merge(self, other: "Dataset") -> "Dataset":
        if (self.S, self.A, self.H) != (other.S, other.A, other.H):
            raise DimensionError("cannot merge datasets with different (S, A, H)")
        return Dataset(self.S, self.A,
                       np.vstack([self.states, other.states]),
                       np.vstack([self.actions, other.actions]),
                       np.vstack([self.rewards, other.rewards]))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return ((self.S, self.A, self.meta) == (other.S, other.A, other.meta)
                and np.array_equal(self.states, other.states)
                and np.array_equal(self.actions, other.actions)
                and np.array_equal(self.rewards, other.rewards))

    __hash__ = None

    @classmethod
    def empty(cls, S: int, A: int, H: int) -> "Dataset":
        return cls(S, A, np.zeros((0, H + 1), dtype=np.int64), np.zeros((0, H), dtype=np.int64),
                   np.zeros((0, H)))


@dataclass(frozen=True, eq=False)
class CountTables:
    n_sa: np.ndarray
    n_s: np.ndarray
    n_sas: np.ndarray
    r_sum: np.ndarray

    def __add__(self, other: "CountTables") -> "CountTables":
        return CountTables(self.n_sa + other.n_sa, self.n_s + other.n_s,
                           self.n_sas + other.n_sas, self.r_sum + other.r_sum)


def uniforms_per_trajectory(H: int) -> int:
    """Uniform draws owned by one trajectory, a multiple of the 4 Philox outputs per counter step."""
    return 4 * math.ceil((1 + 3 * H) / 4)


def _sample_index(cdf: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row; entries with zero probability are never selected."""
    scaled = u * cdf[:, -1]
    return np.minimum((scaled[:, None] >= cdf).sum(axis=1), cdf.shape[1] - 1)


def _simulate(mdp: TabularMDP, behavior: Policy, u: np.ndarray) -> tuple:
    m, H = u.shape[0], mdp.H
    states = np.zeros((m, H + 1), dtype=np.int64)
    actions = np.zeros((m, H), dtype=np.int64)
    rewards = np.zeros((m, H))
    states[:, 0] = _sample_index(np.broadcast_to(np.cumsum(mdp.d1), (m, mdp.S)), u[:, 0])
    for h in range(H):
        s = states[:, h]
        a = _sample_index(np.cumsum(behavior.pi[h][s], axis=1), u[:, 1 + 3 * h])
        actions[:, h] = a
        states[:, h + 1] = _sample_index(np.cumsum(mdp.P[h][s, a], axis=1), u[:, 2 + 3 * h])
        mean = mdp.r[h][s, a]
        if mdp.reward_noise == RewardNoise.BERNOULLI:
            rewards[:, h] = (u[:, 3 + 3 * h] < mean).astype(float)
        else:
            rewards[:, h] = mean
    return states, actions, rewards


def sample_block(mdp: TabularMDP, behavior: Policy, seed: int, start: int, stop: int) -> tuple:
    """
    Simulate trajectories start..stop-1 of the stream for seed.

    Trajectory i reads its own block of the Philox counter, so any split of
    [0, n) into blocks gives the same trajectories.
    """
    K = uniforms_per_trajectory(mdp.H)
    bit_generator = np.random.Philox(key=philox_key(seed, "trajectories"))
    bit_generator.advance(start * K // 4)
    u = np.random.Generator(bit_generator).random((stop - start, K))
    return _simulate(mdp, behavior, u)


def sample_trajectories(mdp: TabularMDP, behavior: Policy, n: int, seed: int) -> Dataset:
    """
    Roll out n i.i.d. episodes of the behavior policy.

    Raises:
        ValueError: n < 1.
    """
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    check_dimensions(mdp, behavior)
    parts = [sample_block(mdp, behavior, seed, start, min(n, start + CHUNK))
             for start in range(0, n, CHUNK)]
    states, actions, rewards = (np.vstack(columns) for columns in zip(*parts))
    meta = DatasetMeta(seed=int(seed), policy_hash=behavior.hash, mdp_hash=mdp.hash)
    return Dataset(mdp.S, mdp.A, states, actions, rewards, meta)


def counts(dataset: Dataset, weights: np.ndarray | None = None) -> CountTables:
    """
    Visit-count tables; with weights, each trajectory counts weights[i] times.
    """
    S, A, H = dataset.S, dataset.A, dataset.H
    tr = dataset.transitions()
    w = None if weights is None else np.repeat(np.asarray(weights, dtype=float), H)
    sa = (tr.h * S + tr.s) * A + tr.a
    n_sa = np.bincount(sa, weights=w, minlength=H * S * A).reshape(H, S, A)
    n_sas = np.bincount(sa * S + tr.s_next, weights=w, minlength=H * S * A * S).reshape(H, S, A, S)
    rw = tr.r if w is None else tr.r * w
    r_sum = np.bincount(sa, weights=rw, minlength=H * S * A).reshape(H, S, A)
    if w is None:
        n_sa = n_sa.astype(np.int64)
        n_sas = n_sas.astype(np.int64)
    return CountTables(n_sa=n_sa, n_s=n_sa.sum(axis=-1), n_sas=n_sas, r_sum=r_sum)


# Dataset files

def _field(value) -> str:
    return "-" if value is None else str(value)


def write_dataset(dataset: Dataset, path: str):
    """
    Header `n H S A`, one `i h s a r s_next` row per transition sorted by (i, h),
    then a `# meta` section with seed, policy_hash and mdp_hash.
    """
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{dataset.n} {dataset.H} {dataset.S} {dataset.A}\n")
        for i in range(dataset.n):
            for h in range(dataset.H):
                r = format(float(dataset.rewards[i, h]), ".17g")
                f.write(f"{i} {h} {dataset.states[i, h]} {dataset.actions[i, h]} {r} "
                        f"{dataset.states[i, h + 1]}\n")
        f.write("# meta\n")
        f.write(f"seed {_field(dataset.meta.seed)}\n")
        f.write(f"policy_hash {_field(dataset.meta.policy_hash)}\n")
        f.write(f"mdp_hash {_field(dataset.meta.mdp_hash)}\n")


def _parse_header(line: str) -> tuple:
    fields = line.split()
    if len(fields) != 4:
        raise MalformedHeaderError(1, f"expected `n H S A`, got {line.strip()!r}")
    try:
        n, H, S, A = (int(x) for x in fields)
    except ValueError as e:
        raise MalformedHeaderError(1, f"header fields must be integers: {line.strip()!r}") from e
    if n < 0 or H < 1 or S < 1 or A < 1:
        raise MalformedHeaderError(1, f"header out of range: n={n} H={H} S={S} A={A}")
    return n, H, S, A


def _parse_meta(lines: list, first_lineno: int) -> DatasetMeta:
    values = {}
    for offset, line in enumerate(lines):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2 or fields[0] not in ("seed", "policy_hash", "mdp_hash"):
            raise DatasetParseError(first_lineno + offset, f"bad meta entry {line.strip()!r}")
        value = None if fields[1] == "-" else fields[1]
        if fields[0] == "seed" and value is not None:
            try:
                value = int(value)
            except ValueError as e:
                raise DatasetParseError(first_lineno + offset, f"seed must be an integer, got {value!r}") from e
        values[fields[0]] = value
    return DatasetMeta(seed=values.get("seed"),
                       policy_hash=values.get("policy_hash"), mdp_hash=values.get("mdp_hash"))


def read_dataset(path: str) -> Dataset:
    """
    Parse a dataset file.

    Raises:
        MalformedHeaderError, IndexRangeError, TruncatedRecordError, ChainError:
            each names the offending line number.
    """
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines:
        raise MalformedHeaderError(1, "empty file")
    n, H, S, A = _parse_header(lines[0])
    states = np.zeros((n, H + 1), dtype=np.int64)
    actions = np.zeros((n, H), dtype=np.int64)
    rewards = np.zeros((n, H))
    total = n * H
    for k in range(total):
        lineno = k + 2
        if lineno > len(lines) or lines[lineno - 1].startswith("#"):
            raise TruncatedRecordError(lineno, f"expected {total} records, found {k}")
        fields = lines[lineno - 1].split()
        if len(fields) != 6:
            raise TruncatedRecordError(lineno, f"expected 6 fields, got {len(fields)}")
        try:
            i, h, s, a = (int(x) for x in fields[:4])
            r = float(fields[4])
            s_next = int(fields[5])
        except ValueError as e:
            raise DatasetParseError(lineno, f"unparsable record {lines[lineno - 1]!r}") from e
        if (i, h) != divmod(k, H):
            raise IndexRangeError(lineno, f"record ({i}, {h}) out of order, expected {divmod(k, H)}")
        if not (0 <= s < S and 0 <= s_next < S):
            raise IndexRangeError(lineno, f"state index outside [0, {S})")
        if not 0 <= a < A:
            raise IndexRangeError(lineno, f"action index {a} outside [0, {A})")
        if h > 0 and states[i, h] != s:
            raise ChainError(lineno, f"state {s} does not continue previous s_next {states[i, h]}")
        states[i, h] = s
        states[i, h + 1] = s_next
        actions[i, h] = a
        rewards[i, h] = r
    rest = lines[total + 1:]
    meta = DatasetMeta()
    if rest and rest[0].strip() == "# meta":
        meta = _parse_meta(rest[1:], total + 3)
    elif any(line.strip() for line in rest):
        raise DatasetParseError(total + 2, f"unexpected content after {total} records")
    return Dataset(S, A, states, actions, rewards, meta)
