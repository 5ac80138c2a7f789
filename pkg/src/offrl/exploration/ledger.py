#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Deployment bookkeeping for low-adaptive exploration."""

from dataclasses import dataclass, field

import numpy as np

from offrl.data import Dataset
from offrl.errors import DatasetParseError, TruncatedRecordError
from offrl.exploration.environment import Environment
from offrl.mdp import Policy
from offrl.utils import generator


def count_switches(episode_policy) -> int:
    ids = np.asarray(episode_policy)
    return int(np.sum(ids[1:] != ids[:-1])) if len(ids) > 1 else 0


@dataclass
class EpisodeLog:
    """An episode log read back from disk."""
    rows: np.ndarray
    episode_policy: list
    batch_boundaries: list
    stage_boundaries: list = field(default_factory=list)

    @property
    def switch_count(self) -> int:
        return count_switches(self.episode_policy)

    @property
    def batch_count(self) -> int:
        return len(self.batch_boundaries)


@dataclass
class EliminationRound:
    """One confidence-bound elimination: CIs of every candidate alive before the round."""
    stage: int
    candidates: np.ndarray
    estimates: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    half_width: np.ndarray
    eliminated: np.ndarray


class AdaptivityLedger:
    """
    Records which policy ran in every episode and where each batch began.

    A batch is a plan of (policy_id, episodes) pairs fixed before any of its
    episodes run. Algorithms that group batches into stages mark where each
    stage begins.
    """

    def __init__(self, S: int, A: int, H: int, seed: int = 0) -> None:
        self.S = S
        self.A = A
        self.H = H
        self.policies: list = []
        self.episode_policy: list = []
        self.batch_boundaries: list = []
        self.stage_boundaries: list = []
        self.rounds: list = []
        self.regret: np.ndarray | None = None
        self.__index = {}
        self.__rows = []
        self.__rng = generator(seed, "ledger")

    def register(self, policy: Policy) -> int:
        """Id of a policy; equal policies share one id."""
        key = policy.hash
        if key not in self.__index:
            self.__index[key] = len(self.policies)
            self.policies.append(policy)
        return self.__index[key]

    @property
    def switch_count(self) -> int:
        return count_switches(self.episode_policy)

    @property
    def batch_count(self) -> int:
        return len(self.batch_boundaries)

    @property
    def stage_count(self) -> int:
        return len(self.stage_boundaries)

    def begin_stage(self):
        self.stage_boundaries.append(self.batch_count)

    @property
    def episodes(self) -> int:
        return len(self.episode_policy)

    def _act(self, policy: Policy, h: int, s: int) -> int:
        probs = policy.pi[h, s]
        if policy.is_deterministic():
            return int(np.argmax(probs))
        return int(self.__rng.choice(self.A, p=probs))

    def run_batch(self, env: Environment, plan: list) -> Dataset:
        """
        Deploy a fixed plan of (policy_id, episodes) pairs.

        Returns:
            Dataset: the trajectories collected by this batch.
        """
        plan = [(int(pid), int(k)) for pid, k in plan if k > 0]
        total = sum(k for _, k in plan)
        self.batch_boundaries.append(self.episodes)
        states = np.zeros((total, self.H + 1), dtype=np.int64)
        actions = np.zeros((total, self.H), dtype=np.int64)
        rewards = np.zeros((total, self.H))
        i = 0
        for pid, k in plan:
            policy = self.policies[pid]
            for _ in range(k):
                t = self.episodes
                s = env.reset()
                states[i, 0] = s
                for h in range(self.H):
                    a = self._act(policy, h, s)
                    r, s_next = env.step(a)
                    self.__rows.append((t, h, s, a, r, s_next, pid))
                    actions[i, h], rewards[i, h], states[i, h + 1] = a, r, s_next
                    s = s_next
                self.episode_policy.append(pid)
                i += 1
        return Dataset(self.S, self.A, states, actions, rewards)

    def write_log(self, path: str):
        """`t h s a r s_next policy_id` rows after `# batches` and, when staged, `# stages` manifest lines."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"# episodes {self.episodes} H {self.H}\n")
            f.write("# batches " + " ".join(str(b) for b in self.batch_boundaries) + "\n")
            if self.stage_boundaries:
                f.write("# stages " + " ".join(str(b) for b in self.stage_boundaries) + "\n")
            for t, h, s, a, r, s_next, pid in self.__rows:
                f.write(f"{t} {h} {s} {a} {format(r, '.17g')} {s_next} {pid}\n")


def _manifest_ints(line: str, lineno: int, skip: int) -> list:
    try:
        return [int(x) for x in line.split()[skip:]]
    except ValueError as e:
        raise DatasetParseError(lineno, f"malformed manifest line {line!r}") from e


def read_log(path: str) -> EpisodeLog:
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if len(lines) < 2 or not lines[0].startswith("# episodes") or not lines[1].startswith("# batches"):
        raise DatasetParseError(1, "episode log must start with `# episodes` and `# batches` lines")
    header = lines[0].split()
    if len(header) != 5:
        raise DatasetParseError(1, f"expected `# episodes <n> H <H>`, got {lines[0]!r}")
    episodes, H = _manifest_ints(f"{header[2]} {header[4]}", 1, 0)
    boundaries = _manifest_ints(lines[1], 2, 2)
    first = 2
    stages = []
    if len(lines) > 2 and lines[2].startswith("# stages"):
        stages = _manifest_ints(lines[2], 3, 2)
        first = 3
    rows = []
    for lineno, line in enumerate(lines[first:], start=first + 1):
        fields = line.split()
        if len(fields) != 7:
            raise TruncatedRecordError(lineno, f"expected 7 fields, got {len(fields)}")
        try:
            rows.append([float(x) for x in fields])
        except ValueError as e:
            raise DatasetParseError(lineno, f"non-numeric field in {line!r}") from e
    rows = np.array(rows).reshape(-1, 7)
    if len(rows) != episodes * H:
        raise TruncatedRecordError(len(lines) + 1, f"expected {episodes * H} rows, found {len(rows)}")
    episode_policy = [int(p) for p in rows[::H, 6]] if H else []
    return EpisodeLog(rows=rows, episode_policy=episode_policy, batch_boundaries=boundaries,
                      stage_boundaries=stages)
