#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Pessimistic value iteration (PVI) and the plug-in ERM baseline."""

import math
from dataclasses import asdict, dataclass, field
from enum import StrEnum

import numpy as np

from offrl.data import Dataset
from offrl.errors import (
    DatasetParseError,
    DimensionError,
    IndexRangeError,
    MalformedHeaderError,
    TruncatedRecordError,
)
from offrl.learners.model import PluginModel, plugin_model
from offrl.mdp import Policy, TabularMDP, optimal_policy, policy_value


class BonusStyle(StrEnum):
    HOEFFDING = "hoeffding"
    BERNSTEIN = "bernstein"
    NONE = "none"


@dataclass(frozen=True)
class BonusConfig:
    """
    Frozen constants of the uncertainty bonus.

    Bernstein: c_var * sqrt(iota * Var_P_hat(V_hat_{h+1}) / n) + c_range * H * iota / n.
    Hoeffding: c_range * H * sqrt(iota / n). Here n = max(n_sa, 1) and
    iota = log(2 H S A / delta).
    """
    style: BonusStyle = BonusStyle.BERNSTEIN
    delta: float = 0.1
    c_var: float = 2.0
    c_range: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "style", BonusStyle(self.style))
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.c_var <= 0 or self.c_range <= 0:
            raise ValueError("bonus constants must be positive")

    def log_factor(self, H: int, S: int, A: int) -> float:
        return math.log(2.0 * H * S * A / self.delta)

    def as_manifest(self) -> dict:
        return {k: str(v) if isinstance(v, StrEnum) else v for k, v in asdict(self).items()}


@dataclass(frozen=True, eq=False)
class LearnedPolicyReport:
    """
    Output of an offline learner.

    Attributes:
        policy (Policy): deterministic greedy policy.
        V_hat (np.ndarray): (H, S) pessimistic values in [0, H - h].
        Q_hat (np.ndarray): (H, S, A) pessimistic action values.
        bonus (np.ndarray): (H, S, A) bonus tables.
        constants (dict): frozen constants used, recorded for manifests.
        suboptimality (float | None): v* - v^policy when the MDP is known.
        gram (object | None): per-step Gram state of linear learners.
    """
    policy: Policy
    V_hat: np.ndarray
    Q_hat: np.ndarray
    bonus: np.ndarray
    constants: dict = field(default_factory=dict)
    suboptimality: float | None = None
    gram: object = None

    def with_suboptimality(self, mdp: TabularMDP) -> "LearnedPolicyReport":
        return LearnedPolicyReport(self.policy, self.V_hat, self.Q_hat, self.bonus, self.constants,
                                   suboptimality(mdp, self), self.gram)


def bonus_table(model: PluginModel, V_next: np.ndarray, h: int, config: BonusConfig) -> np.ndarray:
    """(S, A) bonus at step h given the next-step pessimistic values."""
    H, S, A = model.H, model.S, model.A
    if config.style == BonusStyle.NONE:
        return np.zeros((S, A))
    n = np.maximum(model.counts.n_sa[h], 1)
    iota = config.log_factor(H, S, A)
    if config.style == BonusStyle.HOEFFDING:
        return config.c_range * H * np.sqrt(iota / n)
    mean = model.P_hat[h] @ V_next
    var = np.maximum(model.P_hat[h] @ V_next ** 2 - mean ** 2, 0.0)
    return config.c_var * np.sqrt(iota * var / n) + config.c_range * H * iota / n


def pvi_model(model: PluginModel, config: BonusConfig = BonusConfig()) -> LearnedPolicyReport:
    """
    Backward pass Q_h = clip(r_hat + P_hat V_{h+1} - bonus, 0, H - h) on a plug-in model.
    """
    H, S, A = model.H, model.S, model.A
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    bonus = np.zeros((H, S, A))
    actions = np.zeros((H, S), dtype=int)
    for h in reversed(range(H)):
        bonus[h] = bonus_table(model, V[h + 1], h, config)
        Q[h] = np.clip(model.r_hat[h] + model.P_hat[h] @ V[h + 1] - bonus[h], 0.0, H - h)
        actions[h] = np.argmax(Q[h], axis=-1)
        V[h] = Q[h].max(axis=-1)
    constants = config.as_manifest()
    constants["iota"] = config.log_factor(H, S, A)
    return LearnedPolicyReport(policy=Policy.deterministic(actions, A), V_hat=V[:H], Q_hat=Q,
                               bonus=bonus, constants=constants)


def pvi(dataset: Dataset, S: int | None = None, A: int | None = None, H: int | None = None,
        config: BonusConfig = BonusConfig()) -> LearnedPolicyReport:
    """
    Pessimistic value iteration on the plug-in model of a dataset.

    The report also carries d_m, the smallest positive empirical visitation
    n_sa / n, and the burn-in size log(H S A / delta) / d_m. Neither gates the run.
    """
    if H is not None and H != dataset.H:
        raise DimensionError(f"dataset has horizon {dataset.H}, got H={H}")
    model = plugin_model(dataset, S, A)
    report = pvi_model(model, config)
    visited = model.counts.n_sa[model.counts.n_sa > 0] / max(dataset.n, 1)
    d_m = float(visited.min()) if visited.size else 0.0
    report.constants["d_m"] = d_m
    report.constants["burn_in"] = (math.log(model.H * model.S * model.A / config.delta) / d_m
                                   if d_m > 0 else math.inf)
    return report


def erm_policy(dataset: Dataset, S: int | None = None, A: int | None = None,
               H: int | None = None) -> LearnedPolicyReport:
    """Greedy policy of the plug-in model, i.e. PVI without a bonus."""
    return pvi(dataset, S, A, H, BonusConfig(style=BonusStyle.NONE))


def suboptimality(mdp: TabularMDP, report: LearnedPolicyReport) -> float:
    _, star = optimal_policy(mdp)
    return star.v - policy_value(mdp, report.policy).v


def lcb_gap(mdp: TabularMDP, report: LearnedPolicyReport) -> float:
    """v* - E_{d1}[V_hat_1]: the gap the pessimistic values certify."""
    _, star = optimal_policy(mdp)
    return star.v - float(mdp.d1 @ report.V_hat[0])


def is_pessimistic(mdp: TabularMDP, report: LearnedPolicyReport, tol: float = 1e-10) -> bool:
    """V_hat_1(s) <= V^policy_1(s) at every state."""
    return bool(np.all(report.V_hat[0] <= policy_value(mdp, report.policy).V[0] + tol))


def write_policy(policy: Policy, path: str):
    """One `h s a` row per (h, s) of a deterministic policy, after an `H S A` header."""
    if not policy.is_deterministic():
        raise ValueError("only deterministic policies can be written as h s a rows")
    actions = policy.actions()
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{policy.H} {policy.S} {policy.A}\n")
        for h, s in np.ndindex(*actions.shape):
            f.write(f"{h} {s} {actions[h, s]}\n")


def read_policy(path: str) -> Policy:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.split() for line in f if line.strip()]
    if not lines:
        raise MalformedHeaderError(1, "empty policy file")
    try:
        H, S, A = (int(x) for x in lines[0])
    except ValueError as e:
        raise MalformedHeaderError(1, f"expected `H S A`, got {' '.join(lines[0])!r}") from e
    actions = np.full((H, S), -1, dtype=int)
    for lineno, fields in enumerate(lines[1:], start=2):
        if len(fields) != 3:
            raise TruncatedRecordError(lineno, f"expected `h s a`, got {' '.join(fields)!r}")
        try:
            h, s, a = (int(x) for x in fields)
        except ValueError as e:
            raise DatasetParseError(lineno, f"non-integer field in {' '.join(fields)!r}") from e
        if not (0 <= h < H and 0 <= s < S and 0 <= a < A):
            raise IndexRangeError(lineno, f"({h}, {s}, {a}) outside ({H}, {S}, {A})")
        actions[h, s] = a
    if (actions < 0).any():
        raise TruncatedRecordError(len(lines) + 1, "policy rows missing")
    return Policy.deterministic(actions, A)
