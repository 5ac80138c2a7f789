#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Policy elimination with a pre-scheduled, doubly-logarithmic number of batches."""

import math
from dataclasses import asdict, dataclass

import numpy as np

from offrl.cli.common import Console
from offrl.data import Dataset
from offrl.estimators.marginalized import empirical_initial, tmis_values_batch
from offrl.exploration.environment import Environment
from offrl.exploration.ledger import AdaptivityLedger, EliminationRound
from offrl.learners.model import plugin_model
from offrl.mdp import Policy, TabularMDP, enumerate_deterministic, occupancy_batch
from offrl.settings import SETTINGS


@dataclass(frozen=True)
class ApeveConfig:
    """
    Frozen constants of the elimination schedule.

    Attributes:
        crude_fraction (float): share of each stage spent on crude layer-wise exploration.
        ci_scale (float): c in the half-width c * H * sqrt(S * iota / n_eff).
    """
    crude_fraction: float = 0.25
    ci_scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.crude_fraction < 1.0:
            raise ValueError(f"crude_fraction must lie in [0, 1), got {self.crude_fraction}")
        if self.ci_scale <= 0:
            raise ValueError(f"ci_scale must be positive, got {self.ci_scale}")

    def as_manifest(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class PolicySet:
    """
    Candidates still alive.

    Attributes:
        table (np.ndarray): (K, H, S) every enumerated deterministic policy.
        A (int): action count.
        ids (np.ndarray): enumeration indices of the survivors.
        lower (np.ndarray): lower confidence bounds of the survivors.
        upper (np.ndarray): upper confidence bounds of the survivors.
    """
    table: np.ndarray
    A: int
    ids: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def policies(self) -> list:
        return [Policy.deterministic(self.table[i], self.A) for i in self.ids]


def _power_ceil(T: int, exponent: float) -> int:
    x = T ** exponent
    nearest = round(x)
    if abs(x - nearest) <= 1e-9 * max(1.0, x):
        return int(nearest)
    return math.ceil(x)


def stage_schedule(T: int) -> list:
    """
    Stage lengths ceil(T^(1 - 2^-k)) for k = 1, 2, ..., the last one truncated so they sum to T.
    """
    if T < 4:
        raise ValueError(f"T must be at least 4, got {T}")
    stages = []
    total = 0
    k = 1
    while total < T:
        length = min(_power_ceil(T, 1.0 - 2.0 ** -k), T - total)
        stages.append(length)
        total += length
        k += 1
    return stages


def max_stage_count(T: int) -> int:
    """Upper bound on len(stage_schedule(T)); APEVE runs at most H + 1 batches per stage."""
    return math.ceil(math.log2(math.log2(T))) + 2


def _group(plan: list) -> list:
    """Merge deployments of the same policy, keeping first-appearance order."""
    merged = {}
    for pid, episodes in plan:
        merged[pid] = merged.get(pid, 0) + episodes
    return [(pid, k) for pid, k in merged.items() if k > 0]


def _equal_shares(total: int, parts: int) -> list:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def crude_model(data: Dataset) -> TabularMDP:
    """Plug-in model of everything collected so far, started from the empirical initial law."""
    model = plugin_model(data)
    d1 = empirical_initial(data) if data.n else None
    return model.to_mdp(d1)


def visitation_targets(model: TabularMDP, table: np.ndarray, alive: np.ndarray,
                       h: int | None = None) -> np.ndarray:
    """
    For every (h, s, a), the survivor visiting it most under the model, ties by lowest index.

    Returns:
        np.ndarray: enumeration indices in (h, s, a) order, or (s, a) order when h is given.
    """
    visits = occupancy_batch(model, table[alive])
    if h is not None:
        visits = visits[:, h]
    return alive[np.argmax(visits.reshape(len(alive), -1), axis=0)]


def _deploy(ledger: AdaptivityLedger, env: Environment, table: np.ndarray, A: int,
            targets: np.ndarray, budget: int) -> Dataset:
    plan = [(ledger.register(Policy.deterministic(table[j], A)), share)
            for j, share in zip(targets, _equal_shares(budget, len(targets)))]
    return ledger.run_batch(env, _group(plan))


def confidence_bounds(data: Dataset, table: np.ndarray, H: int, S: int, iota: float,
                      ci_scale: float) -> tuple:
    """
    TMIS estimates and clipped CIs of deterministic policies.

    n_eff is the smallest visit count over the policy's estimated support;
    the half-width is H (uninformative) when it is zero.
    """
    values, d_hat, table_counts = tmis_values_batch(data, table)
    n_sa = np.broadcast_to(table_counts.n_sa, d_hat.shape)
    n_eff = np.where(d_hat > 0, n_sa, np.inf).min(axis=(1, 2, 3))
    half = np.full(len(values), float(H))
    informative = np.isfinite(n_eff) & (n_eff > 0)
    half[informative] = np.minimum(H, ci_scale * H * np.sqrt(S * iota / n_eff[informative]))
    lower = np.clip(values - half, 0.0, H)
    upper = np.clip(values + half, 0.0, H)
    return values, lower, upper, half


def apeve(env: Environment, S: int, A: int, H: int, T: int, delta: float = 0.1,
          policy_cap: int | None = None, config: ApeveConfig | None = None,
          seed: int = 0) -> tuple:
    """
    Run policy elimination for T episodes.

    Every stage starts with crude exploration, one batch per layer h: for
    each (s, a), the survivor most likely to reach (h, s, a) under the model
    of all data so far, so layer h is planned on a model already refined
    through layer h - 1. A fine batch follows: for each (h, s, a), the
    survivor visiting it most under the crude model. After the stage every
    survivor is evaluated with TMIS on all data and eliminated when its
    upper bound falls below the best lower bound.

    Batch sizes depend only on T, S, A and H; layers whose crude share
    rounds to zero get no batch.

    Returns:
        (AdaptivityLedger, PolicySet)

    Raises:
        PolicyCapError: A^(S*H) exceeds policy_cap.
    """
    config = ApeveConfig() if config is None else config
    cap = SETTINGS.policy_cap if policy_cap is None else policy_cap
    table = enumerate_deterministic(S, A, H, cap)
    stages = stage_schedule(T)
    iota = math.log(2.0 * len(stages) * len(table) / delta)
    ledger = AdaptivityLedger(S, A, H, seed)

    alive = np.arange(len(table))
    lower = np.zeros(len(table))
    upper = np.full(len(table), float(H))
    data = Dataset.empty(S, A, H)
    for k, length in enumerate(stages):
        ledger.begin_stage()
        crude = int(length * config.crude_fraction)
        for h, budget in enumerate(_equal_shares(crude, H)):
            if budget == 0:
                continue
            targets = visitation_targets(crude_model(data), table, alive, h)
            data = data.merge(_deploy(ledger, env, table, A, targets, budget))
        targets = visitation_targets(crude_model(data), table, alive)
        data = data.merge(_deploy(ledger, env, table, A, targets, length - crude))

        values, lo, up, half = confidence_bounds(data, table[alive], H, S, iota, config.ci_scale)
        keep = up >= lo.max()
        ledger.rounds.append(EliminationRound(stage=k, candidates=alive.copy(), estimates=values,
                                              lower=lo, upper=up, half_width=half,
                                              eliminated=alive[~keep]))
        lower[alive], upper[alive] = lo, up
        alive = alive[keep]
        Console.verbose(f"apeve stage {k}: {length} episodes, {len(alive)} policies left")
    return ledger, PolicySet(table=table, A=A, ids=alive, lower=lower[alive], upper=upper[alive])
