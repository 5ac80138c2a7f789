#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Reward-free exploration in 2H batches, one crude and one fine batch per layer."""

import math
from dataclasses import dataclass

import numpy as np

from offrl.cli.common import Console
from offrl.data import Dataset, counts
from offrl.estimators.marginalized import empirical_initial
from offrl.exploration.apeve import _group, crude_model
from offrl.exploration.environment import Environment
from offrl.exploration.ledger import AdaptivityLedger
from offrl.learners.model import PluginModel, plugin_model
from offrl.mdp import Policy, TabularMDP, optimal_policy


@dataclass(frozen=True, eq=False)
class LarfeResult:
    """
    Attributes:
        dataset (Dataset): every trajectory collected.
        model (PluginModel): plug-in model used for planning any reward.
        epsilon (float): requested accuracy.
        epsilon_hat (float): data-driven bound 2 H max_pi sum d_hat^pi * width.
    """
    dataset: Dataset
    model: PluginModel
    epsilon: float
    epsilon_hat: float

    @property
    def certified(self) -> bool:
        return self.epsilon_hat <= self.epsilon

    def planning_mdp(self, rewards: np.ndarray) -> TabularMDP:
        """The learned model carrying a reward table chosen after exploration."""
        return self.model.to_mdp(empirical_initial(self.dataset)).with_rewards(rewards)

    def plan(self, rewards: np.ndarray) -> Policy:
        policy, _ = optimal_policy(self.planning_mdp(rewards))
        return policy


def default_episodes_per_layer(S: int, A: int, H: int, epsilon: float, iota: float) -> int:
    """S * A times the visits that make H * sqrt(2 S iota / n) at most epsilon / (2 H)."""
    return S * A * math.ceil(8.0 * H ** 4 * S * iota / epsilon ** 2)


def reach_policies(model: TabularMDP, h: int) -> tuple:
    """
    For every (s, a), the policy maximizing the model probability of playing a in s at step h.

    Returns:
        (list, np.ndarray): policies in (s, a) order and their (S, A) reach probabilities.
    """
    policies = []
    reach = np.zeros((model.S, model.A))
    for s, a in np.ndindex(model.S, model.A):
        indicator = np.zeros((model.H, model.S, model.A))
        indicator[h, s, a] = 1.0
        policy, values = optimal_policy(model.with_rewards(indicator))
        policies.append(policy)
        reach[s, a] = values.v
    return policies, reach


def targeted_shares(budget: int, n_sa: np.ndarray, reach: np.ndarray) -> np.ndarray:
    """
    Split a layer's budget over the cells the model can reach.

    Every reachable cell gets an equal share; leftover episodes go to the
    least visited cells first, ties by cell index.
    """
    targets = np.flatnonzero(reach.ravel() > 0)
    if len(targets) == 0:
        targets = np.arange(reach.size)
    base, extra = divmod(budget, len(targets))
    shares = np.zeros(reach.size, dtype=int)
    shares[targets] = base
    order = targets[np.argsort(n_sa.ravel()[targets], kind="stable")]
    shares[order[:extra]] += 1
    return shares.reshape(reach.shape)


def uncertainty_bound(data: Dataset, iota: float) -> float:
    """2 H max_pi sum_h E_{d_hat^pi} min(1, sqrt(2 S iota / n_sa)), by planning on the model."""
    n = counts(data).n_sa
    width = np.minimum(1.0, np.sqrt(2.0 * data.S * iota / np.maximum(n, 1)))
    _, values = optimal_policy(crude_model(data).with_rewards(width))
    return 2.0 * data.H * values.v


def larfe(env: Environment, S: int, A: int, H: int, epsilon: float, delta: float = 0.1,
          episodes_per_layer: int | None = None, seed: int = 0) -> tuple:
    """
    Explore layer by layer without rewards.

    Layer h gets two batches. Each one replans on the model of all data so
    far: for every (s, a) the policy most likely to reach (h, s, a) under
    the model, deployed on the share of the budget given to that cell.
    Cells the model cannot reach get nothing.

    Returns:
        (LarfeResult, AdaptivityLedger)
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    iota = math.log(2.0 * H * S * A / delta)
    if episodes_per_layer is None:
        episodes_per_layer = default_episodes_per_layer(S, A, H, epsilon, iota)
    ledger = AdaptivityLedger(S, A, H, seed)
    data = Dataset.empty(S, A, H)
    crude_budget = episodes_per_layer // 2
    for h in range(H):
        for budget in (crude_budget, episodes_per_layer - crude_budget):
            policies, reach = reach_policies(crude_model(data), h)
            shares = targeted_shares(budget, counts(data).n_sa[h], reach).ravel()
            plan = [(ledger.register(policy), int(k)) for policy, k in zip(policies, shares) if k > 0]
            data = data.merge(ledger.run_batch(env, _group(plan)))
        Console.verbose(f"larfe layer {h}: {data.n} episodes so far")
    result = LarfeResult(dataset=data, model=plugin_model(data), epsilon=epsilon,
                         epsilon_hat=uncertainty_bound(data, iota))
    return result, ledger
