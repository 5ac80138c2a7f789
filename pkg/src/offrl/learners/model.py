#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

from dataclasses import dataclass

import numpy as np

from offrl.data import CountTables, Dataset, counts
from offrl.errors import DimensionError
from offrl.mdp import Policy, TabularMDP, occupancy, optimal_policy


@dataclass(frozen=True, eq=False)
class PluginModel:
    """
    Empirical model of a dataset.

    Unvisited cells get the uniform kernel 1/S and reward 0, so every row of
    P_hat is a distribution.
    """
    P_hat: np.ndarray
    r_hat: np.ndarray
    counts: CountTables

    @property
    def H(self) -> int:
        return self.P_hat.shape[0]

    @property
    def S(self) -> int:
        return self.P_hat.shape[1]

    @property
    def A(self) -> int:
        return self.P_hat.shape[2]

    def to_mdp(self, d1: np.ndarray | None = None) -> TabularMDP:
        """The model as an MDP; d1 defaults to uniform."""
        d1 = np.full(self.S, 1.0 / self.S) if d1 is None else d1
        return TabularMDP(P=self.P_hat, r=self.r_hat, d1=d1)

    @classmethod
    def exact(cls, mdp: TabularMDP, n_per_cell: int = 10 ** 12) -> "PluginModel":
        """The true model with every cell counted n_per_cell times (the large-data limit)."""
        n_sa = np.full((mdp.H, mdp.S, mdp.A), float(n_per_cell))
        table = CountTables(n_sa=n_sa, n_s=n_sa.sum(axis=-1), n_sas=n_sa[..., None] * mdp.P,
                            r_sum=n_sa * mdp.r)
        return cls(P_hat=np.array(mdp.P), r_hat=np.array(mdp.r), counts=table)


def model_from_counts(table: CountTables) -> PluginModel:
    n_sa = table.n_sa
    S = n_sa.shape[1]
    visited = n_sa > 0
    P_hat = np.full(table.n_sas.shape, 1.0 / S)
    r_hat = np.zeros(n_sa.shape)
    P_hat[visited] = table.n_sas[visited] / n_sa[visited][:, None]
    r_hat[visited] = table.r_sum[visited] / n_sa[visited]
    return PluginModel(P_hat=P_hat, r_hat=r_hat, counts=table)


def plugin_model(dataset: Dataset, S: int | None = None, A: int | None = None) -> PluginModel:
    """Count ratios with the uniform-kernel, zero-reward rule for unvisited cells."""
    if (S is not None and S != dataset.S) or (A is not None and A != dataset.A):
        raise DimensionError(f"dataset declares (S, A) = {(dataset.S, dataset.A)}, got {(S, A)}")
    return model_from_counts(counts(dataset))


@dataclass(frozen=True, eq=False)
class AugmentedMDP:
    """
    Attributes:
        mdp (TabularMDP): S + 1 states; state `dagger` is absorbing with zero reward.
        off_support_mass (float): sum over steps 2..H+1 of the optimal policy's mass on dagger.
        dagger (int): index of the absorbing state.
    """
    mdp: TabularMDP
    off_support_mass: float
    dagger: int


def augmented_mdp(mdp: TabularMDP, dataset: Dataset) -> AugmentedMDP:
    """
    Redirect every unvisited (h, s, a) to an absorbing zero-reward state.

    Visited cells keep the true kernel and reward. The optimal policy of the
    original MDP plays action 0 in the absorbing state.
    """
    if (mdp.S, mdp.A, mdp.H) != (dataset.S, dataset.A, dataset.H):
        raise DimensionError("dataset and MDP disagree on (S, A, H)")
    S, A, H = mdp.S, mdp.A, mdp.H
    visited = counts(dataset).n_sa > 0
    dagger = S
    P = np.zeros((H, S + 1, A, S + 1))
    P[:, :S, :, :S] = np.where(visited[..., None], mdp.P, 0.0)
    P[:, :S, :, dagger] = np.where(visited, 0.0, 1.0)
    P[:, dagger, :, dagger] = 1.0
    r = np.zeros((H, S + 1, A))
    r[:, :S] = np.where(visited, mdp.r, 0.0)
    d1 = np.append(mdp.d1, 0.0)
    augmented = TabularMDP(P=P, r=r, d1=d1, reward_noise=mdp.reward_noise)

    star, _ = optimal_policy(mdp)
    pi = np.zeros((H, S + 1, A))
    pi[:, :S] = star.pi
    pi[:, dagger, 0] = 1.0
    occ = occupancy(augmented, Policy(pi))
    mass = float(occ.d_state[1:, dagger].sum() + occ.d_final[dagger])
    return AugmentedMDP(mdp=augmented, off_support_mass=mass, dagger=dagger)
