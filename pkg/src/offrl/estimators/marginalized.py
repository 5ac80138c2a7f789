#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Marginalized importance sampling: state-marginal (SMIS) and tabular (TMIS) estimators."""

import numpy as np

from offrl.data import CountTables, Dataset, counts
from offrl.estimators.estimator import EstimateReport, Estimator, min_positive
from offrl.mdp import Policy
from offrl.utils import safe_divide


def empirical_initial(dataset: Dataset, weights: np.ndarray | None = None) -> np.ndarray:
    d = np.bincount(dataset.states[:, 0], weights=weights, minlength=dataset.S).astype(float)
    return d / d.sum()


def tmis_model(table: CountTables) -> tuple:
    """
    Empirical kernel and rewards with P_hat = 0 and r_hat = 0 where n_sa = 0.

    Works for per-step tables (leading H axis) and pooled ones alike.
    """
    P_hat = safe_divide(table.n_sas, table.n_sa[..., None])
    r_hat = safe_divide(table.r_sum, table.n_sa)
    return P_hat, r_hat


def pooled_counts(table: CountTables) -> CountTables:
    return CountTables(n_sa=table.n_sa.sum(axis=0), n_s=table.n_s.sum(axis=0),
                       n_sas=table.n_sas.sum(axis=0), r_sum=table.r_sum.sum(axis=0))


def marginal_recursion(P_hat: np.ndarray, r_hat: np.ndarray, d_init: np.ndarray,
                       pi: np.ndarray) -> tuple:
    """
    Forward recursion d_{h+1} = sum_{s,a} d_h(s) pi_h(a|s) P_hat_h(.|s,a).

    P_hat and r_hat may be per-step (H, S, A, ...) or shared (S, A, ...).

    Returns:
        (float, np.ndarray): model value and (H, S, A) state-action marginals.
    """
    H = pi.shape[0]
    per_step = P_hat.ndim == 4
    d = np.zeros(pi.shape)
    state = d_init
    value = 0.0
    for h in range(H):
        P_h = P_hat[h] if per_step else P_hat
        r_h = r_hat[h] if per_step else r_hat
        d[h] = state[:, None] * pi[h]
        value += float(np.sum(d[h] * r_h))
        state = np.einsum("sa,sat->t", d[h], P_h)
    return value, d


def tmis_values_batch(dataset: Dataset, actions: np.ndarray) -> tuple:
    """
    TMIS model values of many deterministic policies on one dataset.

    Args:
        actions (np.ndarray): (K, H, S) action tables.
    Returns:
        (np.ndarray, np.ndarray, CountTables): (K,) values, (K, H, S, A)
        estimated occupancies and the count tables used.
    """
    table = counts(dataset)
    P_hat, r_hat = tmis_model(table)
    K = actions.shape[0]
    onehot = np.eye(dataset.A)
    d = np.zeros((K, dataset.H, dataset.S, dataset.A))
    state = np.tile(empirical_initial(dataset), (K, 1))
    for h in range(dataset.H):
        d[:, h] = state[:, :, None] * onehot[actions[:, h]]
        state = np.einsum("ksa,sat->kt", d[:, h], P_hat[h])
    values = np.einsum("khsa,hsa->k", d, r_hat)
    return values, d, table


class StateMIS(Estimator):
    """
    State-marginalized importance sampling.

    The state marginal of the target is propagated with a transition estimate
    weighted by the action ratio; states never visited at step h get ratio 0.
    """
    method = "smis"

    def estimate(self, dataset: Dataset) -> EstimateReport:
        self.check(dataset)
        S, H, n = dataset.S, dataset.H, dataset.n
        ratio = self.action_ratios(dataset)
        table = counts(dataset)
        n_s = table.n_s
        d_pi = n_s[0] / n
        value = 0.0
        zero_states = 0
        for h in range(H):
            s = dataset.states[:, h]
            if h > 0:
                W = np.zeros((S, S))
                np.add.at(W, (dataset.states[:, h - 1], s), ratio[:, h - 1])
                d_pi = d_pi @ safe_divide(W, n_s[h - 1][:, None])
            r_hat = safe_divide(np.bincount(s, weights=ratio[:, h] * dataset.rewards[:, h], minlength=S),
                                n_s[h])
            value += float(np.sum(d_pi * r_hat))
            zero_states += int(np.sum((d_pi > 0) & (n_s[h] == 0)))
        return self.report(value, H, min_positive_count=min_positive(n_s),
                           zero_count_cells=zero_states,
                           max_cumulative_ratio=float(np.cumprod(ratio, axis=1).max()))


class TabularMIS(Estimator):
    """
    Tabular marginalized importance sampling. Behavior-agnostic.

    Reports both the importance-sampling form, averaged over logged states,
    and the model-based form sum_{h,s,a} d_hat(s, a) r_hat(s, a); the two
    agree exactly. With pooled=True the kernel and rewards are shared across
    steps and only the model form exists.
    """
    method = "tmis"
    needs_behavior = False

    def __init__(self, target: Policy, behavior: Policy | None = None, pooled: bool = False) -> None:
        super().__init__(target, behavior)
        self.pooled = pooled

    def estimate(self, dataset: Dataset) -> EstimateReport:
        self.check(dataset)
        table = counts(dataset)
        pi = self.target.pi
        if self.pooled:
            pooled = pooled_counts(table)
            P_hat, r_hat = tmis_model(pooled)
            value, d = marginal_recursion(P_hat, r_hat, empirical_initial(dataset), pi)
            zero = int(np.sum((d > 0) & (pooled.n_sa[None] == 0)))
            return self.report(value, dataset.H, model_form=value, mis_form=None, pooled=True,
                               min_positive_count=min_positive(pooled.n_sa), zero_count_cells=zero)

        P_hat, r_hat = tmis_model(table)
        value, d = marginal_recursion(P_hat, r_hat, empirical_initial(dataset), pi)
        n = dataset.n
        d_state = d.sum(axis=-1)
        weight = safe_divide(d_state, table.n_s / n)
        r_pi = np.sum(pi * r_hat, axis=-1)
        h = np.arange(dataset.H)
        s = dataset.states[:, :-1]
        mis = float(np.mean(np.sum(weight[h, s] * r_pi[h, s], axis=1)))
        zero = int(np.sum((d > 0) & (table.n_sa == 0)))
        return self.report(mis, dataset.H, model_form=value, mis_form=mis, pooled=False,
                           min_positive_count=min_positive(table.n_sa), zero_count_cells=zero)


def smis_estimate(dataset: Dataset, target: Policy, behavior: Policy) -> EstimateReport:
    return StateMIS(target, behavior).estimate(dataset)


def tmis_estimate(dataset: Dataset, target: Policy, pooled: bool = False) -> EstimateReport:
    return TabularMIS(target, pooled=pooled).estimate(dataset)
