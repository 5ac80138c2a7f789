#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Exact statistical oracles computed from a known MDP.

These are ground truth for the estimators and learners: variance
decompositions, efficiency bounds and coverage constants.
"""

from dataclasses import dataclass

import numpy as np

from offrl.errors import PolicyCapError, SupportError
from offrl.mdp import (
    Policy,
    TabularMDP,
    check_dimensions,
    enumerate_deterministic,
    occupancy,
    occupancy_batch,
    optimal_policy,
    policy_value,
    reachable_states,
)
from offrl.settings import SETTINGS
from offrl.utils import generator, max_ratio

SAMPLED_POLICIES = 512


@dataclass(frozen=True)
class ReturnVariance:
    total: float
    per_step_aleatoric: np.ndarray
    per_step_mismatch: np.ndarray


@dataclass(frozen=True)
class CoverageDiagnostics:
    d_m_state: float
    d_m_sa: float
    tau_s: float
    tau_a: float
    C_star: float
    C_mu: float
    C_mu_exact: bool


def _padded(values: np.ndarray) -> np.ndarray:
    return np.vstack([values, np.zeros((1, values.shape[1]))])


def conditional_variance(mdp: TabularMDP, V: np.ndarray) -> np.ndarray:
    """
    Var[r_h + V_{h+1}(s') | s_h, a_h] for every cell, shape (H, S, A).

    Args:
        V (np.ndarray): (H, S) state values; the value past the horizon is 0.
    """
    Vn = _padded(V)[1:]
    mean = np.einsum("hsat,ht->hsa", mdp.P, Vn)
    second = np.einsum("hsat,ht->hsa", mdp.P, Vn ** 2)
    return mdp.reward_variance() + np.maximum(second - mean ** 2, 0.0)


def return_variance(mdp: TabularMDP, policy: Policy) -> ReturnVariance:
    """
    Variance of the return under a policy and its per-step decomposition.

    The total comes from a second-moment recursion; the decomposition splits
    it into the environment part E[Var(r_h + V_{h+1} | s_h, a_h)] and the
    policy part E[Var_{a ~ pi}(Q_h(s_h, a))]. The variance of V_1 under d1 is
    carried by the first mismatch term so the two sums add up to the total.
    """
    values = policy_value(mdp, policy)
    V = _padded(values.V)
    W = np.zeros((mdp.H + 1, mdp.S))
    rv = mdp.reward_variance()
    for h in reversed(range(mdp.H)):
        r_second = rv[h] + mdp.r[h] ** 2
        M = r_second + 2.0 * mdp.r[h] * (mdp.P[h] @ V[h + 1]) + mdp.P[h] @ W[h + 1]
        W[h] = np.sum(policy.pi[h] * M, axis=-1)
    total = float(mdp.d1 @ W[0] - values.v ** 2)

    occ = occupancy(mdp, policy)
    aleatoric = np.einsum("hsa,hsa->h", occ.d, conditional_variance(mdp, values.V))
    q_second = np.sum(policy.pi * values.Q ** 2, axis=-1)
    mismatch = np.einsum("hs,hs->h", occ.d_state, q_second - values.V ** 2)
    mismatch[0] += float(mdp.d1 @ values.V[0] ** 2 - values.v ** 2)
    return ReturnVariance(total=total, per_step_aleatoric=aleatoric, per_step_mismatch=mismatch)


def _check_support(target_d: np.ndarray, behavior_d: np.ndarray):
    unsupported = np.argwhere((target_d > 0) & (behavior_d <= 0))
    if len(unsupported):
        raise SupportError("target occupancy is positive where behavior occupancy is zero", unsupported)


def cr_lower_bound(mdp: TabularMDP, target: Policy, behavior: Policy) -> float:
    """
    Cramer-Rao bound for unbiased OPE, scaled by n.

    Sum over steps of E_mu[(d^pi/d^mu)^2 Var(r + V^pi_{h+1} | s, a)].

    Raises:
        SupportError: target visits a cell the behavior never does.
    """
    check_dimensions(mdp, behavior)
    d_pi = occupancy(mdp, target).d
    d_mu = occupancy(mdp, behavior).d
    _check_support(d_pi, d_mu)
    var = conditional_variance(mdp, policy_value(mdp, target).V)
    mask = d_mu > 0
    return float(np.sum(d_pi[mask] ** 2 / d_mu[mask] * var[mask]))


def smis_asymptotic_variance(mdp: TabularMDP, target: Policy, behavior: Policy) -> float:
    """
    Leading n * MSE term of the state-marginalized estimator.

    Uses state ratios only, so the action ratio stays inside the conditional
    variance; the excess over cr_lower_bound is the policy-mismatch part.
    """
    check_dimensions(mdp, behavior)
    occ_pi = occupancy(mdp, target)
    occ_mu = occupancy(mdp, behavior)
    _check_support(occ_pi.d, occ_mu.d)
    values = policy_value(mdp, target)
    Vn = _padded(values.V)[1:]
    mean_next = np.einsum("hsat,ht->hsa", mdp.P, Vn)
    second = (mdp.reward_variance() + mdp.r ** 2 + 2.0 * mdp.r * mean_next
              + np.einsum("hsat,ht->hsa", mdp.P, Vn ** 2))
    ratio2 = np.zeros_like(target.pi)
    np.divide(target.pi ** 2, behavior.pi, out=ratio2, where=behavior.pi > 0)
    state_var = np.sum(ratio2 * second, axis=-1) - values.V ** 2
    mask = occ_mu.d_state > 0
    return float(np.sum(occ_pi.d_state[mask] ** 2 / occ_mu.d_state[mask] * state_var[mask]))


def intrinsic_bound(mdp: TabularMDP, behavior: Policy, n: int) -> float:
    """Main term of the instance-dependent bound for pessimistic value iteration."""
    if n < 1:
        raise ValueError("n must be at least 1")
    star, values = optimal_policy(mdp)
    d_star = occupancy(mdp, star).d
    d_mu = occupancy(mdp, behavior).d
    var = conditional_variance(mdp, values.V)
    mask = d_mu > 0
    return float(np.sum(d_star[mask] * np.sqrt(var[mask] / (n * d_mu[mask]))))


def coverage_diagnostics(mdp: TabularMDP, target: Policy, behavior: Policy,
                         enum_cap: int | None = None, seed: int = 0) -> CoverageDiagnostics:
    """
    Coverage constants of a behavior policy, from exact occupancies.

    Minima range over reachable states only. C_mu is exact when every
    deterministic policy can be enumerated; otherwise it is a lower bound
    from sampled deterministic policies and C_mu_exact is False.
    """
    check_dimensions(mdp, target)
    check_dimensions(mdp, behavior)
    reach = reachable_states(mdp)
    occ_pi = occupancy(mdp, target)
    occ_mu = occupancy(mdp, behavior)

    d_m_state = float(occ_mu.d_state[reach].min())
    d_m_sa = float(occ_mu.d[reach].min())
    tau_s = max_ratio(np.where(reach, occ_pi.d_state, 0.0), occ_mu.d_state)
    pi_reach = np.where(reach[:, :, None], target.pi, 0.0)
    tau_a = max_ratio(pi_reach, behavior.pi)

    star, _ = optimal_policy(mdp)
    C_star = max_ratio(occupancy(mdp, star).d, occ_mu.d)

    cap = SETTINGS.enum_cap if enum_cap is None else enum_cap
    try:
        actions = enumerate_deterministic(mdp.S, mdp.A, mdp.H, cap)
        exact = True
    except PolicyCapError:
        rng = generator(seed, "coverage")
        actions = rng.integers(mdp.A, size=(SAMPLED_POLICIES, mdp.H, mdp.S))
        exact = False
    C_mu = 0.0
    for chunk in np.array_split(actions, max(1, len(actions) // 256)):
        d_chunk = occupancy_batch(mdp, chunk)
        C_mu = max(C_mu, max_ratio(d_chunk, np.broadcast_to(occ_mu.d, d_chunk.shape)))
    return CoverageDiagnostics(d_m_state=d_m_state, d_m_sa=d_m_sa, tau_s=tau_s, tau_a=tau_a,
                               C_star=C_star, C_mu=C_mu, C_mu_exact=exact)


def value_range(mdp: TabularMDP) -> np.ndarray:
    """max_s V*_h(s) - min_s V*_h(s) for every step."""
    _, values = optimal_policy(mdp)
    return values.V.max(axis=1) - values.V.min(axis=1)
