#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Linear fitted Q-evaluation, bootstrap intervals and its exact variance oracles."""

import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from offrl.data import Dataset
from offrl.errors import DimensionError, RankDeficiencyError
from offrl.estimators.marginalized import empirical_initial
from offrl.features import FeatureMap
from offrl.mdp import Policy, TabularMDP, occupancy
from offrl.settings import SETTINGS
from offrl.utils import generator

ORACLE_MAX_CELLS = 64
ORACLE_MAX_H = 8


@dataclass(frozen=True, eq=False)
class FqeResult:
    """
    Attributes:
        v_hat (float): estimated value.
        w (np.ndarray): (H, d) weights; Q_h(s, a) = phi_h(s, a) . w[h].
        gram (np.ndarray): regularized Gram matrix sum phi phi^T + lambda I.
        condition (float): condition number of gram.
        rank (int): numerical rank of gram.
        lam (float): ridge parameter used.
    """
    v_hat: float
    w: np.ndarray
    gram: np.ndarray
    condition: float
    rank: int
    lam: float

    def q_values(self, features: FeatureMap, h: int) -> np.ndarray:
        return features.at(h) @ self.w[h]


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    estimate: float
    lower: float
    upper: float
    variance: float
    alpha: float
    replicates: np.ndarray

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class InfluenceTerms:
    """
    Population quantities behind the asymptotic variance of linear FQE.

    Attributes:
        sigma2 (float): asymptotic variance of sqrt(N) (v_hat - v).
        Sigma (np.ndarray): (d, d) pooled second-moment matrix.
        nu (np.ndarray): (H, d) propagated initial feature vectors.
        Omega (np.ndarray): (H, H, d, d) residual covariances.
        w (np.ndarray): (H, d) population FQE weights.
    """
    sigma2: float
    Sigma: np.ndarray
    nu: np.ndarray
    Omega: np.ndarray
    w: np.ndarray


def _check_shapes(features: FeatureMap, policy: Policy, S: int, A: int, H: int):
    if (features.S, features.A) != (S, A):
        raise DimensionError(f"features cover {(features.S, features.A)} but data has {(S, A)}")
    if features.time_indexed and features.phi.shape[0] != H:
        raise DimensionError(f"time-indexed features have {features.phi.shape[0]} steps, need {H}")
    if policy.pi.shape != (H, S, A):
        raise DimensionError(f"policy shape {policy.pi.shape} does not match {(H, S, A)}")


def _next_features(features: FeatureMap, policy: Policy, H: int) -> np.ndarray:
    """(H + 1, S, d) table of E_{a ~ pi_j} phi_j(s, a); row H is zero."""
    table = np.zeros((H + 1, features.S, features.d))
    for j in range(H):
        table[j] = features.policy_features(policy, j)
    return table


def _rank_checked(gram: np.ndarray) -> int:
    rank = int(np.linalg.matrix_rank(gram))
    if rank < gram.shape[0]:
        raise RankDeficiencyError(rank, gram.shape[0])
    return rank


def fit_fqe(dataset: Dataset, features: FeatureMap, target: Policy, lam: float,
            weights: np.ndarray | None = None, initial: np.ndarray | None = None) -> FqeResult:
    """
    Closed-form linear FQE on weighted trajectories.

    w_h solves the ridge regression of r + E_{a' ~ pi} phi(s', a') . w_{h+1}
    on phi(s, a) over the pooled transitions. With homogeneous features the
    backup at step h reads pi_{h+1}; with time-indexed features each
    transition backs up through the step that follows it.
    """
    S, A, H = dataset.S, dataset.A, dataset.H
    _check_shapes(features, target, S, A, H)
    tr = dataset.transitions()
    w_tr = np.ones(tr.N) if weights is None else np.repeat(np.asarray(weights, dtype=float), H)
    if features.time_indexed:
        Phi = features.phi[tr.h, tr.s, tr.a]
    else:
        Phi = features.phi[tr.s, tr.a]
    d = features.d
    gram = Phi.T @ (w_tr[:, None] * Phi) + lam * np.eye(d)
    rank = _rank_checked(gram) if lam == 0 else d
    factor = linalg.cho_factor(gram)
    next_table = _next_features(features, target, H)
    b_r = Phi.T @ (w_tr * tr.r)

    w = np.zeros((H + 1, d))
    if features.time_indexed:
        Psi = next_table[tr.h + 1, tr.s_next]
        M = Phi.T @ (w_tr[:, None] * Psi)
        for h in reversed(range(H)):
            w[h] = linalg.cho_solve(factor, b_r + M @ w[h + 1])
    else:
        for h in reversed(range(H)):
            Psi = next_table[h + 1][tr.s_next]
            w[h] = linalg.cho_solve(factor, b_r + Phi.T @ (w_tr * (Psi @ w[h + 1])))

    if initial is None:
        initial = empirical_initial(dataset, None if weights is None else np.asarray(weights, float))
    v_hat = float(initial @ (next_table[0] @ w[0]))
    return FqeResult(v_hat=v_hat, w=w[:H], gram=gram, condition=float(np.linalg.cond(gram)),
                     rank=rank, lam=float(lam))


def fqe_linear(dataset: Dataset, features: FeatureMap, target: Policy, lam: float | None = None,
               initial: np.ndarray | None = None) -> FqeResult:
    """
    Linear FQE with ridge lam (default 1e-6 * N).

    Raises:
        RankDeficiencyError: lam == 0 and the Gram matrix is singular.
    """
    if dataset.n == 0:
        raise ValueError("fqe_linear needs at least one trajectory")
    if lam is None:
        lam = 1e-6 * dataset.n * dataset.H
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    return fit_fqe(dataset, features, target, lam, initial=initial)


def _bootstrap_replicate(dataset, features, target, lam, seed, b):
    rng = generator(seed, "bootstrap", b)
    draws = rng.integers(dataset.n, size=dataset.n)
    weights = np.bincount(draws, minlength=dataset.n)
    return fit_fqe(dataset, features, target, lam, weights=weights).v_hat


def bootstrap_fqe(dataset: Dataset, features: FeatureMap, target: Policy, lam: float | None = None,
                  B: int = 200, seed: int = 0, alpha: float = 0.1,
                  n_jobs: int | None = None) -> BootstrapResult:
    """
    Percentile bootstrap over whole trajectories.

    Resample b draws n trajectories with replacement from the substream
    (seed, b); the variance is that of sqrt(N) (v*_b - v_hat).
    """
    if B < 100:
        raise ValueError(f"B must be at least 100, got {B}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if lam is None:
        lam = 1e-6 * dataset.n * dataset.H
    v_hat = fqe_linear(dataset, features, target, lam).v_hat
    n_jobs = SETTINGS.n_jobs if n_jobs is None else n_jobs
    replicates = np.array(Parallel(n_jobs=n_jobs)(
        delayed(_bootstrap_replicate)(dataset, features, target, lam, seed, b) for b in range(B)))
    lower, upper = np.quantile(replicates, [alpha / 2.0, 1.0 - alpha / 2.0])
    N = dataset.n * dataset.H
    variance = float(np.var(math.sqrt(N) * (replicates - v_hat)))
    return BootstrapResult(estimate=v_hat, lower=float(lower), upper=float(upper),
                           variance=variance, alpha=alpha, replicates=replicates)


def _behavior_design(mdp: TabularMDP, features: FeatureMap, behavior: Policy) -> tuple:
    d_mu = occupancy(mdp, behavior).d
    Phi = np.stack([features.at(t) for t in range(mdp.H)])
    Sigma = np.einsum("tsa,tsai,tsaj->ij", d_mu, Phi, Phi) / mdp.H
    _rank_checked(Sigma)
    return d_mu, Phi, Sigma


def fqe_influence_terms(mdp: TabularMDP, features: FeatureMap, target: Policy,
                        behavior: Policy) -> InfluenceTerms:
    """
    Exact population terms of linear FQE under the behavior law.

    Residual products are averaged over (t, s, a, s', r) with exact
    occupancies, kernels and Bernoulli reward moments.
    """
    H, S, A = mdp.H, mdp.S, mdp.A
    if S * A > ORACLE_MAX_CELLS or H > ORACLE_MAX_H:
        raise ValueError(f"variance oracle limited to S*A <= {ORACLE_MAX_CELLS} and H <= {ORACLE_MAX_H}")
    _check_shapes(features, target, S, A, H)
    _check_shapes(features, behavior, S, A, H)
    d_mu, Phi, Sigma = _behavior_design(mdp, features, behavior)
    Sigma_inv = linalg.inv(Sigma)
    next_table = _next_features(features, target, H)
    d = features.d

    def psi(h):
        # (H, S, d) successor features seen by the step-h backup at each data step t
        if features.time_indexed:
            return next_table[1:]
        return np.broadcast_to(next_table[h + 1], (H, S, d))

    weight = d_mu[..., None] * mdp.P / H
    w = np.zeros((H + 1, d))
    M = np.zeros((H, d, d))
    for h in reversed(range(H)):
        Psi = psi(h)
        M[h] = Sigma_inv @ np.einsum("tsau,tsai,tuj->ij", weight, Phi, Psi)
        b = np.einsum("tsa,tsai,tsa->i", d_mu / H, Phi, mdp.r)
        w[h] = Sigma_inv @ b + M[h] @ w[h + 1]

    nu = np.zeros((H, d))
    nu[0] = mdp.d1 @ next_table[0]
    for h in range(1, H):
        nu[h] = M[h - 1].T @ nu[h - 1]
    u = nu @ Sigma_inv

    # c[h, t, s, a, s'] = phi_t(s, a) . w_h - psi^(h)_t(s') . w_{h+1}
    c = np.stack([(Phi @ w[h])[..., None] - (psi(h) @ w[h + 1])[:, None, None, :] for h in range(H)])
    dev = c - mdp.r[None, ..., None]
    rv = mdp.reward_variance()[..., None]
    Omega = np.zeros((H, H, d, d))
    outer = np.einsum("tsai,tsaj->tsaij", Phi, Phi)
    for h1 in range(H):
        for h2 in range(h1, H):
            e = dev[h1] * dev[h2] + rv
            Omega[h1, h2] = np.einsum("tsau,tsau,tsaij->ij", weight, e, outer)
            Omega[h2, h1] = Omega[h1, h2].T
    sigma2 = float(np.einsum("hi,hkij,kj->", u, Omega, u))
    return InfluenceTerms(sigma2=sigma2, Sigma=Sigma, nu=nu, Omega=Omega, w=w[:H])


def asymptotic_variance_oracle(mdp: TabularMDP, features: FeatureMap, target: Policy,
                               behavior: Policy, per_episode: bool = False) -> float:
    """
    Asymptotic variance of sqrt(N) (v_hat - v) for linear FQE, N = n * H.

    per_episode=True divides by H, giving the limit of n * MSE.

    Raises:
        RankDeficiencyError: the behavior second-moment matrix is singular.
    """
    sigma2 = fqe_influence_terms(mdp, features, target, behavior).sigma2
    return sigma2 / mdp.H if per_episode else sigma2


def chi_square_divergence(mdp: TabularMDP, features: FeatureMap, target: Policy,
                          behavior: Policy) -> float:
    """
    sup over linear f of E_pi[f]^2 / E_mu[f^2] - 1, with step-averaged occupancies.

    Computed as the largest generalized eigenvalue of b b^T against E_mu[phi phi^T].
    """
    _check_shapes(features, target, mdp.S, mdp.A, mdp.H)
    _, Phi, G = _behavior_design(mdp, features, behavior)
    d_pi = occupancy(mdp, target).d
    b = np.einsum("tsa,tsai->i", d_pi, Phi) / mdp.H
    eigenvalues = linalg.eigh(np.outer(b, b), G, eigvals_only=True)
    return float(eigenvalues.max() - 1.0)
