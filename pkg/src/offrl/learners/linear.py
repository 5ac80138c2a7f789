#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Pessimistic fitted value iteration with linear features (PFVI) and its variance-weighted form."""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from offrl.data import Dataset
from offrl.errors import ConditioningError, DimensionError
from offrl.features import FeatureMap
from offrl.learners.pessimism import LearnedPolicyReport
from offrl.mdp import Policy

CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class LinearBonusConfig:
    """Frozen constants of the variance-weighted bonus c sqrt(d iota) ||phi||_Lambda^-1 + c_tail H^4 sqrt(d) iota / n."""
    lam: float = 1.0
    delta: float = 0.1
    c: float = 1.0
    c_tail: float = 2.0

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"lambda must be positive, got {self.lam}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")

    def log_factor(self, d: int, H: int, n: int) -> float:
        return math.log(2.0 * d * H * max(n, 1) / self.delta)


@dataclass(frozen=True, eq=False)
class GramState:
    """
    Attributes:
        Lambda (np.ndarray): (H, d, d) regularized, possibly variance-weighted Gram matrices.
        w (np.ndarray): (H, d) regression weights.
        sigma2_hat (np.ndarray | None): (H, S, A) variance tables used as weights, all >= 1.
        condition (np.ndarray): (H,) condition numbers of Lambda.
    """
    Lambda: np.ndarray
    w: np.ndarray
    sigma2_hat: np.ndarray | None
    condition: np.ndarray


@dataclass(frozen=True, eq=False)
class RidgeFit:
    w: np.ndarray
    Lambda: np.ndarray
    factor: tuple
    condition: float

    def quadratic_form(self, X: np.ndarray) -> np.ndarray:
        """x^T Lambda^-1 x for every row of X."""
        return np.sum(X * linalg.cho_solve(self.factor, X.T).T, axis=-1)


def ridge(Phi: np.ndarray, y: np.ndarray, lam: float, weights: np.ndarray | None = None) -> RidgeFit:
    """
    Weighted ridge regression through a Cholesky factorization.

    Raises:
        ValueError: non-finite targets.
        ConditioningError: cond(Lambda) > 1e12.
    """
    if not np.all(np.isfinite(y)):
        raise ValueError("regression targets must be finite")
    weights = np.ones(len(y)) if weights is None else weights
    Lambda = Phi.T @ (weights[:, None] * Phi) + lam * np.eye(Phi.shape[1])
    condition = float(np.linalg.cond(Lambda))
    if condition > CONDITION_LIMIT:
        raise ConditioningError(condition, CONDITION_LIMIT)
    factor = linalg.cho_factor(Lambda)
    w = linalg.cho_solve(factor, Phi.T @ (weights * y))
    return RidgeFit(w=w, Lambda=Lambda, factor=factor, condition=condition)


def _step_samples(dataset: Dataset, features: FeatureMap, h: int) -> tuple:
    s = dataset.states[:, h]
    a = dataset.actions[:, h]
    return features.at(h)[s, a], dataset.rewards[:, h], dataset.states[:, h + 1], s, a


def _check(dataset: Dataset, features: FeatureMap):
    if (features.S, features.A) != (dataset.S, dataset.A):
        raise DimensionError(f"features cover {(features.S, features.A)}, dataset {(dataset.S, dataset.A)}")


def variance_estimate(dataset: Dataset, features: FeatureMap, V_next: np.ndarray, h: int,
                      lam: float = 1.0) -> np.ndarray:
    """
    Clipped conditional variance of r + V_next(s') at step h, shape (S, A).

    First and second moments are fitted by separate ridge regressions;
    the difference is clipped to [1, H^2].
    """
    _check(dataset, features)
    Phi, r, s_next, _, _ = _step_samples(dataset, features, h)
    target = r + V_next[s_next]
    m1 = ridge(Phi, target, lam).w
    m2 = ridge(Phi, target ** 2, lam).w
    X = features.at(h)
    return np.clip(X @ m2 - (X @ m1) ** 2, 1.0, float(dataset.H) ** 2)


def _report(actions, V, Q, bonus, A, constants, gram) -> LearnedPolicyReport:
    return LearnedPolicyReport(policy=Policy.deterministic(actions, A), V_hat=V, Q_hat=Q,
                               bonus=bonus, constants=constants, gram=gram)


def pfvi(dataset: Dataset, features: FeatureMap, lam: float = 1.0,
         beta: float | None = None) -> LearnedPolicyReport:
    """
    Pessimistic fitted value iteration.

    Q_h = clip(phi . w_h - beta sqrt(phi^T Lambda_h^-1 phi), 0, H - h) where
    w_h is the ridge fit of r + V_{h+1}(s'); beta defaults to d * H.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    _check(dataset, features)
    H, S, A, d = dataset.H, dataset.S, dataset.A, features.d
    beta = d * H if beta is None else beta
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    bonus = np.zeros((H, S, A))
    actions = np.zeros((H, S), dtype=int)
    Lambda = np.zeros((H, d, d))
    W = np.zeros((H, d))
    condition = np.zeros(H)
    for h in reversed(range(H)):
        Phi, r, s_next, _, _ = _step_samples(dataset, features, h)
        fit = ridge(Phi, r + V[h + 1][s_next], lam)
        X = features.at(h).reshape(S * A, d)
        bonus[h] = beta * np.sqrt(fit.quadratic_form(X)).reshape(S, A)
        Q[h] = np.clip((X @ fit.w).reshape(S, A) - bonus[h], 0.0, H - h)
        actions[h] = np.argmax(Q[h], axis=-1)
        V[h] = Q[h].max(axis=-1)
        Lambda[h], W[h], condition[h] = fit.Lambda, fit.w, fit.condition
    gram = GramState(Lambda=Lambda, w=W, sigma2_hat=None, condition=condition)
    return _report(actions, V[:H], Q, bonus, A, {"lam": lam, "beta": beta}, gram)


def vw_pfvi(dataset: Dataset, features: FeatureMap,
            config: LinearBonusConfig = LinearBonusConfig()) -> LearnedPolicyReport:
    """
    Variance-weighted pessimistic fitted value iteration.

    At every step the conditional variance of r + V_{h+1}(s') is estimated
    from the current V_{h+1}, each sample is weighted by 1 / sigma2_hat and
    the bonus uses the weighted Gram matrix.
    """
    _check(dataset, features)
    H, S, A, d = dataset.H, dataset.S, dataset.A, features.d
    n = dataset.n
    iota = config.log_factor(d, H, n)
    tail = config.c_tail * H ** 4 * math.sqrt(d) * iota / max(n, 1)
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    bonus = np.zeros((H, S, A))
    actions = np.zeros((H, S), dtype=int)
    Lambda = np.zeros((H, d, d))
    W = np.zeros((H, d))
    sigma2 = np.zeros((H, S, A))
    condition = np.zeros(H)
    for h in reversed(range(H)):
        Phi, r, s_next, s, a = _step_samples(dataset, features, h)
        sigma2[h] = variance_estimate(dataset, features, V[h + 1], h, config.lam)
        fit = ridge(Phi, r + V[h + 1][s_next], config.lam, weights=1.0 / sigma2[h][s, a])
        X = features.at(h).reshape(S * A, d)
        width = np.sqrt(fit.quadratic_form(X)).reshape(S, A)
        bonus[h] = config.c * math.sqrt(d * iota) * width + tail
        Q[h] = np.clip((X @ fit.w).reshape(S, A) - bonus[h], 0.0, H - h)
        actions[h] = np.argmax(Q[h], axis=-1)
        V[h] = Q[h].max(axis=-1)
        Lambda[h], W[h], condition[h] = fit.Lambda, fit.w, fit.condition
    constants = {"lam": config.lam, "delta": config.delta, "c": config.c, "c_tail": config.c_tail,
                 "iota": iota}
    gram = GramState(Lambda=Lambda, w=W, sigma2_hat=sigma2, condition=condition)
    return _report(actions, V[:H], Q, bonus, A, constants, gram)
