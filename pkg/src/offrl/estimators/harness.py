#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed

from offrl.cli.common import Console
from offrl.data import sample_trajectories
from offrl.errors import OffrlError
from offrl.estimators.estimator_factory import EstimatorFactory, Method
from offrl.mdp import Policy, TabularMDP, policy_value
from offrl.settings import SETTINGS
from offrl.utils import derive_seed


@dataclass(frozen=True)
class MseSummary:
    """
    Replication summary of one estimator at one (n, H).

    mse and se are nan when every replication failed.
    """
    method: str
    n: int
    H: int
    reps: int
    failures: int
    truth: float
    mean_estimate: float
    mse: float
    rel_rmse: float
    se: float


def replicate(mdp: TabularMDP, target: Policy, behavior: Policy, method: str, n: int,
              seed: int, rep: int) -> float | None:
    """One replication on its own substream; None when the estimator refuses the data."""
    dataset = sample_trajectories(mdp, behavior, n, derive_seed(seed, rep))
    estimator = EstimatorFactory.create_estimator(Method(method))(target, behavior)
    try:
        return estimator.estimate(dataset).estimate
    except OffrlError:
        return None


def summarize(method: str, n: int, H: int, truth: float, estimates: list) -> MseSummary:
    ok = np.array([e for e in estimates if e is not None], dtype=float)
    failures = len(estimates) - len(ok)
    if failures:
        Console.warn(f"{method}: {failures} of {len(estimates)} replications failed")
    if len(ok) == 0:
        nan = float("nan")
        return MseSummary(method, n, H, len(estimates), failures, truth, nan, nan, nan, nan)
    sq = (ok - truth) ** 2
    mse = float(sq.mean())
    se = float(sq.std(ddof=1) / math.sqrt(len(sq))) if len(sq) > 1 else 0.0
    rel = math.sqrt(mse) / truth if truth != 0 else float("inf")
    return MseSummary(method, n, H, len(estimates), failures, truth, float(ok.mean()), mse, rel, se)


def mse_harness(mdp: TabularMDP, target: Policy, behavior: Policy, method: str, n: int,
                reps: int, seed: int, n_jobs: int | None = None) -> MseSummary:
    """
    Replicated MSE of an estimator against the exact value of the target.

    Replication k samples from the substream (seed, k); failed replications
    are counted and excluded.
    """
    if reps < 2:
        raise ValueError(f"reps must be at least 2, got {reps}")
    truth = policy_value(mdp, target).v
    n_jobs = SETTINGS.n_jobs if n_jobs is None else n_jobs
    Console.verbose(f"mse_harness: {method} n={n} H={mdp.H} reps={reps}")
    estimates = Parallel(n_jobs=n_jobs)(
        delayed(replicate)(mdp, target, behavior, method, n, seed, k) for k in range(reps))
    return summarize(str(Method(method)), n, mdp.H, truth, estimates)
