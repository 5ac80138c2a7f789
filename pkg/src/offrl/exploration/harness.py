#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Regret, switch and batch accounting against a known MDP."""

import math
from dataclasses import dataclass
from enum import StrEnum

import numpy as np
from joblib import Parallel, delayed

from offrl.cli.common import Console
from offrl.exploration.apeve import PolicySet, apeve
from offrl.exploration.environment import MdpEnvironment
from offrl.exploration.larfe import LarfeResult
from offrl.exploration.ledger import AdaptivityLedger
from offrl.mdp import Policy, TabularMDP, optimal_policy, policy_value, policy_values_batch
from offrl.settings import SETTINGS
from offrl.utils import derive_seed, generator


class Algorithm(StrEnum):
    APEVE = "apeve"
    UNIFORM = "uniform"
    OPTIMAL = "optimal"


@dataclass(frozen=True, eq=False)
class RegretSummary:
    """
    Attributes:
        T (int): episodes per run.
        regrets (np.ndarray): total regret of every seed.
        switch_counts (list): switches of every seed.
        batch_counts (list): batches of every seed.
        stage_counts (list): stages of every seed, 0 for unstaged algorithms.
        ledgers (list): the ledgers, regret traces filled in.
    """
    T: int
    regrets: np.ndarray
    switch_counts: list
    batch_counts: list
    stage_counts: list
    ledgers: list

    @property
    def mean(self) -> float:
        return float(self.regrets.mean())

    @property
    def se(self) -> float:
        if len(self.regrets) < 2:
            return 0.0
        return float(self.regrets.std(ddof=1) / math.sqrt(len(self.regrets)))


def fill_regret(mdp: TabularMDP, ledger: AdaptivityLedger) -> np.ndarray:
    """Cumulative regret trace sum_{t' <= t} v* - v^{pi_t'} from the exact value of every deployed policy."""
    _, star = optimal_policy(mdp)
    values = np.array([policy_value(mdp, p).v for p in ledger.policies])
    per_episode = star.v - values[np.asarray(ledger.episode_policy, dtype=int)]
    ledger.regret = np.cumsum(per_episode)
    return ledger.regret


def _fixed_policy_run(mdp: TabularMDP, policy: Policy, T: int, seed: int) -> AdaptivityLedger:
    ledger = AdaptivityLedger(mdp.S, mdp.A, mdp.H, seed)
    ledger.run_batch(MdpEnvironment(mdp, seed), [(ledger.register(policy), T)])
    return ledger


def run_algorithm(mdp: TabularMDP, algorithm: str, T: int, seed: int, **options) -> AdaptivityLedger:
    """One seeded run of an exploration algorithm; the environment only samples."""
    algorithm = Algorithm(algorithm)
    if algorithm == Algorithm.OPTIMAL:
        ledger = _fixed_policy_run(mdp, optimal_policy(mdp)[0], T, seed)
    elif algorithm == Algorithm.UNIFORM:
        ledger = _fixed_policy_run(mdp, Policy.uniform(mdp.H, mdp.S, mdp.A), T, seed)
    else:
        ledger, _ = apeve(MdpEnvironment(mdp, seed), mdp.S, mdp.A, mdp.H, T,
                          delta=options.get("delta", 0.1), policy_cap=options.get("policy_cap"),
                          config=options.get("config"), seed=seed)
    fill_regret(mdp, ledger)
    return ledger


def regret_harness(mdp: TabularMDP, algorithm: str, T: int, seeds, n_jobs: int | None = None,
                   **options) -> RegretSummary:
    """
    Regret, switches and batches of an algorithm over independent seeds.

    Seeds run concurrently; results are gathered in seed order.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    n_jobs = SETTINGS.n_jobs if n_jobs is None else n_jobs
    Console.verbose(f"regret_harness: {algorithm} T={T} over {len(seeds)} seeds")
    ledgers = Parallel(n_jobs=n_jobs)(
        delayed(run_algorithm)(mdp, algorithm, T, derive_seed(seed, "regret"), **options) for seed in seeds)
    return RegretSummary(T=T, regrets=np.array([ledger.regret[-1] for ledger in ledgers]),
                         switch_counts=[ledger.switch_count for ledger in ledgers],
                         batch_counts=[ledger.batch_count for ledger in ledgers],
                         stage_counts=[ledger.stage_count for ledger in ledgers], ledgers=ledgers)


def star_index(mdp: TabularMDP, table: np.ndarray) -> int:
    """Enumeration index of the optimal deterministic policy (lowest-index argmax)."""
    return int(np.argmax(policy_values_batch(mdp, table)))


def check_elimination_soundness(mdp: TabularMDP, ledger: AdaptivityLedger, table: np.ndarray) -> list:
    """
    Replay every elimination round against the true values.

    Returns:
        list: one (all_cis_hold, star_survived) pair per round.
    """
    truth = policy_values_batch(mdp, table)
    best = truth.max()
    checks = []
    for rnd in ledger.rounds:
        v = truth[rnd.candidates]
        holds = bool(np.all((rnd.lower <= v + 1e-12) & (v <= rnd.upper + 1e-12)))
        optimal = rnd.candidates[np.isclose(v, best, rtol=0.0, atol=1e-12)]
        survived = bool(len(optimal) == 0 or np.any(~np.isin(optimal, rnd.eliminated)))
        checks.append((holds, survived))
    return checks


def pi_star_survived(mdp: TabularMDP, final: PolicySet) -> bool:
    """Some optimal deterministic policy is still in the final set."""
    truth = policy_values_batch(mdp, final.table)
    return bool(np.any(np.isclose(truth[final.ids], truth.max(), rtol=0.0, atol=1e-12)))


@dataclass(frozen=True)
class CertificateCheck:
    epsilon: float
    suboptimalities: tuple

    @property
    def passed(self) -> bool:
        return all(gap <= self.epsilon for gap in self.suboptimalities)


def certificate_check(mdp: TabularMDP, result: LarfeResult, epsilon: float | None = None,
                      tables: int = 5, seed: int = 0) -> CertificateCheck:
    """
    Plan random reward tables on the explored model and score the plans on the true MDP.

    Reward table k is uniform on [0, 1]^(H x S x A), drawn from the substream (seed, "certificate", k).
    """
    epsilon = result.epsilon if epsilon is None else epsilon
    gaps = []
    for k in range(tables):
        rewards = generator(seed, "certificate", k).random((mdp.H, mdp.S, mdp.A))
        truth = mdp.with_rewards(rewards)
        _, star = optimal_policy(truth)
        gaps.append(float(star.v - policy_value(truth, result.plan(rewards)).v))
    return CertificateCheck(epsilon=epsilon, suboptimalities=tuple(gaps))
