#!/usr/bin/env python3

# SPDX-License-Identifier: Apache-2.0

import itertools
import unittest
from typing import Type
from unittest import TestCase

import numpy as np
import pytest

from offrl.data import Dataset, counts, sample_trajectories
from offrl.errors import SupportError
from offrl.estimators import (
    Estimator,
    EstimatorFactory,
    Method,
    cumulative_ratios,
    is_estimate,
    mse_harness,
    smis_estimate,
    step_is_estimate,
    tmis_estimate,
)
from offrl.estimators.importance_sampling import ImportanceSampling
from offrl.fixtures import deterministic_mdp, random_mdp, ring_mdp, ring_ratio_variance
from offrl.mdp import Policy, RewardNoise, TabularMDP, optimal_policy, policy_value
from offrl.oracles import cr_lower_bound, smis_asymptotic_variance
from offrl.utils import generator


def all_trajectories(mdp, behavior):
    """Every trajectory of a deterministic-reward MDP with its probability under the behavior."""
    S, A, H = mdp.S, mdp.A, mdp.H
    rows = []
    for states in itertools.product(range(S), repeat=H + 1):
        for actions in itertools.product(range(A), repeat=H):
            p = mdp.d1[states[0]]
            for h in range(H):
                p *= behavior.pi[h, states[h], actions[h]] * mdp.P[h, states[h], actions[h], states[h + 1]]
            rewards = [mdp.r[h, states[h], actions[h]] for h in range(H)]
            rows.append((p, states, actions, rewards))
    probs, states, actions, rewards = zip(*rows)
    return np.array(probs), Dataset(S, A, states, actions, rewards)


def balanced_mdp(seed, S=2, A=2, H=3):
    """Bernoulli rewards in [0.2, 0.8], well-spread transitions and a fixed start state."""
    rng = generator(seed, "balanced")
    P = rng.dirichlet(8.0 * np.ones(S), size=(H, S, A))
    r = rng.uniform(0.2, 0.8, size=(H, S, A))
    return TabularMDP(P=P, r=r, d1=np.eye(S)[0], reward_noise=RewardNoise.BERNOULLI)


class TestEstimatorFactory(TestCase):
    def test_create_estimators(self):
        for method in Method:
            estimator = EstimatorFactory.create_estimator(method)
            self.assertTrue(issubclass(estimator, Estimator))
            self.assertEqual(estimator.method, str(method))

    def test_unknown_method(self):
        with self.assertRaises(ValueError):
            EstimatorFactory.create_estimator("doubly-robust")

    def test_behavior_required(self):
        target = Policy.uniform(2, 2, 2)
        with self.assertRaises(ValueError):
            ImportanceSampling(target)
        self.assertIsNone(EstimatorFactory.create_estimator(Method.TMIS)(target).behavior)

    def test_type(self):
        self.assertIsInstance(EstimatorFactory.create_estimator(Method.IS), Type)


class TestImportanceSampling(TestCase):
    def setUp(self):
        self.mdp = random_mdp(7, S=3, A=2, H=4, stochasticity=1.0)
        self.behavior = Policy.uniform(4, 3, 2)
        self.data = sample_trajectories(self.mdp, self.behavior, 300, seed=3)

    def test_on_policy_is_the_mean_return(self):
        mean_return = float(self.data.rewards.sum(axis=1).mean())
        self.assertAlmostEqual(is_estimate(self.data, self.behavior, self.behavior).estimate,
                               mean_return, delta=1e-12)
        self.assertAlmostEqual(step_is_estimate(self.data, self.behavior, self.behavior).estimate,
                               mean_return, delta=1e-12)
        self.assertAlmostEqual(smis_estimate(self.data, self.behavior, self.behavior).estimate,
                               mean_return, delta=1e-12)

    def test_cumulative_ratios(self):
        target, _ = optimal_policy(self.mdp)
        rho = cumulative_ratios(self.data, target, self.behavior)
        self.assertEqual(rho.shape, (300, 4))
        self.assertTrue(np.all(np.isin(rho, [0.0, 2.0, 4.0, 8.0, 16.0])))
        report = is_estimate(self.data, target, self.behavior)
        self.assertEqual(report.diagnostics["max_cumulative_ratio"], float(rho[:, -1].max()))
        n_sa = counts(self.data).n_sa
        self.assertEqual(report.diagnostics["min_positive_count"], n_sa[n_sa > 0].min())
        hit = (target.pi > 0) & (n_sa.sum(axis=-1)[..., None] > 0) & (n_sa == 0)
        self.assertEqual(report.diagnostics["zero_count_cells"], int(hit.sum()))

    def test_missing_support(self):
        behavior = Policy.deterministic(np.zeros((4, 3), dtype=int), 2)
        with self.assertRaises(SupportError) as ctx:
            is_estimate(self.data, self.behavior, behavior)
        self.assertTrue(all(cell[2] == 1 for cell in ctx.exception.cells))

    def test_empty_dataset(self):
        with self.assertRaises(ValueError):
            is_estimate(Dataset.empty(3, 2, 4), self.behavior, self.behavior)

    def test_ring_ratio_variance(self):
        ring = ring_mdp(5, 1 / 3, 4)
        data = sample_trajectories(ring.mdp, ring.behavior, 20000, seed=0)
        report = is_estimate(data, ring.target, ring.behavior)
        self.assertAlmostEqual(report.diagnostics["ratio_variance"], ring_ratio_variance(1 / 3, 4),
                               delta=1.0)


class TestUnbiasedness(TestCase):
    def test_expected_estimate_is_the_value(self):
        base = random_mdp(8, S=2, A=2, H=3, stochasticity=1.0)
        mdp = TabularMDP(P=base.P, r=base.r, d1=base.d1)
        behavior = Policy(generator(8, "behavior").dirichlet(np.ones(2), size=(3, 2)))
        target = Policy(generator(8, "target").dirichlet(np.ones(2), size=(3, 2)))
        probs, data = all_trajectories(mdp, behavior)
        self.assertAlmostEqual(float(probs.sum()), 1.0, delta=1e-12)
        truth = policy_value(mdp, target).v
        for estimate in (is_estimate, step_is_estimate):
            expected = sum(p * estimate(data.subset([i]), target, behavior).estimate
                           for i, p in enumerate(probs))
            self.assertAlmostEqual(expected, truth, delta=1e-10)


class TestTabularMIS(TestCase):
    def test_forms_agree(self):
        for seed in range(20):
            mdp = random_mdp(seed, S=4, A=3, H=5, stochasticity=1.0)
            behavior = Policy(np.random.default_rng(seed).dirichlet(np.ones(3), size=(5, 4)))
            target = Policy(np.random.default_rng(seed + 100).dirichlet(np.ones(3), size=(5, 4)))
            data = sample_trajectories(mdp, behavior, 50, seed=seed)
            report = tmis_estimate(data, target)
            self.assertAlmostEqual(report.diagnostics["mis_form"], report.diagnostics["model_form"],
                                   delta=1e-10)

    def test_exact_on_covered_deterministic_system(self):
        mdp = deterministic_mdp(2, S=3, A=2, H=4)
        target, values = optimal_policy(mdp)
        data = sample_trajectories(mdp, Policy.uniform(4, 3, 2), 2000, seed=1)
        report = tmis_estimate(data, target)
        self.assertEqual(report.diagnostics["zero_count_cells"], 0)
        self.assertAlmostEqual(report.estimate, values.v, delta=1e-10)

    def test_consistency(self):
        mdp = random_mdp(5, S=3, A=2, H=3, stochasticity=1.0)
        target, _ = optimal_policy(mdp)
        data = sample_trajectories(mdp, Policy.uniform(3, 3, 2), 20000, seed=2)
        self.assertAlmostEqual(tmis_estimate(data, target).estimate, policy_value(mdp, target).v,
                               delta=0.15)

    def test_pooled(self):
        mdp = random_mdp(5, S=3, A=2, H=3, stochasticity=1.0)
        data = sample_trajectories(mdp, Policy.uniform(3, 3, 2), 100, seed=2)
        report = tmis_estimate(data, Policy.uniform(3, 3, 2), pooled=True)
        self.assertTrue(report.diagnostics["pooled"])
        self.assertIsNone(report.diagnostics["mis_form"])
        self.assertEqual(report.estimate, report.diagnostics["model_form"])

    def test_unvisited_cells_are_counted(self):
        mdp = random_mdp(5, S=3, A=2, H=3, stochasticity=1.0)
        behavior = Policy.deterministic(np.zeros((3, 3), dtype=int), 2)
        target = Policy.deterministic(np.ones((3, 3), dtype=int), 2)
        data = sample_trajectories(mdp, behavior, 50, seed=0)
        report = tmis_estimate(data, target)
        self.assertGreater(report.diagnostics["zero_count_cells"], 0)
        self.assertEqual(report.estimate, 0.0)


class TestMseHarness(TestCase):
    def test_reps(self):
        mdp = deterministic_mdp(0, S=2, A=2, H=2)
        policy = Policy.uniform(2, 2, 2)
        with self.assertRaises(ValueError):
            mse_harness(mdp, policy, policy, "is", 10, reps=1, seed=0)

    def test_tmis_on_deterministic_system(self):
        mdp = deterministic_mdp(4, S=3, A=2, H=3)
        target, values = optimal_policy(mdp)
        summary = mse_harness(mdp, target, Policy.uniform(3, 3, 2), "tmis", 1000, reps=4, seed=0,
                              n_jobs=1)
        self.assertEqual(summary.failures, 0)
        self.assertEqual(summary.truth, values.v)
        self.assertLess(summary.mse, 1e-20)

    def test_replications_are_reproducible(self):
        mdp = random_mdp(1, S=3, A=2, H=3, stochasticity=1.0)
        target, _ = optimal_policy(mdp)
        behavior = Policy.uniform(3, 3, 2)
        a = mse_harness(mdp, target, behavior, "step-is", 100, reps=5, seed=9, n_jobs=1)
        b = mse_harness(mdp, target, behavior, "step-is", 100, reps=5, seed=9, n_jobs=2)
        self.assertEqual(a, b)


TARGET = Policy(np.broadcast_to([0.8, 0.2], (3, 2, 2)))
BEHAVIOR = Policy.uniform(3, 2, 2)


@pytest.mark.slow
def test_tmis_reaches_the_cramer_rao_bound():
    mdp = balanced_mdp(0)
    n = 1000
    summary = mse_harness(mdp, TARGET, BEHAVIOR, "tmis", n, reps=500, seed=0)
    assert summary.failures == 0
    assert n * summary.mse == pytest.approx(cr_lower_bound(mdp, TARGET, BEHAVIOR), rel=0.2)


@pytest.mark.slow
def test_smis_pays_for_the_policy_mismatch():
    mdp = balanced_mdp(0)
    n = 1000
    smis = mse_harness(mdp, TARGET, BEHAVIOR, "smis", n, reps=500, seed=0)
    tmis = mse_harness(mdp, TARGET, BEHAVIOR, "tmis", n, reps=500, seed=0)
    asymptotic = smis_asymptotic_variance(mdp, TARGET, BEHAVIOR)
    assert asymptotic > cr_lower_bound(mdp, TARGET, BEHAVIOR)
    assert n * smis.mse == pytest.approx(asymptotic, rel=0.2)
    assert smis.mse > tmis.mse


if __name__ == '__main__':
    unittest.main()
