#!/usr/bin/env python3

# SPDX-License-Identifier: Apache-2.0

import unittest
from unittest import TestCase

import numpy as np
import pytest

from offrl.data import Dataset
from offrl.errors import PolicyCapError
from offrl.exploration import ApeveConfig, MdpEnvironment, apeve, stage_schedule
from offrl.exploration.apeve import crude_model, max_stage_count, visitation_targets
from offrl.exploration.harness import check_elimination_soundness, pi_star_survived
from offrl.fixtures import deterministic_mdp, random_mdp
from offrl.mdp import TabularMDP, enumerate_deterministic, policy_index


class TestStageSchedule(TestCase):
    def test_small_budget(self):
        self.assertEqual(stage_schedule(4), [2, 2])

    def test_stages_sum_to_the_budget(self):
        for T in (4, 5, 16, 100, 256, 1000, 4096, 10 ** 6):
            stages = stage_schedule(T)
            self.assertEqual(sum(stages), T)
            self.assertLessEqual(len(stages), max_stage_count(T))
            self.assertTrue(all(k > 0 for k in stages))

    def test_exact_powers(self):
        self.assertEqual(stage_schedule(256), [16, 64, 128, 48])
        self.assertEqual(stage_schedule(16), [4, 8, 4])

    def test_budget_too_small(self):
        with self.assertRaises(ValueError):
            stage_schedule(3)


class TestApeve(TestCase):
    def test_batches_and_switches(self):
        mdp = random_mdp(0, S=2, A=2, H=2, stochasticity=1.0)
        ledger, final = apeve(MdpEnvironment(mdp, 0), 2, 2, 2, T=64, seed=0)
        stages = stage_schedule(64)
        self.assertEqual(ledger.stage_count, len(stages))
        self.assertLessEqual(ledger.stage_count, max_stage_count(64))
        self.assertEqual(ledger.batch_count, len(stages) * (2 + 1))
        self.assertEqual(ledger.episodes, 64)
        self.assertLessEqual(ledger.switch_count, ledger.batch_count * (1 + 2 * 2 * 2))
        self.assertEqual(len(ledger.rounds), len(stages))
        self.assertGreaterEqual(len(final), 1)
        self.assertTrue(np.all(final.lower <= final.upper))

    def test_layers_without_crude_budget_get_no_batch(self):
        mdp = random_mdp(0, S=2, A=2, H=2, stochasticity=1.0)
        ledger, _ = apeve(MdpEnvironment(mdp, 0), 2, 2, 2, T=16, seed=0)
        self.assertEqual(stage_schedule(16), [4, 8, 4])
        self.assertEqual(ledger.stage_boundaries, [0, 2, 5])
        self.assertEqual(ledger.batch_boundaries, [0, 1, 4, 5, 6, 12, 13])

    def test_fine_plan_uses_the_crude_model(self):
        # action a moves to state a; state 1 is never occupied at step 0
        P = np.zeros((2, 2, 2, 2))
        P[:, :, 0, 0] = 1.0
        P[:, :, 1, 1] = 1.0
        r = np.zeros((2, 2, 2))
        r[1, 1, 1] = 1.0
        mdp = TabularMDP(P=P, r=r, d1=[1.0, 0.0])
        ledger, _ = apeve(MdpEnvironment(mdp, 0), 2, 2, 2, T=256, seed=0)

        def deployed(batch):
            start, end = ledger.batch_boundaries[batch], ledger.batch_boundaries[batch + 1]
            return {policy_index(ledger.policies[pid].actions(), 2) for pid in ledger.episode_policy[start:end]}

        self.assertEqual(ledger.stage_boundaries[:2], [0, 3])
        self.assertEqual(deployed(0), {0, 8})
        self.assertEqual(deployed(1), {0, 2})
        table = enumerate_deterministic(2, 2, 2)
        blind = set(visitation_targets(crude_model(Dataset.empty(2, 2, 2)), table, np.arange(16)).tolist())
        self.assertEqual(blind, {0, 1, 2, 4, 8})
        self.assertEqual(deployed(2), {0, 2, 8, 9})

    def test_policy_cap(self):
        mdp = random_mdp(0, S=3, A=3, H=3, stochasticity=1.0)
        with self.assertRaises(PolicyCapError):
            apeve(MdpEnvironment(mdp, 0), 3, 3, 3, T=64, policy_cap=1024)

    def test_config(self):
        with self.assertRaises(ValueError):
            ApeveConfig(crude_fraction=1.0)
        with self.assertRaises(ValueError):
            ApeveConfig(ci_scale=0.0)
        self.assertEqual(ApeveConfig().as_manifest(), {"crude_fraction": 0.25, "ci_scale": 1.0})

    def test_deterministic_system_keeps_the_optimal_policy(self):
        for seed in range(5):
            mdp = deterministic_mdp(seed, S=2, A=2, H=2)
            ledger, final = apeve(MdpEnvironment(mdp, seed), 2, 2, 2, T=64, seed=seed)
            checks = check_elimination_soundness(mdp, ledger, final.table)
            self.assertTrue(all(holds and survived for holds, survived in checks))
            self.assertTrue(pi_star_survived(mdp, final))

    def test_reproducible(self):
        mdp = random_mdp(3, S=2, A=2, H=2, stochasticity=1.0)
        a, _ = apeve(MdpEnvironment(mdp, 1), 2, 2, 2, T=32, seed=1)
        b, _ = apeve(MdpEnvironment(mdp, 1), 2, 2, 2, T=32, seed=1)
        self.assertEqual(a.episode_policy, b.episode_policy)

    @pytest.mark.slow
    def test_stochastic_system_keeps_the_optimal_policy(self):
        for seed in range(10):
            mdp = random_mdp(seed, S=2, A=2, H=2, stochasticity=0.5)
            ledger, final = apeve(MdpEnvironment(mdp, seed), 2, 2, 2, T=4096, seed=seed)
            checks = check_elimination_soundness(mdp, ledger, final.table)
            self.assertTrue(all(survived for _, survived in checks))
            self.assertTrue(pi_star_survived(mdp, final))


if __name__ == '__main__':
    unittest.main()
