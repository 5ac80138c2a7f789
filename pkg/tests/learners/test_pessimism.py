#!/usr/bin/env python3

# SPDX-License-Identifier: Apache-2.0

import os
import tempfile
import unittest
from unittest import TestCase

import numpy as np
import pytest

from offrl.data import sample_trajectories
from offrl.errors import DatasetParseError, DimensionError, IndexRangeError, MalformedHeaderError
from offrl.fixtures import random_mdp
from offrl.learners import BonusConfig, BonusStyle, PluginModel, augmented_mdp, erm_policy, plugin_model, pvi
from offrl.learners.pessimism import (
    bonus_table,
    is_pessimistic,
    lcb_gap,
    pvi_model,
    read_policy,
    suboptimality,
    write_policy,
)
from offrl.mdp import Policy, optimal_policy, policy_value, validate_mdp


class TestPluginModel(TestCase):
    def test_unvisited_cells(self):
        mdp = random_mdp(0, S=3, A=2, H=3, stochasticity=1.0)
        behavior = Policy.deterministic(np.zeros((3, 3), dtype=int), 2)
        model = plugin_model(sample_trajectories(mdp, behavior, 100, seed=0))
        np.testing.assert_allclose(model.P_hat.sum(axis=-1), 1.0)
        np.testing.assert_array_equal(model.P_hat[:, :, 1], np.full((3, 3, 3), 1.0 / 3))
        np.testing.assert_array_equal(model.r_hat[:, :, 1], 0.0)

    def test_declared_sizes(self):
        mdp = random_mdp(0, S=3, A=2, H=3, stochasticity=1.0)
        data = sample_trajectories(mdp, Policy.uniform(3, 3, 2), 10, seed=0)
        with self.assertRaises(DimensionError):
            plugin_model(data, S=4)
        with self.assertRaises(DimensionError):
            pvi(data, H=5)


class TestPvi(TestCase):
    def test_large_data_limit_is_optimal(self):
        for seed in range(10):
            mdp = random_mdp(seed, S=4, A=3, H=5, stochasticity=0.5)
            _, star = optimal_policy(mdp)
            for style in BonusStyle:
                report = pvi_model(PluginModel.exact(mdp), BonusConfig(style=style))
                self.assertLess(suboptimality(mdp, report), 1e-3)
            erm = pvi_model(PluginModel.exact(mdp), BonusConfig(style=BonusStyle.NONE))
            np.testing.assert_allclose(erm.V_hat, star.V, atol=1e-9)

    def test_pessimism(self):
        for seed in range(5):
            mdp = random_mdp(seed, S=3, A=2, H=3, stochasticity=1.0)
            data = sample_trajectories(mdp, Policy.uniform(3, 3, 2), 300, seed=seed)
            for style in (BonusStyle.HOEFFDING, BonusStyle.BERNSTEIN):
                report = pvi(data, config=BonusConfig(style=style)).with_suboptimality(mdp)
                self.assertTrue(is_pessimistic(mdp, report))
                self.assertGreaterEqual(lcb_gap(mdp, report), report.suboptimality - 1e-10)

    def test_values_are_clipped(self):
        mdp = random_mdp(1, S=3, A=2, H=4, stochasticity=1.0)
        data = sample_trajectories(mdp, Policy.uniform(4, 3, 2), 20, seed=1)
        report = pvi(data)
        for h in range(4):
            self.assertTrue(np.all((report.V_hat[h] >= 0) & (report.V_hat[h] <= 4 - h)))
        self.assertTrue(report.policy.is_deterministic())
        self.assertIn("iota", report.constants)
        self.assertEqual(report.constants["style"], "bernstein")

    def test_burn_in_is_reported(self):
        mdp = random_mdp(1, S=3, A=2, H=4, stochasticity=1.0)
        data = sample_trajectories(mdp, Policy.uniform(4, 3, 2), 20, seed=1)
        report = pvi(data)
        n_sa = plugin_model(data).counts.n_sa
        self.assertEqual(report.constants["d_m"], n_sa[n_sa > 0].min() / 20)
        self.assertAlmostEqual(report.constants["burn_in"] * report.constants["d_m"],
                               np.log(4 * 3 * 2 / 0.1), delta=1e-9)

    def test_hoeffding_bonus(self):
        mdp = random_mdp(1, S=3, A=2, H=4, stochasticity=1.0)
        data = sample_trajectories(mdp, Policy.uniform(4, 3, 2), 50, seed=1)
        model = plugin_model(data)
        config = BonusConfig(style=BonusStyle.HOEFFDING)
        expected = 2.0 * 4 * np.sqrt(config.log_factor(4, 3, 2) / np.maximum(model.counts.n_sa[2], 1))
        np.testing.assert_allclose(bonus_table(model, np.zeros(3), 2, config), expected)

    def test_bernstein_bonus_shrinks_with_data(self):
        mdp = random_mdp(2, S=3, A=2, H=3, stochasticity=1.0)
        behavior = Policy.uniform(3, 3, 2)
        small = pvi(sample_trajectories(mdp, behavior, 100, seed=0))
        large = pvi(sample_trajectories(mdp, behavior, 10000, seed=0))
        self.assertLess(large.bonus.max(), small.bonus.max())

    def test_bernstein_is_narrower_than_hoeffding_with_enough_data(self):
        mdp = random_mdp(3, S=3, A=2, H=3, stochasticity=1.0)
        data = sample_trajectories(mdp, Policy.uniform(3, 3, 2), 5000, seed=3)
        bernstein = pvi(data, config=BonusConfig(style=BonusStyle.BERNSTEIN))
        hoeffding = pvi(data, config=BonusConfig(style=BonusStyle.HOEFFDING))
        # bernstein <= hoeffding wherever n_sa >= 4 iota
        enough = plugin_model(data).counts.n_sa >= 4 * BonusConfig().log_factor(3, 3, 2)
        self.assertTrue(enough.any())
        self.assertTrue(np.all(bernstein.bonus[enough] <= hoeffding.bonus[enough] + 1e-12))
        self.assertTrue(np.any(bernstein.bonus[enough] < hoeffding.bonus[enough]))

    def test_erm(self):
        mdp = random_mdp(2, S=3, A=2, H=3, stochasticity=1.0)
        report = erm_policy(sample_trajectories(mdp, Policy.uniform(3, 3, 2), 200, seed=0))
        np.testing.assert_array_equal(report.bonus, 0.0)
        self.assertEqual(report.constants["style"], "none")

    def test_config(self):
        with self.assertRaises(ValueError):
            BonusConfig(delta=0.0)
        with self.assertRaises(ValueError):
            BonusConfig(c_var=-1.0)
        with self.assertRaises(ValueError):
            BonusConfig(style="optimistic")


class TestAugmentedMdp(TestCase):
    def test_full_coverage(self):
        mdp = random_mdp(3, S=3, A=2, H=3, stochasticity=1.0)
        data = sample_trajectories(mdp, Policy.uniform(3, 3, 2), 2000, seed=0)
        augmented = augmented_mdp(mdp, data)
        self.assertEqual(validate_mdp(augmented.mdp), [])
        self.assertEqual(augmented.off_support_mass, 0.0)
        _, star = optimal_policy(mdp)
        _, star_aug = optimal_policy(augmented.mdp)
        self.assertAlmostEqual(star_aug.v, star.v, delta=1e-12)

    def test_partial_coverage(self):
        mdp = random_mdp(3, S=3, A=2, H=3, stochasticity=1.0)
        star, values = optimal_policy(mdp)
        behavior = Policy(np.where(star.pi > 0, 0.0, 1.0))
        augmented = augmented_mdp(mdp, sample_trajectories(mdp, behavior, 500, seed=0))
        self.assertEqual(augmented.dagger, 3)
        self.assertEqual(validate_mdp(augmented.mdp), [])
        self.assertGreater(augmented.off_support_mass, 0.0)
        self.assertAlmostEqual(augmented.off_support_mass, 3.0, delta=1e-9)
        _, aug_values = optimal_policy(augmented.mdp)
        self.assertLessEqual(aug_values.v, values.v + 1e-12)
        self.assertEqual(policy_value(augmented.mdp, Policy.uniform(3, 4, 2)).V[-1][3], 0.0)

    def test_shape_mismatch(self):
        mdp = random_mdp(3, S=3, A=2, H=3, stochasticity=1.0)
        other = random_mdp(3, S=4, A=2, H=3, stochasticity=1.0)
        data = sample_trajectories(other, Policy.uniform(3, 4, 2), 10, seed=0)
        with self.assertRaises(DimensionError):
            augmented_mdp(mdp, data)


class TestPolicyFiles(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = os.path.join(self.tmp.name, "policy.txt")

    def tearDown(self):
        self.tmp.cleanup()

    def test_write_read(self):
        policy, _ = optimal_policy(random_mdp(0, S=3, A=2, H=4, stochasticity=1.0))
        write_policy(policy, self.path)
        np.testing.assert_array_equal(read_policy(self.path).pi, policy.pi)

    def test_stochastic_policy(self):
        with self.assertRaises(ValueError):
            write_policy(Policy.uniform(2, 2, 2), self.path)

    def test_bad_row(self):
        with open(self.path, "w", encoding="utf-8") as f:
            f.write("1 2 2\n0 0 1\n0 1 2\n")
        with self.assertRaises(IndexRangeError) as ctx:
            read_policy(self.path)
        self.assertEqual(ctx.exception.line, 3)

    def test_empty_and_malformed_files(self):
        for text, line in (("", 1), ("\n\n", 1), ("1 2\n0 0 1\n", 1), ("1 1 2\n0 zero 1\n", 2)):
            with open(self.path, "w", encoding="utf-8") as f:
                f.write(text)
            with self.assertRaises(DatasetParseError) as ctx:
                read_policy(self.path)
            self.assertEqual(ctx.exception.line, line)
            if line == 1:
                self.assertIsInstance(ctx.exception, MalformedHeaderError)


@pytest.mark.slow
@pytest.mark.parametrize("style", [BonusStyle.HOEFFDING, BonusStyle.BERNSTEIN])
def test_pessimism_holds_with_probability_one_minus_delta(style):
    config = BonusConfig(style=style, delta=0.1)
    held = 0
    for seed in range(100):
        mdp = random_mdp(seed, S=3, A=2, H=3, stochasticity=1.0)
        data = sample_trajectories(mdp, Policy.uniform(3, 3, 2), 200, seed=seed)
        held += is_pessimistic(mdp, pvi(data, config=config))
    assert held >= 90


if __name__ == '__main__':
    unittest.main()
