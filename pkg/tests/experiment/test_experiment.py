#!/usr/bin/env python3

# SPDX-License-Identifier: Apache-2.0

import math
import os
import tempfile
import unittest
from dataclasses import replace
from unittest import TestCase

import pytest

import offrl.experiment as experiment
from offrl.cli.common import parse_yaml
from offrl.errors import ConfigError, OffrlError
from offrl.experiment import (
    COLUMNS,
    ExperimentConfig,
    ExperimentKind,
    ResultRow,
    RowSink,
    fit_loglog,
    read_results,
    run,
)

YAMLS = os.path.join(os.path.dirname(__file__), "../yamls")


def config_path(name):
    return os.path.join(YAMLS, "experiments", name)


def rows_by(rows, method=None, metric=None):
    return [r for r in rows if (method is None or r.method == method) and (metric is None or r.metric == metric)]


class TestExperimentConfig(TestCase):
    def test_load(self):
        config = ExperimentConfig.load(config_path("ope_scaling.yaml"))
        self.assertEqual(config.experiment, ExperimentKind.OPE_SCALING)
        self.assertEqual(config.fixture, "ring")
        self.assertEqual(config.params["eta"], "1/3")
        self.assertEqual(config.grid, {"n": [50, 100, 200]})
        self.assertEqual(config.methods, ("is", "tmis"))

    def test_single_replication_is_rejected(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.load(config_path("invalid_reps.yaml"))
        config = ExperimentConfig.load(config_path("ope_scaling.yaml"))
        with self.assertRaises(ConfigError):
            config.with_overrides(reps=1)

    def test_method_must_fit_the_experiment(self):
        with self.assertRaises(ConfigError):
            ExperimentConfig.load(config_path("invalid_method.yaml"))

    def test_fixture_file_with_horizon_grid(self):
        document = parse_yaml(config_path("ope_scaling.yaml"))[0]
        document["fixture"] = {"file": os.path.join(YAMLS, "fixtures", "two_state.yaml")}
        document["grid"] = {"H": [2, 3]}
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_document(document)

    def test_empty_grid_axis(self):
        document = parse_yaml(config_path("ope_scaling.yaml"))[0]
        document["grid"] = {"n": []}
        with self.assertRaises(ConfigError):
            ExperimentConfig.from_document(document)

    def test_overrides(self):
        config = ExperimentConfig.load(config_path("ope_scaling.yaml"))
        other = config.with_overrides(seed=9, reps=5, output="out.tsv")
        self.assertEqual((other.seed, other.reps, other.output), (9, 5, "out.tsv"))
        self.assertNotEqual(other.sha256(), config.sha256())
        self.assertEqual(config.with_overrides().sha256(), config.sha256())


class TestRun(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_rerun_is_identical(self):
        config = ExperimentConfig.load(config_path("ope_scaling.yaml"))
        self.assertEqual(run(config), run(config))

    def test_seed_changes_the_rows(self):
        config = ExperimentConfig.load(config_path("ope_scaling.yaml"))
        self.assertNotEqual(run(config), run(config.with_overrides(seed=2)))

    def test_ope_scaling(self):
        rows = run(ExperimentConfig.load(config_path("ope_scaling.yaml")))
        self.assertEqual(len(rows), 3 * 2 * 2)
        self.assertEqual({r.metric for r in rows}, {"mse", "rel_rmse"})
        self.assertEqual([r.n for r in rows_by(rows, "is", "mse")], [50, 100, 200])
        self.assertTrue(all(r.H == 3 and r.seed == 1 for r in rows))

    def test_output_file(self):
        path = os.path.join(self.tmp.name, "results.tsv")
        config = ExperimentConfig.load(config_path("ope_scaling.yaml")).with_overrides(output=path)
        rows = run(config)
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        self.assertIn(f"# config_sha256: {config.sha256()}", text)
        self.assertIn("# stage_schedule: ", text)
        self.assertIn("\t".join(COLUMNS) + "\n", text)
        self.assertEqual(read_results(path), rows)

    def test_efficiency_oracles(self):
        rows = run(ExperimentConfig.load(config_path("ope_efficiency.yaml")))
        cr = rows_by(rows, "cr", "n_mse")[0].value
        fqe_oracle = rows_by(rows, "fqe-oracle", "n_mse")[0].value
        self.assertAlmostEqual(fqe_oracle, cr, delta=1e-8 * max(1.0, cr))
        self.assertGreaterEqual(rows_by(rows, "smis-oracle", "n_mse")[0].value, cr - 1e-12)
        self.assertEqual(len(rows_by(rows, "tmis", "n_mse")), 1)

    def test_curse_of_horizon(self):
        rows = run(ExperimentConfig.load(config_path("curse_of_horizon.yaml")))
        oracle = rows_by(rows, "oracle", "ratio_variance")
        self.assertEqual([r.H for r in oracle], [2, 3, 4])
        for row in oracle:
            self.assertAlmostEqual(row.value, 1.5 ** row.H - 1.0, delta=1e-9)
        fit = fit_loglog(oracle, "H", "ratio_variance", semilog=True)
        self.assertGreater(fit.slope, math.log(1.5) * 0.9)

    def test_opl_pessimism(self):
        rows = run(ExperimentConfig.load(config_path("opl_pessimism.yaml")))
        self.assertEqual({r.method for r in rows}, {"bernstein", "hoeffding", "erm"})
        for row in rows_by(rows, metric="suboptimality"):
            self.assertGreaterEqual(row.value, -1e-12)
            self.assertLessEqual(row.value, 3.0)
        for row in rows_by(rows, "hoeffding", "pessimism_rate"):
            self.assertEqual(row.value, 1.0)

    def test_opl_linear(self):
        rows = run(ExperimentConfig.load(config_path("opl_linear.yaml")))
        self.assertEqual({r.method for r in rows}, {"pfvi", "vw-pfvi"})
        self.assertEqual(len(rows_by(rows, metric="lcb_gap")), 2)

    def test_low_adaptive(self):
        rows = run(ExperimentConfig.load(config_path("low_adaptive.yaml")))
        for row in rows_by(rows, "optimal", "regret"):
            self.assertAlmostEqual(row.value, 0.0, delta=1e-12)
        self.assertEqual([r.n for r in rows_by(rows, "apeve", "regret")], [16, 64])
        for row in rows_by(rows, "apeve", "pi_star_survival"):
            self.assertEqual(row.value, 1.0)
        self.assertEqual(rows_by(rows, "larfe", "batch_count")[0].value, 2 * 2)
        self.assertEqual(rows_by(rows, "larfe", "certificate_rate")[0].value, 1.0)

    def test_failures_become_error_lines(self):
        config = ExperimentConfig.load(config_path("ope_scaling.yaml"))
        sink = RowSink(config)
        sink.add("is", 10, 3, "mse", float("nan"))
        sink.add("is", 10, 3, "mse", 0.5)
        self.assertEqual(len(sink.rows), 1)
        self.assertEqual(len(sink.errors), 1)

    def test_linear_experiment_on_a_plain_fixture(self):
        config = ExperimentConfig.load(config_path("opl_linear.yaml"))
        config = replace(config, fixture="random", params={"S": 2, "A": 2, "H": 2})
        rows = run(config)
        self.assertEqual({r.method for r in rows}, {"pfvi", "vw-pfvi"})


class TestFitLoglog(TestCase):
    def _rows(self, values, metric="mse", method="tmis"):
        return [ResultRow("ope-scaling", method, n, 3, metric, v, 0.0, 0) for n, v in values]

    def test_quadratic(self):
        fit = fit_loglog(self._rows([(n, float(n) ** 2) for n in (10, 20, 40, 80)]), "n", "mse")
        self.assertAlmostEqual(fit.slope, 2.0, delta=1e-12)
        self.assertAlmostEqual(fit.r2, 1.0, delta=1e-12)
        self.assertEqual((fit.points, fit.excluded), (4, 0))

    def test_inverse(self):
        fit = fit_loglog(self._rows([(n, 3.0 / n) for n in (100, 1000, 10000)]), "n", "mse")
        self.assertAlmostEqual(fit.slope, -1.0, delta=1e-12)
        self.assertAlmostEqual(fit.intercept, math.log(3.0), delta=1e-9)

    def test_exponential(self):
        rows = [ResultRow("curse-of-horizon", "is", 100, H, "ratio_variance", 2.0 ** H, 0.0, 0)
                for H in (2, 4, 6, 8)]
        fit = fit_loglog(rows, "H", "ratio_variance", semilog=True)
        self.assertAlmostEqual(fit.slope, math.log(2.0), delta=1e-12)

    def test_non_positive_points_are_excluded(self):
        rows = self._rows([(10, 0.0), (20, 4.0), (40, 16.0), (80, 64.0)])
        fit = fit_loglog(rows, "n", "mse")
        self.assertEqual(fit.excluded, 1)
        self.assertAlmostEqual(fit.slope, 2.0, delta=1e-12)

    def test_method_filter(self):
        rows = self._rows([(10, 1.0), (20, 2.0), (40, 4.0)]) + self._rows([(10, 5.0)], method="is")
        self.assertEqual(fit_loglog(rows, "n", "mse", method="tmis").points, 3)

    def test_too_few_points(self):
        with self.assertRaises(ValueError):
            fit_loglog(self._rows([(10, 1.0), (20, 2.0)]), "n", "mse")

    def test_axis(self):
        with self.assertRaises(ValueError):
            fit_loglog(self._rows([(10, 1.0), (20, 2.0), (40, 4.0)]), "T", "mse")


def test_failing_cell_does_not_stop_the_grid(mocker, tmp_path):
    real = experiment.ope_summary

    def singular_at_100(document, method, n, *args):
        if n == 100 and method == "is":
            raise ValueError("singular design")
        return real(document, method, n, *args)

    mocker.patch("offrl.experiment.ope_summary", side_effect=singular_at_100)
    path = str(tmp_path / "results.tsv")
    rows = run(ExperimentConfig.load(config_path("ope_scaling.yaml")).with_overrides(output=path))
    assert len(rows) == 3 * 2 * 2 - 2
    assert [r.n for r in rows_by(rows, "is", "mse")] == [50, 200]
    assert [r.n for r in rows_by(rows, "tmis", "mse")] == [50, 100, 200]
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    assert "# error: is\tn=100\tH=3\tValueError: singular design\n" in text


def test_failing_fixture_skips_only_its_horizon(mocker):
    real = experiment.load_fixture

    def broken_at_3(config, H=None):
        if H == 3:
            raise OffrlError("fixture H=3 unavailable")
        return real(config, H)

    mocker.patch("offrl.experiment.load_fixture", side_effect=broken_at_3)
    rows = run(ExperimentConfig.load(config_path("curse_of_horizon.yaml")))
    assert [r.H for r in rows_by(rows, "oracle", "ratio_variance")] == [2, 4]


def test_config_errors_still_abort(mocker):
    mocker.patch("offrl.experiment.ope_summary", side_effect=ConfigError("bad bonus constant"))
    with pytest.raises(ConfigError):
        run(ExperimentConfig.load(config_path("ope_scaling.yaml")))


if __name__ == '__main__':
    unittest.main()
