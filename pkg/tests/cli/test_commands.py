#!/usr/bin/env python3

# Copyright © 2025 IBM
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import os
import tempfile
import unittest
from unittest import TestCase

from offrl.cli.commands import CLI
from offrl.cli.common import Console, load_schema
from offrl.data import read_dataset
from offrl.experiment import ResultRow, read_results
from offrl.fixtures import read_mdp


def default_args():
    return {
        '--config': None,
        '--help': False,
        '--method': None,
        '--metric': None,
        '--n': None,
        '--out': None,
        '--reps': None,
        '--seed': None,
        '--semilog': False,
        '--silent': False,
        '--verbose': False,
        '--version': False,
        '--x': None,
        'FIXTURE_FILE': None,
        'NAME': None,
        'PARAM': [],
        'RESULT_FILE': None,
        'YAML_FILE': None,
        'emit': False,
        'fit': False,
        'fixtures': False,
        'list': False,
        'low-adaptive': False,
        'ope': False,
        'opl': False,
        'simulate': False,
        'validate': False,
    }


class TestCommand(TestCase):
    TEST_FIXTURES_ROOT_PATH = os.path.join(os.path.dirname(__file__), "..")

    def get_fixture(self, file_name):
        return os.path.join(self.TEST_FIXTURES_ROOT_PATH, file_name)

    def setUp(self):
        self.args = default_args()
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.args = {}
        self.tmp.cleanup()

    def out_path(self, name):
        return os.path.join(self.tmp.name, name)


# `validate` command tests
class ValidateCommandTest(TestCommand):
    def setUp(self):
        super().setUp()
        self.args['validate'] = True

    def test_validate__experiment(self):
        self.args['YAML_FILE'] = self.get_fixture('yamls/experiments/ope_scaling.yaml')
        command = CLI(self.args).command()
        self.assertTrue(command.name() == 'validate')
        self.assertTrue(command.execute() == 0)

    def test_validate__mdp(self):
        self.args['YAML_FILE'] = self.get_fixture('yamls/fixtures/two_state.yaml')
        self.assertTrue(CLI(self.args).command().execute() == 0)

    def test_validate__invalid_reps(self):
        self.args['YAML_FILE'] = self.get_fixture('yamls/experiments/invalid_reps.yaml')
        self.assertTrue(CLI(self.args).command().execute() == 2)

    def test_validate__bad_kernel(self):
        path = self.out_path('bad.yaml')
        with open(self.get_fixture('yamls/fixtures/two_state.yaml'), 'r', encoding='utf-8') as f:
            text = f.read()
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text.replace('d1: [1.0, 0.0]', 'd1: [0.7, 0.0]'))
        self.args['YAML_FILE'] = path
        self.assertTrue(CLI(self.args).command().execute() == 2)

    def test_validate__missing_file(self):
        self.args['YAML_FILE'] = self.out_path('missing.yaml')
        self.assertTrue(CLI(self.args).command().execute() == 2)


# `simulate` command tests
class SimulateCommandTest(TestCommand):
    def setUp(self):
        super().setUp()
        self.args['simulate'] = True
        self.args['FIXTURE_FILE'] = self.get_fixture('yamls/fixtures/two_state.yaml')

    def test_simulate(self):
        out = self.out_path('two_state.dataset')
        self.args['--n'] = '25'
        self.args['--seed'] = '4'
        self.args['--out'] = out
        command = CLI(self.args).command()
        self.assertTrue(command.name() == 'simulate')
        self.assertTrue(command.execute() == 0)
        dataset = read_dataset(out)
        self.assertEqual((dataset.n, dataset.H, dataset.S, dataset.A), (25, 2, 2, 2))
        self.assertEqual(dataset.meta.seed, 4)

    def test_simulate__bad_n(self):
        self.args['--n'] = '0'
        self.assertTrue(CLI(self.args).command().execute() == 2)
        self.args['--n'] = 'many'
        self.assertTrue(CLI(self.args).command().execute() == 2)


# `ope`, `opl` and `low-adaptive` command tests
class ExperimentCommandTest(TestCommand):
    def test_ope(self):
        out = self.out_path('results.tsv')
        self.args['ope'] = True
        self.args['--config'] = self.get_fixture('yamls/experiments/ope_scaling.yaml')
        self.args['--out'] = out
        self.args['--reps'] = '2'
        command = CLI(self.args).command()
        self.assertTrue(command.name() == 'ope')
        self.assertTrue(command.execute() == 0)
        rows = read_results(out)
        self.assertEqual({row.method for row in rows}, {'is', 'tmis'})

    def test_wrong_subcommand(self):
        self.args['opl'] = True
        self.args['--config'] = self.get_fixture('yamls/experiments/ope_scaling.yaml')
        self.assertTrue(CLI(self.args).command().execute() == 2)

    def test_low_adaptive(self):
        out = self.out_path('regret.tsv')
        self.args['low-adaptive'] = True
        self.args['--config'] = self.get_fixture('yamls/experiments/low_adaptive.yaml')
        self.args['--out'] = out
        command = CLI(self.args).command()
        self.assertTrue(command.name() == 'low-adaptive')
        self.assertTrue(command.execute() == 0)
        self.assertIn('regret', {row.metric for row in read_results(out)})

    def test_bad_reps(self):
        self.args['ope'] = True
        self.args['--config'] = self.get_fixture('yamls/experiments/ope_scaling.yaml')
        self.args['--reps'] = '1'
        self.assertTrue(CLI(self.args).command().execute() == 2)


# `fixtures` command tests
class FixturesCommandTest(TestCommand):
    def setUp(self):
        super().setUp()
        self.args['fixtures'] = True

    def test_emit(self):
        out = self.out_path('ring.yaml')
        self.args['emit'] = True
        self.args['NAME'] = 'ring'
        self.args['PARAM'] = ['eta=1/3', 'n_states=5', 'H=6']
        self.args['--out'] = out
        self.assertTrue(CLI(self.args).command().execute() == 0)
        document = read_mdp(out)
        self.assertEqual(document.mdp.H, 6)
        self.assertAlmostEqual(document.manifest['A_eta'], 1.5, delta=1e-12)
        self.assertAlmostEqual(document.manifest['ratio_variance'], 1.5 ** 6 - 1.0, delta=1e-9)

    def test_emit__unknown(self):
        self.args['emit'] = True
        self.args['NAME'] = 'donut'
        self.assertTrue(CLI(self.args).command().execute() == 2)

    def test_emit__bad_param(self):
        self.args['emit'] = True
        self.args['NAME'] = 'ring'
        self.args['PARAM'] = ['eta=lots']
        self.assertTrue(CLI(self.args).command().execute() == 2)
        self.args['PARAM'] = ['eta']
        self.assertTrue(CLI(self.args).command().execute() == 2)


# `fit` command tests
class FitCommandTest(TestCommand):
    def setUp(self):
        super().setUp()
        self.args['fit'] = True
        self.args['RESULT_FILE'] = self.out_path('results.tsv')
        self.args['--x'] = 'n'
        self.args['--metric'] = 'mse'
        with open(self.args['RESULT_FILE'], 'w', encoding='utf-8') as f:
            f.write('# experiment: ope-scaling\n')
            for n in (100, 200, 400, 800):
                f.write(ResultRow('ope-scaling', 'tmis', n, 3, 'mse', 1.0 / n, 0.0, 0).line() + '\n')

    def test_fit(self):
        command = CLI(self.args).command()
        self.assertTrue(command.name() == 'fit')
        self.assertTrue(command.execute() == 0)

    def test_fit__bad_axis(self):
        self.args['--x'] = 'T'
        self.assertTrue(CLI(self.args).command().execute() == 2)

    def test_fit__too_few_points(self):
        self.args['--method'] = 'is'
        self.assertTrue(CLI(self.args).command().execute() == 3)


def test_fixtures_list(mocker):
    printed = mocker.patch.object(Console, 'print')
    args = default_args()
    args['fixtures'] = True
    args['list'] = True
    assert CLI(args).command().execute() == 0
    names = [call.args[0].split('\t')[0] for call in printed.call_args_list]
    assert names == ['ring', 'sparse', 'random', 'det', 'fastmix', 'partial', 'linear']


def test_fit_output(mocker, tmp_path):
    path = tmp_path / 'results.tsv'
    path.write_text(''.join(ResultRow('ope-scaling', 'is', n, 3, 'mse', float(n) ** 2, 0.0, 0).line() + '\n'
                            for n in (10, 20, 40)))
    printed = mocker.patch.object(Console, 'print')
    args = default_args()
    args.update({'fit': True, 'RESULT_FILE': str(path), '--x': 'n', '--metric': 'mse'})
    assert CLI(args).command().execute() == 0
    slope = float(printed.call_args_list[1].args[0].split('\t')[0])
    assert abs(slope - 2.0) < 1e-12


def test_schemas_ship_with_the_package(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    assert load_schema('experiment')['title'] == 'offrl Experiment'
    assert load_schema('mdp')['title'] == 'offrl MDP'
    args = default_args()
    fixture = os.path.join(os.path.dirname(os.path.abspath(__file__)), '..', 'yamls', 'fixtures', 'two_state.yaml')
    args.update({'validate': True, 'YAML_FILE': fixture})
    assert CLI(args).command().execute() == 0


def test_emit_to_stdout(mocker):
    printed = mocker.patch.object(Console, 'print')
    args = default_args()
    args.update({'fixtures': True, 'emit': True, 'NAME': 'det', 'PARAM': ['S=2', 'A=2', 'H=2']})
    assert CLI(args).command().execute() == 0
    assert printed.call_args_list[0].args[0].startswith('S: 2\nA: 2\nH: 2\n')


if __name__ == '__main__':
    unittest.main()
