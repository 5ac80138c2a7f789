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

"""CLI command implementations for the offrl benchmark harness."""
import os
import traceback

from offrl.cli.common import Console, parse_yaml, set_verbosity
from offrl.data import sample_trajectories, write_dataset
from offrl.errors import ConfigError, UnknownFixtureError
from offrl.experiment import COLUMNS, COMMAND_KINDS, ExperimentConfig, fit_loglog, read_results, run
from offrl.fixtures import FIXTURE_HELP, FixtureFactory, FixtureKind, document_to_mdp, dump_mdp, read_mdp
from offrl.mdp import Policy, validate_mdp
from offrl.utils import parse_params

EXIT_CONFIG = 2
EXIT_RUNTIME = 3

EXPERIMENT_COMMANDS = tuple(COMMAND_KINDS)


# Root CLI class
class CLI:
    """Root CLI class that handles command routing and initialization."""

    def __init__(self, args):
        self.args = args
        set_verbosity(self.args.get('--verbose'), self.args.get('--silent'))

    def command(self):
        """Route to the appropriate command handler based on command line arguments.

        Returns:
            Command: An instance of the appropriate command handler class.
        """
        if self.args.get('validate'):
            return ValidateCmd(self.args)
        elif self.args.get('simulate'):
            return SimulateCmd(self.args)
        elif any(self.args.get(name) for name in EXPERIMENT_COMMANDS):
            return ExperimentCmd(self.args)
        elif self.args.get('fixtures'):
            return FixturesCmd(self.args)
        elif self.args.get('fit'):
            return FitCmd(self.args)
        else:
            raise Exception("Invalid command")


# Base class for all commands
class Command:
    """Base class that provides common functionality for all command implementations."""

    def __init__(self, args):
        self.args = args

    def _check_verbose(self):
        if self.verbose():
            Console.print(traceback.format_exc())

    def print(self, msg):
        Console.print(msg)

    def warn(self, msg):
        Console.warn(msg)

    def verbose(self):
        return bool(self.args.get('--verbose'))

    def silent(self):
        return bool(self.args.get('--silent'))

    def _int_option(self, name, default=None):
        value = self.args.get(name)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError as e:
            raise ConfigError(f"{name} must be an integer, got {value!r}") from e

    def OUT(self):
        return self.args.get('--out')

    def execute(self):
        """Run the dispatched handler and map failures to exit codes.

        Returns:
            int: 0 on success, 2 for configuration errors, 3 for runtime errors.
        """
        func = self.dispatch()
        try:
            rc = func()
        except ConfigError as e:
            self._check_verbose()
            Console.error(str(e))
            return EXIT_CONFIG
        except Exception as e:
            self._check_verbose()
            Console.error(f"{type(e).__name__}: {e}")
            return EXIT_RUNTIME
        if rc is None:
            return 0
        return rc if isinstance(rc, int) else EXIT_RUNTIME

    def dispatch(self):
        """Route to the command handler method.

        Returns:
            function: The command handler method to execute.
        """
        return getattr(self, self.name().replace('-', '_'))

    def name(self):
        raise NotImplementedError


# validate command
#  offrl validate YAML_FILE [options]
class ValidateCmd(Command):
    """Validates experiment configurations and MDP documents against their schemas."""

    def YAML_FILE(self):
        return self.args['YAML_FILE']

    def name(self):
        return "validate"

    def __validate_document(self, document):
        if not isinstance(document, dict):
            raise ConfigError("document must be a mapping")
        if 'experiment' in document:
            ExperimentConfig.from_document(document)
        elif 'P' in document:
            fixture = document_to_mdp(document)
            violations = validate_mdp(fixture.mdp)
            if violations:
                raise ConfigError("MDP document is NOT valid:\n " + "\n ".join(violations))
        else:
            raise ConfigError("unknown document: expected an experiment or an MDP")

    def validate(self):
        documents = [d for d in parse_yaml(self.YAML_FILE()) if d is not None]
        if not documents:
            raise ConfigError(f"{self.YAML_FILE()} holds no documents")
        for document in documents:
            if self.verbose():
                Console.verbose(f"validating {sorted(document) if isinstance(document, dict) else document}")
            self.__validate_document(document)
        if not self.silent():
            Console.ok("YAML file is valid.")
        return 0


# simulate command
#  offrl simulate FIXTURE_FILE --n=<n> [options]
class SimulateCmd(Command):
    """Rolls out the behavior policy of a fixture document and writes the dataset."""

    def FIXTURE_FILE(self):
        return self.args['FIXTURE_FILE']

    def name(self):
        return "simulate"

    def simulate(self):
        n = self._int_option('--n')
        if n is None or n < 1:
            raise ConfigError(f"--n must be a positive integer, got {self.args.get('--n')!r}")
        fixture = read_mdp(self.FIXTURE_FILE())
        mdp = fixture.mdp
        behavior = fixture.policies.get("behavior") or Policy.uniform(mdp.H, mdp.S, mdp.A)
        dataset = sample_trajectories(mdp, behavior, n, self._int_option('--seed', 0))
        out = self.OUT() or os.path.splitext(self.FIXTURE_FILE())[0] + ".dataset"
        write_dataset(dataset, out)
        if not self.silent():
            Console.ok(f"wrote {n} trajectories to {out}")
        return 0


# ope, opl and low-adaptive commands
#  offrl ope --config=<path> [options]
class ExperimentCmd(Command):
    """Runs an experiment configuration and writes or prints its result rows."""

    def CONFIG(self):
        return self.args['--config']

    def name(self):
        for name in EXPERIMENT_COMMANDS:
            if self.args.get(name):
                return name
        raise Exception("Invalid subcommand")

    def dispatch(self):
        return self.experiment

    def config(self):
        config = ExperimentConfig.load(self.CONFIG()).with_overrides(
            seed=self._int_option('--seed'), reps=self._int_option('--reps'), output=self.OUT())
        if config.experiment not in COMMAND_KINDS[self.name()]:
            kinds = ", ".join(COMMAND_KINDS[self.name()])
            raise ConfigError(f"`{self.name()}` runs {kinds}, not {config.experiment}")
        return config

    def experiment(self):
        config = self.config()
        rows = run(config)
        if not config.output:
            self.print("\t".join(COLUMNS))
            for row in rows:
                self.print(row.line())
        return 0


# fixtures command group
#  offrl fixtures list [options]
#  offrl fixtures emit NAME [PARAM...] [options]
class FixturesCmd(Command):
    """Lists the named fixtures or emits one as an MDP document."""

    def NAME(self):
        return self.args['NAME']

    def PARAMS(self):
        return self.args.get('PARAM') or []

    def name(self):
        return "fixtures"

    def dispatch(self):
        if self.args.get('list'):
            return self.list
        elif self.args.get('emit'):
            return self.emit
        else:
            raise Exception("Invalid subcommand")

    def list(self):
        for kind in FixtureKind:
            self.print(f"{kind}\t{FIXTURE_HELP[kind]}")
        return 0

    def emit(self):
        if self.NAME() not in {str(kind) for kind in FixtureKind}:
            raise UnknownFixtureError(f"unknown fixture: {self.NAME()} (known: {', '.join(FixtureKind)})")
        try:
            params = parse_params(self.PARAMS())
            fixture = FixtureFactory.build(self.NAME(), params)
        except ValueError as e:
            raise ConfigError(f"invalid parameters for {self.NAME()}: {e}") from e
        violations = validate_mdp(fixture.mdp)
        if violations:
            raise RuntimeError("fixture failed validation: " + "; ".join(violations))
        text = dump_mdp(fixture)
        if self.OUT():
            with open(self.OUT(), "w", encoding="utf-8") as f:
                f.write(text)
            if not self.silent():
                Console.ok(f"wrote {self.NAME()} to {self.OUT()}")
        else:
            self.print(text.rstrip("\n"))
        return 0


# fit command
#  offrl fit RESULT_FILE --x=<axis> --metric=<name> [--method=<m>] [--semilog] [options]
class FitCmd(Command):
    """Fits log(metric) against log(n) or log(H) over the rows of a result file."""

    def RESULT_FILE(self):
        return self.args['RESULT_FILE']

    def name(self):
        return "fit"

    def fit(self):
        x = self.args['--x']
        if x not in ("n", "H"):
            raise ConfigError(f"--x must be n or H, got {x!r}")
        rows = read_results(self.RESULT_FILE())
        result = fit_loglog(rows, x, self.args['--metric'], method=self.args.get('--method'),
                            semilog=bool(self.args.get('--semilog')))
        self.print("slope\tintercept\tr2\tpoints\texcluded")
        self.print(f"{result.slope!r}\t{result.intercept!r}\t{result.r2!r}\t{result.points}\t{result.excluded}")
        return 0
