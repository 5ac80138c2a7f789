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

"""offrl

Usage:
  offrl simulate FIXTURE_FILE --n=<n> [options]
  offrl ope --config=<path> [options]
  offrl opl --config=<path> [options]
  offrl low-adaptive --config=<path> [options]
  offrl fixtures list [options]
  offrl fixtures emit NAME [PARAM...] [options]
  offrl fit RESULT_FILE --x=<axis> --metric=<name> [--method=<m>] [--semilog] [options]
  offrl validate YAML_FILE [options]

  offrl (-h | --help)
  offrl (-v | --version)

Options:
  --config=<path>        Experiment configuration YAML.
  --seed=<u64>           Root seed, overrides the configuration.
  --out=<path>           Output file, overrides the configuration.
  --reps=<k>             Replications, overrides the configuration.
  --n=<n>                Number of trajectories to simulate.
  --x=<axis>             Fit axis, n or H.
  --metric=<name>        Metric to fit, e.g. mse.
  --method=<m>           Only fit rows of this method.
  --semilog              Fit log(value) against x instead of log(x).

  --verbose              Show all output.
  --silent               Show no additional output on success, e.g., no OK or Success etc

  -h --help              Show this screen.
  -v --version           Show version.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

import sys

from docopt import docopt

from offrl.cli.common import Console
from offrl.errors import ConfigError

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def __execute(command):
    try:
        rc = command.execute()
        if rc != 0:
            Console.error(f"executing command: {rc}")
        return rc
    except ConfigError as e:
        Console.error(str(e))
        return EXIT_CONFIG
    except Exception as e:
        Console.error(str(e))
        return EXIT_RUNTIME


def __run_cli():
    from offrl import __version__
    from offrl.cli.commands import CLI
    args = docopt(__doc__, version=f'offrl CLI v{__version__}')
    command = CLI(args).command()
    return __execute(command)


if __name__ == '__main__':
    sys.exit(__run_cli())
