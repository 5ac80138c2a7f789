# SPDX-License-Identifier: Apache-2.0

"""Console output and YAML helpers shared by the CLI and the library."""

import json
import sys
from importlib import resources

import jsonschema
import yaml

from offrl.errors import ConfigError
from offrl.settings import SETTINGS

VERBOSE = SETTINGS.verbose
SILENT = False

SCHEMAS = resources.files("offrl") / "schemas"


class Colors:
    """ANSI color codes."""

    HEADER = '\033[95m'
    OKBLUE = '\033[94m'
    OKGREEN = '\033[92m'
    WARNING = '\033[93m'
    FAIL = '\033[91m'
    ENDC = '\033[0m'
    BOLD = '\033[1m'


def parse_yaml(file_path):
    """Parse a YAML file and return the list of documents it holds.

    Args:
        file_path (str): path to the YAML file.

    Returns:
        list: one dictionary per document.
    """
    try:
        with open(file_path, "r", encoding="utf-8") as file:
            return list(yaml.safe_load_all(file))
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(f"could not parse YAML file {file_path}: {e}") from e


def load_schema(name):
    """The packaged JSON schema offrl/schemas/<name>_schema.json."""
    return json.loads((SCHEMAS / f"{name}_schema.json").read_text(encoding="utf-8"))


def validate_document(document, schema_name):
    """Validate one parsed document against the packaged <schema_name> schema.

    Raises:
        ConfigError: the document does not match the schema.
    """
    try:
        jsonschema.validate(document, load_schema(schema_name))
    except jsonschema.exceptions.ValidationError as ve:
        where = "/".join(str(p) for p in ve.absolute_path) or "<root>"
        raise ConfigError(f"{schema_name} document is NOT valid at {where}: {ve.message}") from ve


def set_verbosity(verbose=False, silent=False):
    global VERBOSE, SILENT
    VERBOSE = bool(verbose) or SETTINGS.verbose
    SILENT = bool(silent)


class Console:
    """Console output. Results go to stdout, diagnostics to stderr."""

    def verbose(msg):
        if VERBOSE:
            print(f"{Colors.OKBLUE}{msg}{Colors.ENDC}", file=sys.stderr)

    def print(msg=''):
        print(msg)

    def ok(msg):
        if not SILENT:
            print(f"{Colors.OKGREEN}{msg}{Colors.ENDC}", file=sys.stderr)

    def error(msg):
        Console.fail(msg)

    def fail(msg):
        print(f"{Colors.FAIL}Error: {msg}{Colors.ENDC}", file=sys.stderr)

    def warn(msg):
        print(f"{Colors.WARNING}Warning: {msg}{Colors.ENDC}", file=sys.stderr)

    def progress(count, total, status=''):
        """Draw a progress bar on stderr when verbose.

        Args:
            count (int): current count.
            total (int): total count.
            status (str): trailing status text.
        """
        if not VERBOSE or total <= 0:
            return
        bar_len = 40
        filled_len = int(round(bar_len * count / float(total)))
        percents = round(100.0 * count / float(total), 1)
        bar = '=' * filled_len + '-' * (bar_len - filled_len)
        sys.stderr.write('[%s] %s%s ...%s\r' % (bar, percents, '%', status))
        if count >= total:
            sys.stderr.write('\n')
        sys.stderr.flush()
