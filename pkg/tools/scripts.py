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

#!/usr/bin/env python3

import glob
import os
import re
import subprocess
import sys

YAML_ROOT = os.path.join("tests", "yamls")

# configs that exist to be rejected
EXPECTED_INVALID = re.compile(r"^invalid_.*\.yaml$")


def lint():
    try:
        subprocess.run(["black", "src", "tests", "tools"], check=True)
        subprocess.run(["ruff", "check", "src", "tests", "tools"], check=True)
    except subprocess.CalledProcessError:
        sys.exit(1)


def check_schemas():
    """Run `offrl validate` on every YAML under tests/yamls and print a summary table."""
    fail = 0
    print("|Filename|Expected|Result|")
    print("|---|---|---|")
    for path in sorted(glob.glob(os.path.join(YAML_ROOT, "**", "*.yaml"), recursive=True)):
        expect_valid = not EXPECTED_INVALID.match(os.path.basename(path))
        rc = subprocess.run(["offrl", "validate", path, "--silent"]).returncode
        ok = (rc == 0) == expect_valid
        if not ok:
            fail += 1
        print(f"|{path}|{'valid' if expect_valid else 'invalid'}|{'PASS ✅' if ok else 'FAIL ❌'}|")
    sys.exit(1 if fail else 0)


def commit():
    if len(sys.argv) < 2:
        print('Usage: uv run commit "<commit message>"')
        sys.exit(1)

    commit_msg = sys.argv[1]
    if not re.match(r'^(feat|fix|docs|style|refactor|perf|test|chore)(\([a-z-]+\))?: .+', commit_msg):
        print('Error: Commit message must follow the conventional commits format:')
        print('<type>(<scope>): <subject>')
        print('\nTypes: feat, fix, docs, style, refactor, perf, test, chore')
        sys.exit(1)

    print("📦 Adding files...")
    subprocess.run(["git", "add", "--all"], check=True)

    print("📝 Committing changes...")
    subprocess.run(["git", "commit", "-s", "-m", commit_msg], check=True)

    print("Successfully committed changes")


if __name__ == '__main__':
    commit()
