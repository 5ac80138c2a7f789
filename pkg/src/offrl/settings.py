# SPDX-License-Identifier: Apache-2.0

"""Process-level settings read from the environment (and a local .env file)."""

import os
from dataclasses import dataclass

from dotenv import load_dotenv

load_dotenv()


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw == "":
        return default
    return int(raw)


def _env_flag(name: str) -> bool:
    return os.getenv(name, "").lower() in ("1", "true", "yes")


@dataclass(frozen=True)
class Settings:
    """
    Knobs shared by every module.

    Attributes:
        n_jobs (int): joblib workers used for replications.
        enum_cap (int): largest policy count enumerated by exact oracles.
        policy_cap (int): largest explicit policy set handled by exploration.
        verbose (bool): mirror of --verbose for library code.
    """
    n_jobs: int = 1
    enum_cap: int = 4096
    policy_cap: int = 1024
    verbose: bool = False

    @classmethod
    def from_env(cls) -> "Settings":
        return cls(
            n_jobs=_env_int("OFFRL_N_JOBS", 1),
            enum_cap=_env_int("OFFRL_ENUM_CAP", 4096),
            policy_cap=_env_int("OFFRL_POLICY_CAP", 1024),
            verbose=_env_flag("OFFRL_VERBOSE"),
        )


SETTINGS = Settings.from_env()
