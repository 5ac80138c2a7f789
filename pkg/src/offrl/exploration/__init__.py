# SPDX-License-Identifier: Apache-2.0

from .apeve import ApeveConfig, PolicySet, apeve, stage_schedule
from .environment import Environment, MdpEnvironment
from .harness import Algorithm, RegretSummary, certificate_check, regret_harness
from .larfe import LarfeResult, larfe
from .ledger import AdaptivityLedger, read_log

__all__ = [
    "AdaptivityLedger",
    "Algorithm",
    "ApeveConfig",
    "Environment",
    "LarfeResult",
    "MdpEnvironment",
    "PolicySet",
    "RegretSummary",
    "apeve",
    "certificate_check",
    "larfe",
    "read_log",
    "regret_harness",
    "stage_schedule",
]
