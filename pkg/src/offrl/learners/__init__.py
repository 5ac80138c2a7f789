# SPDX-License-Identifier: Apache-2.0

from .linear import LinearBonusConfig, pfvi, vw_pfvi
from .model import AugmentedMDP, PluginModel, augmented_mdp, plugin_model
from .pessimism import BonusConfig, BonusStyle, LearnedPolicyReport, erm_policy, pvi

__all__ = [
    "AugmentedMDP",
    "BonusConfig",
    "BonusStyle",
    "LearnedPolicyReport",
    "LinearBonusConfig",
    "PluginModel",
    "augmented_mdp",
    "erm_policy",
    "pfvi",
    "plugin_model",
    "pvi",
    "vw_pfvi",
]
