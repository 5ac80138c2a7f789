# SPDX-License-Identifier: Apache-2.0

from .estimator import EstimateReport, Estimator
from .estimator_factory import EstimatorFactory, Method
from .harness import MseSummary, mse_harness
from .importance_sampling import cumulative_ratios, is_estimate, step_is_estimate
from .marginalized import smis_estimate, tmis_estimate

__all__ = [
    "EstimateReport",
    "Estimator",
    "EstimatorFactory",
    "Method",
    "MseSummary",
    "cumulative_ratios",
    "is_estimate",
    "mse_harness",
    "smis_estimate",
    "step_is_estimate",
    "tmis_estimate",
]
