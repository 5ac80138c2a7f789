#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

import numpy as np

from offrl.data import Dataset
from offrl.estimators.estimator import EstimateReport, Estimator
from offrl.mdp import Policy


def cumulative_ratios(dataset: Dataset, target: Policy, behavior: Policy) -> np.ndarray:
    """(n, H) running products rho_{1:t} of the per-step ratios."""
    return np.cumprod(ImportanceSampling(target, behavior).action_ratios(dataset), axis=1)


class ImportanceSampling(Estimator):
    """Trajectory-wise importance sampling: mean of rho_{1:H} times the return."""
    method = "is"

    def estimate(self, dataset: Dataset) -> EstimateReport:
        self.check(dataset)
        rho = np.prod(self.action_ratios(dataset), axis=1)
        value = np.mean(rho * dataset.rewards.sum(axis=1))
        return self.report(value, dataset.H, max_cumulative_ratio=float(rho.max()),
                           ratio_variance=float(rho.var()), **self.count_diagnostics(dataset))


class StepImportanceSampling(Estimator):
    """Per-decision importance sampling: reward at t weighted by rho_{1:t}."""
    method = "step-is"

    def estimate(self, dataset: Dataset) -> EstimateReport:
        self.check(dataset)
        rho = np.cumprod(self.action_ratios(dataset), axis=1)
        value = np.mean(np.sum(rho * dataset.rewards, axis=1))
        return self.report(value, dataset.H, max_cumulative_ratio=float(rho.max()),
                           **self.count_diagnostics(dataset))


def is_estimate(dataset: Dataset, target: Policy, behavior: Policy) -> EstimateReport:
    return ImportanceSampling(target, behavior).estimate(dataset)


def step_is_estimate(dataset: Dataset, target: Policy, behavior: Policy) -> EstimateReport:
    return StepImportanceSampling(target, behavior).estimate(dataset)
