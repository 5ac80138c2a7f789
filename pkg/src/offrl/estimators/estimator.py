#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

from abc import abstractmethod
from dataclasses import dataclass, field

import numpy as np

from offrl.data import Dataset, counts
from offrl.errors import DimensionError, SupportError
from offrl.mdp import Policy


def min_positive(table: np.ndarray) -> int:
    positive = table[table > 0]
    return int(positive.min()) if positive.size else 0


@dataclass
class EstimateReport:
    """
    Result of one estimator run.

    Attributes:
        estimate (float): the point estimate (never clipped).
        method (str): estimator tag.
        diagnostics (dict): min_positive_count, zero_count_cells, max_cumulative_ratio
            (ratio-based estimators), out_of_range and estimator-specific entries.
    """
    estimate: float
    method: str
    diagnostics: dict = field(default_factory=dict)


class Estimator:
    """
    Abstract base class for off-policy value estimators.
    """
    method = None
    needs_behavior = True

    def __init__(self, target: Policy, behavior: Policy | None = None) -> None:
        """
        Args:
            target (Policy): the policy to evaluate.
            behavior (Policy): the logging policy; ignored by behavior-agnostic estimators.
        """
        if self.needs_behavior and behavior is None:
            raise ValueError(f"{self.method} needs the behavior policy")
        self.target = target
        self.behavior = behavior

    def check(self, dataset: Dataset):
        if dataset.n == 0:
            raise ValueError("estimators need at least one trajectory")
        shape = (dataset.H, dataset.S, dataset.A)
        for policy in (self.target, self.behavior):
            if policy is not None and policy.pi.shape != shape:
                raise DimensionError(f"policy shape {policy.pi.shape} does not match dataset {shape}")

    def action_ratios(self, dataset: Dataset) -> np.ndarray:
        """
        (n, H) per-step ratios pi/mu at the logged actions.

        Raises:
            SupportError: the behavior gives zero probability to a logged action.
        """
        h = np.broadcast_to(np.arange(dataset.H), dataset.actions.shape)
        s = dataset.states[:, :-1]
        a = dataset.actions
        mu = self.behavior.pi[h, s, a]
        if (mu <= 0).any():
            cells = {(int(hh), int(ss), int(aa)) for hh, ss, aa in zip(h[mu <= 0], s[mu <= 0], a[mu <= 0])}
            raise SupportError("behavior gives zero probability to logged actions", sorted(cells))
        return self.target.pi[h, s, a] / mu

    def count_diagnostics(self, dataset: Dataset) -> dict:
        """Smallest positive n_sa, and target-supported cells of visited states with n_sa = 0."""
        table = counts(dataset)
        hit = (self.target.pi > 0) & (table.n_s[..., None] > 0) & (table.n_sa == 0)
        return {"min_positive_count": min_positive(table.n_sa), "zero_count_cells": int(hit.sum())}

    def report(self, estimate: float, H: int, **diagnostics) -> EstimateReport:
        diagnostics["out_of_range"] = bool(not 0.0 <= estimate <= H)
        return EstimateReport(estimate=float(estimate), method=str(self.method), diagnostics=diagnostics)

    @abstractmethod
    def estimate(self, dataset: Dataset) -> EstimateReport:
        """
        Estimate the target's value from logged data.
        Args:
            dataset (Dataset): logged trajectories, n >= 1.
        """
