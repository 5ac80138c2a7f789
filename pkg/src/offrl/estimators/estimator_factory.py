# SPDX-License-Identifier: Apache-2.0
from enum import StrEnum
from typing import Type

from .estimator import Estimator
from .importance_sampling import ImportanceSampling, StepImportanceSampling
from .marginalized import StateMIS, TabularMIS


class Method(StrEnum):
    """Enumeration of tabular estimators"""
    IS = "is"
    STEP_IS = "step-is"
    SMIS = "smis"
    TMIS = "tmis"


class EstimatorFactory:
    """Factory class for tabular OPE estimators"""
    @staticmethod
    def create_estimator(method: Method) -> Type[Estimator]:
        """Estimator class for a method tag.

        Args:
            method (Method): one of is, step-is, smis, tmis.

        Returns:
            The estimator class; instantiate with (target, behavior).
        """
        factories = {
            Method.IS: ImportanceSampling,
            Method.STEP_IS: StepImportanceSampling,
            Method.SMIS: StateMIS,
            Method.TMIS: TabularMIS,
        }
        if method not in factories:
            raise ValueError(f"Unknown estimator: {method}")
        return factories[method]
