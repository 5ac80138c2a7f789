#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

from abc import ABC, abstractmethod

from offrl.errors import EnvironmentContractError
from offrl.mdp import RewardNoise, TabularMDP
from offrl.utils import generator


class Environment(ABC):
    """
    Episodic sampler: reset() then exactly H calls to step(a).

    Learners see S, A and H but never the transition or reward tables.
    """
    def __init__(self, S: int, A: int, H: int) -> None:
        self.S = S
        self.A = A
        self.H = H
        self._h = None

    def reset(self) -> int:
        self._h = 0
        return self._reset()

    def step(self, action: int) -> tuple:
        """
        Play one action.
        Returns:
            (float, int): reward and next state.
        """
        if self._h is None:
            raise EnvironmentContractError("step() called before reset()")
        if self._h >= self.H:
            raise EnvironmentContractError(f"episode already has {self.H} steps")
        if not 0 <= action < self.A:
            raise EnvironmentContractError(f"action {action} outside [0, {self.A})")
        reward, state = self._step(self._h, int(action))
        if not 0 <= state < self.S:
            raise EnvironmentContractError(f"environment returned state {state} outside [0, {self.S})")
        self._h += 1
        return reward, state

    @abstractmethod
    def _reset(self) -> int:
        """Draw the initial state."""

    @abstractmethod
    def _step(self, h: int, action: int) -> tuple:
        """Advance from the current state at step h."""


class MdpEnvironment(Environment):
    """Samples episodes of a known MDP, hiding its tables."""

    def __init__(self, mdp: TabularMDP, seed: int) -> None:
        super().__init__(mdp.S, mdp.A, mdp.H)
        self.__mdp = mdp
        self.__rng = generator(seed, "environment")
        self.__state = None

    def _reset(self) -> int:
        self.__state = int(self.__rng.choice(self.S, p=self.__mdp.d1))
        return self.__state

    def _step(self, h: int, action: int) -> tuple:
        s = self.__state
        mean = self.__mdp.r[h, s, action]
        if self.__mdp.reward_noise == RewardNoise.BERNOULLI:
            reward = float(self.__rng.random() < mean)
        else:
            reward = float(mean)
        self.__state = int(self.__rng.choice(self.S, p=self.__mdp.P[h, s, action]))
        return reward, self.__state
