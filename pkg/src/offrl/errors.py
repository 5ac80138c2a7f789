# SPDX-License-Identifier: Apache-2.0

"""Exceptions raised by offrl. Every failure named by a module contract has its own class."""


class OffrlError(Exception):
    """Base class for all offrl errors."""


class DimensionError(OffrlError, ValueError):
    """Array shapes of two inputs do not agree (e.g. an MDP and a policy)."""


class SupportError(OffrlError):
    """A target quantity needs a state-action pair the behavior never plays."""

    def __init__(self, message: str, cells=()):
        self.cells = [tuple(int(x) for x in cell) for cell in cells]
        shown = ", ".join(str(c) for c in self.cells[:10])
        more = f" (+{len(self.cells) - 10} more)" if len(self.cells) > 10 else ""
        super().__init__(f"{message}: {shown}{more}" if self.cells else message)


class RankDeficiencyError(OffrlError):
    """A Gram or second-moment matrix is singular."""

    def __init__(self, rank: int, dim: int):
        self.rank = rank
        self.dim = dim
        super().__init__(f"matrix is rank deficient: rank {rank} < dimension {dim}")


class ConditioningError(OffrlError):
    """A matrix solve was refused because the condition number is too large."""

    def __init__(self, condition: float, limit: float):
        self.condition = condition
        self.limit = limit
        super().__init__(f"condition number {condition:.3e} exceeds {limit:.1e}")


class DatasetParseError(OffrlError):
    """A dataset file could not be parsed."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MalformedHeaderError(DatasetParseError):
    pass


class IndexRangeError(DatasetParseError):
    pass


class TruncatedRecordError(DatasetParseError):
    pass


class ChainError(DatasetParseError):
    """Consecutive records of one trajectory do not share the connecting state."""


class EnvironmentContractError(OffrlError):
    """An environment was driven outside its reset/step protocol."""


class PolicyCapError(OffrlError):
    """Explicit policy enumeration would exceed the configured cap."""

    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(f"{count} deterministic policies exceed the enumeration cap {cap}")


class ConfigError(OffrlError):
    """An experiment or fixture document is invalid."""


class UnknownFixtureError(ConfigError):
    pass
