#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

from dataclasses import dataclass

import numpy as np

from offrl.errors import DimensionError, MalformedHeaderError, IndexRangeError, TruncatedRecordError
from offrl.mdp import Policy

NORM_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    Explicit state-action features.

    phi has shape (S, A, d) for a time-homogeneous map, or (H, S, A, d)
    when every step carries its own features.
    """
    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim not in (3, 4):
            raise DimensionError(f"phi must have shape (S, A, d) or (H, S, A, d), got {phi.shape}")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def time_indexed(self) -> bool:
        return self.phi.ndim == 4

    @property
    def d(self) -> int:
        return self.phi.shape[-1]

    @property
    def S(self) -> int:
        return self.phi.shape[-3]

    @property
    def A(self) -> int:
        return self.phi.shape[-2]

    def at(self, h: int) -> np.ndarray:
        """(S, A, d) features used at step h."""
        return self.phi[h] if self.time_indexed else self.phi

    def policy_features(self, policy: Policy, h: int) -> np.ndarray:
        """(S, d) table of E_{a ~ pi_h}[phi_h(s, a)]."""
        return np.einsum("sa,sad->sd", policy.pi[h], self.at(h))

    def validate(self) -> list:
        norms = np.linalg.norm(self.phi, axis=-1)
        bad = np.argwhere(norms > 1.0 + NORM_TOLERANCE)
        return [f"phi{tuple(int(i) for i in idx)} has norm {norms[tuple(idx)]!r} > 1" for idx in bad[:10]]


def indicator_map(S: int, A: int, H: int | None = None) -> FeatureMap:
    """
    Canonical-basis features: d = S*A, or H*S*A when time-indexed.
    """
    if H is None:
        return FeatureMap(np.eye(S * A).reshape(S, A, S * A))
    return FeatureMap(np.eye(H * S * A).reshape(H, S, A, H * S * A))


def write_features(features: FeatureMap, path: str):
    """
    Write a feature file: header `d` (or `d H` when time-indexed), then `s a v1 ... vd`
    rows, with an `h` column in front when time-indexed.
    """
    with open(path, "w", encoding="utf-8") as f:
        if features.time_indexed:
            f.write(f"{features.d} {features.phi.shape[0]}\n")
            for h, s, a in np.ndindex(*features.phi.shape[:3]):
                values = " ".join(format(v, ".17g") for v in features.phi[h, s, a])
                f.write(f"{h} {s} {a} {values}\n")
        else:
            f.write(f"{features.d}\n")
            for s, a in np.ndindex(*features.phi.shape[:2]):
                values = " ".join(format(v, ".17g") for v in features.phi[s, a])
                f.write(f"{s} {a} {values}\n")


def read_features(path: str, S: int, A: int) -> FeatureMap:
    with open(path, "r", encoding="utf-8") as f:
        lines = [line.split() for line in f if line.strip()]
    if not lines:
        raise MalformedHeaderError(1, "empty feature file")
    try:
        header = [int(x) for x in lines[0]]
    except ValueError as e:
        raise MalformedHeaderError(1, f"header must be integers: {' '.join(lines[0])}") from e
    if len(header) not in (1, 2) or min(header) < 1:
        raise MalformedHeaderError(1, "header must be `d` or `d H`")
    d = header[0]
    H = header[1] if len(header) == 2 else None
    keys = 3 if H else 2
    shape = (H, S, A, d) if H else (S, A, d)
    phi = np.zeros(shape)
    seen = np.zeros(shape[:-1], dtype=bool)
    for lineno, fields in enumerate(lines[1:], start=2):
        if len(fields) != keys + d:
            raise TruncatedRecordError(lineno, f"expected {keys + d} fields, got {len(fields)}")
        index = tuple(int(x) for x in fields[:keys])
        if any(i < 0 or i >= bound for i, bound in zip(index, shape[:-1])):
            raise IndexRangeError(lineno, f"index {index} outside {shape[:-1]}")
        phi[index] = [float(x) for x in fields[keys:]]
        seen[index] = True
    if not seen.all():
        raise TruncatedRecordError(len(lines) + 1, f"{int((~seen).sum())} feature rows missing")
    return FeatureMap(phi)
