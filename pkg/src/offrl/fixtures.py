#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Named MDP fixtures with closed-form oracles, plus the YAML fixture format."""

from dataclasses import dataclass, field
from enum import StrEnum
from typing import Callable, NamedTuple

import numpy as np
import yaml

from offrl.cli.common import parse_yaml, validate_document
from offrl.errors import ConfigError, UnknownFixtureError
from offrl.features import FeatureMap
from offrl.mdp import Policy, RewardNoise, TabularMDP
from offrl.oracles import value_range
from offrl.utils import generator, parse_number

LEFT, RIGHT = 0, 1


class RingMDP(NamedTuple):
    mdp: TabularMDP
    behavior: Policy
    target: Policy
    A_eta: float


class PolicyPair(NamedTuple):
    mdp: TabularMDP
    behavior: Policy
    target: Policy


class LinearFixture(NamedTuple):
    mdp: TabularMDP
    features: FeatureMap


@dataclass
class FixtureDocument:
    """An MDP together with named policies, optional features and manifest constants."""
    mdp: TabularMDP
    policies: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)
    features: FeatureMap | None = None


def ring_constant(eta: float) -> float:
    """A_eta = (eta^3 + (1 - eta)^3) / ((1 - eta) * eta)."""
    return (eta ** 3 + (1.0 - eta) ** 3) / ((1.0 - eta) * eta)


def ring_ratio_variance(eta: float, H: int) -> float:
    return ring_constant(eta) ** H - 1.0


def ring_mdp(n_states: int, eta: float, H: int, reward_state: int = 0,
             reward: str = "final") -> RingMDP:
    """
    Ring of n_states states where action L moves one step left and R one step right.

    The target moves right with probability 1 - eta, the behavior with
    probability eta. Reward 1 is paid in reward_state at the final step, or
    at every step when reward == "all". Episodes start in state 0.
    """
    if n_states < 1 or n_states % 2 == 0:
        raise ValueError(f"n_states must be odd, got {n_states}")
    if not 0.0 < eta < 1.0 or eta == 0.5:
        raise ValueError(f"eta must lie in (0, 1) and differ from 1/2, got {eta}")
    if reward not in ("final", "all"):
        raise ValueError(f"reward must be 'final' or 'all', got {reward}")
    S, A = n_states, 2
    P = np.zeros((H, S, A, S))
    for s in range(S):
        P[:, s, LEFT, (s - 1) % S] = 1.0
        P[:, s, RIGHT, (s + 1) % S] = 1.0
    r = np.zeros((H, S, A))
    if reward == "final":
        r[H - 1, reward_state, :] = 1.0
    else:
        r[:, reward_state, :] = 1.0
    d1 = np.zeros(S)
    d1[0] = 1.0
    mdp = TabularMDP(P=P, r=r, d1=d1)
    target = Policy(np.broadcast_to([eta, 1.0 - eta], (H, S, A)))
    behavior = Policy(np.broadcast_to([1.0 - eta, eta], (H, S, A)))
    return RingMDP(mdp, behavior, target, ring_constant(eta))


def sparse_iid_mdp(S: int, A: int, H: int, seed: int, nu=None) -> PolicyPair:
    """
    States drawn i.i.d. from nu at every step, reward 1 only at the last step.

    The trajectory-IS estimate is then exactly the cumulative ratio.
    """
    rng = generator(seed, "sparse")
    nu = rng.dirichlet(np.ones(S)) if nu is None else np.asarray(nu, dtype=float)
    P = np.broadcast_to(nu, (H, S, A, S))
    r = np.zeros((H, S, A))
    r[H - 1] = 1.0
    mdp = TabularMDP(P=P, r=r, d1=nu)
    behavior = Policy(np.broadcast_to(rng.dirichlet(4.0 * np.ones(A), size=S), (H, S, A)))
    target = Policy(np.broadcast_to(rng.dirichlet(np.ones(A), size=S), (H, S, A)))
    return PolicyPair(mdp, behavior, target)


def sparse_ratio_variance(mdp: TabularMDP, target: Policy, behavior: Policy) -> float:
    """
    Var of the cumulative ratio when states are i.i.d. across steps.

    prod_h sum_s nu(s) sum_a pi_h(a|s)^2 / mu_h(a|s) - 1, with nu = d1.
    """
    ratio2 = np.zeros_like(target.pi)
    np.divide(target.pi ** 2, behavior.pi, out=ratio2, where=behavior.pi > 0)
    per_step = np.einsum("s,hs->h", mdp.d1, ratio2.sum(axis=-1))
    return float(np.prod(per_step) - 1.0)


def random_mdp(seed: int, S: int, A: int, H: int, stochasticity: float,
               concentration: float = 1.0, initial_state: int | None = None) -> TabularMDP:
    """
    Random MDP interpolating between a deterministic system and a Dirichlet one.

    P = (1 - sigma) * deterministic kernel + sigma * Dirichlet(concentration);
    mean rewards mix {0, 1} draws with uniform draws the same way. Every
    random draw is made regardless of sigma, so instances with the same seed
    differ only through the mixing weight. stochasticity = 0 gives
    deterministic transitions, rewards and initial state.
    """
    sigma = float(stochasticity)
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"stochasticity must lie in [0, 1], got {stochasticity}")
    rng = generator(seed, "random_mdp")
    det_next = rng.integers(S, size=(H, S, A))
    sampled = rng.dirichlet(concentration * np.ones(S), size=(H, S, A))
    r_det = rng.integers(2, size=(H, S, A)).astype(float)
    r_unif = rng.random((H, S, A))
    start = int(rng.integers(S))
    d1_sampled = rng.dirichlet(concentration * np.ones(S))

    P = (1.0 - sigma) * np.eye(S)[det_next] + sigma * sampled
    r = (1.0 - sigma) * r_det + sigma * r_unif
    if initial_state is not None:
        d1 = np.eye(S)[initial_state]
    else:
        d1 = (1.0 - sigma) * np.eye(S)[start] + sigma * d1_sampled
    noise = RewardNoise.DETERMINISTIC if sigma == 0.0 else RewardNoise.BERNOULLI
    return TabularMDP(P=P, r=r, d1=d1, reward_noise=noise)


def deterministic_mdp(seed: int, S: int, A: int, H: int) -> TabularMDP:
    return random_mdp(seed, S, A, H, stochasticity=0.0)


def fastmix_mdp(seed: int, S: int, A: int, H: int) -> TabularMDP:
    """Transitions ignore (s, a): P_h(.|s, a) = nu_h, so rng V*_h <= 1."""
    rng = generator(seed, "fastmix")
    nu = rng.dirichlet(np.ones(S), size=H)
    P = np.broadcast_to(nu[:, None, None, :], (H, S, A, S))
    r = rng.random((H, S, A))
    d1 = rng.dirichlet(np.ones(S))
    return TabularMDP(P=P, r=r, d1=d1, reward_noise=RewardNoise.BERNOULLI)


def partially_deterministic_mdp(seed: int, S: int, A: int, H: int,
                                stochastic_layer: int | None = None) -> tuple:
    """
    A deterministic system except for one stochastic layer.

    Returns:
        (TabularMDP, TabularMDP): the fixture and its fully deterministic twin,
        which keeps the same mean rewards and sends every cell of the
        stochastic layer to its most likely successor.
    """
    layer = H // 2 if stochastic_layer is None else stochastic_layer
    if not 0 <= layer < H:
        raise ValueError(f"stochastic_layer must lie in [0, {H}), got {layer}")
    rng = generator(seed, "partial")
    det_next = rng.integers(S, size=(H, S, A))
    P = np.eye(S)[det_next]
    r = rng.integers(2, size=(H, S, A)).astype(float)
    P[layer] = rng.dirichlet(np.ones(S), size=(S, A))
    r[layer] = rng.random((S, A))
    d1 = np.eye(S)[int(rng.integers(S))]
    mdp = TabularMDP(P=P, r=r, d1=d1, reward_noise=RewardNoise.BERNOULLI)

    P_twin = P.copy()
    P_twin[layer] = np.eye(S)[np.argmax(P[layer], axis=-1)]
    twin = TabularMDP(P=P_twin, r=r, d1=d1, reward_noise=RewardNoise.DETERMINISTIC)
    return mdp, twin


def linear_mdp(phi, nu, theta, d1, reward_noise=RewardNoise.BERNOULLI) -> LinearFixture:
    """
    Tabular MDP induced by a linear MDP.

    Args:
        phi: (S, A, d) features, each row a probability vector.
        nu: (H, d, S) measures, each nu[h, k] a distribution over states.
        theta: (H, d) reward parameters in [0, 1].
        d1: initial distribution.
    """
    phi = np.asarray(phi, dtype=float)
    nu = np.asarray(nu, dtype=float)
    theta = np.asarray(theta, dtype=float)
    P = np.einsum("sad,hdt->hsat", phi, nu)
    r = np.einsum("sad,hd->hsa", phi, theta)
    return LinearFixture(TabularMDP(P=P, r=r, d1=d1, reward_noise=reward_noise), FeatureMap(phi))


def random_linear_mdp(seed: int, S: int, A: int, H: int, d: int,
                      stochasticity: float = 1.0) -> LinearFixture:
    """Random linear MDP; stochasticity = 0 makes features one-hot and the system deterministic."""
    sigma = float(stochasticity)
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"stochasticity must lie in [0, 1], got {stochasticity}")
    rng = generator(seed, "linear_mdp")
    corners = rng.integers(d, size=(S, A))
    phi = (1.0 - sigma) * np.eye(d)[corners] + sigma * rng.dirichlet(np.ones(d), size=(S, A))
    targets = rng.integers(S, size=(H, d))
    nu = (1.0 - sigma) * np.eye(S)[targets] + sigma * rng.dirichlet(np.ones(S), size=(H, d))
    theta = (1.0 - sigma) * rng.integers(2, size=(H, d)) + sigma * rng.random((H, d))
    start = int(rng.integers(S))
    d1 = (1.0 - sigma) * np.eye(S)[start] + sigma * rng.dirichlet(np.ones(S))
    noise = RewardNoise.DETERMINISTIC if sigma == 0.0 else RewardNoise.BERNOULLI
    return linear_mdp(phi, nu, theta, d1, noise)


# Named fixtures for the CLI and experiment configs

class FixtureKind(StrEnum):
    """Named fixtures"""
    RING = "ring"
    SPARSE = "sparse"
    RANDOM = "random"
    DET = "det"
    FASTMIX = "fastmix"
    PARTIAL = "partial"
    LINEAR = "linear"


def _int(params, key, default):
    return int(params.get(key, default))


def _num(params, key, default):
    return parse_number(params.get(key, default))


def _uniform(mdp: TabularMDP) -> Policy:
    return Policy.uniform(mdp.H, mdp.S, mdp.A)


def _build_ring(params) -> FixtureDocument:
    eta = _num(params, "eta", "1/3")
    fixture = ring_mdp(_int(params, "n_states", 5), eta, _int(params, "H", 4),
                       reward_state=_int(params, "reward_state", 0),
                       reward=str(params.get("reward", "final")))
    return FixtureDocument(
        mdp=fixture.mdp,
        policies={"behavior": fixture.behavior, "target": fixture.target},
        manifest={"A_eta": fixture.A_eta,
                  "ratio_variance": ring_ratio_variance(eta, fixture.mdp.H)})


def _build_sparse(params) -> FixtureDocument:
    mdp, behavior, target = sparse_iid_mdp(_int(params, "S", 3), _int(params, "A", 2),
                                           _int(params, "H", 4), _int(params, "seed", 0))
    return FixtureDocument(mdp=mdp, policies={"behavior": behavior, "target": target},
                           manifest={"ratio_variance": sparse_ratio_variance(mdp, target, behavior)})


def _build_random(params) -> FixtureDocument:
    initial = params.get("initial_state")
    mdp = random_mdp(_int(params, "seed", 0), _int(params, "S", 3), _int(params, "A", 2),
                     _int(params, "H", 4), _num(params, "stochasticity", 1.0),
                     concentration=_num(params, "concentration", 1.0),
                     initial_state=None if initial is None else int(initial))
    rng = generator(_int(params, "seed", 0), "random_target")
    target = Policy(rng.dirichlet(np.ones(mdp.A), size=(mdp.H, mdp.S)))
    return FixtureDocument(mdp=mdp, policies={"behavior": _uniform(mdp), "target": target})


def _build_det(params) -> FixtureDocument:
    mdp = deterministic_mdp(_int(params, "seed", 0), _int(params, "S", 3), _int(params, "A", 2),
                            _int(params, "H", 5))
    return FixtureDocument(mdp=mdp, policies={"behavior": _uniform(mdp)})


def _build_fastmix(params) -> FixtureDocument:
    mdp = fastmix_mdp(_int(params, "seed", 0), _int(params, "S", 4), _int(params, "A", 2),
                      _int(params, "H", 5))
    return FixtureDocument(mdp=mdp, policies={"behavior": _uniform(mdp)},
                           manifest={"value_range": [float(x) for x in value_range(mdp)]})


def _build_partial(params) -> FixtureDocument:
    layer = params.get("stochastic_layer")
    mdp, _ = partially_deterministic_mdp(_int(params, "seed", 0), _int(params, "S", 3),
                                         _int(params, "A", 2), _int(params, "H", 6),
                                         None if layer is None else int(layer))
    return FixtureDocument(mdp=mdp, policies={"behavior": _uniform(mdp)})


def _build_linear(params) -> FixtureDocument:
    mdp, features = random_linear_mdp(_int(params, "seed", 0), _int(params, "S", 4),
                                      _int(params, "A", 2), _int(params, "H", 4),
                                      _int(params, "d", 4), _num(params, "stochasticity", 1.0))
    return FixtureDocument(mdp=mdp, policies={"behavior": _uniform(mdp)}, features=features)


FIXTURE_HELP = {
    FixtureKind.RING: "ring MDP with exponential ratio variance (n_states, eta, H, reward_state, reward)",
    FixtureKind.SPARSE: "i.i.d. states, reward 1 at the last step (S, A, H, seed)",
    FixtureKind.RANDOM: "random MDP (seed, S, A, H, stochasticity, concentration, initial_state)",
    FixtureKind.DET: "deterministic MDP (seed, S, A, H)",
    FixtureKind.FASTMIX: "state-independent transitions (seed, S, A, H)",
    FixtureKind.PARTIAL: "one stochastic layer (seed, S, A, H, stochastic_layer)",
    FixtureKind.LINEAR: "linear MDP with its feature map (seed, S, A, H, d, stochasticity)",
}


class FixtureFactory:
    """Factory for named fixtures"""
    @staticmethod
    def create_fixture(kind: FixtureKind) -> Callable[[dict], FixtureDocument]:
        """Builder for a named fixture.

        Args:
            kind (FixtureKind): fixture name.

        Returns:
            A callable mapping a parameter dictionary to a FixtureDocument.
        """
        factories = {
            FixtureKind.RING: _build_ring,
            FixtureKind.SPARSE: _build_sparse,
            FixtureKind.RANDOM: _build_random,
            FixtureKind.DET: _build_det,
            FixtureKind.FASTMIX: _build_fastmix,
            FixtureKind.PARTIAL: _build_partial,
            FixtureKind.LINEAR: _build_linear,
        }
        if kind not in factories:
            raise UnknownFixtureError(f"unknown fixture: {kind} (known: {', '.join(FixtureKind)})")
        return factories[kind]

    @classmethod
    def build(cls, name: str, params: dict | None = None) -> FixtureDocument:
        return cls.create_fixture(name)(params or {})


# YAML fixture documents

def _nested(array) -> list:
    return np.asarray(array, dtype=float).tolist()


def mdp_to_document(document: FixtureDocument) -> dict:
    mdp = document.mdp
    data = {
        "S": mdp.S,
        "A": mdp.A,
        "H": mdp.H,
        "d1": _nested(mdp.d1),
        "P": _nested(mdp.P),
        "r": _nested(mdp.r),
        "reward_noise": str(mdp.reward_noise),
    }
    if document.policies:
        data["policies"] = {name: _nested(p.pi) for name, p in document.policies.items()}
    if document.features is not None:
        data["features"] = _nested(document.features.phi)
    if document.manifest:
        data["manifest"] = dict(document.manifest)
    return data


def document_to_mdp(data: dict) -> FixtureDocument:
    validate_document(data, "mdp")
    try:
        mdp = TabularMDP(P=data["P"], r=data["r"], d1=data["d1"], reward_noise=data["reward_noise"])
    except ValueError as e:
        raise ConfigError(f"invalid MDP document: {e}") from e
    if (mdp.S, mdp.A, mdp.H) != (data["S"], data["A"], data["H"]):
        raise ConfigError(f"declared (S, A, H) = {(data['S'], data['A'], data['H'])} "
                          f"does not match tables {(mdp.S, mdp.A, mdp.H)}")
    policies = {name: Policy(pi) for name, pi in (data.get("policies") or {}).items()}
    features = FeatureMap(data["features"]) if data.get("features") is not None else None
    return FixtureDocument(mdp=mdp, policies=policies, manifest=dict(data.get("manifest") or {}),
                           features=features)


def dump_mdp(document: FixtureDocument) -> str:
    return yaml.safe_dump(mdp_to_document(document), sort_keys=False, default_flow_style=None)


def write_mdp(document: FixtureDocument, path: str):
    with open(path, "w", encoding="utf-8") as f:
        f.write(dump_mdp(document))


def read_mdp(path: str) -> FixtureDocument:
    documents = parse_yaml(path)
    if not documents or documents[0] is None:
        raise ConfigError(f"{path} holds no MDP document")
    return document_to_mdp(documents[0])
