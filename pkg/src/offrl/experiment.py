#! /usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0

"""Seeded experiment runner: configs in, `#`-manifested tab-delimited result rows out."""

import hashlib
import json
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from enum import StrEnum

import joblib
import numpy as np
import scipy
from joblib import Parallel, delayed
from scipy import stats

import offrl
from offrl.cli.common import Console, parse_yaml, validate_document
from offrl.data import sample_trajectories
from offrl.errors import ConfigError, OffrlError
from offrl.estimators import Method, cumulative_ratios, mse_harness
from offrl.estimators.harness import MseSummary, summarize
from offrl.estimators.marginalized import tmis_estimate
from offrl.exploration import ApeveConfig, MdpEnvironment, certificate_check, larfe, regret_harness
from offrl.exploration.harness import check_elimination_soundness
from offrl.features import FeatureMap, indicator_map
from offrl.fixtures import FixtureDocument, FixtureFactory, read_mdp
from offrl.fqe import asymptotic_variance_oracle, fqe_linear
from offrl.learners import BonusConfig, BonusStyle, LinearBonusConfig, erm_policy, pfvi, pvi, vw_pfvi
from offrl.learners.pessimism import is_pessimistic, lcb_gap, suboptimality
from offrl.mdp import Policy, TabularMDP, enumerate_deterministic, optimal_policy, policy_value
from offrl.oracles import cr_lower_bound, smis_asymptotic_variance
from offrl.settings import SETTINGS
from offrl.utils import derive_seed

COLUMNS = ("experiment", "method", "n", "H", "metric", "value", "se", "seed")


class ExperimentKind(StrEnum):
    OPE_SCALING = "ope-scaling"
    OPE_EFFICIENCY = "ope-efficiency"
    OPL_PESSIMISM = "opl-pessimism"
    OPL_LINEAR = "opl-linear"
    LOW_ADAPTIVE = "low-adaptive"
    CURSE_OF_HORIZON = "curse-of-horizon"


TABULAR_METHODS = frozenset(str(m) for m in Method)
OPE_METHODS = ("is", "step-is", "smis", "tmis", "tmis-pooled", "fqe")

METHODS = {
    ExperimentKind.OPE_SCALING: OPE_METHODS,
    ExperimentKind.OPE_EFFICIENCY: OPE_METHODS,
    ExperimentKind.OPL_PESSIMISM: ("bernstein", "hoeffding", "erm"),
    ExperimentKind.OPL_LINEAR: ("pfvi", "vw-pfvi"),
    ExperimentKind.LOW_ADAPTIVE: ("apeve", "uniform", "optimal", "larfe"),
    ExperimentKind.CURSE_OF_HORIZON: ("is",),
}

# CLI subcommand -> experiment kinds it runs
COMMAND_KINDS = {
    "ope": (ExperimentKind.OPE_SCALING, ExperimentKind.OPE_EFFICIENCY, ExperimentKind.CURSE_OF_HORIZON),
    "opl": (ExperimentKind.OPL_PESSIMISM, ExperimentKind.OPL_LINEAR),
    "low-adaptive": (ExperimentKind.LOW_ADAPTIVE,),
}

STAGE_SCHEDULE_NOTE = "ceil(T^(1-2^-k)), last stage truncated to sum to T; substitutes T^(k) = K^(1-1/k)"


@dataclass(frozen=True)
class ExperimentConfig:
    """
    A validated experiment.

    Attributes:
        experiment (ExperimentKind): what to run.
        fixture (str | None): named fixture, built with params.
        fixture_file (str | None): MDP document to load instead of a named fixture.
        params (dict): fixture parameters; grid values of H override params["H"].
        grid (dict): non-empty lists under n, H and/or T.
        methods (tuple): method tags valid for the experiment kind.
        reps (int): replications (seeds for low-adaptive), at least 2.
        seed (int): root seed.
        output (str | None): result file.
        options (dict): algorithm constants (bonus, linear, apeve, larfe, fqe).
    """
    experiment: ExperimentKind
    fixture: str | None
    fixture_file: str | None
    params: dict
    grid: dict
    methods: tuple
    reps: int
    seed: int = 0
    output: str | None = None
    options: dict = field(default_factory=dict)

    @classmethod
    def from_document(cls, document: dict) -> "ExperimentConfig":
        """
        Raises:
            ConfigError: schema violation or a method the experiment kind does not run.
        """
        validate_document(document, "experiment")
        kind = ExperimentKind(document["experiment"])
        fixture = document["fixture"]
        methods = tuple(document.get("methods") or METHODS[kind][:1])
        unknown = [m for m in methods if m not in METHODS[kind]]
        if unknown:
            raise ConfigError(f"methods {unknown} are not valid for {kind} "
                              f"(valid: {', '.join(METHODS[kind])})")
        grid = {k: [int(x) for x in v] for k, v in document["grid"].items()}
        if fixture.get("file") and "H" in grid:
            raise ConfigError("a grid over H needs a named fixture, not a fixture file")
        return cls(experiment=kind, fixture=fixture.get("name"), fixture_file=fixture.get("file"),
                   params=dict(fixture.get("params") or {}), grid=grid, methods=methods,
                   reps=int(document["reps"]), seed=int(document.get("seed", 0)),
                   output=document.get("output"), options=dict(document.get("options") or {}))

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        documents = parse_yaml(path)
        if not documents or documents[0] is None:
            raise ConfigError(f"{path} holds no experiment document")
        return cls.from_document(documents[0])

    def with_overrides(self, seed: int | None = None, reps: int | None = None,
                       output: str | None = None) -> "ExperimentConfig":
        if reps is not None and reps < 2:
            raise ConfigError(f"reps must be at least 2, got {reps}")
        return replace(self, seed=self.seed if seed is None else seed,
                       reps=self.reps if reps is None else reps,
                       output=self.output if output is None else output)

    def as_document(self) -> dict:
        document = {f.name: getattr(self, f.name) for f in fields(self)}
        document["experiment"] = str(self.experiment)
        document["methods"] = list(self.methods)
        return document

    def sha256(self) -> str:
        text = json.dumps(self.as_document(), sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()

    def axis(self, name: str, default: list) -> list:
        return self.grid.get(name) or default


@dataclass(frozen=True)
class ResultRow:
    experiment: str
    method: str
    n: int
    H: int
    metric: str
    value: float
    se: float
    seed: int

    def line(self) -> str:
        return "\t".join([self.experiment, self.method, str(self.n), str(self.H), self.metric,
                          repr(float(self.value)), repr(float(self.se)), str(self.seed)])

    @classmethod
    def parse(cls, line: str) -> "ResultRow":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(COLUMNS):
            raise ValueError(f"expected {len(COLUMNS)} tab-separated fields, got {len(parts)}")
        return cls(parts[0], parts[1], int(parts[2]), int(parts[3]), parts[4],
                   float(parts[5]), float(parts[6]), int(parts[7]))


class RowSink:
    """Collects rows in emission order; non-finite rows and failures become `# error` lines."""

    def __init__(self, config: ExperimentConfig) -> None:
        self.config = config
        self.rows: list = []
        self.errors: list = []

    def add(self, method: str, n: int, H: int, metric: str, value: float, se: float = 0.0):
        if not (math.isfinite(value) and math.isfinite(se)):
            self.fail(method, n, H, f"{metric} is not finite")
            return
        self.rows.append(ResultRow(str(self.config.experiment), method, int(n), int(H), metric,
                                   float(value), max(float(se), 0.0), self.config.seed))

    def fail(self, method: str, n: int, H: int, message: str):
        Console.warn(f"{method} n={n} H={H}: {message}")
        self.errors.append(f"{method}\tn={n}\tH={H}\t{message}")

    @contextmanager
    def cell(self, method: str, n: int, H: int):
        """One grid cell: a failure inside becomes an `# error` line and the run moves on."""
        try:
            yield
        except ConfigError:
            raise
        except (OffrlError, ValueError, ArithmeticError, np.linalg.LinAlgError) as e:
            self.fail(method, n, H, f"{type(e).__name__}: {e}")


# fixtures

def load_fixture(config: ExperimentConfig, H: int | None = None) -> FixtureDocument:
    if config.fixture_file:
        return read_mdp(config.fixture_file)
    params = dict(config.params)
    if H is not None:
        params["H"] = H
    return FixtureFactory.build(config.fixture, params)


def _policies(document: FixtureDocument) -> tuple:
    """(target, behavior); defaults are the optimal and the uniform policy."""
    mdp = document.mdp
    target = document.policies.get("target") or optimal_policy(mdp)[0]
    behavior = document.policies.get("behavior") or Policy.uniform(mdp.H, mdp.S, mdp.A)
    return target, behavior


def _features(document: FixtureDocument) -> FeatureMap:
    mdp = document.mdp
    return document.features if document.features is not None else indicator_map(mdp.S, mdp.A, mdp.H)


def _horizons(config: ExperimentConfig) -> list:
    return config.grid.get("H") or [None]


def _load_cell(config: ExperimentConfig, H: int | None, sink: RowSink) -> FixtureDocument | None:
    with sink.cell("-", 0, H or 0):
        return load_fixture(config, H)
    return None


# OPE

def _ope_replicate(mdp: TabularMDP, target: Policy, behavior: Policy, method: str,
                   features: FeatureMap | None, lam: float | None, n: int, seed: int, rep: int):
    dataset = sample_trajectories(mdp, behavior, n, derive_seed(seed, rep))
    try:
        if method == "fqe":
            return fqe_linear(dataset, features, target, lam).v_hat
        return tmis_estimate(dataset, target, pooled=True).estimate
    except OffrlError:
        return None


def ope_summary(document: FixtureDocument, method: str, n: int, reps: int, seed: int,
                lam: float | None = None) -> MseSummary:
    """MSE summary of any OPE method, tabular estimators through mse_harness."""
    mdp = document.mdp
    target, behavior = _policies(document)
    if method in TABULAR_METHODS:
        return mse_harness(mdp, target, behavior, method, n, reps, seed)
    features = _features(document) if method == "fqe" else None
    estimates = Parallel(n_jobs=SETTINGS.n_jobs)(
        delayed(_ope_replicate)(mdp, target, behavior, method, features, lam, n, seed, k)
        for k in range(reps))
    return summarize(method, n, mdp.H, policy_value(mdp, target).v, estimates)


def _ope_scaling(config: ExperimentConfig, sink: RowSink):
    lam = config.options.get("fqe", {}).get("lam")
    for H in _horizons(config):
        document = _load_cell(config, H, sink)
        if document is None:
            continue
        for n in config.axis("n", [1000]):
            for method in config.methods:
                with sink.cell(method, n, document.mdp.H):
                    seed = derive_seed(config.seed, method, n, document.mdp.H)
                    s = ope_summary(document, method, n, config.reps, seed, lam)
                    sink.add(method, n, s.H, "mse", s.mse, s.se)
                    rel_se = s.se / (2.0 * math.sqrt(s.mse) * abs(s.truth)) if s.mse > 0 and s.truth else 0.0
                    sink.add(method, n, s.H, "rel_rmse", s.rel_rmse, rel_se)


def _ope_efficiency(config: ExperimentConfig, sink: RowSink):
    lam = config.options.get("fqe", {}).get("lam")
    for H in _horizons(config):
        document = _load_cell(config, H, sink)
        if document is None:
            continue
        mdp = document.mdp
        target, behavior = _policies(document)
        oracles = {"cr": lambda: cr_lower_bound(mdp, target, behavior),
                   "smis-oracle": lambda: smis_asymptotic_variance(mdp, target, behavior)}
        if "fqe" in config.methods:
            oracles["fqe-oracle"] = lambda: asymptotic_variance_oracle(mdp, _features(document), target,
                                                                      behavior, per_episode=True)
        for name, oracle in oracles.items():
            with sink.cell(name, 0, mdp.H):
                sink.add(name, 0, mdp.H, "n_mse", oracle())
        for n in config.axis("n", [10000]):
            for method in config.methods:
                with sink.cell(method, n, mdp.H):
                    seed = derive_seed(config.seed, method, n, mdp.H)
                    s = ope_summary(document, method, n, config.reps, seed, lam)
                    sink.add(method, n, mdp.H, "n_mse", n * s.mse, n * s.se)


def _curse_of_horizon(config: ExperimentConfig, sink: RowSink):
    n = config.axis("n", [10 ** 6])[0]
    for H in _horizons(config):
        with sink.cell("is", n, H or 0):
            document = load_fixture(config, H)
            mdp = document.mdp
            target, behavior = _policies(document)
            dataset = sample_trajectories(mdp, behavior, n, derive_seed(config.seed, "horizon", mdp.H))
            rho = cumulative_ratios(dataset, target, behavior)[:, -1]
            centered = (rho - rho.mean()) ** 2
            sink.add("is", n, mdp.H, "ratio_variance", float(rho.var(ddof=1)),
                     float(centered.std(ddof=1) / math.sqrt(n)))
            if "ratio_variance" in document.manifest:
                sink.add("oracle", n, mdp.H, "ratio_variance", float(document.manifest["ratio_variance"]))


# OPL

def bonus_config(config: ExperimentConfig, method: str) -> BonusConfig:
    style = BonusStyle.NONE if method == "erm" else BonusStyle(method)
    return BonusConfig(style=style, **config.options.get("bonus", {}))


def linear_config(config: ExperimentConfig) -> LinearBonusConfig:
    options = {k: v for k, v in config.options.get("linear", {}).items() if k != "beta"}
    return LinearBonusConfig(**options)


def _opl_replicate(mdp: TabularMDP, behavior: Policy, method: str, bonus, features, linear,
                   beta, n: int, seed: int, rep: int):
    dataset = sample_trajectories(mdp, behavior, n, derive_seed(seed, rep))
    try:
        if method == "erm":
            report = erm_policy(dataset, mdp.S, mdp.A)
        elif method in ("bernstein", "hoeffding"):
            report = pvi(dataset, mdp.S, mdp.A, config=bonus)
        elif method == "pfvi":
            report = pfvi(dataset, features, lam=linear.lam, beta=beta)
        else:
            report = vw_pfvi(dataset, features, config=linear)
    except OffrlError:
        return None
    return suboptimality(mdp, report), lcb_gap(mdp, report), is_pessimistic(mdp, report)


def _se(x: np.ndarray) -> float:
    return float(x.std(ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def _opl_rows(sink: RowSink, method: str, n: int, H: int, outcomes: list):
    ok = [o for o in outcomes if o is not None]
    if len(ok) < len(outcomes):
        Console.warn(f"{method} n={n}: {len(outcomes) - len(ok)} of {len(outcomes)} replications failed")
    if not ok:
        sink.fail(method, n, H, "every replication failed")
        return
    gaps, lcbs, pessimistic = (np.array(column, dtype=float) for column in zip(*ok))
    sink.add(method, n, H, "suboptimality", float(gaps.mean()), _se(gaps))
    sink.add(method, n, H, "median_suboptimality", float(np.median(gaps)))
    sink.add(method, n, H, "lcb_gap", float(lcbs.mean()), _se(lcbs))
    sink.add(method, n, H, "pessimism_rate", float(pessimistic.mean()), _se(pessimistic))


def _opl(config: ExperimentConfig, sink: RowSink):
    linear = linear_config(config)
    beta = config.options.get("linear", {}).get("beta")
    for H in _horizons(config):
        document = _load_cell(config, H, sink)
        if document is None:
            continue
        mdp = document.mdp
        _, behavior = _policies(document)
        features = _features(document) if config.experiment == ExperimentKind.OPL_LINEAR else None
        for n in config.axis("n", [1000]):
            for method in config.methods:
                with sink.cell(method, n, mdp.H):
                    bonus = bonus_config(config, method) if features is None else None
                    seed = derive_seed(config.seed, method, n, mdp.H)
                    outcomes = Parallel(n_jobs=SETTINGS.n_jobs)(
                        delayed(_opl_replicate)(mdp, behavior, method, bonus, features, linear, beta, n,
                                                seed, k)
                        for k in range(config.reps))
                    _opl_rows(sink, method, n, mdp.H, outcomes)


# low-adaptive

def apeve_config(config: ExperimentConfig) -> ApeveConfig:
    options = config.options.get("apeve", {})
    return ApeveConfig(**{k: v for k, v in options.items() if k in ("crude_fraction", "ci_scale")})


def _larfe_run(mdp: TabularMDP, epsilon: float, delta: float, episodes_per_layer, seed: int) -> tuple:
    result, ledger = larfe(MdpEnvironment(mdp, seed), mdp.S, mdp.A, mdp.H, epsilon, delta,
                           episodes_per_layer=episodes_per_layer, seed=seed)
    check = certificate_check(mdp, result, seed=seed)
    return ledger.batch_count, ledger.episodes, float(check.passed), result.epsilon_hat


def _low_adaptive(config: ExperimentConfig, sink: RowSink):
    document = load_fixture(config)
    mdp = document.mdp
    seeds = [derive_seed(config.seed, "low-adaptive", k) for k in range(config.reps)]
    options = config.options.get("apeve", {})
    delta = options.get("delta", 0.1)
    for method in config.methods:
        if method == "larfe":
            larfe_options = config.options.get("larfe", {})
            with sink.cell(method, 0, mdp.H):
                runs = Parallel(n_jobs=SETTINGS.n_jobs)(
                    delayed(_larfe_run)(mdp, larfe_options.get("epsilon", 0.5), larfe_options.get("delta", 0.1),
                                        larfe_options.get("episodes_per_layer"), s) for s in seeds)
                batches, episodes, passed, eps_hat = (np.array(c, dtype=float) for c in zip(*runs))
                n = int(episodes.max())
                sink.add(method, n, mdp.H, "batch_count", float(batches.max()))
                sink.add(method, n, mdp.H, "certificate_rate", float(passed.mean()))
                sink.add(method, n, mdp.H, "epsilon_hat", float(eps_hat.mean()))
            continue
        for T in config.axis("T", [512]):
            with sink.cell(method, T, mdp.H):
                summary = regret_harness(mdp, method, T, seeds, delta=delta,
                                         policy_cap=options.get("policy_cap"), config=apeve_config(config))
                sink.add(method, T, mdp.H, "regret", summary.mean, summary.se)
                sink.add(method, T, mdp.H, "switch_count", float(max(summary.switch_counts)))
                sink.add(method, T, mdp.H, "batch_count", float(max(summary.batch_counts)))
                if method == "apeve":
                    sink.add(method, T, mdp.H, "stage_count", float(max(summary.stage_counts)))
                    table = enumerate_deterministic(mdp.S, mdp.A, mdp.H, options.get("policy_cap"))
                    survived = [all(s for _, s in check_elimination_soundness(mdp, ledger, table))
                                for ledger in summary.ledgers]
                    sink.add(method, T, mdp.H, "pi_star_survival", float(np.mean(survived)))


RUNNERS = {
    ExperimentKind.OPE_SCALING: _ope_scaling,
    ExperimentKind.OPE_EFFICIENCY: _ope_efficiency,
    ExperimentKind.CURSE_OF_HORIZON: _curse_of_horizon,
    ExperimentKind.OPL_PESSIMISM: _opl,
    ExperimentKind.OPL_LINEAR: _opl,
    ExperimentKind.LOW_ADAPTIVE: _low_adaptive,
}


# results

def manifest(config: ExperimentConfig) -> dict:
    """Everything needed to reproduce a result file, including every frozen constant."""
    bonus = BonusConfig(**config.options.get("bonus", {})).as_manifest()
    bonus.pop("style")
    larfe_options = {"delta": 0.1, "epsilon": 0.5, "episodes_per_layer": "default", "crude_share": 0.5}
    larfe_options.update(config.options.get("larfe", {}))
    return {
        "experiment": str(config.experiment),
        "config_sha256": config.sha256(),
        "versions": {"offrl": offrl.__version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "joblib": joblib.__version__},
        "bonus": bonus,
        "linear_bonus": {**asdict(linear_config(config)),
                         "beta": config.options.get("linear", {}).get("beta", "d*H")},
        "apeve": {**apeve_config(config).as_manifest(),
                  "delta": config.options.get("apeve", {}).get("delta", 0.1),
                  "policy_cap": config.options.get("apeve", {}).get("policy_cap", SETTINGS.policy_cap)},
        "larfe": larfe_options,
        "stage_schedule": STAGE_SCHEDULE_NOTE,
        "float": "IEEE-754 double, round-to-nearest-even, numpy pairwise summation",
    }


def format_results(config: ExperimentConfig, sink: RowSink, created: str) -> str:
    lines = [f"# {key}: {json.dumps(value, sort_keys=True, default=str) if isinstance(value, dict) else value}"
             for key, value in manifest(config).items()]
    lines.append(f"# created: {created}")
    lines.extend(f"# error: {message}" for message in sink.errors)
    lines.append("\t".join(COLUMNS))
    lines.extend(row.line() for row in sink.rows)
    return "\n".join(lines) + "\n"


def run(config: ExperimentConfig) -> list:
    """
    Run an experiment and write its result file when config.output is set.

    Failures inside a grid cell are recorded as `# error` lines and the run continues.

    Returns:
        list: ResultRow in emission order.
    """
    Console.verbose(f"running {config.experiment} (config {config.sha256()[:12]})")
    sink = RowSink(config)
    try:
        RUNNERS[config.experiment](config, sink)
    except ConfigError:
        raise
    except (OffrlError, ValueError) as e:
        sink.fail("-", 0, 0, str(e))
    if config.output:
        created = datetime.now(timezone.utc).isoformat(timespec="seconds")
        with open(config.output, "w", encoding="utf-8") as f:
            f.write(format_results(config, sink, created))
        Console.ok(f"wrote {len(sink.rows)} rows to {config.output}")
    return sink.rows


def read_results(path: str) -> list:
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("#") or not line.strip() or line.startswith(COLUMNS[0] + "\t"):
                continue
            rows.append(ResultRow.parse(line))
    return rows


@dataclass(frozen=True)
class LoglogFit:
    slope: float
    intercept: float
    r2: float
    points: int
    excluded: int


def fit_loglog(rows: list, x: str, metric: str, method: str | None = None,
               semilog: bool = False) -> LoglogFit:
    """
    Least-squares fit of log(value) against log(x), or against x when semilog.

    Rows with a non-positive value (or x) are excluded with a warning.

    Raises:
        ValueError: fewer than 3 usable points, or x not in {n, H}.
    """
    if x not in ("n", "H"):
        raise ValueError(f"x must be n or H, got {x!r}")
    selected = [r for r in rows if r.metric == metric and (method is None or r.method == method)]
    usable = [r for r in selected if r.value > 0 and getattr(r, x) > 0]
    excluded = len(selected) - len(usable)
    if excluded:
        Console.warn(f"fit_loglog: excluded {excluded} non-positive points")
    if len(usable) < 3:
        raise ValueError(f"need at least 3 positive points, got {len(usable)}")
    xs = np.array([getattr(r, x) for r in usable], dtype=float)
    ys = np.log([r.value for r in usable])
    fit = stats.linregress(xs if semilog else np.log(xs), ys)
    return LoglogFit(slope=float(fit.slope), intercept=float(fit.intercept), r2=float(fit.rvalue ** 2),
                     points=len(usable), excluded=excluded)
