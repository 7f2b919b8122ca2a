"""Experiment configurations, seed derivation and single-replication runs."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .engines import Engine, QRule, RunConfig, ScheduleMode, run
from .graphs import GraphSequence, SequenceKind, fig7_fixture, generate_small_world
from .problem import OracleSolution, generate_classo, solve_centralized

CODE_VERSION = f"dpda {__version__}"


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "custom"
    # problem
    n: int = 20
    m_obs: int = 22
    num_agents: int = 10
    lasso_weight: float = 0.05      # total weight, split evenly over agents
    noise_std: float = 1e-3
    box: float = 20.0
    # network
    network: str = "static"         # static | tv_undirected | tv_directed
    base_graph: str = "small_world"  # small_world | fig7
    num_edges: int = 45
    period: int = 5
    keep_prob: float = 0.8
    # engine
    engine: str = "dpda"
    schedule_modes: tuple = ("accelerated",)
    iterations: int = 2000
    q_rule: dict = field(default_factory=lambda: {"kind": "log", "c": 10.0})
    mixing: str | None = None
    joint_rounds: bool = True
    delta1: float | None = None
    delta2: float | None = None
    alpha: float | None = None
    mu: float | None = None
    x0: str = "zeros"
    record_at: tuple | None = None
    diagnostics: bool = False
    # experiment
    replications: int = 25
    master_seed: int = 0
    oracle_tol: float = 1e-10
    out_dir: str = "results"

    def __post_init__(self):
        if self.network not in ("static", "tv_undirected", "tv_directed"):
            raise ValueError(f"unknown network kind {self.network!r}")
        if self.base_graph not in ("small_world", "fig7"):
            raise ValueError(f"unknown base graph {self.base_graph!r}")
        if self.network == "tv_directed" and self.base_graph != "fig7":
            raise ValueError("directed networks use the bundled fig7 graph")
        Engine(self.engine)
        object.__setattr__(self, "schedule_modes",
                           tuple(ScheduleMode(m).value for m in self.schedule_modes))
        if self.record_at is not None:
            object.__setattr__(self, "record_at", tuple(int(k) for k in self.record_at))
        QRule(**self.q_rule)
        if self.replications < 1:
            raise ValueError("replications must be at least 1")

    @property
    def agents(self):
        return 12 if self.base_graph == "fig7" else self.num_agents

    def to_dict(self):
        d = asdict(self)
        d["schedule_modes"] = list(self.schedule_modes)
        if self.record_at is not None:
            d["record_at"] = list(self.record_at)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "schedule_modes" in d:
            d["schedule_modes"] = tuple(d["schedule_modes"])
        return cls(**d)

    def config_hash(self):
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def _static(name, N, E, **kw):
    return ScenarioConfig(name=name, num_agents=N, num_edges=E, **kw)


BUILTINS = {
    "static-10-15": _static("static-10-15", 10, 15),
    "static-10-45": _static("static-10-45", 10, 45),
    "static-40-60": _static("static-40-60", 40, 60),
    "static-40-180": _static("static-40-180", 40, 180),
    "tv-undirected-10-45": ScenarioConfig(name="tv-undirected-10-45", network="tv_undirected",
                                          engine="dpda_tv"),
    "tv-undirected-10-15": ScenarioConfig(name="tv-undirected-10-15", network="tv_undirected",
                                          engine="dpda_tv", num_edges=15),
    "tv-directed-fig7": ScenarioConfig(name="tv-directed-fig7", network="tv_directed",
                                       base_graph="fig7", engine="dpda_tv", num_agents=12),
    "compare-static": _static("compare-static", 10, 45, schedule_modes=("accelerated", "constant")),
    "compare-tv-undirected": ScenarioConfig(name="compare-tv-undirected", network="tv_undirected",
                                            engine="dpda_tv", schedule_modes=("accelerated", "constant")),
    "compare-tv-directed": ScenarioConfig(name="compare-tv-directed", network="tv_directed",
                                          base_graph="fig7", engine="dpda_tv", num_agents=12,
                                          schedule_modes=("accelerated", "constant")),
}


def load_config(spec) -> ScenarioConfig:
    """Built-in scenario name, or path to a JSON file (optionally with ``"base"``)."""
    if isinstance(spec, ScenarioConfig):
        return spec
    if spec in BUILTINS:
        return BUILTINS[spec]
    try:
        with open(spec) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ValueError(f"no built-in scenario or config file named {spec!r}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{spec}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ValueError(f"{spec}: config must be a JSON object")
    base = raw.pop("base", None)
    if base is not None:
        if base not in BUILTINS:
            raise ValueError(f"unknown base scenario {base!r}")
        merged = BUILTINS[base].to_dict()
        merged.update(raw)
        raw = merged
    try:
        return ScenarioConfig.from_dict(raw)
    except TypeError as exc:
        raise ValueError(str(exc)) from None


# ---------------------------------------------------------------------------
# seeding


def seed_split(master, labels):
    """Per-label 63-bit seeds from a keyed BLAKE2b hash of each label."""
    key = str(int(master)).encode()
    out = {}
    for label in labels:
        h = hashlib.blake2b(str(label).encode(), key=key, digest_size=8)
        out[label] = int.from_bytes(h.digest(), "little") >> 1
    return out


def replication_seeds(scenario, reps, master_seed=None):
    master = scenario.master_seed if master_seed is None else master_seed
    labels = [f"replication/{i}" for i in range(reps)]
    s = seed_split(master, labels)
    return [s[l] for l in labels]


# ---------------------------------------------------------------------------
# building and running


@dataclass
class Replication:
    seed: int
    trace: object
    oracle: OracleSolution
    bounds: list | None = None
    problem: object = None
    graphs: object = None


def build_problem(scenario, seed):
    s = seed_split(seed, ["instance", "graph", "sequence", "init"])
    N = scenario.agents
    problem = generate_classo(scenario.n, scenario.m_obs, N, scenario.lasso_weight / N,
                              scenario.noise_std, s["instance"], scenario.box)
    if scenario.base_graph == "fig7":
        base = fig7_fixture()
    else:
        base = generate_small_world(N, scenario.num_edges, s["graph"])
    if scenario.network == "static":
        graphs = base
    else:
        graphs = GraphSequence(base, scenario.period, scenario.keep_prob, s["sequence"],
                               SequenceKind(scenario.network))
    return problem, graphs, s["init"]


def run_config(scenario, schedule_mode=None, init_seed=0):
    mode = schedule_mode or scenario.schedule_modes[0]
    return RunConfig(engine=scenario.engine, schedule_mode=mode, iterations=scenario.iterations,
                     q_rule=QRule(**scenario.q_rule), mixing=scenario.mixing,
                     joint_rounds=scenario.joint_rounds, x0=scenario.x0, init_seed=init_seed,
                     record_at=scenario.record_at, diagnostics=scenario.diagnostics,
                     delta1=scenario.delta1, delta2=scenario.delta2, alpha=scenario.alpha,
                     mu=scenario.mu)


def oracle_for(problem, tol, cache_dir=None):
    """Solve, or load from ``cache_dir`` keyed by instance digest and tolerance."""
    if cache_dir is None:
        return solve_centralized(problem, tol)
    key = hashlib.sha256(f"{problem.digest()}|{tol!r}".encode()).hexdigest()[:24]
    path = os.path.join(cache_dir, f"oracle-{key}.json")
    if os.path.exists(path):
        with open(path) as fh:
            return OracleSolution.from_dict(json.load(fh))
    sol = solve_centralized(problem, tol)
    atomic_write(path, json.dumps(sol.to_dict(), sort_keys=True))
    return sol


def run_one(scenario, seed, schedule_mode=None, check_bounds_too=False, oracle_cache=None):
    from .metrics import check_bounds
    if check_bounds_too and scenario.engine == "dpda_tv" and not scenario.diagnostics:
        # the time-varying check consumes the logged approximation errors
        scenario = replace(scenario, diagnostics=True)
    problem, graphs, init_seed = build_problem(scenario, seed)
    oracle = oracle_for(problem, scenario.oracle_tol, oracle_cache)
    trace = run(run_config(scenario, schedule_mode, init_seed), problem, graphs, oracle)
    bounds = check_bounds(trace, problem, oracle) if check_bounds_too else None
    return Replication(seed, trace, oracle, bounds, problem, graphs)


def atomic_write(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
