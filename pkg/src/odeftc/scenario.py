"""Scenario files: plant, sensors, graph, filter parameters and run settings.

A scenario is a YAML document::

    plant:   {n, A, W, x0, P0}
    sensors: [{C, R}, ...]
    graph:   {N, edges}          # 1-based node ids
    params:  {kappa, alpha, gamma, xi}
    sim:     {h, t_end, realizations, seed, stride, init}

Matrix literals are row-major lists whose entries are numbers or expression
strings such as ``"0.05 + 0.01*sin(0.1*t)"``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .consensus import SCHEMES, ConsensusParams
from .exceptions import ScenarioError
from .graph import GraphTopology
from .model import ExprSyntaxError, PlantModel, SensorModel, TimeVaryingMatrix

__all__ = ["SimConfig", "Scenario", "load_scenario", "scenario_from_dict", "dump_scenario",
           "builtin_scenarios", "INIT_MODES"]

INIT_MODES = ("matched", "random")


@dataclass(frozen=True)
class SimConfig:
    """Run settings. ``stride`` is the sampling interval (in steps) for recorded covariances."""

    h: float = 1e-4
    t_end: float = 10.0
    realizations: int = 100
    seed: int = 0
    kappa: float = 200.0
    consensus: ConsensusParams = field(default_factory=ConsensusParams)
    stride: int = 100
    init: str = "matched"
    scheme: str = "limited"
    process_noise: bool = True
    measurement_noise: bool = True
    initial_state_noise: bool = True

    def __post_init__(self):
        if not self.h > 0:
            raise ScenarioError(f"step h must be positive, got {self.h}")
        if not self.t_end >= self.h:
            raise ScenarioError(f"t_end must be at least one step, got {self.t_end}")
        if int(self.realizations) < 1:
            raise ScenarioError(f"realizations must be >= 1, got {self.realizations}")
        if int(self.stride) < 1:
            raise ScenarioError(f"stride must be >= 1, got {self.stride}")
        if self.kappa < 0:
            raise ScenarioError(f"kappa must be non-negative, got {self.kappa}")
        if self.init not in INIT_MODES:
            raise ScenarioError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.scheme not in SCHEMES:
            raise ScenarioError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ScenarioError("seed must fit in an unsigned 64-bit integer")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.h))

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = dataclasses.asdict(self)
        out["consensus"] = dataclasses.asdict(self.consensus)
        return out


@dataclass(frozen=True)
class Scenario:
    plant: PlantModel
    sensors: tuple[SensorModel, ...]
    graph: GraphTopology
    config: SimConfig = field(default_factory=SimConfig)
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(self.sensors))
        if len(self.sensors) != self.graph.N:
            raise ScenarioError(f"{len(self.sensors)} sensors but the graph has {self.graph.N} nodes")
        n = self.plant.n
        for i, s in enumerate(self.sensors):
            if s.C.cols != n:
                raise ScenarioError(f"sensor {i + 1}: C has {s.C.cols} columns, plant has n={n}")

    @property
    def N(self) -> int:
        return self.graph.N

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def is_time_invariant(self) -> bool:
        return self.plant.is_time_invariant and all(s.is_time_invariant for s in self.sensors)

    def with_config(self, **changes) -> "Scenario":
        return dataclasses.replace(self, config=self.config.replace(**changes))

    def to_dict(self) -> dict[str, Any]:
        cfg = self.config
        return {
            "name": self.name,
            "plant": {
                "n": self.n,
                "A": self.plant.A.to_strings(),
                "W": self.plant.W.to_strings(),
                "x0": self.plant.x0.tolist(),
                "P0": self.plant.P0.tolist(),
            },
            "sensors": [{"C": s.C.to_strings(), "R": s.R.to_strings()} for s in self.sensors],
            "graph": {"N": self.N, "edges": [[i + 1, j + 1] for i, j in self.graph.edges]},
            "params": {"kappa": cfg.kappa, "alpha": cfg.consensus.alpha,
                       "gamma": cfg.consensus.gamma, "xi": cfg.consensus.xi},
            "sim": {"h": cfg.h, "t_end": cfg.t_end, "realizations": cfg.realizations,
                    "seed": cfg.seed, "stride": cfg.stride, "init": cfg.init},
        }


def _section(doc: dict, key: str) -> Any:
    if key not in doc:
        raise ScenarioError(f"scenario is missing the '{key}' section")
    return doc[key]


def _matrix(value, where: str) -> TimeVaryingMatrix:
    try:
        return TimeVaryingMatrix.from_rows(value)
    except ExprSyntaxError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def scenario_from_dict(doc: dict, name: str | None = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario document must be a mapping")
    plant_doc = _section(doc, "plant")
    try:
        n = int(plant_doc["n"])
        A = _matrix(plant_doc["A"], "plant.A")
        W = _matrix(plant_doc["W"], "plant.W")
        x0 = plant_doc.get("x0", [0.0] * n)
        P0 = plant_doc.get("P0", np.eye(n).tolist())
        if A.rows != n:
            raise ScenarioError(f"plant.A is {A.rows}x{A.cols} but n={n}")
        plant = PlantModel(A, W, np.asarray(x0, dtype=float), np.asarray(P0, dtype=float))
    except KeyError as exc:
        raise ScenarioError(f"plant section is missing {exc}") from None
    except ValueError as exc:
        raise ScenarioError(f"plant: {exc}") from exc

    sensors = []
    for k, s in enumerate(_section(doc, "sensors"), start=1):
        try:
            sensors.append(SensorModel(_matrix(s["C"], f"sensors[{k}].C"), _matrix(s["R"], f"sensors[{k}].R")))
        except KeyError as exc:
            raise ScenarioError(f"sensor {k} is missing {exc}") from None
        except ValueError as exc:
            raise ScenarioError(f"sensor {k}: {exc}") from exc

    g = _section(doc, "graph")
    try:
        graph = GraphTopology(int(g["N"]), g.get("edges", []), one_based=True)
    except KeyError as exc:
        raise ScenarioError(f"graph section is missing {exc}") from None
    except ValueError as exc:
        raise ScenarioError(f"graph: {exc}") from exc

    params = doc.get("params", {}) or {}
    sim = doc.get("sim", {}) or {}
    try:
        consensus = ConsensusParams(alpha=float(params.get("alpha", 20.0)),
                                    gamma=float(params.get("gamma", 0.7)),
                                    xi=float(params.get("xi", 10.0)))
        config = SimConfig(
            h=float(sim.get("h", 1e-4)),
            t_end=float(sim.get("t_end", 10.0)),
            realizations=int(sim.get("realizations", 100)),
            seed=int(sim.get("seed", 0)),
            kappa=float(params.get("kappa", 200.0)),
            consensus=consensus,
            stride=int(sim.get("stride", 100)),
            init=str(sim.get("init", "matched")),
        )
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    return Scenario(plant, sensors, graph, config, name or str(doc.get("name", "scenario")))


def builtin_scenarios() -> list[str]:
    root = resources.files("odeftc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Load a scenario from a YAML file or by built-in name (``paper-ltv``, ``paper-lti``)."""
    path = Path(path_or_name)
    if path.is_file():
        text = path.read_text()
    elif str(path_or_name) in builtin_scenarios():
        text = (resources.files("odeftc") / "scenarios" / f"{path_or_name}.yaml").read_text()
    else:
        raise ScenarioError(f"no scenario file or built-in scenario named {str(path_or_name)!r}")
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"could not parse scenario: {exc}") from exc
    return scenario_from_dict(doc)


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False)
