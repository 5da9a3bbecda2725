"""
Scenario documents: every setting a command uses, in one JSON file.

Scenarios serialize with sorted keys and round-trip floats, so a scenario
written by ``dump_scenario`` reloads bit-exactly. Built-in scenarios are
addressable as ``builtin:<name>``.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from sturmflow.connections import ConnectSettings
from sturmflow.errors import InputError
from sturmflow.grid import (
    Field,
    Grid,
    NonlinearitySpec,
    PolynomialTerm,
    TrigCoefficient,
    chafee_infante,
)
from sturmflow.semiflow import FlowConfig

logger = logging.getLogger(__name__)

SEED_KINDS = ("equilibrium", "rotating-wave", "initial")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Seed:
    """A trigonometric profile used as a Newton guess, rotating-wave ansatz
    or initial condition."""

    kind: str
    profile: TrigCoefficient
    speed: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in SEED_KINDS:
            raise InputError(
                f"Unsupported seed kind: {self.kind} (expected one of {', '.join(SEED_KINDS)})"
            )

    def field(self, grid: Grid) -> Field:
        values = np.broadcast_to(self.profile.evaluate(grid.x), grid.x.shape)
        return Field(grid, np.array(values, dtype=float))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "profile": self.profile.to_dict(),
            "speed": float(self.speed),
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Seed":
        return cls(
            data["kind"],
            TrigCoefficient.from_dict(data.get("profile", {})),
            float(data.get("speed", 0.0)),
            str(data.get("label", "")),
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    nonlinearity: NonlinearitySpec
    grid: Grid
    flow: FlowConfig = FlowConfig()
    seeds: Tuple[Seed, ...] = ()
    suites: Tuple[str, ...] = ()
    rng_seed: int = 0
    connect: ConnectSettings = ConnectSettings()
    options: Dict[str, Any] = field(default_factory=dict)

    def seeds_of(self, kind: str) -> List[Seed]:
        return [s for s in self.seeds if s.kind == kind]

    def option(self, key: str, default: Any = None) -> Any:
        return self.options.get(key, default)

    def with_resolution(self, n_points: int, dt: Optional[float] = None) -> "Scenario":
        """The same scenario on another grid (and optionally another dt)."""
        flow = self.flow if dt is None else FlowConfig(**{**asdict(self.flow), "dt": dt})
        return Scenario(
            self.name,
            self.nonlinearity,
            Grid(n_points),
            flow,
            self.seeds,
            self.suites,
            self.rng_seed,
            self.connect,
            dict(self.options),
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": SCHEMA_VERSION,
            "name": self.name,
            "grid": {"n_points": self.grid.n_points},
            "nonlinearity": self.nonlinearity.to_dict(),
            "flow": asdict(self.flow),
            "connect": asdict(self.connect),
            "seeds": [s.to_dict() for s in self.seeds],
            "suites": list(self.suites),
            "rng_seed": int(self.rng_seed),
            "options": dict(self.options),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Scenario":
        """Build a scenario from its JSON form.

        Raises:
            InputError: On missing keys, unknown keys or invalid values
        """
        if not isinstance(data, dict):
            raise InputError("scenario must be a JSON object")
        try:
            grid = Grid(int(data["grid"]["n_points"]))
            flow = FlowConfig(**_known(FlowConfig, data.get("flow", {}), "flow"))
            connect = ConnectSettings(
                **_known(ConnectSettings, data.get("connect", {}), "connect")
            )
            seeds = tuple(Seed.from_dict(s) for s in data.get("seeds", []))
            return cls(
                name=str(data.get("name", "scenario")),
                nonlinearity=NonlinearitySpec.from_dict(data.get("nonlinearity", {"terms": []})),
                grid=grid,
                flow=flow,
                seeds=seeds,
                suites=tuple(str(s) for s in data.get("suites", [])),
                rng_seed=int(data.get("rng_seed", 0)),
                connect=connect,
                options=dict(data.get("options", {})),
            )
        except InputError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"invalid scenario: {e}") from e


def _known(cls, data: Dict[str, Any], section: str) -> Dict[str, Any]:
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InputError(f"unknown keys in '{section}': {', '.join(sorted(unknown))}")
    return dict(data)


def dumps_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario.to_dict(), indent=2, sort_keys=True) + "\n"


def dump_scenario(scenario: Scenario, path: Union[str, Path]) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(dumps_scenario(scenario))
        logger.info(f"Successfully exported scenario to {path}")
    except Exception as e:
        logger.error(f"Error exporting scenario: {e}")
        raise


def _constant(value: float, label: str = "", kind: str = "equilibrium") -> Seed:
    return Seed(kind, TrigCoefficient(value), label=label)


def _builtin_scenarios() -> Dict[str, Scenario]:
    ci_suites = ("asymptotics", "inequalities", "pairing", "transversality")
    return {
        "heat": Scenario(
            "heat",
            NonlinearitySpec(()),
            Grid(64),
            FlowConfig(dt=1e-3, save_every=10),
            (Seed("initial", TrigCoefficient(0.0, (1.0,)), label="cos"),),
            options={"t_end": 1.0},
        ),
        "blowup": Scenario(
            "blowup",
            NonlinearitySpec((PolynomialTerm(2, TrigCoefficient(1.0)),)),
            Grid(32),
            FlowConfig(dt=1e-3, blowup_bound=1e6, save_every=10),
            (_constant(2.0, "two", "initial"),),
            options={"t_end": 2.0},
        ),
        "chafee-infante-0.5": Scenario(
            "chafee-infante-0.5",
            chafee_infante(0.5),
            Grid(32),
            FlowConfig(dt=1e-3, save_every=10),
            (_constant(0.0), _constant(math.sqrt(0.5)), _constant(-math.sqrt(0.5))),
            ci_suites + ("graph",),
        ),
        "chafee-infante-2.5": Scenario(
            "chafee-infante-2.5",
            chafee_infante(2.5),
            Grid(32),
            FlowConfig(dt=1e-3, save_every=10),
            (_constant(0.0), _constant(math.sqrt(2.5)), _constant(-math.sqrt(2.5))),
            ("graph", "pairing"),
            options={"pairing_lambdas": [0.5, 2.5, 6.5], "pairing_points": 128},
        ),
        "gradient-2.5": Scenario(
            "gradient-2.5",
            chafee_infante(2.5),
            Grid(32),
            FlowConfig(dt=1e-3, save_every=10),
            (_constant(0.0), _constant(math.sqrt(2.5)), _constant(-math.sqrt(2.5))),
            ("inequalities", "transversality"),
            options={"directions": 1},
        ),
        "rotating-wave": Scenario(
            "rotating-wave",
            chafee_infante(2.5, drift=1.0),
            Grid(32),
            FlowConfig(dt=1e-3),
            (
                _constant(0.0),
                Seed("rotating-wave", TrigCoefficient(0.0, (1.4,)), speed=1.0, label="wave"),
            ),
            ("floquet",),
        ),
        "lap-random": Scenario(
            "lap-random",
            chafee_infante(2.5, cos_u=0.3),
            Grid(64),
            FlowConfig(dt=1e-3, save_every=10),
            (),
            ("lap-monotone",),
            rng_seed=20240517,
            options={"pairs": 100, "t_end": 2.0, "modes": 4},
        ),
    }


BUILTIN = _builtin_scenarios()


def load_scenario(source: Union[str, Path]) -> Scenario:
    """Load a scenario from a JSON file or ``builtin:<name>``.

    Raises:
        InputError: If the file is unreadable or invalid, or the builtin is unknown
    """
    text = str(source)
    if text.startswith("builtin:"):
        name = text.split(":", 1)[1]
        if name not in BUILTIN:
            raise InputError(
                f"unknown builtin scenario '{name}' (available: {', '.join(sorted(BUILTIN))})"
            )
        return BUILTIN[name]
    try:
        with open(source, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise InputError(f"cannot read scenario {source}: {e}") from e
    except json.JSONDecodeError as e:
        raise InputError(f"scenario {source} is not valid JSON: {e}") from e
    scenario = Scenario.from_dict(data)
    logger.debug("Loaded scenario %s from %s", scenario.name, source)
    return scenario


def random_stream(rng_seed: int, index: int) -> np.random.Generator:
    """Counter-based generator for item ``index`` of a randomized suite."""
    return np.random.Generator(np.random.Philox(key=[int(rng_seed), int(index)]))
