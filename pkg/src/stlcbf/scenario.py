"""Scenario configuration: JSON schema, loading, and object builders.

A scenario file carries the predicate table, the task formula, rewrite and
timing options, per-node margins, controller parameters, the plant and the
(harness-only) disturbance, integration settings, and output paths.  The
file is schema-validated before any computation; unknown keys are
rejected.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .controller import ControllerParams
from .formulas import Affine, Ball, Negated, PredicateDef, SmoothAnd
from .plant import Constant, DisturbanceSignal, GenericAffine, Sinusoid, Unicycle
from .transform import GfSplit, TransformConfig

__all__ = ["ScenarioError", "ScenarioConfig", "load_scenario", "SCENARIO_SCHEMA"]


class ScenarioError(ValueError):
    pass


_SHAPE_SCHEMA = {
    "type": "object",
    "oneOf": [
        {
            "properties": {
                "type": {"const": "affine"},
                "a": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "b": {"type": "number"},
            },
            "required": ["type", "a", "b"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "type": {"const": "ball"},
                "center": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "radius": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["type", "center", "radius"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "type": {"const": "negated"},
                "inner": {"type": "string"},
            },
            "required": ["type", "inner"],
            "additionalProperties": False,
        },
        {
            "properties": {
                "type": {"const": "smooth_and"},
                "parts": {"type": "array", "items": {"type": "string"}, "minItems": 2},
                "kappa": {"type": "number", "exclusiveMinimum": 0},
            },
            "required": ["type", "parts", "kappa"],
            "additionalProperties": False,
        },
    ],
}

_NODE_KEY_MAP = {
    "type": "object",
    "additionalProperties": {"type": "number"},
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "predicates": {
            "type": "object",
            "additionalProperties": _SHAPE_SCHEMA,
            "minProperties": 1,
        },
        "formula": {"type": "string"},
        "transform": {
            "type": "object",
            "properties": {
                "kappa": {"type": "number", "exclusiveMinimum": 0},
                "gf_split": {
                    "oneOf": [
                        {"const": "auto"},
                        {
                            "type": "object",
                            "additionalProperties": {
                                "type": "object",
                                "properties": {
                                    "p_f": {"type": "integer", "minimum": 1},
                                    "deltas": {
                                        "type": "array",
                                        "items": {"type": "number"},
                                        "minItems": 1,
                                    },
                                },
                                "required": ["p_f", "deltas"],
                                "additionalProperties": False,
                            },
                        },
                    ]
                },
            },
            "additionalProperties": False,
        },
        "timing": {
            "type": "object",
            "properties": {"t_star": _NODE_KEY_MAP},
            "additionalProperties": False,
        },
        "margins": _NODE_KEY_MAP,
        "controller": {
            "type": "object",
            "properties": {
                "lambda": {"type": "number"},
                "c": {"type": "number"},
                "gamma": {"type": "number"},
                "varsigma": {"type": "number"},
                "varrho": {"type": "number"},
                "rho0": {"type": "number"},
                "rho_inf": {"type": "number"},
                "eps_smooth": {"type": "number"},
                "alpha_gain": {"type": "number"},
                "w_diag": {"type": "array", "items": {"type": "number"}},
                "w": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number"}},
                },
                "input_bounds": {"type": "array", "items": {"type": "number"}},
                "eta0": {"type": "number"},
                "eta_reset": {"type": "number"},
                "e_guard": {"type": ["number", "null"]},
                "r_hat0": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "plant": {
            "type": "object",
            "properties": {
                "kind": {"enum": ["unicycle", "generic"]},
                "l": {"type": "number"},
                "x0": {"type": "array", "items": {"type": "number"}},
                "theta0": {"type": "number"},
                "f": {"type": "array", "items": {"type": "string"}},
                "g": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "string"}},
                },
                "cbf_state": {"type": "array", "items": {"type": "integer"}},
                "disturbed": {"type": "array", "items": {"type": "integer"}},
            },
            "required": ["kind"],
            "additionalProperties": False,
        },
        "disturbance": {
            "type": "object",
            "properties": {
                "channels": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "oneOf": [
                                {
                                    "properties": {
                                        "type": {"const": "constant"},
                                        "value": {"type": "number"},
                                    },
                                    "required": ["type", "value"],
                                    "additionalProperties": False,
                                },
                                {
                                    "properties": {
                                        "type": {"const": "sinusoid"},
                                        "amplitude": {"type": "number"},
                                        "frequency": {"type": "number"},
                                        "phase": {"type": "number"},
                                    },
                                    "required": ["type", "amplitude", "frequency"],
                                    "additionalProperties": False,
                                },
                            ],
                        },
                    },
                }
            },
            "additionalProperties": False,
        },
        "sim": {
            "type": "object",
            "properties": {
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": ["number", "null"]},
            },
            "additionalProperties": False,
        },
        "outputs": {
            "type": "object",
            "properties": {
                "csv": {"type": ["string", "null"]},
                "svg": {"type": ["string", "null"]},
            },
            "additionalProperties": False,
        },
    },
    "required": ["predicates", "formula"],
    "additionalProperties": False,
}


@dataclass
class ScenarioConfig:
    raw: dict
    path: Path | None = None

    # ---- section accessors (defaults resolved) ----

    @property
    def formula_text(self) -> str:
        return self.raw["formula"]

    def build_table(self) -> dict[str, PredicateDef]:
        specs = self.raw["predicates"]
        table: dict[str, PredicateDef] = {}
        pending = dict(specs)
        while pending:
            progressed = False
            for name in list(pending):
                spec = pending[name]
                kind = spec["type"]
                if kind == "affine":
                    shape = Affine(tuple(spec["a"]), spec["b"])
                elif kind == "ball":
                    shape = Ball(tuple(spec["center"]), spec["radius"])
                elif kind == "negated":
                    if spec["inner"] not in table:
                        if spec["inner"] not in specs:
                            raise ScenarioError(
                                f"predicate {name!r} references unknown {spec['inner']!r}"
                            )
                        continue
                    shape = Negated(table[spec["inner"]])
                elif kind == "smooth_and":
                    if any(p not in table for p in spec["parts"]):
                        missing = [p for p in spec["parts"] if p not in specs]
                        if missing:
                            raise ScenarioError(
                                f"predicate {name!r} references unknown {missing}"
                            )
                        continue
                    shape = SmoothAnd(
                        tuple(table[p] for p in spec["parts"]), spec["kappa"]
                    )
                else:  # pragma: no cover - schema forbids
                    raise ScenarioError(f"unknown predicate type {kind!r}")
                table[name] = PredicateDef(name, shape)
                del pending[name]
                progressed = True
            if not progressed:
                raise ScenarioError(
                    f"circular predicate references among {sorted(pending)}"
                )
        return table

    def build_transform_config(self) -> TransformConfig:
        block = self.raw.get("transform", {})
        gf = block.get("gf_split", "auto")
        if isinstance(gf, dict):
            gf = {
                key: GfSplit(v["p_f"], tuple(v["deltas"])) for key, v in gf.items()
            }
        return TransformConfig(kappa=block.get("kappa", 10.0), gf_split=gf)

    @property
    def t_star_overrides(self) -> dict:
        return dict(self.raw.get("timing", {}).get("t_star", {}))

    @property
    def margins(self) -> dict:
        return dict(self.raw.get("margins", {}))

    def build_controller_params(self, m: int) -> ControllerParams:
        block = self.raw.get("controller", {})
        if "w" in block and "w_diag" in block:
            raise ScenarioError("give either controller.w or controller.w_diag")
        if "w" in block:
            W = np.asarray(block["w"], dtype=float)
        elif "w_diag" in block:
            W = np.diag(np.asarray(block["w_diag"], dtype=float))
        else:
            W = np.eye(m)
        if W.shape != (m, m):
            raise ScenarioError(f"W has shape {W.shape}, plant input dim is {m}")
        bounds = block.get("input_bounds")
        if bounds is not None:
            bounds = np.asarray(bounds, dtype=float)
            if bounds.shape != (m,):
                raise ScenarioError(
                    f"input_bounds has length {len(bounds)}, plant input dim is {m}"
                )
        return ControllerParams(
            lam=block.get("lambda", 10.0),
            c=block.get("c", 0.01),
            gamma=block.get("gamma", 0.01),
            varsigma=block.get("varsigma", 1.0),
            varrho=block.get("varrho", 1.0),
            rho0=block.get("rho0", 1.0),
            rho_inf=block.get("rho_inf", 0.2),
            eps_smooth=block.get("eps_smooth", 0.01),
            alpha_gain=block.get("alpha_gain", 0.5),
            W=W,
            input_bounds=bounds,
            eta_reset=block.get("eta_reset", 0.1),
            e_guard=block.get("e_guard"),
        )

    @property
    def eta0(self) -> float:
        return self.raw.get("controller", {}).get("eta0", 0.3)

    @property
    def r_hat0(self) -> float:
        return self.raw.get("controller", {}).get("r_hat0", 0.0)

    def build_plant(self):
        block = self.raw.get("plant", {"kind": "unicycle"})
        if block["kind"] == "unicycle":
            return Unicycle(l=block.get("l", 0.036))
        for key in ("f", "g"):
            if key not in block:
                raise ScenarioError(f"generic plant needs {key!r} expressions")
        return GenericAffine(
            block["f"],
            block["g"],
            cbf_state=block.get("cbf_state"),
            disturbed=block.get("disturbed"),
        )

    def initial_state(self, plant) -> np.ndarray:
        block = self.raw.get("plant", {"kind": "unicycle"})
        if block["kind"] == "unicycle":
            p0 = block.get("x0", [1.0, -2.0])
            if len(p0) == plant.n:
                return np.asarray(p0, dtype=float)
            if len(p0) != 2:
                raise ScenarioError("unicycle x0 must give the position (2 values)")
            return np.array([p0[0], p0[1], block.get("theta0", 0.0)])
        x0 = block.get("x0")
        if x0 is None or len(x0) != plant.n:
            raise ScenarioError(f"generic plant x0 must have {plant.n} entries")
        return np.asarray(x0, dtype=float)

    def build_disturbance(self, plant) -> DisturbanceSignal:
        block = self.raw.get("disturbance", {})
        channels = block.get("channels")
        if channels is None:
            channels = [[] for _ in plant.disturbed]
        if len(channels) != len(plant.disturbed):
            raise ScenarioError(
                f"disturbance has {len(channels)} channels, plant exposes "
                f"{len(plant.disturbed)} disturbed channels"
            )
        built = []
        for terms in channels:
            parsed = []
            for term in terms:
                if term["type"] == "constant":
                    parsed.append(Constant(term["value"]))
                else:
                    parsed.append(
                        Sinusoid(
                            term["amplitude"],
                            term["frequency"],
                            term.get("phase", 0.0),
                        )
                    )
            built.append(parsed)
        return DisturbanceSignal(built)

    @property
    def dt(self) -> float:
        return self.raw.get("sim", {}).get("dt", 0.005)

    @property
    def horizon_override(self) -> float | None:
        return self.raw.get("sim", {}).get("horizon")

    @property
    def csv_name(self) -> str:
        name = self.raw.get("outputs", {}).get("csv")
        if name:
            return name
        stem = self.path.stem if self.path else "run"
        return f"{stem}.csv"

    @property
    def svg_name(self) -> str | None:
        return self.raw.get("outputs", {}).get("svg")

    def effective_dict(self, plant=None) -> dict:
        """Raw config with all defaults resolved (for reproducible reruns)."""
        plant = plant or self.build_plant()
        params = self.build_controller_params(plant.m)
        ctrl = {
            "lambda": params.lam,
            "c": params.c,
            "gamma": params.gamma,
            "varsigma": params.varsigma,
            "varrho": params.varrho,
            "rho0": params.rho0,
            "rho_inf": params.rho_inf,
            "eps_smooth": params.eps_smooth,
            "alpha_gain": params.alpha_gain,
            "w": params.W.tolist(),
            "eta0": self.eta0,
            "eta_reset": params.eta_reset,
            "e_guard": params.e_guard,
            "r_hat0": self.r_hat0,
        }
        if params.input_bounds is not None:
            ctrl["input_bounds"] = params.input_bounds.tolist()
        tf = self.raw.get("transform", {})
        out = {
            "predicates": self.raw["predicates"],
            "formula": self.formula_text,
            "transform": {
                "kappa": tf.get("kappa", 10.0),
                "gf_split": tf.get("gf_split", "auto"),
            },
            "timing": {"t_star": self.t_star_overrides},
            "margins": self.margins,
            "controller": ctrl,
            "plant": self.raw.get("plant", {"kind": "unicycle"}),
            "disturbance": self.raw.get("disturbance", {"channels": []}),
            "sim": {"dt": self.dt, "horizon": self.horizon_override},
            "outputs": {
                "csv": self.csv_name,
                "svg": self.svg_name,
            },
        }
        return out


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {path}: {exc}") from None
    return scenario_from_dict(raw, path)


def scenario_from_dict(raw: dict, path: Path | None = None) -> ScenarioConfig:
    try:
        jsonschema.validate(raw, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"invalid scenario at {where}: {exc.message}") from None
    return ScenarioConfig(raw, path)
