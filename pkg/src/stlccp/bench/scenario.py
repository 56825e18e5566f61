"""Scenario files and the two-target benchmark specification."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from ..ccp import CcpConfig
from ..robustness import SmoothingConfig
from ..stl import Always, And, Box, Eventually, Formula, FormulaError, Or, horizon, parse, to_nnf
from ..system import LinearSystem, double_integrator

SCHEMA_VERSION = 1

DEFAULT_REGIONS = {
    "B1": Box(1.0, 3.0, 7.0, 9.0),
    "B2": Box(7.0, 9.0, 7.0, 9.0),
    "O": Box(4.0, 6.0, 4.0, 6.0),
    "G": Box(7.0, 9.0, 1.0, 3.0),
}
DEFAULT_X0 = (2.0, 2.0, 0.0, 0.0)
DEFAULT_T = 25
DEFAULT_TD = 5


class ScenarioError(ValueError):
    pass


def build_two_target(T: int, T_d: int, regions: Dict[str, Box], n: int = 4) -> Formula:
    """Dwell for T_d steps in B1 or B2, never enter O, and reach G, all within T.

    ``T_d == T`` is accepted and gives a single-step outer window.
    """
    missing = {"B1", "B2", "O", "G"} - set(regions)
    if missing:
        raise ScenarioError(f"two-target scenario is missing regions {sorted(missing)}")
    if not 0 < T_d <= T:
        raise ScenarioError(f"need 0 < T_d <= T, got T={T}, T_d={T_d}")
    dwell = Eventually(
        0,
        T - T_d,
        Or((Always(0, T_d, regions["B1"].inside(n)), Always(0, T_d, regions["B2"].inside(n)))),
    )
    avoid = Always(0, T, regions["O"].outside(n))
    reach = Eventually(0, T, regions["G"].inside(n))
    return And((dwell, avoid, reach))


@dataclass
class Scenario:
    system: LinearSystem
    x0: np.ndarray
    formula: Formula
    T: int
    T_d: Optional[int] = None
    regions: Dict[str, Box] = field(default_factory=dict)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    ccp: CcpConfig = field(default_factory=CcpConfig)
    formula_spec: object = "two_target"

    def validate(self):
        need = horizon(self.formula)
        if need > self.T:
            raise ScenarioError(f"formula needs a horizon of {need} steps but T={self.T}")
        if np.asarray(self.x0).shape != (self.system.n,):
            raise ScenarioError(f"x0 must have length {self.system.n}")
        lo, hi = self.system.x_lo, self.system.x_hi
        for name, box in self.regions.items():
            if box.x_lo < lo[0] or box.x_hi > hi[0] or box.y_lo < lo[1] or box.y_hi > hi[1]:
                raise ScenarioError(f"region {name} lies outside the state bounds")
        return self

    def with_horizon(self, T: int) -> "Scenario":
        """Same scenario at another horizon; built-in formulas are rebuilt for T."""
        if self.formula_spec == "two_target":
            formula = build_two_target(T, self.T_d, self.regions, self.system.n)
        else:
            formula = self.formula
        return replace(self, T=T, formula=formula).validate()


def default_scenario(T: int = DEFAULT_T, T_d: int = DEFAULT_TD) -> Scenario:
    sys = double_integrator()
    return Scenario(
        system=sys,
        x0=np.array(DEFAULT_X0),
        formula=build_two_target(T, T_d, DEFAULT_REGIONS, sys.n),
        T=T,
        T_d=T_d,
        regions=dict(DEFAULT_REGIONS),
    ).validate()


def default_scenario_dict(T: int = DEFAULT_T, T_d: int = DEFAULT_TD) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "system": "double_integrator",
        "x0": list(DEFAULT_X0),
        "formula": "two_target",
        "T": T,
        "T_d": T_d,
        "regions": {k: [b.x_lo, b.x_hi, b.y_lo, b.y_hi] for k, b in DEFAULT_REGIONS.items()},
        "smoothing": {"k": 10.0},
        "ccp": {"penalty_weight": 50.0, "quad_weight": 0.001, "restarts": 5, "rng_seed": 0},
    }


_CCP_KEYS = {
    "penalty_weight", "quad_weight", "Q", "R", "max_outer_iter", "cost_tol",
    "restarts", "rng_seed", "init", "qp_tol", "qp_max_iter",
}


def scenario_from_dict(data: dict) -> Scenario:
    """Build a scenario from parsed JSON (see README for the schema)."""
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    sys_spec = data.get("system", "double_integrator")
    if sys_spec == "double_integrator":
        sys = double_integrator()
    elif isinstance(sys_spec, dict):
        try:
            sys = LinearSystem(
                A=sys_spec["A"],
                B=sys_spec["B"],
                x_lo=sys_spec.get("x_lo"),
                x_hi=sys_spec.get("x_hi"),
                u_lo=sys_spec.get("u_lo"),
                u_hi=sys_spec.get("u_hi"),
            )
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"invalid system: {exc}") from None
    else:
        raise ScenarioError(f"unknown system {sys_spec!r}")

    try:
        regions = {name: Box(*map(float, v)) for name, v in data.get("regions", {}).items()}
    except (TypeError, FormulaError) as exc:
        raise ScenarioError(f"invalid region: {exc}") from None
    if "T" not in data:
        raise ScenarioError("scenario needs a horizon T")
    T = int(data["T"])
    T_d = data.get("T_d")
    spec = data.get("formula", "two_target")
    if spec == "two_target":
        if not regions:
            regions = dict(DEFAULT_REGIONS)
        formula = build_two_target(T, int(T_d if T_d is not None else DEFAULT_TD), regions, sys.n)
        T_d = int(T_d if T_d is not None else DEFAULT_TD)
    elif isinstance(spec, str):
        formula = to_nnf(parse(spec, sys.n, regions))
    else:
        raise ScenarioError("formula must be 'two_target' or a formula string")

    ccp_data = dict(data.get("ccp", {}))
    unknown = set(ccp_data) - _CCP_KEYS
    if unknown:
        raise ScenarioError(f"unknown ccp options {sorted(unknown)}")
    try:
        smoothing = SmoothingConfig(float(data.get("smoothing", {}).get("k", 10.0)))
        ccp = CcpConfig(k=smoothing.k, **ccp_data)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid solver options: {exc}") from None
    x0 = np.asarray(data.get("x0", DEFAULT_X0), dtype=float)
    return Scenario(sys, x0, formula, T, T_d, regions, smoothing, ccp, spec).validate()


def load_scenario(path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from None
    return scenario_from_dict(data)
