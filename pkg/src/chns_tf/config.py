"""Strict JSON experiment configs with per-experiment defaults."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional

from chns_tf.model import GridSpec, PhysicalParams
from chns_tf.schemes import NewtonSettings, PressureFilter, SchemeKind

EXPERIMENTS = ("mms_convergence", "shape_relaxation", "shrinking_bubble", "stability_sweep", "custom")
PHYSICAL = ("shape_relaxation", "shrinking_bubble")
TWO_PI = 2.0 * math.pi


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


PRESETS: dict = {
    "mms_convergence": {
        "scheme": "betf_linear",
        "grid": {"n": 8},
        "params": {"epsilon": 0.2, "mobility_M": 0.01, "gamma": 1.0, "nu": 1.0, "S_stab": 1.0},
        "S_policy": "fixed",
        "dt_list": [1 / 8, 1 / 16, 1 / 32, 1 / 64],
        "dt_equals_h": True,
        "T_final": 1.0,
        "boundary": "no_slip",
    },
    "shape_relaxation": {
        "scheme": "betf_linear",
        "grid": {"n": 64},
        "params": {"epsilon": 0.02, "mobility_M": 0.01, "gamma": 0.01, "nu": 1.0},
        "S_policy": "3L/dt",
        "dt": 0.1,
        "T_final": 10.0,
        "boundary": "rotational",
        "output": {"snapshot_times": [0, 1, 2, 3, 5, 10]},
    },
    "shrinking_bubble": {
        "scheme": "betf_linear",
        "grid": {"n": 64, "Lx": TWO_PI, "Ly": TWO_PI},
        "params": {"epsilon": 0.15, "mobility_M": 0.4, "gamma": 0.01, "nu": 1.0},
        "S_policy": "3L/dt",
        "dt": 0.1,
        "T_final": 15.0,
        "boundary": "no_slip",
        "energy_assertion": True,
        "output": {"snapshot_times": [0, 2, 3, 5, 7, 15]},
    },
    "stability_sweep": {
        "scheme": "betf_linear",
        # members take their own grids; this only satisfies the common checks
        "grid": {"n": 64},
        "S_policy": "3L/dt",
        "dt_list": [0.1, 0.2, 0.5, 1.0],
        "sweep_experiments": ["shape_relaxation", "shrinking_bubble"],
    },
    "custom": {
        "scheme": "betf_linear",
        "grid": {"n": 32},
        "params": {"epsilon": 1.0, "mobility_M": 1.0, "gamma": 1.0, "nu": 1.0, "lambda_mix": 1.0},
        "S_policy": "3L/dt",
        "dt": 0.1,
        "T_final": 1.0,
        "boundary": "no_slip",
        "energy_assertion": True,
    },
}

BASE: dict = {
    "experiment": None,
    "scheme": "betf_linear",
    "pressure_filter": "option_a",
    "convection_form": "divergence",
    "grid": {},
    "params": {},
    "S_policy": "fixed",
    "dt": None,
    "dt_list": None,
    "dt_equals_h": False,
    "T_final": 1.0,
    "startup": "be_step",
    "boundary": "no_slip",
    "energy_assertion": False,
    "mass_tolerance": None,
    "min_rate": None,
    "newton": {},
    "initial": {},
    "sweep_experiments": None,
    "output": {},
    "seed": 0,
}

GRID_KEYS = ("n", "nx", "ny", "x0", "y0", "Lx", "Ly")
PARAM_KEYS = ("epsilon", "mobility_M", "gamma", "nu", "lambda_mix", "L_lipschitz", "S_stab")
NEWTON_KEYS = ("abs_tol", "rel_tol", "max_iters", "divergence_guard")
INITIAL_KEYS = ("arm_width", "arm_length", "modes", "amplitude")
OUTPUT_KEYS = ("directory", "snapshot_times", "series_every")
OUTPUT_DEFAULTS = {"directory": "chns_output", "snapshot_times": [], "series_every": 1}


@dataclass
class ExperimentConfig:
    experiment: str
    scheme: SchemeKind
    pressure_filter: PressureFilter
    convection_form: str
    grid: GridSpec
    params: PhysicalParams
    S_policy: str
    dt: Optional[float]
    dt_list: Optional[list]
    dt_equals_h: bool
    T_final: float
    startup: str
    boundary: str
    energy_assertion: bool
    mass_tolerance: Optional[float]
    min_rate: Optional[float]
    newton: NewtonSettings
    initial: dict
    sweep_experiments: Optional[list]
    output: dict
    seed: int
    raw: dict = field(default_factory=dict, repr=False)
    source: dict = field(default_factory=dict, repr=False)

    def params_for(self, dt: float) -> PhysicalParams:
        """Parameters with the stabilization set by ``S_policy``."""
        if self.S_policy == "3L/dt":
            return self.params.with_updates(S_stab=3.0 * self.params.L_lipschitz / dt)
        return self.params

    def grid_for(self, dt: float) -> GridSpec:
        """Grid of one run; with ``dt_equals_h`` the cell count follows ``dt``."""
        if not self.dt_equals_h:
            return self.grid
        n = int(round(self.grid.Lx / dt))
        return GridSpec(n, n, self.grid.x0, self.grid.y0, self.grid.Lx, self.grid.Ly)

    @property
    def steps_list(self) -> list:
        return self.dt_list if self.dt_list else [self.dt]

    def to_dict(self) -> dict:
        out = copy.deepcopy(self.raw)
        out["params"] = {k: v for k, v in asdict(self.params).items()}
        return out


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(path, f"expected an object, got {type(obj).__name__}")
    for k in obj:
        if k not in allowed:
            where = f"{path}.{k}" if path else k
            raise ConfigError(where, "unknown key")


def _number(value, path, positive=False, nonneg=False, allow_none=False):
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(path, "must be finite")
    if positive and value <= 0:
        raise ConfigError(path, f"must be positive, got {value!r}")
    if nonneg and value < 0:
        raise ConfigError(path, f"must be non-negative, got {value!r}")
    return value


def _choice(value, options, path):
    if value not in options:
        raise ConfigError(path, f"must be one of {', '.join(options)}; got {value!r}")
    return value


def _bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true or false, got {value!r}")
    return value


def _integer_steps(T, dt, path):
    steps = T / dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError(path, f"T_final={T} is not a whole number of steps of {dt}")
    return int(round(steps))


def parse_config(text: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse and validate a JSON config document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return build_config(doc, overrides)


def build_config(doc: Any, overrides: Optional[dict] = None) -> ExperimentConfig:
    _check_keys(doc, BASE, "")
    if "experiment" not in doc:
        raise ConfigError("experiment", "required")
    exp = _choice(doc["experiment"], EXPERIMENTS, "experiment")
    merged = _merge(_merge(BASE, PRESETS[exp]), doc)
    if overrides:
        merged = _merge(merged, overrides)

    scheme = SchemeKind(_choice(merged["scheme"], [k.value for k in SchemeKind], "scheme"))
    pfilter = PressureFilter(_choice(merged["pressure_filter"], [k.value for k in PressureFilter], "pressure_filter"))
    conv = _choice(merged["convection_form"], ("divergence", "advective"), "convection_form")

    # grid
    gdoc = merged["grid"]
    _check_keys(gdoc, GRID_KEYS, "grid")
    n = gdoc.get("n")
    nx, ny = gdoc.get("nx", n), gdoc.get("ny", n)
    for key, val in (("nx", nx), ("ny", ny)):
        if isinstance(val, bool) or not isinstance(val, int) or val < 4:
            raise ConfigError(f"grid.{key if key in gdoc or n is None else 'n'}", f"needs an integer >= 4, got {val!r}")
    Lx = _number(gdoc.get("Lx", 1.0), "grid.Lx", positive=True)
    Ly = _number(gdoc.get("Ly", Lx), "grid.Ly", positive=True)
    grid = GridSpec(nx, ny, _number(gdoc.get("x0", 0.0), "grid.x0"), _number(gdoc.get("y0", 0.0), "grid.y0"), Lx, Ly)
    if not grid.is_uniform:
        raise ConfigError("grid", f"hx={grid.hx} and hy={grid.hy} differ; anisotropic grids are not supported")

    # parameters
    pdoc = merged["params"]
    _check_keys(pdoc, PARAM_KEYS, "params")
    pvals = {}
    for k, v in pdoc.items():
        if k == "lambda_mix" and v is None:
            continue
        pvals[k] = _number(v, f"params.{k}")
    try:
        params = PhysicalParams(**pvals)
    except ValueError as exc:
        name = str(exc).split()[0]
        raise ConfigError(f"params.{name}", str(exc)) from exc
    s_policy = _choice(merged["S_policy"], ("fixed", "3L/dt"), "S_policy")

    # time stepping
    dt = _number(merged["dt"], "dt", positive=True, allow_none=True)
    dt_list = merged["dt_list"]
    if dt_list is not None:
        if not isinstance(dt_list, list) or not dt_list:
            raise ConfigError("dt_list", "must be a non-empty list of positive numbers")
        dt_list = [_number(v, f"dt_list[{i}]", positive=True) for i, v in enumerate(dt_list)]
    T = _number(merged["T_final"], "T_final", positive=True)
    dt_equals_h = _bool(merged["dt_equals_h"], "dt_equals_h")
    startup = _choice(merged["startup"], ("be_step", "exact_injection"), "startup")
    boundary = _choice(merged["boundary"], ("no_slip", "rotational"), "boundary")
    energy_assertion = _bool(merged["energy_assertion"], "energy_assertion")
    mass_tol = _number(merged["mass_tolerance"], "mass_tolerance", positive=True, allow_none=True)
    min_rate = _number(merged["min_rate"], "min_rate", allow_none=True)

    if exp == "mms_convergence":
        if not dt_list:
            raise ConfigError("dt_list", "mms_convergence needs a non-empty dt_list")
        if len(dt_list) < 2:
            raise ConfigError("dt_list", "mms_convergence needs at least two steps")
        for i in range(1, len(dt_list)):
            if not math.isclose(dt_list[i], dt_list[i - 1] / 2, rel_tol=1e-12):
                raise ConfigError(f"dt_list[{i}]", "successive steps must halve")
        if not dt_equals_h:
            raise ConfigError("dt_equals_h", "mms_convergence couples the step to the mesh; set it to true")
        if grid.x0 != 0 or grid.y0 != 0 or grid.Lx != 1 or grid.Ly != 1:
            raise ConfigError("grid", "the manufactured solution lives on the unit square")
    elif exp == "stability_sweep":
        if scheme is SchemeKind.BE_LINEAR:
            raise ConfigError("scheme", "stability_sweep needs a filtered scheme (betf_linear or betf_nonlinear)")
        if s_policy != "3L/dt":
            raise ConfigError("S_policy", "stability_sweep needs S_policy \"3L/dt\"")
        if not dt_list:
            raise ConfigError("dt_list", "stability_sweep needs a non-empty dt_list")
    else:
        if dt is None:
            if dt_list:
                raise ConfigError("dt_list", f"{exp} takes a single dt")
            raise ConfigError("dt", "required")
        if startup == "exact_injection":
            raise ConfigError("startup", "exact_injection is only available for mms_convergence")
    if dt_equals_h and exp != "mms_convergence":
        raise ConfigError("dt_equals_h", "only meaningful for mms_convergence")

    runs = dt_list if exp in ("mms_convergence", "stability_sweep") else [dt]
    if exp != "stability_sweep":
        for i, step in enumerate(runs):
            path = f"dt_list[{i}]" if exp == "mms_convergence" else "dt"
            _integer_steps(T, step, path)
            if dt_equals_h:
                nn = grid.Lx / step
                if abs(nn - round(nn)) > 1e-9 or round(nn) < 4:
                    raise ConfigError(path, f"dt={step} does not divide the unit interval into >= 4 cells")

    # sweep members
    sweep = merged["sweep_experiments"]
    if exp == "stability_sweep":
        if not isinstance(sweep, list) or not sweep:
            raise ConfigError("sweep_experiments", "needs a non-empty list")
        for i, name in enumerate(sweep):
            _choice(name, PHYSICAL, f"sweep_experiments[{i}]")
    elif sweep is not None:
        raise ConfigError("sweep_experiments", "only used by stability_sweep")

    # stability guard
    if energy_assertion and s_policy == "fixed":
        for step in runs:
            if not params.energy_stable(step):
                raise ConfigError(
                    "params.S_stab",
                    f"S*dt = {params.S_stab * step:.6g} < 3L = {3 * params.L_lipschitz:.6g} "
                    "with energy_assertion enabled",
                )
    if energy_assertion and boundary != "no_slip":
        raise ConfigError("energy_assertion", "the energy law only covers homogeneous (no_slip) walls")

    ndoc = merged["newton"]
    _check_keys(ndoc, NEWTON_KEYS, "newton")
    try:
        newton = NewtonSettings(**ndoc)
    except (TypeError, ValueError) as exc:
        raise ConfigError("newton", str(exc)) from exc

    idoc = merged["initial"]
    _check_keys(idoc, INITIAL_KEYS, "initial")
    for k, v in idoc.items():
        _number(v, f"initial.{k}", positive=True)

    odoc = _merge(OUTPUT_DEFAULTS, merged["output"])
    _check_keys(odoc, OUTPUT_KEYS, "output")
    if not isinstance(odoc["directory"], str) or not odoc["directory"]:
        raise ConfigError("output.directory", "must be a non-empty string")
    snaps = odoc["snapshot_times"]
    if not isinstance(snaps, list):
        raise ConfigError("output.snapshot_times", "must be a list")
    snaps = [_number(v, f"output.snapshot_times[{i}]", nonneg=True) for i, v in enumerate(snaps)]
    if exp not in ("stability_sweep", "mms_convergence"):
        for i, ts in enumerate(snaps):
            if ts > T * (1 + 1e-12):
                raise ConfigError(f"output.snapshot_times[{i}]", f"{ts} is after T_final={T}")
            k = ts / dt
            if abs(k - round(k)) > 1e-9 * max(1.0, k):
                raise ConfigError(f"output.snapshot_times[{i}]", f"{ts} is not a multiple of dt={dt}")
    odoc["snapshot_times"] = snaps
    every = odoc["series_every"]
    if isinstance(every, bool) or not isinstance(every, int) or every < 1:
        raise ConfigError("output.series_every", "must be a positive integer")

    seed = merged["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "must be a non-negative integer")

    return ExperimentConfig(
        experiment=exp,
        scheme=scheme,
        pressure_filter=pfilter,
        convection_form=conv,
        grid=grid,
        params=params,
        S_policy=s_policy,
        dt=dt,
        dt_list=dt_list,
        dt_equals_h=dt_equals_h,
        T_final=T,
        startup=startup,
        boundary=boundary,
        energy_assertion=energy_assertion,
        mass_tolerance=mass_tol,
        min_rate=min_rate,
        newton=newton,
        initial=dict(idoc),
        sweep_experiments=list(sweep) if sweep else None,
        output=odoc,
        seed=seed,
        raw=merged,
        source=copy.deepcopy(doc),
    )
