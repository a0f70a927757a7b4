"""Experiment orchestration: runs, series/snapshot files and the run record."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from chns_tf import __version__
from chns_tf.config import ExperimentConfig, build_config
from chns_tf.diagnostics import (
    boundary_outflow,
    discrete_energy,
    error_norms,
    fit_rates,
    mass,
    physical_energy,
)
from chns_tf.fields import BoundaryCondition, StaggeredVelocity, write_snapshot
from chns_tf.linalg import AccuracyError, SingularSystemError
from chns_tf.mms import (
    ManufacturedSolution,
    initial_shape_relaxation,
    initial_shrinking_bubble,
    random_smooth_field,
)
from chns_tf.schemes import (
    NonlinearSolveError,
    SchemeKind,
    StateHistory,
    StepInput,
    advance,
    initial_state,
    startup_first_level,
)

log = logging.getLogger(__name__)

SERIES_COLUMNS = ("step", "t", "E_analysis", "E_physical", "mass", "div_inf", "newton_iters")
ENERGY_TOL = 1e-10
DEFAULT_MASS_TOL = 1e-8
SOLVER_ERRORS = (SingularSystemError, AccuracyError, NonlinearSolveError, FloatingPointError)


class SolverFailure(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class Assertion:
    name: str
    passed: bool
    detail: str


@dataclass
class RunResult:
    tag: str
    dt: float
    series: str
    snapshots: list
    assertions: list
    final_t: float
    steps: int
    max_newton: int
    mass_drift: float
    errors: Optional[dict] = None
    failure: Optional[str] = None
    mass_balance: Optional[float] = None  # largest one-step defect after wall fluxes


@dataclass
class RunRecord:
    config: dict
    experiment: str
    scheme: str
    pressure_filter: str
    version: str
    status: str = "ok"
    message: str = ""
    runs: list = field(default_factory=list)
    errors_csv: Optional[str] = None
    rates_csv: Optional[str] = None
    rate_table: Optional[dict] = None
    assertions: list = field(default_factory=list)
    wall_clock: float = 0.0

    @property
    def series(self) -> list:
        return [r["series"] for r in self.runs]

    @property
    def snapshots(self) -> list:
        return [s for r in self.runs for s in r["snapshots"]]

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(asdict(self), indent=2, default=str) + "\n")
        return path


# -- one trajectory -----------------------------------------------------------------

def _boundary(cfg: ExperimentConfig) -> BoundaryCondition:
    return BoundaryCondition.rotational() if cfg.boundary == "rotational" else BoundaryCondition()


def _initial(cfg: ExperimentConfig, grid, params, bc):
    if cfg.experiment == "shape_relaxation":
        phi0, vel0 = initial_shape_relaxation(
            grid, cfg.initial.get("arm_width", 0.2), cfg.initial.get("arm_length", 0.7)
        )
        return initial_state(phi0, vel0, params, bc=bc)
    if cfg.experiment == "shrinking_bubble":
        phi0, vel0, p0 = initial_shrinking_bubble(grid, params.epsilon)
        return initial_state(phi0, vel0, params, p0, bc=bc)
    if cfg.experiment == "custom":
        rng = np.random.default_rng(cfg.seed)
        phi0 = random_smooth_field(
            grid, rng, int(cfg.initial.get("modes", 4)), cfg.initial.get("amplitude", 1.0)
        )
        return initial_state(phi0, StaggeredVelocity(grid), params, bc=bc)
    raise ValueError(f"no initial data for {cfg.experiment}")


class _SeriesWriter:
    """Row-per-step CSV, flushed after every row."""

    def __init__(self, path: Path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(SERIES_COLUMNS)
        self._fh.flush()

    def row(self, values):
        self._w.writerow([_fmt(v) for v in values])
        self._fh.flush()

    def close(self):
        self._fh.close()


def _snapshot_steps(times, dt) -> dict:
    return {int(round(t / dt)): t for t in times}


def simulate(cfg: ExperimentConfig, dt: float, outdir: Path, tag: str = "") -> RunResult:
    """Run one trajectory of ``cfg`` with step ``dt`` and write its files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    grid = cfg.grid_for(dt)
    params = cfg.params_for(dt)
    bc = _boundary(cfg)
    nsteps = int(round(cfg.T_final / dt))
    mms = cfg.experiment == "mms_convergence"
    ms = ManufacturedSolution(params) if mms else None

    def sources(t):
        return ms.forcing_at(grid, t) if mms else None

    if mms:
        exact0 = ms.eval_state(grid, 0.0)
        state0 = initial_state(exact0.phi, exact0.vel, params, exact0.p)
    else:
        state0 = _initial(cfg, grid, params, bc)

    prefix = f"{tag}_" if tag else ""
    series_path = outdir / f"{prefix}series.csv"
    snap_dir = outdir / "snapshots"
    snap_steps = _snapshot_steps(cfg.output["snapshot_times"], dt) if not mms else {}
    snapshots = []
    writer = _SeriesWriter(series_path)
    every = cfg.output["series_every"]
    m0 = mass(state0.phi)
    area = grid.area
    energies = []
    masses = []
    max_newton = 0
    drift = 0.0
    # the balance needs divergence-form convection and no sources
    balance = 0.0 if not mms and cfg.convection_form == "divergence" else None
    failure = None

    def predicted_mass(h: StateHistory, step: int) -> float:
        cur, prev = h.current, h.previous
        if step == 1:
            return masses[0] - dt * boundary_outflow(prev.phi, cur.vel)
        older = h_prev.previous
        if cfg.scheme is SchemeKind.BE_LINEAR:
            return masses[-1] - dt * boundary_outflow(prev.phi, cur.vel)
        if cfg.scheme is SchemeKind.BETF_LINEAR:
            conv = 2.0 * prev.phi - older.phi
        else:
            conv = 1.5 * cur.phi - prev.phi + 0.5 * older.phi
        m_tilde = masses[-1] - dt * boundary_outflow(conv, cur.vel)
        return (2.0 * m_tilde + 2.0 * masses[-1] - masses[-2]) / 3.0

    h_prev = None

    def record(h: StateHistory, step: int):
        nonlocal drift, balance
        hist = h if h.previous is not None else StateHistory(h.current, h.current)
        e_an = discrete_energy(hist, params).total
        e_ph = physical_energy(h.current, params)
        m = mass(h.current.phi)
        drift = max(drift, abs(m - m0))
        if balance is not None and step >= 1:
            balance = max(balance, abs(m - predicted_mass(h, step)))
        masses.append(m)
        energies.append(e_an)
        if step % every == 0 or step == nsteps:
            writer.row((step, h.t, e_an, e_ph, m, h.info.div_inf, h.info.newton_iters))
        if step in snap_steps:
            snap_dir.mkdir(exist_ok=True)
            p = snap_dir / f"{prefix}phi_t{snap_steps[step]:g}.csv"
            write_snapshot(p, h.current.phi.values, grid.hx, grid.hy, h.t)
            snapshots.append(str(p))

    h = StateHistory(state0)
    try:
        record(h, 0)
        h = startup_first_level(
            state0, dt, params, bc, cfg.startup, sources(dt),
            exact=(lambda t: ms.eval_state(grid, t)) if mms else None,
            convection_form=cfg.convection_form,
        )
        record(h, 1)
        for step in range(2, nsteps + 1):
            h_prev = h
            inp = StepInput(
                h, dt, params, bc, sources(step * dt),
                pressure_filter=cfg.pressure_filter,
                convection_form=cfg.convection_form,
                require_energy_stability=cfg.energy_assertion,
            )
            h = advance(cfg.scheme, inp, cfg.newton)
            max_newton = max(max_newton, h.info.newton_iters)
            record(h, step)
    except SOLVER_ERRORS as exc:
        failure = f"{type(exc).__name__} at step {h.step + 1}: {exc}"
        log.error("%s: %s", tag or cfg.experiment, failure)
    finally:
        writer.close()

    assertions = []
    if failure is None:
        if cfg.energy_assertion:
            # the energy law starts once both levels come from the filtered scheme
            worst = max(
                (energies[k + 1] - energies[k] - ENERGY_TOL * (1 + abs(energies[k]))
                 for k in range(1, len(energies) - 1)),
                default=-math.inf,
            )
            assertions.append(Assertion(
                f"{prefix}energy_monotone", worst <= 0.0,
                f"largest excess increase {worst:.3e} over {len(energies) - 2} steps",
            ))
        mass_tol = cfg.mass_tolerance
        if mass_tol is None and bc.homogeneous and not mms:
            mass_tol = DEFAULT_MASS_TOL
        if mass_tol is not None:
            assertions.append(Assertion(
                f"{prefix}mass_drift", drift <= mass_tol * area,
                f"max |mass - mass0| = {drift:.3e}, bound {mass_tol * area:.3e}",
            ))
    errs = None
    if mms and failure is None:
        errs = error_norms(h.current, ms.eval_state(grid, h.t))
    return RunResult(
        tag, dt, str(series_path), snapshots, [asdict(a) for a in assertions],
        h.t, h.step, max_newton, drift, errs, failure, balance,
    )


def _simulate_job(args):
    cfg, dt, outdir, tag = args
    return simulate(cfg, dt, outdir, tag)


# -- experiments ------------------------------------------------------------------

def _sweep_member(cfg: ExperimentConfig, name: str) -> ExperimentConfig:
    src = cfg.source
    doc = {
        "experiment": name,
        "scheme": cfg.scheme.value,
        "pressure_filter": cfg.pressure_filter.value,
        "convection_form": cfg.convection_form,
        "S_policy": "3L/dt",
        "newton": cfg.raw.get("newton", {}),
        "seed": cfg.seed,
    }
    if "grid" in src and "n" in src["grid"]:
        doc["grid"] = {"n": src["grid"]["n"]}
    for key in ("T_final", "params", "initial"):
        if key in src:
            doc[key] = src[key]
    if "output" in src and "series_every" in src["output"]:
        doc["output"] = {"series_every": src["output"]["series_every"]}
    # a single member config is only validated for its first step here
    doc["dt"] = cfg.dt_list[0]
    member = build_config(doc)
    if member.boundary == "no_slip":
        member.energy_assertion = True
    return member


def _jobs(cfg: ExperimentConfig, outdir: Path):
    if cfg.experiment == "mms_convergence":
        return [(cfg, dt, outdir / f"dt_{k}", f"dt_{k}") for k, dt in enumerate(cfg.dt_list)]
    if cfg.experiment == "stability_sweep":
        jobs = []
        for name in cfg.sweep_experiments:
            member = _sweep_member(cfg, name)
            for k, dt in enumerate(cfg.dt_list):
                steps = member.T_final / dt
                if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                    from chns_tf.config import ConfigError

                    raise ConfigError(f"dt_list[{k}]", f"{name}: T_final={member.T_final} is not a multiple of {dt}")
                jobs.append((member, dt, outdir / f"{name}_dt_{k}", f"{name}_dt_{k}"))
        return jobs
    return [(cfg, cfg.dt, outdir, "")]


def run_experiment(cfg: ExperimentConfig, output_dir=None, threads: int = 1) -> RunRecord:
    """Execute ``cfg``; every file named in the returned record exists."""
    t0 = time.perf_counter()
    outdir = Path(output_dir or cfg.output["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    record = RunRecord(
        cfg.to_dict(), cfg.experiment, cfg.scheme.value, cfg.pressure_filter.value, __version__
    )
    jobs = _jobs(cfg, outdir)
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_simulate_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_simulate_job(job))
            if results[-1].failure:
                break
    record.runs = [asdict(r) for r in results]
    for r in results:
        record.assertions.extend(r.assertions)

    failures = [r for r in results if r.failure]
    if failures:
        record.status = "failed"
        record.message = "; ".join(f"{r.tag or cfg.experiment}: {r.failure}" for r in failures)
    elif cfg.experiment == "mms_convergence":
        _write_errors(record, results, outdir, cfg)

    if record.status == "ok" and not all(a["passed"] for a in record.assertions):
        record.status = "assertion_failed"
        record.message = "; ".join(a["name"] + ": " + a["detail"] for a in record.assertions if not a["passed"])
    record.wall_clock = time.perf_counter() - t0
    record.write(outdir / "run_record.json")
    return record


ERROR_COLUMNS = ("dt", "h", "err_phi", "err_mu", "err_u", "err_p")


def _write_errors(record: RunRecord, results, outdir: Path, cfg: ExperimentConfig):
    path = outdir / "errors.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ERROR_COLUMNS)
        for r in results:
            h = cfg.grid_for(r.dt).hx
            e = r.errors
            w.writerow([_fmt(r.dt), _fmt(h), _fmt(e["phi"]), _fmt(e["mu"]), _fmt(e["u"]), _fmt(e["p"])])
    record.errors_csv = str(path)
    table = rates_from_errors(path)
    record.rates_csv = str(write_rates(table, outdir / "rates.csv"))
    record.rate_table = {"dts": table.dts, "errors": table.errors, "rates": table.rates, "slopes": table.slopes}
    if cfg.min_rate is not None:
        for var in ("phi", "u"):
            slope = table.slopes[var]
            record.assertions.append(asdict(Assertion(
                f"rate_{var}", slope >= cfg.min_rate, f"least-squares slope {slope:.4f}, required {cfg.min_rate}"
            )))


def rates_from_errors(path):
    """RateTable from an ``errors.csv`` written by an mms run."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    dts = [float(r["dt"]) for r in rows]
    errors = {k[4:]: [float(r[k]) for r in rows] for k in rows[0] if k.startswith("err_")}
    return fit_rates(dts, errors)


def write_rates(table, path) -> Path:
    path = Path(path)
    rows = table.as_rows()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(rows[0]))
        for row in rows:
            w.writerow([_fmt(v) for v in row.values()])
        w.writerow(["slope"] + [_fmt(table.slopes[k[5:]]) if k.startswith("rate_") else "" for k in list(rows[0])[1:]])
    return path
