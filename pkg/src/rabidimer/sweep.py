"""Phase-diagram engine: z_avg over a (g, J) grid with per-cell truncation
checks, append-only checkpointing, resume, classification, and boundary
extraction."""

from __future__ import annotations

import json
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .fockspace import fock_site, make_space, number, product_state, top_level_projector
from .model import DimerParams, build_dimer, default_n_max
from .observables import time_average
from .propagate import EvolutionPlan, TruncationReport, evolve

STATUS_PENDING = "pending"
STATUS_DONE = "done"
STATUS_FAILED = "failed"

LOCALIZED = "localized"
DELOCALIZED = "delocalized"
UNKNOWN = "unknown"

DEFAULT_THRESHOLD = 0.5


def log_axis(lo: float, hi: float, points: int) -> tuple[float, ...]:
    return tuple(np.geomspace(lo, hi, points))


@dataclass(frozen=True)
class GridSpec:
    """Axes and run length of one sweep; values in units of omega0."""

    g_values: tuple[float, ...]
    J_values: tuple[float, ...]
    n_i: int = 20
    T: float = 2.0e4

    def __post_init__(self):
        for name in ("g_values", "J_values"):
            vals = getattr(self, name)
            object.__setattr__(self, name, tuple(float(v) for v in vals))
            if len(getattr(self, name)) == 0:
                raise ValueError(f"{name} must be non-empty")
        if self.n_i < 0 or self.T <= 0:
            raise ValueError("need n_i >= 0 and T > 0")

    @classmethod
    def default(cls) -> "GridSpec":
        # brackets every phase-diagram feature at desk scale
        return cls(g_values=log_axis(0.01, 3.0, 40),
                   J_values=log_axis(0.003, 0.1, 20), n_i=20, T=2.0e4)

    @classmethod
    def ci(cls) -> "GridSpec":
        # same axes at reduced resolution and run length; minutes, not hours
        return cls(g_values=log_axis(0.01, 3.0, 8),
                   J_values=log_axis(0.003, 0.1, 5), n_i=20, T=2.0e3)


@dataclass(frozen=True)
class SweepSettings:
    """Everything about a cell except its (g, J) coordinates."""

    omega0: float = 1.0
    Omega: float = 1.0
    D: float = 0.0
    n_max: int | None = None      # None: per-cell heuristic from n_i and g
    threshold: float = DEFAULT_THRESHOLD
    initial_site: int = 0         # which cavity holds the n_i photons


@dataclass
class PhaseGrid:
    """Sweep results; arrays are indexed [i_J, i_g]."""

    g_values: np.ndarray
    J_values: np.ndarray
    z_avg: np.ndarray
    n_max_used: np.ndarray
    status: np.ndarray
    n_i: int
    T: float

    @classmethod
    def empty(cls, grid: GridSpec) -> "PhaseGrid":
        shape = (len(grid.J_values), len(grid.g_values))
        return cls(g_values=np.array(grid.g_values),
                   J_values=np.array(grid.J_values),
                   z_avg=np.full(shape, np.nan),
                   n_max_used=np.full(shape, -1, dtype=int),
                   status=np.full(shape, STATUS_PENDING, dtype="<U7"),
                   n_i=grid.n_i, T=grid.T)

    def classify(self, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
        """localized where z_avg/n_i >= threshold, delocalized elsewhere,
        unknown for pending/failed cells."""
        labels = np.full(self.status.shape, UNKNOWN, dtype="<U12")
        done = self.status == STATUS_DONE
        frac = self.z_avg / max(self.n_i, 1)
        labels[done & (frac >= threshold)] = LOCALIZED
        labels[done & (frac < threshold)] = DELOCALIZED
        return labels


@dataclass(frozen=True)
class _CellTask:
    i_j: int
    i_g: int
    g: float
    J: float
    omega0: float
    Omega: float
    D: float
    n_i: int
    n_max: int
    initial_site: int
    t_final: float
    dt_sample: float
    engine: str
    krylov_dim: int
    step_tol: float


def _evaluate_cell(task: _CellTask) -> dict:
    # Truncation guard: occupation of the truncation edge must stay below
    # TruncationReport.MASS_TOL for the whole run.  A two-truncation pointwise
    # z comparison is not usable here: chaotic cells diverge pointwise within
    # one photon-burst time at any n_max while their time averages agree, so it
    # would reject exactly the cells the map is about.
    started = time.monotonic()
    record = {"kind": "cell", "i_j": task.i_j, "i_g": task.i_g,
              "g": task.g, "J": task.J, "n_max": task.n_max}
    try:
        params = DimerParams.identical(omega0=task.omega0, Omega=task.Omega,
                                       g=task.g, J=task.J, D=task.D)
        plan = EvolutionPlan(t_final=task.t_final, dt_sample=task.dt_sample,
                             engine=task.engine, krylov_dim=task.krylov_dim,
                             step_tol=task.step_tol)
        sites = [fock_site(0), fock_site(0)]
        sites[task.initial_site] = fock_site(task.n_i)
        space = make_space(task.n_max, 2)
        h = build_dimer(space, params)
        psi0 = product_state(space, sites)
        z_op = number(space, 0) - number(space, 1)
        z, top = evolve(h, psi0, plan, [z_op, top_level_projector(space)],
                        ["z", "top_mass"])
        mass = float(np.max(top.values))
        passed = mass < TruncationReport.MASS_TOL
        record.update(z_avg=time_average(z) if passed else None,
                      top_level_mass=mass,
                      status=STATUS_DONE if passed else STATUS_FAILED,
                      error=None if passed else "truncation edge occupied")
    except Exception as exc:  # per-cell failures must not abort the sweep
        record.update(z_avg=None, top_level_mass=None,
                      status=STATUS_FAILED, error=f"{type(exc).__name__}: {exc}")
    record["elapsed"] = time.monotonic() - started
    return record


def _header_record(grid: GridSpec, settings: SweepSettings, plan: EvolutionPlan) -> dict:
    return {"kind": "header", "g_values": list(grid.g_values),
            "J_values": list(grid.J_values), "n_i": grid.n_i, "T": grid.T,
            "settings": asdict(settings),
            "plan": {"dt_sample": plan.dt_sample, "engine": plan.engine,
                     "krylov_dim": plan.krylov_dim, "step_tol": plan.step_tol}}


def _load_checkpoint(path: str, header: dict) -> list[dict]:
    """Replay a checkpoint log, ignoring a torn final line."""
    if not os.path.exists(path):
        return []
    cells = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                warnings.warn("checkpoint ends in a torn record; ignoring it")
                continue
            raise
        if rec.get("kind") == "header":
            if rec != header:
                raise ValueError("checkpoint was written for a different sweep "
                                 f"configuration: {path}")
        elif rec.get("kind") == "cell":
            cells.append(rec)
    return cells


def _apply_record(grid: PhaseGrid, rec: dict):
    i_j, i_g = rec["i_j"], rec["i_g"]
    grid.z_avg[i_j, i_g] = np.nan if rec["z_avg"] is None else rec["z_avg"]
    grid.n_max_used[i_j, i_g] = rec["n_max"]
    grid.status[i_j, i_g] = rec["status"]


def run_sweep(grid: GridSpec, settings: SweepSettings, plan: EvolutionPlan,
              workers: int = 1, checkpoint: str | None = None) -> PhaseGrid:
    """Evaluate z_avg over the grid; resumable and failure-tolerant.

    plan.t_final is superseded by grid.T (the grid owns the run length).
    Every completed cell is appended to the checkpoint before the next one
    starts, so a killed sweep resumes without recomputation.
    """
    plan = replace(plan, t_final=grid.T)
    result = PhaseGrid.empty(grid)
    header = _header_record(grid, settings, plan)

    seen: set[tuple[int, int]] = set()
    log_fh = None
    if checkpoint:
        for rec in _load_checkpoint(checkpoint, header):
            _apply_record(result, rec)
            seen.add((rec["i_j"], rec["i_g"]))
        fresh = not os.path.exists(checkpoint) or not seen
        log_fh = open(checkpoint, "a", encoding="utf-8")
        if fresh and os.path.getsize(checkpoint) == 0:
            log_fh.write(json.dumps(header) + "\n")
            log_fh.flush()

    tasks = []
    for i_j, J in enumerate(grid.J_values):
        for i_g, g in enumerate(grid.g_values):
            if (i_j, i_g) in seen:
                continue
            n_max = settings.n_max if settings.n_max is not None \
                else default_n_max(grid.n_i, g, settings.omega0)
            tasks.append(_CellTask(i_j=i_j, i_g=i_g, g=g, J=J,
                                   omega0=settings.omega0, Omega=settings.Omega,
                                   D=settings.D, n_i=grid.n_i, n_max=n_max,
                                   initial_site=settings.initial_site,
                                   t_final=grid.T, dt_sample=plan.dt_sample,
                                   engine=plan.engine, krylov_dim=plan.krylov_dim,
                                   step_tol=plan.step_tol))

    def consume(rec):
        _apply_record(result, rec)
        if log_fh:
            log_fh.write(json.dumps(rec) + "\n")
            log_fh.flush()

    try:
        if workers <= 1:
            for task in tasks:
                consume(_evaluate_cell(task))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(_evaluate_cell, t) for t in tasks]
                for fut in as_completed(futures):
                    consume(fut.result())
    finally:
        if log_fh:
            log_fh.close()
    return result


def row_critical_points(labels_row: np.ndarray, g_values: np.ndarray
                        ) -> tuple[float | None, float | None]:
    """(g_c1, g_c2) for one J row: midpoints of the delocalized->localized
    and the following localized->delocalized label changes, if present."""
    g_c1 = g_c2 = None
    for i in range(len(g_values) - 1):
        a, b = labels_row[i], labels_row[i + 1]
        mid = 0.5 * (g_values[i] + g_values[i + 1])
        if g_c1 is None and a == DELOCALIZED and b == LOCALIZED:
            g_c1 = mid
        elif g_c1 is not None and g_c2 is None and a == LOCALIZED and b == DELOCALIZED:
            g_c2 = mid
    return g_c1, g_c2


@dataclass(frozen=True)
class BoundaryReport:
    """Label-change midpoints plus the largest J that still localizes."""

    points: tuple[tuple[float, float], ...]
    J_c: float | None


def boundary_extract(labels: np.ndarray, g_values: np.ndarray,
                     J_values: np.ndarray) -> BoundaryReport:
    points = []
    n_j, n_g = labels.shape
    for i_j in range(n_j):
        for i_g in range(n_g - 1):
            a, b = labels[i_j, i_g], labels[i_j, i_g + 1]
            if UNKNOWN not in (a, b) and a != b:
                points.append((0.5 * (g_values[i_g] + g_values[i_g + 1]),
                               float(J_values[i_j])))
    for i_g in range(n_g):
        for i_j in range(n_j - 1):
            a, b = labels[i_j, i_g], labels[i_j + 1, i_g]
            if UNKNOWN not in (a, b) and a != b:
                points.append((float(g_values[i_g]),
                               0.5 * (J_values[i_j] + J_values[i_j + 1])))
    localized_rows = [float(J_values[i]) for i in range(n_j)
                      if (labels[i] == LOCALIZED).any()]
    j_c = max(localized_rows) if localized_rows else None
    return BoundaryReport(points=tuple(points), J_c=j_c)


def write_phase_outputs(grid: PhaseGrid, threshold: float, out_dir: str,
                        formats: Sequence[str] = ("csv", "json", "dat"),
                        extra_meta: dict | None = None) -> list[str]:
    """Emit phase_grid.csv / phase_grid.json / phase_points.dat."""
    os.makedirs(out_dir, exist_ok=True)
    labels = grid.classify(threshold)
    written = []

    if "csv" in formats:
        path = os.path.join(out_dir, "phase_grid.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# z_avg over the (g, J) grid; one row per J, one column per g\n")
            fh.write("# first column: J; remaining columns: g values listed below\n")
            fh.write("# g, " + ", ".join(f"{g:.17g}" for g in grid.g_values) + "\n")
            for i_j, J in enumerate(grid.J_values):
                row = ", ".join(f"{z:.17g}" for z in grid.z_avg[i_j])
                fh.write(f"{J:.17g}, {row}\n")
        written.append(path)

    if "json" in formats:
        failures = [{"i_j": int(i_j), "i_g": int(i_g),
                     "g": float(grid.g_values[i_g]), "J": float(grid.J_values[i_j])}
                    for i_j, i_g in zip(*np.nonzero(grid.status == STATUS_FAILED))]
        payload = {"g_values": grid.g_values.tolist(),
                   "J_values": grid.J_values.tolist(),
                   "n_i": grid.n_i, "T": grid.T, "threshold": threshold,
                   "z_avg": [[None if np.isnan(z) else z for z in row]
                             for row in grid.z_avg],
                   "n_max_used": grid.n_max_used.tolist(),
                   "status": grid.status.tolist(),
                   "labels": labels.tolist(),
                   "failures": failures}
        if extra_meta:
            payload.update(extra_meta)
        path = os.path.join(out_dir, "phase_grid.json")
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        written.append(path)

    if "dat" in formats:
        path = os.path.join(out_dir, "phase_points.dat")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# g J z_avg label\n")
            for i_j, J in enumerate(grid.J_values):
                for i_g, g in enumerate(grid.g_values):
                    fh.write(f"{g:.17g} {J:.17g} {grid.z_avg[i_j, i_g]:.17g} "
                             f"{labels[i_j, i_g]}\n")
                fh.write("\n")
        written.append(path)
    return written
