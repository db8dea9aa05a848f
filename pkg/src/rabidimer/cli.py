"""Command-line surface: evolve / sweep / spectrum / trajectories / renorm.

Every subcommand reads one JSON config, validates it strictly (unknown keys
rejected, field-path diagnostics), runs the corresponding library routine,
and leaves a resolved-config copy next to its artifacts.  Exit codes:
0 success, 2 config error, 3 truncation-check failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .fileio import write_json, write_timeseries_csv
from .fockspace import (DOWN, UP, SiteSpec, TruncationError, coherent_site,
                        fock_site, make_space, number, pauli, product_state,
                        top_level_projector)
from .krylov import KrylovError
from .model import (DimerParams, build_dimer, build_rabi, default_n_max,
                    params_from_config, squeeze_parameter, a2_renormalize)
from .observables import imbalance, summarize
from .propagate import (ENGINES, EvolutionPlan, NumericalError, TimeSeries,
                        TruncationReport, evolve)
from .spectral import (CompletenessError, EigensolveError, diagonal_ensemble,
                       eigensolve, level_spacing_variance, overlaps)
from .sweep import (GridSpec, SweepSettings, boundary_extract, run_sweep,
                    write_phase_outputs)
from .trajectories import DampingConfig, run_trajectories

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRUNCATION = 3
EXIT_NUMERICAL = 4

_FORMATS = ("csv", "json", "dat")


class ConfigError(Exception):
    """Invalid config document; message carries the offending field path."""


# ---------------------------------------------------------------- schema

_MISSING = object()


def _typename(kind) -> str:
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return kind.__name__


def _coerce(value, kind, path):
    # bool is an int subclass; keep the two apart in configs
    if kind is float and isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got a boolean")
    if kind is float and isinstance(value, (int, float)):
        return float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(f"{path}: expected an integer, got a boolean")
    if kind is int and isinstance(value, int):
        return value
    if isinstance(kind, tuple):
        if any(isinstance(value, k) for k in kind):
            return value
    elif isinstance(value, kind):
        return value
    raise ConfigError(f"{path}: expected {_typename(kind)}, "
                      f"got {type(value).__name__}")


def _block(cfg: dict, name: str, required: bool = False) -> dict:
    if name not in cfg:
        if required:
            raise ConfigError(f"missing required block '{name}'")
        return {}
    block = cfg[name]
    if not isinstance(block, dict):
        raise ConfigError(f"{name}: expected an object")
    return dict(block)  # copy; parsers pop keys and report leftovers


def _take(block: dict, path: str, key: str, kind, default=_MISSING):
    if key not in block:
        if default is _MISSING:
            raise ConfigError(f"{path}.{key}: required key is missing")
        return default
    value = block.pop(key)
    if value is None and default is None:
        return None
    return _coerce(value, kind, f"{path}.{key}")


def _done(block: dict, path: str):
    if block:
        raise ConfigError(f"{path}: unknown keys {sorted(block)}")


def _allowed_blocks(cfg: dict, names: tuple[str, ...]):
    unknown = set(cfg) - set(names)
    if unknown:
        raise ConfigError(f"unknown top-level blocks {sorted(unknown)}; "
                          f"this command accepts {list(names)}")


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}, "
                          f"column {exc.colno}: {exc.msg}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return cfg


# ------------------------------------------------------------- block parsers


def _parse_model(cfg: dict) -> tuple[DimerParams, int | None, bool, int]:
    block = _block(cfg, "model", required=True)
    sites = _take(block, "model", "sites", int, 2)
    if sites not in (1, 2):
        raise ConfigError(f"model.sites: must be 1 or 2, got {sites}")
    keys = {"omega0": _take(block, "model", "omega0", float, 1.0),
            "Omega": _take(block, "model", "Omega", float, 1.0),
            "g": _take(block, "model", "g", float, 0.0),
            "J": _take(block, "model", "J", float, 0.0),
            "D": _take(block, "model", "D", float, 0.0),
            "n_max": _take(block, "model", "n_max", int, None),
            "jc_only": _take(block, "model", "jc_only", bool, False)}
    _done(block, "model")
    if keys["omega0"] <= 0:
        raise ConfigError("model.omega0: must be > 0")
    for name in ("Omega", "g", "J", "D"):
        if keys[name] < 0:
            raise ConfigError(f"model.{name}: must be >= 0")
    if keys["n_max"] is not None and keys["n_max"] < 1:
        raise ConfigError("model.n_max: must be >= 1")
    if sites == 1 and keys["J"] != 0.0:
        raise ConfigError("model.J: hopping needs sites=2")
    params, n_max, jc_only = params_from_config(keys)
    return params, n_max, jc_only, sites


_QUBITS = {"down": DOWN, "up": UP}


def _parse_site_spec(entry, path: str) -> tuple[SiteSpec, float]:
    """Returns the spec plus its initial photon expectation value."""
    if not isinstance(entry, dict):
        raise ConfigError(f"{path}: expected an object")
    entry = dict(entry)
    kind = _take(entry, path, "kind", str, "fock")
    qubit_name = _take(entry, path, "qubit", str, "down").lower()
    if qubit_name not in _QUBITS:
        raise ConfigError(f"{path}.qubit: must be 'down' or 'up'")
    qubit = _QUBITS[qubit_name]
    if kind == "fock":
        n = _take(entry, path, "n", int, 0)
        _done(entry, path)
        if n < 0:
            raise ConfigError(f"{path}.n: must be >= 0")
        return fock_site(n, qubit), float(n)
    if kind == "coherent":
        raw = entry.pop("alpha", 0.0)
        _done(entry, path)
        if isinstance(raw, (list, tuple)) and len(raw) == 2:
            alpha = complex(float(raw[0]), float(raw[1]))
        elif isinstance(raw, (int, float)) and not isinstance(raw, bool):
            alpha = complex(raw)
        else:
            raise ConfigError(f"{path}.alpha: expected a number or [re, im]")
        return coherent_site(alpha, qubit), abs(alpha) ** 2
    raise ConfigError(f"{path}.kind: must be 'fock' or 'coherent'")


def _parse_initial(cfg: dict, sites: int) -> tuple[list[SiteSpec], float]:
    block = _block(cfg, "initial_state", required=True)
    entries = block.pop("sites", None)
    _done(block, "initial_state")
    if not isinstance(entries, list):
        raise ConfigError("initial_state.sites: expected a list")
    if len(entries) != sites:
        raise ConfigError(f"initial_state.sites: expected {sites} entries, "
                          f"got {len(entries)}")
    specs, n0 = [], 0.0
    for i, entry in enumerate(entries):
        spec, n = _parse_site_spec(entry, f"initial_state.sites[{i}]")
        specs.append(spec)
        n0 += n
    return specs, n0


def _parse_evolution(cfg: dict, *, need_t_final: bool = True,
                     default_t_final: float | None = None) -> EvolutionPlan:
    block = _block(cfg, "evolution", required=need_t_final and default_t_final is None)
    if need_t_final:
        t_final = _take(block, "evolution", "t_final", float, default_t_final)
        if t_final is None:
            raise ConfigError("evolution.t_final: required key is missing")
    else:
        if "t_final" in block:
            raise ConfigError("evolution.t_final: not allowed here "
                              "(the sweep grid owns the run length)")
        t_final = 1.0  # placeholder; run_sweep replaces it with grid.T
    fields = {"t_final": t_final,
              "dt_sample": _take(block, "evolution", "dt_sample", float, 1.0),
              "engine": _take(block, "evolution", "engine", str, "auto"),
              "krylov_dim": _take(block, "evolution", "krylov_dim", int, 30),
              "step_tol": _take(block, "evolution", "step_tol", float, 1e-9)}
    _done(block, "evolution")
    if fields["engine"] not in ENGINES:
        raise ConfigError(f"evolution.engine: must be one of {ENGINES}")
    if not 0 < fields["dt_sample"] <= fields["t_final"]:
        raise ConfigError("evolution.dt_sample: need 0 < dt_sample <= t_final")
    if fields["krylov_dim"] < 4:
        raise ConfigError("evolution.krylov_dim: must be >= 4")
    if fields["step_tol"] <= 0:
        raise ConfigError("evolution.step_tol: must be > 0")
    return EvolutionPlan(**fields)


def _parse_truncation(cfg: dict) -> tuple[bool, int]:
    block = _block(cfg, "truncation")
    check = _take(block, "truncation", "check", bool, True)
    delta_n = _take(block, "truncation", "delta_n", int, 8)
    _done(block, "truncation")
    if delta_n < 4:
        raise ConfigError("truncation.delta_n: must be >= 4")
    return check, delta_n


def _parse_output(cfg: dict, out_flag: str | None, command: str) -> tuple[str, tuple[str, ...]]:
    block = _block(cfg, "output")
    directory = _take(block, "output", "directory", str, None)
    formats = _take(block, "output", "formats", list, list(_FORMATS))
    _done(block, "output")
    for fmt in formats:
        if fmt not in _FORMATS:
            raise ConfigError(f"output.formats: unknown format {fmt!r}")
    out_dir = out_flag or directory or f"{command}_out"
    return out_dir, tuple(formats)


def _parse_axis(block: dict, path: str) -> tuple[float, ...]:
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object")
    block = dict(block)
    if "values" in block:
        values = block.pop("values")
        _done(block, path)
        if not isinstance(values, list) or not values:
            raise ConfigError(f"{path}.values: expected a non-empty list")
        out = tuple(_coerce(v, float, f"{path}.values") for v in values)
    else:
        lo = _take(block, path, "min", float)
        hi = _take(block, path, "max", float)
        points = _take(block, path, "points", int)
        scale = _take(block, path, "scale", str, "log")
        _done(block, path)
        if points < 1:
            raise ConfigError(f"{path}.points: must be >= 1")
        if scale not in ("log", "linear"):
            raise ConfigError(f"{path}.scale: must be 'log' or 'linear'")
        if scale == "log" and (lo <= 0 or hi <= 0):
            raise ConfigError(f"{path}: log scale needs positive bounds")
        if points == 1:
            out = (lo,)
        elif scale == "log":
            out = tuple(np.geomspace(lo, hi, points))
        else:
            out = tuple(np.linspace(lo, hi, points))
    if any(v < 0 for v in out):
        raise ConfigError(f"{path}: values must be >= 0")
    return out


def _parse_sweep(cfg: dict, params: DimerParams, n_max: int | None
                 ) -> tuple[GridSpec, SweepSettings, float, str | None]:
    if params.left.g != 0.0 or params.J != 0.0:
        raise ConfigError("model.g / model.J: not allowed for sweep "
                          "(the grid supplies both axes)")
    block = _block(cfg, "sweep", required=True)
    preset = _take(block, "sweep", "preset", str, None)
    base = None
    if preset is not None:
        if preset == "default":
            base = GridSpec.default()
        elif preset == "ci":
            base = GridSpec.ci()
        else:
            raise ConfigError("sweep.preset: must be 'default' or 'ci'")
    g_axis = (_parse_axis(block.pop("g"), "sweep.g") if "g" in block
              else base.g_values if base else None)
    j_axis = (_parse_axis(block.pop("J"), "sweep.J") if "J" in block
              else base.J_values if base else None)
    if g_axis is None or j_axis is None:
        raise ConfigError("sweep: need axes 'g' and 'J' (or a preset)")
    n_i = _take(block, "sweep", "n_i", int, base.n_i if base else 20)
    T = _take(block, "sweep", "T", float, base.T if base else 2.0e4)
    threshold = _take(block, "sweep", "threshold", float, 0.5)
    initial_site = _take(block, "sweep", "initial_site", int, 0)
    checkpoint = _take(block, "sweep", "checkpoint", str, "checkpoint.jsonl")
    _done(block, "sweep")
    if n_i < 0:
        raise ConfigError("sweep.n_i: must be >= 0")
    if T <= 0:
        raise ConfigError("sweep.T: must be > 0")
    if not 0 < threshold <= 1:
        raise ConfigError("sweep.threshold: must lie in (0, 1]")
    if initial_site not in (0, 1):
        raise ConfigError("sweep.initial_site: must be 0 or 1")
    grid = GridSpec(g_values=g_axis, J_values=j_axis, n_i=n_i, T=T)
    settings = SweepSettings(omega0=params.left.omega0, Omega=params.left.Omega,
                             D=params.D, n_max=n_max,
                             threshold=threshold, initial_site=initial_site)
    return grid, settings, threshold, checkpoint


def _parse_damping(cfg: dict, seed_flag: int | None
                   ) -> tuple[DampingConfig, bool]:
    block = _block(cfg, "damping", required=True)
    tau_raw = block.pop("tau_gamma", _MISSING)
    if tau_raw is _MISSING:
        raise ConfigError("damping.tau_gamma: required key is missing")
    if tau_raw == "inf":
        tau_gamma = math.inf
    else:
        tau_gamma = _coerce(tau_raw, float, "damping.tau_gamma")
    n_traj = _take(block, "damping", "n_traj", int, 300)
    seed = _take(block, "damping", "seed", int, 0)
    jump_basis = _take(block, "damping", "jump_basis", str, "auto")
    keep = _take(block, "damping", "keep_trajectories", bool, False)
    _done(block, "damping")
    if not tau_gamma > 0:
        raise ConfigError("damping.tau_gamma: must be > 0")
    if n_traj < 1:
        raise ConfigError("damping.n_traj: must be >= 1")
    if jump_basis not in ("auto", "bare", "dressed"):
        raise ConfigError("damping.jump_basis: must be auto, bare, or dressed")
    if seed_flag is not None:
        seed = seed_flag
    return DampingConfig(tau_gamma=tau_gamma, n_traj=n_traj, master_seed=seed,
                         jump_basis=jump_basis), keep


def _parse_spectrum(cfg: dict) -> dict:
    block = _block(cfg, "spectrum")
    g_axis = (_parse_axis(block.pop("g_values"), "spectrum.g_values")
              if "g_values" in block else None)
    out = {"g_values": g_axis,
           "zeta_gaps": _take(block, "spectrum", "zeta_gaps", int, 400),
           "chi_levels": _take(block, "spectrum", "chi_levels", int, 20),
           "k_levels": _take(block, "spectrum", "k_levels", int, None)}
    _done(block, "spectrum")
    if out["zeta_gaps"] < 1:
        raise ConfigError("spectrum.zeta_gaps: must be >= 1")
    if out["chi_levels"] < 1:
        raise ConfigError("spectrum.chi_levels: must be >= 1")
    if out["k_levels"] is not None and out["k_levels"] < 2:
        raise ConfigError("spectrum.k_levels: must be >= 2")
    return out


# ------------------------------------------------------------ artifact glue


def _resolved_model(params: DimerParams, n_max, jc_only, sites) -> dict:
    return {"sites": sites, "omega0": params.left.omega0,
            "Omega": params.left.Omega, "g": params.left.g, "J": params.J,
            "D": params.D, "n_max": n_max, "jc_only": jc_only}


def _tau_json(tau_gamma: float):
    # mirror the accepted input spelling; bare inf is not valid JSON
    return "inf" if math.isinf(tau_gamma) else tau_gamma


def _resolved_plan(plan: EvolutionPlan) -> dict:
    return {"t_final": plan.t_final, "dt_sample": plan.dt_sample,
            "engine": plan.engine, "krylov_dim": plan.krylov_dim,
            "step_tol": plan.step_tol}


def _site_spec_json(spec: SiteSpec) -> dict:
    qubit = "up" if spec.qubit == UP else "down"
    if spec.kind == "fock":
        return {"kind": "fock", "n": int(spec.value.real), "qubit": qubit}
    alpha = complex(spec.value)
    return {"kind": "coherent", "alpha": [alpha.real, alpha.imag], "qubit": qubit}


def _emit_resolved(out_dir: str, command: str, blocks: dict, workers: int):
    payload = {"version": __version__, "command": command, "workers": workers}
    payload.update(blocks)
    write_json(os.path.join(out_dir, "resolved_config.json"), payload)


def _write_dat(path: str, header: str, columns):
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for row in zip(*cols):
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def _build_system(params: DimerParams, sites: int, n_max: int, jc_only: bool,
                  specs: list[SiteSpec]):
    space = make_space(n_max, sites)
    if sites == 1:
        h = build_rabi(space, params.left, jc_only)
    else:
        h = build_dimer(space, params, jc_only)
    return space, h, product_state(space, specs)


def _standard_observables(space, sites: int, with_top: bool):
    if sites == 1:
        ops = [number(space, 0), pauli(space, 0, "z")]
        labels = ["n", "sigma_z"]
    else:
        ops = [number(space, 0), number(space, 1),
               pauli(space, 0, "z"), pauli(space, 1, "z")]
        labels = ["n_L", "n_R", "sigma_z_L", "sigma_z_R"]
    if with_top:
        ops.append(top_level_projector(space))
        labels.append("top_mass")
    return ops, labels


# ----------------------------------------------------------------- commands


def cmd_evolve(cfg: dict, out_dir: str, workers: int, seed) -> int:
    _allowed_blocks(cfg, ("model", "initial_state", "evolution", "truncation",
                          "output"))
    params, n_max_cfg, jc_only, sites = _parse_model(cfg)
    specs, n0 = _parse_initial(cfg, sites)
    plan = _parse_evolution(cfg)
    check, delta_n = _parse_truncation(cfg)
    out_dir, formats = _parse_output(cfg, out_dir, "evolve")

    n_max = n_max_cfg if n_max_cfg is not None else default_n_max(
        math.ceil(n0), params.left.g, params.left.omega0)
    space, h, psi0 = _build_system(params, sites, n_max, jc_only, specs)
    ops, labels = _standard_observables(space, sites, with_top=check)
    series = evolve(h, psi0, plan, ops, labels)
    by_label = {s.label: s for s in series}

    if sites == 2:
        z = imbalance(by_label["n_L"], by_label["n_R"])
        summary = summarize(by_label["n_L"], by_label["n_R"],
                            by_label["sigma_z_L"], by_label["sigma_z_R"],
                            n_i=n0)
    else:
        z = TimeSeries(by_label["n"].times, by_label["n"].values.copy(), "z")
        summary = summarize(by_label["n"], sigma_z_left=by_label["sigma_z"],
                            n_i=n0)

    report = None
    if check:
        cmp_space, cmp_h, cmp_psi0 = _build_system(params, sites,
                                                   n_max + delta_n, jc_only, specs)
        if sites == 2:
            z_op = number(cmp_space, 0) - number(cmp_space, 1)
        else:
            z_op = number(cmp_space, 0)
        (z_cmp,) = evolve(cmp_h, cmp_psi0, plan, [z_op], ["z"])
        report = TruncationReport.from_traces(z, by_label["top_mass"], z_cmp,
                                              n_max, delta_n)

    os.makedirs(out_dir, exist_ok=True)
    out_series = [s for s in series if s.label != "top_mass"] + [z]
    if "csv" in formats:
        write_timeseries_csv(os.path.join(out_dir, "timeseries.csv"), out_series)
    if "dat" in formats:
        _write_dat(os.path.join(out_dir, "traces.dat"),
                   "t " + " ".join(s.label for s in out_series),
                   [out_series[0].times] + [s.values for s in out_series])
    if "json" in formats:
        payload = summary.as_dict()
        payload.update(n_i=n0, t_final=plan.t_final, n_max=n_max)
        if report is not None:
            payload["truncation"] = {
                "n_max": report.n_max, "delta_n": report.delta_n,
                "imbalance_dev": report.imbalance_dev,
                "top_level_mass": report.top_level_mass,
                "passed": report.passed}
        write_json(os.path.join(out_dir, "summary.json"), payload)
    _emit_resolved(out_dir, "evolve",
                   {"model": _resolved_model(params, n_max, jc_only, sites),
                    "initial_state": {"sites": [_site_spec_json(s) for s in specs]},
                    "evolution": _resolved_plan(plan),
                    "truncation": {"check": check, "delta_n": delta_n},
                    "output": {"directory": out_dir, "formats": list(formats)}},
                   workers)
    if report is not None and not report.passed:
        print(f"truncation check failed: imbalance_dev={report.imbalance_dev:.3g} "
              f"top_level_mass={report.top_level_mass:.3g} at n_max={n_max}",
              file=sys.stderr)
        return EXIT_TRUNCATION
    return EXIT_OK


def cmd_sweep(cfg: dict, out_dir: str, workers: int, seed) -> int:
    _allowed_blocks(cfg, ("model", "sweep", "evolution", "output"))
    params, n_max_cfg, jc_only, sites = _parse_model(cfg)
    if sites != 2:
        raise ConfigError("model.sites: sweep requires sites=2")
    if jc_only:
        raise ConfigError("model.jc_only: not supported by sweep")
    grid, settings, threshold, checkpoint = _parse_sweep(cfg, params, n_max_cfg)
    plan = _parse_evolution(cfg, need_t_final=False)
    out_dir, formats = _parse_output(cfg, out_dir, "sweep")

    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = None
    if checkpoint:
        ckpt_path = checkpoint if os.path.isabs(checkpoint) \
            else os.path.join(out_dir, checkpoint)
    result = run_sweep(grid, settings, plan, workers=workers,
                       checkpoint=ckpt_path)

    labels = result.classify(threshold)
    boundary = boundary_extract(labels, result.g_values, result.J_values)
    extra = {"J_c": boundary.J_c,
             "boundary_points": [list(p) for p in boundary.points],
             "version": __version__}
    write_phase_outputs(result, threshold, out_dir, formats, extra_meta=extra)
    if "dat" in formats and boundary.points:
        pts = np.array(boundary.points)
        _write_dat(os.path.join(out_dir, "boundary.dat"), "g J",
                   [pts[:, 0], pts[:, 1]])
    _emit_resolved(out_dir, "sweep",
                   {"model": _resolved_model(params, settings.n_max, False, 2),
                    "sweep": {"g": {"values": list(result.g_values)},
                              "J": {"values": list(result.J_values)},
                              "n_i": grid.n_i, "T": grid.T,
                              "threshold": threshold,
                              "initial_site": settings.initial_site,
                              "checkpoint": checkpoint},
                    "evolution": _resolved_plan(plan),
                    "output": {"directory": out_dir, "formats": list(formats)}},
                   workers)
    n_failed = int((result.status == "failed").sum())
    if n_failed:
        print(f"{n_failed} of {result.status.size} cells failed; "
              "see phase_grid.json", file=sys.stderr)
        if n_failed == result.status.size:
            return EXIT_NUMERICAL
    return EXIT_OK


def _chi_per_state(space, states: np.ndarray) -> np.ndarray:
    """Photon-number variance of each eigenvector column (all sites summed)."""
    diag = number(space, 0).matrix.diagonal().real
    for site in range(1, space.n_sites):
        diag = diag + number(space, site).matrix.diagonal().real
    probs = np.abs(states) ** 2
    mean = probs.T @ diag
    return probs.T @ diag**2 - mean**2


def cmd_spectrum(cfg: dict, out_dir: str, workers: int, seed) -> int:
    _allowed_blocks(cfg, ("model", "initial_state", "spectrum", "output"))
    params, n_max_cfg, jc_only, sites = _parse_model(cfg)
    spec_cfg = _parse_spectrum(cfg)
    has_initial = "initial_state" in cfg
    specs = n0 = None
    if has_initial:
        specs, n0 = _parse_initial(cfg, sites)
    out_dir, formats = _parse_output(cfg, out_dir, "spectrum")
    os.makedirs(out_dir, exist_ok=True)

    if spec_cfg["g_values"] is not None:
        return _spectrum_scan(params, n_max_cfg, jc_only, sites, spec_cfg,
                              out_dir, formats, workers)
    return _spectrum_point(params, n_max_cfg, jc_only, sites, spec_cfg,
                           specs, n0, out_dir, formats, workers)


def _spectrum_scan(params, n_max_cfg, jc_only, sites, spec_cfg, out_dir,
                   formats, workers) -> int:
    if sites != 1:
        raise ConfigError("spectrum.g_values: the coupling scan runs on a "
                          "single system (model.sites=1)")
    if params.left.g != 0.0:
        raise ConfigError("model.g: not allowed with spectrum.g_values")
    zeta_gaps, chi_levels = spec_cfg["zeta_gaps"], spec_cfg["chi_levels"]
    k = max(zeta_gaps + 1, chi_levels)
    g_values = spec_cfg["g_values"]
    zetas, chis, n_maxes, residuals = [], [], [], []
    for g in g_values:
        # enough ladder to converge the k-th level plus displacement margin
        n_max = n_max_cfg if n_max_cfg is not None \
            else (k + 1) // 2 + default_n_max(0, g, params.left.omega0) + 20
        space = make_space(n_max, 1)
        h = build_rabi(space, replace(params.left, g=g), jc_only)
        data = eigensolve(h, k)
        zetas.append(level_spacing_variance(data.energies, zeta_gaps))
        chis.append(float(np.mean(_chi_per_state(space, data.states[:, :chi_levels]))))
        n_maxes.append(n_max)
        residuals.append(data.max_residual)
    if "csv" in formats:
        with open(os.path.join(out_dir, "zeta_chi.csv"), "w", encoding="utf-8") as fh:
            fh.write("# g, zeta, chi_mean\n")
            for g, z, c in zip(g_values, zetas, chis):
                fh.write(f"{g:.17g}, {z:.17g}, {c:.17g}\n")
    if "dat" in formats:
        _write_dat(os.path.join(out_dir, "zeta_chi.dat"), "g zeta chi_mean",
                   [g_values, zetas, chis])
    if "json" in formats:
        write_json(os.path.join(out_dir, "meta.json"),
                   {"version": __version__, "zeta_gaps": zeta_gaps,
                    "chi_levels": chi_levels, "chi_aggregation": "mean",
                    "k_levels": k, "g_values": list(g_values),
                    "n_max": n_maxes, "max_residual": residuals,
                    "omega0": params.left.omega0, "Omega": params.left.Omega,
                    "jc_only": jc_only})
    return EXIT_OK


def _spectrum_point(params, n_max_cfg, jc_only, sites, spec_cfg, specs, n0,
                    out_dir, formats, workers) -> int:
    n_i = math.ceil(n0) if n0 else 0
    n_max = n_max_cfg if n_max_cfg is not None \
        else default_n_max(n_i, params.left.g, params.left.omega0)
    space = make_space(n_max, sites)
    h = build_rabi(space, params.left, jc_only) if sites == 1 \
        else build_dimer(space, params, jc_only)
    k = spec_cfg["k_levels"]
    if k is None and space.dim > 7000:
        raise ConfigError("spectrum.k_levels: full decomposition above "
                          f"dim 7000 (here {space.dim}) will not fit; set "
                          "k_levels or lower model.n_max")
    data = eigensolve(h, k)
    chi = _chi_per_state(space, data.states)

    weights = None
    de = None
    if specs is not None:
        psi0 = product_state(space, specs)
        weights = overlaps(psi0, data)
        if sites == 2:
            n_l, n_r = number(space, 0), number(space, 1)
            de = {"N_L": diagonal_ensemble(psi0, data, n_l),
                  "N_R": diagonal_ensemble(psi0, data, n_r),
                  "z": diagonal_ensemble(psi0, data, n_l - n_r)}
        else:
            de = {"N": diagonal_ensemble(psi0, data, number(space, 0))}
        de["completeness"] = float(np.sum(weights))
        de["k_levels"] = data.k_levels

    idx = np.arange(data.k_levels)
    if "csv" in formats:
        path = os.path.join(out_dir, "levels.csv")
        with open(path, "w", encoding="utf-8") as fh:
            if weights is None:
                fh.write("# index, energy, chi\n")
                for i in idx:
                    fh.write(f"{i}, {data.energies[i]:.17g}, {chi[i]:.17g}\n")
            else:
                fh.write("# index, energy, chi, overlap\n")
                for i in idx:
                    fh.write(f"{i}, {data.energies[i]:.17g}, {chi[i]:.17g}, "
                             f"{weights[i]:.17g}\n")
    if "dat" in formats:
        cols = [idx, data.energies, chi]
        header = "index energy chi"
        if weights is not None:
            cols.append(weights)
            header += " overlap"
        _write_dat(os.path.join(out_dir, "levels.dat"), header, cols)
    if "json" in formats:
        meta = {"version": __version__,
                "model": _resolved_model(params, n_max, jc_only, sites),
                "k_levels": data.k_levels, "max_residual": data.max_residual}
        if specs is not None:
            meta["initial_state"] = {"sites": [_site_spec_json(s) for s in specs]}
        write_json(os.path.join(out_dir, "meta.json"), meta)
        if de is not None:
            write_json(os.path.join(out_dir, "diag_ensemble.json"), de)
    return EXIT_OK


def cmd_trajectories(cfg: dict, out_dir: str, workers: int, seed) -> int:
    _allowed_blocks(cfg, ("model", "initial_state", "evolution", "damping",
                          "output"))
    params, n_max_cfg, jc_only, sites = _parse_model(cfg)
    specs, n0 = _parse_initial(cfg, sites)
    plan = _parse_evolution(cfg)
    damping, keep = _parse_damping(cfg, seed)
    out_dir, formats = _parse_output(cfg, out_dir, "trajectories")

    n_max = n_max_cfg if n_max_cfg is not None else default_n_max(
        math.ceil(n0), params.left.g, params.left.omega0)
    space, h, psi0 = _build_system(params, sites, n_max, jc_only, specs)
    ops, labels = _standard_observables(space, sites, with_top=False)
    g_ratio = params.left.g / params.left.omega0
    result = run_trajectories(h, psi0, plan, damping, ops, labels,
                              g_ratio=g_ratio, workers=workers,
                              keep_trajectories=keep)

    os.makedirs(out_dir, exist_ok=True)
    all_series = result.means + result.stderr
    if "csv" in formats:
        write_timeseries_csv(os.path.join(out_dir, "trajectories.csv"), all_series)
    if "dat" in formats:
        _write_dat(os.path.join(out_dir, "trajectories.dat"),
                   "t " + " ".join(s.label for s in all_series),
                   [all_series[0].times] + [s.values for s in all_series])
    if "json" in formats:
        by_label = {s.label: s for s in result.means}
        payload = {"n_traj": result.n_traj, "seed": result.master_seed,
                   "jump_basis": result.jump_basis,
                   "tau_gamma": _tau_json(damping.tau_gamma),
                   "kappa": damping.kappa,
                   "mean_jumps": result.mean_jumps,
                   "stderr_max": {s.label: float(s.values.max())
                                  for s in result.stderr},
                   "stderr_final": {s.label: float(s.values[-1])
                                    for s in result.stderr}}
        if sites == 2:
            summary = summarize(by_label["n_L"], by_label["n_R"],
                                by_label["sigma_z_L"], by_label["sigma_z_R"],
                                n_i=n0)
        else:
            summary = summarize(by_label["n"],
                                sigma_z_left=by_label["sigma_z"], n_i=n0)
        payload["summary"] = summary.as_dict()
        write_json(os.path.join(out_dir, "trajectories.json"), payload)
    if keep and result.trajectories is not None:
        np.savez_compressed(os.path.join(out_dir, "trajectories_raw.npz"),
                            values=np.array(result.trajectories),
                            times=plan.times(), labels=np.array(labels))
    _emit_resolved(out_dir, "trajectories",
                   {"model": _resolved_model(params, n_max, jc_only, sites),
                    "initial_state": {"sites": [_site_spec_json(s) for s in specs]},
                    "evolution": _resolved_plan(plan),
                    "damping": {"tau_gamma": _tau_json(damping.tau_gamma),
                                "n_traj": damping.n_traj,
                                "seed": damping.master_seed,
                                "jump_basis": damping.jump_basis,
                                "keep_trajectories": keep},
                    "output": {"directory": out_dir, "formats": list(formats)}},
                   workers)
    return EXIT_OK


def cmd_renorm(cfg: dict, out_dir: str, workers: int, seed) -> int:
    _allowed_blocks(cfg, ("model", "output"))
    params, n_max_cfg, jc_only, sites = _parse_model(cfg)
    if jc_only:
        raise ConfigError("model.jc_only: the renormalization map is defined "
                          "for the full coupling")
    mapped = a2_renormalize(params)
    r = squeeze_parameter(params.D, params.left.omega0)
    payload = {"omega0": mapped.left.omega0, "Omega": mapped.left.Omega,
               "g": mapped.left.g, "J": mapped.J, "r": r,
               "input": {"omega0": params.left.omega0,
                         "Omega": params.left.Omega, "g": params.left.g,
                         "J": params.J, "D": params.D}}
    print(json.dumps(payload, indent=2))
    if out_dir or "output" in cfg:
        out_dir, _ = _parse_output(cfg, out_dir, "renorm")
        os.makedirs(out_dir, exist_ok=True)
        write_json(os.path.join(out_dir, "renorm.json"), payload)
        _emit_resolved(out_dir, "renorm",
                       {"model": _resolved_model(params, n_max_cfg, False, sites)},
                       workers)
    return EXIT_OK


# --------------------------------------------------------------- entry point

_COMMANDS = {"evolve": cmd_evolve, "sweep": cmd_sweep, "spectrum": cmd_spectrum,
             "trajectories": cmd_trajectories, "renorm": cmd_renorm}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rabidimer",
        description="Coupled light-matter dimer simulator: dynamics, phase "
                    "sweeps, spectral diagnostics, damped trajectories.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("evolve", "unitary dynamics of one parameter point"),
            ("sweep", "z_avg phase diagram over a (g, J) grid"),
            ("spectrum", "eigenlevel diagnostics and diagonal ensemble"),
            ("trajectories", "damped dynamics via stochastic trajectories"),
            ("renorm", "map the diamagnetic term into rescaled parameters")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: available cores)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the trajectory seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    workers = args.workers if args.workers is not None \
        else (os.cpu_count() or 1)
    if workers < 1:
        print("config error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args.out, workers, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TruncationError as exc:
        print(f"truncation failure: {exc}", file=sys.stderr)
        return EXIT_TRUNCATION
    except (NumericalError, KrylovError, EigensolveError,
            CompletenessError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
