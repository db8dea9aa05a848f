"""Unitary time evolution with two interchangeable engines.

The full-diag engine evaluates exp(-i H t) through a one-time spectral
decomposition, exact at every sample; the krylov engine steps sample to
sample with adaptive sub-stepping.  Auto selection prefers full-diag up
to dim 4000, where a dense diagonalization still beats stepping.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la

from .fockspace import (FockSpace, Operator, StateVector, make_space, number,
                        top_level_projector)
from .krylov import ExpmKrylov

FULL_DIAG_MAX_DIM = 4000   # auto engine switches to krylov above this
_NORM_ABORT = 1e-6         # norm drift that aborts a run as numerically unsound

ENGINES = ("auto", "full-diag", "krylov")


class NumericalError(RuntimeError):
    """Propagation produced numerically unsound output."""


@dataclass(frozen=True)
class EvolutionPlan:
    """Sampling window and engine choice for one evolution run."""

    t_final: float
    dt_sample: float = 1.0
    engine: str = "auto"
    krylov_dim: int = 30
    step_tol: float = 1e-9

    def __post_init__(self):
        if not 0 < self.dt_sample <= self.t_final:
            raise ValueError("need 0 < dt_sample <= t_final")
        if self.krylov_dim < 4:
            raise ValueError("krylov_dim must be >= 4")
        if self.step_tol <= 0:
            raise ValueError("step_tol must be > 0")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}, got {self.engine!r}")

    def times(self) -> np.ndarray:
        n = int(np.floor(self.t_final / self.dt_sample + 1e-9))
        return np.arange(n + 1) * self.dt_sample


@dataclass
class TimeSeries:
    """Samples of one observable on a uniform time grid."""

    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values)
        if t.ndim != 1 or t.shape != v.shape:
            raise ValueError("times and values must be equal-length 1-D arrays")
        if t.size >= 2:
            steps = np.diff(t)
            if steps.min() <= 0:
                raise ValueError("times must be strictly increasing")
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
                raise ValueError("times must be uniformly spaced")
        self.times = t
        self.values = v

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0


def resolve_engine(plan: EvolutionPlan, dim: int) -> str:
    if plan.engine != "auto":
        return plan.engine
    return "full-diag" if dim <= FULL_DIAG_MAX_DIM else "krylov"


def _sample_observables(psi: np.ndarray, mats, herm_flags, out, k: int):
    for i, (m, herm) in enumerate(zip(mats, herm_flags)):
        val = np.vdot(psi, m @ psi)
        out[i][k] = val.real if herm else val


def _evolve_krylov(h: Operator, psi0: np.ndarray, plan: EvolutionPlan,
                   mats, herm_flags, out):
    times = plan.times()
    prop = ExpmKrylov(h.matrix, m=plan.krylov_dim, tol=plan.step_tol, hermitian=True)
    psi = psi0.copy()
    _sample_observables(psi, mats, herm_flags, out, 0)
    for k in range(1, times.size):
        psi = prop.step(psi, plan.dt_sample)
        drift = abs(float(np.linalg.norm(psi)) - 1.0)
        if drift > _NORM_ABORT:
            raise NumericalError(
                f"norm drift {drift:.3e} at t={times[k]:.6g} exceeds {_NORM_ABORT}")
        _sample_observables(psi, mats, herm_flags, out, k)
    return psi


def _evolve_full_diag(h: Operator, psi0: np.ndarray, plan: EvolutionPlan,
                      mats, herm_flags, out, chunk: int = 256):
    times = plan.times()
    w, v = la.eigh(h.matrix.toarray(), check_finite=False)
    c = v.conj().T @ psi0
    psi_final = None
    for lo in range(0, times.size, chunk):
        hi = min(lo + chunk, times.size)
        phases = np.exp(-1j * np.outer(w, times[lo:hi]))
        block = v @ (c[:, None] * phases)
        for i, (m, herm) in enumerate(zip(mats, herm_flags)):
            vals = np.einsum("ik,ik->k", block.conj(), m @ block)
            out[i][lo:hi] = vals.real if herm else vals
        if hi == times.size:
            psi_final = block[:, -1].copy()
    return psi_final


def evolve(h: Operator, psi0: StateVector, plan: EvolutionPlan,
           observables: Sequence[Operator], labels: Sequence[str] | None = None
           ) -> list[TimeSeries]:
    """Sample <O>(t) for each observable along exp(-i H t)|psi0>.

    H must carry the hermitian construction guarantee; all operators must
    share psi0's space.  Norm drift beyond 1e-6 aborts with diagnostics.
    """
    if not h.hermitian:
        raise ValueError("evolve requires a hermitian Hamiltonian")
    for op in observables:
        if op.space != psi0.space:
            raise ValueError("observable space does not match the state")
    if h.space != psi0.space:
        raise ValueError("Hamiltonian space does not match the state")
    if labels is None:
        labels = [f"O{i}" for i in range(len(observables))]
    if len(labels) != len(observables):
        raise ValueError("one label per observable required")

    times = plan.times()
    mats = [op.matrix for op in observables]
    herm_flags = [op.hermitian for op in observables]
    out = [np.empty(times.size, dtype=float if hf else complex) for hf in herm_flags]

    engine = resolve_engine(plan, psi0.space.dim)
    if engine == "krylov":
        _evolve_krylov(h, psi0.amplitudes, plan, mats, herm_flags, out)
    else:
        _evolve_full_diag(h, psi0.amplitudes, plan, mats, herm_flags, out)
    return [TimeSeries(times, vals, label) for vals, label in zip(out, labels)]


def evolve_state(h: Operator, psi0: StateVector, plan: EvolutionPlan) -> StateVector:
    """Final state exp(-i H t_final)|psi0| under the plan's engine."""
    if not h.hermitian:
        raise ValueError("evolve_state requires a hermitian Hamiltonian")
    engine = resolve_engine(plan, psi0.space.dim)
    if engine == "full-diag":
        w, v = la.eigh(h.matrix.toarray(), check_finite=False)
        c = v.conj().T @ psi0.amplitudes
        amp = v @ (c * np.exp(-1j * w * plan.t_final))
        return StateVector(psi0.space, amp)
    prop = ExpmKrylov(h.matrix, m=plan.krylov_dim, tol=plan.step_tol, hermitian=True)
    psi = psi0.amplitudes.copy()
    for _ in range(plan.times().size - 1):
        psi = prop.step(psi, plan.dt_sample)
        drift = abs(float(np.linalg.norm(psi)) - 1.0)
        if drift > _NORM_ABORT:
            raise NumericalError(f"norm drift {drift:.3e} exceeds {_NORM_ABORT}")
    return StateVector(psi0.space, psi)


@dataclass(frozen=True)
class TruncationReport:
    """Outcome of the two-truncation convergence check.

    `imbalance` keeps the base-truncation z(t) trace so callers (the sweep
    engine in particular) do not need to rerun the converged evolution.
    """

    n_max: int
    delta_n: int
    imbalance_dev: float
    top_level_mass: float
    passed: bool
    imbalance: TimeSeries = field(repr=False, compare=False, default=None)

    IMBALANCE_TOL = 0.1
    MASS_TOL = 1e-6

    @classmethod
    def from_traces(cls, z_base: TimeSeries, top_base: TimeSeries,
                    z_cmp: TimeSeries, n_max: int, delta_n: int) -> "TruncationReport":
        dev = float(np.max(np.abs(z_base.values - z_cmp.values)))
        mass = float(np.max(top_base.values))
        return cls(n_max=n_max, delta_n=delta_n, imbalance_dev=dev,
                   top_level_mass=mass,
                   passed=dev < cls.IMBALANCE_TOL and mass < cls.MASS_TOL,
                   imbalance=z_base)


def _imbalance_run(build_h: Callable[[FockSpace], Operator],
                   build_psi0: Callable[[FockSpace], StateVector],
                   plan: EvolutionPlan, n_max: int, n_sites: int,
                   with_top: bool) -> tuple[TimeSeries, TimeSeries | None]:
    space = make_space(n_max, n_sites)
    h = build_h(space)
    psi0 = build_psi0(space)
    z_op = number(space, 0) - number(space, 1) if n_sites == 2 else number(space, 0)
    ops, labels = [z_op], ["z"]
    if with_top:
        ops.append(top_level_projector(space))
        labels.append("top_mass")
    series = evolve(h, psi0, plan, ops, labels)
    return series[0], series[1] if with_top else None


def check_truncation(build_h: Callable[[FockSpace], Operator],
                     build_psi0: Callable[[FockSpace], StateVector],
                     plan: EvolutionPlan, n_max: int, delta_n: int = 8,
                     n_sites: int = 2) -> TruncationReport:
    """Rerun the evolution at n_max and n_max + delta_n and compare.

    Passes when max_t |z - z'| < 0.1 and the occupation of the truncation
    edge stays below 1e-6 throughout the base run.
    """
    if delta_n < 4:
        raise ValueError("delta_n must be >= 4")
    z_base, top_base = _imbalance_run(build_h, build_psi0, plan, n_max, n_sites, True)
    z_cmp, _ = _imbalance_run(build_h, build_psi0, plan, n_max + delta_n, n_sites, False)
    return TruncationReport.from_traces(z_base, top_base, z_cmp, n_max, delta_n)
