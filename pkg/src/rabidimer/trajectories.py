"""Cavity damping through quantum-jump (Monte Carlo wavefunction) unraveling,
plus a dense Lindblad integrator usable as an oracle on small systems.

Between jumps the state follows exp(-i H_eff t) with
H_eff = H - (i kappa / 2) sum_j C_j^dag C_j.  When the decay part is
diagonal in the computational basis (bare photon loss) the stepper splits
it symmetrically around the unitary Krylov step, which is exact whenever
[H, sum C^dag C] = 0 and second-order accurate otherwise; a general decay
part falls back to Arnoldi on the non-hermitian generator.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.integrate import solve_ivp

from .fockspace import Operator, StateVector, annihilator
from .krylov import ExpmKrylov
from .propagate import EvolutionPlan, TimeSeries

LINDBLAD_MAX_DIM = 300
DRESSED_MAX_DIM = 2000
USC_BASIS_SWITCH = 0.5   # auto policy: dressed jumps once g/omega0 >= this
_BISECT_REL = 1e-10
_MAX_JUMPS_PER_STEP = 10_000

JUMP_BASES = ("auto", "bare", "dressed")


@dataclass(frozen=True)
class DampingConfig:
    """Cavity damping time, trajectory count, seeding, and jump basis."""

    tau_gamma: float
    n_traj: int = 300
    master_seed: int = 0
    jump_basis: str = "auto"

    def __post_init__(self):
        if not self.tau_gamma > 0:
            raise ValueError("tau_gamma must be > 0")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if self.jump_basis not in JUMP_BASES:
            raise ValueError(f"jump_basis must be one of {JUMP_BASES}")

    @property
    def kappa(self) -> float:
        return 0.0 if math.isinf(self.tau_gamma) else 1.0 / self.tau_gamma


def resolve_jump_basis(cfg: DampingConfig, g_ratio: float) -> str:
    """Concrete basis for a given coupling; bare a_j jumps misbehave in the
    ultrastrong regime (they pump energy into dressed ground states)."""
    if cfg.jump_basis != "auto":
        return cfg.jump_basis
    return "dressed" if g_ratio >= USC_BASIS_SWITCH else "bare"


def bare_jump_operators(space) -> list[Operator]:
    return [annihilator(space, s) for s in range(space.n_sites)]


def dressed_jump_operators(h: Operator) -> list[Operator]:
    """Lowering part of each mode operator in the eigenbasis of H.

    Keeps only matrix elements <m|a_j|n> with E_m strictly below E_n, so a
    dressed jump can never raise the energy.  Requires one dense
    diagonalization; guarded to modest dimensions.
    """
    space = h.space
    if space.dim > DRESSED_MAX_DIM:
        raise ValueError(f"dressed basis needs a dense eigenbasis; dim {space.dim} "
                         f"exceeds {DRESSED_MAX_DIM}")
    w, v = la.eigh(h.matrix.toarray(), check_finite=False)
    lowering = w[:, None] < w[None, :] - 1e-10
    ops = []
    for site in range(space.n_sites):
        a_eig = v.conj().T @ (annihilator(space, site).matrix @ v)
        c = v @ (a_eig * lowering) @ v.conj().T
        ops.append(Operator(space, sp.csr_matrix(c)))
    return ops


def _resolve_jump_operators(h: Operator, cfg: DampingConfig,
                            jump_ops, g_ratio) -> tuple[list[Operator], str]:
    if jump_ops is not None:
        return list(jump_ops), "explicit"
    basis = cfg.jump_basis
    if basis == "auto":
        if g_ratio is None:
            raise ValueError("jump_basis='auto' needs g_ratio (or pass jump_ops)")
        basis = resolve_jump_basis(cfg, g_ratio)
    if basis == "bare":
        return bare_jump_operators(h.space), "bare"
    return dressed_jump_operators(h), "dressed"


class _JumpEngine:
    """Stepper for exp(-i H_eff tau) plus per-channel collapse bookkeeping."""

    def __init__(self, h_matrix: sp.csr_matrix, jump_mats: Sequence[sp.csr_matrix],
                 kappa: float, m: int, tol: float):
        self.kappa = kappa
        self.jump_mats = [sp.csr_matrix(c) for c in jump_mats]
        self.ctc_each = [c.conj().T @ c for c in self.jump_mats]
        if kappa == 0.0 or not self.jump_mats:
            self.mode = "unitary"
            self.uprop = ExpmKrylov(h_matrix, m=m, tol=tol, hermitian=True)
            return
        ctc_tot = sum(self.ctc_each)
        off_diagonal = ctc_tot - sp.diags(ctc_tot.diagonal())
        if off_diagonal.nnz == 0:
            self.mode = "split"
            self.decay = 0.5 * kappa * ctc_tot.diagonal().real
            self.uprop = ExpmKrylov(h_matrix, m=m, tol=tol, hermitian=True)
        else:
            self.mode = "arnoldi"
            h_eff = (h_matrix - 0.5j * kappa * ctc_tot).tocsr()
            self.uprop = ExpmKrylov(h_eff, m=m, tol=tol, hermitian=False)

    def advance(self, psi: np.ndarray, tau: float) -> np.ndarray:
        if tau == 0.0:
            return psi.copy()
        if self.mode == "split":
            half = np.exp(-0.5 * tau * self.decay)
            return half * self.uprop.step(half * psi, tau)
        return self.uprop.step(psi, tau)

    def collapse(self, psi: np.ndarray, u: float) -> np.ndarray:
        """Apply one jump; channel drawn by relative <C^dag C> weight."""
        weights = np.array([np.vdot(psi, m @ psi).real for m in self.ctc_each])
        total = weights.sum()
        if total <= 0.0:
            raise RuntimeError("jump triggered with zero collapse weight")
        pick = int(np.searchsorted(np.cumsum(weights / total), u, side="right"))
        pick = min(pick, len(self.jump_mats) - 1)
        out = self.jump_mats[pick] @ psi
        return out / np.linalg.norm(out)


def _advance_with_jumps(engine: _JumpEngine, psi: np.ndarray, dt: float,
                        rng, r_thr: float, n_jumps: int):
    """Evolve across one sample interval, resolving any jump times inside."""
    remaining = dt
    for _ in range(_MAX_JUMPS_PER_STEP):
        cand = engine.advance(psi, remaining)
        if float(np.vdot(cand, cand).real) >= r_thr:
            return cand, r_thr, n_jumps
        # the squared norm decreases monotonically along H_eff, so the
        # crossing time is a clean bisection target
        lo, hi = 0.0, remaining
        psi_lo = psi
        while hi - lo > _BISECT_REL * dt:
            mid = 0.5 * (lo + hi)
            w = engine.advance(psi, mid)
            if float(np.vdot(w, w).real) >= r_thr:
                lo, psi_lo = mid, w
            else:
                hi = mid
        psi = engine.collapse(psi_lo, rng.random())
        r_thr = rng.random()
        n_jumps += 1
        remaining -= lo
        if remaining <= 0.0:
            return psi, r_thr, n_jumps
    raise RuntimeError(f"more than {_MAX_JUMPS_PER_STEP} jumps in one sample step")


@dataclass(frozen=True)
class _TrajSpec:
    """Picklable bundle shipped to trajectory workers."""

    h: sp.csr_matrix
    psi0: np.ndarray
    t_final: float
    dt: float
    krylov_dim: int
    step_tol: float
    kappa: float
    jump_mats: tuple
    obs_mats: tuple
    master_seed: int


def _run_single(engine: _JumpEngine, spec: _TrajSpec, rng) -> tuple[np.ndarray, int]:
    times = np.arange(int(np.floor(spec.t_final / spec.dt + 1e-9)) + 1) * spec.dt
    out = np.empty((len(spec.obs_mats), times.size))
    psi = spec.psi0.copy()

    def sample(k, state):
        nrm2 = float(np.vdot(state, state).real)
        for i, m in enumerate(spec.obs_mats):
            out[i, k] = np.vdot(state, m @ state).real / nrm2

    sample(0, psi)
    r_thr = rng.random()
    n_jumps = 0
    for k in range(1, times.size):
        psi, r_thr, n_jumps = _advance_with_jumps(engine, psi, spec.dt, rng, r_thr, n_jumps)
        sample(k, psi)
    return out, n_jumps


def _run_indices(spec: _TrajSpec, indices: Sequence[int]):
    results = []
    for idx in indices:
        # fresh engine per trajectory: the stepper's adaptive step-size
        # memory must not leak between trajectories, or the values would
        # depend on how indices are batched over workers
        engine = _JumpEngine(spec.h, spec.jump_mats, spec.kappa,
                             spec.krylov_dim, spec.step_tol)
        rng = np.random.default_rng(np.random.SeedSequence(spec.master_seed,
                                                           spawn_key=(idx,)))
        values, n_jumps = _run_single(engine, spec, rng)
        results.append((idx, values, n_jumps))
    return results


def _make_spec(h: Operator, psi0: StateVector, plan: EvolutionPlan,
               cfg: DampingConfig, jump_ops: list[Operator],
               observables: Sequence[Operator]) -> _TrajSpec:
    for op in observables:
        if not op.hermitian:
            raise ValueError("trajectory observables must be hermitian")
        if op.space != psi0.space:
            raise ValueError("observable space does not match the state")
    return _TrajSpec(h=h.matrix, psi0=psi0.amplitudes,
                     t_final=plan.t_final, dt=plan.dt_sample,
                     krylov_dim=plan.krylov_dim, step_tol=plan.step_tol,
                     kappa=cfg.kappa,
                     jump_mats=tuple(op.matrix for op in jump_ops),
                     obs_mats=tuple(op.matrix for op in observables),
                     master_seed=cfg.master_seed)


def run_trajectory(h: Operator, psi0: StateVector, plan: EvolutionPlan,
                   cfg: DampingConfig, traj_index: int,
                   observables: Sequence[Operator],
                   labels: Sequence[str] | None = None,
                   jump_ops: Sequence[Operator] | None = None,
                   g_ratio: float | None = None) -> list[TimeSeries]:
    """One stochastic trajectory; (master_seed, traj_index) fixes it exactly."""
    ops, _ = _resolve_jump_operators(h, cfg, jump_ops, g_ratio)
    spec = _make_spec(h, psi0, plan, cfg, ops, observables)
    (_, values, _), = _run_indices(spec, [traj_index])
    times = plan.times()
    if labels is None:
        labels = [f"O{i}" for i in range(len(observables))]
    return [TimeSeries(times, v, lab) for v, lab in zip(values, labels)]


@dataclass
class TrajectoryResult:
    """Trajectory-averaged traces with per-sample standard errors."""

    means: list[TimeSeries]
    stderr: list[TimeSeries]
    n_traj: int
    jump_basis: str
    master_seed: int
    mean_jumps: float
    trajectories: list[np.ndarray] | None = None


def run_trajectories(h: Operator, psi0: StateVector, plan: EvolutionPlan,
                     cfg: DampingConfig, observables: Sequence[Operator],
                     labels: Sequence[str] | None = None,
                     jump_ops: Sequence[Operator] | None = None,
                     g_ratio: float | None = None, workers: int = 1,
                     keep_trajectories: bool = False) -> TrajectoryResult:
    """Average cfg.n_traj trajectories.

    The reduction runs in trajectory-index order whatever the scheduling,
    so results are bit-identical for any worker count.
    """
    ops, basis = _resolve_jump_operators(h, cfg, jump_ops, g_ratio)
    spec = _make_spec(h, psi0, plan, cfg, ops, observables)
    if labels is None:
        labels = [f"O{i}" for i in range(len(observables))]
    if len(labels) != len(observables):
        raise ValueError("one label per observable required")

    indices = list(range(cfg.n_traj))
    by_index: dict[int, tuple[np.ndarray, int]] = {}
    if workers <= 1 or cfg.n_traj == 1:
        for idx, values, n_jumps in _run_indices(spec, indices):
            by_index[idx] = (values, n_jumps)
    else:
        chunk = max(1, cfg.n_traj // (4 * workers))
        batches = [indices[i:i + chunk] for i in range(0, len(indices), chunk)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch_result in pool.map(_run_indices, [spec] * len(batches), batches):
                for idx, values, n_jumps in batch_result:
                    by_index[idx] = (values, n_jumps)

    times = plan.times()
    total = np.zeros((len(observables), times.size))
    total_sq = np.zeros_like(total)
    jumps = 0
    kept = [] if keep_trajectories else None
    for idx in indices:
        values, n_jumps = by_index[idx]
        total += values
        total_sq += values**2
        jumps += n_jumps
        if kept is not None:
            kept.append(values)
    n = cfg.n_traj
    mean = total / n
    if n > 1:
        var = np.maximum(total_sq - n * mean**2, 0.0) / (n - 1)
        se = np.sqrt(var / n)
    else:
        se = np.zeros_like(mean)
    means = [TimeSeries(times, mean[i], labels[i]) for i in range(len(labels))]
    errs = [TimeSeries(times, se[i], f"se_{labels[i]}") for i in range(len(labels))]
    return TrajectoryResult(means=means, stderr=errs, n_traj=n, jump_basis=basis,
                            master_seed=cfg.master_seed, mean_jumps=jumps / n,
                            trajectories=kept)


def lindblad_reference(h: Operator, psi0: StateVector, plan: EvolutionPlan,
                       cfg: DampingConfig, observables: Sequence[Operator],
                       labels: Sequence[str] | None = None,
                       jump_ops: Sequence[Operator] | None = None,
                       g_ratio: float | None = None,
                       rtol: float = 1e-8) -> list[TimeSeries]:
    """Dense density-matrix integration of the same damped model (dim <= 300)."""
    dim = psi0.space.dim
    if dim > LINDBLAD_MAX_DIM:
        raise ValueError(f"lindblad_reference is limited to dim <= {LINDBLAD_MAX_DIM}, "
                         f"got {dim}")
    ops, _ = _resolve_jump_operators(h, cfg, jump_ops, g_ratio)
    kappa = cfg.kappa
    cs = [op.matrix for op in ops]
    ctc = [c.conj().T @ c for c in cs]
    hm = h.matrix

    def rhs(_t, y):
        rho = y.reshape(dim, dim)
        h_rho = hm @ rho
        drho = -1j * (h_rho - h_rho.conj().T)
        if kappa:
            for c, m in zip(cs, ctc):
                c_rho = c @ rho
                drho += kappa * (c @ c_rho.conj().T).conj().T
                m_rho = m @ rho
                drho -= 0.5 * kappa * (m_rho + m_rho.conj().T)
        return drho.ravel()

    times = plan.times()
    if labels is None:
        labels = [f"O{i}" for i in range(len(observables))]
    out = [np.empty(times.size, dtype=float if op.hermitian else complex)
           for op in observables]

    def record(k, rho):
        for i, op in enumerate(observables):
            val = np.trace(op.matrix @ rho)
            out[i][k] = val.real if op.hermitian else val

    amp = psi0.amplitudes
    rho = np.outer(amp, amp.conj())
    record(0, rho)
    window = 256
    for lo in range(0, times.size - 1, window):
        hi = min(lo + window, times.size - 1)
        sol = solve_ivp(rhs, (times[lo], times[hi]), rho.ravel(),
                        t_eval=times[lo + 1:hi + 1], method="DOP853",
                        rtol=rtol, atol=rtol * 1e-2)
        if not sol.success:
            raise RuntimeError(f"lindblad integration failed: {sol.message}")
        for j in range(sol.t.size):
            record(lo + 1 + j, sol.y[:, j].reshape(dim, dim))
        rho = sol.y[:, -1].reshape(dim, dim)
    return [TimeSeries(times, vals, lab) for vals, lab in zip(out, labels)]
