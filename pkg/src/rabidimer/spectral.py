"""Eigenstructure diagnostics: level statistics, photon-number variance,
initial-state overlaps, the diagonal-ensemble prediction, and the
closed-form overlap of oppositely displaced Fock states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse.linalg as spla
from scipy.special import eval_laguerre

from .fockspace import Operator, StateVector

RESIDUAL_TOL = 1e-8
DEGENERACY_GAP = 1e-10   # consecutive levels closer than this form one block
COMPLETENESS_MIN = 0.999

_DENSE_MAX = 1200        # below this a full dense solve beats iterative k-solves


class EigensolveError(RuntimeError):
    """Eigensolver failed to converge to the residual contract."""


class CompletenessError(ValueError):
    """The retained eigenbasis does not carry enough of the initial state."""


@dataclass
class SpectralData:
    """Lowest-k eigenpairs, ascending; states holds one column per level."""

    energies: np.ndarray
    states: np.ndarray
    k_levels: int
    max_residual: float

    def __post_init__(self):
        if np.any(np.diff(self.energies) < 0):
            raise ValueError("energies must be ascending")
        if self.states.shape[1] != self.k_levels or self.energies.size != self.k_levels:
            raise ValueError("k_levels inconsistent with stored arrays")


def _max_residual(mat, w, v, chunk: int = 512) -> float:
    worst = 0.0
    for lo in range(0, w.size, chunk):
        hi = min(lo + chunk, w.size)
        r = mat @ v[:, lo:hi] - v[:, lo:hi] * w[lo:hi]
        worst = max(worst, float(np.sqrt((np.abs(r) ** 2).sum(axis=0).max())))
    return worst


def eigensolve(h: Operator, k: int | None = None) -> SpectralData:
    """Lowest k eigenpairs of a hermitian operator (full set when k omitted).

    Residuals ||Hv - Ev|| are verified against 1e-8 for every retained pair.
    """
    if not h.hermitian:
        raise ValueError("eigensolve requires a hermitian operator")
    dim = h.space.dim
    if k is None:
        k = dim
    if not 1 <= k <= dim:
        raise ValueError(f"k must be in 1..{dim}")
    if k >= dim - 1 or dim <= _DENSE_MAX:
        w, v = la.eigh(h.matrix.toarray(), check_finite=False)
        w, v = w[:k], v[:, :k]
    else:
        w, v = spla.eigsh(h.matrix, k=k, which="SA")
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    res = _max_residual(h.matrix, w, v)
    if res > RESIDUAL_TOL:
        raise EigensolveError(f"max eigenpair residual {res:.3e} exceeds {RESIDUAL_TOL}")
    return SpectralData(energies=w, states=v, k_levels=k, max_residual=res)


def level_spacing_variance(energies: np.ndarray, K: int = 400) -> float:
    """Variance of the K consecutive gaps among the lowest K+1 levels."""
    energies = np.asarray(energies, dtype=float)
    if K + 1 > energies.size:
        raise ValueError(f"need at least {K + 1} levels, have {energies.size}")
    gaps = np.diff(energies[: K + 1])
    return float(np.mean(gaps**2) - np.mean(gaps) ** 2)


def photon_number_variance(state: StateVector) -> float:
    """chi = <N^2> - <N>^2 for a single-site state (exact, via level weights)."""
    if state.space.n_sites != 1:
        raise ValueError("photon_number_variance requires a single-site state")
    probs = np.abs(state.amplitudes.reshape(-1, 2)) ** 2
    p_n = probs.sum(axis=1)
    ns = np.arange(p_n.size, dtype=float)
    mean = float(ns @ p_n)
    return float((ns**2) @ p_n - mean**2)


def franck_condon(n: int, alpha: float) -> float:
    """Overlap <n, -alpha | n, alpha> = exp(-2 alpha^2) L_n(4 alpha^2)."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = 2.0 * float(alpha) ** 2
    return float(np.exp(-x) * eval_laguerre(n, 2.0 * x))


def _weights(psi0: StateVector, spec: SpectralData) -> np.ndarray:
    if psi0.space.dim != spec.states.shape[0]:
        raise ValueError("state dimension does not match the eigenbasis")
    return spec.states.conj().T @ psi0.amplitudes


def overlaps(psi0: StateVector, spec: SpectralData) -> np.ndarray:
    """|<psi0|E_l>|^2 per retained level; total weight must reach 0.999."""
    w = np.abs(_weights(psi0, spec)) ** 2
    total = float(w.sum())
    if total < COMPLETENESS_MIN:
        raise CompletenessError(
            f"retained eigenstates carry only {total:.6f} of the initial state")
    return w


def _degenerate_blocks(energies: np.ndarray, gap: float):
    """Yield (start, stop) index ranges of quasi-degenerate groups."""
    edges = np.flatnonzero(np.diff(energies) >= gap) + 1
    bounds = np.concatenate(([0], edges, [energies.size]))
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        yield int(lo), int(hi)


def diagonal_ensemble(psi0: StateVector, spec: SpectralData, op: Operator,
                      degeneracy_gap: float = DEGENERACY_GAP) -> float:
    """Infinite-time average Sum_l |c_l|^2 <E_l|O|E_l>.

    Quasi-degenerate groups (consecutive gap below `degeneracy_gap`) are
    handled by projecting O into the group and contracting with the
    projected initial weights, which is the exact long-time limit.
    """
    if not op.hermitian:
        raise ValueError("diagonal_ensemble requires a hermitian observable")
    c = _weights(psi0, spec)
    total = float((np.abs(c) ** 2).sum())
    if total < COMPLETENESS_MIN:
        raise CompletenessError(
            f"retained eigenstates carry only {total:.6f} of the initial state")

    blocks = list(_degenerate_blocks(spec.energies, degeneracy_gap))
    value = 0.0
    batch: list[tuple[int, int]] = []
    cols = 0
    for blk in blocks:
        batch.append(blk)
        cols += blk[1] - blk[0]
        if cols < 512 and blk is not blocks[-1]:
            continue
        lo, hi = batch[0][0], batch[-1][1]
        v = spec.states[:, lo:hi]
        ov = op.matrix @ v
        for b0, b1 in batch:
            if b1 - b0 == 1:
                value += (np.abs(c[b0]) ** 2) * np.vdot(v[:, b0 - lo], ov[:, b0 - lo]).real
            else:
                m = v[:, b0 - lo:b1 - lo].conj().T @ ov[:, b0 - lo:b1 - lo]
                cb = c[b0:b1]
                value += float(np.real(cb.conj() @ (m @ cb)))
        batch, cols = [], 0
    return value
