"""Hamiltonian assembly: single light-matter system, dimer, and the
squeezing map that absorbs a diamagnetic (a + a^dagger)^2 term."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .fockspace import (FockSpace, Operator, annihilator, hermitized, number,
                        pauli, swap)


@dataclass(frozen=True)
class RabiParams:
    """One qubit-cavity system: cavity omega0, qubit splitting Omega, coupling g."""

    omega0: float = 1.0
    Omega: float = 1.0
    g: float = 0.0

    def __post_init__(self):
        for name in ("omega0", "Omega", "g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def resonant(self) -> bool:
        return self.omega0 == self.Omega


@dataclass(frozen=True)
class DimerParams:
    """Two qubit-cavity systems with photon hopping J and optional
    diamagnetic coefficient D (both in units of omega0)."""

    left: RabiParams
    right: RabiParams
    J: float
    D: float = 0.0

    def __post_init__(self):
        if self.J < 0:
            raise ValueError("J must be >= 0")
        if self.D < 0:
            raise ValueError("D must be >= 0")

    @classmethod
    def identical(cls, omega0: float = 1.0, Omega: float = 1.0, g: float = 0.0,
                  J: float = 0.0, D: float = 0.0) -> "DimerParams":
        site = RabiParams(omega0=omega0, Omega=Omega, g=g)
        return cls(left=site, right=site, J=J, D=D)

    @property
    def identical_sites(self) -> bool:
        return self.left == self.right


def _single_site_terms(space: FockSpace, site: int, p: RabiParams, jc_only: bool):
    a = annihilator(space, site).matrix
    adag = a.conj().T
    n = number(space, site).matrix
    sz = pauli(space, site, "z").matrix
    h = p.omega0 * n + 0.5 * p.Omega * sz
    if jc_only:
        # co-rotating part only: a sigma^+ + a^dagger sigma^-
        sp_ = pauli(space, site, "+").matrix
        sm = pauli(space, site, "-").matrix
        h = h - p.g * (a @ sp_ + adag @ sm)
    else:
        sx = pauli(space, site, "x").matrix
        h = h - p.g * ((a + adag) @ sx)
    return h


def build_rabi(space: FockSpace, p: RabiParams, jc_only: bool = False) -> Operator:
    """H = omega0 a^dagger a + (Omega/2) sigma^z - g (a + a^dagger) sigma^x.

    With ``jc_only`` the counter-rotating terms a sigma^- + a^dagger sigma^+
    are dropped, which makes the total excitation number exactly conserved.
    """
    if space.n_sites != 1:
        raise ValueError("build_rabi requires a single-site space")
    return hermitized(space, _single_site_terms(space, 0, p, jc_only))


def _diamagnetic(space: FockSpace, site: int, D: float):
    a = annihilator(space, site).matrix
    x = a + a.conj().T
    return D * (x @ x)


def build_dimer(space: FockSpace, p: DimerParams, jc_only: bool = False) -> Operator:
    """Two single-site Hamiltonians plus hopping -J (aL^dag aR + aR^dag aL),
    and, when D > 0, the diamagnetic term D sum_j (a_j + a_j^dagger)^2."""
    if space.n_sites != 2:
        raise ValueError("build_dimer requires a two-site space")
    left = _single_site_terms(space, 0, p.left, jc_only)
    if p.D > 0:
        left = left + _diamagnetic(space, 0, p.D)
    if p.identical_sites:
        # permute the assembled left block instead of rebuilding: identical
        # floating-point values at mirrored entries make swap symmetry exact
        s = swap(space).matrix
        right = s @ left @ s
    else:
        right = _single_site_terms(space, 1, p.right, jc_only)
        if p.D > 0:
            right = right + _diamagnetic(space, 1, p.D)
    h = left + right
    a_l = annihilator(space, 0).matrix
    a_r = annihilator(space, 1).matrix
    hop = a_l.conj().T @ a_r
    h = h - p.J * (hop + hop.conj().T)
    return hermitized(space, h)


def squeeze_parameter(D: float, omega0: float = 1.0) -> float:
    """Squeezing parameter r with e^{4r} = 1 + 4 D / omega0."""
    if D < 0:
        raise ValueError("D must be >= 0")
    return 0.25 * math.log1p(4.0 * D / omega0)


def a2_renormalize(p: DimerParams) -> DimerParams:
    """Map (omega0, g, J, D) to the equivalent D = 0 parameter set.

    A one-mode Bogoliubov squeeze with r = (1/4) ln(1 + 4D/omega0) per cavity
    turns omega0 (a^dag a) + D (a + a^dag)^2 into omega0~ a^dag a up to a
    constant, with omega0~ = omega0 e^{2r}.  The quadrature a + a^dag picks
    up e^{+r} in the new modes, so the coupling that multiplies it shrinks:
    g~ = g e^{-r}.  Omega is untouched.  The hopping keeps the reduced ratio,
    J~ = J e^{2r}; for J > 0 this drops a two-mode-squeezing remainder of
    order J sinh(2r), so the equivalence is exact only at J = 0 and the gap
    cross-check below must be read with that in mind.  Low-lying spectra of
    the two descriptions agree once the untransformed side is truncated
    generously (the squeeze mixes Fock levels upward by ~ e^{2r}).
    """
    if not p.identical_sites:
        raise ValueError("a2_renormalize requires identical sites")
    r = squeeze_parameter(p.D, p.left.omega0)
    e_r = math.exp(r)
    site = replace(p.left, omega0=p.left.omega0 * e_r**2, g=p.left.g / e_r)
    return DimerParams(left=site, right=site, J=p.J * e_r**2, D=0.0)


_CONFIG_KEYS = ("omega0", "Omega", "g", "J", "D", "n_max", "jc_only")


def params_to_config(p: DimerParams, n_max: int | None = None,
                     jc_only: bool = False) -> dict:
    """Flat JSON-ready block; identical-site systems only."""
    if not p.identical_sites:
        raise ValueError("config block assumes identical sites")
    return {"omega0": p.left.omega0, "Omega": p.left.Omega, "g": p.left.g,
            "J": p.J, "D": p.D, "n_max": n_max, "jc_only": jc_only}


def params_from_config(block: dict) -> tuple[DimerParams, int | None, bool]:
    """Inverse of params_to_config; unknown keys rejected."""
    unknown = set(block) - set(_CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    params = DimerParams.identical(
        omega0=float(block.get("omega0", 1.0)),
        Omega=float(block.get("Omega", 1.0)),
        g=float(block.get("g", 0.0)),
        J=float(block.get("J", 0.0)),
        D=float(block.get("D", 0.0)))
    n_max = block.get("n_max")
    if n_max is not None:
        n_max = int(n_max)
    return params, n_max, bool(block.get("jc_only", False))


def default_n_max(n_i: int, g: float, omega0: float = 1.0) -> int:
    """Truncation heuristic: hold the initial Fock ladder plus displacements
    of order g/omega0 with a safety margin.  Convergence is enforced by the
    propagation-level truncation check, not by this formula."""
    gr = g / omega0
    return int(n_i) + math.ceil(8.0 * gr * gr + 6.0 * gr) + 10
