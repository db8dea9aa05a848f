"""Truncated boson-qubit product spaces and the elementary operators on them.

Every Hilbert space in this package is a tensor product of identical
single-site factors, each factor a truncated harmonic oscillator (Fock
levels 0..n_max) times one qubit.  Basis ordering is site-major, then
Fock level, then qubit (qubit fastest), which keeps single-site
operators block-banded.  The cavity frequency omega0 is the unit of
energy throughout; times are measured in 1/omega0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply
from scipy.special import gammainc, gammaln

DOWN = 0
UP = 1

LEFT = 0
RIGHT = 1

_SPARSE_EPS = 1e-15   # magnitudes below this are treated as structural zeros
_TAIL_TOL = 1e-10     # probability mass allowed beyond the truncation edge
_MAX_DIM = 2**31 - 1  # keeps sparse index arithmetic inside int32


class TruncationError(ValueError):
    """A requested state does not fit inside the truncated space."""

    def __init__(self, message: str, tail_mass: float):
        super().__init__(f"{message} (tail mass {tail_mass:.3e})")
        self.tail_mass = tail_mass


@dataclass(frozen=True)
class FockSpace:
    """Truncated oscillator (x) qubit space on one or two sites.

    Attributes
    ----------
    n_max : highest retained Fock level (inclusive).
    n_sites : 1 for a single system, 2 for the dimer.
    """

    n_max: int
    n_sites: int = 1

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError(f"n_max must be a non-negative integer, got {self.n_max!r}")
        if self.n_sites not in (1, 2):
            raise ValueError(f"n_sites must be 1 or 2, got {self.n_sites!r}")
        if (2 * (self.n_max + 1)) ** self.n_sites > _MAX_DIM:
            raise ValueError(f"dimension overflow: n_max={self.n_max} with {self.n_sites} sites")

    @property
    def site_dim(self) -> int:
        return 2 * (self.n_max + 1)

    @property
    def dim(self) -> int:
        return self.site_dim**self.n_sites

    def index(self, *labels: int) -> int:
        """Basis index of |n_0, s_0 (, n_1, s_1)> with s in {DOWN, UP}."""
        if len(labels) != 2 * self.n_sites:
            raise ValueError(f"expected {2 * self.n_sites} labels, got {len(labels)}")
        idx = 0
        for site in range(self.n_sites):
            n, s = labels[2 * site], labels[2 * site + 1]
            if not 0 <= n <= self.n_max:
                raise ValueError(f"Fock label {n} outside 0..{self.n_max}")
            if s not in (DOWN, UP):
                raise ValueError(f"qubit label must be DOWN or UP, got {s!r}")
            idx = idx * self.site_dim + 2 * n + s
        return idx

    def labels(self, index: int) -> tuple[int, ...]:
        """Inverse of :meth:`index`."""
        if not 0 <= index < self.dim:
            raise ValueError(f"index {index} outside 0..{self.dim - 1}")
        codes = []
        for _ in range(self.n_sites):
            codes.append(index % self.site_dim)
            index //= self.site_dim
        out: list[int] = []
        for code in reversed(codes):
            out.extend((code // 2, code % 2))
        return tuple(out)


def make_space(n_max: int, n_sites: int = 1) -> FockSpace:
    """Construct a :class:`FockSpace`, validating the arguments."""
    return FockSpace(n_max=n_max, n_sites=n_sites)


def _cleaned(matrix) -> sp.csr_matrix:
    m = sp.csr_matrix(matrix, dtype=np.complex128)
    if m.nnz:
        m.data[np.abs(m.data) < _SPARSE_EPS] = 0.0
    m.eliminate_zeros()
    m.sort_indices()
    return m


@dataclass(frozen=True)
class Operator:
    """Sparse complex matrix tied to a FockSpace.

    The ``hermitian`` flag is a construction-time guarantee: flagged
    matrices satisfy M == M.conj().T exactly, element for element.
    """

    space: FockSpace
    matrix: sp.csr_matrix
    hermitian: bool = False

    def __post_init__(self):
        object.__setattr__(self, "matrix", _cleaned(self.matrix))
        if self.matrix.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"matrix shape {self.matrix.shape} does not match dim {self.space.dim}")

    def dagger(self) -> "Operator":
        return Operator(self.space, self.matrix.conj().T, hermitian=self.hermitian)

    def _require_same_space(self, other: "Operator"):
        if other.space != self.space:
            raise ValueError("operators live on different spaces")

    def __add__(self, other: "Operator") -> "Operator":
        self._require_same_space(other)
        return Operator(self.space, self.matrix + other.matrix,
                        hermitian=self.hermitian and other.hermitian)

    def __sub__(self, other: "Operator") -> "Operator":
        self._require_same_space(other)
        return Operator(self.space, self.matrix - other.matrix,
                        hermitian=self.hermitian and other.hermitian)

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.matrix, hermitian=self.hermitian)

    def __mul__(self, scalar) -> "Operator":
        c = complex(scalar)
        return Operator(self.space, self.matrix * c,
                        hermitian=self.hermitian and c.imag == 0.0)

    __rmul__ = __mul__

    def __matmul__(self, other: "Operator") -> "Operator":
        self._require_same_space(other)
        return Operator(self.space, self.matrix @ other.matrix, hermitian=False)


def hermitized(space: FockSpace, matrix) -> Operator:
    """Wrap ``(M + M^dagger)/2`` as an exactly hermitian Operator."""
    m = sp.csr_matrix(matrix, dtype=np.complex128)
    return Operator(space, (m + m.conj().T) * 0.5, hermitian=True)


@dataclass
class StateVector:
    """Normalized complex amplitude vector on a FockSpace."""

    space: FockSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=np.complex128, copy=True).ravel()
        if amp.shape != (self.space.dim,):
            raise ValueError(f"amplitude shape {amp.shape} does not match dim {self.space.dim}")
        nrm = float(np.linalg.norm(amp))
        if not np.isfinite(nrm) or nrm == 0.0:
            raise ValueError("state vector must be nonzero and finite")
        if nrm != 1.0:
            amp = amp / nrm
        self.amplitudes = amp

    def overlap(self, other: "StateVector") -> complex:
        if other.space != self.space:
            raise ValueError("states live on different spaces")
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def expectation(self, op: Operator):
        if op.space != self.space:
            raise ValueError("operator and state live on different spaces")
        val = complex(np.vdot(self.amplitudes, op.matrix @ self.amplitudes))
        return val.real if op.hermitian else val


def _check_site(space: FockSpace, site: int):
    if site not in range(space.n_sites):
        raise ValueError(f"site {site} invalid for a {space.n_sites}-site space")


def _embed(space: FockSpace, site: int, site_matrix) -> sp.csr_matrix:
    """Place a single-site matrix at `site`, identity on the other factor."""
    if space.n_sites == 1:
        return sp.csr_matrix(site_matrix, dtype=np.complex128)
    eye = sp.identity(space.site_dim, dtype=np.complex128, format="csr")
    if site == 0:
        return sp.kron(site_matrix, eye, format="csr")
    return sp.kron(eye, site_matrix, format="csr")


def annihilator(space: FockSpace, site: int = 0) -> Operator:
    """Mode operator a at `site`: a|n> = sqrt(n)|n-1>, top level dropped."""
    _check_site(space, site)
    d1 = space.n_max + 1
    a_b = sp.diags(np.sqrt(np.arange(1.0, d1)), 1)
    return Operator(space, _embed(space, site, sp.kron(a_b, sp.identity(2))))


def number(space: FockSpace, site: int = 0) -> Operator:
    """Photon number operator a^dagger a at `site` (diagonal, exact)."""
    _check_site(space, site)
    diag = np.repeat(np.arange(space.n_max + 1, dtype=float), 2)
    return Operator(space, _embed(space, site, sp.diags(diag)), hermitian=True)


_PAULI_2X2 = {
    # qubit factor ordering is (DOWN, UP); sigma_z|DOWN> = -|DOWN>
    "z": np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex),
    "x": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "y": np.array([[0.0, 1.0j], [-1.0j, 0.0]], dtype=complex),
    "+": np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex),
    "-": np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex),
}


def pauli(space: FockSpace, site: int, axis: str) -> Operator:
    """Pauli or qubit ladder operator at `site`; axis in {x, y, z, +, -}."""
    _check_site(space, site)
    if axis not in _PAULI_2X2:
        raise ValueError(f"axis must be one of x, y, z, +, -; got {axis!r}")
    s2 = _PAULI_2X2[axis]
    d1 = space.n_max + 1
    mat = _embed(space, site, sp.kron(sp.identity(d1), s2))
    return Operator(space, mat, hermitian=axis in "xyz")


def identity(space: FockSpace) -> Operator:
    return Operator(space, sp.identity(space.dim, dtype=np.complex128), hermitian=True)


def _site_diag_product(space: FockSpace, site_diag: np.ndarray) -> np.ndarray:
    """Tensor a per-site diagonal across all sites of the space."""
    full = site_diag
    for _ in range(space.n_sites - 1):
        full = np.kron(full, site_diag)
    return full


def parity(space: FockSpace) -> Operator:
    """Total excitation parity (-1)^(sum_j n_j + q_j), diagonal."""
    codes = np.arange(space.site_dim)
    site_diag = np.where((codes // 2 + codes % 2) % 2, -1.0, 1.0)
    return Operator(space, sp.diags(_site_diag_product(space, site_diag)), hermitian=True)


def total_excitation(space: FockSpace) -> Operator:
    """sum_j (N_j + sigma^+_j sigma^-_j), diagonal; conserved without CR terms."""
    codes = np.arange(space.site_dim)
    site_diag = (codes // 2 + codes % 2).astype(float)
    if space.n_sites == 1:
        full = site_diag
    else:
        ones = np.ones_like(site_diag)
        full = np.kron(site_diag, ones) + np.kron(ones, site_diag)
    return Operator(space, sp.diags(full), hermitian=True)


def swap(space: FockSpace) -> Operator:
    """Exchange the two sites (involution, hermitian permutation)."""
    if space.n_sites != 2:
        raise ValueError("swap requires a two-site space")
    sd = space.site_dim
    src = np.arange(space.dim)
    dst = (src % sd) * sd + src // sd
    mat = sp.csr_matrix((np.ones(space.dim), (dst, src)), shape=(space.dim, space.dim))
    return Operator(space, mat, hermitian=True)


def top_level_projector(space: FockSpace) -> Operator:
    """Projector onto basis states with any site at the truncation edge n_max."""
    codes = np.arange(space.site_dim)
    at_top = (codes // 2 == space.n_max).astype(float)
    if space.n_sites == 1:
        full = at_top
    else:
        below = 1.0 - at_top
        full = 1.0 - np.kron(below, below)
    return Operator(space, sp.diags(full), hermitian=True)


@dataclass(frozen=True)
class SiteSpec:
    """One site of a product state: Fock |n> or coherent |alpha>, plus qubit."""

    kind: str
    value: complex
    qubit: int = DOWN

    def __post_init__(self):
        if self.kind not in ("fock", "coherent"):
            raise ValueError(f"kind must be 'fock' or 'coherent', got {self.kind!r}")
        if self.qubit not in (DOWN, UP):
            raise ValueError(f"qubit must be DOWN or UP, got {self.qubit!r}")
        if self.kind == "fock":
            n = self.value
            if n != int(n.real) or n.imag != 0 or int(n.real) < 0:
                raise ValueError(f"Fock label must be a non-negative integer, got {self.value!r}")


def fock_site(n: int, qubit: int = DOWN) -> SiteSpec:
    return SiteSpec("fock", n, qubit)


def coherent_site(alpha: complex, qubit: int = DOWN) -> SiteSpec:
    return SiteSpec("coherent", alpha, qubit)


def _site_amplitudes(space: FockSpace, spec: SiteSpec) -> np.ndarray:
    d1 = space.n_max + 1
    osc = np.zeros(d1, dtype=np.complex128)
    if spec.kind == "fock":
        n = int(spec.value.real) if isinstance(spec.value, complex) else int(spec.value)
        if n > space.n_max:
            raise TruncationError(f"Fock level {n} exceeds n_max={space.n_max}", 1.0)
        osc[n] = 1.0
    else:
        alpha = complex(spec.value)
        if alpha == 0:
            osc[0] = 1.0
        else:
            lam = abs(alpha) ** 2
            # regularized lower incomplete gamma P(n_max+1, lam) is exactly the
            # Poisson mass above n_max
            tail = float(gammainc(space.n_max + 1, lam))
            if tail > _TAIL_TOL:
                raise TruncationError(
                    f"coherent state alpha={alpha} does not fit below n_max={space.n_max}", tail)
            ns = np.arange(d1)
            logmag = -lam / 2 + ns * np.log(abs(alpha)) - 0.5 * gammaln(ns + 1)
            osc = np.exp(logmag) * np.exp(1j * np.angle(alpha) * ns)
    qvec = np.zeros(2, dtype=np.complex128)
    qvec[spec.qubit] = 1.0
    return np.kron(osc, qvec)


def product_state(space: FockSpace, sites) -> StateVector:
    """Normalized product state from one SiteSpec per site."""
    specs = list(sites)
    if len(specs) != space.n_sites:
        raise ValueError(f"expected {space.n_sites} site specs, got {len(specs)}")
    amp = _site_amplitudes(space, specs[0])
    for s in specs[1:]:
        amp = np.kron(amp, _site_amplitudes(space, s))
    return StateVector(space, amp)


def displaced_fock(space: FockSpace, n: int, alpha: complex, qubit: int = DOWN) -> StateVector:
    """|n, alpha> = exp(alpha a^dagger - alpha* a)|n>, applied numerically.

    Single-site spaces only.  The displacement exponential is applied with
    a Krylov-based matrix-exponential action, so the result is exact up to
    truncation; occupation at the truncation edge above 1e-10 raises.
    """
    if space.n_sites != 1:
        raise ValueError("displaced_fock requires a single-site space")
    start = product_state(space, [fock_site(n, qubit)])
    alpha = complex(alpha)
    if alpha == 0:
        return start
    a = annihilator(space).matrix.tocsc()
    gen = alpha * a.conj().T - np.conj(alpha) * a
    amp = expm_multiply(gen, start.amplitudes)
    top = float(np.sum(np.abs(amp[2 * space.n_max:]) ** 2))
    if top > _TAIL_TOL:
        raise TruncationError(
            f"displaced Fock state (n={n}, alpha={alpha}) touches the truncation edge", top)
    return StateVector(space, amp)
