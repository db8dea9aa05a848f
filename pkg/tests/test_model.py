"""Hamiltonian assembly, symmetries, and the diamagnetic-term map."""

import numpy as np
import pytest
import scipy.linalg as la

from rabidimer.fockspace import (DOWN, fock_site, make_space, parity,
                                 product_state, swap, total_excitation)
from rabidimer.model import (DimerParams, RabiParams, a2_renormalize,
                             build_dimer, build_rabi, default_n_max,
                             params_from_config, params_to_config,
                             squeeze_parameter)


def dense_eigs(op):
    return la.eigvalsh(op.matrix.toarray())


def test_rabi_g0_spectrum():
    space = make_space(6, 1)
    h = build_rabi(space, RabiParams())
    w = dense_eigs(h)
    expected = np.sort(np.array([n + s / 2 for n in range(7) for s in (-1, 1)]))
    assert np.allclose(w, expected, atol=1e-12)
    assert w[0] == pytest.approx(-0.5, abs=1e-14)


def test_rabi_deep_strong_ground_energy():
    # polaron-frame expansion: E0 ~ -g^2/w0 - (Omega/2) e^{-2 g^2/w0^2}
    p = RabiParams(g=2.0)
    e_small = dense_eigs(build_rabi(make_space(45, 1), p))[:2]
    e_large = dense_eigs(build_rabi(make_space(55, 1), p))[:2]
    assert np.abs(e_small - e_large).max() < 1e-8
    # leading order only: the finite-Omega correction enters at ~1e-2
    expected = -4.0 - 0.5 * np.exp(-8.0)
    assert e_large[0] == pytest.approx(expected, abs=0.05)


def test_dimer_hopping_matrix_element():
    space = make_space(21, 2)
    J = 0.013
    h = build_dimer(space, DimerParams.identical(J=J))
    bra = space.index(20, DOWN, 0, DOWN)
    ket = space.index(19, DOWN, 1, DOWN)
    assert h.matrix[bra, ket] == pytest.approx(-J * np.sqrt(20), rel=1e-15)


def test_dimer_diagonal_when_uncoupled():
    space = make_space(3, 2)
    h = build_dimer(space, DimerParams.identical(g=0.0, J=0.0)).matrix.toarray()
    off = h - np.diag(np.diag(h))
    assert np.abs(off).max() == 0.0


def test_dimer_swap_symmetry_exact():
    space = make_space(4, 2)
    h = build_dimer(space, DimerParams.identical(g=0.7, J=0.02, D=0.1)).matrix
    s = swap(space).matrix
    dev = s.conj().T @ h @ s - h
    assert abs(dev).max() == 0.0


def test_hermiticity_exact():
    h1 = build_rabi(make_space(9, 1), RabiParams(g=1.3))
    h2 = build_dimer(make_space(5, 2), DimerParams.identical(g=0.4, J=0.05, D=0.2))
    for h in (h1, h2):
        assert h.hermitian
        assert abs(h.matrix - h.matrix.conj().T).max() == 0.0


def test_parity_commutes_exactly():
    space = make_space(5, 2)
    h = build_dimer(space, DimerParams.identical(g=0.9, J=0.03)).matrix
    pi = parity(space).matrix
    assert abs(h @ pi - pi @ h).max() == 0.0


def test_jc_flag_conserves_excitation():
    space = make_space(5, 2)
    h = build_dimer(space, DimerParams.identical(g=0.9, J=0.03), jc_only=True).matrix
    n_tot = total_excitation(space).matrix
    assert abs(h @ n_tot - n_tot @ h).max() == 0.0
    # full model does not conserve it
    h_full = build_dimer(space, DimerParams.identical(g=0.9, J=0.03)).matrix
    assert abs(h_full @ n_tot - n_tot @ h_full).max() > 0.1


def test_renormalize_identity_at_zero_d():
    p = DimerParams.identical(g=0.5, J=0.01)
    assert a2_renormalize(p) == p
    assert squeeze_parameter(0.0) == 0.0


def test_renormalize_closed_form():
    p = DimerParams.identical(g=0.5, J=0.01, D=0.75)
    q = a2_renormalize(p)
    assert q.left.omega0 == pytest.approx(2.0, rel=1e-14)
    assert q.left.g == pytest.approx(0.5 / np.sqrt(2), rel=1e-14)
    assert q.J == pytest.approx(0.02, rel=1e-14)
    assert q.D == 0.0
    assert q.left.Omega == p.left.Omega
    # reduced couplings shrink: g~/w~ = (g/w) e^{-3r}; J~/w~ = J/w stays put
    r = squeeze_parameter(0.75)
    assert q.left.g / q.left.omega0 == pytest.approx(0.5 * np.exp(-3 * r), rel=1e-12)
    assert q.J / q.left.omega0 == pytest.approx(0.01, rel=1e-12)


@pytest.mark.parametrize("D", [0.1, 0.75])
def test_renormalized_gaps_match(D):
    """Low eigenvalue gaps of H + H_A equal those of the squeezed H.

    J = 0: the squeeze is exact site by site.  A finite hopping picks up a
    two-mode-squeezing remainder ~ J sinh(2r) that no single hopping
    constant absorbs, so the tight tolerance only makes sense here.
    """
    p = DimerParams.identical(g=0.4, J=0.0, D=D)
    r = squeeze_parameter(D)
    n_ren = 12
    # squeezing mixes Fock levels upward by ~ e^{2r}; inflate the raw side
    n_raw = int(np.ceil(n_ren * np.exp(2 * r))) + 6
    w_raw = dense_eigs(build_dimer(make_space(n_raw, 2), p))
    w_ren = dense_eigs(build_dimer(make_space(n_ren, 2), a2_renormalize(p)))
    gaps_raw = np.diff(w_raw[:21])
    gaps_ren = np.diff(w_ren[:21])
    assert np.abs(gaps_raw - gaps_ren).max() < 1e-6


def test_params_validation():
    with pytest.raises(ValueError):
        RabiParams(g=-0.1)
    with pytest.raises(ValueError):
        DimerParams.identical(J=-1.0)
    with pytest.raises(ValueError):
        DimerParams.identical(D=-0.5)
    assert RabiParams().resonant
    assert not RabiParams(Omega=2.0).resonant
    assert DimerParams.identical().identical_sites


def test_config_roundtrip():
    p = DimerParams.identical(omega0=1.0, Omega=0.9, g=0.3, J=0.02, D=0.1)
    block = params_to_config(p, n_max=40, jc_only=True)
    q, n_max, jc = params_from_config(block)
    assert q == p and n_max == 40 and jc is True
    with pytest.raises(ValueError):
        params_from_config({"omega0": 1.0, "bogus": 2})


def test_default_n_max():
    assert default_n_max(20, 0.0) == 30
    assert default_n_max(20, 2.0) >= 20 + 32 + 12
    for g in (0.1, 0.5, 1.0, 2.0, 3.0):
        assert default_n_max(0, g) < default_n_max(0, g + 0.5)
