"""Shared fixtures for the long reference runs used by the acceptance tests.

Everything here is session-scoped because the strong-coupling dimer run at
the full observation window takes tens of minutes and feeds several
independent checks (imbalance average, photon burst, quasi-equilibration).
"""

import numpy as np
import pytest

from rabidimer.fockspace import fock_site, make_space, number, parity, pauli, product_state
from rabidimer.model import DimerParams, build_dimer, build_rabi, default_n_max
from rabidimer.observables import imbalance, time_average
from rabidimer.propagate import EvolutionPlan, TimeSeries, evolve
from rabidimer.spectral import diagonal_ensemble, eigensolve

N_I = 20


class DimerRun:
    """One dimer evolution from |n_i, 0> with the standard observable set."""

    def __init__(self, g, J, T, n_max=None, dt_sample=1.0):
        self.g, self.J, self.T = g, J, T
        self.n_max = default_n_max(N_I, g) if n_max is None else n_max
        space = make_space(self.n_max, 2)
        h = build_dimer(space, DimerParams.identical(g=g, J=J))
        psi0 = product_state(space, [fock_site(N_I), fock_site(0)])
        plan = EvolutionPlan(t_final=T, dt_sample=dt_sample, engine="krylov")
        ops = [number(space, 0), number(space, 1),
               pauli(space, 0, "z"), pauli(space, 1, "z")]
        self.n_l, self.n_r, self.sz_l, self.sz_r = evolve(
            h, psi0, plan, ops, ["n_L", "n_R", "sigma_z_L", "sigma_z_R"])
        self.z = imbalance(self.n_l, self.n_r)

    @property
    def frac(self):
        """Time-averaged imbalance as a fraction of the initial photon number."""
        return time_average(self.z) / N_I

    def window_mean(self, series, t_lo, t_hi):
        mask = (series.times >= t_lo) & (series.times <= t_hi)
        return float(np.mean(series.values[mask]))


@pytest.fixture(scope="session")
def strong_run():
    # deep-strong coupling at the full observation window; the slowest run
    # of the suite (tens of minutes) and the input to three criteria
    return DimerRun(g=2.0, J=0.01, T=2.0e4, n_max=74)


@pytest.fixture(scope="session")
def localized_run():
    return DimerRun(g=0.2, J=0.01, T=2.0e3)


@pytest.fixture(scope="session")
def weak_run():
    return DimerRun(g=0.01, J=0.01, T=2.0e3)


@pytest.fixture(scope="session")
def vacuum_burst():
    """Single-cavity photon number from |0, down> at g = 2."""
    space = make_space(default_n_max(0, 2.0), 1)
    h = build_rabi(space, DimerParams.identical(g=2.0).left)
    psi0 = product_state(space, [fock_site(0)])
    plan = EvolutionPlan(t_final=100.0, dt_sample=0.25)
    (n,) = evolve(h, psi0, plan, [number(space, 0)], ["n"])
    return n


@pytest.fixture(scope="session")
def strong_diag_ensemble():
    """Infinite-time imbalance prediction for the strong_run parameters.

    Full dense decomposition; the truncation is smaller than the dynamical
    one because the eigenvector matrix is memory-bound, but the prediction
    only enters a band three temporal-RMS wide.
    """
    space = make_space(38, 2)
    h = build_dimer(space, DimerParams.identical(g=2.0, J=0.01))
    spec = eigensolve(h)
    psi0 = product_state(space, [fock_site(N_I), fock_site(0)])
    z_op = number(space, 0) - number(space, 1)
    return diagonal_ensemble(psi0, spec, z_op)
