"""Two tunnel-coupled qubit-cavity systems in the ultrastrong-coupling
regime: localization phase diagrams, quasi-equilibration dynamics, spectral
diagnostics, and damped stochastic trajectories."""

__version__ = "0.1.0"

from .fockspace import (DOWN, UP, FockSpace, Operator, SiteSpec, StateVector,
                        TruncationError, annihilator, coherent_site,
                        displaced_fock, fock_site, hermitized, identity,
                        make_space, number, parity, pauli, product_state,
                        swap, top_level_projector, total_excitation)
from .model import (DimerParams, RabiParams, a2_renormalize, build_dimer,
                    build_rabi, default_n_max, params_from_config,
                    params_to_config, squeeze_parameter)
from .krylov import ExpmKrylov, KrylovError
from .propagate import (EvolutionPlan, NumericalError, TimeSeries,
                        TruncationReport, check_truncation, evolve,
                        evolve_state, resolve_engine)
from .observables import (ImbalanceSummary, imbalance, normalized_imbalance,
                          summarize, time_average)
from .spectral import (CompletenessError, EigensolveError, SpectralData,
                       diagonal_ensemble, eigensolve, franck_condon,
                       level_spacing_variance, overlaps,
                       photon_number_variance)
from .trajectories import (DampingConfig, TrajectoryResult,
                           bare_jump_operators, dressed_jump_operators,
                           lindblad_reference, resolve_jump_basis,
                           run_trajectories, run_trajectory)
from .sweep import (BoundaryReport, GridSpec, PhaseGrid, SweepSettings,
                    boundary_extract, row_critical_points, run_sweep,
                    write_phase_outputs)
from .fileio import read_timeseries_csv, write_json, write_timeseries_csv
