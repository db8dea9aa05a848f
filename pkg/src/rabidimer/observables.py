"""Derived quantities computed from evolution traces: population imbalance,
its time average and fluctuation, transient photon gain, qubit polarization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .propagate import TimeSeries

_DENOM_FLOOR = 1e-9
TRANSIENT_WINDOW = 100.0   # window for the vacuum photon-burst peak, units 1/omega0


def _require_aligned(a: TimeSeries, b: TimeSeries):
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise ValueError("time grids differ")


def imbalance(n_left: TimeSeries, n_right: TimeSeries) -> TimeSeries:
    """z(t) = <N_L - N_R>(t), pointwise."""
    _require_aligned(n_left, n_right)
    return TimeSeries(n_left.times, n_left.values - n_right.values, "z")


def normalized_imbalance(n_left: TimeSeries, n_right: TimeSeries) -> TimeSeries:
    """z_norm(t) = (N_L - N_R)/(N_L + N_R); near-empty samples become NaN."""
    _require_aligned(n_left, n_right)
    denom = n_left.values + n_right.values
    bad = denom <= _DENOM_FLOOR
    if bad.any():
        warnings.warn(f"normalized imbalance undefined at {int(bad.sum())} samples "
                      "(total population near zero)", stacklevel=2)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(bad, np.nan, (n_left.values - n_right.values) / denom)
    return TimeSeries(n_left.times, vals, "z_norm")


def time_average(series: TimeSeries, t_start: float = 0.0) -> float:
    """Trapezoidal mean of the series over [t_start, t_final]."""
    t, v = series.times, series.values
    if t_start >= t[-1]:
        raise ValueError("t_start must lie before the end of the series")
    i0 = int(np.searchsorted(t, t_start - 1e-12 * max(1.0, abs(t_start))))
    window = t[-1] - t[i0]
    return float(np.trapezoid(v[i0:], t[i0:]) / window)


@dataclass(frozen=True)
class ImbalanceSummary:
    """Aggregates of one dimer (or single-site) evolution run."""

    z_avg: float
    z_fluct: float
    n_tot_mean: float
    delta_n: float
    sigma_z_mean_left: float | None = None
    sigma_z_mean_right: float | None = None

    def __post_init__(self):
        if self.z_fluct < 0:
            raise ValueError("z_fluct must be >= 0")

    def as_dict(self) -> dict:
        return {
            "z_avg": self.z_avg,
            "z_fluct": self.z_fluct,
            "n_tot_mean": self.n_tot_mean,
            "delta_n": self.delta_n,
            "sigma_z_mean_left": self.sigma_z_mean_left,
            "sigma_z_mean_right": self.sigma_z_mean_right,
        }


def summarize(n_left: TimeSeries, n_right: TimeSeries | None = None,
              sigma_z_left: TimeSeries | None = None,
              sigma_z_right: TimeSeries | None = None, *, n_i: float,
              transient_window: float = TRANSIENT_WINDOW) -> ImbalanceSummary:
    """Fill an ImbalanceSummary from the raw traces.

    delta_n is the peak of N_tot over the transient window minus n_i; for a
    single-site run pass only n_left (then z = N and N_tot = N).
    """
    if n_right is not None:
        _require_aligned(n_left, n_right)
        z = n_left.values - n_right.values
        n_tot = n_left.values + n_right.values
    else:
        z = n_left.values
        n_tot = n_left.values
    zs = TimeSeries(n_left.times, z, "z")
    z_avg = time_average(zs)
    z_fluct = float(np.sqrt(time_average(TimeSeries(n_left.times, (z - z_avg) ** 2, ""))))
    n_tot_mean = time_average(TimeSeries(n_left.times, n_tot, ""))
    in_window = n_left.times <= transient_window
    delta_n = float(np.max(n_tot[in_window]) - n_i)

    def _mean(ts):
        return None if ts is None else time_average(ts)

    return ImbalanceSummary(z_avg=z_avg, z_fluct=z_fluct, n_tot_mean=n_tot_mean,
                            delta_n=delta_n,
                            sigma_z_mean_left=_mean(sigma_z_left),
                            sigma_z_mean_right=_mean(sigma_z_right))
