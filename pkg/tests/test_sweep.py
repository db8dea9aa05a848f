"""Phase-diagram engine tests: grid plumbing, classification, boundary
extraction, checkpoint/resume, worker independence, and the swap property."""

import json

import numpy as np
import pytest

from rabidimer.propagate import EvolutionPlan
from rabidimer.sweep import (
    DELOCALIZED,
    LOCALIZED,
    UNKNOWN,
    BoundaryReport,
    GridSpec,
    PhaseGrid,
    SweepSettings,
    boundary_extract,
    log_axis,
    row_critical_points,
    run_sweep,
    write_phase_outputs,
)

PLAN = EvolutionPlan(t_final=30.0, dt_sample=1.0, engine="full-diag")


def tiny_grid(g_values=(0.01, 0.05), J=0.05, T=30.0):
    return GridSpec(g_values=g_values, J_values=(J,), n_i=2, T=T)


def tiny_settings(**kw):
    kw.setdefault("n_max", 8)
    return SweepSettings(**kw)


class TestGridSpec:
    def test_log_axis_endpoints_and_spacing(self):
        ax = np.array(log_axis(0.01, 3.0, 40))
        assert ax[0] == pytest.approx(0.01, rel=1e-12)
        assert ax[-1] == pytest.approx(3.0, rel=1e-12)
        ratios = ax[1:] / ax[:-1]
        assert np.allclose(ratios, ratios[0], rtol=1e-9)

    def test_default_preset(self):
        spec = GridSpec.default()
        assert len(spec.g_values) == 40 and len(spec.J_values) == 20
        assert spec.n_i == 20 and spec.T == 2.0e4
        assert spec.g_values[0] == pytest.approx(0.01)
        assert spec.g_values[-1] == pytest.approx(3.0)
        assert spec.J_values[0] == pytest.approx(0.003)
        assert spec.J_values[-1] == pytest.approx(0.1)

    def test_ci_preset_is_smaller_and_shorter(self):
        spec = GridSpec.ci()
        assert len(spec.g_values) == 8 and len(spec.J_values) == 5
        assert spec.T == 2.0e3

    def test_validation(self):
        with pytest.raises(ValueError):
            GridSpec(g_values=(), J_values=(0.01,))
        with pytest.raises(ValueError):
            GridSpec(g_values=(0.1,), J_values=(0.01,), T=0.0)
        with pytest.raises(ValueError):
            GridSpec(g_values=(0.1,), J_values=(0.01,), n_i=-1)


class TestClassify:
    def make_grid(self, z_rows, n_i=20):
        z = np.atleast_2d(np.array(z_rows, dtype=float))
        grid = PhaseGrid.empty(GridSpec(g_values=tuple(range(1, z.shape[1] + 1)),
                                        J_values=tuple(range(1, z.shape[0] + 1)),
                                        n_i=n_i, T=10.0))
        grid.z_avg = z
        grid.status[:] = "done"
        return grid

    def test_full_imbalance_is_localized(self):
        grid = self.make_grid([[20.0]])
        assert grid.classify()[0, 0] == LOCALIZED

    def test_zero_imbalance_is_delocalized(self):
        grid = self.make_grid([[0.0]])
        assert grid.classify()[0, 0] == DELOCALIZED

    def test_threshold_is_inclusive_from_above(self):
        grid = self.make_grid([[10.0, 9.999]])  # n_i = 20, threshold 0.5
        labels = grid.classify(0.5)
        assert labels[0, 0] == LOCALIZED and labels[0, 1] == DELOCALIZED

    def test_pending_and_failed_are_unknown(self):
        grid = self.make_grid([[20.0, 0.0]])
        grid.status[0, 0] = "pending"
        grid.status[0, 1] = "failed"
        assert list(grid.classify()[0]) == [UNKNOWN, UNKNOWN]


class TestCriticalPoints:
    def test_double_transition_row(self):
        labels = np.array([DELOCALIZED, LOCALIZED, LOCALIZED, DELOCALIZED])
        g = np.array([1.0, 2.0, 3.0, 4.0])
        assert row_critical_points(labels, g) == (1.5, 3.5)

    def test_all_delocalized_row(self):
        labels = np.array([DELOCALIZED] * 4)
        g = np.arange(1.0, 5.0)
        assert row_critical_points(labels, g) == (None, None)

    def test_row_starting_localized_has_no_entry_point(self):
        labels = np.array([LOCALIZED, LOCALIZED, DELOCALIZED])
        g = np.array([1.0, 2.0, 3.0])
        assert row_critical_points(labels, g) == (None, None)

    def test_only_first_transition_pair_reported(self):
        labels = np.array([DELOCALIZED, LOCALIZED, DELOCALIZED, LOCALIZED])
        g = np.array([1.0, 2.0, 3.0, 4.0])
        assert row_critical_points(labels, g) == (1.5, 2.5)


class TestBoundaryExtract:
    def test_all_delocalized_grid(self):
        labels = np.full((2, 3), DELOCALIZED)
        report = boundary_extract(labels, np.arange(3.0), np.arange(2.0))
        assert report == BoundaryReport(points=(), J_c=None)

    def test_midpoints_and_j_c(self):
        labels = np.array([[DELOCALIZED, LOCALIZED, DELOCALIZED],
                           [DELOCALIZED, DELOCALIZED, DELOCALIZED]])
        g = np.array([1.0, 2.0, 3.0])
        J = np.array([0.01, 0.02])
        report = boundary_extract(labels, g, J)
        assert (1.5, 0.01) in report.points and (2.5, 0.01) in report.points
        assert (2.0, 0.015) in report.points  # label change along J
        assert report.J_c == 0.01

    def test_j_c_is_largest_localizing_row(self):
        labels = np.array([[LOCALIZED, DELOCALIZED],
                           [LOCALIZED, LOCALIZED],
                           [DELOCALIZED, DELOCALIZED]])
        report = boundary_extract(labels, np.array([1.0, 2.0]),
                                  np.array([0.01, 0.03, 0.05]))
        assert report.J_c == 0.03

    def test_unknown_cells_never_form_boundary_points(self):
        labels = np.array([[UNKNOWN, LOCALIZED, DELOCALIZED]])
        report = boundary_extract(labels, np.array([1.0, 2.0, 3.0]),
                                  np.array([0.01]))
        assert report.points == ((2.5, 0.01),)


class TestRunSweep:
    def test_completes_and_is_deterministic(self):
        grid = tiny_grid()
        a = run_sweep(grid, tiny_settings(), PLAN)
        b = run_sweep(grid, tiny_settings(), PLAN)
        assert (a.status == "done").all()
        assert np.isfinite(a.z_avg).all()
        assert np.array_equal(a.z_avg, b.z_avg)
        assert a.T == grid.T

    def test_grid_T_supersedes_plan_t_final(self):
        plan = EvolutionPlan(t_final=999.0, dt_sample=1.0, engine="full-diag")
        a = run_sweep(tiny_grid(), tiny_settings(), plan)
        b = run_sweep(tiny_grid(), tiny_settings(), PLAN)
        assert np.array_equal(a.z_avg, b.z_avg)

    def test_initial_site_swap_negates_z(self):
        grid = tiny_grid()
        left = run_sweep(grid, tiny_settings(initial_site=0), PLAN)
        right = run_sweep(grid, tiny_settings(initial_site=1), PLAN)
        assert np.allclose(left.z_avg, -right.z_avg, atol=1e-9)

    def test_starved_cell_fails_without_aborting(self):
        grid = GridSpec(g_values=(0.01, 2.0), J_values=(0.05,), n_i=2, T=30.0)
        result = run_sweep(grid, tiny_settings(n_max=6), PLAN)
        assert result.status[0, 0] == "done"
        assert result.status[0, 1] == "failed"
        assert np.isnan(result.z_avg[0, 1])
        assert list(result.classify()[0]) == [DELOCALIZED, UNKNOWN]

    def test_broken_cell_records_error(self):
        result = run_sweep(tiny_grid(), tiny_settings(n_max=-3), PLAN)
        assert (result.status == "failed").all()

    def test_worker_count_independence(self):
        grid = tiny_grid()
        one = run_sweep(grid, tiny_settings(), PLAN, workers=1)
        two = run_sweep(grid, tiny_settings(), PLAN, workers=2)
        assert np.array_equal(one.z_avg, two.z_avg)
        assert (one.status == two.status).all()


class TestCheckpoint:
    def test_log_written_and_resumed_without_recompute(self, tmp_path):
        path = str(tmp_path / "ck.jsonl")
        grid = tiny_grid()
        first = run_sweep(grid, tiny_settings(), PLAN, checkpoint=path)
        lines = [json.loads(s) for s in open(path).read().splitlines()]
        assert lines[0]["kind"] == "header"
        cells = [r for r in lines if r["kind"] == "cell"]
        assert len(cells) == 2

        # tamper one stored value; a resume must trust the log, not recompute
        cells[0]["z_avg"] = 99.0
        with open(path, "w") as fh:
            fh.write(json.dumps(lines[0]) + "\n")
            for rec in cells:
                fh.write(json.dumps(rec) + "\n")
        resumed = run_sweep(grid, tiny_settings(), PLAN, checkpoint=path)
        i_g = cells[0]["i_g"]
        assert resumed.z_avg[0, i_g] == 99.0
        other = 1 - i_g
        assert resumed.z_avg[0, other] == first.z_avg[0, other]

    def test_torn_tail_is_recomputed_with_warning(self, tmp_path):
        path = str(tmp_path / "ck.jsonl")
        grid = tiny_grid()
        full = run_sweep(grid, tiny_settings(), PLAN, checkpoint=path)
        lines = open(path).read().splitlines()
        with open(path, "w") as fh:
            fh.write("\n".join(lines[:-1]) + "\n")
            fh.write('{"kind": "cell", "i_j": 0, "i_g"')  # torn write
        with pytest.warns(UserWarning, match="torn"):
            resumed = run_sweep(grid, tiny_settings(), PLAN, checkpoint=path)
        assert np.array_equal(resumed.z_avg, full.z_avg)
        assert (resumed.status == "done").all()

    def test_header_mismatch_rejected(self, tmp_path):
        path = str(tmp_path / "ck.jsonl")
        run_sweep(tiny_grid(T=30.0), tiny_settings(), PLAN, checkpoint=path)
        with pytest.raises(ValueError, match="different sweep"):
            run_sweep(tiny_grid(T=40.0), tiny_settings(), PLAN, checkpoint=path)

    def test_midfile_corruption_raises(self, tmp_path):
        path = str(tmp_path / "ck.jsonl")
        run_sweep(tiny_grid(), tiny_settings(), PLAN, checkpoint=path)
        lines = open(path).read().splitlines()
        lines[1] = "not json at all"
        open(path, "w").write("\n".join(lines) + "\n")
        with pytest.raises(json.JSONDecodeError):
            run_sweep(tiny_grid(), tiny_settings(), PLAN, checkpoint=path)


class TestOutputs:
    def test_files_round_trip(self, tmp_path):
        grid = tiny_grid()
        result = run_sweep(grid, tiny_settings(), PLAN)
        written = write_phase_outputs(result, 0.5, str(tmp_path))
        names = {p.split("/")[-1] for p in written}
        assert names == {"phase_grid.csv", "phase_grid.json", "phase_points.dat"}

        rows = [ln for ln in open(tmp_path / "phase_grid.csv")
                if not ln.startswith("#")]
        vals = [float(x) for x in rows[0].split(",")]
        assert vals[0] == pytest.approx(grid.J_values[0])
        assert vals[1:] == pytest.approx(list(result.z_avg[0]), abs=0)

        meta = json.loads((tmp_path / "phase_grid.json").read_text())
        assert meta["threshold"] == 0.5
        assert meta["failures"] == []
        assert np.array(meta["labels"]).shape == result.z_avg.shape

        dat = [ln for ln in (tmp_path / "phase_points.dat").read_text().splitlines()
               if ln and not ln.startswith("#")]
        assert len(dat) == result.z_avg.size
        assert dat[0].split()[-1] in (LOCALIZED, DELOCALIZED)
