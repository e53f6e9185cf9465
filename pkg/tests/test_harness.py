"""Tests for the rate-experiment harness: cells, lambda selection, slopes, files."""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from lpmkl import (
    Cell,
    ExperimentPlan,
    InsufficientDataError,
    RateRecord,
    SpectralKernel,
    TheoryParams,
    dense_spec,
    build_truth,
    fit_slope,
    grid_cv_lambda,
    gram,
    mkl_predictor,
    optimal_lambda,
    plan_cells,
    run_cell,
    slope_band,
    solve,
    summarize,
    sweep,
)
from lpmkl.harness import plan_from_json, read_records_csv, write_records_csv
from lpmkl.solver import MklProblem
from lpmkl.synth import Dataset, sample_dataset


def _exact_power_records(c: float, exponent: float, n_values, replicates=1) -> list[RateRecord]:
    """Records following measured_error = c * n**exponent with no noise."""
    recs = []
    for n in n_values:
        for r in range(replicates):
            recs.append(
                RateRecord(
                    n=n, M=2, p=2.0, s=0.5, pattern="dense", replicate=r,
                    measured_error=c * float(n) ** exponent, stderr=0.0,
                    lambda_used=0.01, predicted_leading=0.1, converged=True,
                )
            )
    return recs


class TestSlopeFitting:
    def test_band_at_two_thirds(self):
        low, high = slope_band(-2.0 / 3.0)
        assert_allclose((low, high), (-0.85, -0.50), rtol=1e-12)

    def test_exact_power_law_recovered(self):
        fit = fit_slope(_exact_power_records(3.0, -0.7, [64, 128, 256, 512, 1024]))
        assert_allclose(fit.slope, -0.7, rtol=1e-12)
        assert fit.stderr < 1e-12
        assert_allclose(fit.intercept, np.log(3.0), rtol=1e-10)

    def test_replicates_are_averaged_per_n(self):
        """Two replicates straddling the power law still fit it exactly."""
        recs = []
        for n in (64, 128, 256, 512):
            e = float(n) ** -0.6
            for r, scale in enumerate((0.5, 1.5)):
                recs.append(
                    RateRecord(
                        n=n, M=2, p=2.0, s=0.5, pattern="dense", replicate=r,
                        measured_error=scale * e, stderr=0.0, lambda_used=0.01,
                        predicted_leading=0.1, converged=True,
                    )
                )
        assert_allclose(fit_slope(recs).slope, -0.6, rtol=1e-12)

    def test_nonpositive_means_are_dropped(self):
        recs = _exact_power_records(1.0, -0.5, [64, 128, 256, 512])
        recs.append(
            RateRecord(
                n=2048, M=2, p=2.0, s=0.5, pattern="dense", replicate=0,
                measured_error=0.0, stderr=0.0, lambda_used=0.01,
                predicted_leading=0.1, converged=True,
            )
        )
        # the zero-error point cannot enter the log fit; the rest still can
        assert_allclose(fit_slope(recs).slope, -0.5, rtol=1e-12)

    def test_rejects_mixed_configurations(self):
        recs = _exact_power_records(1.0, -0.5, [64, 128, 256, 512])
        stray = RateRecord(
            n=64, M=3, p=2.0, s=0.5, pattern="dense", replicate=0,
            measured_error=0.1, stderr=0.0, lambda_used=0.01,
            predicted_leading=0.1, converged=True,
        )
        with pytest.raises(ValueError, match="mix"):
            fit_slope(recs + [stray])

    def test_needs_four_usable_sizes(self):
        with pytest.raises(InsufficientDataError, match=">= 4"):
            fit_slope(_exact_power_records(1.0, -0.5, [64, 128, 256]))
        with pytest.raises(InsufficientDataError):
            fit_slope([])
        assert issubclass(InsufficientDataError, ValueError)


class TestExperimentPlan:
    def _base(self, **kw):
        args = dict(
            n_grid=(16, 32), M_grid=(2,), p_grid=(2.0,), s_values=(0.5,), patterns=("dense",)
        )
        args.update(kw)
        return ExperimentPlan(**args)

    def test_sequences_coerced_to_tuples(self):
        plan = ExperimentPlan(
            n_grid=[16, 32], M_grid=[2], p_grid=[2.0], s_values=[0.5], patterns=["dense"]
        )
        assert plan.n_grid == (16, 32)
        assert plan.patterns == ("dense",)

    def test_validation(self):
        with pytest.raises(ValueError, match="increasing"):
            self._base(n_grid=(32, 32))
        with pytest.raises(ValueError, match=">= 8"):
            self._base(n_grid=(4, 32))
        with pytest.raises(ValueError, match="replicates"):
            self._base(replicates=0)
        with pytest.raises(ValueError, match="lambda_rule"):
            self._base(lambda_rule="oracle")
        with pytest.raises(ValueError, match="pattern"):
            self._base(patterns=("dense", "block"))
        with pytest.raises(ValueError, match="n_test"):
            self._base(n_test=1)
        with pytest.raises(ValueError, match="lambda_grid_size"):
            self._base(lambda_grid_size=0)
        with pytest.raises(ValueError, match="lambda_grid_span"):
            self._base(lambda_grid_span=0.5)
        with pytest.raises(ValueError, match="workers"):
            self._base(workers=0)

    def test_cell_enumeration_order(self):
        plan = self._base(replicates=2)
        cells = plan_cells(plan)
        assert cells == [
            Cell(16, 2, 2.0, 0.5, "dense", 0),
            Cell(16, 2, 2.0, 0.5, "dense", 1),
            Cell(32, 2, 2.0, 0.5, "dense", 0),
            Cell(32, 2, 2.0, 0.5, "dense", 1),
        ]

    def test_cell_count(self):
        plan = ExperimentPlan(
            n_grid=(16, 32, 64), M_grid=(1, 2), p_grid=(1.0, 2.0),
            s_values=(0.3, 0.5), patterns=("sparse", "dense"), replicates=3,
        )
        assert len(plan_cells(plan)) == 3 * 2 * 2 * 2 * 2 * 3


class TestGridCvLambda:
    def _dataset_and_grams(self, n=40, M=2, seed=0, zero_response=False):
        kernel = SpectralKernel(decay=0.5)
        truth = build_truth(dense_spec(M, seed=seed), kernel)
        ds = sample_dataset(truth, kernel, n=n, L=0.5, seed=seed)
        if zero_response:
            ds = Dataset(X=ds.X, y=np.zeros(n), truth=truth, noise_bound_L=ds.noise_bound_L)
        grams = [gram(kernel, ds.X[:, m]) for m in range(M)]
        return ds, grams

    def test_returns_grid_member(self):
        ds, grams = self._dataset_and_grams()
        grid = [1e-4, 1e-3, 1e-2, 1e-1]
        for p in (1.0, 2.0, 4.0):
            lam = grid_cv_lambda(ds, grams, p, grid, seed=1)
            assert lam in grid

    def test_ties_resolve_to_largest(self):
        """With y = 0 every lambda fits perfectly, so the largest must win."""
        ds, grams = self._dataset_and_grams(zero_response=True)
        grid = [1e-3, 1e-2, 1e-1]
        assert grid_cv_lambda(ds, grams, 2.0, grid, seed=1) == 1e-1
        assert grid_cv_lambda(ds, grams, 4.0, grid, seed=1) == 1e-1

    def test_single_candidate(self):
        ds, grams = self._dataset_and_grams()
        assert grid_cv_lambda(ds, grams, 2.0, [0.02]) == 0.02

    def test_deterministic_in_seed(self):
        ds, grams = self._dataset_and_grams()
        grid = np.geomspace(1e-4, 1e-1, 7)
        a = grid_cv_lambda(ds, grams, 2.0, grid, seed=3)
        b = grid_cv_lambda(ds, grams, 2.0, grid, seed=3)
        assert a == b

    def test_validation(self):
        ds, grams = self._dataset_and_grams()
        with pytest.raises(ValueError, match="nonempty and positive"):
            grid_cv_lambda(ds, grams, 2.0, [])
        with pytest.raises(ValueError, match="nonempty and positive"):
            grid_cv_lambda(ds, grams, 2.0, [0.0, 0.1])
        tiny, tiny_grams = self._dataset_and_grams(n=1)
        with pytest.raises(ValueError, match="holdout"):
            grid_cv_lambda(tiny, tiny_grams, 2.0, [0.1])


class TestRunCell:
    _CELL = Cell(n=64, M=2, p=2.0, s=0.5, pattern="dense", replicate=0)

    def _plan(self, **kw):
        args = dict(
            n_grid=(64,), M_grid=(2,), p_grid=(2.0,), s_values=(0.5,),
            patterns=("dense",), replicates=1, n_test=256, master_seed=11,
        )
        args.update(kw)
        return ExperimentPlan(**args)

    def test_deterministic(self):
        plan = self._plan()
        assert run_cell(plan, self._CELL) == run_cell(plan, self._CELL)

    def test_theory_rule_uses_scaled_closed_form(self):
        plan = self._plan(lambda_rule="theory", c_free=0.3)
        rec = run_cell(plan, self._CELL)
        params = TheoryParams(n=64, M=2, p=2.0, s=0.5, R_p=np.sqrt(2.0), L=0.5, c_free=0.3)
        assert rec.lambda_used == optimal_lambda(params)
        assert rec.measured_error > 0
        assert rec.converged

    def test_degenerate_grid_pins_lambda_to_center(self):
        plan = self._plan(lambda_grid_size=1)
        rec = run_cell(plan, self._CELL)
        params = TheoryParams(n=64, M=2, p=2.0, s=0.5, R_p=np.sqrt(2.0), L=0.5)
        assert rec.lambda_used == optimal_lambda(params)

    def test_cv_tracks_theory_on_easy_cell(self):
        """Median CV choice lands within a grid step or two of the closed form."""
        plan = self._plan(n_grid=(256,), replicates=5, n_test=512, master_seed=20260825)
        params = TheoryParams(n=256, M=2, p=2.0, s=0.5, R_p=np.sqrt(2.0), L=0.5)
        lam_star = optimal_lambda(params)
        ratios = []
        for rep in range(5):
            cell = Cell(n=256, M=2, p=2.0, s=0.5, pattern="dense", replicate=rep)
            rec = run_cell(plan, cell)
            ratios.append(rec.lambda_used / lam_star)
            assert rec.lambda_used <= 4.0 * lam_star  # never over-regularizes here
        assert 1.0 / 16.0 <= float(np.median(ratios)) <= 2.0

    def test_pattern_radius_wiring(self):
        """Dense truths give a p-free leading term; sparse ones grow with p."""

        def leading(pattern: str, p: float) -> float:
            plan = self._plan(p_grid=(p,), patterns=(pattern,), lambda_rule="theory")
            cell = Cell(n=64, M=2, p=p, s=0.5, pattern=pattern, replicate=0)
            return run_cell(plan, cell).predicted_leading

        assert_allclose(leading("dense", 1.0), leading("dense", 4.0), rtol=1e-12)
        assert leading("sparse", 1.0) < leading("sparse", 4.0)

    def test_predictor_matches_in_sample_fit(self):
        kernel = SpectralKernel(decay=0.5)
        rng = np.random.default_rng(4)
        X = rng.uniform(size=(30, 2))
        y = rng.standard_normal(30)
        grams = [gram(kernel, X[:, m]) for m in range(2)]
        sol = solve(MklProblem(y=y, grams=grams, p=2.0, lambda1=0.05))
        predict = mkl_predictor(kernel, X, sol.coef_blocks)
        assert_allclose(predict(X), sol.fitted, atol=1e-8)


class TestSweepAndFiles:
    def _plan(self, **kw):
        args = dict(
            n_grid=(16, 32), M_grid=(2,), p_grid=(2.0,), s_values=(0.5,),
            patterns=("dense",), replicates=2, lambda_rule="theory",
            n_test=64, master_seed=7,
        )
        args.update(kw)
        return ExperimentPlan(**args)

    def test_sweep_writes_and_reads_back(self, tmp_path):
        plan = self._plan()
        records, summary = sweep(plan, out_dir=tmp_path)
        assert len(records) == 4
        assert (tmp_path / "records.csv").exists()
        assert (tmp_path / "summary.json").exists()
        assert read_records_csv(tmp_path / "records.csv") == records
        entry = summary["configs"][0]
        assert entry["n_values"] == [16, 32]
        # two sample sizes cannot support a four-point slope fit
        assert entry["pass"] is None and "skip_reason" in entry

    def test_sweep_reruns_identically(self, tmp_path):
        plan = self._plan()
        sweep(plan, out_dir=tmp_path / "a")
        sweep(plan, out_dir=tmp_path / "b")
        strip = lambda p: (p / "records.csv").read_text().splitlines()[1:]  # noqa: E731
        assert strip(tmp_path / "a") == strip(tmp_path / "b")
        assert (tmp_path / "a" / "summary.json").read_bytes() == (
            tmp_path / "b" / "summary.json"
        ).read_bytes()

    def test_parallel_matches_serial(self, tmp_path):
        serial, _ = sweep(self._plan())
        parallel, _ = sweep(self._plan(workers=2))
        assert parallel == serial

    def test_records_csv_round_trip(self, tmp_path):
        records = [
            RateRecord(
                n=128, M=3, p=1.5, s=0.3, pattern="sparse", replicate=2,
                measured_error=0.0123456789012345, stderr=1e-4,
                lambda_used=0.007, predicted_leading=0.05, converged=False,
            ),
            RateRecord(
                n=256, M=3, p=1.5, s=0.3, pattern="sparse", replicate=0,
                measured_error=2.5e-3, stderr=3.3e-5,
                lambda_used=0.011, predicted_leading=0.03, converged=True,
            ),
        ]
        path = tmp_path / "records.csv"
        write_records_csv(records, path)
        assert path.read_text().startswith("# generated_at=")
        assert read_records_csv(path) == records

    def test_read_rejects_foreign_csv(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError, match="records CSV"):
            read_records_csv(bad)

    def test_plan_from_json(self, tmp_path):
        good = tmp_path / "plan.json"
        good.write_text(
            '{"n_grid": [16, 32], "M_grid": [2], "p_grid": [2.0],'
            ' "s_values": [0.5], "patterns": ["dense"], "replicates": 3}'
        )
        plan = plan_from_json(good)
        assert plan.n_grid == (16, 32) and plan.replicates == 3
        bad = tmp_path / "bad.json"
        bad.write_text('{"n_grid": [16, 32], "M_grid": [2], "p_grid": [2.0],'
                       ' "s_values": [0.5], "patterns": ["dense"], "shuffle": true}')
        with pytest.raises(ValueError, match="malformed"):
            plan_from_json(bad)

    def test_summarize_flags_passing_power_law(self):
        recs = []
        for n in (64, 128, 256, 512):
            e = float(n) ** (-2.0 / 3.0)
            recs.append(
                RateRecord(
                    n=n, M=2, p=2.0, s=0.5, pattern="dense", replicate=0,
                    measured_error=e, stderr=0.0, lambda_used=0.01,
                    predicted_leading=0.1, converged=(n != 64),
                )
            )
        summary = summarize(recs)
        (entry,) = summary["configs"]
        assert entry["pass"] is True
        assert_allclose(entry["slope"], -2.0 / 3.0, rtol=1e-12)
        assert_allclose(entry["band"], [-0.85, -0.50], rtol=1e-12)
        assert entry["all_converged"] is False
