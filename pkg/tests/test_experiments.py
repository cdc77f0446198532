"""Tests for the experiment drivers.

Runs here use a deliberately small task (2-d blobs, 8 training steps,
a few hundred test points) so the full pipeline executes in well under a
second per call while exercising the same code paths as the default
desk-scale task.
"""

import numpy as np
import pytest
from scipy import stats

from wdro.datasets import gaussian_blobs, save_csv
from wdro.experiments import (
    METHODS,
    DatasetConfig,
    ExperimentConfig,
    GradientAnalysisConfig,
    RateStudyConfig,
    SweepConfig,
    comparison_summary,
    method_train_config,
    read_comparison,
    read_gradient_report,
    read_rate_points,
    read_sweep,
    run_comparison,
    run_gradient_analysis,
    run_penalty_sweep,
    run_rate_study,
    sweep_summary,
    write_comparison,
    write_gradient_report,
    write_rate_study,
    write_sweep,
)
from wdro.models import TrainConfig, TrainingDivergence

TINY_DATA = DatasetConfig(n_train=200, n_test=300, n_classes=3, dim=2,
                          noise=0.15)
TINY_TRAIN = TrainConfig(total_examples=512, batch_size=64)


def _tiny_config(**overrides):
    base = dict(
        methods=("erm", "wdro"),
        dataset=TINY_DATA,
        contamination_levels=(0.05,),
        split_level=0.05,
        trials=2,
        seed=0,
        hidden=(8,),
        train=TINY_TRAIN,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestConfigValidation:
    def test_experiment_config(self):
        with pytest.raises(ValueError, match="unknown methods"):
            _tiny_config(methods=("erm", "dropout"))
        with pytest.raises(ValueError, match="duplicate methods"):
            _tiny_config(methods=("erm", "erm"))
        with pytest.raises(ValueError, match="at least one method"):
            _tiny_config(methods=())
        with pytest.raises(ValueError, match="lie in"):
            _tiny_config(contamination_levels=(1.5,), split_level=1.5)
        with pytest.raises(ValueError, match="split_level"):
            _tiny_config(split_level=0.3)
        with pytest.raises(ValueError, match="trials"):
            _tiny_config(trials=0)
        with pytest.raises(ValueError, match="lam_grad"):
            _tiny_config(lam_grad=-1.0)

    def test_dataset_config(self):
        with pytest.raises(ValueError, match="unknown dataset kind"):
            DatasetConfig(kind="spirals")
        with pytest.raises(ValueError, match="needs a path"):
            DatasetConfig(kind="csv")
        with pytest.raises(ValueError, match="labels_path"):
            DatasetConfig(kind="idx", path="x.idx")
        with pytest.raises(ValueError, match="positive"):
            DatasetConfig(n_train=0)

    def test_sweep_config(self):
        with pytest.raises(ValueError, match="at least two"):
            SweepConfig(lam_values=(0.1,))
        with pytest.raises(ValueError, match="duplicate"):
            SweepConfig(lam_values=(0.1, 0.1))
        with pytest.raises(ValueError, match="nonnegative"):
            SweepConfig(lam_values=(0.1, -0.1))

    def test_gradient_config(self):
        with pytest.raises(ValueError, match="checkpoint"):
            GradientAnalysisConfig(checkpoints=0)
        with pytest.raises(ValueError, match="histogram bin"):
            GradientAnalysisConfig(bins=0)

    def test_method_train_config(self):
        base = TrainConfig(lam_grad=0.9, mixup=False, seed=1)
        erm = method_train_config(base, "erm", 0.25, 7)
        assert erm.lam_grad == 0.0 and not erm.mixup and erm.seed == 7
        wdro = method_train_config(base, "wdro", 0.25, 7)
        assert wdro.lam_grad == 0.25 and not wdro.mixup
        mix = method_train_config(base, "mixup", 0.25, 7)
        assert mix.lam_grad == 0.0 and mix.mixup
        both = method_train_config(base, "wdro+mix", 0.25, 7)
        assert both.lam_grad == 0.25 and both.mixup
        with pytest.raises(ValueError, match="unknown method"):
            method_train_config(base, "irm", 0.25, 7)

    def test_method_table_is_consistent(self):
        assert METHODS == ("erm", "wdro", "mixup", "wdro+mix")


@pytest.fixture(scope="module")
def tiny_report():
    return run_comparison(_tiny_config())


@pytest.fixture(scope="module")
def gradient_report():
    return run_gradient_analysis(GradientAnalysisConfig(
        methods=("erm", "wdro"), dataset=TINY_DATA, split_level=0.05,
        checkpoints=4, bins=10, seed=0, hidden=(8,), train=TINY_TRAIN,
    ))


@pytest.fixture(scope="module")
def rate_result():
    return run_rate_study(RateStudyConfig(alphas=(0.2, 0.1),
                                          grid_points=201))


class TestRunComparison:
    def test_shape_and_ordering(self, tiny_report):
        report = tiny_report
        assert len(report.records) == 4          # 2 methods x 2 trials
        keys = [(r.method, r.trial) for r in report.records]
        assert keys == sorted(keys)
        assert report.levels == (0.05,)
        assert report.split_level == 0.05
        assert report.completed() and report.n_diverged == 0

    def test_reductions_restate_the_accuracies(self, tiny_report):
        report = tiny_report
        for r in report.records:
            for cont, red in zip(r.contaminated_accuracy, r.reduction):
                assert red == r.clean_accuracy - cont

    def test_gradient_quartiles_are_ordered(self, tiny_report):
        report = tiny_report
        for r in report.records:
            assert r.grad_q1 <= r.grad_median <= r.grad_q3

    def test_categories_partition_the_test_set(self, tiny_report):
        report = tiny_report
        for r in report.records:
            assert r.c1_count + r.c2_count == TINY_DATA.n_test

    def test_rerun_is_identical(self, tiny_report):
        report = tiny_report
        again = run_comparison(_tiny_config())
        assert again == report

    def test_method_records_filter(self, tiny_report):
        report = tiny_report
        erm = report.method_records("erm")
        assert len(erm) == 2
        assert all(r.method == "erm" for r in erm)


class TestSeedIsolation:
    def test_contamination_seed_only_moves_contamination(self):
        base = run_comparison(_tiny_config(contamination_levels=(0.1,),
                                           split_level=0.1))
        moved = run_comparison(_tiny_config(contamination_levels=(0.1,),
                                            split_level=0.1,
                                            contamination_seed=123))
        for a, b in zip(base.records, moved.records):
            assert (a.method, a.trial) == (b.method, b.trial)
            assert a.clean_accuracy == b.clean_accuracy
            assert a.grad_q1 == b.grad_q1
            assert a.grad_median == b.grad_median
            assert a.grad_q3 == b.grad_q3
        assert any(
            a.contaminated_accuracy != b.contaminated_accuracy
            for a, b in zip(base.records, moved.records)
        )

    def test_zero_level_contamination_is_identity(self):
        report = run_comparison(_tiny_config(
            methods=("erm",), trials=1,
            contamination_levels=(0.0,), split_level=0.0,
        ))
        (rec,) = report.records
        assert rec.contaminated_accuracy == (rec.clean_accuracy,)
        assert rec.reduction == (0.0,)
        assert rec.c2_count == round(
            (1 - rec.clean_accuracy) * TINY_DATA.n_test)


class TestSweep:
    def test_zero_weight_rows_reproduce_erm(self):
        comparison = run_comparison(_tiny_config(methods=("erm",)))
        sweep = run_penalty_sweep(SweepConfig(
            lam_values=(0.0, 0.05), dataset=TINY_DATA,
            contamination_levels=(0.05,), trials=2, seed=0,
            hidden=(8,), train=TINY_TRAIN,
        ))
        zero_rows = [r for r in sweep.records if r.lam == 0.0]
        assert len(zero_rows) == 2
        for erm, row in zip(comparison.records, zero_rows):
            assert row.trial == erm.trial
            assert row.clean_accuracy == erm.clean_accuracy
            assert row.contaminated_accuracy == erm.contaminated_accuracy
            assert row.reduction == erm.reduction

    def test_rows_sorted_by_lam_then_trial(self):
        sweep = run_penalty_sweep(SweepConfig(
            lam_values=(0.05, 0.0), dataset=TINY_DATA,
            contamination_levels=(0.05,), trials=2, seed=0,
            hidden=(8,), train=TINY_TRAIN,
        ))
        keys = [(r.lam, r.trial) for r in sweep.records]
        assert keys == sorted(keys)
        assert sweep.completed()

    def test_summary_keys_are_float_reprs(self):
        sweep = run_penalty_sweep(SweepConfig(
            lam_values=(0.0, 0.05), dataset=TINY_DATA,
            contamination_levels=(0.05,), trials=1, seed=0,
            hidden=(8,), train=TINY_TRAIN,
        ))
        summary = sweep_summary(sweep)
        assert set(summary["lams"]) == {"0.0", "0.05"}
        block = summary["lams"]["0.0"]
        assert block["trials"] == 1 and block["diverged"] == 0
        assert block["clean_std"] is None      # one trial: undefined


class TestComparisonSummary:
    def test_aggregates_recompute_from_records(self):
        report = run_comparison(_tiny_config())
        summary = comparison_summary(report)
        erm = summary["methods"]["erm"]
        recs = report.method_records("erm")
        cleans = [r.clean_accuracy for r in recs]
        assert erm["clean_mean"] == pytest.approx(np.mean(cleans), abs=0)
        assert erm["clean_std"] == pytest.approx(np.std(cleans, ddof=1),
                                                 abs=1e-15)
        reds = [r.reduction[0] for r in recs]
        level = erm["levels"]["0.05"]
        assert level["reduction_mean"] == pytest.approx(np.mean(reds),
                                                        abs=0)
        assert level["reduction_median"] == pytest.approx(np.median(reds),
                                                          abs=0)

    def test_welch_matches_scipy(self):
        report = run_comparison(_tiny_config())
        summary = comparison_summary(report)
        a = [r.reduction[0] for r in report.method_records("erm")]
        b = [r.reduction[0] for r in report.method_records("wdro")]
        want = float(stats.ttest_ind(a, b, equal_var=False).pvalue)
        assert summary["welch_p_reduction"]["erm|wdro"]["0.05"] == \
            pytest.approx(want, abs=0)

    def test_single_trial_leaves_welch_undefined(self):
        report = run_comparison(_tiny_config(trials=1))
        summary = comparison_summary(report)
        assert summary["welch_p_reduction"]["erm|wdro"]["0.05"] is None


class TestDivergenceHandling:
    def _patched_run(self, monkeypatch, cfg):
        import wdro.experiments as exp
        real = exp.train

        def flaky(features, labels, spec, config):
            if config.mixup:
                raise TrainingDivergence(0, float("nan"))
            return real(features, labels, spec, config)

        monkeypatch.setattr(exp, "train", flaky)
        return run_comparison(cfg)

    def test_diverged_rows_are_recorded_not_dropped(self, monkeypatch):
        report = self._patched_run(
            monkeypatch, _tiny_config(methods=("erm", "mixup")))
        assert not report.completed()
        assert report.n_diverged == 2
        for rec in report.method_records("mixup"):
            assert rec.diverged
            assert rec.clean_accuracy is None
            assert rec.contaminated_accuracy == (None,)
            assert rec.c1_count is None
        for rec in report.method_records("erm"):
            assert not rec.diverged

    def test_summary_counts_divergences(self, monkeypatch):
        report = self._patched_run(
            monkeypatch, _tiny_config(methods=("erm", "mixup")))
        summary = comparison_summary(report)
        assert summary["methods"]["mixup"]["diverged"] == 2
        assert summary["methods"]["mixup"]["clean_mean"] is None
        assert summary["methods"]["erm"]["diverged"] == 0
        # no completed mixup trials: Welch has nothing to compare
        assert summary["welch_p_reduction"]["erm|mixup"]["0.05"] is None

    def test_diverged_rows_roundtrip(self, monkeypatch, tmp_path):
        report = self._patched_run(
            monkeypatch, _tiny_config(methods=("erm", "mixup")))
        write_comparison(report, tmp_path)
        assert read_comparison(tmp_path) == report


class TestRoundTrips:
    def test_comparison(self, tmp_path):
        report = run_comparison(_tiny_config(contamination_levels=(0.02, 0.05),
                                             split_level=0.02))
        write_comparison(report, tmp_path)
        back = read_comparison(tmp_path)
        assert back == report

    def test_comparison_header_checked(self, tmp_path):
        report = run_comparison(_tiny_config(trials=1))
        write_comparison(report, tmp_path)
        csv_path = tmp_path / "trials.csv"
        text = csv_path.read_text().replace("reduction_0.05", "red_0.05")
        csv_path.write_text(text)
        with pytest.raises(ValueError, match="does not match"):
            read_comparison(tmp_path)

    def test_sweep(self, tmp_path):
        sweep = run_penalty_sweep(SweepConfig(
            lam_values=(0.0, 0.05), dataset=TINY_DATA,
            contamination_levels=(0.05,), trials=1, seed=0,
            hidden=(8,), train=TINY_TRAIN,
        ))
        write_sweep(sweep, tmp_path)
        assert read_sweep(tmp_path) == sweep

    def test_gradient_report(self, tmp_path):
        report = run_gradient_analysis(GradientAnalysisConfig(
            methods=("erm", "wdro"), dataset=TINY_DATA, split_level=0.05,
            checkpoints=4, bins=10, seed=0, hidden=(8,), train=TINY_TRAIN,
        ))
        write_gradient_report(report, tmp_path)
        assert read_gradient_report(tmp_path) == report


class TestGradientAnalysis:
    def test_checkpoint_rows(self, gradient_report):
        report = gradient_report
        for method in ("erm", "wdro"):
            rows = [r for r in report.checkpoints if r.method == method]
            assert [r.checkpoint for r in rows] == [0, 1, 2, 3]
            assert [r.step for r in rows] == [2, 4, 6, 8]
            for r in rows:
                assert r.grad_q1 <= r.grad_median <= r.grad_q3

    def test_histograms_cover_the_test_set(self, gradient_report):
        report = gradient_report
        for method in ("erm", "wdro"):
            rows = [b for b in report.bins if b.method == method]
            assert len(rows) == 10
            assert rows[0].bin_lo == 0.0
            total = sum(b.c1_count + b.c2_count for b in rows)
            assert total == TINY_DATA.n_test

    def test_final_checkpoint_matches_comparison_trial_zero(
            self, gradient_report):
        report = gradient_report
        comparison = run_comparison(_tiny_config())
        for cat in report.categories:
            rec = next(r for r in comparison.records
                       if r.method == cat.method and r.trial == 0)
            assert cat.c1_median == rec.c1_median
            assert cat.c2_median == rec.c2_median
            assert cat.c1_count == rec.c1_count
            assert cat.c2_count == rec.c2_count


class TestFileBackedDatasets:
    def test_csv_dataset_trains(self, tmp_path):
        ds = gaussian_blobs(60, rng=5, n_classes=3, dim=2)
        path = tmp_path / "data.csv"
        save_csv(ds, path)
        cfg = _tiny_config(
            dataset=DatasetConfig(kind="csv", path=str(path),
                                  n_train=40, n_test=20),
            methods=("erm",), trials=2,
        )
        report = run_comparison(cfg)
        assert report.completed()
        again = run_comparison(cfg)
        assert again == report

    def test_too_few_rows_is_an_error(self, tmp_path):
        ds = gaussian_blobs(30, rng=5, n_classes=3, dim=2)
        path = tmp_path / "small.csv"
        save_csv(ds, path)
        cfg = _tiny_config(
            dataset=DatasetConfig(kind="csv", path=str(path),
                                  n_train=40, n_test=20),
            methods=("erm",), trials=1,
        )
        with pytest.raises(ValueError, match="need n_train"):
            run_comparison(cfg)


class TestRateStudy:
    def test_reports_have_one_point_per_alpha(self, rate_result):
        result = rate_result
        for report in (result.clean, result.plain, result.perturbed):
            assert [pt.alpha for pt in report.points] == [0.2, 0.1]
        assert result.completed()

    def test_gamma_floors_certify_alpha_squared(self, rate_result):
        result = rate_result
        c_z = 0.44
        want = tuple(1 - a ** 2 / (2 * c_z) for a in (0.2, 0.1))
        assert result.gamma_floors == pytest.approx(want, abs=1e-15)
        for pt, alpha in zip(result.perturbed.points, (0.2, 0.1)):
            assert pt.beta <= alpha ** 2 + 1e-12

    def test_clean_rows_have_zero_beta(self, rate_result):
        result = rate_result
        assert all(pt.beta == 0.0 for pt in result.clean.points)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="two radii"):
            RateStudyConfig(alphas=(0.1,))
        with pytest.raises(ValueError, match="positive"):
            RateStudyConfig(alphas=(0.1, -0.1))
        with pytest.raises(ValueError, match="grid_points"):
            RateStudyConfig(grid_points=51)

    def test_write_and_read_back(self, rate_result, tmp_path):
        result = rate_result
        write_rate_study(result, tmp_path)
        for fname in ("rate_clean.csv", "rate_plain.csv",
                      "rate_mixup.csv", "slopes.json"):
            assert (tmp_path / fname).exists()
        back = read_rate_points(tmp_path / "rate_clean.csv")
        assert back == result.clean.points

    def test_bad_rate_header_rejected(self, tmp_path):
        path = tmp_path / "rate.csv"
        path.write_text("alpha,beta,exact\n")
        with pytest.raises(ValueError, match="bad header"):
            read_rate_points(path)
