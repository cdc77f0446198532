"""Desk-scale experiment drivers: method comparison, penalty sweeps,
gradient profiles, approximation-rate studies.

Every run is a pure function of its config.  The per-trial randomness is
laid out so that ablations stay comparable:

* trial ``t`` of root seed ``s`` spawns four independent streams from
  ``SeedSequence([s, t])``: train data, test data, fitting, contamination;
* all methods inside a trial share the fitting seed, so they see the same
  weight init and batch order;
* contamination draws one child stream per level, so adding a level does
  not reshuffle the others, and an explicit ``contamination_seed``
  replaces only that branch (clean accuracies and trained weights stay
  bit-identical).

Reports round-trip through their CSV/JSON files exactly; see
:mod:`wdro.reports` for the serialization rules.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import stats

from . import reports
from .datasets import (
    Dataset,
    digits_subset,
    gaussian_blobs,
    load_csv,
    load_idx,
    two_moons,
)
from .geometry import NormSpec
from .measures import (
    EmpiricalMeasure,
    MixupConfig,
    mixup_perturb,
    salt_pepper_contaminate,
)
from .models import (
    ModelSpec,
    TrainConfig,
    TrainingDivergence,
    evaluate_accuracy,
    input_gradient_norms,
    predict_labels,
    train,
)
from .objectives import scalar_network_loss, tanh_network_bounds
from .oracle import RatePoint, RateReport, SampleSpaceSpec, approximation_rate_study

METHODS = ("erm", "wdro", "mixup", "wdro+mix")
_PENALIZED = {"erm": False, "wdro": True, "mixup": False, "wdro+mix": True}
_MIXED = {"erm": False, "wdro": False, "mixup": True, "wdro+mix": True}

_SYNTHETIC_KINDS = ("blobs", "moons", "digits")
_FILE_KINDS = ("csv", "idx")


# ---------------------------------------------------------------------------
# configs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    """Where the train/test splits come from.

    Synthetic kinds (``blobs``, ``moons``, ``digits``) draw fresh train
    and test sets per trial from the trial's data streams.  File kinds
    (``csv``, ``idx``) load once and shuffle/split per trial.  The default
    task is 32-d Gaussian blobs: four class means on a circle of radius
    0.6 in the first two coordinates, the remaining coordinates pure
    noise.  Salt-and-pepper contamination then mostly flips
    label-irrelevant coordinates, which is the regime the penalty is
    meant to survive.
    """

    kind: str = "blobs"
    n_train: int = 2000
    n_test: int = 8000
    n_classes: int = 4
    dim: int = 32
    radius: float = 0.6
    noise: float = 0.22
    path: Optional[str] = None
    labels_path: Optional[str] = None

    def __post_init__(self):
        if self.kind not in _SYNTHETIC_KINDS + _FILE_KINDS:
            raise ValueError(
                f"unknown dataset kind {self.kind!r}; choose from "
                f"{_SYNTHETIC_KINDS + _FILE_KINDS}"
            )
        if self.n_train < 1 or self.n_test < 1:
            raise ValueError("n_train and n_test must be positive")
        if self.kind in _FILE_KINDS and self.path is None:
            raise ValueError(f"dataset kind {self.kind!r} needs a path")
        if self.kind == "idx" and self.labels_path is None:
            raise ValueError("idx datasets need labels_path")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full comparison run: methods x trials x contamination levels.

    ``split_level`` names the contamination level used for the C1/C2
    category split (C1: classified correctly on both the clean and the
    contaminated copy; C2: wrong on either).  ``lam_grad`` is the penalty
    weight given to the penalized methods; the others train with zero.
    """

    methods: tuple[str, ...] = METHODS
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    contamination_levels: tuple[float, ...] = (0.01, 0.02)
    split_level: float = 0.01
    trials: int = 5
    seed: int = 0
    contamination_seed: Optional[int] = None
    lam_grad: float = 0.25
    hidden: tuple[int, ...] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        _check_methods(self.methods)
        _check_levels(self.contamination_levels)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.split_level not in self.contamination_levels:
            raise ValueError(
                f"split_level {self.split_level} is not one of the "
                f"contamination levels {self.contamination_levels}"
            )
        if self.lam_grad < 0:
            raise ValueError("lam_grad must be nonnegative")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "contamination_levels",
                           tuple(float(v) for v in self.contamination_levels))
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))


@dataclass(frozen=True)
class SweepConfig:
    """Penalty-weight sweep for the gradient-penalized method.

    All values share each trial's data, init, and contamination, so the
    ``lam = 0`` rows coincide with an ERM baseline under the same seed.
    """

    lam_values: tuple[float, ...] = (0.0, 0.004, 0.016, 0.064)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    contamination_levels: tuple[float, ...] = (0.02,)
    trials: int = 5
    seed: int = 0
    contamination_seed: Optional[int] = None
    hidden: tuple[int, ...] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if len(self.lam_values) < 2:
            raise ValueError("a sweep needs at least two penalty values")
        if any(v < 0 for v in self.lam_values):
            raise ValueError("penalty values must be nonnegative")
        if len(set(self.lam_values)) != len(self.lam_values):
            raise ValueError("duplicate penalty values")
        _check_levels(self.contamination_levels)
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "lam_values",
                           tuple(float(v) for v in self.lam_values))
        object.__setattr__(self, "contamination_levels",
                           tuple(float(v) for v in self.contamination_levels))
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))


@dataclass(frozen=True)
class GradientAnalysisConfig:
    """Gradient-norm profiles across training checkpoints plus the C1/C2
    category histograms at the final checkpoint.

    Runs one trial per method with the same streams as trial 0 of a
    comparison under the same seed, so its final-checkpoint numbers match
    that comparison's trial-0 rows.
    """

    methods: tuple[str, ...] = METHODS
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    split_level: float = 0.01
    checkpoints: int = 8
    bins: int = 40
    seed: int = 0
    contamination_seed: Optional[int] = None
    lam_grad: float = 0.25
    hidden: tuple[int, ...] = (64, 64)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        _check_methods(self.methods)
        _check_levels((self.split_level,))
        if self.checkpoints < 1:
            raise ValueError("need at least one checkpoint")
        if self.bins < 1:
            raise ValueError("need at least one histogram bin")
        if self.lam_grad < 0:
            raise ValueError("lam_grad must be nonnegative")
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "hidden", tuple(int(w) for w in self.hidden))


def _check_methods(methods) -> None:
    if not methods:
        raise ValueError("need at least one method")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    if len(set(methods)) != len(methods):
        raise ValueError(f"duplicate methods in {methods}")


def _check_levels(levels) -> None:
    if not levels:
        raise ValueError("need at least one contamination level")
    if any(not 0.0 <= float(v) <= 1.0 for v in levels):
        raise ValueError(f"contamination levels must lie in [0, 1]: {levels}")


def method_train_config(base: TrainConfig, method: str, lam_grad: float,
                        seed: int) -> TrainConfig:
    """The per-method training knobs: penalty on/off, Mixup on/off."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    return replace(
        base,
        lam_grad=lam_grad if _PENALIZED[method] else 0.0,
        mixup=_MIXED[method],
        seed=seed,
    )


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------

def _load_file(ds: DatasetConfig) -> Dataset:
    if ds.kind == "csv":
        return load_csv(ds.path)
    return load_idx(ds.path, ds.labels_path)


def _trial_data(ds: DatasetConfig, seq_train, seq_test,
                file_data: Optional[Dataset]) -> tuple[Dataset, Dataset]:
    """Train/test split for one trial.

    File-backed datasets reuse the loaded rows and only consume the train
    stream (for the shuffle); synthetic kinds draw both sets fresh.
    """
    if ds.kind in _FILE_KINDS:
        need = ds.n_train + ds.n_test
        if file_data.n < need:
            raise ValueError(
                f"dataset at {ds.path} has {file_data.n} rows, "
                f"need n_train + n_test = {need}"
            )
        order = np.random.default_rng(seq_train).permutation(file_data.n)
        tr, te = order[:ds.n_train], order[ds.n_train:need]
        return (
            Dataset(file_data.features[tr], file_data.labels[tr],
                    file_data.n_classes),
            Dataset(file_data.features[te], file_data.labels[te],
                    file_data.n_classes),
        )

    def make(n: int, seq) -> Dataset:
        rng = np.random.default_rng(seq)
        if ds.kind == "blobs":
            return gaussian_blobs(n, rng=rng, n_classes=ds.n_classes,
                                  dim=ds.dim, radius=ds.radius,
                                  noise=ds.noise)
        if ds.kind == "moons":
            return two_moons(n, rng=rng, noise=ds.noise)
        return digits_subset(n, rng=rng)

    return make(ds.n_train, seq_train), make(ds.n_test, seq_test)


def _trial_streams(seed: int, trial: int, contamination_seed: Optional[int]):
    s_train, s_test, s_fit, s_cont = \
        np.random.SeedSequence([seed, trial]).spawn(4)
    if contamination_seed is not None:
        s_cont = np.random.SeedSequence([contamination_seed, trial])
    return s_train, s_test, s_fit, int(s_fit.generate_state(1)[0]), s_cont


def _contaminated_copies(features: np.ndarray, levels, s_cont) -> list[np.ndarray]:
    streams = s_cont.spawn(len(levels))
    return [
        salt_pepper_contaminate(features, level, np.random.default_rng(s))
        for level, s in zip(levels, streams)
    ]


def _model_spec(test_set: Dataset, hidden: tuple[int, ...]) -> ModelSpec:
    return ModelSpec((test_set.dim, *hidden, test_set.n_classes))


# ---------------------------------------------------------------------------
# comparison experiment
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    """One (method, trial) row.  ``None`` marks values a diverged run
    never produced; such rows stay in the report with the flag set."""

    method: str
    trial: int
    diverged: bool
    clean_accuracy: Optional[float]
    contaminated_accuracy: tuple[Optional[float], ...]
    reduction: tuple[Optional[float], ...]
    grad_q1: Optional[float]
    grad_median: Optional[float]
    grad_q3: Optional[float]
    c1_median: Optional[float]
    c2_median: Optional[float]
    c1_count: Optional[int]
    c2_count: Optional[int]


@dataclass(frozen=True)
class ComparisonReport:
    levels: tuple[float, ...]
    split_level: float
    records: tuple[TrialRecord, ...]

    @property
    def n_diverged(self) -> int:
        return sum(r.diverged for r in self.records)

    def completed(self) -> bool:
        return self.n_diverged == 0

    def method_records(self, method: str) -> tuple[TrialRecord, ...]:
        return tuple(r for r in self.records if r.method == method)


def _level_tag(level: float) -> str:
    return repr(float(level))


def _fit_and_profile(spec, train_set, test_set, contaminated, split_idx,
                     train_config):
    """Train one method and measure everything a TrialRecord needs.

    Returns the record fields after ``diverged``; raises
    TrainingDivergence through to the caller.
    """
    result = train(train_set.features, train_set.labels, spec, train_config)
    params = result.eval_params
    clean = evaluate_accuracy(spec, params, test_set.features,
                              test_set.labels)
    cont = tuple(
        evaluate_accuracy(spec, params, c, test_set.labels)
        for c in contaminated
    )
    red = tuple(clean - a for a in cont)
    grads = input_gradient_norms(spec, params, test_set.features,
                                 test_set.labels)
    q1, q2, q3 = (float(v) for v in np.percentile(grads, [25, 50, 75]))
    pred_clean = predict_labels(spec, params, test_set.features)
    pred_split = predict_labels(spec, params, contaminated[split_idx])
    both_right = (pred_clean == test_set.labels) & \
                 (pred_split == test_set.labels)
    c1, c2 = grads[both_right], grads[~both_right]
    return (
        float(clean), cont, red, q1, q2, q3,
        float(np.median(c1)) if c1.size else None,
        float(np.median(c2)) if c2.size else None,
        int(c1.size), int(c2.size),
    )


def _diverged_record(method: str, trial: int, n_levels: int) -> TrialRecord:
    blank = (None,) * n_levels
    return TrialRecord(method, trial, True, None, blank, blank,
                       None, None, None, None, None, None, None)


def run_comparison(cfg: ExperimentConfig) -> ComparisonReport:
    """Train every method on every trial and measure clean accuracy,
    contaminated accuracy per level, and the gradient profile at the
    final checkpoint (the EMA weights)."""
    file_data = _load_file(cfg.dataset) \
        if cfg.dataset.kind in _FILE_KINDS else None
    levels = cfg.contamination_levels
    split_idx = levels.index(cfg.split_level)
    records = []
    for trial in range(cfg.trials):
        s_train, s_test, _, fit_seed, s_cont = \
            _trial_streams(cfg.seed, trial, cfg.contamination_seed)
        train_set, test_set = _trial_data(cfg.dataset, s_train, s_test,
                                          file_data)
        contaminated = _contaminated_copies(test_set.features, levels, s_cont)
        spec = _model_spec(test_set, cfg.hidden)
        for method in cfg.methods:
            tc = method_train_config(cfg.train, method, cfg.lam_grad,
                                     fit_seed)
            try:
                fields = _fit_and_profile(spec, train_set, test_set,
                                          contaminated, split_idx, tc)
            except TrainingDivergence:
                records.append(_diverged_record(method, trial, len(levels)))
                continue
            records.append(TrialRecord(method, trial, False, *fields))
    records.sort(key=lambda r: (r.method, r.trial))
    return ComparisonReport(levels, cfg.split_level, tuple(records))


def _mean_std(values) -> tuple[Optional[float], Optional[float]]:
    """Mean and sample standard deviation (ddof=1); std is None when a
    single value leaves it undefined."""
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else None
    return mean, std


def _median(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.median(vals)) if vals else None


def _welch_p(xs, ys) -> Optional[float]:
    xs = [v for v in xs if v is not None]
    ys = [v for v in ys if v is not None]
    if len(xs) < 2 or len(ys) < 2:
        return None
    p = float(stats.ttest_ind(xs, ys, equal_var=False).pvalue)
    return p if np.isfinite(p) else None


def comparison_summary(report: ComparisonReport) -> dict:
    """Aggregates recomputable from the per-trial rows: mean +/- sample
    std and medians per method/level, plus Welch t-test p-values on the
    accuracy reductions for every method pair."""
    methods = sorted({r.method for r in report.records})
    tags = [_level_tag(v) for v in report.levels]
    out_methods = {}
    for m in methods:
        rows = report.method_records(m)
        ok = [r for r in rows if not r.diverged]
        clean_mean, clean_std = _mean_std([r.clean_accuracy for r in ok])
        per_level = {}
        for j, tag in enumerate(tags):
            cmean, cstd = _mean_std([r.contaminated_accuracy[j] for r in ok])
            rmean, rstd = _mean_std([r.reduction[j] for r in ok])
            per_level[tag] = {
                "contaminated_mean": cmean, "contaminated_std": cstd,
                "reduction_mean": rmean, "reduction_std": rstd,
                "reduction_median": _median([r.reduction[j] for r in ok]),
            }
        out_methods[m] = {
            "trials": len(rows),
            "diverged": sum(r.diverged for r in rows),
            "clean_mean": clean_mean,
            "clean_std": clean_std,
            "levels": per_level,
            "grad_q1_median": _median([r.grad_q1 for r in ok]),
            "grad_median_median": _median([r.grad_median for r in ok]),
            "grad_q3_median": _median([r.grad_q3 for r in ok]),
            "c1_median_median": _median([r.c1_median for r in ok]),
            "c2_median_median": _median([r.c2_median for r in ok]),
        }
    welch = {}
    for a, b in combinations(methods, 2):
        rows_a = [r for r in report.method_records(a) if not r.diverged]
        rows_b = [r for r in report.method_records(b) if not r.diverged]
        welch[f"{a}|{b}"] = {
            tag: _welch_p([r.reduction[j] for r in rows_a],
                          [r.reduction[j] for r in rows_b])
            for j, tag in enumerate(tags)
        }
    return {
        "levels": list(report.levels),
        "split_level": report.split_level,
        "methods": out_methods,
        "welch_p_reduction": welch,
    }


_TRIAL_FIXED_COLUMNS = (
    "method", "trial", "diverged", "clean_accuracy",
    "grad_q1", "grad_median", "grad_q3",
    "c1_median", "c2_median", "c1_count", "c2_count",
)


def _comparison_header(levels) -> list[str]:
    tags = [_level_tag(v) for v in levels]
    return (
        list(_TRIAL_FIXED_COLUMNS[:4])
        + [f"contaminated_{t}" for t in tags]
        + [f"reduction_{t}" for t in tags]
        + list(_TRIAL_FIXED_COLUMNS[4:])
    )


def write_comparison(report: ComparisonReport, out_dir) -> None:
    """``trials.csv`` (per-trial rows) and ``summary.json`` (aggregates).

    The CSV plus the summary's ``levels``/``split_level`` fields carry
    everything; :func:`read_comparison` rebuilds the exact report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        (r.method, r.trial, r.diverged, r.clean_accuracy,
         *r.contaminated_accuracy, *r.reduction,
         r.grad_q1, r.grad_median, r.grad_q3,
         r.c1_median, r.c2_median, r.c1_count, r.c2_count)
        for r in report.records
    ]
    reports.write_csv(out / "trials.csv",
                      _comparison_header(report.levels), rows)
    reports.write_json(out / "summary.json", comparison_summary(report))


def read_comparison(out_dir) -> ComparisonReport:
    out = Path(out_dir)
    summary = reports.read_json(out / "summary.json")
    levels = tuple(float(v) for v in summary["levels"])
    header, rows = reports.read_csv(out / "trials.csv")
    expected = _comparison_header(levels)
    if header != expected:
        raise ValueError(
            f"{out / 'trials.csv'}: header {header} does not match "
            f"levels {levels}"
        )
    L = len(levels)
    records = []
    for row in rows:
        cells = dict(zip(header, row))
        records.append(TrialRecord(
            method=cells["method"],
            trial=int(cells["trial"]),
            diverged=reports.parse_bool(cells["diverged"]),
            clean_accuracy=reports.parse_optional_float(
                cells["clean_accuracy"]),
            contaminated_accuracy=tuple(
                reports.parse_optional_float(row[4 + j]) for j in range(L)),
            reduction=tuple(
                reports.parse_optional_float(row[4 + L + j])
                for j in range(L)),
            grad_q1=reports.parse_optional_float(cells["grad_q1"]),
            grad_median=reports.parse_optional_float(cells["grad_median"]),
            grad_q3=reports.parse_optional_float(cells["grad_q3"]),
            c1_median=reports.parse_optional_float(cells["c1_median"]),
            c2_median=reports.parse_optional_float(cells["c2_median"]),
            c1_count=reports.parse_optional_int(cells["c1_count"]),
            c2_count=reports.parse_optional_int(cells["c2_count"]),
        ))
    return ComparisonReport(levels, float(summary["split_level"]),
                            tuple(records))


# ---------------------------------------------------------------------------
# penalty sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRecord:
    lam: float
    trial: int
    diverged: bool
    clean_accuracy: Optional[float]
    contaminated_accuracy: tuple[Optional[float], ...]
    reduction: tuple[Optional[float], ...]


@dataclass(frozen=True)
class SweepReport:
    levels: tuple[float, ...]
    records: tuple[SweepRecord, ...]

    @property
    def n_diverged(self) -> int:
        return sum(r.diverged for r in self.records)

    def completed(self) -> bool:
        return self.n_diverged == 0


def run_penalty_sweep(cfg: SweepConfig) -> SweepReport:
    """Contaminated accuracy of the penalized method across a grid of
    penalty weights.  Trials reuse the comparison seed layout, so a zero
    weight reproduces the ERM rows of a comparison with the same seed."""
    file_data = _load_file(cfg.dataset) \
        if cfg.dataset.kind in _FILE_KINDS else None
    levels = cfg.contamination_levels
    records = []
    for trial in range(cfg.trials):
        s_train, s_test, _, fit_seed, s_cont = \
            _trial_streams(cfg.seed, trial, cfg.contamination_seed)
        train_set, test_set = _trial_data(cfg.dataset, s_train, s_test,
                                          file_data)
        contaminated = _contaminated_copies(test_set.features, levels, s_cont)
        spec = _model_spec(test_set, cfg.hidden)
        for lam in cfg.lam_values:
            tc = method_train_config(cfg.train, "wdro", lam, fit_seed)
            try:
                result = train(train_set.features, train_set.labels, spec, tc)
            except TrainingDivergence:
                blank = (None,) * len(levels)
                records.append(SweepRecord(lam, trial, True, None,
                                           blank, blank))
                continue
            params = result.eval_params
            clean = float(evaluate_accuracy(spec, params, test_set.features,
                                            test_set.labels))
            cont = tuple(
                evaluate_accuracy(spec, params, c, test_set.labels)
                for c in contaminated
            )
            records.append(SweepRecord(
                lam, trial, False, clean, cont,
                tuple(clean - a for a in cont),
            ))
    records.sort(key=lambda r: (r.lam, r.trial))
    return SweepReport(levels, tuple(records))


def sweep_summary(report: SweepReport) -> dict:
    tags = [_level_tag(v) for v in report.levels]
    out = {}
    for lam in sorted({r.lam for r in report.records}):
        rows = [r for r in report.records if r.lam == lam]
        ok = [r for r in rows if not r.diverged]
        clean_mean, clean_std = _mean_std([r.clean_accuracy for r in ok])
        per_level = {}
        for j, tag in enumerate(tags):
            cmean, cstd = _mean_std([r.contaminated_accuracy[j] for r in ok])
            rmean, rstd = _mean_std([r.reduction[j] for r in ok])
            per_level[tag] = {
                "contaminated_mean": cmean, "contaminated_std": cstd,
                "reduction_mean": rmean, "reduction_std": rstd,
            }
        out[repr(lam)] = {
            "trials": len(rows),
            "diverged": sum(r.diverged for r in rows),
            "clean_mean": clean_mean, "clean_std": clean_std,
            "levels": per_level,
        }
    return {"levels": list(report.levels), "lams": out}


def _sweep_header(levels) -> list[str]:
    tags = [_level_tag(v) for v in levels]
    return (["lam", "trial", "diverged", "clean_accuracy"]
            + [f"contaminated_{t}" for t in tags]
            + [f"reduction_{t}" for t in tags])


def write_sweep(report: SweepReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [
        (r.lam, r.trial, r.diverged, r.clean_accuracy,
         *r.contaminated_accuracy, *r.reduction)
        for r in report.records
    ]
    reports.write_csv(out / "sweep.csv", _sweep_header(report.levels), rows)
    reports.write_json(out / "summary.json", sweep_summary(report))


def read_sweep(out_dir) -> SweepReport:
    out = Path(out_dir)
    summary = reports.read_json(out / "summary.json")
    levels = tuple(float(v) for v in summary["levels"])
    header, rows = reports.read_csv(out / "sweep.csv")
    if header != _sweep_header(levels):
        raise ValueError(f"{out / 'sweep.csv'}: unexpected header {header}")
    L = len(levels)
    records = tuple(
        SweepRecord(
            lam=float(row[0]),
            trial=int(row[1]),
            diverged=reports.parse_bool(row[2]),
            clean_accuracy=reports.parse_optional_float(row[3]),
            contaminated_accuracy=tuple(
                reports.parse_optional_float(row[4 + j]) for j in range(L)),
            reduction=tuple(
                reports.parse_optional_float(row[4 + L + j])
                for j in range(L)),
        )
        for row in rows
    )
    return SweepReport(levels, records)


# ---------------------------------------------------------------------------
# gradient analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CheckpointRecord:
    method: str
    checkpoint: int
    step: int
    grad_q1: float
    grad_median: float
    grad_q3: float


@dataclass(frozen=True)
class CategoryBin:
    method: str
    bin_lo: float
    bin_hi: float
    c1_count: int
    c2_count: int


@dataclass(frozen=True)
class CategorySummary:
    method: str
    diverged: bool
    c1_median: Optional[float]
    c2_median: Optional[float]
    c1_count: Optional[int]
    c2_count: Optional[int]


@dataclass(frozen=True)
class GradientReport:
    split_level: float
    checkpoints: tuple[CheckpointRecord, ...]
    bins: tuple[CategoryBin, ...]
    categories: tuple[CategorySummary, ...]

    @property
    def n_diverged(self) -> int:
        return sum(c.diverged for c in self.categories)

    def completed(self) -> bool:
        return self.n_diverged == 0


def run_gradient_analysis(cfg: GradientAnalysisConfig) -> GradientReport:
    """Quartiles of the sup-norm input gradient along training, plus
    plot-ready C1/C2 histograms at the final checkpoint."""
    file_data = _load_file(cfg.dataset) \
        if cfg.dataset.kind in _FILE_KINDS else None
    s_train, s_test, _, fit_seed, s_cont = \
        _trial_streams(cfg.seed, 0, cfg.contamination_seed)
    train_set, test_set = _trial_data(cfg.dataset, s_train, s_test, file_data)
    contaminated = _contaminated_copies(test_set.features,
                                        (cfg.split_level,), s_cont)[0]
    spec = _model_spec(test_set, cfg.hidden)

    checkpoint_rows = []
    bin_rows = []
    cat_rows = []
    for method in cfg.methods:
        tc = method_train_config(
            replace(cfg.train, snapshots=cfg.checkpoints),
            method, cfg.lam_grad, fit_seed,
        )
        try:
            result = train(train_set.features, train_set.labels, spec, tc)
        except TrainingDivergence:
            cat_rows.append(CategorySummary(method, True, None, None,
                                            None, None))
            continue
        for k, (step, params) in enumerate(result.history.snapshots):
            grads = input_gradient_norms(spec, params, test_set.features,
                                         test_set.labels)
            q1, q2, q3 = (float(v) for v in np.percentile(grads,
                                                          [25, 50, 75]))
            checkpoint_rows.append(
                CheckpointRecord(method, k, step, q1, q2, q3))

        params = result.eval_params
        grads = input_gradient_norms(spec, params, test_set.features,
                                     test_set.labels)
        pred_clean = predict_labels(spec, params, test_set.features)
        pred_cont = predict_labels(spec, params, contaminated)
        both_right = (pred_clean == test_set.labels) & \
                     (pred_cont == test_set.labels)
        c1, c2 = grads[both_right], grads[~both_right]
        edges = np.linspace(0.0, max(float(grads.max()), 1e-12),
                            cfg.bins + 1)
        h1, _ = np.histogram(c1, bins=edges)
        h2, _ = np.histogram(c2, bins=edges)
        for j in range(cfg.bins):
            bin_rows.append(CategoryBin(
                method, float(edges[j]), float(edges[j + 1]),
                int(h1[j]), int(h2[j]),
            ))
        cat_rows.append(CategorySummary(
            method, False,
            float(np.median(c1)) if c1.size else None,
            float(np.median(c2)) if c2.size else None,
            int(c1.size), int(c2.size),
        ))
    checkpoint_rows.sort(key=lambda r: (r.method, r.checkpoint))
    bin_rows.sort(key=lambda r: (r.method, r.bin_lo))
    cat_rows.sort(key=lambda r: r.method)
    return GradientReport(cfg.split_level, tuple(checkpoint_rows),
                          tuple(bin_rows), tuple(cat_rows))


_CHECKPOINT_HEADER = ["method", "checkpoint", "step",
                      "grad_q1", "grad_median", "grad_q3"]
_BIN_HEADER = ["method", "bin_lo", "bin_hi", "c1_count", "c2_count"]


def write_gradient_report(report: GradientReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports.write_csv(
        out / "checkpoints.csv", _CHECKPOINT_HEADER,
        [(r.method, r.checkpoint, r.step, r.grad_q1, r.grad_median,
          r.grad_q3) for r in report.checkpoints],
    )
    reports.write_csv(
        out / "categories.csv", _BIN_HEADER,
        [(r.method, r.bin_lo, r.bin_hi, r.c1_count, r.c2_count)
         for r in report.bins],
    )
    reports.write_json(out / "summary.json", {
        "split_level": report.split_level,
        "categories": {
            c.method: {
                "diverged": c.diverged,
                "c1_median": c.c1_median, "c2_median": c.c2_median,
                "c1_count": c.c1_count, "c2_count": c.c2_count,
            }
            for c in report.categories
        },
    })


def read_gradient_report(out_dir) -> GradientReport:
    out = Path(out_dir)
    summary = reports.read_json(out / "summary.json")
    header, rows = reports.read_csv(out / "checkpoints.csv")
    if header != _CHECKPOINT_HEADER:
        raise ValueError(f"{out / 'checkpoints.csv'}: bad header {header}")
    checkpoints = tuple(
        CheckpointRecord(row[0], int(row[1]), int(row[2]), float(row[3]),
                         float(row[4]), float(row[5]))
        for row in rows
    )
    header, rows = reports.read_csv(out / "categories.csv")
    if header != _BIN_HEADER:
        raise ValueError(f"{out / 'categories.csv'}: bad header {header}")
    bins = tuple(
        CategoryBin(row[0], float(row[1]), float(row[2]), int(row[3]),
                    int(row[4]))
        for row in rows
    )
    categories = tuple(
        CategorySummary(
            method, block["diverged"],
            block["c1_median"], block["c2_median"],
            block["c1_count"], block["c2_count"],
        )
        for method, block in sorted(summary["categories"].items())
    )
    return GradientReport(float(summary["split_level"]), checkpoints, bins,
                          categories)


# ---------------------------------------------------------------------------
# approximation-rate study
# ---------------------------------------------------------------------------

# Default 1-d study instance: a two-unit tanh network over eight support
# points.  The points sit exactly on the 4001-point grid (multiples of
# 5e-4), so the grid oracle treats them as support without snap error.
RATE_NET_W1 = ((1.4,), (0.8,))
RATE_NET_B1 = (-1.1, -0.9)
RATE_NET_W2 = ((0.9, 0.7),)
RATE_NET_B2 = (0.3,)
RATE_SUPPORT = (-0.42, -0.3, -0.17, -0.05, 0.08, 0.2, 0.31, 0.44)


@dataclass(frozen=True)
class RateStudyConfig:
    alphas: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025, 0.0125)
    p: float = 4.0
    grid_points: int = 4001
    seed: int = 0

    def __post_init__(self):
        if len(self.alphas) < 2:
            raise ValueError("rate studies need at least two radii")
        if any(a <= 0 for a in self.alphas):
            raise ValueError("radii must be positive")
        if self.grid_points < 201:
            raise ValueError("grid_points must be >= 201")
        object.__setattr__(self, "alphas",
                           tuple(float(a) for a in self.alphas))


@dataclass(frozen=True)
class RateStudyResult:
    """Three log-log fits against the grid-exact worst case: the
    gradient surrogate on clean points, the bare risk on clean points,
    and the surrogate on Mixup-moved points with displacement budget
    beta = alpha^2."""

    clean: RateReport
    plain: RateReport
    perturbed: RateReport
    gamma_floors: tuple[float, ...]

    def completed(self) -> bool:
        return True


def _rate_instance(cfg: RateStudyConfig):
    w1 = np.array(RATE_NET_W1)
    w2 = np.array(RATE_NET_W2)
    lip, c_h = tanh_network_bounds(w1, w2)
    loss = scalar_network_loss(
        [w1, np.array(RATE_NET_B1), w2, np.array(RATE_NET_B2)],
        holder=(c_h, 1.0), lipschitz=lip, name="rate-study-net",
    )
    norm = NormSpec(kind="euclidean")
    space = SampleSpaceSpec(lo=[-1.0], hi=[1.0],
                            grid_points_per_dim=cfg.grid_points, norm=norm)
    measure = EmpiricalMeasure(np.array(RATE_SUPPORT))
    return loss, measure, space, norm


def run_rate_study(cfg: RateStudyConfig) -> RateStudyResult:
    loss, measure, space, norm = _rate_instance(cfg)

    clean = approximation_rate_study(loss, measure, space, cfg.p,
                                     cfg.alphas, mode="surrogate")
    plain = approximation_rate_study(loss, measure, space, cfg.p,
                                     cfg.alphas, mode="plain")

    # One raw Beta(0.5, 0.5) draw shared across the schedule; per alpha it
    # is rescaled into [1 - alpha^2 / (2 C_Z), 1], which certifies a
    # displacement bound of exactly alpha^2.
    rng = np.random.default_rng(cfg.seed)
    raw = rng.beta(0.5, 0.5, size=measure.n)
    c_z = float(np.max(np.abs(measure.points)))
    floors = []
    moved = []
    for alpha in cfg.alphas:
        floor = 1.0 - alpha ** 2 / (2.0 * c_z)
        floors.append(floor)
        moved.append(mixup_perturb(
            measure, MixupConfig(gamma_floor=floor),
            np.random.default_rng(cfg.seed), norm, gammas=raw,
        ))
    perturbed = approximation_rate_study(loss, measure, space, cfg.p,
                                         cfg.alphas, mode="surrogate",
                                         perturbed=moved)
    return RateStudyResult(clean, plain, perturbed, tuple(floors))


_RATE_HEADER = ["alpha", "beta", "exact", "surrogate", "error"]
_RATE_FILES = {"clean": "rate_clean.csv", "plain": "rate_plain.csv",
               "perturbed": "rate_mixup.csv"}


def write_rate_study(result: RateStudyResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for mode, fname in _RATE_FILES.items():
        report: RateReport = getattr(result, mode)
        reports.write_csv(
            out / fname, _RATE_HEADER,
            [(pt.alpha, pt.beta, pt.exact, pt.estimate, pt.error)
             for pt in report.points],
        )
    reports.write_json(out / "slopes.json", {
        "clean_slope": result.clean.fitted_slope,
        "plain_slope": result.plain.fitted_slope,
        "perturbed_slope": result.perturbed.fitted_slope,
        "clean_intercept": result.clean.intercept,
        "plain_intercept": result.plain.intercept,
        "perturbed_intercept": result.perturbed.intercept,
        "excluded": {
            "clean": list(result.clean.excluded),
            "plain": list(result.plain.excluded),
            "perturbed": list(result.perturbed.excluded),
        },
        "gamma_floors": list(result.gamma_floors),
    })


def read_rate_points(path) -> tuple[RatePoint, ...]:
    header, rows = reports.read_csv(path)
    if header != _RATE_HEADER:
        raise ValueError(f"{path}: bad header {header}")
    return tuple(
        RatePoint(alpha=float(r[0]), beta=float(r[1]), exact=float(r[2]),
                  estimate=float(r[3]), error=float(r[4]))
        for r in rows
    )
