"""Command-line entry points.

Subcommands map one-to-one onto the experiment drivers::

    wdro compare        method comparison under contamination
    wdro sweep          penalty-weight sweep
    wdro grad-analysis  gradient profiles and C1/C2 histograms
    wdro rate-study     approximation-rate study (1-d oracle instance)
    wdro dataset        synthesize or inspect dataset files

Configs are YAML mappings whose sections mirror the config dataclasses
(``dataset:``, ``train:``, top-level scalars).  Precedence: defaults,
then the config file, then explicit flags.  Every run writes the fully
resolved config as ``config.json`` into its output directory, which by
default is ``runs/<command>-<8-hex config digest>`` — no timestamps, so
a rerun with the same config reproduces the same bytes.

Exit status: 0 when every trial completed, 3 when any trial diverged
(the report still contains the flagged rows), 2 for usage or input
errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import yaml

from . import reports
from .datasets import (
    DatasetFormatError,
    load_csv,
    load_idx,
    make_dataset,
    save_csv,
    save_idx,
)
from .experiments import (
    DatasetConfig,
    ExperimentConfig,
    GradientAnalysisConfig,
    RateStudyConfig,
    SweepConfig,
    comparison_summary,
    run_comparison,
    run_gradient_analysis,
    run_penalty_sweep,
    run_rate_study,
    write_comparison,
    write_gradient_report,
    write_rate_study,
    write_sweep,
)
from .models import TrainConfig

_NESTED = {"dataset": DatasetConfig, "train": TrainConfig}


class ConfigError(ValueError):
    pass


def _build_config(cls, mapping: dict, path: str = "config"):
    """Instantiate a config dataclass from a (possibly nested) mapping,
    rejecting unknown keys by their dotted path."""
    if not isinstance(mapping, dict):
        raise ConfigError(f"{path}: expected a mapping, got "
                          f"{type(mapping).__name__}")
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - field_names)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}; "
                          f"valid keys are {sorted(field_names)}")
    defaults = cls()
    kwargs = {}
    for name, value in mapping.items():
        if name in _NESTED:
            kwargs[name] = _build_config(_NESTED[name], value,
                                         f"{path}.{name}")
        elif isinstance(getattr(defaults, name), tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{path}.{name}: expected a list")
            kwargs[name] = tuple(
                tuple(v) if isinstance(v, list) else v for v in value
            )
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _load_yaml(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _resolve_config(cls, args, overrides: dict):
    mapping = _load_yaml(args.config) if args.config else {}
    for key, value in overrides.items():
        if value is not None:
            mapping[key] = value
    return _build_config(cls, mapping)


def _run_dir(args, command: str, cfg) -> Path:
    if args.out:
        return Path(args.out)
    digest = reports.config_digest(
        {"command": command, "config": dataclasses.asdict(cfg)}
    )
    return Path("runs") / f"{command}-{digest}"


def _echo_config(out_dir: Path, command: str, cfg) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    reports.write_json(out_dir / "config.json",
                       {"command": command,
                        "config": dataclasses.asdict(cfg)})


def _finish(out_dir: Path, completed: bool, n_diverged: int = 0) -> int:
    print(f"wrote {out_dir}")
    if completed:
        print("all trials completed")
        return 0
    print(f"{n_diverged} trial(s) diverged; see the flagged rows")
    return 3


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_compare(args) -> int:
    cfg = _resolve_config(ExperimentConfig, args,
                          {"seed": args.seed, "trials": args.trials,
                           "lam_grad": args.lam_grad})
    out_dir = _run_dir(args, "compare", cfg)
    _echo_config(out_dir, "compare", cfg)
    report = run_comparison(cfg)
    write_comparison(report, out_dir)
    summary = comparison_summary(report)
    for method, block in summary["methods"].items():
        per = ", ".join(
            f"{tag}: {block['levels'][tag]['reduction_median']}"
            for tag in block["levels"]
        )
        print(f"{method}: clean {block['clean_mean']}, "
              f"median reduction {{{per}}}")
    return _finish(out_dir, report.completed(), report.n_diverged)


def _cmd_sweep(args) -> int:
    cfg = _resolve_config(SweepConfig, args,
                          {"seed": args.seed, "trials": args.trials})
    out_dir = _run_dir(args, "sweep", cfg)
    _echo_config(out_dir, "sweep", cfg)
    report = run_penalty_sweep(cfg)
    write_sweep(report, out_dir)
    return _finish(out_dir, report.completed(), report.n_diverged)


def _cmd_grad_analysis(args) -> int:
    cfg = _resolve_config(GradientAnalysisConfig, args,
                          {"seed": args.seed, "lam_grad": args.lam_grad})
    out_dir = _run_dir(args, "grad-analysis", cfg)
    _echo_config(out_dir, "grad-analysis", cfg)
    report = run_gradient_analysis(cfg)
    write_gradient_report(report, out_dir)
    for cat in report.categories:
        if cat.diverged:
            print(f"{cat.method}: diverged")
        else:
            print(f"{cat.method}: C1 median {cat.c1_median}, "
                  f"C2 median {cat.c2_median}")
    return _finish(out_dir, report.completed(), report.n_diverged)


def _cmd_rate_study(args) -> int:
    cfg = _resolve_config(RateStudyConfig, args, {"seed": args.seed})
    out_dir = _run_dir(args, "rate-study", cfg)
    _echo_config(out_dir, "rate-study", cfg)
    result = run_rate_study(cfg)
    write_rate_study(result, out_dir)
    print(f"clean slope {result.clean.fitted_slope}, "
          f"plain slope {result.plain.fitted_slope}, "
          f"perturbed slope {result.perturbed.fitted_slope}")
    return _finish(out_dir, True)


_GEN_PARAMS = {
    "blobs": ("n_classes", "dim", "radius", "noise"),
    "moons": ("noise",),
    "digits": (),
}


def _cmd_dataset_gen(args) -> int:
    if args.kind not in _GEN_PARAMS:
        raise ConfigError(f"unknown kind {args.kind!r}; choose from "
                          f"{sorted(_GEN_PARAMS)}")
    params = {}
    for name in _GEN_PARAMS[args.kind]:
        value = getattr(args, name)
        if value is not None:
            params[name] = value
    dataset = make_dataset(args.kind, args.n, rng=args.seed, **params)
    base = Path(args.out)
    if args.format == "csv":
        path = base if base.suffix == ".csv" else base.with_suffix(".csv")
        path.parent.mkdir(parents=True, exist_ok=True)
        save_csv(dataset, path)
        written = [path]
    else:
        base.parent.mkdir(parents=True, exist_ok=True)
        feat = base.parent / f"{base.name}-features.idx"
        lab = base.parent / f"{base.name}-labels.idx"
        save_idx(dataset, feat, lab)
        written = [feat, lab]
    for p in written:
        print(f"wrote {p}")
    print(reports.canonical_json(dataset.summary()), end="")
    return 0


def _cmd_dataset_inspect(args) -> int:
    path = Path(args.path)
    fmt = args.format
    if fmt == "auto":
        fmt = "idx" if path.suffix == ".idx" else "csv"
    if fmt == "idx":
        if not args.labels:
            raise ConfigError("idx inspection needs --labels")
        dataset = load_idx(path, args.labels)
    else:
        dataset = load_csv(path)
    print(reports.canonical_json(dataset.summary()), end="")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_run_args(sub, lam: bool = False, trials: bool = True):
    sub.add_argument("--config", help="YAML config file")
    sub.add_argument("--out", help="output directory "
                                   "(default runs/<command>-<digest>)")
    sub.add_argument("--seed", type=int, help="root seed override")
    if trials:
        sub.add_argument("--trials", type=int, help="trial count override")
    if lam:
        sub.add_argument("--lam-grad", dest="lam_grad", type=float,
                         help="penalty weight override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wdro",
        description="Gradient-penalty robustness experiments at desk scale.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    sub = commands.add_parser("compare",
                              help="train the four methods and compare "
                                   "contaminated accuracy")
    _add_run_args(sub, lam=True)
    sub.set_defaults(func=_cmd_compare)

    sub = commands.add_parser("sweep", help="penalty-weight sweep")
    _add_run_args(sub)
    sub.set_defaults(func=_cmd_sweep)

    sub = commands.add_parser("grad-analysis",
                              help="gradient profiles across checkpoints")
    _add_run_args(sub, lam=True, trials=False)
    sub.set_defaults(func=_cmd_grad_analysis)

    sub = commands.add_parser("rate-study",
                              help="approximation-rate study")
    _add_run_args(sub, trials=False)
    sub.set_defaults(func=_cmd_rate_study)

    dataset = commands.add_parser("dataset",
                                  help="synthesize or inspect datasets")
    dsub = dataset.add_subparsers(dest="dataset_command", required=True)

    gen = dsub.add_parser("gen", help="generate a synthetic dataset file")
    gen.add_argument("--kind", default="blobs",
                     choices=sorted(_GEN_PARAMS))
    gen.add_argument("--n", type=int, default=2000)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--n-classes", dest="n_classes", type=int)
    gen.add_argument("--dim", type=int)
    gen.add_argument("--radius", type=float)
    gen.add_argument("--noise", type=float)
    gen.add_argument("--format", default="csv", choices=("csv", "idx"))
    gen.add_argument("--out", required=True,
                     help="output path (csv) or prefix (idx)")
    gen.set_defaults(func=_cmd_dataset_gen)

    ins = dsub.add_parser("inspect", help="summarize a dataset file")
    ins.add_argument("path")
    ins.add_argument("--format", default="auto",
                     choices=("auto", "csv", "idx"))
    ins.add_argument("--labels", help="labels file for idx datasets")
    ins.set_defaults(func=_cmd_dataset_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
