"""Command-line front end.

Subcommands: synth, connectome, pretrain, train, cv, gridsearch, report.
Configs are JSON, tabular outputs CSV. Every run writes a run.json with the
fully resolved configuration; timestamps live only there, so reruns with the
same seed are byte-identical everywhere else. Commands mark their output
directory with a `.incomplete` sentinel that is removed on success.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .data import AtlasSpec
from .errors import ConstantRoiError, InvalidConfigError, ToolkitError
from .evaluation import (
    ALL_VARIANT_KEYS,
    ModelParams,
    read_summary,
    format_table,
    run_cv_experiment,
    train_val_split,
    write_fold_metrics,
    write_summary,
)
from .checkpoint import load_weights, save_weights
from .manifest import load_manifest, load_subjects, read_timeseries, write_connectome_cache
from .model import CLASSIFY, MetaFormerModel, PRETRAIN, SatConfig, transfer_pretrained
from .rng import derive_seed, stream
from .synthetic import SynthConfig, generate_synthetic, write_cohort
from .train import (
    DEFAULT_GRID,
    GridSpec,
    TrainConfig,
    feature_split,
    fit,
    grid_search,
    labeled_split,
    pretrain,
    read_history,
    write_history,
)
from .data import connectome_from_timeseries, standardize_apply, standardize_fit


def _load_model_config(path: str | Path) -> tuple[ModelParams, tuple[AtlasSpec, ...], float | None]:
    with open(path) as fh:
        raw = json.load(fh)
    known = {"d_model", "n_layers", "d_ff", "n_heads", "dropout", "atlases"}
    unknown = set(raw) - known
    if unknown:
        raise InvalidConfigError(sorted(unknown)[0], "unknown field in model config")
    try:
        params = ModelParams(
            d_model=int(raw["d_model"]),
            n_layers=int(raw["n_layers"]),
            d_ff=int(raw["d_ff"]),
            n_heads=int(raw["n_heads"]),
        )
        atlases = tuple(AtlasSpec(a["name"], int(a["k"])) for a in raw["atlases"])
    except KeyError as exc:
        raise InvalidConfigError(str(exc.args[0]), "missing") from None
    dropout = float(raw["dropout"]) if "dropout" in raw else None
    return params, atlases, dropout


def _load_train_config(path: str | Path | None, dropout_default: float | None,
                       seed: int) -> TrainConfig:
    if path is None:
        cfg = TrainConfig(seed=seed)
    else:
        with open(path) as fh:
            raw = json.load(fh)
        known = set(TrainConfig.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise InvalidConfigError(sorted(unknown)[0], "unknown field in train config")
        if "dropout_rate" not in raw and dropout_default is not None:
            raw["dropout_rate"] = dropout_default
        raw["seed"] = seed
        cfg = TrainConfig(**raw)
    if path is None and dropout_default is not None:
        cfg = replace(cfg, dropout_rate=dropout_default)
    return cfg


class _RunDir:
    """Output directory guarded by an `.incomplete` sentinel."""

    def __init__(self, out: str | Path):
        self.path = Path(out)
        self.path.mkdir(parents=True, exist_ok=True)
        self.sentinel = self.path / ".incomplete"
        self.sentinel.touch()
        self.started = time.strftime("%Y-%m-%dT%H:%M:%S%z")

    def finish(self, command: str, resolved: dict) -> None:
        run = {
            "command": command,
            "config": resolved,
            "started_at": self.started,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        with open(self.path / "run.json", "w") as fh:
            json.dump(run, fh, indent=2, default=str)
            fh.write("\n")
        self.sentinel.unlink()


def _jsonable(cfg) -> dict:
    d = asdict(cfg)
    for key, value in list(d.items()):
        if isinstance(value, tuple):
            d[key] = list(value)
    return d


# --- commands ---

def cmd_synth(args) -> int:
    cfg = SynthConfig.from_json(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    run = _RunDir(args.out)
    cohort = generate_synthetic(cfg)
    manifest_path = write_cohort(cohort, run.path)
    resolved = _jsonable(cfg)
    resolved["atlases"] = [{"name": a.name, "k": a.k} for a in cfg.atlases]
    run.finish("synth", resolved)
    print(f"wrote {len(cohort)} subjects to {manifest_path}")
    return 0


def cmd_connectome(args) -> int:
    records = load_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    run = _RunDir(args.out)
    n_files = 0
    for rec in records:
        for atlas_name, rel in rec.paths.items():
            values = np.loadtxt(base_dir / rel, delimiter=",", dtype=np.float64, ndmin=2)
            atlas = AtlasSpec(atlas_name, values.shape[1])
            try:
                ts = read_timeseries(base_dir / rel, rec.subject_id, atlas)
                conn = connectome_from_timeseries(ts)
            except ConstantRoiError as exc:
                raise ToolkitError(
                    f"subject {rec.subject_id}, atlas {atlas_name}: ROI {exc.column} is constant"
                ) from exc
            write_connectome_cache(conn, run.path)
            n_files += 1
    run.finish("connectome", {"manifest": str(args.manifest), "n_files": n_files})
    print(f"wrote {n_files} connectome cache files to {run.path}")
    return 0


def _prepare_split(manifest, model_config, seed):
    """Load subjects, make a stratified 70/30 train/validation split, and
    standardize with statistics fitted on the training side only."""
    params, atlases, dropout = _load_model_config(model_config)
    subjects = load_subjects(manifest, atlases=atlases)
    labels = np.array([s.y for s in subjects], dtype=np.int64)
    train_idx, val_idx = train_val_split(np.arange(len(subjects)), labels,
                                         seed=derive_seed(seed, "holdout"))
    states = [
        standardize_fit([subjects[i].connectomes[a] for i in train_idx], fitted_on="train")
        for a in range(len(atlases))
    ]
    views = [
        tuple(standardize_apply(st, s.connectomes[a]).features
              for a, st in enumerate(states))
        for s in subjects
    ]
    return params, atlases, dropout, subjects, labels, views, train_idx, val_idx


def _sat_configs(params: ModelParams, atlases, dropout_rate: float) -> list[SatConfig]:
    return [SatConfig(a, params.d_model, params.n_layers, params.d_ff, params.n_heads,
                      dropout_rate) for a in atlases]


def cmd_pretrain(args) -> int:
    params, atlases, dropout, subjects, labels, views, train_idx, val_idx = _prepare_split(
        args.manifest, args.model_config, args.seed)
    cfg = _load_train_config(args.train_config, dropout, args.seed)
    cfg = replace(cfg, phase="pretrain")
    run = _RunDir(args.out)
    model = MetaFormerModel.build(_sat_configs(params, atlases, cfg.dropout_rate),
                                  PRETRAIN, stream(args.seed, "init"))
    result = pretrain(model,
                      feature_split(views, train_idx),
                      feature_split(views, val_idx), cfg)
    save_weights([(p.name, p.value) for p in model.params()], run.path / "pretrained.mfw")
    write_history(result, run.path / "history.csv")
    run.finish("pretrain", _jsonable(cfg))
    print(f"pretrained {result.best_epoch} best epoch, val loss {result.best_val_loss:.6f}")
    return 0


def cmd_train(args) -> int:
    params, atlases, dropout, subjects, labels, views, train_idx, val_idx = _prepare_split(
        args.manifest, args.model_config, args.seed)
    cfg = _load_train_config(args.train_config, dropout, args.seed)
    run = _RunDir(args.out)
    if args.init:
        src = MetaFormerModel.build(_sat_configs(params, atlases, cfg.dropout_rate),
                                    PRETRAIN, stream(args.seed, "init"))
        _load_into(src, args.init)
        model = transfer_pretrained(src, stream(args.seed, "transfer"))
        cfg = replace(cfg, phase="finetune")
    else:
        model = MetaFormerModel.build(_sat_configs(params, atlases, cfg.dropout_rate),
                                      CLASSIFY, stream(args.seed, "init"))
        cfg = replace(cfg, phase="scratch")
    save_weights([(p.name, p.value) for p in model.params()], run.path / "init.mfw")
    result = fit(model,
                 labeled_split(views, labels, train_idx),
                 labeled_split(views, labels, val_idx), cfg)
    save_weights([(p.name, p.value) for p in model.params()], run.path / "model.mfw")
    write_history(result, run.path / "history.csv")
    run.finish("train", _jsonable(cfg))
    print(f"trained: best epoch {result.best_epoch}, val loss {result.best_val_loss:.6f}")
    return 0


def _load_into(model, checkpoint_path) -> None:
    loaded = load_weights(checkpoint_path)
    by_name = {p.name: p for p in model.params()}
    missing = set(by_name) - set(loaded)
    if missing:
        raise ToolkitError(f"checkpoint lacks parameters: {sorted(missing)[:3]} ...")
    for name, value in loaded.items():
        if name not in by_name:
            raise ToolkitError(f"checkpoint has unknown parameter {name!r}")
        p = by_name[name]
        if tuple(value.shape) != tuple(p.value.shape):
            raise ToolkitError(f"parameter {name!r}: shape {value.shape} vs {p.value.shape}")
        p.value = value.astype(p.value.dtype)


def cmd_cv(args) -> int:
    params, atlases, dropout = _load_model_config(args.model_config)
    cfg = _load_train_config(args.train_config, dropout, args.seed)
    pretrain_cfg = (_load_train_config(args.pretrain_config, dropout, args.seed)
                    if args.pretrain_config else None)
    grid = GridSpec.from_json(args.grid) if args.grid else None
    subjects = load_subjects(args.manifest, atlases=atlases)
    variant_keys = [v.strip() for v in args.variants.split(",") if v.strip()]
    run = _RunDir(args.out)
    reports = run_cv_experiment(subjects, variant_keys, params, cfg, k=args.folds,
                                seed=args.seed, threads=args.threads,
                                checkpoint_dir=run.path / "checkpoints",
                                pretrain_cfg=pretrain_cfg, grid=grid)
    write_fold_metrics(reports, run.path / "folds.csv")
    write_summary(reports, run.path / "summary.csv")
    resolved = _jsonable(cfg)
    resolved.update({"variants": variant_keys, "folds": args.folds,
                     "threads": args.threads, "fold_fingerprint": reports[0].fold_fingerprint})
    if grid is not None:
        resolved["grid"] = asdict(grid)
    run.finish("cv", resolved)
    for report in reports:
        print(f"{report.variant}: accuracy {report.mean['accuracy']:.3f} "
              f"±{report.std['accuracy']:.3f}")
    return 0


def cmd_gridsearch(args) -> int:
    params, atlases, dropout, subjects, labels, views, train_idx, val_idx = _prepare_split(
        args.manifest, args.model_config, args.seed)
    base_cfg = _load_train_config(args.train_config, dropout, args.seed)
    base_cfg = replace(base_cfg, phase=args.phase)
    grid = GridSpec.from_json(args.grid) if args.grid else DEFAULT_GRID
    run = _RunDir(args.out)

    if args.phase == "pretrain":
        train_split = feature_split(views, train_idx)
        val_split = feature_split(views, val_idx)
        mode = PRETRAIN
    else:
        train_split = labeled_split(views, labels, train_idx)
        val_split = labeled_split(views, labels, val_idx)
        mode = CLASSIFY

    def factory(cfg, rng):
        return MetaFormerModel.build(_sat_configs(params, atlases, cfg.dropout_rate), mode, rng)

    best_cfg, results = grid_search(grid, factory, train_split, val_split, base_cfg)
    with open(run.path / "grid_results.csv", "w", newline="") as fh:
        fh.write("index,learning_rate,weight_decay,dropout_rate,best_val_loss\n")
        for r in results:
            fh.write(f"{r.index},{r.learning_rate!r},{r.weight_decay!r},"
                     f"{r.dropout_rate!r},{r.best_val_loss!r}\n")
    with open(run.path / "best_config.json", "w") as fh:
        json.dump(_jsonable(best_cfg), fh, indent=2)
        fh.write("\n")
    run.finish("gridsearch", {"grid": asdict(grid), "phase": args.phase})
    print(f"best point: lr={best_cfg.learning_rate} wd={best_cfg.weight_decay} "
          f"dropout={best_cfg.dropout_rate}")
    return 0


def cmd_report(args) -> int:
    from .figures import render_history_figure, render_summary_figure

    reports_dir = Path(args.reports)
    run = _RunDir(args.out)
    wrote = []
    summary_path = reports_dir / "summary.csv"
    if summary_path.exists():
        summary = read_summary(summary_path)
        table = format_table(summary)
        (run.path / "table.txt").write_text(table)
        wrote.append("table.txt")
        fig_dir = run.path / "figures"
        fig_dir.mkdir(exist_ok=True)
        render_summary_figure(summary, fig_dir / "summary.png")
        wrote.append("figures/summary.png")
        print(table, end="")
    for history_path in sorted(reports_dir.glob("**/history.csv")):
        result = read_history(history_path)
        name = history_path.parent.name or "run"
        fig_dir = run.path / "figures"
        fig_dir.mkdir(exist_ok=True)
        render_history_figure(result, fig_dir / f"{name}_history.png", title=name)
        wrote.append(f"figures/{name}_history.png")
    if not wrote:
        raise ToolkitError(f"no summary.csv or history.csv found under {reports_dir}")
    run.finish("report", {"reports": str(reports_dir), "artifacts": wrote})
    return 0


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metaformer",
        description="Connectome classification experiments: synthetic cohorts, "
                    "FC features, transformer training and cross-validation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, manifest=True, model=True, train=True):
        p.add_argument("--seed", type=int, default=0, help="global seed")
        p.add_argument("--out", required=True, help="output directory")
        if manifest:
            p.add_argument("--manifest", required=True, help="cohort manifest CSV")
        if model:
            p.add_argument("--model-config", required=True, help="model config JSON")
        if train:
            p.add_argument("--train-config", default=None, help="train config JSON")

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--config", required=True, help="synthetic generator config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("connectome", help="build connectome cache files from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_connectome)

    p = sub.add_parser("pretrain", help="self-supervised imputation pretraining")
    common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="supervised training (optionally from a pretrained init)")
    common(p)
    p.add_argument("--init", default=None, help="pretrained checkpoint to transfer from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="stratified cross-validation over model variants")
    common(p)
    p.add_argument("--variants", default=",".join(ALL_VARIANT_KEYS),
                   help="comma-separated variant keys (e.g. metaformer-pt,sat-aal)")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--threads", type=int, default=1,
                   help=">1 runs folds in parallel with derived seeds")
    p.add_argument("--pretrain-config", default=None,
                   help="separate train config JSON for the imputation phase")
    p.add_argument("--grid", default=None,
                   help="grid JSON; tunes lr/wd/dropout per fold on its train/val split")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("gridsearch", help="hyperparameter grid search")
    common(p)
    p.add_argument("--grid", default=None, help="grid JSON (lists of lr/wd/dropout)")
    p.add_argument("--phase", choices=["scratch", "pretrain"], default="scratch")
    p.set_defaults(func=cmd_gridsearch)

    p = sub.add_parser("report", help="render summary table and figures from report CSVs")
    p.add_argument("--reports", required=True, help="directory with cv/train outputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ToolkitError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
