"""Command-line entry point.

Commands: synth, preprocess, train, predict, evaluate, and pipeline (the
full chain: data -> repair/smooth -> seasonality -> features -> boosted
model with early stopping -> test-window forecasts -> weighted report).

Every stage is a pure function of (inputs, config, seed); running the same
command twice produces byte-identical artifacts. Exit codes: 0 success,
1 usage error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluation, gbt, ingest, synth
from .baselines import ESBaseline
from .core import SalesPanel
from .evaluation import SplitSpec, cold_start_filter, evaluate, format_report, write_report
from .features import build_matrix
from .ingest import RunConfig, SchemaError
from .preprocess import preprocess_panel, write_smoothed
from .seasonal import fit_seasonality, write_seasonality

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


class StageError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _load_config(path: str | None) -> RunConfig:
    if path is None:
        config = RunConfig()
        config.validate()
        return config
    return ingest.load_config(path)


def _write_predictions(rows: list[tuple[str, int, float]], path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["product_id", "week", "forecast"])
        for pid, week, value in sorted(rows):
            writer.writerow([pid, week, repr(float(value))])


def _read_predictions(path: Path) -> dict[tuple[str, int], float]:
    out: dict[tuple[str, int], float] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["product_id", "week", "forecast"]:
            raise SchemaError(f"{path}: unexpected predictions header {header}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise SchemaError(f"{path}:{line_no}: expected 3 fields")
            try:
                key = (row[0], int(row[1]))
                value = float(row[2])
            except ValueError:
                raise SchemaError(f"{path}:{line_no}: bad week or forecast") from None
            if key in out:
                raise SchemaError(f"{path}:{line_no}: duplicate key {key}")
            out[key] = value
    return out


def _life_at_forecast(panel: SalesPanel, pid: str, feature_week: int) -> int:
    if feature_week < 0:
        return 0
    i = panel.row(pid)
    return int(panel.on_sale_mask[i, : feature_week + 1].sum())


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_products=args.products,
        n_categories=args.categories,
        n_weeks=args.weeks,
        seed=args.seed,
    )
    panel, catalog, covariates, truth = synth.generate_panel(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ingest.write_sales(panel, out / "sales.csv")
    ingest.write_catalog(catalog, out / "catalog.csv")
    ingest.write_covariates(covariates, out / "covariates.csv")
    synth.write_ground_truth(truth, panel, out / "ground_truth.csv")
    synth.write_ground_truth_curves(truth, out / "ground_truth_curves.csv")
    print(f"wrote synthetic panel ({spec.n_products} products, {spec.n_weeks} weeks) to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    config = _load_config(args.config)
    panel = ingest.load_sales(args.sales)
    repaired, smoothed = preprocess_panel(panel, config.smooth_window, config.cap_gamma)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_smoothed(repaired, smoothed, out / "smoothed.csv")
    print(
        f"repaired {int(smoothed.repaired_mask.sum())} weeks, "
        f"capped {int(smoothed.capped_mask.sum())}; wrote {out / 'smoothed.csv'}"
    )
    return EXIT_OK


def _prepare(args, config: RunConfig):
    """Shared data path: load inputs, preprocess, fit seasonality on train weeks."""
    panel = ingest.load_sales(args.sales)
    catalog = ingest.load_catalog(args.catalog)
    catalog.validate_covers(panel)
    covariates = ingest.load_covariates(args.covariates, panel) if args.covariates else None
    repaired, smoothed = preprocess_panel(panel, config.smooth_window, config.cap_gamma)
    model = None
    if config.with_seasonality:
        model = fit_seasonality(
            smoothed,
            repaired,
            catalog,
            config.season_period,
            config.n_patterns,
            config.seed,
            end_week=min(config.train_len, panel.n_weeks),
        )
    return panel, catalog, covariates, repaired, smoothed, model


def _split_matrices(repaired, smoothed, catalog, model, covariates, config):
    spec = SplitSpec(config.train_len, config.valid_len, config.test_len, config.horizon)
    evaluation.temporal_split(repaired, spec)
    full = build_matrix(
        repaired, smoothed, catalog, model, covariates, config,
        t_end=spec.test_end - 1 - config.horizon, mode="train",
    )
    target = np.array([week for _, week in full.keys])
    train = full.select(target < spec.train_end)
    valid = full.select((target >= spec.valid_start) & (target < spec.test_start))
    test = full.select(target >= spec.test_start)
    return spec, train, valid, test


def cmd_train(args) -> int:
    config = _load_config(args.config)
    panel, catalog, covariates, repaired, smoothed, model = _prepare(args, config)
    _, train_rows, valid_rows, _ = _split_matrices(
        repaired, smoothed, catalog, model, covariates, config
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    booster = gbt.train(train_rows, gbt.TrainParams.from_config(config), valid_rows)
    gbt.save_model(booster, out / "model.json")
    manifest = {
        "config": asdict(config),
        "best_round": booster.best_round,
        "rounds_run": len(booster.trees),
        "train_rows": train_rows.n_rows,
        "valid_rows": valid_rows.n_rows,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    print(f"trained {len(booster.trees)} rounds, best_round={booster.best_round}")
    return EXIT_OK


def cmd_predict(args) -> int:
    config = _load_config(args.config)
    booster = gbt.load_model(args.model_file)
    panel, catalog, covariates, repaired, smoothed, model = _prepare(args, config)
    matrix = build_matrix(
        repaired, smoothed, catalog, model, covariates, config,
        t_end=panel.n_weeks - 1, mode="predict",
    )
    forecasts = gbt.predict(booster, matrix)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = [(pid, week, float(v)) for (pid, week), v in zip(matrix.keys, forecasts)]
    _write_predictions(rows, out / "predictions.csv")
    print(f"wrote {len(rows)} forecasts to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    predictions = _read_predictions(Path(args.predictions))
    panel = ingest.load_sales(args.sales)
    catalog = ingest.load_catalog(args.catalog)
    repaired, _ = preprocess_panel(panel, config.smooth_window, config.cap_gamma)
    actuals = {}
    life = {}
    for pid, week in predictions:
        if pid not in panel.index or not 0 <= week < panel.n_weeks:
            raise SchemaError(f"prediction key ({pid}, {week}) has no actual in the panel")
        actuals[(pid, week)] = float(repaired.y[panel.row(pid), week])
        life[(pid, week)] = _life_at_forecast(panel, pid, week - config.horizon)
    segments = evaluation.segment_products(
        repaired, catalog, train_end=min(config.train_len, panel.n_weeks)
    )
    report = evaluate(predictions, actuals, catalog, segments, life)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.csv")
    print(format_report(report))
    return EXIT_OK


def _forecast_test_rows(kind, config, args, train_rows, valid_rows, test_rows, repaired, catalog):
    """Fit the requested model and forecast the test rows.

    Returns (per-row forecasts, fitted booster or None, manifest details).
    """
    if kind == "gbt":
        booster = gbt.train(train_rows, gbt.TrainParams.from_config(config), valid_rows)
        return gbt.predict(booster, test_rows), booster, {
            "best_round": booster.best_round,
            "rounds_run": len(booster.trees),
        }
    if kind == "forest":
        params = gbt.ForestParams(n_trees=args.forest_trees, max_depth=min(config.max_depth * 4, 64))
        forest = gbt.train_forest(train_rows, params, config.seed)
        return forest.predict_array(test_rows.X), None, {"n_trees": args.forest_trees}
    if kind == "es":
        baseline = ESBaseline(repaired, catalog, train_end=config.train_len)
        out = np.empty(test_rows.n_rows)
        fallbacks = 0
        for idx, (pid, week) in enumerate(test_rows.keys):
            value, used_fallback = baseline.forecast(pid, week - config.horizon)
            out[idx] = value
            fallbacks += used_fallback
        return out, None, {"es_fallback_rows": fallbacks}
    raise ValueError(f"unknown model kind {kind!r}")


def cmd_pipeline(args) -> int:
    stage = "config"
    try:
        config = _load_config(args.config)
        if args.seed is not None:
            config.seed = args.seed
        if args.encoding:
            config.encoding = args.encoding
        if args.seasonality is not None:
            config.with_seasonality = args.seasonality
        config.validate()
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)

        stage = "synth"
        if args.sales is None:
            spec = synth.SynthSpec(seed=config.seed)
            panel_mem, catalog_mem, covariates_mem, truth = synth.generate_panel(spec)
            ingest.write_sales(panel_mem, out / "sales.csv")
            ingest.write_catalog(catalog_mem, out / "catalog.csv")
            ingest.write_covariates(covariates_mem, out / "covariates.csv")
            synth.write_ground_truth(truth, panel_mem, out / "ground_truth.csv")
            synth.write_ground_truth_curves(truth, out / "ground_truth_curves.csv")
            args.sales = str(out / "sales.csv")
            args.catalog = str(out / "catalog.csv")
            args.covariates = str(out / "covariates.csv")

        stage = "ingest"
        panel = ingest.load_sales(args.sales)
        catalog = ingest.load_catalog(args.catalog)
        catalog.validate_covers(panel)
        covariates = ingest.load_covariates(args.covariates, panel) if args.covariates else None

        stage = "preprocess"
        repaired, smoothed = preprocess_panel(panel, config.smooth_window, config.cap_gamma)

        stage = "seasonal"
        model = None
        if config.with_seasonality:
            model = fit_seasonality(
                smoothed, repaired, catalog, config.season_period,
                config.n_patterns, config.seed, end_week=config.train_len,
            )
            write_seasonality(model, out / "seasonality.csv")

        stage = "features"
        _, train_rows, valid_rows, test_rows = _split_matrices(
            repaired, smoothed, catalog, model, covariates, config
        )

        stage = "train"
        forecasts, booster, details = _forecast_test_rows(
            args.model_kind, config, args, train_rows, valid_rows, test_rows, repaired, catalog
        )
        if booster is not None:
            gbt.save_model(booster, out / "model.json")

        stage = "predict"
        if args.cold_start_filter > 0:
            keep = cold_start_filter(
                test_rows.keys, test_rows.life_at_forecast, args.cold_start_filter
            )
            test_rows = test_rows.select(keep)
            forecasts = forecasts[keep]
        rows = [(pid, week, float(v)) for (pid, week), v in zip(test_rows.keys, forecasts)]
        _write_predictions(rows, out / "predictions.csv")

        stage = "evaluate"
        predictions = {(pid, week): v for pid, week, v in rows}
        actuals = {
            key: float(value) for key, value in zip(test_rows.keys, test_rows.targets)
        }
        life = {
            key: int(value)
            for key, value in zip(test_rows.keys, test_rows.life_at_forecast)
        }
        segments = evaluation.segment_products(repaired, catalog, train_end=config.train_len)
        report = evaluate(predictions, actuals, catalog, segments, life)
        write_report(report, out / "report.csv")

        manifest = {
            "config": asdict(config),
            "model": args.model_kind,
            "cold_start_filter": args.cold_start_filter,
            "train_rows": train_rows.n_rows,
            "valid_rows": valid_rows.n_rows,
            "test_rows": test_rows.n_rows,
            **details,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
        print(format_report(report, title=f"model={args.model_kind} test rows={test_rows.n_rows}"))
        return EXIT_OK
    except Exception as exc:
        raise StageError(stage, exc) from exc


def build_parser() -> _Parser:
    parser = _Parser(prog="demandcast", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic panel")
    p_synth.add_argument("--out-dir", required=True)
    p_synth.add_argument("--products", type=int, default=500)
    p_synth.add_argument("--categories", type=int, default=20)
    p_synth.add_argument("--weeks", type=int, default=200)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.set_defaults(func=cmd_synth)

    p_pre = sub.add_parser("preprocess", help="repair fake zeros and smooth spikes")
    p_pre.add_argument("--sales", required=True)
    p_pre.add_argument("--config")
    p_pre.add_argument("--out-dir", required=True)
    p_pre.set_defaults(func=cmd_preprocess)

    p_train = sub.add_parser("train", help="train the boosted model")
    p_train.add_argument("--sales", required=True)
    p_train.add_argument("--catalog", required=True)
    p_train.add_argument("--covariates")
    p_train.add_argument("--config")
    p_train.add_argument("--out-dir", required=True)
    p_train.set_defaults(func=cmd_train)

    p_predict = sub.add_parser("predict", help="forecast h weeks past the panel end")
    p_predict.add_argument("--model-file", required=True)
    p_predict.add_argument("--sales", required=True)
    p_predict.add_argument("--catalog", required=True)
    p_predict.add_argument("--covariates")
    p_predict.add_argument("--config")
    p_predict.add_argument("--out-dir", required=True)
    p_predict.set_defaults(func=cmd_predict)

    p_eval = sub.add_parser("evaluate", help="score a predictions file")
    p_eval.add_argument("--predictions", required=True)
    p_eval.add_argument("--sales", required=True)
    p_eval.add_argument("--catalog", required=True)
    p_eval.add_argument("--config")
    p_eval.add_argument("--out-dir", required=True)
    p_eval.set_defaults(func=cmd_evaluate)

    p_pipe = sub.add_parser("pipeline", help="run the full chain end to end")
    p_pipe.add_argument("--config")
    p_pipe.add_argument("--sales")
    p_pipe.add_argument("--catalog")
    p_pipe.add_argument("--covariates")
    p_pipe.add_argument("--out-dir", required=True)
    p_pipe.add_argument("--seed", type=int)
    p_pipe.add_argument("--model", dest="model_kind", choices=("gbt", "forest", "es"), default="gbt")
    p_pipe.add_argument("--forest-trees", type=int, default=100)
    p_pipe.add_argument("--encoding", choices=("ordinal", "hashing"))
    seasonality = p_pipe.add_mutually_exclusive_group()
    seasonality.add_argument(
        "--with-seasonality", dest="seasonality", action="store_const", const=True
    )
    seasonality.add_argument(
        "--no-seasonality", dest="seasonality", action="store_const", const=False
    )
    p_pipe.set_defaults(seasonality=None)
    p_pipe.add_argument("--cold-start-filter", type=int, default=0)
    p_pipe.set_defaults(func=cmd_pipeline)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "pipeline" and (args.sales is None) != (args.catalog is None):
        parser.error("--sales and --catalog must be given together")
    try:
        return args.func(args)
    except StageError as err:
        print(f"error in {err}", file=sys.stderr)
        cause = err.cause
        if isinstance(cause, (SchemaError, FileNotFoundError, ValueError, KeyError)):
            return EXIT_DATA
        return EXIT_INTERNAL
    except (SchemaError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
