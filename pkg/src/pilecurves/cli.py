"""Command-line entry point: ``pilecurves <command> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, baseline, dataset, gbt, loess, metrics, pipeline, shap, svg, tuner, winkler
from .dataset import FEATURE_NAMES

COMMANDS = ("generate", "ingest", "stats", "train", "tune", "predict", "smooth", "explain", "solve", "run", "report")


class CliError(Exception):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        self.exit(2)


def _emit_error(stage: str, message: str) -> None:
    print(json.dumps({"status": "error", "stage": stage, "error": message}), file=sys.stderr)


def _add(p: argparse.ArgumentParser, *flags: str) -> None:
    spec = {
        "config": dict(metavar="PATH", help="JSON config with sections data, split, baseline, gbt, tuner, "
                                             "loess, solver, shap, output"),
        "seed": dict(type=int, metavar="INT", help="seed applied to every random stage"),
        "out": dict(metavar="DIR", help="output directory"),
        "split": dict(choices=("point", "curve"), help="split unit: individual points or whole curves"),
        "budget": dict(type=int, metavar="INT", help="tuner evaluations (0 keeps default hyperparameters)"),
        "span": dict(type=float, metavar="FLOAT", help="LOESS span in (0, 1]"),
        "degree": dict(type=int, metavar="INT", choices=(0, 1, 2), help="LOESS local polynomial degree"),
        "case": dict(metavar="ID", help="case_id from the configured data"),
        "zd": dict(type=float, metavar="FLOAT", help="depth as z/D"),
        "springs": dict(choices=("model", "baseline"), default="baseline", help="spring source (default baseline)"),
        "model": dict(metavar="PATH", help="model JSON written by train/tune"),
    }
    for f in flags:
        p.add_argument(f"--{f}", **spec[f])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pilecurves", description="Learn, smooth, explain and use p-y curves for monopiles in sand.")
    parser.add_argument("--version", action="version", version=f"pilecurves {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "generate": ("synthetic database CSVs", ("config", "seed", "out")),
        "ingest": ("validate data CSVs and write canonical copies", ("config", "out")),
        "stats": ("feature quartiles/KDE JSON and violin SVG", ("config", "seed", "out")),
        "train": ("fit an ensemble with fixed hyperparameters", ("config", "seed", "split", "out")),
        "tune": ("Bayesian hyperparameter search, then refit", ("config", "seed", "split", "budget", "out")),
        "predict": ("scattered model predictions along a y/D grid", ("config", "model", "case", "zd", "out")),
        "smooth": ("LOESS curve from model predictions", ("config", "model", "case", "zd", "span", "degree", "out")),
        "explain": ("exact SHAP values on the test split", ("config", "model", "seed", "split", "out")),
        "solve": ("pile head sweep on nonlinear Winkler springs", ("config", "model", "case", "springs", "out")),
        "run": ("full pipeline into a timestamped run directory",
                ("config", "seed", "split", "budget", "span", "degree", "out")),
        "report": ("markdown index of a finished run", ("out",)),
    }
    for name in COMMANDS:
        text, flags = helps[name]
        p = sub.add_parser(name, help=text, description=text)
        _add(p, *flags)
    return parser


def all_help_text() -> str:
    """Top-level help followed by the help of every command."""
    parser = build_parser()
    parts = [parser.format_help()]
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for name in COMMANDS:
        parts.append(sub.choices[name].format_help())
    return "\n".join(parts)


def _config(args) -> dict:
    cfg = pipeline.load_config(args.config) if getattr(args, "config", None) else pipeline.merge_config(None)
    cfg = pipeline.apply_seed(cfg, getattr(args, "seed", None))
    if getattr(args, "split", None):
        cfg["split"]["mode"] = args.split
    if getattr(args, "budget", None) is not None:
        cfg["tuner"]["budget"] = args.budget
    if getattr(args, "span", None) is not None:
        cfg["loess"]["span"] = args.span
    if getattr(args, "degree", None) is not None:
        cfg["loess"]["degree"] = args.degree
    return cfg


def _out(args, default: str = ".") -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _data(cfg):
    try:
        return pipeline.load_data(cfg)
    except (dataset.DatasetError, OSError) as exc:
        raise CliError("dataset", str(exc)) from exc


def _splits(cfg):
    cases, records = _data(cfg)
    samples = dataset.featurize_all(cases, records)
    held_ids = pipeline.choose_hold_out(samples, cfg["split"].get("hold_out"), int(cfg["split"]["seed"]))
    retained, _ = dataset.hold_out(samples, held_ids)
    return dataset.split(retained, int(cfg["split"]["seed"]), cfg["split"].get("mode", "point"))


def _case(cfg, case_id: Optional[str]) -> dataset.PileSoilCase:
    if not case_id:
        raise CliError("dataset", "--case is required")
    cases, _ = _data(cfg)
    for c in cases:
        if c.case_id == case_id:
            return c
    raise CliError("dataset", f"case {case_id!r} not found")


def _model(path: Optional[str]) -> gbt.TreeEnsemble:
    if not path:
        raise CliError("gbt_engine", "--model is required")
    try:
        return gbt.load_model(path)
    except (OSError, gbt.ModelFormatError, json.JSONDecodeError) as exc:
        raise CliError("gbt_engine", str(exc)) from exc


def _depth(case: dataset.PileSoilCase, zd: Optional[float]) -> float:
    if zd is None:
        raise CliError("dataset", "--zd is required")
    z = zd * case.D
    if not 0.0 < z <= case.L_p:
        raise CliError("dataset", f"z/D = {zd} is outside the embedded length (0, {case.L_p / case.D:.3f}]")
    return z


def _grid_predictions(model, case, z, grid) -> np.ndarray:
    X = np.array([dataset.feature_vector(case, z, yd * case.D).as_array() for yd in grid])
    return model.predict(X)


def cmd_generate(args) -> dict:
    cfg = _config(args)
    gen = dataset.GeneratorConfig.from_dict(cfg["data"].get("generator") or {})
    cases, records = dataset.generate_synthetic(gen, seed=int(cfg["data"].get("seed", 0)))
    paths = dataset.write_csv(_out(args), cases, records)
    return {"files": [str(p) for p in paths], "curves": len(cases), "records": len(records)}


def cmd_ingest(args) -> dict:
    cfg = _config(args)
    if not cfg["data"].get("cases"):
        raise CliError("dataset", "config data.cases must name the cases CSV (or its directory)")
    cases, records = _data(cfg)
    paths = dataset.write_csv(_out(args), cases, records)
    return {"files": [str(p) for p in paths], "fingerprint": dataset.dataset_fingerprint(cases, records)}


def cmd_stats(args) -> dict:
    cfg = _config(args)
    cases, records = _data(cfg)
    summaries = dataset.summarize(dataset.featurize_all(cases, records))
    out = _out(args)
    js = out / "summary.json"
    js.write_text(json.dumps(dataset.summary_json(summaries), indent=2) + "\n")
    names = list(summaries)
    sv = svg.violin_plot(out / "violin.svg", names, [summaries[n].to_dict() for n in names])
    return {"files": [str(js), str(sv)]}


def cmd_train(args) -> dict:
    cfg = _config(args)
    parts = _splits(cfg)
    Xtr, ytr = dataset.to_arrays(parts.train)
    Xva, yva = dataset.to_arrays(parts.validation)
    hp = gbt.Hyperparams.from_dict(cfg["gbt"])
    try:
        model = gbt.fit_arrays(Xtr, ytr, hp)
    except gbt.TrainingError as exc:
        raise CliError("gbt_engine", str(exc)) from exc
    out = _out(args)
    trace = out / "training_trace.csv"
    with trace.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "train_rmse", "validation_rmse"])
        stages = zip(model.staged_predict(Xtr), model.staged_predict(Xva))
        for k, (ptr, pva) in enumerate(stages):
            w.writerow([k, repr(metrics.rmse(ptr, ytr)), repr(metrics.rmse(pva, yva))])
    mp = gbt.save_model(model, out / "model.json")
    return {"files": [str(mp), str(trace)], "validation": metrics.report(model.predict(Xva), yva).to_dict()}


def cmd_tune(args) -> dict:
    cfg = _config(args)
    budget = int(cfg["tuner"].get("budget", 0))
    if budget < 1:
        raise CliError("bayes_tuner", "--budget must be a positive integer")
    parts = _splits(cfg)
    Xtr, ytr = dataset.to_arrays(parts.train)
    Xva, yva = dataset.to_arrays(parts.validation)
    space = tuner.SearchSpace.from_dict(cfg["tuner"]["space"]) if cfg["tuner"].get("space") else tuner.default_space()
    try:
        trace = tuner.optimize(tuner.gbt_objective(Xtr, ytr, Xva, yva, cfg["gbt"]), space, budget,
                               seed=int(cfg["tuner"].get("seed", 0)),
                               noise_level=float(cfg["tuner"].get("noise_level", 1e-4)))
    except tuner.TunerError as exc:
        raise CliError("bayes_tuner", str(exc)) from exc
    out = _out(args)
    tp = trace.write_csv(out / "trace.csv")
    hp = gbt.Hyperparams.from_dict({**cfg["gbt"], **trace.best.params})
    model = gbt.fit_arrays(np.vstack([Xtr, Xva]), np.concatenate([ytr, yva]), hp)
    mp = gbt.save_model(model, out / "model.json")
    return {"files": [str(mp), str(tp)], "best": trace.best.params, "best_validation_rmse": trace.best.objective}


def cmd_predict(args) -> dict:
    cfg = _config(args)
    model = _model(args.model)
    case = _case(cfg, args.case)
    z = _depth(case, args.zd)
    grid = np.asarray(loess.LoessConfig.from_dict(cfg["loess"]).query_grid, dtype=float)
    pred = _grid_predictions(model, case, z, grid)
    path = _out(args) / f"predictions_{case.case_id}_zd{args.zd:g}.csv"
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y_over_D", "p_bar", "p_kNm"])
        for yd, pb in zip(grid, pred):
            w.writerow([repr(float(yd)), repr(float(pb)), repr(float(dataset.pred_to_p(pb, case, z)))])
    return {"files": [str(path)], "rows": int(grid.size)}


def cmd_smooth(args) -> dict:
    cfg = _config(args)
    model = _model(args.model)
    case = _case(cfg, args.case)
    z = _depth(case, args.zd)
    try:
        lcfg = loess.LoessConfig.from_dict(cfg["loess"])
        grid = np.asarray(lcfg.query_grid, dtype=float)
        pred = _grid_predictions(model, case, z, grid)
        curve = loess.loess(np.column_stack([grid, pred]), lcfg)
    except loess.LoessError as exc:
        raise CliError("loess_smoother", str(exc)) from exc
    loess.check_monotone(curve)
    out = _out(args)
    tag = f"{case.case_id}_zd{args.zd:g}"
    cp = pipeline.write_curve_csv(out / f"curve_{tag}.csv", case, z, curve)
    sp = svg.line_chart(out / f"curve_{tag}.svg", [("LOESS", [c[0] for c in curve], [c[1] for c in curve])],
                        title=f"p-y curve {case.case_id} at z/D = {args.zd:g}", x_label="y/D",
                        y_label="p/(gamma' z D)", scatter=[("model", grid, pred)])
    return {"files": [str(cp), str(sp)]}


def cmd_explain(args) -> dict:
    cfg = _config(args)
    model = _model(args.model)
    parts = _splits(cfg)
    Xtr, _ = dataset.to_arrays(parts.train)
    part = {"train": parts.train, "validation": parts.validation, "test": parts.test}[cfg["shap"].get("split", "test")]
    X, _ = dataset.to_arrays(part)
    try:
        background = shap.background_sample(Xtr, int(cfg["shap"]["background"]), int(cfg["shap"]["seed"]))
        ids = [f"{s.case_id}#{i}" for i, s in enumerate(part)]
        files = shap.export_summary(model, X, background, _out(args), FEATURE_NAMES, ids)
    except shap.ShapError as exc:
        raise CliError("shap_explainer", str(exc)) from exc
    return {"files": [str(p) for p in files.values()]}


def cmd_solve(args) -> dict:
    cfg = _config(args)
    case = _case(cfg, args.case)
    scfg = cfg["solver"]
    try:
        pile = winkler.PileModel.from_case(case, EI=scfg.get("EI"), n_nodes=int(scfg["n_nodes"]))
        zg, yg = winkler.default_grids(case, int(scfg["n_depths"]), int(scfg["n_y"]))
        base_field = winkler.build_spring_field(baseline.ApiPyParams.from_dict(cfg["baseline"]), case, zg, yg)
        if args.springs == "model":
            field = winkler.build_spring_field(_model(args.model), case, zg, yg,
                                               loess.LoessConfig.from_dict(cfg["loess"]))
        else:
            field = base_field
        if scfg.get("H_values") is not None:
            H_values = [float(h) for h in scfg["H_values"]]
        elif scfg.get("H_max"):
            H_values = list(np.linspace(0.0, float(scfg["H_max"]), int(scfg["n_loads"])))
        else:
            H_values = pipeline.default_load_range(base_field, pile, float(scfg["target_y_over_D"]),
                                                   int(scfg["n_loads"]), int(scfg["n_steps"]))
        sweep = winkler.head_sweep(pile, field, H_values, n_steps=int(scfg["n_steps"]))
    except (winkler.SolverError, ValueError) as exc:
        raise CliError("winkler_solver", str(exc)) from exc
    out = _out(args)
    tag = f"{case.case_id}_{args.springs}"
    files = [sweep.write_csv(out / f"sweep_{tag}.csv")]
    files.append(svg.line_chart(out / f"force_displacement_{tag}.svg", [(args.springs, sweep.y_head, sweep.H)],
                                title=f"Force-displacement {case.case_id}", x_label="head deflection (m)",
                                y_label="H (kN)", markers=True))
    if sweep.solutions:
        last = sweep.solutions[-1]
        files.append(last.write_csv(out / f"solution_{tag}.csv"))
        files.append(svg.line_chart(out / f"moment_{tag}.svg", [(args.springs, last.moment, last.z)],
                                    title=f"Moment-depth {case.case_id}", x_label="M (kN m)", y_label="z (m)",
                                    invert_y=True))
    result = {"files": [str(p) for p in files]}
    if sweep.failure:
        result["warning"] = sweep.failure
    return result


def cmd_run(args) -> dict:
    cfg = _config(args)
    man = pipeline.run(cfg, args.out)
    return {"run_dir": str(man.out_dir), "metrics": man.metrics}


def cmd_report(args) -> dict:
    if not args.out:
        raise CliError("pipeline", "--out must name a run directory")
    try:
        path = pipeline.write_report(args.out)
    except FileNotFoundError as exc:
        raise CliError("pipeline", str(exc)) from exc
    return {"files": [str(path)]}


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}

_STAGE_OF = {
    dataset.DatasetError: "dataset",
    baseline.BaselineError: "baseline_py",
    gbt.TrainingError: "gbt_engine",
    gbt.ModelFormatError: "gbt_engine",
    metrics.UndefinedMetricError: "metrics",
    tuner.TunerError: "bayes_tuner",
    shap.ShapError: "shap_explainer",
    loess.LoessError: "loess_smoother",
    winkler.SolverError: "winkler_solver",
    pipeline.ConfigError: "config",
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        result = HANDLERS[args.command](args)
    except CliError as exc:
        _emit_error(exc.stage, str(exc))
        return 1
    except pipeline.PipelineError as exc:
        _emit_error(exc.stage, str(exc.cause))
        return 1
    except Exception as exc:  # noqa: BLE001
        stage = next((s for t, s in _STAGE_OF.items() if isinstance(exc, t)), args.command)
        _emit_error(stage, f"{type(exc).__name__}: {exc}")
        return 1
    print(json.dumps({"status": "ok", "command": args.command, **result}, default=str))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
