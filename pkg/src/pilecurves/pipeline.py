"""End-to-end run: data -> split -> tune -> train -> evaluate -> curves -> SHAP -> pile response."""

from __future__ import annotations

import copy
import csv
import datetime as _dt
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__, baseline, dataset, gbt, loess, metrics, shap, svg, tuner, winkler
from .dataset import FEATURE_NAMES, Y_OVER_D

log = logging.getLogger(__name__)

CONFIG_SECTIONS = ("data", "split", "baseline", "gbt", "tuner", "loess", "solver", "shap", "output")

DEFAULT_CONFIG: dict[str, Any] = {
    "data": {"generator": {}, "seed": 0},
    "split": {"seed": 0, "mode": "point", "hold_out": 3},
    "baseline": {},
    "gbt": {},
    "tuner": {"budget": 0, "seed": 0, "noise_level": 1e-4},
    "loess": {},
    "solver": {"cases": None, "n_nodes": 201, "n_steps": 20, "n_loads": 11, "H_max": None,
               "target_y_over_D": 0.1, "n_depths": 41, "n_y": 40},
    "shap": {"background": shap.DEFAULT_BACKGROUND, "split": "test", "seed": 0},
    "output": {"dir": "runs", "timestamped": True},
}


class ConfigError(ValueError):
    pass


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, manifest: Optional[dict] = None):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest


def merge_config(user: dict | None) -> dict:
    user = user or {}
    unknown = set(user) - set(CONFIG_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for section, values in user.items():
        if values is None:
            continue
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        if section == "data" and ("cases" in values or "records" in values):
            cfg["data"] = {}
        cfg[section].update(values)
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    cfg = merge_config(data)
    base = path.parent
    for key in ("cases", "records"):
        if cfg["data"].get(key):
            p = Path(cfg["data"][key])
            cfg["data"][key] = str(p if p.is_absolute() else base / p)
    return cfg


def apply_seed(cfg: dict, seed: int | None) -> dict:
    """Use one seed for every random stage."""
    if seed is None:
        return cfg
    cfg = copy.deepcopy(cfg)
    cfg["data"]["seed"] = seed
    cfg["split"]["seed"] = seed
    cfg["tuner"]["seed"] = seed
    cfg["gbt"]["seed"] = seed
    cfg["shap"]["seed"] = seed
    return cfg


def load_data(cfg: dict):
    data = cfg["data"]
    if data.get("cases"):
        return dataset.load_csv(data["cases"], data.get("records"))
    gen = dataset.GeneratorConfig.from_dict(data.get("generator") or {})
    if cfg.get("baseline") and not gen.baseline:
        gen.baseline = dict(cfg["baseline"])
    return dataset.generate_synthetic(gen, seed=int(data.get("seed", 0)))


def choose_hold_out(samples, spec, seed: int) -> list[str]:
    if spec is None:
        return []
    if isinstance(spec, int):
        ids = sorted({s.case_id for s in samples})
        if spec > len(ids):
            raise ConfigError(f"cannot hold out {spec} of {len(ids)} curves")
        rng = np.random.default_rng([seed, 7919])
        return sorted(ids[i] for i in rng.choice(len(ids), spec, replace=False))
    return list(spec)


@dataclass
class RunManifest:
    config: dict
    dataset_fingerprint: str = ""
    hyperparams: dict = field(default_factory=dict)
    tuned: bool = False
    refit_on_train_validation: bool = True
    metrics: list = field(default_factory=list)
    hold_out: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    version: str = __version__
    failed_stage: Optional[str] = None
    error: Optional[str] = None
    notes: dict = field(default_factory=dict)
    out_dir: Optional[Path] = None

    def to_dict(self) -> dict:
        return {
            "tool": "pilecurves",
            "version": self.version,
            "config": self.config,
            "seeds": {
                "data": self.config["data"].get("seed"),
                "split": self.config["split"]["seed"],
                "tuner": self.config["tuner"]["seed"],
                "gbt": self.hyperparams.get("seed"),
                "shap": self.config["shap"]["seed"],
            },
            "dataset_fingerprint": self.dataset_fingerprint,
            "hyperparams": self.hyperparams,
            "tuned": self.tuned,
            "refit_on_train_validation": self.refit_on_train_validation,
            "hold_out": self.hold_out,
            "metrics": self.metrics,
            "artifacts": self.artifacts,
            "notes": self.notes,
            "failed_stage": self.failed_stage,
            "error": self.error,
        }


class _Run:
    def __init__(self, cfg: dict, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.manifest = RunManifest(config=cfg)
        self.timings: dict[str, float] = {}

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def record(self, *paths: Path) -> None:
        for p in paths:
            rel = str(Path(p).relative_to(self.out))
            self.manifest.artifacts[rel] = hashlib.sha256(Path(p).read_bytes()).hexdigest()

    def write_json(self, rel: str, obj) -> Path:
        p = self.path(rel)
        p.write_text(json.dumps(obj, indent=2) + "\n")
        self.record(p)
        return p

    def write_manifest(self) -> Path:
        p = self.out / "manifest.json"
        p.write_text(json.dumps(self.manifest.to_dict(), indent=2, default=_jsonable) + "\n")
        return p


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def resolve_out_dir(cfg: dict, out: Optional[str | Path] = None) -> Path:
    base = Path(out) if out is not None else Path(cfg["output"]["dir"])
    if cfg["output"].get("timestamped", True):
        stamp = _dt.datetime.now().strftime("run_%Y%m%d_%H%M%S_%f")
        return base / stamp
    return base


def write_parity_csv(path: Path, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "case_id", "observed", "predicted"])
        for row in rows:
            w.writerow([row[0], row[1], repr(float(row[2])), repr(float(row[3]))])
    return path


def smoothed_curve(model: gbt.TreeEnsemble, case: dataset.PileSoilCase, z: float, observed_yd,
                   cfg: loess.LoessConfig):
    """Scattered model points and their LOESS curve at one depth (values in p_bar)."""
    observed_yd = np.asarray(observed_yd, dtype=float)
    lo, hi = float(observed_yd.min()), float(observed_yd.max())
    grid = np.array([q for q in cfg.query_grid if lo <= q <= hi])
    if grid.size == 0:
        grid = np.linspace(lo, hi, 20)
    x_pts = np.unique(np.concatenate([observed_yd, grid]))
    X = np.array([dataset.feature_vector(case, z, yd * case.D).as_array() for yd in x_pts])
    scatter = model.predict(X)
    curve = loess.loess(np.column_stack([x_pts, scatter]), cfg, query=grid)
    loess.check_monotone(curve)
    return x_pts, scatter, curve


def write_curve_csv(path: Path, case: dataset.PileSoilCase, z: float, curve) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["z_m", "y_over_D", "p_bar", "p_kNm"])
        for yd, pb in curve:
            w.writerow([repr(float(z)), repr(float(yd)), repr(float(pb)),
                        repr(float(pb * case.gamma_eff * z * case.D))])
    return path


def default_load_range(springs_baseline: winkler.SpringField, pile: winkler.PileModel, target_yd: float,
                       n_loads: int, n_steps: int = 20) -> list[float]:
    """Loads from 0 up to the baseline load giving head deflection ``target_yd * D``."""
    target = target_yd * pile.D

    def y_head(H: float) -> float:
        try:
            return winkler.solve(pile, springs_baseline, H, n_steps=n_steps).head_deflection
        except winkler.SolverError:
            return np.inf

    y1 = y_head(1.0)
    hi = max(target / y1, 1.0) if np.isfinite(y1) and y1 > 0 else 1.0
    for _ in range(60):
        if y_head(hi) >= target:
            break
        hi *= 2.0
    lo = 0.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if y_head(mid) >= target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-3 * hi:
            break
    return [float(h) for h in np.linspace(0.0, lo, n_loads)]


def run(config: dict | None = None, out: Optional[str | Path] = None) -> RunManifest:
    """Execute every stage and write artifacts plus ``manifest.json`` into the run directory."""
    cfg = merge_config(config)
    out_dir = resolve_out_dir(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    r = _Run(cfg, out_dir)
    stage = "config"
    try:
        stage = "data"
        cases, records = load_data(cfg)
        r.manifest.dataset_fingerprint = dataset.dataset_fingerprint(cases, records)
        r.record(*dataset.write_csv(r.path("data"), cases, records))
        samples = dataset.featurize_all(cases, records)
        by_case = {c.case_id: c for c in cases}

        stage = "stats"
        summaries = dataset.summarize(samples)
        r.write_json("stats/summary.json", dataset.summary_json(summaries))
        names = list(summaries)
        r.record(svg.violin_plot(r.path("stats/violin.svg"), names, [summaries[n].to_dict() for n in names]))

        stage = "split"
        split_cfg = cfg["split"]
        held_ids = choose_hold_out(samples, split_cfg.get("hold_out"), int(split_cfg["seed"]))
        retained, held = dataset.hold_out(samples, held_ids)
        parts = dataset.split(retained, int(split_cfg["seed"]), split_cfg.get("mode", "point"))
        r.manifest.hold_out = held_ids
        Xtr, ytr = dataset.to_arrays(parts.train)
        Xva, yva = dataset.to_arrays(parts.validation)
        Xte, yte = dataset.to_arrays(parts.test)

        stage = "tune"
        hp_base = dict(cfg["gbt"])
        budget = int(cfg["tuner"].get("budget", 0))
        hp_dict = dict(hp_base)
        if budget > 0:
            space = tuner.SearchSpace.from_dict(cfg["tuner"]["space"]) if cfg["tuner"].get("space") else tuner.default_space()
            trace = tuner.optimize(
                tuner.gbt_objective(Xtr, ytr, Xva, yva, hp_base), space, budget,
                seed=int(cfg["tuner"].get("seed", 0)), noise_level=float(cfg["tuner"].get("noise_level", 1e-4)),
            )
            r.record(trace.write_csv(r.path("tuning/trace.csv")))
            hp_dict.update(trace.best.params)
            r.manifest.tuned = True
        hp = gbt.Hyperparams.from_dict(hp_dict)
        r.manifest.hyperparams = hp.to_dict()

        stage = "train"
        X_fit = np.vstack([Xtr, Xva])
        y_fit = np.concatenate([ytr, yva])
        model = gbt.fit_arrays(X_fit, y_fit, hp)
        r.record(gbt.save_model(model, r.path("model/model.json")))

        stage = "evaluate"
        parity_rows = []
        groups = []
        for name, part in (("train", parts.train), ("validation", parts.validation), ("test", parts.test),
                           ("held_out", held)):
            if len(part) < 2:
                continue
            X, y = dataset.to_arrays(part)
            pred = model.predict(X)
            r.manifest.metrics.append(metrics.report(pred, y).to_dict(name))
            parity_rows.extend((name, s.case_id, o, p) for s, o, p in zip(part, y, pred))
            groups.append((name, y, pred))
        r.write_json("evaluation/metrics.json", r.manifest.metrics)
        r.record(write_parity_csv(r.path("evaluation/parity.csv"), parity_rows))
        r.record(svg.parity_plot(r.path("evaluation/parity.svg"), groups, "Predicted vs observed"))

        stage = "curves"
        lcfg = loess.LoessConfig.from_dict(cfg["loess"])
        for cid in held_ids:
            case = by_case[cid]
            recs = [rec for rec in records if rec.case_id == cid]
            for z in sorted({rec.z for rec in recs}):
                at_z = [rec for rec in recs if rec.z == z]
                obs_yd = [rec.y / case.D for rec in at_z]
                obs_pb = [rec.p / (case.gamma_eff * z * case.D) for rec in at_z]
                x_pts, scatter, curve = smoothed_curve(model, case, z, obs_yd, lcfg)
                tag = f"{cid}_z{z:.3f}"
                r.record(write_curve_csv(r.path(f"curves/{tag}.csv"), case, z, curve))
                r.record(svg.line_chart(
                    r.path(f"curves/{tag}.svg"),
                    [("LOESS", [c[0] for c in curve], [c[1] for c in curve])],
                    title=f"p-y curve {cid} at z = {z:.2f} m",
                    x_label="y/D", y_label="p/(gamma' z D)",
                    scatter=[("observed", obs_yd, obs_pb), ("model", x_pts, scatter)],
                ))

        stage = "explain"
        scfg = cfg["shap"]
        explain_part = {"train": parts.train, "validation": parts.validation, "test": parts.test}[scfg.get("split", "test")]
        background = shap.background_sample(Xtr, int(scfg.get("background", shap.DEFAULT_BACKGROUND)),
                                            int(scfg.get("seed", 0)))
        Xex, _ = dataset.to_arrays(explain_part)
        ids = [f"{s.case_id}#{i}" for i, s in enumerate(explain_part)]
        expl = shap.explain_many(model, Xex, background, ids)
        files = shap.export_summary(model, Xex, background, r.path("shap"), FEATURE_NAMES, ids, expl)
        r.record(*files.values())
        V = np.array([e.values for e in expl])
        imp = shap.global_importance(model, Xex, background, FEATURE_NAMES, expl)
        corr = float(np.corrcoef(Xex[:, Y_OVER_D], V[:, Y_OVER_D])[0, 1]) if Xex.shape[0] > 2 else float("nan")
        r.write_json("shap/interpretation.json", {
            "ranking": [f for f, _ in imp.ranked()],
            "y_over_D_value_shap_correlation": corr,
            "max_efficiency_error": float(max(abs(e.values.sum() - (e.prediction - e.base_value)) for e in expl)),
        })

        stage = "solve"
        solver_cfg = cfg["solver"]
        solve_ids = solver_cfg.get("cases")
        solve_ids = held_ids if solve_ids is None else list(solve_ids)
        bparams = baseline.ApiPyParams.from_dict(cfg["baseline"])
        for cid in solve_ids:
            if cid not in by_case:
                raise ConfigError(f"solver case {cid!r} not in the dataset")
            case = by_case[cid]
            pile = winkler.PileModel.from_case(case, EI=solver_cfg.get("EI"), n_nodes=int(solver_cfg["n_nodes"]))
            zg, yg = winkler.default_grids(case, int(solver_cfg["n_depths"]), int(solver_cfg["n_y"]))
            fields = {
                "baseline": winkler.build_spring_field(bparams, case, zg, yg),
                "model": winkler.build_spring_field(model, case, zg, yg, lcfg),
            }
            if solver_cfg.get("H_values"):
                H_values = [float(h) for h in solver_cfg["H_values"]]
            elif solver_cfg.get("H_max"):
                H_values = list(np.linspace(0.0, float(solver_cfg["H_max"]), int(solver_cfg["n_loads"])))
            else:
                H_values = default_load_range(fields["baseline"], pile, float(solver_cfg["target_y_over_D"]),
                                              int(solver_cfg["n_loads"]), int(solver_cfg["n_steps"]))
            sweeps = {}
            for label, sf in fields.items():
                sw = winkler.head_sweep(pile, sf, H_values, n_steps=int(solver_cfg["n_steps"]))
                sweeps[label] = sw
                r.record(sw.write_csv(r.path(f"solver/{cid}_{label}_sweep.csv")))
                if sw.solutions:
                    r.record(sw.solutions[-1].write_csv(r.path(f"solver/{cid}_{label}_solution.csv")))
                if sw.failure:
                    r.manifest.notes[f"{cid}_{label}"] = sw.failure
            r.record(svg.line_chart(
                r.path(f"solver/{cid}_force_displacement.svg"),
                [(label, sw.y_head, sw.H) for label, sw in sweeps.items()],
                title=f"Force-displacement {cid}", x_label="head deflection (m)", y_label="H (kN)", markers=True,
            ))
            r.record(svg.line_chart(
                r.path(f"solver/{cid}_moment.svg"),
                [(label, sw.solutions[-1].moment, sw.solutions[-1].z) for label, sw in sweeps.items() if sw.solutions],
                title=f"Moment-depth {cid}", x_label="M (kN m)", y_label="z (m)", invert_y=True,
            ))
    except Exception as exc:
        r.manifest.failed_stage = stage
        r.manifest.error = str(exc)
        r.write_manifest()
        raise PipelineError(stage, exc, r.manifest.to_dict()) from exc
    r.write_manifest()
    r.manifest.out_dir = out_dir
    return r.manifest


def write_report(run_dir) -> Path:
    """Markdown index of a finished run: metrics table plus links to every SVG."""
    run_dir = Path(run_dir)
    mpath = run_dir / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"{mpath} not found")
    man = json.loads(mpath.read_text())
    lines = ["# pilecurves run report", "", f"Dataset fingerprint: `{man['dataset_fingerprint']}`", ""]
    lines += ["| split | RMSE | SI | CC | m |", "|---|---|---|---|---|"]
    for m in man.get("metrics", []):
        lines.append(f"| {m['split']} | {m['rmse']:.4g} | {m['si']:.4g} | {m['cc']:.4g} | {m['m']} |")
    lines += ["", "## Hyperparameters", ""]
    lines += [f"- {k}: {v}" for k, v in man.get("hyperparams", {}).items()]
    lines += ["", "## Figures", ""]
    for rel in sorted(k for k in man.get("artifacts", {}) if k.endswith(".svg")):
        lines.append(f"![{rel}]({rel})")
    out = run_dir / "index.md"
    out.write_text("\n".join(lines) + "\n")
    return out


def timed_run(config: dict | None = None, out=None) -> tuple[RunManifest, float]:
    t0 = time.perf_counter()
    man = run(config, out)
    return man, time.perf_counter() - t0
