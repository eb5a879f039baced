"""Pile/soil case data, dimensionless features and synthetic p-y databases.

Units are SI throughout: m, kN, kPa, kN/m3.  Every p-y record belongs to a
single homogeneous sand case and is turned into one dimensionless training
sample by :func:`featurize`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ATMOSPHERIC_PRESSURE = 101.325  # kPa

FEATURE_NAMES = (
    "Dr",
    "phi_cr",
    "stress_slenderness",
    "z_over_D",
    "y_over_D",
    "gamma_ratio",
)
TARGET_NAME = "p_bar"
Y_OVER_D = FEATURE_NAMES.index("y_over_D")

CASE_COLUMNS = (
    "case_id",
    "source_id",
    "Dr",
    "phi_cr_deg",
    "gamma_eff_kNm3",
    "gamma_w_kNm3",
    "D_m",
    "Lp_m",
    "Ep_kPa",
    "e_m",
)
RECORD_COLUMNS = ("case_id", "z_m", "y_m", "p_kNm")

CASES_FILE = "cases.csv"
RECORDS_FILE = "py_records.csv"

# Feature and target envelopes (min, max) of the reference database.
TABLE1_ENVELOPES = {
    "Dr": (0.60, 1.00),
    "phi_cr": (28.50, 37.10),
    "gamma_ratio": (0.48, 1.00),
    "D": (0.24, 8.00),
    "stress_slenderness": (2.50, 120.14),
    "z_over_D": (0.20, 6.13),
    "y_over_D": (0.00, 0.43),
    "p_bar": (0.00, 96.84),
}


class DatasetError(ValueError):
    """Raised for malformed or physically invalid input data."""


@dataclass(frozen=True)
class PileSoilCase:
    case_id: str
    source_id: str
    D_r: float
    phi_cr: float
    gamma_eff: float
    gamma_w: float
    D: float
    L_p: float
    E_p: float = 210e6
    e: float = 0.0

    def __post_init__(self):
        problems = _case_problems(self)
        if problems:
            raise DatasetError(f"case {self.case_id!r}: {problems[0]}")

    @property
    def area(self) -> float:
        """Gross cross-section area pi*D^2/4."""
        return math.pi * self.D**2 / 4.0

    @property
    def gamma_ratio(self) -> float:
        return self.gamma_eff / (self.gamma_w + self.gamma_eff)


def _case_problems(case: PileSoilCase) -> list[str]:
    checks = [
        (0.0 < case.D_r <= 1.0, "Dr must lie in (0, 1]"),
        (20.0 <= case.phi_cr <= 50.0, "phi_cr_deg must lie in [20, 50]"),
        (case.gamma_eff > 0.0, "gamma_eff_kNm3 must be > 0"),
        (case.gamma_w >= 0.0, "gamma_w_kNm3 must be >= 0"),
        (case.D > 0.0, "D_m must be > 0"),
        (case.L_p > 0.0, "Lp_m must be > 0"),
        (case.E_p > 0.0, "Ep_kPa must be > 0"),
        (case.e >= 0.0, "e_m must be >= 0"),
    ]
    values = (case.D_r, case.phi_cr, case.gamma_eff, case.gamma_w, case.D, case.L_p, case.E_p, case.e)
    if not all(math.isfinite(v) for v in values):
        return ["non-finite value"]
    return [msg for ok, msg in checks if not ok]


@dataclass(frozen=True)
class PYRecord:
    case_id: str
    z: float
    y: float
    p: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.z, self.y, self.p)):
            raise DatasetError(f"record for case {self.case_id!r}: non-finite value")
        if self.z <= 0.0:
            raise DatasetError(f"record for case {self.case_id!r}: z_m must be > 0")
        if self.y < 0.0:
            raise DatasetError(f"record for case {self.case_id!r}: y_m must be >= 0")
        if self.p < 0.0:
            raise DatasetError(f"record for case {self.case_id!r}: p_kNm must be >= 0")


@dataclass(frozen=True)
class FeatureVector:
    """The six dimensionless inputs, in model column order."""

    D_r: float
    phi_cr: float
    stress_slenderness: float
    z_over_D: float
    y_over_D: float
    gamma_ratio: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.D_r, self.phi_cr, self.stress_slenderness, self.z_over_D, self.y_over_D, self.gamma_ratio],
            dtype=float,
        )


@dataclass(frozen=True)
class Sample:
    features: FeatureVector
    target: float
    case_id: str


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[Sample, ...]
    validation: tuple[Sample, ...]
    test: tuple[Sample, ...]
    seed: int
    mode: str


@dataclass(frozen=True)
class FeatureSummary:
    name: str
    min: float
    max: float
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    kde_grid: tuple[float, ...] = ()
    kde_density: tuple[float, ...] = ()

    @property
    def iqr(self) -> float:
        return self.q3 - self.q1

    def to_dict(self) -> dict:
        return {
            "min": self.min,
            "max": self.max,
            "Q1": self.q1,
            "median": self.median,
            "Q3": self.q3,
            "IQR": self.iqr,
            "whisker_low": self.whisker_low,
            "whisker_high": self.whisker_high,
            "kde": {"grid": list(self.kde_grid), "density": list(self.kde_density)},
        }


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def _resolve_paths(path, records_path=None) -> tuple[Path, Path]:
    path = Path(path)
    if path.is_dir():
        return path / CASES_FILE, path / RECORDS_FILE
    if records_path is None:
        return path, path.with_name(RECORDS_FILE)
    return path, Path(records_path)


def _read_rows(path: Path, columns: Sequence[str]) -> list[tuple[int, dict]]:
    if not path.exists():
        raise DatasetError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in columns if c not in header]
        if missing:
            raise DatasetError(f"{path.name}: missing column(s) {', '.join(missing)}")
        # row 1 is the header
        return [(i, row) for i, row in enumerate(reader, start=2)]


def _number(row: dict, column: str, rowno: int, fname: str) -> float:
    raw = row.get(column)
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise DatasetError(f"{fname} row {rowno}: non-numeric value {raw!r} in column {column}") from None
    if not math.isfinite(value):
        raise DatasetError(f"{fname} row {rowno}: non-finite value in column {column}")
    return value


def load_csv(path, records_path=None) -> tuple[list[PileSoilCase], list[PYRecord]]:
    """Read ``cases.csv`` and ``py_records.csv``.

    ``path`` may be a directory holding both files, or the cases file itself
    (records are then looked up next to it unless ``records_path`` is given).
    Every problem is reported with its file and row number.
    """
    cases_path, rec_path = _resolve_paths(path, records_path)
    cases: list[PileSoilCase] = []
    seen: set[str] = set()
    for rowno, row in _read_rows(cases_path, CASE_COLUMNS):
        num = {c: _number(row, c, rowno, cases_path.name) for c in CASE_COLUMNS[2:]}
        case_id = (row["case_id"] or "").strip()
        if not case_id:
            raise DatasetError(f"{cases_path.name} row {rowno}: empty case_id")
        if case_id in seen:
            raise DatasetError(f"{cases_path.name} row {rowno}: duplicate case_id {case_id!r}")
        try:
            case = PileSoilCase(
                case_id=case_id,
                source_id=(row["source_id"] or "").strip(),
                D_r=num["Dr"],
                phi_cr=num["phi_cr_deg"],
                gamma_eff=num["gamma_eff_kNm3"],
                gamma_w=num["gamma_w_kNm3"],
                D=num["D_m"],
                L_p=num["Lp_m"],
                E_p=num["Ep_kPa"],
                e=num["e_m"],
            )
        except DatasetError as exc:
            raise DatasetError(f"{cases_path.name} row {rowno}: {exc}") from None
        seen.add(case_id)
        cases.append(case)

    records: list[PYRecord] = []
    for rowno, row in _read_rows(rec_path, RECORD_COLUMNS):
        case_id = (row["case_id"] or "").strip()
        if case_id not in seen:
            raise DatasetError(f"{rec_path.name} row {rowno}: unknown case_id {case_id!r}")
        z, y, p = (_number(row, c, rowno, rec_path.name) for c in RECORD_COLUMNS[1:])
        for name, value, ok in (("z_m", z, z > 0), ("y_m", y, y >= 0), ("p_kNm", p, p >= 0)):
            if not ok:
                raise DatasetError(f"{rec_path.name} row {rowno}: invalid {name} = {value!r}")
        records.append(PYRecord(case_id, z, y, p))
    return cases, records


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def cases_csv_text(cases: Iterable[PileSoilCase]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CASE_COLUMNS)
    for c in cases:
        writer.writerow(
            [c.case_id, c.source_id] + [_fmt(float(v)) for v in (c.D_r, c.phi_cr, c.gamma_eff, c.gamma_w, c.D, c.L_p, c.E_p, c.e)]
        )
    return buf.getvalue()


def records_csv_text(records: Iterable[PYRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RECORD_COLUMNS)
    for r in records:
        writer.writerow([r.case_id, _fmt(float(r.z)), _fmt(float(r.y)), _fmt(float(r.p))])
    return buf.getvalue()


def write_csv(directory, cases: Sequence[PileSoilCase], records: Sequence[PYRecord]) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cases_path = directory / CASES_FILE
    rec_path = directory / RECORDS_FILE
    cases_path.write_text(cases_csv_text(cases))
    rec_path.write_text(records_csv_text(records))
    return cases_path, rec_path


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def stress_slenderness(gamma_eff: float, z: float, L_p: float, D: float) -> float:
    """sqrt(sigma'_v * L_p^2 / (p_a * A)) with sigma'_v = gamma' z and A = pi D^2 / 4."""
    area = math.pi * D**2 / 4.0
    return math.sqrt(gamma_eff * z * L_p**2 / (ATMOSPHERIC_PRESSURE * area))


def feature_vector(case: PileSoilCase, z: float, y: float) -> FeatureVector:
    if z <= 0.0:
        raise DatasetError(f"case {case.case_id!r}: depth must be > 0, got {z!r}")
    return FeatureVector(
        D_r=case.D_r,
        phi_cr=case.phi_cr,
        stress_slenderness=stress_slenderness(case.gamma_eff, z, case.L_p, case.D),
        z_over_D=z / case.D,
        y_over_D=y / case.D,
        gamma_ratio=case.gamma_ratio,
    )


def featurize(case: PileSoilCase, rec: PYRecord) -> Sample:
    if rec.case_id != case.case_id:
        raise DatasetError(f"record case_id {rec.case_id!r} does not match case {case.case_id!r}")
    features = feature_vector(case, rec.z, rec.y)
    target = rec.p / (case.gamma_eff * rec.z * case.D)
    return Sample(features=features, target=target, case_id=case.case_id)


def featurize_all(cases: Sequence[PileSoilCase], records: Sequence[PYRecord]) -> list[Sample]:
    by_id = {c.case_id: c for c in cases}
    out = []
    for rec in records:
        if rec.case_id not in by_id:
            raise DatasetError(f"unknown case_id {rec.case_id!r}")
        out.append(featurize(by_id[rec.case_id], rec))
    return out


def to_arrays(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples into an (n, 6) feature matrix and a target vector."""
    if not samples:
        return np.empty((0, len(FEATURE_NAMES))), np.empty(0)
    X = np.array([s.features.as_array() for s in samples])
    y = np.array([s.target for s in samples], dtype=float)
    return X, y


def pred_to_p(p_bar, case: PileSoilCase, z):
    """Re-dimensionalize p_bar back to kN/m."""
    return np.asarray(p_bar) * case.gamma_eff * np.asarray(z) * case.D


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------

SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
SPLIT_MODES = ("point", "curve")


def _partition_sizes(n: int) -> tuple[int, int]:
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    return n_train, n_val


def split(samples: Sequence[Sample], seed: int, mode: str = "point") -> DatasetSplit:
    """Seeded 70/15/15 partition.

    ``mode="point"`` shuffles individual samples; ``mode="curve"`` shuffles
    case ids so every curve lands in exactly one subset (fractions then
    refer to curve counts).
    """
    mode = {"point-wise": "point", "curve-wise": "curve"}.get(mode, mode)
    if mode not in SPLIT_MODES:
        raise DatasetError(f"unknown split mode {mode!r}")
    rng = np.random.default_rng(seed)
    samples = list(samples)
    if mode == "point":
        if len(samples) < 10:
            raise DatasetError(f"point-wise split needs >= 10 samples, got {len(samples)}")
        order = rng.permutation(len(samples))
        n_train, n_val = _partition_sizes(len(samples))
        parts = (order[:n_train], order[n_train : n_train + n_val], order[n_train + n_val :])
        train, val, test = (tuple(samples[i] for i in sorted(p)) for p in parts)
    else:
        ids = sorted({s.case_id for s in samples})
        if len(ids) < 10:
            raise DatasetError(f"curve-wise split needs >= 10 curves, got {len(ids)}")
        order = rng.permutation(len(ids))
        n_train, n_val = _partition_sizes(len(ids))
        groups = [
            {ids[i] for i in order[:n_train]},
            {ids[i] for i in order[n_train : n_train + n_val]},
        ]
        train = tuple(s for s in samples if s.case_id in groups[0])
        val = tuple(s for s in samples if s.case_id in groups[1])
        test = tuple(s for s in samples if s.case_id not in groups[0] and s.case_id not in groups[1])
    return DatasetSplit(train=train, validation=val, test=test, seed=seed, mode=mode)


def hold_out(samples: Sequence[Sample], case_ids: Iterable[str]) -> tuple[list[Sample], list[Sample]]:
    case_ids = list(case_ids)
    known = {s.case_id for s in samples}
    unknown = [c for c in case_ids if c not in known]
    if unknown:
        raise DatasetError(f"unknown case_id(s) for hold-out: {', '.join(unknown)}")
    excluded = set(case_ids)
    retained = [s for s in samples if s.case_id not in excluded]
    held = [s for s in samples if s.case_id in excluded]
    return retained, held


# ---------------------------------------------------------------------------
# Distribution summaries
# ---------------------------------------------------------------------------


def quantile(values, q: float) -> float:
    """Quantile by linear interpolation between order statistics."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise DatasetError("quantile of empty data")
    pos = q * (x.size - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, x.size - 1)
    frac = pos - lo
    return float(x[lo] + (x[hi] - x[lo]) * frac)


def silverman_bandwidth(x: np.ndarray) -> float:
    n = x.size
    sd = float(np.std(x, ddof=1))
    iqr = quantile(x, 0.75) - quantile(x, 0.25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * n ** (-0.2)


def kde_on_grid(x, grid_points: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian KDE of min-max normalized data on [0, 1].

    The density is truncated to the data range and renormalized so its
    trapezoid integral over the grid is one.  Constant data has no density.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return np.empty(0), np.empty(0)
    u = (x - lo) / (hi - lo)
    grid = np.linspace(0.0, 1.0, grid_points)
    bw = silverman_bandwidth(u)
    dens = np.zeros_like(grid)
    for chunk in np.array_split(u, max(1, u.size // 2048)):
        dens += np.exp(-0.5 * ((grid[:, None] - chunk[None, :]) / bw) ** 2).sum(axis=1)
    area = np.trapezoid(dens, grid)
    return grid, dens / area


def summarize_values(name: str, values) -> FeatureSummary:
    x = np.asarray(values, dtype=float)
    if x.size < 4:
        raise DatasetError(f"summary needs >= 4 samples, got {x.size}")
    q1, med, q3 = (quantile(x, q) for q in (0.25, 0.5, 0.75))
    lo, hi = float(x.min()), float(x.max())
    iqr = q3 - q1
    grid, dens = kde_on_grid(x)
    return FeatureSummary(
        name=name,
        min=lo,
        max=hi,
        q1=q1,
        median=med,
        q3=q3,
        whisker_low=max(lo, q1 - 1.5 * iqr),
        whisker_high=min(hi, q3 + 1.5 * iqr),
        kde_grid=tuple(float(g) for g in grid),
        kde_density=tuple(float(d) for d in dens),
    )


def summarize(samples: Sequence[Sample]) -> dict[str, FeatureSummary]:
    if len(samples) < 4:
        raise DatasetError(f"summary needs >= 4 samples, got {len(samples)}")
    X, y = to_arrays(samples)
    out = {name: summarize_values(name, X[:, j]) for j, name in enumerate(FEATURE_NAMES)}
    out[TARGET_NAME] = summarize_values(TARGET_NAME, y)
    return out


def summary_json(summaries: dict[str, FeatureSummary]) -> dict:
    return {name: s.to_dict() for name, s in summaries.items()}


# ---------------------------------------------------------------------------
# Synthetic databases
# ---------------------------------------------------------------------------


@dataclass
class GeneratorConfig:
    """Sampling ranges for synthetic cases; defaults follow the reference feature envelopes."""

    n_curves: int = 221
    points_per_curve: int = 12
    Dr: tuple[float, float] = (0.60, 1.00)
    phi_cr: tuple[float, float] = (28.50, 37.10)
    gamma_eff: tuple[float, float] = (8.0, 11.0)
    gamma_ratio: tuple[float, float] = (0.48, 0.60)
    dry_fraction: float = 0.3
    D: tuple[float, float] = (0.24, 8.00)
    Lp_over_D: tuple[float, float] = (5.17, 34.43)
    z_over_D: tuple[float, float] = (0.20, 6.13)
    stress_slenderness: tuple[float, float] = (2.50, 120.14)
    y_over_D_max: tuple[float, float] = (0.05, 0.43)
    y_over_D_min: float = 5e-4
    e_over_D: tuple[float, float] = (0.0, 2.0)
    E_p: float = 210e6
    noise_sigma: float = 0.05
    baseline: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise DatasetError(f"unknown generator option(s): {', '.join(sorted(unknown))}")
        for k, v in known.items():
            if isinstance(v, list):
                known[k] = tuple(v)
        return cls(**known)

    def validate(self) -> None:
        if self.n_curves < 1 or self.points_per_curve < 1:
            raise DatasetError("n_curves and points_per_curve must be >= 1")
        for name in ("Dr", "phi_cr", "gamma_eff", "gamma_ratio", "D", "Lp_over_D", "z_over_D",
                     "stress_slenderness", "y_over_D_max", "e_over_D"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise DatasetError(f"empty generator range for {name}: ({lo}, {hi})")
        if self.noise_sigma < 0:
            raise DatasetError("noise_sigma must be >= 0")
        if not 0.0 <= self.dry_fraction <= 1.0:
            raise DatasetError("dry_fraction must lie in [0, 1]")


def _y_grid(y_max_over_d: float, y_min_over_d: float, n: int) -> np.ndarray:
    if n == 1:
        return np.array([y_max_over_d])
    tail = np.geomspace(min(y_min_over_d, y_max_over_d), y_max_over_d, n - 1)
    return np.concatenate([[0.0], tail])


def generate_synthetic(config: GeneratorConfig | None = None, seed: int = 0):
    """Sample cases uniformly over the configured ranges and evaluate the baseline backbone.

    One p-y curve per case at a single depth; the depth range is narrowed
    per case so the stress-slenderness feature stays inside its envelope.
    Returns ``(cases, records)``.
    """
    from . import baseline

    config = config or GeneratorConfig()
    config.validate()
    params = baseline.ApiPyParams.from_dict(config.baseline)
    rng = np.random.default_rng(seed)
    cases: list[PileSoilCase] = []
    records: list[PYRecord] = []
    width = len(str(config.n_curves))
    attempts = 0
    while len(cases) < config.n_curves:
        attempts += 1
        if attempts > 100 * config.n_curves:
            raise DatasetError("generator ranges admit no valid case; widen the envelopes")
        D = rng.uniform(*config.D)
        lp_d = rng.uniform(*config.Lp_over_D)
        gamma_eff = rng.uniform(*config.gamma_eff)
        dry = rng.uniform() < config.dry_fraction
        ratio = 1.0 if dry else rng.uniform(*config.gamma_ratio)
        Dr = rng.uniform(*config.Dr)
        phi = rng.uniform(*config.phi_cr)
        e_d = rng.uniform(*config.e_over_D)
        zd_u = rng.uniform()
        yd_max = rng.uniform(*config.y_over_D_max)
        # stress_slenderness = sqrt(c * z/D)
        c = 4.0 * gamma_eff * D * lp_d**2 / (math.pi * ATMOSPHERIC_PRESSURE)
        s_lo, s_hi = config.stress_slenderness
        zd_lo = max(config.z_over_D[0], s_lo**2 / c)
        zd_hi = min(config.z_over_D[1], s_hi**2 / c, lp_d)
        if zd_lo > zd_hi:
            continue
        zd = zd_lo + zd_u * (zd_hi - zd_lo)
        gamma_w = 0.0 if dry else gamma_eff * (1.0 / ratio - 1.0)
        case = PileSoilCase(
            case_id=f"S{len(cases) + 1:0{width}d}",
            source_id="synthetic",
            D_r=float(Dr),
            phi_cr=float(phi),
            gamma_eff=float(gamma_eff),
            gamma_w=float(gamma_w),
            D=float(D),
            L_p=float(lp_d * D),
            E_p=float(config.E_p),
            e=float(e_d * D),
        )
        z = zd * D
        y_grid = _y_grid(yd_max, config.y_over_D_min, config.points_per_curve) * D
        curve = baseline.sample_curve(params, case, z, y_grid)
        if config.noise_sigma > 0:
            factors = rng.lognormal(0.0, config.noise_sigma, size=len(curve))
            curve = [PYRecord(r.case_id, r.z, r.y, r.p * float(f)) for r, f in zip(curve, factors)]
        cases.append(case)
        records.extend(curve)
    return cases, records


def dataset_fingerprint(cases: Sequence[PileSoilCase], records: Sequence[PYRecord]) -> str:
    import hashlib

    h = hashlib.sha256()
    h.update(cases_csv_text(cases).encode())
    h.update(records_csv_text(records).encode())
    return h.hexdigest()
