"""Laterally loaded pile on nonlinear Winkler springs.

Solves ``EI y'''' + p(z, y) = 0`` on the embedded length with central
finite differences.  Ghost nodes carry the boundary conditions: mudline
moment ``EI y'' = H e`` and shear ``EI y''' = H``; the tip is free
(``y'' = y''' = 0``).  The nonlinear system is solved by Newton iteration
under uniform load stepping.

Sign convention: ``p`` is the spring resistance, positive when it opposes
positive deflection; moments are ``M = EI y''``.  With this convention the
soil reaction acting on the pile is ``d2M/dz2 = -p``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import LinAlgError, solve_banded
from scipy.optimize import isotonic_regression

from .dataset import TABLE1_ENVELOPES, PileSoilCase, feature_vector

log = logging.getLogger(__name__)

MAX_NEWTON = 100
REL_TOL = 1e-8
STEP_TOL = 1e-10  # m
TANGENT_FLOOR = 1e-6


class SolverError(RuntimeError):
    def __init__(self, message: str, residual_history: Sequence[float] = ()):
        super().__init__(message)
        self.residual_history = list(residual_history)


class SingularSystemError(SolverError):
    pass


@dataclass(frozen=True)
class PileModel:
    L_p: float
    D: float
    EI: float
    e: float = 0.0
    n_nodes: int = 201

    def __post_init__(self):
        if not self.EI > 0:
            raise ValueError("EI must be > 0")
        if not (self.L_p > 0 and self.D > 0 and self.e >= 0):
            raise ValueError("L_p and D must be > 0, e >= 0")
        if self.n_nodes < 21 or self.n_nodes % 2 == 0:
            raise ValueError("n_nodes must be odd and >= 21")

    @classmethod
    def from_case(cls, case: PileSoilCase, EI: float | None = None, wall_thickness: float | None = None,
                  n_nodes: int = 201) -> "PileModel":
        """Pile for a database case; EI from E_p and a solid (or tubular) circular section."""
        if EI is None:
            r_out = case.D / 2
            r_in = 0.0 if wall_thickness is None else max(r_out - wall_thickness, 0.0)
            EI = case.E_p * math.pi * (r_out**4 - r_in**4) / 4.0
        return cls(L_p=case.L_p, D=case.D, EI=EI, e=case.e, n_nodes=n_nodes)

    @property
    def radius(self) -> float:
        return self.D / 2

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.L_p, self.n_nodes)


@dataclass(frozen=True)
class LoadCase:
    H: float

    def __post_init__(self):
        if not math.isfinite(self.H):
            raise ValueError("H must be finite")


@dataclass
class SpringField:
    """p-y springs on a depth grid sharing one deflection grid.

    ``p[j, k]`` is the resistance at depth ``z[j]`` and deflection ``y[k]``;
    ``y[0] == 0`` and ``p[:, 0] == 0``.  Between depths the springs are
    interpolated linearly; negative deflections mirror the curve.
    """

    z: np.ndarray
    y: np.ndarray
    p: np.ndarray
    repairs: int = 0
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if self.p.shape != (self.z.size, self.y.size):
            raise ValueError(f"p has shape {self.p.shape}, expected {(self.z.size, self.y.size)}")
        if self.y.size < 2 or self.y[0] != 0.0 or np.any(np.diff(self.y) <= 0):
            raise ValueError("deflection knots must start at 0 and increase strictly")
        if self.z.size < 1 or np.any(np.diff(self.z) <= 0):
            raise ValueError("depth grid must increase strictly")
        if np.any(self.p[:, 0] != 0.0):
            raise ValueError("springs must give p(0) = 0")
        if np.any(np.diff(self.p, axis=1) < 0):
            raise ValueError("springs must be non-decreasing in y")

    @classmethod
    def from_curves(cls, z, curves: Sequence[tuple[Sequence[float], Sequence[float]]]) -> "SpringField":
        """Build from per-depth knot lists by merging them onto the union deflection grid."""
        grid = np.unique(np.concatenate([[0.0]] + [np.asarray(yk, dtype=float) for yk, _ in curves]))
        P = np.array([np.interp(grid, np.asarray(yk, float), np.asarray(pk, float)) for yk, pk in curves])
        return cls(np.asarray(z, dtype=float), grid, P)

    @classmethod
    def linear(cls, k: float, L_p: float, y_max: float = 10.0) -> "SpringField":
        """Uniform linear springs p = k y (k in kN/m per m)."""
        y = np.array([0.0, y_max])
        return cls(np.array([0.0, L_p]), y, np.array([[0.0, k * y_max], [0.0, k * y_max]]))

    def covers(self, L_p: float) -> bool:
        tol = 1e-9 * max(L_p, 1.0)
        return self.z[0] <= tol and self.z[-1] >= L_p - tol

    def node_springs(self, z_nodes: np.ndarray) -> np.ndarray:
        """Springs interpolated to the given depths, shape (len(z_nodes), len(y))."""
        z_nodes = np.asarray(z_nodes, dtype=float)
        if self.z.size == 1:
            return np.repeat(self.p, z_nodes.size, axis=0)
        j = np.clip(np.searchsorted(self.z, z_nodes, side="right") - 1, 0, self.z.size - 2)
        t = np.clip((z_nodes - self.z[j]) / (self.z[j + 1] - self.z[j]), 0.0, 1.0)
        return (1.0 - t)[:, None] * self.p[j] + t[:, None] * self.p[j + 1]


class _NodeSprings:
    """Vectorized evaluation of one piecewise-linear spring per node."""

    def __init__(self, y_knots: np.ndarray, P: np.ndarray):
        self.y = y_knots
        self.P = P
        dy = np.diff(y_knots)
        self.slopes = np.diff(P, axis=1) / dy[None, :]
        pmax = float(np.max(P)) if P.size else 0.0
        self.floor = TANGENT_FLOOR * pmax / float(y_knots[-1]) if pmax > 0 else 0.0
        self.rows = np.arange(P.shape[0])

    def __call__(self, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = np.abs(y)
        k = np.clip(np.searchsorted(self.y, a, side="right") - 1, 0, self.y.size - 2)
        beyond = a >= self.y[-1]
        slope = self.slopes[self.rows, k]
        p_abs = np.where(beyond, self.P[:, -1], self.P[self.rows, k] + slope * (a - self.y[k]))
        tangent = np.where(beyond, 0.0, slope)
        tangent = np.maximum(tangent, self.floor)
        return np.sign(y) * p_abs, tangent


@dataclass
class BeamSolution:
    z: np.ndarray
    y: np.ndarray
    rotation: np.ndarray
    moment: np.ndarray
    shear: np.ndarray
    p: np.ndarray
    H: float
    e: float
    EI: float
    converged: bool
    residual_norm: float
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)

    @property
    def head_deflection(self) -> float:
        return float(self.y[0])

    @property
    def h(self) -> float:
        return float(self.z[1] - self.z[0])

    def tributary(self) -> np.ndarray:
        w = np.full(self.z.size, self.h)
        w[0] = w[-1] = self.h / 2
        return w

    def force_balance_error(self) -> float:
        """|sum(p dz) - H| / |H| with trapezoid weights."""
        total = float(np.sum(self.p * self.tributary()))
        return abs(total - self.H) / abs(self.H) if self.H else abs(total)

    def moment_balance_error(self) -> float:
        """Moment of the spring forces about the mudline against the applied H e.

        The applied load sits at height e above the mudline, so equilibrium
        is ``sum(p z dz) = -H e``; the error is scaled by the larger of |H e|
        and the absolute soil moment.
        """
        w = self.tributary()
        soil = float(np.sum(self.p * self.z * w))
        scale = max(abs(self.H * self.e), float(np.sum(np.abs(self.p) * self.z * w)))
        return abs(soil + self.H * self.e) / scale if scale else 0.0

    def to_rows(self) -> list[tuple]:
        return list(zip(self.z, self.y, self.rotation, self.moment, self.shear, self.p))

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["z_m", "y_m", "rotation_rad", "M_kNm", "V_kN", "p_kNm"])
            for row in self.to_rows():
                w.writerow([repr(float(v)) for v in row])
        return path


def _banded_stiffness(n: int, h: float, EI: float) -> np.ndarray:
    """Fourth-difference operator (times EI/h^4) with the ghost nodes eliminated, in banded storage."""
    A = np.zeros((n, n))
    for i in range(2, n - 2):
        A[i, i - 2 : i + 3] = [1.0, -4.0, 6.0, -4.0, 1.0]
    # head: y[-1] = 2y0 - y1 + a, y[-2] = 4y0 - 4y1 + y2 + 2a - b
    A[0, 0:3] = [2.0, -4.0, 2.0]
    A[1, 0:4] = [-2.0, 5.0, -4.0, 1.0]
    # free tip, mirrored
    A[n - 1, n - 3 : n] = [2.0, -4.0, 2.0]
    A[n - 2, n - 4 : n] = [1.0, -4.0, 5.0, -2.0]
    A *= EI / h**4
    ab = np.zeros((5, n))
    for d in range(-2, 3):
        diag = np.diagonal(A, offset=d)
        if d >= 0:
            ab[2 - d, d:] = diag
        else:
            ab[2 - d, : n + d] = diag
    return ab


def _banded_matvec(ab: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = y.size
    out = ab[2] * y
    out[:-1] += ab[1, 1:] * y[1:]
    out[:-2] += ab[0, 2:] * y[2:]
    out[1:] += ab[3, :-1] * y[:-1]
    out[2:] += ab[4, :-2] * y[:-2]
    return out


def _load_vector(n: int, h: float, H: float, M0: float) -> np.ndarray:
    f = np.zeros(n)
    f[0] = 2.0 * H / h + 2.0 * M0 / h**2
    f[1] = -M0 / h**2
    return f


def _post_process(pile: PileModel, y: np.ndarray, springs: _NodeSprings, H: float, converged: bool,
                  res: float, iters: int, history: list[float]) -> BeamSolution:
    z = pile.z
    h = z[1] - z[0]
    p, _ = springs(y)
    moment = pile.EI * _second_derivative(y, h)
    return BeamSolution(
        z=z,
        y=y,
        rotation=np.gradient(y, h, edge_order=2),
        moment=moment,
        shear=np.gradient(moment, h, edge_order=2),
        p=p,
        H=H,
        e=pile.e,
        EI=pile.EI,
        converged=converged,
        residual_norm=res,
        iterations=iters,
        residual_history=history,
    )


def _second_derivative(y: np.ndarray, h: float) -> np.ndarray:
    d2 = np.empty_like(y)
    d2[1:-1] = (y[2:] - 2 * y[1:-1] + y[:-2]) / h**2
    # one-sided five-point stencils (third-order error) at the ends
    c = np.array([35.0, -104.0, 114.0, -56.0, 11.0]) / 12.0
    d2[0] = np.dot(c, y[:5]) / h**2
    d2[-1] = np.dot(c, y[::-1][:5]) / h**2
    return d2


def _newton(ab, springs, f, y, history):
    """Solve K y + p(y) = f from ``y``; returns (y, residual, iterations, converged)."""
    fnorm = float(np.linalg.norm(f))
    iters = 0
    for iters in range(1, MAX_NEWTON + 1):
        p, kt = springs(y)
        R = _banded_matvec(ab, y) + p - f
        rnorm = float(np.linalg.norm(R))
        history.append(rnorm / fnorm)
        if rnorm <= REL_TOL * fnorm:
            return y, rnorm / fnorm, iters - 1, True
        J = ab.copy()
        J[2] += kt
        try:
            dy = solve_banded((2, 2), J, -R)
        except (LinAlgError, ValueError) as exc:
            raise SingularSystemError(f"singular tangent matrix: {exc}", history) from None
        if not np.all(np.isfinite(dy)):
            raise SingularSystemError("singular tangent matrix (non-finite update)", history)
        # backtracking keeps piecewise-linear springs from cycling
        step = 1.0
        for _ in range(30):
            y_new = y + step * dy
            p_new, _ = springs(y_new)
            r_new = float(np.linalg.norm(_banded_matvec(ab, y_new) + p_new - f))
            if r_new < rnorm or step < 1e-6:
                break
            step *= 0.5
        y = y_new
        if float(np.max(np.abs(step * dy))) <= STEP_TOL and r_new <= 1e3 * REL_TOL * fnorm:
            history.append(r_new / fnorm)
            return y, r_new / fnorm, iters, True
    p, _ = springs(y)
    res = float(np.linalg.norm(_banded_matvec(ab, y) + p - f)) / fnorm
    return y, res, iters, res <= REL_TOL


def solve(pile: PileModel, springs: SpringField, load: LoadCase | float, n_steps: int = 20,
          y_start: Optional[np.ndarray] = None, H_start: float = 0.0) -> BeamSolution:
    """Deflection, moment, shear and reaction profiles under head load ``load``.

    The load is ramped from ``H_start`` (with initial guess ``y_start``) in
    ``n_steps`` uniform increments, each converged by Newton iteration.
    """
    H = load.H if isinstance(load, LoadCase) else float(load)
    if not springs.covers(pile.L_p):
        raise SolverError(f"springs cover [{springs.z[0]}, {springs.z[-1]}] m, pile needs [0, {pile.L_p}] m")
    z = pile.z
    n = z.size
    h = z[1] - z[0]
    node = _NodeSprings(springs.y, springs.node_springs(z))
    if not np.any(node.P[:, -1] > 0):
        raise SingularSystemError("all springs are zero: a free pile has rigid-body modes")
    ab = _banded_stiffness(n, h, pile.EI)
    y = np.zeros(n) if y_start is None else np.asarray(y_start, dtype=float).copy()
    history: list[float] = []
    if H == 0.0 and H_start == 0.0:
        return _post_process(pile, np.zeros(n), node, 0.0, True, 0.0, 0, history)
    total_iters = 0
    res = 0.0
    for s in range(1, n_steps + 1):
        Hs = H_start + (H - H_start) * s / n_steps
        if Hs == 0.0:
            y = np.zeros(n)
            continue
        f = _load_vector(n, h, Hs, Hs * pile.e)
        y, res, iters, ok = _newton(ab, node, f, y, history)
        total_iters += iters
        if not ok:
            raise SolverError(
                f"Newton iteration did not converge at load step {s}/{n_steps} (H = {Hs:g} kN), "
                f"relative residual {res:.3g}",
                history,
            )
    return _post_process(pile, y, node, H, True, res, total_iters, history)


@dataclass
class SweepResult:
    H: list[float]
    y_head: list[float]
    solutions: list[BeamSolution]
    failure: Optional[str] = None

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["H_kN", "y_head_m"])
            for H, yh in zip(self.H, self.y_head):
                w.writerow([repr(float(H)), repr(float(yh))])
        return path


def head_sweep(pile: PileModel, springs: SpringField, H_values: Sequence[float], n_steps: int = 20) -> SweepResult:
    """Force-displacement curve; each load continues from the previous solution."""
    H_values = [float(h) for h in H_values]
    if any(b < a for a, b in zip(H_values, H_values[1:])):
        raise ValueError("H_values must be sorted ascending")
    out = SweepResult(H=[], y_head=[], solutions=[])
    y_prev, H_prev = None, 0.0
    for H in H_values:
        try:
            sol = solve(pile, springs, H, n_steps=n_steps, y_start=y_prev, H_start=H_prev)
        except SolverError as exc:
            out.failure = f"H = {H:g} kN: {exc}"
            log.warning("head sweep stopped: %s", out.failure)
            break
        out.H.append(H)
        out.y_head.append(sol.head_deflection)
        out.solutions.append(sol)
        y_prev, H_prev = sol.y, H
    return out


def moment_profile(solution: BeamSolution) -> list[tuple[float, float]]:
    return [(float(z), float(m)) for z, m in zip(solution.z, solution.moment)]


def differentiate_moment(profile: Sequence[tuple[float, float]]) -> list[tuple[float, float]]:
    """Second derivative of a moment-depth profile, endpoints dropped.

    Non-uniform depths are first resampled to a uniform grid of the same
    size with a cubic spline.
    """
    arr = np.asarray(profile, dtype=float)
    if arr.ndim != 2 or arr.shape[0] < 5:
        raise ValueError("need at least 5 (z, M) points")
    z, M = arr[:, 0], arr[:, 1]
    if np.any(np.diff(z) <= 0):
        raise ValueError("depths must increase strictly")
    h = np.diff(z)
    if not np.allclose(h, h[0], rtol=1e-9, atol=0.0):
        zu = np.linspace(z[0], z[-1], z.size)
        M = CubicSpline(z, M)(zu)
        z = zu
    step = z[1] - z[0]
    d2 = (M[2:] - 2.0 * M[1:-1] + M[:-2]) / step**2
    return [(float(zz), float(v)) for zz, v in zip(z[1:-1], d2)]


# ---------------------------------------------------------------------------
# spring fields from the baseline backbone or a trained model
# ---------------------------------------------------------------------------


def default_grids(case: PileSoilCase, n_depths: int = 41, n_y: int = 40, y_max_over_d: float = 0.5):
    z_grid = np.linspace(0.0, case.L_p, n_depths)
    y_grid = np.concatenate([[0.0], np.geomspace(1e-4, y_max_over_d, n_y - 1)]) * case.D
    return z_grid, y_grid


def _repair(p_row: np.ndarray) -> tuple[np.ndarray, int]:
    fixed = np.maximum(p_row, 0.0)
    fixed[0] = 0.0
    if np.all(np.diff(fixed) >= 0):
        return fixed, 0
    iso = isotonic_regression(fixed, increasing=True).x
    iso = np.maximum(iso - iso[0], 0.0)
    iso = np.maximum.accumulate(iso)
    return iso, int(np.sum(~np.isclose(iso, p_row)))


def build_spring_field(source, case: PileSoilCase, z_grid=None, y_grid=None, loess_config=None,
                       smooth: bool = True) -> SpringField:
    """Springs along the pile from ``source``.

    ``source`` is either an :class:`~pilecurves.baseline.ApiPyParams` (or the
    string ``"baseline"`` for default parameters) or a trained
    :class:`~pilecurves.gbt.TreeEnsemble`.  Model predictions are
    re-dimensionalized with ``p = p_bar * gamma' * z * D``, LOESS-smoothed
    along y and projected onto monotone curves.
    """
    from . import baseline, loess
    from .gbt import TreeEnsemble

    dz, dy = default_grids(case)
    z_grid = dz if z_grid is None else np.asarray(z_grid, dtype=float)
    y_grid = dy if y_grid is None else np.asarray(y_grid, dtype=float)
    if np.any(np.diff(z_grid) <= 0) or np.any(np.diff(y_grid) <= 0):
        raise ValueError("grids must be sorted ascending")
    if y_grid[0] != 0.0:
        y_grid = np.concatenate([[0.0], y_grid])
    P = np.zeros((z_grid.size, y_grid.size))
    warnings: list[str] = []
    repairs = 0

    if isinstance(source, str):
        if source != "baseline":
            raise ValueError(f"unknown spring source {source!r}")
        source = baseline.ApiPyParams()
    if isinstance(source, baseline.ApiPyParams):
        for j, z in enumerate(z_grid):
            if z > 0:
                P[j] = baseline.api_p(y_grid, z, source, case)
    elif isinstance(source, TreeEnsemble):
        zd_lo, zd_hi = TABLE1_ENVELOPES["z_over_D"]
        yd_hi = TABLE1_ENVELOPES["y_over_D"][1]
        out_z = [z / case.D for z in z_grid if z > 0 and not zd_lo <= z / case.D <= zd_hi]
        if out_z:
            warnings.append(f"{len(out_z)} depth(s) with z/D outside the training envelope "
                            f"[{zd_lo}, {zd_hi}] (max z/D = {max(out_z):.2f})")
        if y_grid[-1] / case.D > yd_hi:
            warnings.append(f"y/D up to {y_grid[-1] / case.D:.3g} exceeds the training envelope max {yd_hi}")
        cfg = loess_config or loess.LoessConfig()
        for j, z in enumerate(z_grid):
            if z <= 0:
                continue
            X = np.array([feature_vector(case, z, yv).as_array() for yv in y_grid])
            p_bar = source.predict(X)
            if smooth:
                curve = loess.loess(np.column_stack([y_grid / case.D, p_bar]), cfg, query=y_grid / case.D)
                p_bar = np.array([v for _, v in curve])
            row, changed = _repair(p_bar * case.gamma_eff * z * case.D)
            repairs += changed
            P[j] = row
            if not np.any(row > 0):
                warnings.append(f"all-zero p-y curve at z = {z:g} m treated as a zero spring")
    else:
        raise TypeError(f"unsupported spring source {type(source).__name__}")

    if repairs:
        warnings.append(f"isotonic repair adjusted {repairs} knot(s)")
    for msg in warnings:
        log.warning(msg)
    return SpringField(z_grid, y_grid, P, repairs=repairs, warnings=warnings)


def strain_energy(solution: BeamSolution) -> float:
    """Bending plus spring energy for linear springs: 0.5 * int(EI y''^2 + p y) dz."""
    w = solution.tributary()
    curv = solution.moment / solution.EI
    return 0.5 * float(np.sum((solution.EI * curv**2 + solution.p * solution.y) * w))
