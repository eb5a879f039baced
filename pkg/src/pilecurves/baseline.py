"""API-style hyperbolic-tangent p-y backbone.

    p = A_c * p_u(z) * tanh(k_in * z * y / (A_c * p_u(z)))

Used as the synthetic-data oracle and as a reference spring model.  The
ultimate resistance coefficients are explicit inputs; the defaults are
placeholders for data generation and make no claim to design-code fidelity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import PileSoilCase, PYRecord

DEFAULT_K_IN = 15_000.0  # kN/m3, dense sand
DEFAULT_COEFFS = (3.0, 3.0, 30.0)
A_C_FLOOR = 0.9


class BaselineError(ValueError):
    pass


def static_loading_coefficient(z: float, D: float) -> float:
    """Conventional static coefficient max(3 - 0.8 z/D, 0.9)."""
    return max(3.0 - 0.8 * z / D, A_C_FLOOR)


@dataclass(frozen=True)
class ApiPyParams:
    """Backbone parameters.

    ``A_c=None`` selects :func:`static_loading_coefficient`.  In ``direct``
    mode p_u is linearly interpolated from ``p_u_table`` (pairs of depth and
    p_u); in ``computed`` mode it comes from :func:`ultimate_resistance`
    with ``coeffs`` and the case's soil/pile properties.
    """

    k_in: float = DEFAULT_K_IN
    A_c: Optional[float] = None
    p_u_mode: str = "computed"
    p_u_table: Optional[tuple[tuple[float, float], ...]] = None
    coeffs: tuple[float, float, float] = DEFAULT_COEFFS

    def __post_init__(self):
        if not self.k_in > 0:
            raise BaselineError("k_in must be > 0")
        if self.A_c is not None and self.A_c < A_C_FLOOR:
            raise BaselineError(f"A_c must be >= {A_C_FLOOR}")
        if self.p_u_mode not in ("direct", "computed"):
            raise BaselineError(f"unknown p_u_mode {self.p_u_mode!r}")
        if self.p_u_mode == "direct":
            if not self.p_u_table:
                raise BaselineError("direct p_u mode needs p_u_table")
            zs = [z for z, _ in self.p_u_table]
            if any(b <= a for a, b in zip(zs, zs[1:])):
                raise BaselineError("p_u_table depths must be strictly increasing")
            if any(pu <= 0 for _, pu in self.p_u_table):
                raise BaselineError("p_u values must be > 0")
        if any(c <= 0 for c in self.coeffs):
            raise BaselineError("p_u coefficients must be > 0")

    @classmethod
    def from_dict(cls, data: dict | None) -> "ApiPyParams":
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise BaselineError(f"unknown baseline option(s): {', '.join(sorted(unknown))}")
        if data.get("p_u_table") is not None:
            data["p_u_table"] = tuple((float(z), float(p)) for z, p in data["p_u_table"])
        if "coeffs" in data:
            data["coeffs"] = tuple(float(c) for c in data["coeffs"])
        return cls(**data)


def ultimate_resistance(z: float, phi_cr: float, gamma_eff: float, D: float,
                        coeffs: Sequence[float] = DEFAULT_COEFFS) -> float:
    """p_u = min(C1 z + C2 D, C3 D) * gamma' * z (shallow wedge vs deep flow).

    ``phi_cr`` is accepted for interface symmetry; its influence enters only
    through the caller's choice of coefficients.
    """
    c1, c2, c3 = coeffs
    if min(c1, c2, c3) <= 0:
        raise BaselineError("p_u coefficients must be > 0")
    if z <= 0 or phi_cr <= 0 or gamma_eff <= 0 or D <= 0:
        raise BaselineError("ultimate_resistance inputs must be positive")
    return min(c1 * z + c2 * D, c3 * D) * gamma_eff * z


def _p_u(z: float, params: ApiPyParams, case: PileSoilCase | None) -> float:
    if params.p_u_mode == "direct":
        zs = [t[0] for t in params.p_u_table]
        pus = [t[1] for t in params.p_u_table]
        if not zs[0] <= z <= zs[-1]:
            raise BaselineError(f"depth {z} outside p_u table range [{zs[0]}, {zs[-1]}]")
        return float(np.interp(z, zs, pus))
    if case is None:
        raise BaselineError("computed p_u mode needs a pile/soil case")
    return ultimate_resistance(z, case.phi_cr, case.gamma_eff, case.D, params.coeffs)


def _loading_coefficient(z: float, params: ApiPyParams, case: PileSoilCase | None) -> float:
    if params.A_c is not None:
        return params.A_c
    if case is None:
        raise BaselineError("the static loading coefficient needs the pile diameter (pass a case)")
    return static_loading_coefficient(z, case.D)


def api_p(y, z: float, params: ApiPyParams, case: PileSoilCase | None = None):
    """Soil resistance (kN/m) at deflection ``y`` (scalar or array, m) and depth ``z``."""
    if z <= 0:
        raise BaselineError("depth must be > 0")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise BaselineError("deflection must be >= 0")
    pmax = _loading_coefficient(z, params, case) * _p_u(z, params, case)
    p = pmax * np.tanh(params.k_in * z * y_arr / pmax)
    return float(p) if p.ndim == 0 else p


def api_tangent(y, z: float, params: ApiPyParams, case: PileSoilCase | None = None):
    """dp/dy of the backbone."""
    y_arr = np.asarray(y, dtype=float)
    pmax = _loading_coefficient(z, params, case) * _p_u(z, params, case)
    k = params.k_in * z
    return k / np.cosh(k * y_arr / pmax) ** 2


def sample_curve(params: ApiPyParams, case: PileSoilCase, z: float, y_grid) -> list[PYRecord]:
    y_grid = np.asarray(y_grid, dtype=float)
    if np.any(y_grid < 0) or np.any(np.diff(y_grid) < 0):
        raise BaselineError("y_grid must be non-negative and sorted ascending")
    p = np.atleast_1d(api_p(y_grid, z, params, case))
    return [PYRecord(case.case_id, float(z), float(yv), float(pv)) for yv, pv in zip(y_grid, p)]


def ultimate_capacity(z: float, params: ApiPyParams, case: PileSoilCase | None = None) -> float:
    """Asymptote A_c * p_u of the backbone at depth ``z``."""
    return _loading_coefficient(z, params, case) * _p_u(z, params, case)


def initial_slope(z: float, params: ApiPyParams) -> float:
    return params.k_in * z


__all__ = [
    "ApiPyParams",
    "BaselineError",
    "api_p",
    "api_tangent",
    "initial_slope",
    "sample_curve",
    "static_loading_coefficient",
    "ultimate_capacity",
    "ultimate_resistance",
]
