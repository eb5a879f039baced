from __future__ import annotations

import csv

import numpy as np
import pytest

from pilecurves import baseline, winkler
from pilecurves.gbt import Tree, TreeEnsemble
from pilecurves.winkler import PileModel, SpringField

from conftest import make_case

EI = 1.0e6
K = 1.0e4
L = 30.0
BETA = (K / (4 * EI)) ** 0.25


def elastic(n=201, e=0.0):
    return PileModel(L_p=L, D=1.0, EI=EI, e=e, n_nodes=n), SpringField.linear(K, L)


def nonlinear_case(e=5.0):
    case = make_case(D=2.75, L_p=31.25, gamma_eff=10.0, e=e)
    pile = PileModel.from_case(case)
    zg, yg = winkler.default_grids(case)
    return case, pile, winkler.build_spring_field("baseline", case, zg, yg)


def test_zero_load_exact_zero():
    pile, springs = elastic()
    sol = winkler.solve(pile, springs, 0.0)
    assert np.all(sol.y == 0) and np.all(sol.moment == 0)


def test_elastic_closed_form():
    pile, springs = elastic()
    assert BETA * L > 4
    sol = winkler.solve(pile, springs, 100.0)
    closed = 2 * 100.0 * BETA / K
    assert abs(sol.head_deflection - closed) / closed < 0.01


def test_mesh_convergence():
    y1 = winkler.solve(*elastic(201), 100.0).head_deflection
    y2 = winkler.solve(*elastic(401), 100.0).head_deflection
    assert abs(y2 - y1) / abs(y2) < 0.005


def test_energy_consistency():
    sol = winkler.solve(*elastic(), 100.0)
    work = 0.5 * 100.0 * sol.head_deflection
    assert abs(winkler.strain_energy(sol) - work) / work < 0.01


def test_load_negation_is_exact():
    _, pile, springs = nonlinear_case()
    a = winkler.solve(pile, springs, 3000.0)
    b = winkler.solve(pile, springs, -3000.0)
    np.testing.assert_array_equal(b.y, -a.y)
    np.testing.assert_array_equal(b.moment, -a.moment)


def test_equilibrium_on_converged_solves():
    _, pile, springs = nonlinear_case()
    sweep = winkler.head_sweep(pile, springs, np.linspace(0, 8000, 9))
    assert sweep.failure is None
    for sol in sweep.solutions[1:]:
        assert sol.converged
        assert sol.force_balance_error() < 0.005
        assert sol.moment_balance_error() < 0.01
        assert sol.residual_norm <= 1e-8


def test_boundary_moments():
    pile, springs = elastic(401, e=2.0)
    sol = winkler.solve(pile, springs, 100.0)
    assert sol.moment[0] == pytest.approx(100.0 * 2.0, rel=0.02)
    assert abs(sol.moment[-1]) < 1e-3 * np.max(np.abs(sol.moment))
    sol0 = winkler.solve(*elastic(401), 100.0)
    assert np.argmax(np.abs(sol0.moment)) > 0


def test_max_moment_depth_matches_fine_mesh():
    coarse = winkler.solve(*elastic(201), 100.0)
    fine = winkler.solve(*elastic(801), 100.0)
    z_c = coarse.z[np.argmax(np.abs(coarse.moment))]
    z_f = fine.z[np.argmax(np.abs(fine.moment))]
    assert z_c > 0 and abs(z_c - z_f) <= 2 * coarse.h


def test_sweep_examples():
    pile, springs = elastic()
    only = winkler.head_sweep(pile, springs, [0.0])
    assert list(zip(only.H, only.y_head)) == [(0.0, 0.0)]
    lin = winkler.head_sweep(pile, springs, [0.0, 50.0, 100.0, 200.0])
    ratios = np.array(lin.y_head[1:]) / np.array(lin.H[1:])
    assert np.ptp(ratios) / ratios.mean() < 0.001


def test_nonlinear_secant_non_increasing():
    _, pile, springs = nonlinear_case()
    sweep = winkler.head_sweep(pile, springs, np.linspace(0, 10000, 11))
    secant = np.array(sweep.H[1:]) / np.array(sweep.y_head[1:])
    assert np.all(np.diff(secant) <= 1e-9 * secant[0])


def test_load_step_path_independence():
    _, pile, springs = nonlinear_case()
    a = winkler.solve(pile, springs, 6000.0, n_steps=10)
    b = winkler.solve(pile, springs, 6000.0, n_steps=20)
    assert abs(a.head_deflection - b.head_deflection) / abs(b.head_deflection) < 0.001


def test_sweep_requires_sorted_loads():
    pile, springs = elastic()
    with pytest.raises(ValueError):
        winkler.head_sweep(pile, springs, [0.0, 10.0, 5.0])


def test_singular_springs():
    pile = PileModel(L_p=10.0, D=1.0, EI=EI)
    zero = SpringField(np.array([0.0, 10.0]), np.array([0.0, 1.0]), np.zeros((2, 2)))
    with pytest.raises(winkler.SingularSystemError):
        winkler.solve(pile, zero, 10.0)


def test_overload_reports_residual_history():
    pile = PileModel(L_p=10.0, D=1.0, EI=EI)
    weak = SpringField(np.array([0.0, 10.0]), np.array([0.0, 0.01]), np.array([[0.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(winkler.SolverError) as info:
        winkler.solve(pile, weak, 1e4)
    assert info.value.residual_history


def test_springs_must_cover_pile():
    pile = PileModel(L_p=10.0, D=1.0, EI=EI)
    with pytest.raises(winkler.SolverError):
        winkler.solve(pile, SpringField.linear(K, 5.0), 1.0)


def test_pile_model_validation():
    with pytest.raises(ValueError):
        PileModel(L_p=10, D=1, EI=EI, n_nodes=200)
    with pytest.raises(ValueError):
        PileModel(L_p=10, D=1, EI=-1.0)


def test_spring_field_validation():
    with pytest.raises(ValueError):
        SpringField(np.array([0.0]), np.array([0.0, 1.0]), np.array([[0.0, -1.0]]))
    with pytest.raises(ValueError):
        SpringField(np.array([0.0]), np.array([0.1, 1.0]), np.array([[0.0, 1.0]]))


def test_differentiate_moment_examples():
    z = np.linspace(0, 4, 21)
    d2 = winkler.differentiate_moment(list(zip(z, z**2)))
    assert len(d2) == 19
    np.testing.assert_allclose([v for _, v in d2], 2.0, atol=1e-9)
    lin = winkler.differentiate_moment(list(zip(z, 3 * z - 1)))
    np.testing.assert_allclose([v for _, v in lin], 0.0, atol=1e-9)
    zn = np.sort(np.concatenate([[0.0, 4.0], np.random.default_rng(0).uniform(0, 4, 30)]))
    nonuni = winkler.differentiate_moment(list(zip(zn, zn**2)))
    np.testing.assert_allclose([v for _, v in nonuni], 2.0, atol=1e-6)
    with pytest.raises(ValueError):
        winkler.differentiate_moment([(0, 0), (1, 1), (2, 4), (3, 9)])


def self_consistency_rms(sol) -> float:
    """RMS mismatch between the reaction and -d2M/dz2, relative to the RMS reaction (interior nodes)."""
    d2 = np.array([v for _, v in winkler.differentiate_moment(winkler.moment_profile(sol))])
    p = sol.p[1:-1]
    return float(np.sqrt(np.mean((-d2 - p) ** 2)) / np.sqrt(np.mean(p**2)))


def test_moment_differentiation_recovers_reaction():
    sol = winkler.solve(*elastic(801), 100.0)
    assert self_consistency_rms(sol) < 0.02
    case = make_case(D=2.75, L_p=31.25, e=5.0)
    pile = PileModel.from_case(case, n_nodes=801)
    springs = winkler.build_spring_field("baseline", case, *winkler.default_grids(case))
    assert self_consistency_rms(winkler.solve(pile, springs, 5000.0)) < 0.02


def test_baseline_spring_knots_exact():
    case, _, springs = nonlinear_case()
    params = baseline.ApiPyParams()
    for j in (5, 20, 40):
        np.testing.assert_array_equal(springs.p[j], baseline.api_p(springs.y, springs.z[j], params, case))
    assert springs.repairs == 0


def _monotone_yd_model():
    t = Tree(feature=np.array([4, -1, 4, -1, -1]), threshold=np.array([0.01, 0, 0.1, 0, 0]),
             left=np.array([1, -1, 3, -1, -1]), right=np.array([2, -1, 4, -1, -1]),
             value=np.array([0.0, 0.5, 0.0, 2.0, 4.0]))
    return TreeEnsemble(base_score=1.0, shrinkage=1.0, trees=[t], n_features=6,
                        feature_names=("Dr", "phi_cr", "stress_slenderness", "z_over_D", "y_over_D", "gamma_ratio"))


def test_monotone_model_needs_no_repair():
    case = make_case(D=2.0, L_p=10.0)
    zg, yg = winkler.default_grids(case, n_depths=11, y_max_over_d=0.43)
    springs = winkler.build_spring_field(_monotone_yd_model(), case, zg, yg, smooth=False)
    assert springs.repairs == 0


def test_out_of_envelope_depth_warns(caplog):
    case = make_case(D=1.0, L_p=20.0)
    zg, yg = winkler.default_grids(case, n_depths=11, y_max_over_d=0.43)
    with caplog.at_level("WARNING"):
        springs = winkler.build_spring_field(_monotone_yd_model(), case, zg, yg)
    assert any("outside the training envelope" in w for w in springs.warnings)
    assert "outside the training envelope" in caplog.text


def test_trained_model_springs_solve(small_model):
    case = make_case(D=2.0, L_p=12.0)
    pile = PileModel.from_case(case)
    springs = winkler.build_spring_field(small_model, case, *winkler.default_grids(case, y_max_over_d=0.43))
    assert np.all(np.diff(springs.p, axis=1) >= 0)
    sol = winkler.solve(pile, springs, 500.0)
    assert sol.force_balance_error() < 0.005


def test_solution_csv(tmp_path):
    sol = winkler.solve(*elastic(), 100.0)
    path = sol.write_csv(tmp_path / "s.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["z_m", "y_m", "rotation_rad", "M_kNm", "V_kN", "p_kNm"]
    assert len(rows) == 202
    sweep = winkler.head_sweep(*elastic(), [0.0, 10.0])
    assert sweep.write_csv(tmp_path / "w.csv").read_text().splitlines()[0] == "H_kN,y_head_m"


