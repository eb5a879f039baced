from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilecurves import dataset
from pilecurves.dataset import DatasetError, PYRecord

from conftest import make_case


def _write(tmp_path, cases_text, records_text):
    (tmp_path / "cases.csv").write_text(cases_text)
    (tmp_path / "py_records.csv").write_text(records_text)
    return tmp_path


HEADER = "case_id,source_id,Dr,phi_cr_deg,gamma_eff_kNm3,gamma_w_kNm3,D_m,Lp_m,Ep_kPa,e_m\n"
REC_HEADER = "case_id,z_m,y_m,p_kNm\n"


def test_two_case_file_loads(tmp_path):
    cases = HEADER + "A,s1,0.68,35,8.2,7.9,2.75,31.25,210000000,5.0\nB,s2,0.9,33,10,0,1,10,2e8,0\n"
    recs = REC_HEADER + "A,1.0,0.0,0.0\nA,1.0,0.01,20.0\nB,2.0,0.005,11.0\n"
    loaded, records = dataset.load_csv(_write(tmp_path, cases, recs))
    assert [c.case_id for c in loaded] == ["A", "B"]
    assert len(records) == 3


def test_qi_like_case_parses_exact_values(tmp_path):
    # gamma_w chosen so gamma'/(gamma_w + gamma') = 0.51
    gamma_eff = 10.2
    gamma_w = gamma_eff / 0.51 - gamma_eff
    cases = HEADER + f"Q,qi,0.68,35,{gamma_eff!r},{gamma_w!r},2.75,31.25,210000000,0\n"
    loaded, _ = dataset.load_csv(_write(tmp_path, cases, REC_HEADER))
    c = loaded[0]
    assert c.D == 2.75 and c.phi_cr == 35.0
    assert c.gamma_ratio == pytest.approx(0.51, abs=1e-12)


def test_negative_y_reports_row_and_field(tmp_path):
    cases = HEADER + "A,s,0.7,35,9,0,2,20,2e8,0\n"
    recs = REC_HEADER + "A,1.0,0.0,0.0\nA,1.0,-0.1,5.0\n"
    with pytest.raises(DatasetError, match=r"row 3.*y_m"):
        dataset.load_csv(_write(tmp_path, cases, recs))


@pytest.mark.parametrize(
    "cases,recs,pattern",
    [
        (HEADER.replace(",e_m", "") + "A,s,0.7,35,9,0,2,20,2e8\n", REC_HEADER, "e_m"),
        (HEADER + "A,s,0.7,abc,9,0,2,20,2e8,0\n", REC_HEADER, r"row 2.*phi_cr_deg"),
        (HEADER + "A,s,0.7,35,9,0,2,20,2e8,0\n", REC_HEADER + "Z,1,0,0\n", "unknown case_id"),
        (HEADER + "A,s,1.5,35,9,0,2,20,2e8,0\n", REC_HEADER, r"row 2.*Dr"),
    ],
)
def test_malformed_inputs(tmp_path, cases, recs, pattern):
    with pytest.raises(DatasetError, match=pattern):
        dataset.load_csv(_write(tmp_path, cases, recs))


def test_csv_round_trip(tmp_path, small_data):
    cases, records = small_data
    dataset.write_csv(tmp_path, cases, records)
    c2, r2 = dataset.load_csv(tmp_path)
    assert c2 == list(cases) and r2 == list(records)


def test_feature_examples():
    case = make_case(D=2.0, gamma_eff=10.0, L_p=20.0, gamma_w=0.0)
    s = dataset.featurize(case, PYRecord("C1", 5.0, 0.1, 100.0))
    assert s.features.stress_slenderness == pytest.approx(7.927, abs=5e-4)
    assert s.features.stress_slenderness == pytest.approx(math.sqrt(50 * 400 / (101.325 * math.pi)), rel=1e-14)
    assert s.target == pytest.approx(1.0, rel=1e-15)
    s4 = dataset.featurize(case, PYRecord("C1", 4.0, 0.0, 0.0))
    assert s4.features.z_over_D == 2.0


def test_featurize_rejects_mismatched_case():
    with pytest.raises(DatasetError):
        dataset.featurize(make_case(), PYRecord("other", 1.0, 0.0, 0.0))


def test_zero_depth_record_rejected():
    with pytest.raises(DatasetError):
        PYRecord("C1", 0.0, 0.0, 0.0)


@settings(max_examples=60, deadline=None)
@given(scale=st.floats(0.1, 10.0), z=st.floats(0.5, 10), y=st.floats(0, 1), p=st.floats(0, 500))
def test_featurize_scale_consistency(scale, z, y, p):
    c1 = make_case(D=2.0, L_p=20.0)
    c2 = make_case(D=2.0 * scale, L_p=20.0 * scale)
    s1 = dataset.featurize(c1, PYRecord("C1", z, y, p))
    s2 = dataset.featurize(c2, PYRecord("C1", z * scale, y * scale, p * scale**2))
    a1, a2 = s1.features.as_array(), s2.features.as_array()
    assert a2[3] == pytest.approx(a1[3], rel=1e-12)
    assert a2[4] == pytest.approx(a1[4], rel=1e-12, abs=1e-15)
    assert s2.target == pytest.approx(s1.target, rel=1e-12, abs=1e-15)
    # f3 scales with sqrt(scale)
    assert a2[2] == pytest.approx(a1[2] * math.sqrt(scale), rel=1e-12)


def _toy_samples(n, n_curves=None):
    n_curves = n_curves or n
    case = make_case()
    out = []
    for i in range(n):
        s = dataset.featurize(case, PYRecord("C1", 1.0 + i, 0.01, 1.0))
        out.append(dataset.Sample(s.features, s.target, f"K{i % n_curves:03d}"))
    return out


def test_point_split_sizes_and_determinism():
    samples = _toy_samples(100)
    a = dataset.split(samples, seed=7)
    b = dataset.split(samples, seed=7)
    assert (len(a.train), len(a.validation), len(a.test)) == (70, 15, 15)
    assert a == b


def test_curve_split_keeps_curves_together():
    samples = _toy_samples(200, n_curves=20)
    sp = dataset.split(samples, seed=1, mode="curve")
    sets = [{s.case_id for s in part} for part in (sp.train, sp.validation, sp.test)]
    assert not (sets[0] & sets[1]) and not (sets[0] & sets[2]) and not (sets[1] & sets[2])
    assert len(sets[0] | sets[1] | sets[2]) == 20


def test_split_too_small():
    with pytest.raises(DatasetError):
        dataset.split(_toy_samples(9), seed=0)
    with pytest.raises(DatasetError):
        dataset.split(_toy_samples(50, n_curves=9), seed=0, mode="curve")


def test_hold_out_examples():
    samples = _toy_samples(60, n_curves=20)
    retained, held = dataset.hold_out(samples, ["K000", "K001", "K002"])
    assert len({s.case_id for s in retained}) == 17
    assert {s.case_id for s in held} == {"K000", "K001", "K002"}
    assert dataset.hold_out(samples, [])[0] == samples
    everything = sorted({s.case_id for s in samples})
    retained, _ = dataset.hold_out(samples, everything)
    assert retained == []
    with pytest.raises(DatasetError):
        dataset.hold_out(samples, ["nope"])


def test_quartile_example():
    s = dataset.summarize_values("v", [1, 2, 3, 4])
    assert (s.median, s.q1, s.q3) == (2.5, 1.75, 3.25)


def test_constant_feature_summary():
    s = dataset.summarize_values("v", [3.0] * 10)
    assert s.min == s.max == s.q1 == s.q3 == 3.0
    assert s.kde_density == ()


def test_summary_needs_four_samples():
    with pytest.raises(DatasetError):
        dataset.summarize_values("v", [1, 2, 3])


def test_summary_invariants_and_kde(small_samples):
    summaries = dataset.summarize(small_samples)
    for s in summaries.values():
        assert s.min <= s.q1 <= s.median <= s.q3 <= s.max
        assert s.whisker_low >= s.min and s.whisker_high <= s.max
        dens = np.array(s.kde_density)
        assert np.all(dens >= 0)
        assert 0.999 <= np.trapezoid(dens, s.kde_grid) <= 1.001
        assert len(s.kde_grid) == 200


def test_y_over_d_envelope_on_spanning_data():
    cfg = dataset.GeneratorConfig(n_curves=40, y_over_D_max=(0.43, 0.43), noise_sigma=0.0)
    samples = dataset.featurize_all(*dataset.generate_synthetic(cfg, seed=0))
    s = dataset.summarize(samples)["y_over_D"]
    assert round(s.min, 2) == 0.00 and round(s.max, 2) == 0.43


def test_generated_features_inside_envelopes():
    samples = dataset.featurize_all(*dataset.generate_synthetic(dataset.GeneratorConfig(n_curves=100), seed=1))
    s = dataset.summarize(samples)
    for name, (lo, hi) in dataset.TABLE1_ENVELOPES.items():
        if name in s:
            assert lo - 1e-9 <= s[name].min and s[name].max <= hi + 1e-9, name


def test_noise_free_records_on_baseline():
    from pilecurves import baseline

    cfg = dataset.GeneratorConfig(n_curves=1, noise_sigma=0.0)
    cases, records = dataset.generate_synthetic(cfg, seed=5)
    params = baseline.ApiPyParams()
    for r in records:
        assert r.p == baseline.api_p(r.y, r.z, params, cases[0])


def test_generator_size_and_determinism():
    cases, records = dataset.generate_synthetic(seed=11)
    assert len(cases) == 221 and len(records) == 221 * 12
    again = dataset.generate_synthetic(seed=11)
    assert dataset.cases_csv_text(cases) == dataset.cases_csv_text(again[0])
    assert dataset.records_csv_text(records) == dataset.records_csv_text(again[1])


@pytest.mark.parametrize("kw", [dict(noise_sigma=-0.1), dict(Dr=(0.9, 0.5))])
def test_generator_rejects_bad_config(kw):
    with pytest.raises(DatasetError):
        dataset.generate_synthetic(dataset.GeneratorConfig(**kw))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0, 1))
def test_quantile_matches_numpy_linear(values, q):
    assert dataset.quantile(values, q) == pytest.approx(np.quantile(values, q, method="linear"), rel=1e-12, abs=1e-9)
