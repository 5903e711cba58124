import json
import math

import pytest

from cvrelay.environment import UnphysicalEnvironmentError
from cvrelay.relay import relay_metrics
from cvrelay.environment import EnvironmentParams
from cvrelay.scan import (
    NOISE_COLUMNS,
    PLANE_COLUMNS,
    ConfigError,
    ScanConfig,
    antidiagonal_csv,
    env_check,
    eval_point,
    format_value,
    iter_flags,
    read_csv,
    read_json,
    scan_noise,
    scan_plane,
    sidecar_path,
    to_csv,
    to_json,
    write_result,
)

NEAR_EB = dict(tau=0.9, omega=19.38)


def plane(**kw):
    return ScanConfig(mode="scan-plane", **{**NEAR_EB, **kw})


def noise(**kw):
    return ScanConfig(mode="scan-noise", **{**dict(mu=52.0, c=1.0, c_prime=1.0), **kw})


# -- config validation ------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(mode="eval", grid=1, **NEAR_EB),
        dict(mode="eval", jobs=0, **NEAR_EB),
        dict(mode="eval", tau=1.5, omega=3.0),
        dict(mode="eval", tau=0.5),
        dict(mode="eval", tau=0.5, omega=0.5),
        dict(mode="eval", mu=0.5, **NEAR_EB),
        dict(mode="eval", mu_qkd=0.2, **NEAR_EB),
        dict(mode="eval", xi=1.2, **NEAR_EB),
        dict(mode="eval", gain=-1.0, **NEAR_EB),
        dict(mode="eval", n=1.0, **NEAR_EB),
        dict(mode="eval", n=-1.0),
        dict(mode="eval", n=1.0, c=2.0),
        dict(mode="eval", mu=math.inf, **NEAR_EB),
        dict(mode="scan-plane", n=1.0),
        dict(mode="scan-noise", **NEAR_EB),
        dict(mode="scan-noise", range=(-1.0, 2.0)),
        dict(mode="scan-plane", range=(2.0, 1.0), **NEAR_EB),
        dict(mode="scan-plane", range=(0.0, math.nan), **NEAR_EB),
        dict(mode="scan-plane", format="xml", **NEAR_EB),
        dict(mode="scan-plane", bell="other", **NEAR_EB),
        dict(mode="dance", **NEAR_EB),
    ],
)
def test_bad_configs_rejected(kw):
    with pytest.raises(ConfigError):
        ScanConfig(**kw).validate()


def test_echo_omits_runtime_only_fields():
    echo = plane(jobs=4, out="x.csv", range=(-1.0, 1.0)).echo()
    assert "jobs" not in echo and "out" not in echo
    assert echo["range"] == [-1.0, 1.0]


# -- eval and env-check -----------------------------------------------------


def test_eval_origin_is_dead():
    rec = eval_point(ScanConfig(mode="eval", mu=1e6, **NEAR_EB))
    assert rec["entanglement_breaking"] is True
    assert rec["omega_eb"] == pytest.approx(19.0)
    flags = [f for _, f, _ in iter_flags(rec)]
    assert len(flags) == 19 and not any(flags)
    assert rec["qkd_rate"] < 0
    assert rec["fidelity"] < 0.5


def test_eval_non_separable_point_has_null_metrics():
    rec = eval_point(ScanConfig(mode="eval", g=19.0, g_prime=-19.0, **NEAR_EB))
    assert rec["physical"] is True and rec["separable"] is False
    assert rec["env_mutual_info"] > 0
    for col in ("eps", "fidelity", "qkd_rate", "ent_quad_a_bApBp", "eig_bi_a_Ap"):
        assert rec[col] is None


def test_eval_unphysical_raises():
    with pytest.raises(UnphysicalEnvironmentError):
        eval_point(ScanConfig(mode="eval", tau=0.9, omega=2.0, g=2.5))


def test_eval_additive_point():
    rec = eval_point(ScanConfig(mode="eval", n=2.5, c=1.0, c_prime=1.0, mu=52.0))
    assert rec["entanglement_breaking"] is True
    assert rec["qkd_rate"] > 0
    assert rec["kappa"] == 0.0 and rec["kappa_prime"] == pytest.approx(5.0)
    assert rec["qkd_rate_opt_bound"] == math.inf


def test_eval_matches_library():
    cfg = ScanConfig(mode="eval", g=12.0, g_prime=-7.0, mu=300.0, xi=0.9, **NEAR_EB)
    rec = eval_point(cfg)
    m = relay_metrics(300.0, EnvironmentParams(0.9, 19.38, 12.0, -7.0), xi=0.9)
    assert rec["qkd_rate"] == m.qkd_rate and rec["eps"] == m.eps


def test_env_check_examples():
    rep = env_check(ScanConfig(mode="env-check", **NEAR_EB))
    assert rep["entanglement_breaking"] and rep["omega_eb"] == pytest.approx(19.0)
    assert rep["kappa"] == pytest.approx(2.1533, abs=1e-4)
    assert rep["env_mutual_info"] == pytest.approx(0.0, abs=1e-12)
    rep = env_check(ScanConfig(mode="env-check", tau=0.5, omega=2.0, g=1.5, g_prime=-1.5))
    assert rep["physical"] and not rep["separable"] and rep["violation"] is None
    rep = env_check(ScanConfig(mode="env-check", tau=0.5, omega=2.0, g=2.5))
    assert not rep["physical"] and "2.5" in rep["violation"]
    assert rep["env_mutual_info"] is None
    rep = env_check(ScanConfig(mode="env-check", n=2.5, c=1.0))
    assert rep["entanglement_breaking"] and rep["eb_threshold_n"] == 2.0


# -- plane scan -------------------------------------------------------------


def test_smallest_plane_grid():
    res = scan_plane(plane(grid=2, mu=1e3))
    assert len(res.records) == 4
    assert [(r["g"], r["g_prime"]) for r in res.records] == [
        (-18.38, -18.38), (-18.38, 18.38), (18.38, -18.38), (18.38, 18.38)
    ]
    assert res.config["grid"] == 2 and res.config["tau"] == 0.9
    assert len(res.antidiagonal) == 2
    assert all(r["g_prime"] == -r["g"] for r in res.antidiagonal)
    assert res.columns == PLANE_COLUMNS


def test_plane_labels_excluded_points():
    res = scan_plane(plane(grid=5, mu=100.0, range=(-19.3, 19.3)))
    assert len(res.records) == 25
    excluded = [r for r in res.records if not r["separable"]]
    assert excluded
    for r in excluded:
        assert r["eps"] is None and r["ent_quad_a_bApBp"] is None


def test_flags_rederivable_from_eigenvalues():
    res = scan_plane(plane(grid=7, mu=1e6))
    n = 0
    for rec in res.records + res.antidiagonal:
        for col, flag, eig in iter_flags(rec):
            if rec["separable"]:
                assert flag == (eig < 1.0), col
                n += 1
    assert n > 0
    origin = res.records[len(res.records) // 2]
    assert origin["g"] == 0.0 and origin["g_prime"] == 0.0
    assert not origin["ent_quad_a_bApBp"]


def test_csv_and_json_decode_identically(tmp_path):
    res = scan_plane(plane(grid=4, mu=1e4))
    from_csv = read_csv(to_csv(res))
    from_json = read_json(to_json(res))
    assert from_csv == from_json
    assert len(from_csv) == 16


def test_csv_header_and_sidecar(tmp_path):
    res = scan_plane(plane(grid=3, mu=50.0))
    out = tmp_path / "plane.csv"
    assert write_result(res, "csv", str(out)) is None
    text = out.read_text()
    assert text.startswith("# cvrelay scan-plane\n")
    assert "# tau = 0.9\n" in text and "# grid = 3\n" in text
    side = sidecar_path(out)
    assert side.name == "plane.antidiagonal.csv"
    assert side.read_text() == antidiagonal_csv(res)
    assert len(read_csv(side.read_text())) == 3


def test_json_payload_structure():
    res = scan_plane(plane(grid=2, mu=10.0))
    payload = json.loads(to_json(res))
    assert payload["kind"] == "scan-plane"
    assert set(payload) == {"kind", "config", "columns", "records", "antidiagonal"}


def test_format_value():
    assert format_value(None) == ""
    assert format_value(True) == "true"
    assert format_value(3) == "3"
    assert format_value(1 / 3) == "0.333333333333"
    assert format_value(math.inf) == "inf" and format_value(-math.inf) == "-inf"
    assert format_value(math.nan) == "nan"


def test_parallel_scan_matches_serial():
    a = scan_plane(plane(grid=5, mu=1e3))
    b = scan_plane(plane(grid=5, mu=1e3, jobs=3))
    assert to_csv(a) == to_csv(b)
    assert antidiagonal_csv(a) == antidiagonal_csv(b)


# -- noise scan -------------------------------------------------------------


def test_noise_scan_positive_beyond_eb():
    res = scan_noise(noise(grid=81))
    assert len(res.records) == 81 and res.columns == NOISE_COLUMNS
    d = res.diagnostics
    assert d["monotone_decreasing"] and d["positive_beyond_eb"]
    assert d["sign_changes"] == []
    rates = {r["n"]: r["qkd_rate"] for r in res.records}
    assert all(r > 0 for n, r in rates.items() if n > 2)


def test_noise_scan_lower_efficiency_is_pointwise_below():
    hi = scan_noise(noise(grid=41))
    lo = scan_noise(noise(grid=41, xi=0.97))
    for a, b in zip(hi.records, lo.records):
        assert b["qkd_rate"] < a["qkd_rate"] or a["n"] == 0.0 and b["qkd_rate"] <= a["qkd_rate"]


def test_noise_scan_single_point_matches_eval():
    res = scan_noise(noise(range=(0.0, 0.0)))
    assert len(res.records) == 1
    rec = eval_point(ScanConfig(mode="eval", n=0.0, mu=52.0, c=1.0, c_prime=1.0))
    assert res.records[0]["qkd_rate"] == rec["qkd_rate"]


def test_noise_diagnostics_report_sign_change():
    res = scan_noise(noise(grid=21, c=0.0, c_prime=0.0, range=(0.0, 1.0)))
    assert res.diagnostics["sign_changes"]
    assert "# diagnostic sign_changes = " in to_csv(res)
