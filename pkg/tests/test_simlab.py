from __future__ import annotations

import json
import math
import warnings

import numpy as np
import pytest

from linkdp.estimators import rl_covariance
from linkdp.simlab import (
    CSV_COLUMNS,
    ScenarioConfig,
    compare_rl_vs_nonrl,
    generate_design,
    generate_instance,
    growth_slope,
    max_workers,
    run_scenario,
    setting,
    write_report,
)


def small(**kw):
    base = dict(name="small", n=(300,), reps=20, methods=("ols", "rl", "ngd", "ssp", "ngd_nonrl", "ssp_nonrl"))
    base.update(kw)
    return ScenarioConfig(**base)


def test_fixed_gamma_one_links_perfectly():
    cfg = small(gamma_law=("fixed",), gamma=(1.0,))
    for rep in range(3):
        data, Q, _ = generate_instance(cfg, 0, rep)
        np.testing.assert_array_equal(data.z, data.y)


def test_setting_one_block_layout():
    design = generate_design(setting(1), 0)
    assert design.n == 3000
    assert len(design.Q.sizes) == 120 and set(design.Q.sizes.tolist()) == {25}
    assert np.all((design.Q.gammas >= 0.6) & (design.Q.gammas <= 0.9))
    assert design.budget.delta == pytest.approx(3000**-1.1)


def test_instances_reproducible():
    cfg = small()
    a, _, _ = generate_instance(cfg, 0, 4)
    b, _, _ = generate_instance(cfg, 0, 4)
    c, _, _ = generate_instance(cfg, 0, 5)
    assert np.array_equal(a.z, b.z)
    assert not np.array_equal(a.z, c.z)
    assert np.array_equal(a.X, c.X)


def test_ragged_last_block_recorded():
    cfg = small(n=(310,), methods=("rl",), reps=2)
    assert generate_design(cfg, 0).last_block == 10
    report = run_scenario(cfg, workers=1)
    assert any("10 records" in note for note in report.notes)


def test_report_reproducible_and_schedule_free():
    cfg = small(n=(300, 400), reps=12)
    one = run_scenario(cfg, workers=1).to_csv()
    again = run_scenario(cfg, workers=1).to_csv()
    two = run_scenario(cfg, workers=2).to_csv()
    assert one == again == two
    assert one.splitlines()[0] == ",".join(CSV_COLUMNS)


def test_report_rows_and_counts():
    cfg = small()
    report = run_scenario(cfg, workers=1)
    assert {r.method for r in report.rows} == set(cfg.methods)
    for r in report.rows:
        assert r.reps == cfg.reps - len(r.failures)
    # ols has a closed-form theoretical covariance
    ols = report.get("ols", 300)
    assert ols.thr_var_trace > 0 and ols.emp_var_trace > 0


def test_gamma_one_arms_coincide():
    cfg = small(gamma_law=("fixed",), gamma=(1.0,), M=0.0, methods=("rl", "ols", "ngd", "ngd_naive"))
    report = run_scenario(cfg, workers=1)
    np.testing.assert_allclose(report.get("rl", 300).estimates, report.get("ols", 300).estimates, atol=1e-12)
    np.testing.assert_array_equal(report.get("ngd", 300).thr_cov.shape, (1, 1))
    with pytest.warns(UserWarning):
        compare_rl_vs_nonrl(small(gamma_law=("fixed",), gamma=(1.0,), reps=2))


def test_rl_covariance_matches_monte_carlo_independent_mode():
    cfg = small(
        n=(500,),
        d=2,
        beta=(1.0, -0.5),
        reps=1000,
        methods=("rl",),
        linkage_mode="independent",
        covariance_rule="independent",
    )
    row = run_scenario(cfg, workers=1).get("rl", 500)
    assert np.linalg.norm(row.emp_cov - row.thr_cov) / np.linalg.norm(row.thr_cov) < 0.1


def test_setting_three_m_rule():
    cfg = setting(3, reps=1)
    assert [round(generate_design(cfg, p).M, 12) for p in range(5)] == [1.0, 0.75, 0.5, 0.25, 0.0]


def test_config_round_trip_and_validation():
    cfg = setting(2)
    back = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg and back.digest() == cfg.digest()
    with pytest.raises(ValueError):
        ScenarioConfig(n=(100, 200), sigma=(1.0, 2.0))
    with pytest.raises(ValueError):
        ScenarioConfig(methods=("magic",))
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"bogus": 1})


def test_growth_slope_recovers_exponent():
    x = np.array([0.5, 1.0, 2.0, 4.0])
    assert growth_slope(x, 0.1 + 3 * x**2, 0.1) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        growth_slope(x, x, 10.0)


def test_write_report(tmp_path):
    report = run_scenario(small(reps=3, methods=("rl",)), workers=1)
    csv_path, man_path = write_report(report, tmp_path)
    assert csv_path.read_text() == report.to_csv()
    doc = json.loads(man_path.read_text())
    assert doc["master_seed"] == report.config.master_seed
    assert doc["config_sha256"] == report.config.digest()


def test_max_workers_env(monkeypatch):
    monkeypatch.setenv("LINKDP_THREADS", "64")
    assert 1 <= max_workers() <= 64
    monkeypatch.setenv("LINKDP_THREADS", "nope")
    with pytest.raises(ValueError):
        max_workers()
    monkeypatch.delenv("LINKDP_THREADS")
    assert max_workers() == 1
