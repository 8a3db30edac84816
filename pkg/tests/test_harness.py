import csv
import io
import math

import numpy as np
import pytest

from mudlab.analysis import ra_trajectory
from mudlab.detectors import DetectorConfig, Kind
from mudlab.harness import (BerRecord, ExperimentSpec, oracle_compare, predict, run_coded,
                            run_convergence_table, run_macro_stats, run_pdf_export, run_uncoded_sweep,
                            wilson_interval, worker_count, write_csv)
from mudlab.model import noise_variance
from mudlab.oracle import K_MAX, OracleCostError


def test_wilson_interval():
    lo, hi = wilson_interval(0, 1000)
    assert lo == 0.0 and 0 < hi < 0.005
    lo, hi = wilson_interval(50, 1000)
    assert lo < 0.05 < hi
    z = 1.959963984540054
    p, n = 0.05, 1000
    c = (p + z * z / (2 * n)) / (1 + z * z / n)
    h = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / (1 + z * z / n)
    assert (lo, hi) == pytest.approx((c - h, c + h), rel=1e-14)
    assert wilson_interval(1000, 1000)[1] == 1.0


def test_worker_count(monkeypatch):
    monkeypatch.setenv("MUDLAB_THREADS", "3")
    assert worker_count() == 3 and worker_count(2) == 2
    assert worker_count(0) == 1


def test_spec_validation():
    with pytest.raises(ValueError, match="seed"):
        ExperimentSpec(mode="uncoded-ber")
    with pytest.raises(ValueError):
        ExperimentSpec(mode="nope", seed=1)
    with pytest.raises(ValueError):
        ExperimentSpec(alpha=(0.0,), seed=1)
    with pytest.raises(ValueError):
        ExperimentSpec(ebn0_db=(float("nan"),), seed=1)
    with pytest.raises(ValueError):
        ExperimentSpec(ebn0_db=(float("inf"),), seed=1)
    ExperimentSpec(mode="predict")
    ExperimentSpec(ebn0_db=(-math.inf,), seed=1)


def _sweep(**kw):
    base = dict(num_users=(8,), alpha=(1.0,), ebn0_db=(4.0,), seed=5, min_errors=40, max_trials=60,
                detector=DetectorConfig(kind=Kind.SSPDA))
    base.update(kw)
    return ExperimentSpec(**base)


def test_uncoded_accounting_and_interval():
    spec = _sweep(symbols_per_trial=3)
    (r,) = run_uncoded_sweep(spec)
    assert r.bits == r.trials * 8 * 3
    assert r.ber == r.errors / r.bits
    assert (r.ci_low, r.ci_high) == wilson_interval(r.errors, r.bits)
    assert r.ci_low <= r.ber <= r.ci_high
    assert r.errors >= 40 or r.trials == 60
    assert 1 <= r.mean_iterations <= 100


def test_error_target_stops_early():
    (r,) = run_uncoded_sweep(_sweep(min_errors=5, max_trials=1000, ebn0_db=(0.0,)))
    assert r.errors >= 5 and r.trials < 1000


def test_determinism_across_threads():
    a = run_uncoded_sweep(_sweep(threads=1))
    b = run_uncoded_sweep(_sweep(threads=4))
    assert a == b
    assert write_csv(a) == write_csv(b)


def test_minus_inf_is_coin_flip():
    (r,) = run_uncoded_sweep(_sweep(ebn0_db=(-math.inf,), min_errors=2000, max_trials=2000,
                                    symbols_per_trial=4))
    assert abs(r.ber - 0.5) < 4 * math.sqrt(0.25 / r.bits)
    assert r.mean_iterations == 1


def test_trajectory_records():
    spec = _sweep(mode="trajectory", stages=4, detector=DetectorConfig(kind=Kind.PSPDA, omega=0.0))
    recs = run_uncoded_sweep(spec)
    assert [r.stage for r in recs] == [1, 2, 3, 4]
    assert len({(r.bits, r.trials) for r in recs}) == 1
    assert all(r.mean_iterations == 4 for r in recs)


def test_csv_format():
    recs = run_uncoded_sweep(_sweep(max_trials=8))
    text = write_csv(recs)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert "wall_time" not in rows[0] and "ber" in rows[0]
    assert float(rows[0]["ber"]) == recs[0].ber
    assert "wall_time" in write_csv(recs, timing=True).splitlines()[0]
    assert write_csv([], columns=["a", "b"]) == "a,b\n"
    buf = io.StringIO()
    write_csv(recs, buf)
    assert buf.getvalue() == text
    assert "np." not in text


def test_macro_stats_first_stage_closed_form():
    spec = ExperimentSpec(mode="macro-stats", num_users=(256,), alpha=(0.25,), ebn0_db=(6.0,), seed=2,
                          max_trials=8, stages=3, detector=DetectorConfig(kind=Kind.PSPDA, omega=0.0))
    recs = run_macro_stats(spec)
    assert [r.stage for r in recs] == [0, 1, 2]
    r0 = recs[0]
    assert r0.M == 0 and r0.Q == 0 and r0.U == 1 and r0.trials == 8
    s2 = noise_variance(6.0)
    # h^0 = y / (sigma2 + alpha): E = 1 / (sigma2 + alpha) on average
    assert r0.E == pytest.approx(1 / (s2 + 0.25), rel=0.02)
    assert r0.F == pytest.approx(1 / (s2 + 0.25), rel=0.05)
    assert r0.E_sn == pytest.approx(ra_trajectory(0.25, s2, 1)[0].E, rel=1e-14)
    with pytest.raises(ValueError):
        run_macro_stats(spec.with_(detector=DetectorConfig(kind=Kind.SSPDA)))


def test_convergence_table_trivial_tolerance():
    spec = _sweep(mode="convergence-table", max_trials=4, symbols_per_trial=2)
    dets = [DetectorConfig(kind=k, tol=math.inf) for k in (Kind.SSPDA, Kind.PSPDA)]
    recs = run_convergence_table(spec, dets)
    assert len(recs) == 2
    assert all(r.mean_iterations == 1 and r.instances == 8 and r.frac_max_iter == 0 for r in recs)


def test_pdf_export_single_user_and_limit():
    spec = ExperimentSpec(mode="pdf-export", num_users=(1,), alpha=(0.25,), ebn0_db=(2.0,), seed=1,
                          seed_groups=2, trials_per_group=2, bins=10)
    (ex,) = run_pdf_export(spec)
    width = np.diff(ex.edges)
    assert np.sum(ex.density_exact * width) == pytest.approx(1.0)
    k0 = np.searchsorted(ex.edges, 0.0, side="right") - 1
    assert ex.density_exact[k0] * width[k0] == pytest.approx(1.0) and ex.tv == 0
    with pytest.raises(OracleCostError):
        run_pdf_export(spec.with_(num_users=(K_MAX + 1,)))


def test_pdf_export_shapes():
    spec = ExperimentSpec(mode="pdf-export", num_users=(6,), alpha=(0.5, 1.0), ebn0_db=(2.0,), seed=3,
                          seed_groups=2, trials_per_group=2, bins=12)
    exs = run_pdf_export(spec)
    for ex in exs:
        assert len(ex.edges) == 13 and len(ex.tv_groups) == 2 and 0 <= ex.tv <= 1
        w = np.diff(ex.edges)
        assert np.sum(ex.density_exact * w) == pytest.approx(1.0)
        assert np.sum(ex.density_approx * w) == pytest.approx(1.0)
    again = run_pdf_export(spec)
    assert all(np.array_equal(a.density_exact, b.density_exact) and a.tv_groups == b.tv_groups
               for a, b in zip(exs, again))


def test_oracle_compare_rows():
    rows = oracle_compare(4, 8, 6.0, seed=42)
    assert [r["user"] for r in rows] == [1, 2, 3, 4]
    for r in rows:
        assert abs(r["m_oracle"]) <= 1 and r["abs_gap"] == abs(r["m_pda"] - r["m_oracle"])


def test_predict_rows():
    rows = predict([0.1], [6.0, 8.0], stages=3, method="both")
    assert len(rows) == 12
    assert {r["method"] for r in rows} == {"RA", "SN"}
    assert [r["stage"] for r in rows[:3]] == [1, 2, 3]
    eq = predict([1.0], [8.0], method="eq")
    assert len(eq) == 1 and eq[0]["stage"] == "" and eq[0]["method"] == "EQ"
    steady = predict([1.0], [8.0], method="sn", omega=0.4)
    assert len(steady) == 1 and steady[0]["stage"] == ""


def test_coded_small():
    spec = ExperimentSpec(mode="coded-sim", num_users=(4,), alpha=(1.0,), ebn0_db=(6.0,), seed=1,
                          min_errors=1000, max_trials=2, outer_iters=2, n_info=50, processing_gain=8,
                          detector=DetectorConfig(kind=Kind.SSPDA))
    recs = run_coded(spec)
    assert [r.outer_iter for r in recs] == [0, 1, 2]
    assert all(r.bits == 2 * 4 * 50 and r.frames == 2 for r in recs)
    assert all(0 <= r.ber <= 0.5 for r in recs)
