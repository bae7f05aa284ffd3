"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

The lines are printed as the tests run (visible with ``-s``) and repeated in
the terminal summary.
"""

import hashlib
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

import conftest
from actflab.calibration import geh
from actflab.cli import main
from actflab.controller import GREEN, RED, green_intervals, run_controller
from actflab.design import d_efficiency, default_space, generate_design, random_design
from actflab.errors import RankDeficiencyError
from actflab.harness import ExperimentConfig, mechanistic_drp, read_drp_csv, run_experiment
from actflab.network import expand_volumes, reference_network, reference_volumes
from actflab.rsm import effect_f_tests, fit_rsm, optimal_actf, OLSFit
from actflab.timing import apply_actf, dumps_plan, optimize_base_plan, single_ring_plan
from conformance import barrier_faults, clearance_faults, max_start_drift, short_greens, split_errors
from plans import random_plans, ring_sums

ACTFS = [1.0, 1.05, 1.1, 1.15, 1.2, 1.25, 1.3]


@contextmanager
def criterion(n, title):
    note = {"detail": title}
    try:
        yield note
    except BaseException:
        conftest.CRITERIA.append((n, False, note["detail"]))
        print(f"\nFAIL criterion {n}: {note['detail']}")
        raise
    conftest.CRITERIA.append((n, True, note["detail"]))
    print(f"\nPASS criterion {n}: {note['detail']}")


def store_hash(directory):
    h = hashlib.sha256()
    for p in sorted(directory.iterdir()):
        if p.is_file():
            h.update(p.name.encode() + b"\0" + p.read_bytes())
    return h.hexdigest()


@pytest.fixture(scope="module")
def reference_plan():
    net = reference_network()
    return optimize_base_plan(net, expand_volumes(net, reference_volumes(), 20))


def example_plan():
    return single_ring_plan({1: 6.0, 2: 22.0, 3: 8.0, 4: 8.0}, min_green={1: 5.0})


# ---------------------------------------------------------------------------


def test_criterion_1_transform_conservation():
    with criterion(1, "transform conservation") as c:
        pool = random_plans(np.random.default_rng(20240601), 1000)
        t0 = time.perf_counter()
        worst = 0.0
        for plan in pool:
            before = ring_sums(plan)
            for a in ACTFS:
                res = apply_actf(plan, a)
                worst = max(worst, float(np.abs(ring_sums(res.plan) - before).max()))
                assert res.plan.cycle_length == plan.cycle_length
                if a == 1.0:
                    assert res.plan == plan and dumps_plan(res.plan) == dumps_plan(plan)
        elapsed = time.perf_counter() - t0
        c["detail"] = f"1000 plans x 7 ActF, max ring error {worst:.1e} s, {elapsed:.2f} s"
        assert worst <= 1e-9
        assert elapsed < 5.0


def test_criterion_2_worked_example():
    with criterion(2, "worked transform example") as c:
        g = apply_actf(example_plan(), 1.10).plan.greens("I1")
        got = [g[p] for p in (1, 2, 3, 4)]
        c["detail"] = "greens " + ", ".join(repr(v) for v in got) + " (within 1e-12 of 6.6, 19.8, 8.8, 8.8)"
        assert got == pytest.approx([6.6, 19.8, 8.8, 8.8], abs=1e-12)


def test_criterion_3_geh():
    with criterion(3, "GEH oracle") as c:
        t0 = time.perf_counter()
        g = geh(832, 826)
        alt = geh(832, 826, alternate=True)
        rng = np.random.default_rng(7)
        e, v = rng.uniform(0, 5000, (2, 10_000))
        k = rng.uniform(0.01, 100, 10_000)
        for ei, vi, ki in zip(e, v, k):
            assert geh(ei, vi) == geh(vi, ei)
            assert geh(ki * ei, ki * vi) == pytest.approx(math.sqrt(ki) * geh(ei, vi), rel=1e-9, abs=1e-12)
        elapsed = time.perf_counter() - t0
        c["detail"] = f"geh(832, 826) = {g:.4f}, alternate {alt:.4f}, 10000 pairs in {elapsed:.2f} s"
        assert g == pytest.approx(0.208, abs=0.001)
        assert alt == pytest.approx(0.10, abs=0.005)
        assert elapsed < 1.0


def test_criterion_4_controller_conformance(reference_plan):
    with criterion(4, "controller conformance") as c:
        t0 = time.perf_counter()
        worst_split, worst_drift = 0.0, 0.0
        for iid in reference_plan.ids:
            trace, _ = run_controller(reference_plan, iid, lambda k, ind: (False,) + (True,) * 8, 7200.0)
            assert short_greens(trace, reference_plan) == []
            assert clearance_faults(trace, reference_plan) == []
            assert barrier_faults(trace) == []
            errs = [x for v in split_errors(trace, reference_plan).values() for x in v]
            assert len(errs) > 8 * 50
            worst_split = max(worst_split, max(errs))
            worst_drift = max(worst_drift, max_start_drift(trace, reference_plan))
        elapsed = time.perf_counter() - t0
        c["detail"] = (f"3 intersections x 2 h saturated, split error {worst_split:.2f} s, "
                       f"drift {worst_drift:.2f} s, {elapsed:.1f} s")
        assert worst_split <= 0.2 + 1e-9
        assert worst_drift <= 0.1 + 1e-9
        assert elapsed < 30.0


def test_criterion_5_closed_form_behaviour(reference_plan):
    with criterion(5, "zero-demand and single-call behaviour") as c:
        for iid in reference_plan.ids:
            trace, _ = run_controller(reference_plan, iid, lambda k, ind: (False,) * 9, 3600.0, every_tick=False)
            ind = trace.indications
            assert (ind[:, 1] == GREEN).all() and (ind[:, 5] == GREEN).all()
            assert (ind[:, [0, 2, 3, 4, 6, 7]] == RED).all()
        plan = example_plan()
        trace, _ = run_controller(plan, "I1", lambda k, ind: tuple(p == 4 and k == 50 for p in range(9)), 120.0)
        (s, e, *_), = green_intervals(trace, 4)
        c["detail"] = f"rest in green on phases 2+6; single call served {e - s:.1f} s from t = {s:.1f} s"
        assert e - s == pytest.approx(7.0)
        assert s == pytest.approx(26.0)


def _single_df_p(F, df):
    fit = OLSFit(np.array([math.sqrt(F)]), np.ones(1), np.zeros(1), np.zeros(1), float(df), 1.0, df,
                 np.eye(1), ("b",))
    return effect_f_tests(fit)[0].p


def test_criterion_6_f_test_oracle():
    with criterion(6, "F-test p-values") as c:
        p1, p2 = _single_df_p(16.535, 6), _single_df_p(0.040, 6)
        c["detail"] = f"p(16.535; 1, 6) = {p1:.4f}, p(0.040; 1, 6) = {p2:.4f}"
        assert p1 == pytest.approx(0.0066, abs=0.0005)
        assert p2 == pytest.approx(0.849, abs=0.001)


def test_criterion_7_regression_recovery():
    # b and sigma on the coded ActF scale: DRP = a - b * ((ActF - 1.15) / 0.15)^2 + N(0, sigma)
    with criterion(7, "regression recovery") as c:
        design = generate_design(default_space(), 72, seed=0)
        coded = (design.natural[:, design.space.index("ActF")] - 1.15) / 0.15
        sigma, b = 1.0, 20.0
        worst, worst_p = 0.0, 0.0
        for trial in range(200):
            rng = np.random.default_rng(trial)
            y = 10.0 - b * coded ** 2 + rng.normal(0, sigma, 72)
            fit = fit_rsm(design, y)
            opt = optimal_actf(fit)
            quad = [e for e in effect_f_tests(fit) if e.effect == "(ActF-1.15)^2"][0]
            assert opt.concave
            worst = max(worst, abs(opt.value - 1.15))
            worst_p = max(worst_p, quad.p)
        c["detail"] = f"200 trials at b/sigma = 20: max vertex error {worst:.4f}, max quadratic p {worst_p:.2g}"
        assert worst <= 0.01
        assert worst_p < 0.01


def test_criterion_8_design_quality():
    with criterion(8, "design quality") as c:
        t0 = time.perf_counter()
        design = generate_design(default_space(), 72, seed=0)
        elapsed = time.perf_counter() - t0
        X = design.model_matrix()
        ours = d_efficiency(design)
        rng = np.random.default_rng(99)
        wins = 0
        for _ in range(100):
            try:
                other = d_efficiency(random_design(default_space(), 72, rng))
            except RankDeficiencyError:
                other = 0.0
            wins += ours > other
        c["detail"] = (f"{X.shape[0]}x{X.shape[1]} rank {np.linalg.matrix_rank(X)}, D-eff {ours:.3f}, "
                       f"beats {wins}/100 random designs, {elapsed:.1f} s")
        assert X.shape == (72, 66) and np.linalg.matrix_rank(X) == 66
        assert wins >= 95
        assert elapsed < 60.0


def test_criterion_9_pipeline_identity(tmp_path):
    with criterion(9, "pipeline identity") as c:
        cfg = tmp_path / "exp.json"
        cfg.write_text(json.dumps({"schema": "actf-exp/1", "n_runs": 6, "seeds": 3}))
        t0 = time.perf_counter()
        assert main(["experiment", "run", str(cfg), "--output", str(tmp_path / "a"), "-q"]) == 0
        elapsed = time.perf_counter() - t0
        assert main(["experiment", "run", str(cfg), "--output", str(tmp_path / "b"), "-q"]) == 0
        assert main(["experiment", "run", str(cfg), "--output", str(tmp_path / "c"), "--workers", "2", "-q"]) == 0
        rows = read_drp_csv(tmp_path / "a" / "drp.csv")
        ones = [float(r["drp_pct"]) for r in rows if float(r["ActF"]) == 1.0]
        hashes = {store_hash(tmp_path / d) for d in "abc"}
        c["detail"] = (f"6 scenarios x 3 seeds in {elapsed:.1f} s; ActF=1 DRPs {ones}; "
                       f"{len(hashes)} distinct store hash over serial, rerun and parallel")
        assert len(rows) == 6 and all(r["status"] == "ok" for r in rows)
        assert ones and all(v == 0.0 for v in ones)
        assert len(hashes) == 1
        assert elapsed < 120.0


def test_criterion_10_mechanistic_reproduction(tmp_path):
    with criterion(10, "mechanistic reproduction") as c:
        drps, x = mechanistic_drp(1.15, seeds=range(1, 11), side_scale=1.3)
        mean = float(np.mean(drps))
        c["detail"] = f"mean DRP at 1.15 = {mean:.2f} % (v/c {x:.2f})"
        assert 0.4 <= x <= 0.6
        assert mean >= 0.0
        t0 = time.perf_counter()
        res = run_experiment(ExperimentConfig(output=str(tmp_path / "full")))
        elapsed = time.perf_counter() - t0
        opt = res.report.optimum
        report = (tmp_path / "full" / "report.md").read_text()
        c["detail"] += (f"; full experiment: {len(res.drp)}/72 scenarios, {2 * 10 * len(res.drp)} runs in "
                        f"{elapsed:.0f} s, optimal ActF {opt.value:.4f} "
                        f"({'concave' if opt.concave else 'not concave'})")
        assert len(res.scenarios) == 72 and res.report.fit.model.p == 66
        assert f"estimated optimum: {opt.value:.4f}" in report
        assert "reference value for comparison: 1.15" in report
        assert ("(concave," in report) or ("(not concave," in report)
        assert elapsed < 900.0
