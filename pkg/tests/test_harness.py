import hashlib
import json
import shutil
from dataclasses import replace

import pytest

from actflab.design import Factor, FactorSpace, default_space
from actflab.errors import ExperimentError, SchemaError
from actflab.harness import (
    ExperimentConfig,
    analyze_store,
    compute_drp,
    config_from_document,
    dump_config,
    load_config,
    load_store,
    read_drp_csv,
    render_store,
    resolve_workers,
    run_experiment,
)

SHORT = dict(n_runs=4, seeds=2, design_restarts=1, warmup_s=300.0, analysis_s=900.0, cooldown_s=300.0)


def store_hashes(directory):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(directory.iterdir()) if p.is_file()}


def wide_space(eb_hi=6000.0):
    fs = [f if f.name != "VolEB" else Factor.continuous("VolEB", 400, eb_hi) for f in default_space().factors]
    return FactorSpace(tuple(fs))


@pytest.fixture(scope="module")
def first_store(tmp_path_factory):
    out = tmp_path_factory.mktemp("a") / "store"
    res = run_experiment(ExperimentConfig(output=str(out), **SHORT))
    return res, out


# --- DRP -----------------------------------------------------------------


@pytest.mark.parametrize("b, f, drp", [(40, 30, 25.0), (30, 33, -10.0), (50, 50, 0.0)])
def test_compute_drp(b, f, drp):
    assert compute_drp(b, f) == pytest.approx(drp, abs=1e-12)


@pytest.mark.parametrize("b", [0.0, -1.0, float("nan")])
def test_compute_drp_bad_base(b):
    with pytest.raises(ValueError):
        compute_drp(b, 10)


# --- config --------------------------------------------------------------


def test_config_defaults():
    cfg = ExperimentConfig()
    assert (cfg.n_runs, cfg.seeds, cfg.warmup_s, cfg.analysis_s) == (72, 10, 900.0, 3600.0)
    assert cfg.seed_list == list(range(1, 11))
    assert cfg.model_spec().p == 66
    assert replace(cfg, n_runs=6).model_spec().kind == "quad(ActF)"


@pytest.mark.parametrize("bad", [dict(seeds=0), dict(analysis_s=0), dict(workers=0), dict(response="x")])
def test_config_validation(bad):
    with pytest.raises(ValueError, match="invalid experiment config"):
        ExperimentConfig(**bad)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(seeds=3, factors=wide_space(), output=str(tmp_path / "elsewhere"))
    path = tmp_path / "cfg.json"
    dump_config(cfg, path)
    assert load_config(path) == cfg
    assert json.loads(path.read_text())["schema"] == "actf-exp/1"


def test_config_schema_errors():
    with pytest.raises(SchemaError):
        config_from_document({"schema": "actf-exp/9"})
    with pytest.raises(SchemaError):
        config_from_document({"seedz": 3})


def test_relative_paths(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"network": "net.json", "design_file": "d.csv"}))
    cfg = load_config(tmp_path / "cfg.json")
    assert cfg.output == str(tmp_path / "results")
    assert cfg.network == str(tmp_path / "net.json")
    assert cfg.design_file == str(tmp_path / "d.csv")


def test_hash_ignores_location_and_workers():
    a = ExperimentConfig(output="x", workers=1)
    assert a.result_hash() == replace(a, output="y", workers=4, plots=True).result_hash()
    assert a.result_hash() != replace(a, seeds=3).result_hash()


def test_workers_env(monkeypatch):
    cfg = ExperimentConfig(workers=2)
    monkeypatch.delenv("ACTF_WORKERS", raising=False)
    assert resolve_workers(cfg) == 2
    monkeypatch.setenv("ACTF_WORKERS", "3")
    assert resolve_workers(cfg) == 3
    monkeypatch.setenv("ACTF_WORKERS", "zero")
    with pytest.raises(ValueError):
        resolve_workers(cfg)


# --- pipeline ------------------------------------------------------------


def test_store_layout(first_store):
    res, out = first_store
    names = {p.name for p in out.iterdir()}
    assert {"runs.csv", "drp.csv", "effects.csv", "report.md", "design.csv", "manifest.json"} <= names
    runs = (out / "runs.csv").read_text().splitlines()
    assert runs[0] == "scenario_id,seed,plan,avg_delay_s,veh_completed,spillback_flag"
    assert len(runs) == 1 + 4 * 2 * 2
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["complete"] and set(manifest["completion"].values()) == {"4/4"}
    assert res.report is not None and res.fit_error is None


def test_actf_one_gives_zero(first_store):
    res, out = first_store
    rows = read_drp_csv(out / "drp.csv")
    ones = [r for r in rows if float(r["ActF"]) == 1.0]
    assert ones
    for r in ones:
        assert float(r["drp_pct"]) == 0.0
        assert r["base_delay_s"] == r["factored_delay_s"]
    lines = (out / "runs.csv").read_text().splitlines()[1:]
    by_key = {tuple(l.split(",")[:3]): l.split(",")[3:] for l in lines}
    for r in ones:
        for s in (1, 2):
            assert by_key[(r["scenario_id"], str(s), "base")] == by_key[(r["scenario_id"], str(s), "factored")]


def test_single_scenario_identity(tmp_path):
    design = tmp_path / "d.csv"
    names = default_space().names
    row = {n: default_space()[n].mid for n in names}
    row.update(LT=20.0, ActF=1.0)
    design.write_text(",".join(names) + "\n" + ",".join(repr(row[n]) for n in names) + "\n")
    cfg = ExperimentConfig(design_file=str(design), model="main", seeds=1, warmup_s=300.0,
                           analysis_s=900.0, output=str(tmp_path / "s"))
    res = run_experiment(cfg)
    assert [r.drp for r in res.drp] == [0.0]
    assert res.fit_error  # one row cannot support a regression


def test_rerun_byte_identical(first_store, tmp_path):
    _, out = first_store
    again = tmp_path / "again"
    run_experiment(ExperimentConfig(output=str(again), **SHORT))
    assert store_hashes(again) == store_hashes(out)
    # rerunning into a finished store rewrites the same bytes
    run_experiment(ExperimentConfig(output=str(again), **SHORT))
    assert store_hashes(again) == store_hashes(out)


def test_parallel_equals_serial(first_store, tmp_path):
    _, out = first_store
    par = tmp_path / "par"
    run_experiment(ExperimentConfig(output=str(par), workers=2, **SHORT))
    assert store_hashes(par) == store_hashes(out)


def test_resume_after_interrupt(first_store, tmp_path):
    _, out = first_store
    part = tmp_path / "part"
    shutil.copytree(out, part)
    lines = (part / "runs.csv").read_text().splitlines(True)
    (part / "runs.csv").write_text("".join(lines[:7]) + lines[7][:12])  # torn last line
    (part / "report.md").unlink()
    (part / "drp.csv").unlink()
    run_experiment(ExperimentConfig(output=str(part), **SHORT))
    assert store_hashes(part) == store_hashes(out)


def test_config_mismatch(first_store, tmp_path):
    _, out = first_store
    other = tmp_path / "other"
    shutil.copytree(out, other)
    with pytest.raises(ExperimentError, match="different config"):
        run_experiment(ExperimentConfig(output=str(other), **{**SHORT, "seeds": 3}))


def _design_file(path, space, volumes_eb):
    names = space.names
    lines = [",".join(names)]
    for i, eb in enumerate(volumes_eb):
        row = {n: space[n].mid for n in names}
        row.update(VolEB=eb, LT=20.0, ActF=(1.0, 1.15, 1.3)[i % 3])
        lines.append(",".join(repr(float(row[n])) for n in names))
    path.write_text("\n".join(lines) + "\n")


def test_failed_scenario_is_recorded(tmp_path):
    space = wide_space()
    design = tmp_path / "d.csv"
    _design_file(design, space, [800, 900, 1000, 1100, 6000])  # the last row oversaturates Webster
    cfg = ExperimentConfig(factors=space, design_file=str(design), model="quad(ActF)", seeds=1,
                           warmup_s=300.0, analysis_s=600.0, output=str(tmp_path / "s"))
    res = run_experiment(cfg)
    assert list(res.failed) == ["S005"]
    rows = read_drp_csv(tmp_path / "s" / "drp.csv")
    assert [r["status"] for r in rows] == ["ok"] * 4 + ["failed"]
    assert "S005" in (tmp_path / "s" / "report.md").read_text()


def test_too_many_failures(tmp_path):
    space = wide_space()
    design = tmp_path / "d.csv"
    _design_file(design, space, [800, 900, 1000, 5500, 6000])
    cfg = ExperimentConfig(factors=space, design_file=str(design), model="quad(ActF)", seeds=1,
                           warmup_s=300.0, analysis_s=600.0, output=str(tmp_path / "s"))
    with pytest.raises(ExperimentError, match="2 of 5"):
        run_experiment(cfg)


# --- store readers -------------------------------------------------------


def test_analyze_and_render(first_store):
    res, out = first_store
    report, st = analyze_store(out)
    assert report.fit.model.p == 3 and report.fit.n == 4
    assert [e.f for e in report.effects] == pytest.approx([e.f for e in res.report.effects])
    assert render_store(out) == (out / "report.md").read_text()
    per_run, _ = analyze_store(out, "run")
    assert per_run.fit.n == 8
    assert len(load_store(out).drp) == 4


def test_not_a_store(tmp_path):
    with pytest.raises(ExperimentError):
        load_store(tmp_path)
