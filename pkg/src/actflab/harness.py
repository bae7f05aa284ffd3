"""Experiment pipeline: design rows -> base and factored plans -> paired simulations -> DRP -> RSM fit.

Every run is keyed by (scenario, seed, plan) and appended to ``runs.csv`` as
soon as it finishes, so an interrupted experiment resumes where it stopped.
When the experiment completes, the store is rewritten in key order; the
files therefore do not depend on worker count or completion order.

The number of worker processes comes from the config's ``workers`` field
and can be overridden with the ``ACTF_WORKERS`` environment variable.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rsm
from .design import FactorSpace, ModelSpec, default_space, generate_design, n_rsm_parameters, read_design_csv, write_design_csv
from .errors import ExperimentError, InfeasibleDesignError, RankDeficiencyError, SchemaError
from .network import ExternalVolumes, expand_volumes, load_network, reference_network, reference_volumes
from .sim import DemandSpec, RUN_FIELDS, SimParams, run_simulation
from .timing import WebsterParams, apply_actf, optimize_base_plan

CONFIG_SCHEMA = "actf-exp/1"
WORKERS_ENV = "ACTF_WORKERS"
PLANS = ("base", "factored")
FAILURE_LIMIT = 0.20
REFERENCE_ACTF = 1.15


def compute_drp(base_delay, factored_delay):
    """Delay reduction of the factored plan relative to the base plan, in percent."""
    if not base_delay > 0:
        raise ValueError(f"base delay must be positive (got {base_delay})")
    return 100.0 * (base_delay - factored_delay) / base_delay


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    network: str | None = None  # None: built-in reference arterial
    factors: FactorSpace = field(default_factory=default_space)
    n_runs: int = 72
    design_seed: int = 0
    design_restarts: int = 4
    design_file: str | None = None
    model: str = "auto"  # "auto", "rsm", "main", "quad(ActF)", "main+quad(...)"
    seeds: int = 10
    seed_base: int = 1
    warmup_s: float = 900.0
    analysis_s: float = 3600.0
    cooldown_s: float = 900.0
    sat_flow: float = 1900.0
    startup_lost_s: float = 2.0
    dt: float = 0.1
    vehicle_extension_s: float = 2.0
    phf: float = 0.92
    profile: str = "flat"
    side_scale: float = 1.0  # simulated side-street demand relative to the design volumes
    response: str = "scenario"  # "scenario" (mean over seeds) or "run" (one DRP per seed)
    output: str = "results"
    workers: int = 1
    plots: bool = False

    def __post_init__(self):
        problems = []
        if int(self.seeds) < 1:
            problems.append("seeds must be >= 1")
        if int(self.n_runs) < 1:
            problems.append("n_runs must be >= 1")
        for name in ("warmup_s", "analysis_s", "dt", "sat_flow"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        for name in ("cooldown_s", "startup_lost_s", "vehicle_extension_s"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if not self.side_scale > 0:
            problems.append("side_scale must be > 0")
        if self.response not in ("scenario", "run"):
            problems.append("response must be 'scenario' or 'run'")
        if int(self.workers) < 1:
            problems.append("workers must be >= 1")
        if problems:
            raise ValueError("invalid experiment config: " + "; ".join(problems))

    @property
    def seed_list(self):
        return [self.seed_base + i for i in range(self.seeds)]

    def sim_params(self):
        return SimParams(dt=self.dt, sat_flow=self.sat_flow, startup_lost_s=self.startup_lost_s,
                         vehicle_extension_s=self.vehicle_extension_s, cooldown_s=self.cooldown_s)

    def webster_params(self):
        return WebsterParams(sat_flow=self.sat_flow, phf=self.phf)

    def model_spec(self, space=None):
        space = space or self.factors
        if self.model != "auto":
            return ModelSpec.parse(self.model, space.names)
        if self.n_runs >= n_rsm_parameters(len(space)):
            return ModelSpec.rsm(space.names)
        return ModelSpec.single_quadratic(space.names, rsm.ACTF)

    def to_document(self):
        doc = asdict(self)
        doc["factors"] = self.factors.to_document()
        return {"schema": CONFIG_SCHEMA, **doc}

    def result_hash(self):
        """Hash of every field that affects results (output location and workers excluded)."""
        doc = self.to_document()
        for k in ("output", "workers", "plots"):
            doc.pop(k)
        if self.network:
            doc["network"] = hashlib.sha256(Path(self.network).read_bytes()).hexdigest()
        if self.design_file:
            doc["design_file"] = hashlib.sha256(Path(self.design_file).read_bytes()).hexdigest()
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def config_from_document(doc):
    if not isinstance(doc, dict):
        raise SchemaError("<root>", "config must be a mapping")
    schema = doc.get("schema", CONFIG_SCHEMA)
    if schema != CONFIG_SCHEMA:
        raise SchemaError("schema", f"unsupported schema {schema!r} (expected {CONFIG_SCHEMA!r})")
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    kwargs = {}
    for k, v in doc.items():
        if k == "schema":
            continue
        if k not in known:
            raise SchemaError(k, "unknown config field")
        kwargs[k] = v
    if "factors" in kwargs:
        kwargs["factors"] = default_space() if kwargs["factors"] is None else FactorSpace.from_document(kwargs["factors"])
    return ExperimentConfig(**kwargs)


def load_config(path):
    """Read a config document; relative paths in it are taken relative to its directory."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    cfg = config_from_document(doc)
    base = Path(path).parent
    fix = {}
    for k in ("network", "design_file", "output"):
        v = getattr(cfg, k)
        if v and not Path(v).is_absolute():
            fix[k] = str(base / v)
    return replace(cfg, **fix) if fix else cfg


def dump_config(cfg, path):
    Path(path).write_text(json.dumps(cfg.to_document(), indent=2, sort_keys=True) + "\n")


def resolve_workers(cfg):
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {env!r}") from None
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {env!r}")
        return n
    return int(cfg.workers)


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True)
class Scenario:
    id: str
    settings: dict  # factor name -> natural value


@dataclass(frozen=True)
class DRPRecord:
    scenario_id: str
    base_delay: float
    factored_delay: float
    drp: float


def scenario_plans(net, settings, params=None):
    """(movement volumes, base plan, factored plan) of one design row."""
    ext = ExternalVolumes.from_factors(settings, len(net.intersections))
    mv = expand_volumes(net, ext, settings["LT"])
    base = optimize_base_plan(net, mv, params)
    factored = apply_actf(base, settings["ActF"]).plan
    return ext, mv, base, factored


def coordinated_saturation(net, mv, plan, sat_flow=1900.0):
    """Flow-weighted degree of saturation of the coordinated through movements."""
    v = c = 0.0
    for x in net.intersections:
        for p in (2, 6):
            approach = x.phases[p].approach
            lanes = net.inbound_link(x.id, approach).lanes["T"]
            v += mv.phase_volume(net, x.id, p)
            c += sat_flow * lanes * plan.intersection(x.id).phases[p].green / plan.cycle_length
    return v / c


def _run_task(task):
    net, demand, plans, seed, sid, warmup, analysis, params = task
    out = []
    cache = {}
    for name, plan in plans:
        key = id(plan)
        if key not in cache:  # identical plans share one simulation
            cache[key] = run_simulation(net, demand, plan, seed, warmup, analysis, params, scenario_id=sid)
        r = cache[key]
        out.append((sid, seed, name, r.avg_delay, r.veh_completed, r.spillback))
    return out


def _format_row(row):
    sid, seed, plan, delay, n, spill = row
    return [sid, int(seed), plan, repr(float(delay)), int(n), int(bool(spill))]


def _read_runs(path):
    """Completed runs keyed by (scenario, seed, plan); a torn trailing line is dropped."""
    rows = {}
    if not path.exists():
        return rows
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    if not lines:
        return rows
    for rec in csv.reader(lines[1:]):
        if len(rec) != len(RUN_FIELDS):
            continue
        try:
            key = (rec[0], int(rec[1]), rec[2])
            rows[key] = (rec[0], int(rec[1]), rec[2], float(rec[3]), int(rec[4]), bool(int(rec[5])))
        except ValueError:
            continue
    return rows


def _write_runs(path, rows):
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_FIELDS)
        for key in sorted(rows, key=lambda k: (k[0], k[1], PLANS.index(k[2]))):
            w.writerow(_format_row(rows[key]))
    os.replace(tmp, path)


def _mean_delay(rows):
    n = sum(r[4] for r in rows)
    if n == 0:
        return 0.0
    return sum(r[3] * r[4] for r in rows) / n


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    design: object
    scenarios: list
    drp: list  # DRPRecord per successful scenario
    failed: dict  # scenario id -> reason
    report: object | None  # rsm.RegressionReport
    fit_error: str | None
    output: Path


def load_design(cfg):
    space = cfg.factors
    model = cfg.model_spec(space)
    if cfg.design_file:
        return read_design_csv(cfg.design_file, space, model)
    return generate_design(space, cfg.n_runs, cfg.design_seed, model, restarts=cfg.design_restarts)


def run_experiment(cfg, progress=None):
    """Run (or resume) the experiment described by ``cfg`` and write its result store."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ExperimentError(f"output directory {out} is not writable")
    manifest_path = out / "manifest.json"
    chash = cfg.result_hash()
    if manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        if old.get("config_hash") != chash:
            raise ExperimentError(f"{out} holds results of a different config; use another output directory")
    net = load_network(cfg.network) if cfg.network else reference_network()
    design = load_design(cfg)
    write_design_csv(design, out / "design.csv")
    scenarios = [Scenario(f"S{i + 1:03d}", row) for i, row in enumerate(design.rows())]
    wparams = cfg.webster_params()
    sparams = cfg.sim_params()

    failed, tasks, prepared = {}, [], {}
    for sc in scenarios:
        try:
            ext, mv, base, factored = scenario_plans(net, sc.settings, wparams)
        except (InfeasibleDesignError, ValueError) as exc:
            failed[sc.id] = str(exc)
            continue
        if cfg.side_scale != 1.0:
            mv = expand_volumes(net, ext.scaled(side=cfg.side_scale), sc.settings["LT"])
        prepared[sc.id] = (mv, base, factored)
    runs_path = out / "runs.csv"
    done = _read_runs(runs_path)
    _write_runs(runs_path, done)  # drops any torn trailing line before appending
    for sid, (mv, base, factored) in prepared.items():
        demand = DemandSpec(mv, cfg.phf, cfg.profile)
        plans = (("base", base), ("factored", factored))
        for seed in cfg.seed_list:
            if all((sid, seed, p) in done for p in PLANS):
                continue
            tasks.append((net, demand, plans, seed, sid, cfg.warmup_s, cfg.analysis_s, sparams))
    _write_manifest(manifest_path, cfg, chash, scenarios, failed, done, complete=False)

    workers = resolve_workers(cfg)
    with open(runs_path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")

        def sink(rows):
            for row in rows:
                done[(row[0], row[1], row[2])] = row
                w.writerow(_format_row(row))
            fh.flush()
            if progress:
                progress(len(done))

        if workers == 1 or len(tasks) <= 1:
            for t in tasks:
                sink(_run_task(t))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for rows in pool.map(_run_task, tasks, chunksize=1):
                    sink(rows)
    _write_runs(runs_path, done)

    records = []
    for sc in scenarios:
        if sc.id in failed:
            continue
        by_plan = {p: [done[(sc.id, s, p)] for s in cfg.seed_list] for p in PLANS}
        b, f = _mean_delay(by_plan["base"]), _mean_delay(by_plan["factored"])
        try:
            records.append(DRPRecord(sc.id, b, f, compute_drp(b, f)))
        except ValueError as exc:
            failed[sc.id] = str(exc)
    _write_drp(out / "drp.csv", design, scenarios, records, failed)

    n_fail = len(failed)
    if n_fail > FAILURE_LIMIT * len(scenarios):
        _write_manifest(manifest_path, cfg, chash, scenarios, failed, done, complete=False)
        raise ExperimentError(f"{n_fail} of {len(scenarios)} scenarios failed (limit {FAILURE_LIMIT:.0%})")

    report, fit_error = None, None
    try:
        report = fit_store(design, records, done, cfg)
    except (RankDeficiencyError, ValueError) as exc:
        fit_error = str(exc)
    if report is not None:
        rsm.write_effects_csv(report, out / "effects.csv")
        if cfg.plots:
            rsm.plot_profiles(report.fit, out / "plots")
    elif (out / "effects.csv").exists():
        (out / "effects.csv").unlink()
    (out / "report.md").write_text(render_report(cfg, scenarios, records, failed, report, fit_error))
    _write_manifest(manifest_path, cfg, chash, scenarios, failed, done, complete=True)
    return ExperimentResult(cfg, design, scenarios, records, failed, report, fit_error, out)


def fit_store(design, records, runs, cfg):
    """RSM fit of DRP on the design rows of successful scenarios."""
    index = {f"S{i + 1:03d}": i for i in range(design.n_runs)}
    rows, y = [], []
    for rec in records:
        i = index[rec.scenario_id]
        if cfg.response == "scenario":
            rows.append(i)
            y.append(rec.drp)
        else:
            for s in cfg.seed_list:
                b = runs[(rec.scenario_id, s, "base")][3]
                f = runs[(rec.scenario_id, s, "factored")][3]
                rows.append(i)
                y.append(compute_drp(b, f))
    sub = replace(design, natural=design.natural[rows])
    fit = rsm.fit_rsm(sub, np.array(y))
    return rsm.regression_report(fit)


def _write_drp(path, design, scenarios, records, failed):
    by_id = {r.scenario_id: r for r in records}
    names = design.space.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario_id", *names, "base_delay_s", "factored_delay_s", "drp_pct", "status"])
        for sc in scenarios:
            vals = [repr(float(sc.settings[n])) for n in names]
            r = by_id.get(sc.id)
            if r is None:
                w.writerow([sc.id, *vals, "", "", "", "failed"])
            else:
                w.writerow([sc.id, *vals, repr(r.base_delay), repr(r.factored_delay), repr(r.drp), "ok"])


def read_drp_csv(path):
    with open(path, newline="") as fh:
        return [r for r in csv.DictReader(fh)]


def _write_manifest(path, cfg, chash, scenarios, failed, done, complete):
    completion = {}
    for sc in scenarios:
        if sc.id in failed:
            completion[sc.id] = "failed"
        else:
            n = sum((sc.id, s, p) in done for s in cfg.seed_list for p in PLANS)
            completion[sc.id] = f"{n}/{2 * cfg.seeds}"
    doc = {"schema": "actf-store/1", "config_hash": chash, "config": cfg.to_document(),
           "complete": complete, "completion": completion, "failed": dict(sorted(failed.items()))}
    doc["config"].pop("output")
    doc["config"].pop("workers")
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def render_report(cfg, scenarios, records, failed, report, fit_error):
    drps = np.array([r.drp for r in records]) if records else np.empty(0)
    lines = ["# ActF experiment report", "",
             f"- scenarios: {len(scenarios)} ({len(records)} ok, {len(failed)} failed)",
             f"- seeds per scenario: {cfg.seeds}; simulated runs: {2 * cfg.seeds * len(records)}",
             f"- warm-up {cfg.warmup_s:g} s, analysis {cfg.analysis_s:g} s, response: {cfg.response}"]
    if drps.size:
        lines.append(f"- DRP (%): mean {drps.mean():.3f}, min {drps.min():.3f}, max {drps.max():.3f}")
    by_actf = {}
    for sc in scenarios:
        for r in records:
            if r.scenario_id == sc.id:
                by_actf.setdefault(sc.settings["ActF"], []).append(r.drp)
    if by_actf:
        lines += ["", "## Mean DRP by ActF", "", "| ActF | scenarios | mean DRP (%) |", "|---|---|---|"]
        for a in sorted(by_actf):
            lines.append(f"| {a:.2f} | {len(by_actf[a])} | {np.mean(by_actf[a]):.3f} |")
    if failed:
        lines += ["", "## Failed scenarios", ""]
        lines += [f"- {sid}: {why}" for sid, why in sorted(failed.items())]
    lines.append("")
    if report is not None:
        body = rsm.render_markdown(report, REFERENCE_ACTF, title="Response-surface fit")
        lines.append(body.replace("# Response-surface fit", "## Response-surface fit", 1)
                     .replace("\n## ", "\n### "))
    else:
        lines += ["## Response-surface fit", "", f"not available: {fit_error}", ""]
    return "\n".join(lines).rstrip("\n") + "\n"


@dataclass
class ResultStore:
    config: ExperimentConfig
    design: object
    scenarios: list
    drp: list
    failed: dict
    runs: dict
    directory: Path


def load_store(directory, response=None):
    """Read back a result store written by :func:`run_experiment`."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError:
        raise ExperimentError(f"{d} is not a result store (no manifest.json)") from None
    doc = dict(manifest["config"])
    doc.update(output=str(d))
    if response:
        doc["response"] = response
    cfg = config_from_document(doc)
    design = read_design_csv(d / "design.csv", cfg.factors, cfg.model_spec())
    scenarios = [Scenario(f"S{i + 1:03d}", row) for i, row in enumerate(design.rows())]
    records, failed = [], dict(manifest.get("failed", {}))
    for r in read_drp_csv(d / "drp.csv"):
        if r["status"] == "ok":
            records.append(DRPRecord(r["scenario_id"], float(r["base_delay_s"]),
                                     float(r["factored_delay_s"]), float(r["drp_pct"])))
    return ResultStore(cfg, design, scenarios, records, failed, _read_runs(d / "runs.csv"), d)


def analyze_store(directory, response=None):
    """Refit the response surface from an existing result store."""
    st = load_store(directory, response)
    return fit_store(st.design, st.drp, st.runs, st.config), st


def render_store(directory, plots=False):
    """Re-render ``report.md`` (and optionally profile plots) of a result store; returns its text."""
    st = load_store(directory)
    report, err = None, None
    try:
        report = fit_store(st.design, st.drp, st.runs, st.config)
    except (RankDeficiencyError, ValueError) as exc:
        err = str(exc)
    if plots and report is not None:
        rsm.plot_profiles(report.fit, st.directory / "plots")
    return render_report(st.config, st.scenarios, st.drp, st.failed, report, err)


def mechanistic_drp(actf=REFERENCE_ACTF, seeds=range(1, 11), side_scale=1.3, lt=20,
                    warmup_s=900.0, analysis_s=3600.0, net=None, volumes=None):
    """Per-seed DRP on the reference arterial with side arrivals above the design volumes.

    The base plan is built from ``volumes`` (default: reference counts); the
    simulation scales side-street arrivals by ``side_scale``.
    Returns (per-seed DRP list, coordinated degree of saturation).
    """
    net = net or reference_network()
    ext = volumes or reference_volumes()
    mv = expand_volumes(net, ext, lt)
    base = optimize_base_plan(net, mv)
    factored = apply_actf(base, actf).plan
    sim_mv = expand_volumes(net, ext.scaled(side=side_scale), lt)
    demand = DemandSpec(sim_mv)
    out = []
    for s in seeds:
        b = run_simulation(net, demand, base, s, warmup_s, analysis_s, scenario_id="mech")
        f = run_simulation(net, demand, factored, s, warmup_s, analysis_s, scenario_id="mech")
        out.append(compute_drp(b.avg_delay, f.avg_delay))
    return out, coordinated_saturation(net, mv, base)

