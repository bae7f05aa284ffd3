"""Command-line entry point ``actf``.

Exit status is 0 on success, 1 when a command fails (bad input document,
invalid plan, failed experiment) and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import calibration, design, harness, rsm, sim, timing
from .errors import ActfError, SchemaError, ValidationError
from .network import ExternalVolumes, expand_volumes, load_network, parse_network, reference_network, reference_volumes


def _out(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _network(path):
    return load_network(path) if path else reference_network()


def _volumes(net, path, lt):
    """Movement volumes from a JSON mapping of factor names (VolEB, VolSS_NB1, ..., optional LT)."""
    if path is None:
        ext = reference_volumes()
        lt = 20.0 if lt is None else lt
    else:
        doc = json.loads(Path(path).read_text())
        try:
            ext = ExternalVolumes.from_factors(doc, len(net.intersections))
        except KeyError as exc:
            raise SchemaError(str(exc.args[0]), "missing volume in volumes document") from None
        lt = float(doc.get("LT", 20.0)) if lt is None else lt
    return ext, expand_volumes(net, ext, lt)


def cmd_net_validate(args):
    if args.network is None:
        net = reference_network()
    else:
        text = Path(args.network).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError("<root>", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
        net = parse_network(doc)  # raises with the full finding list
    print(f"ok: {len(net.intersections)} intersections, {len(net.links)} links, {len(net.externals)} external entries")
    return 0


def cmd_plan_base(args):
    net = _network(args.network)
    _, mv = _volumes(net, args.volumes, args.lt)
    params = timing.WebsterParams(sat_flow=args.sat_flow, phf=args.phf)
    plan = timing.optimize_base_plan(net, mv, params)
    _out(timing.dumps_plan(plan), args.output)
    return 0


def cmd_plan_actf(args):
    base = timing.require_valid(timing.load_plan(args.plan))
    res = timing.apply_actf(base, args.factor)
    for (iid, ring), agt in sorted(res.added_green_time.items()):
        print(f"{iid} ring {ring}: added green time {agt:.4g} s", file=sys.stderr)
    if res.clamp_applied:
        print("warning: coordinated green clamped at its minimum", file=sys.stderr)
    _out(timing.dumps_plan(res.plan), args.output)
    return 0


def cmd_sim_run(args):
    net = _network(args.network)
    _, mv = _volumes(net, args.volumes, args.lt)
    plan = timing.require_valid(timing.load_plan(args.plan))
    params = sim.SimParams(dt=args.dt, sat_flow=args.sat_flow)
    demand = sim.DemandSpec(mv, args.phf, args.profile)
    r = sim.run_simulation(net, demand, plan, args.seed, args.warmup, args.analysis, params,
                           scenario_id=args.scenario_id)
    if args.output:
        sim.write_results_csv([r], args.output, args.links)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(sim.RUN_FIELDS)
        w.writerow(sim.run_row(r))
    print(f"average delay {r.avg_delay:.3f} s/veh over {r.veh_completed} vehicles"
          f"{'; spillback observed' if r.spillback else ''}", file=sys.stderr)
    return 0


def _read_link_counts(path):
    """``link,count`` or a ``sim run --links`` file (link_id,count) summed over rows."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            link = row.get("link", row.get("link_id"))
            if link is None or "count" not in row:
                raise SchemaError(path, "expected columns link (or link_id) and count")
            out[link] = out.get(link, 0.0) + float(row["count"])
    return out


def cmd_calibrate(args):
    net = _network(args.network)
    if args.estimates:
        est = _read_link_counts(args.estimates)
    elif args.plan:
        _, mv = _volumes(net, args.volumes, args.lt)
        plan = timing.require_valid(timing.load_plan(args.plan))
        r = sim.run_simulation(net, sim.DemandSpec(mv), plan, args.seed, args.warmup, args.analysis)
        est = {k: v * 3600.0 / args.analysis for k, v in r.link_counts.items()}
    else:
        raise SystemExit(_usage("calibrate needs --estimates or --plan"))
    if args.counts:
        targets = _read_link_counts(args.counts)
    else:
        _, mv = _volumes(net, args.volumes, args.lt)
        targets = calibration.expected_link_volumes(net, mv)
    report = calibration.check_calibration(calibration.pair_counts(est, targets), alternate=args.alternate)
    if args.output:
        calibration.write_report_csv(report, args.output)
    else:
        for lk in report.links:
            print(f"{lk.link:>12} E={lk.estimate:8.1f} V={lk.count:8.1f} GEH={lk.geh:6.3f} {'ok' if lk.passed else 'FAIL'}")
    print(report.summary())
    return 0 if report.passed or not args.strict else 1


def cmd_doe_generate(args):
    space = design.default_space()
    if args.factors:
        space = design.FactorSpace.from_document(json.loads(Path(args.factors).read_text()))
    model = design.ModelSpec.parse(args.model, space.names)
    d = design.generate_design(space, args.runs, args.seed, model, restarts=args.restarts)
    design.write_design_csv(d, args.output)
    eff = design.d_efficiency(d)
    print(f"{d.n_runs} runs x {len(space)} factors, {model.p} model terms; "
          f"log det(X'X) = {d.log_det:.4f}, D-efficiency {eff:.4f}", file=sys.stderr)
    return 0


def cmd_experiment_run(args):
    cfg = harness.load_config(args.config)
    changes = {}
    if args.output:
        changes["output"] = args.output
    if args.workers:
        changes["workers"] = args.workers
    if args.plots:
        changes["plots"] = True
    if changes:
        cfg = replace(cfg, **changes)
    total = 2 * cfg.seeds * cfg.n_runs

    def progress(n):
        if not args.quiet:
            print(f"\r{n}/{total} runs", end="", file=sys.stderr, flush=True)

    res = harness.run_experiment(cfg, progress)
    if not args.quiet:
        print(file=sys.stderr)
    opt = res.report.optimum if res.report is not None else None
    print(f"store: {res.output}; {len(res.drp)} scenarios ok, {len(res.failed)} failed")
    if opt is not None:
        print(f"estimated optimal ActF {opt.value:.4f} ({'concave' if opt.concave else 'not concave'}); "
              f"reference {harness.REFERENCE_ACTF:.2f}")
    elif res.fit_error:
        print(f"fit not available: {res.fit_error}")
    return 0


def cmd_analyze_fit(args):
    report, st = harness.analyze_store(args.store, args.response)
    out = args.output or str(Path(args.store) / "effects.csv")
    rsm.write_effects_csv(report, out)
    print(f"{st.config.model_spec().kind} model, {report.fit.model.p} parameters, "
          f"{report.fit.n} observations; effects written to {out}")
    if report.optimum is not None:
        o = report.optimum
        print(f"estimated optimal ActF {o.value:.4f} ({'concave' if o.concave else 'not concave'})")
    return 0


def cmd_report_render(args):
    text = harness.render_store(args.store, plots=args.plots)
    _out(text, args.output)
    return 0


def _usage(msg):
    print(f"actf: error: {msg}", file=sys.stderr)
    return 2


def build_parser():
    p = argparse.ArgumentParser(prog="actf", description="Actuated-factor signal timing experiments.")
    sub = p.add_subparsers(dest="group", metavar="{net,plan,sim,calibrate,doe,experiment,analyze,report}")
    sub.required = True

    def network_opts(q, volumes=True):
        q.add_argument("--network", help="network document (default: built-in reference arterial)")
        if volumes:
            q.add_argument("--volumes", help="JSON mapping of VolEB, VolWB, VolSS_NB1.., VolSS_SB1.., LT")
            q.add_argument("--lt", type=float, help="left-turn percentage (overrides the volumes file)")

    net = sub.add_parser("net", help="network documents").add_subparsers(dest="cmd", metavar="{validate}")
    net.required = True
    q = net.add_parser("validate", help="parse and validate a network document")
    q.add_argument("network", nargs="?")
    q.set_defaults(func=cmd_net_validate)

    plan = sub.add_parser("plan", help="timing plans").add_subparsers(dest="cmd", metavar="{base,actf}")
    plan.required = True
    q = plan.add_parser("base", help="Webster base plan for given volumes")
    network_opts(q)
    q.add_argument("--sat-flow", type=float, default=1900.0)
    q.add_argument("--phf", type=float, default=0.92)
    q.add_argument("-o", "--output")
    q.set_defaults(func=cmd_plan_base)
    q = plan.add_parser("actf", help="apply an actuated factor to a plan")
    q.add_argument("plan")
    q.add_argument("--factor", type=float, required=True)
    q.add_argument("-o", "--output")
    q.set_defaults(func=cmd_plan_actf)

    s = sub.add_parser("sim", help="simulation").add_subparsers(dest="cmd", metavar="{run}")
    s.required = True
    q = s.add_parser("run", help="simulate one plan with one seed")
    network_opts(q)
    q.add_argument("--plan", required=True)
    q.add_argument("--seed", type=int, required=True)
    q.add_argument("--scenario-id", default="run")
    q.add_argument("--warmup", type=float, default=900.0)
    q.add_argument("--analysis", type=float, default=3600.0)
    q.add_argument("--dt", type=float, default=0.1)
    q.add_argument("--sat-flow", type=float, default=1900.0)
    q.add_argument("--phf", type=float, default=0.92)
    q.add_argument("--profile", choices=sim.PROFILES, default="flat")
    q.add_argument("-o", "--output", help="runs CSV (default: stdout)")
    q.add_argument("--links", help="companion per-link counts CSV (needs --output)")
    q.set_defaults(func=cmd_sim_run)

    q = sub.add_parser("calibrate", help="GEH check of link volumes")
    network_opts(q)
    q.add_argument("--estimates", help="model link counts CSV (link,count); otherwise simulate --plan")
    q.add_argument("--plan")
    q.add_argument("--seed", type=int, default=1)
    q.add_argument("--warmup", type=float, default=900.0)
    q.add_argument("--analysis", type=float, default=3600.0)
    q.add_argument("--counts", help="field counts CSV (link,count); default: volumes implied by --volumes")
    q.add_argument("--alternate", action="store_true", help="use the half-valued GEH convention")
    q.add_argument("--strict", action="store_true", help="exit 1 when calibration fails")
    q.add_argument("-o", "--output")
    q.set_defaults(func=cmd_calibrate)

    d = sub.add_parser("doe", help="experimental design").add_subparsers(dest="cmd", metavar="{generate}")
    d.required = True
    q = d.add_parser("generate", help="D-optimal design")
    q.add_argument("--runs", type=int, default=72)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--model", default="rsm")
    q.add_argument("--restarts", type=int, default=4)
    q.add_argument("--factors", help="JSON list of factor documents (default: ten-factor space)")
    q.add_argument("-o", "--output", required=True)
    q.set_defaults(func=cmd_doe_generate)

    e = sub.add_parser("experiment", help="full pipeline").add_subparsers(dest="cmd", metavar="{run}")
    e.required = True
    q = e.add_parser("run", help="run or resume an experiment")
    q.add_argument("config")
    q.add_argument("--output")
    q.add_argument("--workers", type=int)
    q.add_argument("--plots", action="store_true")
    q.add_argument("-q", "--quiet", action="store_true")
    q.set_defaults(func=cmd_experiment_run)

    a = sub.add_parser("analyze", help="regression").add_subparsers(dest="cmd", metavar="{fit}")
    a.required = True
    q = a.add_parser("fit", help="refit the response surface of a result store")
    q.add_argument("store")
    q.add_argument("--response", choices=("scenario", "run"))
    q.add_argument("-o", "--output", help="effects CSV (default: <store>/effects.csv)")
    q.set_defaults(func=cmd_analyze_fit)

    r = sub.add_parser("report", help="reports").add_subparsers(dest="cmd", metavar="{render}")
    r.required = True
    q = r.add_parser("render", help="render the markdown report of a result store")
    q.add_argument("store")
    q.add_argument("--plots", action="store_true")
    q.add_argument("-o", "--output")
    q.set_defaults(func=cmd_report_render)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)  # exits 2 on usage errors
    try:
        return args.func(args)
    except ValidationError as exc:
        print("actf: validation failed:", file=sys.stderr)
        for f in exc.findings:
            print(f"  - {f}", file=sys.stderr)
        return 1
    except (ActfError, ValueError, KeyError, OSError) as exc:
        print(f"actf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
