"""Timing plans: Webster baseline, actuated-factor transform and fixed force-offs.

Conventions
-----------
* Cycle clock zero at an intersection is the start of phase 2 green; the
  intersection's offset shifts that instant relative to the system clock.
* Greens are effective greens. Yellow and red clearance are fixed per phase
  and never touched by the transform.
* Ring 1 runs 1-2 | 3-4 and ring 2 runs 5-6 | 7-8 (leading protected lefts),
  so after the coordinated green the service order is 2, 3, 4, 1 and 6, 7, 8, 5.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

from .errors import InfeasibleDesignError, SchemaError, ValidationError

PLAN_SCHEMA = "actf-plan/1"
RINGS = ((1, 2, 3, 4), (5, 6, 7, 8))
RING_COORDINATED = (2, 6)
SIDE_A = (1, 2, 5, 6)
SIDE_B = (3, 4, 7, 8)
# service order starting from each ring's coordinated phase
RING_SEQUENCE = ((2, 3, 4, 1), (6, 7, 8, 5))
RING_SUM_TOL = 1e-6


@dataclass(frozen=True)
class PhaseTiming:
    green: float
    yellow: float = 3.0
    red_clearance: float = 1.0
    min_green: float = 7.0
    coordinated: bool = False

    @property
    def clearance(self):
        return self.yellow + self.red_clearance

    @property
    def split(self):
        return self.green + self.yellow + self.red_clearance


@dataclass(frozen=True)
class IntersectionTiming:
    id: str
    offset: float
    phases: Mapping[int, PhaseTiming]

    def ring_length(self, ring):
        return sum(self.phases[p].split for p in RINGS[ring] if p in self.phases)


@dataclass(frozen=True)
class TimingPlan:
    cycle_length: float
    intersections: tuple[IntersectionTiming, ...]
    provenance: str = "base"

    def intersection(self, iid):
        for x in self.intersections:
            if x.id == iid:
                return x
        raise KeyError(f"unknown intersection {iid!r}")

    @property
    def ids(self):
        return [x.id for x in self.intersections]

    def greens(self, iid):
        return {p: t.green for p, t in self.intersection(iid).phases.items()}


@dataclass(frozen=True)
class Finding:
    kind: str
    intersection: str
    detail: str

    def __str__(self):
        return f"{self.kind} at {self.intersection}: {self.detail}"


def validate_plan(plan):
    """List every violated plan invariant; an empty list means the plan is valid."""
    out = []
    C = plan.cycle_length
    if not (isinstance(C, (int, float)) and C > 0 and math.isfinite(C)):
        return [Finding("cycle", "*", f"cycle length {C!r} must be positive")]
    for x in plan.intersections:
        if not 0 <= x.offset < C:
            out.append(Finding("offset-range", x.id, f"offset {x.offset} outside [0, {C})"))
        for p, t in sorted(x.phases.items()):
            if min(t.green, t.yellow, t.red_clearance, t.min_green) < 0:
                out.append(Finding("negative-interval", x.id, f"phase {p} has a negative interval"))
            if t.green < t.min_green - 1e-9:
                out.append(Finding("min-green violation", x.id,
                                   f"phase {p} green {t.green:g} < min green {t.min_green:g}"))
        for r, ring in enumerate(RINGS):
            coord = [p for p in ring if p in x.phases and x.phases[p].coordinated]
            if coord != [RING_COORDINATED[r]]:
                out.append(Finding("coordination", x.id,
                                   f"ring {r + 1} must have exactly phase {RING_COORDINATED[r]} coordinated, got {coord}"))
            total = x.ring_length(r)
            if abs(total - C) > RING_SUM_TOL:
                out.append(Finding("ring-length mismatch", x.id,
                                   f"ring {r + 1} sums to {total:g} s, cycle is {C:g} s"))
    return out


def require_valid(plan):
    findings = validate_plan(plan)
    if findings:
        raise ValidationError([str(f) for f in findings])
    return plan


# ---------------------------------------------------------------------------
# Webster baseline


@dataclass(frozen=True)
class WebsterParams:
    sat_flow: float = 1900.0  # veh/h/lane
    lost_time_per_phase: float = 4.0
    min_cycle: float = 60.0
    max_cycle: float = 150.0
    phf: float = 0.92
    yellow: float = 3.0
    red_clearance: float = 1.0
    min_green_coordinated: float = 2.0
    min_green_actuated: float = 7.0
    cycle_step: float = 5.0


def webster_cycle(lost_time, flow_ratio_sum, min_cycle=0.0, max_cycle=math.inf, step=5.0):
    """Webster's optimum cycle, clamped to [min_cycle, max_cycle] and rounded up to ``step``."""
    if flow_ratio_sum >= 1.0:
        raise InfeasibleDesignError(f"critical flow ratio sum Y={flow_ratio_sum:.3f} >= 1 (oversaturated)")
    c0 = (1.5 * lost_time + 5.0) / (1.0 - flow_ratio_sum)
    c = min(max(c0, min_cycle), max_cycle)
    c = math.ceil(c / step - 1e-9) * step
    return min(c, max_cycle) if max_cycle < math.inf else c


def flow_ratios(net, vols, params):
    """Design flow ratio per (intersection, phase)."""
    out = {}
    for x in net.intersections:
        for p, mv in x.phases.items():
            link = net.inbound_link(x.id, mv.approach)
            group = "L" if mv.turn == "L" else "T"
            lanes = link.lanes.get(group, link.lanes["T"])
            v = vols.phase_volume(net, x.id, p) / params.phf
            out[(x.id, p)] = v / (params.sat_flow * lanes)
    return out


def _critical(y, iid):
    side_a = max(y[(iid, 1)] + y[(iid, 2)], y[(iid, 5)] + y[(iid, 6)])
    side_b = max(y[(iid, 3)] + y[(iid, 4)], y[(iid, 7)] + y[(iid, 8)])
    return side_a, side_b


def _split_pair(total, y_p, y_q, min_p, min_q):
    if y_p + y_q > 0:
        g_p = total * y_p / (y_p + y_q)
    else:
        g_p = total / 2.0
    g_p = min(max(g_p, min_p), total - min_q)
    return g_p, total - g_p


def optimize_base_plan(net, vols, params=None):
    """Baseline coordinated plan: common Webster cycle, ratio-proportional splits, EB progression offsets."""
    params = params or WebsterParams()
    y = flow_ratios(net, vols, params)
    clr = params.yellow + params.red_clearance
    lost = 4 * params.lost_time_per_phase
    cycle = 0.0
    for x in net.intersections:
        ya, yb = _critical(y, x.id)
        try:
            cycle = max(cycle, webster_cycle(lost, ya + yb, params.min_cycle, params.max_cycle, params.cycle_step))
        except InfeasibleDesignError as exc:
            raise InfeasibleDesignError(f"intersection {x.id}: {exc}") from None

    def min_g(p):
        return params.min_green_coordinated if p in RING_COORDINATED else params.min_green_actuated

    offsets = {}
    t = 0.0
    for k, x in enumerate(net.intersections):
        if k:
            t += net.inbound_link(x.id, "W").travel_time
        offsets[x.id] = t % cycle

    inters = []
    for x in net.intersections:
        ya, yb = _critical(y, x.id)
        d_a_min = max(min_g(1) + min_g(2), min_g(5) + min_g(6)) + 2 * clr
        d_b_min = max(min_g(3) + min_g(4), min_g(7) + min_g(8)) + 2 * clr
        if d_a_min + d_b_min > cycle + 1e-9:
            raise InfeasibleDesignError(f"intersection {x.id}: minimum greens need {d_a_min + d_b_min:g} s "
                                        f"but the cycle is {cycle:g} s")
        green_total = cycle - 4 * clr
        share_a = ya / (ya + yb) if ya + yb > 0 else 0.5
        d_a = min(max(clr * 2 + green_total * share_a, d_a_min), cycle - d_b_min)
        d_b = cycle - d_a
        greens = {}
        for (p, q), dur in (((1, 2), d_a), ((5, 6), d_a), ((3, 4), d_b), ((7, 8), d_b)):
            greens[p], greens[q] = _split_pair(dur - 2 * clr, y[(x.id, p)], y[(x.id, q)], min_g(p), min_g(q))
        phases = {
            p: PhaseTiming(greens[p], params.yellow, params.red_clearance, min_g(p), p in RING_COORDINATED)
            for p in range(1, 9)
        }
        inters.append(IntersectionTiming(x.id, offsets[x.id], phases))
    return require_valid(TimingPlan(float(cycle), tuple(inters), "base"))


# ---------------------------------------------------------------------------
# actuated-factor transform


@dataclass(frozen=True)
class ActFTransformResult:
    plan: TimingPlan
    added_green_time: Mapping[tuple[str, int], float]  # (intersection, ring number) -> seconds
    clamp_applied: bool


def apply_actf(base, actf):
    """Scale non-coordinated greens by ``actf`` and take the added time from each ring's coordinated phase.

    When a coordinated green would fall below its minimum it is held at the
    minimum and the non-coordinated additions in that ring are scaled down
    proportionally so the ring length is preserved.
    """
    if not actf >= 1.0:
        raise ValueError(f"actuated factor must be >= 1, got {actf}")
    require_valid(base)
    if actf == 1.0:
        agt = {(x.id, r + 1): 0.0 for x in base.intersections for r in range(2)}
        return ActFTransformResult(base, agt, False)
    clamped = False
    agt = {}
    inters = []
    for x in base.intersections:
        phases = dict(x.phases)
        for r, ring in enumerate(RINGS):
            coord = RING_COORDINATED[r]
            others = [p for p in ring if p != coord and p in phases]
            adds = {p: (actf - 1.0) * phases[p].green for p in others}
            added = sum(adds.values())
            ct = phases[coord]
            if ct.green - added < ct.min_green:
                clamped = True
                room = ct.green - ct.min_green
                scale = room / added if added > 0 else 0.0
                adds = {p: a * scale for p, a in adds.items()}
                added = room
                new_coord = ct.min_green
            else:
                new_coord = ct.green - added
            for p in others:
                phases[p] = replace(phases[p], green=phases[p].green + adds[p])
            phases[coord] = replace(ct, green=new_coord)
            agt[(x.id, r + 1)] = added
        inters.append(IntersectionTiming(x.id, x.offset, phases))
    plan = TimingPlan(base.cycle_length, tuple(inters), f"factored({actf:g})")
    return ActFTransformResult(plan, agt, clamped)


# ---------------------------------------------------------------------------
# schedules and force-offs


@dataclass(frozen=True)
class ScheduledPhase:
    phase: int
    green_start: float  # local cycle clock
    green_end: float  # local cycle clock, may exceed the cycle for the wrap-around phase


def ring_schedule(plan, iid):
    """Planned green windows per ring in the local cycle clock (0 = phase 2 green start).

    Ring 2 enters the far side of the barrier at the instant ring 1 does.
    """
    x = plan.intersection(iid)
    ph = x.phases
    barrier = ph[2].split
    out = []
    for r, seq in enumerate(RING_SEQUENCE):
        t = 0.0 if r == 0 else barrier
        order = seq if r == 0 else seq[1:] + seq[:1]
        rows = []
        for p in order:
            rows.append(ScheduledPhase(p, t, t + ph[p].green))
            t += ph[p].split
        if r == 1:
            rows = rows[-1:] + rows[:-1]  # report coordinated phase first
        out.append(tuple(rows))
    return tuple(out)


@dataclass(frozen=True)
class ForceOffTable:
    """Fixed force-off points (system cycle clock) for non-coordinated phases,
    plus coordinated yield points."""

    cycle_length: float
    points: Mapping[str, Mapping[int, float]]
    yield_points: Mapping[str, Mapping[int, float]]
    mode: str = "fixed"

    def local(self, plan, iid):
        off = plan.intersection(iid).offset
        C = self.cycle_length
        return {p: (t - off) % C for p, t in self.points[iid].items()}


def compute_force_offs(plan):
    require_valid(plan)
    C = plan.cycle_length
    points, yields = {}, {}
    for x in plan.intersections:
        pts, ys = {}, {}
        for ring in ring_schedule(plan, x.id):
            for s in ring:
                target = ys if x.phases[s.phase].coordinated else pts
                target[s.phase] = (s.green_end + x.offset) % C
        points[x.id] = dict(sorted(pts.items()))
        yields[x.id] = dict(sorted(ys.items()))
    return ForceOffTable(C, points, yields)


# ---------------------------------------------------------------------------
# plan documents


def plan_to_document(plan):
    return {
        "schema": PLAN_SCHEMA,
        "cycle_s": plan.cycle_length,
        "provenance": plan.provenance,
        "intersections": [
            {
                "id": x.id,
                "offset_s": x.offset,
                "phases": {
                    str(p): {"green_s": t.green, "yellow_s": t.yellow, "rc_s": t.red_clearance,
                             "min_green_s": t.min_green, "coordinated": t.coordinated}
                    for p, t in sorted(x.phases.items())
                },
            }
            for x in plan.intersections
        ],
    }


def dumps_plan(plan):
    return json.dumps(plan_to_document(plan), indent=2) + "\n"


def _num(doc, key, path):
    if key not in doc:
        raise SchemaError(f"{path}.{key}", "missing required field")
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{path}.{key}", "expected a number")
    return float(v)


def plan_from_document(doc):
    if doc.get("schema", PLAN_SCHEMA) != PLAN_SCHEMA:
        raise SchemaError("schema", f"expected {PLAN_SCHEMA!r}")
    if "intersections" not in doc or not isinstance(doc["intersections"], list):
        raise SchemaError("intersections", "missing required list")
    inters = []
    for i, xd in enumerate(doc["intersections"]):
        path = f"intersections[{i}]"
        phases = {}
        for key, pd in dict(xd.get("phases", {})).items():
            pp = f"{path}.phases.{key}"
            phases[int(key)] = PhaseTiming(
                _num(pd, "green_s", pp), _num(pd, "yellow_s", pp), _num(pd, "rc_s", pp),
                _num(pd, "min_green_s", pp), bool(pd.get("coordinated", False)),
            )
        if "id" not in xd:
            raise SchemaError(f"{path}.id", "missing required field")
        inters.append(IntersectionTiming(str(xd["id"]), _num(xd, "offset_s", path), dict(sorted(phases.items()))))
    return TimingPlan(_num(doc, "cycle_s", ""), tuple(inters), str(doc.get("provenance", "base")))


def load_plan(source):
    if isinstance(source, Mapping):
        return plan_from_document(source)
    text = Path(source).read_text() if not str(source).lstrip().startswith("{") else source
    try:
        return plan_from_document(json.loads(text))
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"not valid JSON ({exc.msg})") from None


def single_ring_plan(greens, cycle=None, offset=0.0, iid="I1", min_green=None, yellow=3.0, red_clearance=1.0):
    """Convenience constructor: ring 2 mirrors ring 1 (phase p+4 copies phase p)."""
    min_green = min_green or {}
    phases = {}
    for p in (1, 2, 3, 4):
        coord = p == 2
        mg = min_green.get(p, 2.0 if coord else 7.0)
        phases[p] = PhaseTiming(greens[p], yellow, red_clearance, mg, coord)
        phases[p + 4] = PhaseTiming(greens[p], yellow, red_clearance, mg, coord)
    if cycle is None:
        cycle = sum(t.split for p, t in phases.items() if p <= 4)
    return TimingPlan(float(cycle), (IntersectionTiming(iid, offset, dict(sorted(phases.items()))),))
