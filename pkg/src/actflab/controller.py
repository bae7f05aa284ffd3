"""Dual-ring, eight-phase semi-actuated coordinated controller.

The controller works on an integer tick grid (``dt`` seconds per tick). All
timers are stored as tick stamps rather than accumulated counters, so a caller
may skip ticks on which nothing can happen: :meth:`Controller.tick` returns
immediately unless the detector inputs changed or ``k`` has reached
:attr:`Controller.wake`. Stepping every tick and stepping only at wake points
produce identical indications.

Cycle positions are measured per ring relative to the coordinated phase's
yield point (``u = 0`` at the planned end of coordinated green). A
non-coordinated phase may be started only if its minimum green fits before its
fixed force-off; each phase is served at most once per cycle.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .timing import RING_COORDINATED, RING_SEQUENCE, compute_force_offs, ring_schedule, validate_plan

RED, YELLOW, GREEN = 0, 1, 2
NEVER = math.inf

_G, _Y, _R, _D = "G", "Y", "R", "D"
_SIDE_B_ORDER = ((3, 4), (7, 8))
_LEFTS = (1, 5)
_ACTUATED = (1, 3, 4, 5, 7, 8)
_RING_OF = {p: (0 if p <= 4 else 1) for p in range(1, 9)}


def _ticks(seconds, dt):
    return int(round(seconds / dt))


@dataclass
class RingState:
    phase: int
    interval: str  # G, Y, R or D (dwell in red, waiting at the barrier)
    t0: int  # tick the interval started
    side: str = "A"
    pos: int = -1  # index of the last side-B phase served this visit
    max_end: float = NEVER  # max-out / force-off tick of the current green
    pending: object = None  # what follows the current clearance


@dataclass(frozen=True)
class ControllerState:
    """Read-only snapshot of a controller."""

    tick: int
    cycle_clock: float  # system clock, seconds in [0, C)
    rings: tuple
    calls: tuple
    indications: tuple


class Controller:
    """Semi-actuated coordinated NEMA controller for one intersection of a plan."""

    def __init__(self, plan, iid, dt=0.1, vehicle_extension=2.0, start_tick=None):
        findings = validate_plan(plan)
        if findings:
            raise ValidationError([str(f) for f in findings])
        x = plan.intersection(iid)
        self.plan = plan
        self.iid = iid
        self.dt = dt
        self.force_offs = compute_force_offs(plan)
        C = self.C = _ticks(plan.cycle_length, dt)
        self.offset = _ticks(x.offset, dt)
        ph = x.phases
        self.min_g = {p: _ticks(t.min_green, dt) for p, t in ph.items()}
        self.max_g = {p: _ticks(t.green, dt) for p, t in ph.items()}
        self.yellow = {p: _ticks(t.yellow, dt) for p, t in ph.items()}
        self.red = {p: _ticks(t.red_clearance, dt) for p, t in ph.items()}
        self.ext = _ticks(vehicle_extension, dt)
        sched = ring_schedule(plan, iid)
        # per-ring yield point (local ticks) and force-offs relative to it
        self.yield_local = []
        self.fo_u = {}
        self.coord_start_u = []
        for r, rows in enumerate(sched):
            by_phase = {s.phase: s for s in rows}
            c = RING_COORDINATED[r]
            y = _ticks(by_phase[c].green_end, dt) % C
            self.yield_local.append(y)
            self.coord_start_u.append((_ticks(by_phase[c].green_start, dt) - y) % C)
            for s in rows:
                if s.phase != c:
                    self.fo_u[s.phase] = (_ticks(s.green_end, dt) - y) % C
        if start_tick is None:
            # first tick from the offset at which every ring is in its coordinated green
            start_tick = self.offset + next(
                d for d in range(C)
                if all(self.u(r, self.offset + d) >= self.coord_start_u[r] for r in range(2)))
        self.start_tick = start_tick
        self.rings = [RingState(c, _G, start_tick - C) for c in RING_COORDINATED]
        self.calls = [False] * 9
        self.off_since = [start_tick - C] * 9
        self.served = [None] * 9
        self._presence = None
        self.wake = start_tick
        self.k = start_tick
        self._ind = self._indications()

    # -- clocks ---------------------------------------------------------
    def u(self, r, k):
        return (k - self.offset - self.yield_local[r]) % self.C

    def cycle_index(self, r, k):
        return (k - self.offset - self.yield_local[r]) // self.C

    def cycle_clock(self, k=None):
        k = self.k if k is None else k
        return (k % self.C) * self.dt

    def local_clock(self, k=None):
        k = self.k if k is None else k
        return ((k - self.offset) % self.C) * self.dt

    # -- predicates -------------------------------------------------------
    def _eligible(self, p, k, lead=0):
        """Phase is called, not yet served this cycle and its min green fits before force-off."""
        if not self.calls[p]:
            return False
        r = _RING_OF[p]
        if self.served[p] == self.cycle_index(r, k + lead):
            return False
        return self.fo_u[p] - (self.u(r, k) + lead) >= self.min_g[p]

    def _window_open(self, r, k):
        return self.u(r, k) < self.coord_start_u[r]

    def _coord_ready(self, r, k):
        ring = self.rings[r]
        c = RING_COORDINATED[r]
        return (ring.interval == _G and ring.phase == c and k - ring.t0 >= self.min_g[c]
                and self._window_open(r, k))

    # -- transitions ------------------------------------------------------
    def _start_green(self, r, p, k):
        ring = self.rings[r]
        ring.phase, ring.interval, ring.t0, ring.pending = p, _G, k, None
        if p in RING_COORDINATED:
            ring.max_end = NEVER
            ring.side = "A"
        else:
            self.served[p] = self.cycle_index(r, k)
            ring.max_end = k + min(self.max_g[p], self.fo_u[p] - self.u(r, k))
            ring.side = "B" if p in _SIDE_B_ORDER[r] else "A"
            if ring.side == "B":
                ring.pos = _SIDE_B_ORDER[r].index(p)

    def _terminate(self, r, k, pending=None):
        ring = self.rings[r]
        ring.interval, ring.t0, ring.pending = _Y, k, pending
        ring.max_end = NEVER
        if ring.phase not in RING_COORDINATED:
            self.calls[ring.phase] = False

    def _next_side_b(self, r, k):
        order = _SIDE_B_ORDER[r]
        start = self.rings[r].pos + 1
        for p in order[start:]:
            if self._eligible(p, k):
                return p
        return None

    def _enter_side_b(self, r, k):
        ring = self.rings[r]
        ring.side = "B"
        p = self._next_side_b(r, k)
        if p is None:
            ring.interval, ring.t0, ring.phase = _D, k, ring.phase
        else:
            self._start_green(r, p, k)

    def _clearance_done(self, r, k):
        ring = self.rings[r]
        p = ring.phase
        if p in RING_COORDINATED:
            if ring.pending == "B":
                ring.pos = -1
                self._enter_side_b(r, k)
            else:  # excursion to this ring's leading left
                self._start_green(r, ring.pending, k)
        elif ring.side == "B":
            self._enter_side_b(r, k)
        else:  # leading left finished: coordinated phase follows
            self._start_green(r, RING_COORDINATED[r], k)

    def _step_ring(self, r, k, presence):
        ring = self.rings[r]
        changed = False
        if ring.interval == _G and ring.phase not in RING_COORDINATED:
            p = ring.phase
            if k - ring.t0 >= self.min_g[p]:
                gap = not presence[p] and k - self.off_since[p] >= self.ext
                if gap or k >= ring.max_end:
                    self._terminate(r, k)
                    changed = True
        if ring.interval == _Y and k - ring.t0 >= self.yellow[ring.phase]:
            ring.interval, ring.t0 = _R, ring.t0 + self.yellow[ring.phase]
            changed = True
        if ring.interval == _R and k - ring.t0 >= self.red[ring.phase]:
            self._clearance_done(r, k)
            changed = True
        if ring.interval == _D and ring.side == "B":
            p = self._next_side_b(r, k)
            if p is not None:
                self._start_green(r, p, k)
                changed = True
        return changed

    def _joint(self, k):
        r0, r1 = self.rings
        changed = False
        if r0.interval == _D and r1.interval == _D and r0.side == "B" and r1.side == "B":
            for r in (0, 1):
                left = _LEFTS[r]
                self._start_green(r, left if self._eligible(left, k) else RING_COORDINATED[r], k)
            return True
        calls = self.calls
        want_b = False
        for r in (0, 1):
            c = RING_COORDINATED[r]
            for p in _SIDE_B_ORDER[r]:
                if calls[p] and self._eligible(p, k, self.yellow[c] + self.red[c]):
                    want_b = True
                    break
        if want_b:
            if self._coord_ready(0, k) and self._coord_ready(1, k):
                for r in (0, 1):
                    self._terminate(r, k, "B")
                changed = True
            return changed
        for r in (0, 1):
            c = RING_COORDINATED[r]
            left = _LEFTS[r]
            if calls[left] and self._coord_ready(r, k) and self._eligible(left, k, self.yellow[c] + self.red[c]):
                self._terminate(r, k, left)
                changed = True
        return changed

    # -- public ---------------------------------------------------------
    def tick(self, k, presence):
        """Advance to tick ``k`` with stop-bar presence ``presence[phase]`` (index 0 unused).

        Returns the indication tuple for phases 1-8 holding over ``[k, k+1)``.
        """
        presence = tuple(presence)
        self.k = k
        calls, off_since = self.calls, self.off_since
        if k < self.wake:
            if presence == self._presence:
                return self._ind
            # presence changes that neither place a new call nor touch a timing green
            # only move detector timestamps
            quiet = True
            r0, r1 = self.rings
            for p in _ACTUATED:
                if presence[p] != self._presence[p] and (
                        (presence[p] and not calls[p])
                        or (p == r0.phase and r0.interval == _G)
                        or (p == r1.phase and r1.interval == _G)):
                    quiet = False
                    break
            if quiet:
                for p in _ACTUATED:
                    if presence[p]:
                        off_since[p] = None
                    elif off_since[p] is None:
                        off_since[p] = k
                self._presence = presence
                return self._ind
        for p in _ACTUATED:
            if presence[p]:
                calls[p] = True
                off_since[p] = None
            elif off_since[p] is None:
                off_since[p] = k
        self._presence = presence
        for _ in range(8):
            changed = self._step_ring(0, k, presence)
            changed |= self._step_ring(1, k, presence)
            changed |= self._joint(k)
            if not changed:
                break
        self._ind = self._indications()
        self.wake = self._next_wake(k, presence)
        return self._ind

    def _indications(self):
        ind = [RED] * 8
        for ring in self.rings:
            if ring.interval == _G:
                ind[ring.phase - 1] = GREEN
            elif ring.interval == _Y:
                ind[ring.phase - 1] = YELLOW
        return tuple(ind)

    def _next_wake(self, k, presence):
        calls = self.calls
        for p in _ACTUATED:
            if presence[p] and not calls[p]:
                return k + 1  # occupied detector re-places its call next tick
        best = NEVER
        C = self.C
        for r, ring in enumerate(self.rings):
            p = ring.phase
            c = RING_COORDINATED[r]
            iv = ring.interval
            if iv == _G:
                w = ring.t0 + self.min_g[p]
                if p != c:
                    end = ring.max_end
                    if not presence[p] and self.off_since[p] is not None:
                        end = min(end, self.off_since[p] + self.ext)
                    w = max(w, end)
            elif iv == _Y:
                w = ring.t0 + self.yellow[p]
            elif iv == _R:
                w = ring.t0 + self.red[p]
            else:
                w = NEVER
            if k < w < best:
                best = w
            u = (k - self.offset - self.yield_local[r]) % C
            w = k + C - u  # next yield point / new cycle
            if w < best:
                best = w
            cs = self.coord_start_u[r]
            if u < cs and k + cs - u < best:
                best = k + cs - u  # window closes
            lead = self.yellow[c] + self.red[c]
            cyc = (k - self.offset - self.yield_local[r]) // C
            for q in RING_SEQUENCE[r][1:]:
                # a phase served this cycle stays ineligible until the yield point
                if calls[q] and self.served[q] != cyc:
                    slack = self.fo_u[q] - u - self.min_g[q]
                    # instants at which the min green stops fitting
                    if slack >= lead and k + slack - lead + 1 < best:
                        best = k + slack - lead + 1
                    elif slack >= 0 and k + slack + 1 < best:
                        best = k + slack + 1
        return best

    def snapshot(self):
        return ControllerState(
            self.k, self.cycle_clock(),
            tuple((rg.phase, rg.interval, (self.k - rg.t0) * self.dt) for rg in self.rings),
            tuple(self.calls[1:]), self._ind,
        )


def controller_init(plan, iid, dt=0.1, vehicle_extension=2.0):
    """Controller resting in coordinated green where both rings are first scheduled in it."""
    return Controller(plan, iid, dt=dt, vehicle_extension=vehicle_extension)


# ---------------------------------------------------------------------------
# traces


@dataclass
class SignalTrace:
    """Per-tick indications of one controller."""

    iid: str
    dt: float
    start_tick: int
    indications: np.ndarray  # (n_ticks, 8) of RED/YELLOW/GREEN
    cycle_length: float

    @property
    def times(self):
        return (self.start_tick + np.arange(len(self.indications))) * self.dt

    def write_csv(self, path):
        C = self.cycle_length
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "intersection", *[f"p{p}" for p in range(1, 9)], "cycle_clock", "active"])
            names = "RYG"
            for t, row in zip(self.times, self.indications):
                active = "+".join(str(i + 1) for i in np.flatnonzero(row))
                w.writerow([f"{t:.1f}", self.iid, *[names[v] for v in row], f"{t % C:.1f}", active])


def run_controller(plan, iid, presence, duration_s, dt=0.1, every_tick=True, **kwargs):
    """Drive a controller with ``presence(k, indications) -> sequence of 9 bools``.

    ``presence`` sees the indications in force at the previous tick so demand
    models can react to service.
    """
    ctl = Controller(plan, iid, dt=dt, **kwargs)
    n = int(round(duration_s / dt))
    out = np.empty((n, 8), dtype=np.uint8)
    ind = ctl._ind
    for i in range(n):
        k = ctl.start_tick + i
        pres = tuple(presence(k, ind))
        if every_tick:
            ctl.wake = k  # force a full evaluation
        if k >= ctl.wake or pres != ctl._presence:
            ind = ctl.tick(k, pres)
        out[i] = ind
    return SignalTrace(iid, dt, ctl.start_tick, out, plan.cycle_length), ctl


def green_intervals(trace, phase):
    """List of (start_s, end_s) green intervals of ``phase``; open intervals end at the trace end."""
    col = trace.indications[:, phase - 1] == GREEN
    edges = np.diff(np.concatenate([[0], col.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    t0 = trace.start_tick
    return [((t0 + s) * trace.dt, (t0 + e) * trace.dt, s == 0, e == len(col)) for s, e in zip(starts, ends)]


@dataclass(frozen=True)
class CycleDrift:
    cycle: int
    start_drift: float | None  # None while resting across the scheduled start
    end_drift: float | None  # None when the coordinated phase did not yield this cycle
    resting: bool


def coordination_drift(trace, plan, phase=2):
    """Per-cycle deviation of coordinated green start/end from the schedule.

    Start drift is measured against the planned coordinated-green start,
    end drift against the planned yield point. A cycle in which the
    coordinated phase neither starts nor ends is reported as resting.
    """
    C = plan.cycle_length
    n_cycles = len(trace.indications) * trace.dt / C
    if n_cycles < 2:
        raise ValueError(f"trace covers {n_cycles:.2f} cycles; at least 2 are required")
    x = plan.intersection(trace.iid)
    sched = {s.phase: s for ring in ring_schedule(plan, trace.iid) for s in ring}[phase]
    t_first, t_last = trace.times[0], trace.times[-1] + trace.dt
    sched_start = x.offset + sched.green_start
    sched_end = x.offset + sched.green_end
    ivs = green_intervals(trace, phase)
    starts = [s for s, e, open_s, open_e in ivs if not open_s]
    ends = [e for s, e, open_s, open_e in ivs if not open_e]
    out = []
    first = math.floor((t_first - sched_end) / C)
    last = math.ceil((t_last - sched_start) / C)
    for n in range(first, last + 1):
        s_ref, e_ref = sched_start + n * C, sched_end + n * C
        lo, hi = s_ref - C / 2, s_ref + C / 2
        if s_ref < t_first or e_ref > t_last:
            continue
        s_hit = [s for s in starts if lo <= s < hi]
        e_hit = [e for e in ends if e_ref - C / 2 <= e < e_ref + C / 2]
        sd = min((s - s_ref for s in s_hit), key=abs) if s_hit else None
        ed = min((e - e_ref for e in e_hit), key=abs) if e_hit else None
        out.append(CycleDrift(n, sd, ed, sd is None and ed is None))
    return out
