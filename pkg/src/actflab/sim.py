"""Seeded point-queue simulation of a signalized arterial.

Vehicles enter at external entries as Poisson streams (one stream per entry
movement), travel links at free-flow speed, wait in vertical queues at the
stop line and discharge during green at saturation headway after a start-up
lost time. Delay is actual minus free-flow traversal time.

The loop advances on the controller tick grid but only visits an
intersection when something can change there: a vehicle arrival, a
departure, a detector going off, or a controller timer.
"""

from __future__ import annotations

import csv
import heapq
import math
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .controller import GREEN, Controller
from .network import entry_approach, outbound_direction
from .timing import require_valid

PROFILES = ("flat", "peaked")


@dataclass(frozen=True)
class DemandSpec:
    volumes: object  # MovementVolumes
    phf: float = 0.92
    profile: str = "flat"

    def __post_init__(self):
        if not 0 < self.phf <= 1:
            raise ValueError("phf must lie in (0, 1]")
        if self.profile not in PROFILES:
            raise ValueError(f"profile must be one of {PROFILES}")

    def quarter_factors(self):
        """Rate multipliers for the four 15-minute periods of the analysis hour."""
        if self.profile == "flat":
            return (1.0, 1.0, 1.0, 1.0)
        peak = 1.0 / self.phf
        other = (4.0 - peak) / 3.0
        return (other, peak, other, other)


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.1
    sat_flow: float = 1900.0  # veh/h/lane
    startup_lost_s: float = 2.0
    vehicle_extension_s: float = 2.0
    jam_spacing_m: float = 7.5
    vehicle_length_m: float = 5.5
    bay_length_m: float = 75.0
    cooldown_s: float = 900.0


@dataclass
class RunResult:
    scenario_id: str
    seed: int
    plan: str
    avg_delay: float
    veh_completed: int
    veh_created: int = 0  # analysis cohort
    total_created: int = 0
    total_completed: int = 0
    in_network: int = 0
    spillback: bool = False
    link_counts: Mapping[str, int] = field(default_factory=dict)
    entry_delay: Mapping[str, float] = field(default_factory=dict)
    green_time: Mapping[str, Mapping[int, float]] = field(default_factory=dict)
    total_delay: float = 0.0


def stream_seed(seed, *keys):
    """SeedSequence entropy derived from the run seed and stable string keys."""
    return np.random.SeedSequence([int(seed) % (1 << 64)] + [zlib.crc32(str(k).encode()) for k in keys])


def poisson_times(rng, rate_per_h, t0, t1):
    """Sorted arrival times of a homogeneous Poisson process on [t0, t1)."""
    if rate_per_h <= 0 or t1 <= t0:
        return np.empty(0)
    n = rng.poisson(rate_per_h / 3600.0 * (t1 - t0))
    return np.sort(rng.uniform(t0, t1, n))


class _Queue:
    __slots__ = ("vids", "arr", "phase", "lanes", "server_free", "occ_until", "occ", "green",
                 "storage", "bay", "partner", "blocked", "det")

    def __init__(self, phase, lanes, occ, storage):
        self.vids = deque()
        self.arr = deque()
        self.phase = phase
        self.lanes = lanes
        self.server_free = -math.inf
        self.occ_until = -math.inf
        self.occ = occ
        self.green = False
        self.storage = storage
        self.bay = None  # left-turn queue sharing the approach (through queues only)
        self.blocked = False
        self.det = False  # feeds a stop-bar detector


def _turn(u, lt, rt):
    if u < lt:
        return "L"
    if u < lt + rt:
        return "R"
    return "T"


def run_simulation(net, demand, plan, seed, warmup_s=900.0, analysis_s=3600.0, params=None,
                   scenario_id="", stream_key=None, every_tick=False):
    """Simulate one hour (after warm-up) under ``plan`` and return a :class:`RunResult`.

    Identical inputs give identical results. ``stream_key`` (default: the
    scenario id) and ``seed`` key the per-movement random streams, so two
    plans run with the same key see the same arrivals and routes.
    """
    require_valid(plan)
    params = params or SimParams()
    dt = params.dt
    if set(plan.ids) != set(net.ids):
        raise ValueError("plan and network cover different intersections")
    key = scenario_id if stream_key is None else stream_key
    vols = demand.volumes
    lt, rt = vols.lt_rate / 100.0, vols.rt_rate / 100.0
    t_an0, t_an1 = warmup_s, warmup_s + analysis_s
    t_max = t_an1 + params.cooldown_s
    ids = net.ids
    n_int = len(ids)

    # --- infrastructure ---------------------------------------------------
    queues = []  # per intersection: {(approach, group): _Queue}
    det_queues = []  # per intersection: list of (phase, queue)
    link_ix = {}
    for i, iid in enumerate(ids):
        x = net.intersection(iid)
        qs = {}
        for approach in ("N", "S", "E", "W"):
            link = net.inbound_link(iid, approach)
            link_ix[(i, approach)] = link
            occ_base = params.vehicle_length_m / link.ffs_mps
            total_lanes = sum(link.lanes.values())
            storage = link.length_m * total_lanes / params.jam_spacing_m
            for group in ("L", "T"):
                p = x.phase_for(approach, group)
                zone = x.detectors.get(p)
                occ = occ_base + (zone or 0.0) / link.ffs_mps
                lanes = link.lanes.get(group, 0)
                if group == "L" and lanes == 0:
                    lanes = 1  # shared-lane lefts modelled as a single lane
                q = _Queue(p, lanes, occ, storage)
                q.bay = lanes * params.bay_length_m / params.jam_spacing_m if group == "L" else None
                qs[(approach, group)] = q
            qs[(approach, "T")].partner = qs[(approach, "L")]
            qs[(approach, "L")].partner = qs[(approach, "T")]
        queues.append(qs)
        det_queues.append([(p, qs[(x.phases[p].approach, "L" if x.phases[p].turn == "L" else "T")])
                           for p in sorted(x.detectors)])
        for _, q in det_queues[-1]:
            q.det = True
    controllers = [Controller(plan, iid, dt=dt, vehicle_extension=params.vehicle_extension_s, start_tick=0)
                   for iid in ids]
    queue_lists = [list(qs.values()) for qs in queues]
    green_qs = [[] for _ in ids]

    # --- demand -----------------------------------------------------------
    created, ff, legs, leg_no, entry_of, cohort = [], [], [], [], [], []
    heaps = [[] for _ in range(n_int)]
    factors = demand.quarter_factors()
    edges = [0.0, t_an0] + [t_an0 + 900.0 * q for q in range(1, 4)] + [t_an1, t_max]
    rates = [1.0, *factors, 1.0]
    for ext in net.externals:
        i0 = ids.index(ext.intersection)
        link0 = link_ix[(i0, ext.approach)]
        for first_turn in ("L", "T", "R"):
            v = vols.volumes[(ext.intersection, ext.approach, first_turn)]
            mid = f"{ext.id}:{first_turn}"
            arr_rng, route_rng = (np.random.default_rng(s) for s in stream_seed(seed, key, mid).spawn(2))
            times = np.concatenate([poisson_times(arr_rng, v * f, a, b)
                                    for a, b, f in zip(edges[:-1], edges[1:], rates)])
            for tc in times.tolist():
                vid = len(created)
                path = []
                i, approach, turn, link = i0, ext.approach, first_turn, link0
                tt = 0.0
                while True:
                    tt += link.travel_time
                    path.append((i, approach, "L" if turn == "L" else "T", link.travel_time, link.id))
                    d = outbound_direction(approach, turn)
                    nxt = net.downstream(ids[i], d) if d in ("E", "W") else None
                    if nxt is None:
                        break
                    i = ids.index(nxt)
                    approach = entry_approach(d)
                    link = link_ix[(i, approach)]
                    turn = _turn(route_rng.random(), lt, rt)
                created.append(tc)
                ff.append(tt)
                legs.append(path)
                leg_no.append(0)
                entry_of.append(ext.id)
                cohort.append(t_an0 <= tc < t_an1)
                heaps[i0].append((tc + link0.travel_time, vid))
    for h in heaps:
        heapq.heapify(h)

    # --- state & statistics ----------------------------------------------
    cohort_left = sum(cohort)
    n_cohort = cohort_left
    completed = 0
    delay_sum = 0.0
    entry_sum, entry_n = {}, {}
    link_counts = {l.id: 0 for l in net.links}
    spill = False
    green_time = {iid: {p: 0.0 for p in range(1, 9)} for iid in ids}
    last_ind = [None] * n_int
    last_ind_t = [0.0] * n_int
    sat = params.sat_flow
    lost = params.startup_lost_s
    next_eval = [0] * n_int
    k_max = int(math.ceil(t_max / dt))

    def route(vid, t):
        nonlocal completed, delay_sum, cohort_left
        leg_no[vid] += 1
        path = legs[vid]
        if leg_no[vid] < len(path):
            i, approach, group, tt, _ = path[leg_no[vid]]
            heapq.heappush(heaps[i], (t + tt, vid))
            kk = int((t + tt) / dt)
            if kk < next_eval[i]:
                next_eval[i] = kk
            return
        completed += 1
        if cohort[vid]:
            cohort_left -= 1
            d = t - created[vid] - ff[vid]
            if d < 0.0:
                d = 0.0  # float round-off only
            delay_sum += d
            e = entry_of[vid]
            entry_sum[e] = entry_sum.get(e, 0.0) + d
            entry_n[e] = entry_n.get(e, 0) + 1

    k = 0
    while k <= k_max:
        t0 = k * dt
        if t0 >= t_an1 and cohort_left == 0:
            break
        t1 = t0 + dt
        for i in range(n_int):
            if next_eval[i] > k:
                continue
            qs = queues[i]
            ctl = controllers[i]
            pres = [False] * 9
            for p, q in det_queues[i]:
                if q.vids or t0 < q.occ_until:
                    pres[p] = True
            pres = tuple(pres)
            if every_tick:
                ctl.wake = k  # force a full evaluation
            if k >= ctl.wake or pres != ctl._presence:
                ind = ctl.tick(k, pres)
            else:
                ind = ctl._ind
            if ind is not last_ind[i] and ind != last_ind[i]:
                prev = last_ind[i]
                if prev is not None:
                    a, b = max(last_ind_t[i], t_an0), min(t0, t_an1)
                    if b > a:
                        g = green_time[ids[i]]
                        for p in range(8):
                            if prev[p] == GREEN:
                                g[p + 1] += b - a
                for q in queue_lists[i]:
                    now_green = ind[q.phase - 1] == GREEN
                    if now_green and not q.green:
                        if q.server_free < t0 + lost:
                            q.server_free = t0 + lost
                    q.green = now_green
                green_qs[i] = [q for q in queue_lists[i] if q.green]
                last_ind[i] = ind
                last_ind_t[i] = t0
            busy = False
            heap = heaps[i]
            while heap and heap[0][0] < t1:
                ta, vid = heapq.heappop(heap)
                ii, approach, group, _, lid = legs[vid][leg_no[vid]]
                q = qs[(approach, group)]
                q.vids.append(vid)
                q.arr.append(ta)
                if t_an0 <= ta < t_an1:
                    link_counts[lid] += 1
                if group == "L":
                    if len(q.vids) > q.bay:
                        spill = True
                if len(q.vids) + len(q.partner.vids) > q.storage:
                    spill = True
                if q.det:
                    busy = True  # presence may change on the next tick
            nxt = math.inf
            for q in green_qs[i]:
                vids = q.vids
                if not vids:
                    continue
                lanes = q.lanes
                if q.bay is None and len(q.partner.vids) > q.partner.bay:
                    lanes -= 1  # left-turn bay overflow blocks a through lane
                if lanes <= 0:
                    continue
                h = 3600.0 / (sat * lanes)
                arr = q.arr
                while vids:
                    d = arr[0] if arr[0] > q.server_free else q.server_free
                    if d >= t1:
                        if d < nxt:
                            nxt = d
                        break
                    vid = vids.popleft()
                    arr.popleft()
                    q.server_free = d + h
                    q.occ_until = d + q.occ
                    route(vid, d)
            for _, q in det_queues[i]:
                if not q.vids and t0 < q.occ_until < nxt:
                    nxt = q.occ_until
            # floor: an early visit only recomputes, a late one would miss an event
            cand = k + 1 if busy else int(nxt / dt) if nxt < math.inf else k_max + 1
            if heap:
                ka = int(heap[0][0] / dt)
                if ka < cand:
                    cand = ka
            if ctl.wake < cand:
                cand = int(ctl.wake)
            next_eval[i] = k + 1 if every_tick else max(cand, k + 1)
        k = min(next_eval)
    t_end = min(k * dt, t_max)
    n_entered = int(np.searchsorted(np.sort(created), t_end, side="left"))
    for i in range(n_int):
        prev = last_ind[i]
        if prev is not None:
            a, b = max(last_ind_t[i], t_an0), min(t_end, t_an1)
            if b > a:
                for p in range(8):
                    if prev[p] == GREEN:
                        green_time[ids[i]][p + 1] += b - a
    n_done = n_cohort - cohort_left
    return RunResult(
        scenario_id=scenario_id,
        seed=int(seed),
        plan=plan.provenance,
        avg_delay=delay_sum / n_done if n_done else 0.0,
        veh_completed=n_done,
        veh_created=n_cohort,
        total_created=n_entered,
        total_completed=completed,
        in_network=n_entered - completed,
        spillback=spill,
        link_counts=link_counts,
        entry_delay={e: entry_sum[e] / entry_n[e] for e in sorted(entry_sum)},
        green_time=green_time,
        total_delay=delay_sum,
    )


def average_delay(results):
    """Vehicle-weighted mean delay over runs of one scenario and plan."""
    results = list(results)
    if not results:
        raise ValueError("no results to average")
    keys = {(r.scenario_id, r.plan) for r in results}
    if len(keys) > 1:
        raise ValueError(f"results mix scenarios/plans: {sorted(keys)}")
    n = sum(r.veh_completed for r in results)
    if n == 0:
        return 0.0
    return sum(r.avg_delay * r.veh_completed for r in results) / n


RUN_FIELDS = ["scenario_id", "seed", "plan", "avg_delay_s", "veh_completed", "spillback_flag"]


def run_row(r):
    return [r.scenario_id, r.seed, r.plan, repr(float(r.avg_delay)), r.veh_completed, int(r.spillback)]


def write_results_csv(results, path, link_path=None):
    """One row per run; optional companion file with per-link counts."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RUN_FIELDS)
        for r in results:
            w.writerow(run_row(r))
    if link_path is not None:
        with open(link_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario_id", "seed", "plan", "link_id", "count"])
            for r in results:
                for lid, c in r.link_counts.items():
                    w.writerow([r.scenario_id, r.seed, r.plan, lid, c])
