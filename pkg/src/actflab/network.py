"""Arterial network description and demand expansion.

A network is an ordered (west to east) list of signalized intersections joined
by internal links, plus external entry points feeding the outer approaches.
Each intersection runs the standard eight NEMA phases with protected lefts;
phases 2 and 6 carry the coordinated eastbound/westbound through movements.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import SchemaError, ValidationError

SCHEMA = "actf-net/1"
APPROACHES = ("N", "S", "E", "W")
TURNS = ("L", "T", "R")
PHASES = tuple(range(1, 9))
COORDINATED_PHASES = (2, 6)
ACTUATED_PHASES = (1, 3, 4, 5, 7, 8)
RIGHT_TURN_RATE = 10.0

# Standard assignment used by the reference network (approach = side the
# traffic comes from, so eastbound vehicles arrive on the W approach).
STANDARD_PHASE_MAP = {
    1: ("E", "L"), 2: ("W", "T"), 3: ("S", "L"), 4: ("N", "T"),
    5: ("W", "L"), 6: ("E", "T"), 7: ("N", "L"), 8: ("S", "T"),
}

# Direction of travel after each turn, keyed by approach.
_OUTBOUND = {
    "W": {"L": "N", "T": "E", "R": "S"},
    "E": {"L": "S", "T": "W", "R": "N"},
    "S": {"L": "W", "T": "N", "R": "E"},
    "N": {"L": "E", "T": "S", "R": "W"},
}


@dataclass(frozen=True)
class PhaseMovement:
    approach: str
    turn: str


@dataclass(frozen=True)
class Intersection:
    id: str
    phases: Mapping[int, PhaseMovement]
    detectors: Mapping[int, float]  # phase -> stop-line zone length (m)

    def phase_for(self, approach, turn):
        """Phase serving ``turn`` on ``approach``; right turns ride with the through phase."""
        if turn == "R":
            turn = "T"
        for p, mv in self.phases.items():
            if mv.approach == approach and mv.turn == turn:
                return p
        raise KeyError(f"{self.id}: no phase serves {approach}{turn}")


@dataclass(frozen=True)
class Link:
    id: str
    from_id: str
    to_id: str
    length_m: float
    ffs_mps: float
    lanes: Mapping[str, int]  # movement group ("L", "T") -> lane count

    @property
    def travel_time(self):
        return self.length_m / self.ffs_mps


@dataclass(frozen=True)
class ExternalEntry:
    id: str
    intersection: str
    approach: str


@dataclass(frozen=True)
class ArterialNetwork:
    intersections: tuple[Intersection, ...]
    links: tuple[Link, ...]
    externals: tuple[ExternalEntry, ...]
    _inbound: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        inbound = {}
        ext = {e.id: e for e in self.externals}
        order = {x.id: i for i, x in enumerate(self.intersections)}
        for link in self.links:
            if link.to_id not in order:
                continue
            if link.from_id in ext:
                approach = ext[link.from_id].approach
            elif link.from_id in order:
                approach = "W" if order[link.from_id] < order[link.to_id] else "E"
            else:
                continue
            inbound[(link.to_id, approach)] = link
        object.__setattr__(self, "_inbound", inbound)

    @property
    def ids(self):
        return [x.id for x in self.intersections]

    def intersection(self, iid):
        for x in self.intersections:
            if x.id == iid:
                return x
        raise KeyError(f"unknown intersection {iid!r}")

    def index(self, iid):
        return self.ids.index(iid)

    def inbound_link(self, iid, approach):
        return self._inbound[(iid, approach)]

    def downstream(self, iid, direction):
        """Next intersection reached travelling ``direction`` ("E"/"W"), or None."""
        i = self.index(iid)
        j = i + 1 if direction == "E" else i - 1 if direction == "W" else None
        if j is None or not 0 <= j < len(self.intersections):
            return None
        return self.intersections[j].id

    def external(self, eid):
        for e in self.externals:
            if e.id == eid:
                return e
        raise KeyError(f"unknown external entry {eid!r}")


def outbound_direction(approach, turn):
    return _OUTBOUND[approach][turn]


def entry_approach(direction):
    """Approach on which a vehicle travelling ``direction`` arrives."""
    return {"E": "W", "W": "E", "N": "S", "S": "N"}[direction]


# ---------------------------------------------------------------------------
# document parsing


def _require(doc, key, path, kind=None):
    if not isinstance(doc, Mapping) or key not in doc:
        raise SchemaError(f"{path}.{key}" if path else key, "missing required field")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}" if path else key,
                          f"expected {getattr(kind, '__name__', kind)}, got {type(value).__name__}")
    return value


def _number(doc, key, path, positive=True):
    value = _require(doc, key, path)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{path}.{key}", "expected a number")
    if positive and not value > 0:
        raise SchemaError(f"{path}.{key}", "must be positive")
    return float(value)


def _parse_intersection(doc, path):
    iid = str(_require(doc, "id", path))
    raw_phases = _require(doc, "phases", path, Mapping)
    phases = {}
    for key, mv in raw_phases.items():
        p_path = f"{path}.phases.{key}"
        try:
            p = int(key)
        except (TypeError, ValueError):
            raise SchemaError(p_path, "phase key must be an integer 1-8") from None
        approach = _require(mv, "approach", p_path, str)
        turn = _require(mv, "turn", p_path, str)
        if approach not in APPROACHES:
            raise SchemaError(f"{p_path}.approach", f"must be one of {APPROACHES}")
        if turn not in TURNS:
            raise SchemaError(f"{p_path}.turn", f"must be one of {TURNS}")
        phases[p] = PhaseMovement(approach, turn)
    detectors = {}
    for key, det in dict(doc.get("detectors", {})).items():
        d_path = f"{path}.detectors.{key}"
        try:
            p = int(key)
        except (TypeError, ValueError):
            raise SchemaError(d_path, "phase key must be an integer 1-8") from None
        detectors[p] = _number(det, "zone_length_m", d_path)
    return Intersection(iid, dict(sorted(phases.items())), dict(sorted(detectors.items())))


def _parse_link(doc, path):
    src = str(_require(doc, "from", path))
    dst = str(_require(doc, "to", path))
    lanes_doc = _require(doc, "lanes", path, Mapping)
    lanes = {}
    for group, n in lanes_doc.items():
        if group not in ("L", "T"):
            raise SchemaError(f"{path}.lanes.{group}", "lane group must be 'L' or 'T'")
        if isinstance(n, bool) or not isinstance(n, int) or n < 1:
            raise SchemaError(f"{path}.lanes.{group}", "lane count must be a positive integer")
        lanes[group] = n
    if "T" not in lanes:
        raise SchemaError(f"{path}.lanes.T", "missing required field")
    return Link(
        id=str(doc.get("id", f"{src}->{dst}")),
        from_id=src,
        to_id=dst,
        length_m=_number(doc, "length_m", path),
        ffs_mps=_number(doc, "ffs_mps", path),
        lanes=lanes,
    )


def _parse_external(doc, path):
    approach = _require(doc, "approach", path, str)
    if approach not in APPROACHES:
        raise SchemaError(f"{path}.approach", f"must be one of {APPROACHES}")
    return ExternalEntry(str(_require(doc, "id", path)), str(_require(doc, "intersection", path)), approach)


def parse_network(doc):
    """Build an :class:`ArterialNetwork` from a decoded document and validate it."""
    if not isinstance(doc, Mapping):
        raise SchemaError("<root>", "document must be a mapping")
    schema = doc.get("schema", SCHEMA)
    if schema != SCHEMA:
        raise SchemaError("schema", f"unsupported schema {schema!r} (expected {SCHEMA!r})")
    inters = _require(doc, "intersections", "", list)
    links = _require(doc, "links", "", list)
    exts = _require(doc, "externals", "", list)
    net = ArterialNetwork(
        intersections=tuple(_parse_intersection(d, f"intersections[{i}]") for i, d in enumerate(inters)),
        links=tuple(_parse_link(d, f"links[{i}]") for i, d in enumerate(links)),
        externals=tuple(_parse_external(d, f"externals[{i}]") for i, d in enumerate(exts)),
    )
    findings = validate_network(net)
    if findings:
        raise ValidationError(findings)
    return net


def load_network(source):
    """Load a network from a path, a JSON string or an already-decoded mapping."""
    if isinstance(source, Mapping):
        return parse_network(source)
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return parse_network(doc)


def validate_network(net):
    """Return a list of human-readable invariant violations (empty if valid)."""
    findings = []
    ids = [x.id for x in net.intersections]
    if not ids:
        findings.append("network has no intersections")
    if len(set(ids)) != len(ids):
        findings.append("duplicate intersection ids")
    ext_ids = [e.id for e in net.externals]
    if len(set(ext_ids)) != len(ext_ids) or set(ext_ids) & set(ids):
        findings.append("duplicate external entry ids")
    nodes = set(ids) | set(ext_ids)
    for x in net.intersections:
        if sorted(x.phases) != list(PHASES):
            findings.append(f"intersection {x.id}: expected exactly phases 1-8, got {sorted(x.phases)}")
            continue
        for p in COORDINATED_PHASES:
            mv = x.phases[p]
            if mv.turn != "T" or mv.approach not in ("E", "W"):
                findings.append(f"intersection {x.id}: coordinated phase {p} must be an E/W through movement")
        served = {(m.approach, m.turn) for m in x.phases.values()}
        if len(served) != 8:
            findings.append(f"intersection {x.id}: phases must serve distinct movements")
        bad = sorted(set(x.detectors) - set(ACTUATED_PHASES))
        if bad:
            findings.append(f"intersection {x.id}: detectors on non-actuated phases {bad}")
    for link in net.links:
        for end in (link.from_id, link.to_id):
            if end not in nodes:
                findings.append(f"link {link.id}: dangling reference {end!r}")
        if link.from_id in ids and link.to_id in ids and abs(ids.index(link.from_id) - ids.index(link.to_id)) != 1:
            findings.append(f"link {link.id}: internal links must join adjacent intersections")
    for e in net.externals:
        if e.intersection not in ids:
            findings.append(f"external {e.id}: dangling reference {e.intersection!r}")
        elif not any(l.from_id == e.id and l.to_id == e.intersection for l in net.links):
            findings.append(f"external {e.id}: no entry link to {e.intersection}")
    if not findings:
        for x in net.intersections:
            for a in APPROACHES:
                if (x.id, a) not in net._inbound:
                    findings.append(f"intersection {x.id}: no inbound link on approach {a}")
    return findings


def network_to_document(net):
    return {
        "schema": SCHEMA,
        "intersections": [
            {
                "id": x.id,
                "phases": {str(p): {"approach": m.approach, "turn": m.turn} for p, m in x.phases.items()},
                "detectors": {str(p): {"zone_length_m": z} for p, z in x.detectors.items()},
            }
            for x in net.intersections
        ],
        "links": [
            {"id": l.id, "from": l.from_id, "to": l.to_id, "length_m": l.length_m,
             "ffs_mps": l.ffs_mps, "lanes": dict(l.lanes)}
            for l in net.links
        ],
        "externals": [{"id": e.id, "intersection": e.intersection, "approach": e.approach}
                      for e in net.externals],
    }


def dumps_network(net):
    return json.dumps(network_to_document(net), indent=2)


def reference_network():
    """The three-intersection test arterial shipped with the package."""
    text = resources.files("actflab").joinpath("data/reference_network.json").read_text()
    return load_network(text)


def build_arterial(n_intersections=3, spacing_m=300.0, major_ffs=15.65, side_ffs=11.18,
                   side_length_m=200.0, major_lanes=2, side_lanes=1, zone_length_m=10.0):
    """Programmatic generator for straight arterials with the standard phase map."""
    ids = [f"I{i + 1}" for i in range(n_intersections)]
    major = {"L": 1, "T": major_lanes}
    side = {"L": 1, "T": side_lanes}
    inters, links, exts = [], [], []
    for k, iid in enumerate(ids):
        phases = {p: PhaseMovement(a, t) for p, (a, t) in STANDARD_PHASE_MAP.items()}
        inters.append(Intersection(iid, phases, {p: zone_length_m for p in ACTUATED_PHASES}))
        for approach, name in (("S", "NB"), ("N", "SB")):
            eid = f"{name}{k + 1}"
            exts.append(ExternalEntry(eid, iid, approach))
            links.append(Link(f"{eid}->{iid}", eid, iid, side_length_m, side_ffs, dict(side)))
    exts.insert(0, ExternalEntry("EB", ids[0], "W"))
    links.insert(0, Link(f"EB->{ids[0]}", "EB", ids[0], spacing_m, major_ffs, dict(major)))
    exts.append(ExternalEntry("WB", ids[-1], "E"))
    links.append(Link(f"WB->{ids[-1]}", "WB", ids[-1], spacing_m, major_ffs, dict(major)))
    for a, b in zip(ids, ids[1:]):
        links.append(Link(f"{a}->{b}", a, b, spacing_m, major_ffs, dict(major)))
        links.append(Link(f"{b}->{a}", b, a, spacing_m, major_ffs, dict(major)))
    return ArterialNetwork(tuple(inters), tuple(links), tuple(exts))


# ---------------------------------------------------------------------------
# demand


@dataclass(frozen=True)
class ExternalVolumes:
    """External entry volumes (veh/h) named after the experiment factors."""

    vol_eb: float
    vol_wb: float
    vol_ss_nb: tuple[float, ...]
    vol_ss_sb: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "vol_ss_nb", tuple(float(v) for v in self.vol_ss_nb))
        object.__setattr__(self, "vol_ss_sb", tuple(float(v) for v in self.vol_ss_sb))
        values = (self.vol_eb, self.vol_wb, *self.vol_ss_nb, *self.vol_ss_sb)
        if any(v < 0 for v in values):
            raise ValueError("external volumes must be non-negative")

    @classmethod
    def from_factors(cls, row, n_intersections=3):
        return cls(
            float(row["VolEB"]), float(row["VolWB"]),
            tuple(float(row[f"VolSS_NB{i + 1}"]) for i in range(n_intersections)),
            tuple(float(row[f"VolSS_SB{i + 1}"]) for i in range(n_intersections)),
        )

    def scaled(self, major=1.0, side=1.0):
        return ExternalVolumes(self.vol_eb * major, self.vol_wb * major,
                               tuple(v * side for v in self.vol_ss_nb),
                               tuple(v * side for v in self.vol_ss_sb))

    def by_entry(self, net):
        """Map external entry id -> volume using entry approach and position."""
        ids = net.ids
        if len(self.vol_ss_nb) != len(ids) or len(self.vol_ss_sb) != len(ids):
            raise ValueError(f"expected {len(ids)} side-street volumes per direction")
        out = {}
        for e in net.externals:
            k = ids.index(e.intersection)
            if e.approach == "W":
                out[e.id] = self.vol_eb
            elif e.approach == "E":
                out[e.id] = self.vol_wb
            elif e.approach == "S":
                out[e.id] = self.vol_ss_nb[k]
            else:
                out[e.id] = self.vol_ss_sb[k]
        return out


def reference_volumes():
    """Default demand of the reference arterial (entry counts of the calibrated parent scenario)."""
    return ExternalVolumes(826.0, 434.0, (215.0, 217.0, 217.0), (636.0, 652.0, 217.0))


def split_approach(volume, lt_rate, rt_rate=RIGHT_TURN_RATE):
    """Split an approach volume into (left, through, right)."""
    if volume < 0:
        raise ValueError("approach volume must be non-negative")
    if lt_rate < 0 or lt_rate + rt_rate > 100:
        raise ValueError("turning percentages must lie in [0, 100] and sum to at most 100")
    left = volume * lt_rate / 100.0
    right = volume * rt_rate / 100.0
    return left, volume - left - right, right


@dataclass(frozen=True)
class MovementVolumes:
    """Hourly volume per (intersection, approach, turn)."""

    volumes: Mapping[tuple[str, str, str], float]
    lt_rate: float
    rt_rate: float = RIGHT_TURN_RATE

    def approach_volume(self, iid, approach):
        return sum(self.volumes[(iid, approach, t)] for t in TURNS)

    def phase_volume(self, net, iid, phase):
        """Volume served by a phase (through phases carry the right turns)."""
        mv = net.intersection(iid).phases[phase]
        if mv.turn == "L":
            return self.volumes[(iid, mv.approach, "L")]
        return self.volumes[(iid, mv.approach, "T")] + self.volumes[(iid, mv.approach, "R")]


def expand_volumes(net, ext, lt_rate, rt_rate=RIGHT_TURN_RATE):
    """Expand external volumes into per-movement volumes on every approach.

    Internal approaches are fed by the upstream intersection's through movement
    plus the side-street turns heading the same way; every approach splits with
    the same left/right percentages.
    """
    entry = ext.by_entry(net) if isinstance(ext, ExternalVolumes) else dict(ext)
    if any(v < 0 for v in entry.values()):
        raise ValueError("external volumes must be non-negative")
    approach_vol = {}
    for e in net.externals:
        approach_vol[(e.intersection, e.approach)] = entry.get(e.id, 0.0)
    volumes = {}

    def settle(iid, approach):
        left, through, right = split_approach(approach_vol.get((iid, approach), 0.0), lt_rate, rt_rate)
        volumes[(iid, approach, "L")] = left
        volumes[(iid, approach, "T")] = through
        volumes[(iid, approach, "R")] = right

    ids = net.ids
    for iid in ids:  # eastbound sweep fills W approaches
        for a in ("N", "S"):
            settle(iid, a)
        settle(iid, "W")
        nxt = net.downstream(iid, "E")
        if nxt is not None:
            approach_vol[(nxt, "W")] = (volumes[(iid, "W", "T")] + volumes[(iid, "S", "R")]
                                        + volumes[(iid, "N", "L")])
    for iid in reversed(ids):  # westbound sweep fills E approaches
        settle(iid, "E")
        nxt = net.downstream(iid, "W")
        if nxt is not None:
            approach_vol[(nxt, "E")] = (volumes[(iid, "E", "T")] + volumes[(iid, "N", "R")]
                                        + volumes[(iid, "S", "L")])
    return MovementVolumes(volumes, float(lt_rate), float(rt_rate))
