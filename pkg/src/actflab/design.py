"""D-optimal scenario designs for second-order response-surface models.

Factors are coded to [-1, 1] around their midrange. Designs are searched by
coordinate exchange: each cell of the design is in turn replaced by the
candidate level that most increases det(X'X) of the model matrix, until a full
pass brings no improvement. Continuous factors use the candidates
{lo, mid, hi}; discrete factors use their levels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import InfeasibleDesignError, RankDeficiencyError


@dataclass(frozen=True)
class Factor:
    name: str
    lo: float
    hi: float
    levels: tuple | None = None  # None for a continuous factor

    def __post_init__(self):
        if self.levels is not None:
            levels = tuple(float(v) for v in self.levels)
            if len(set(levels)) < 2:
                raise ValueError(f"{self.name}: a discrete factor needs at least 2 distinct levels")
            if list(levels) != sorted(set(levels)):
                raise ValueError(f"{self.name}: levels must be sorted and distinct")
            object.__setattr__(self, "levels", levels)
            object.__setattr__(self, "lo", levels[0])
            object.__setattr__(self, "hi", levels[-1])
        if not self.lo < self.hi:
            raise ValueError(f"{self.name}: need lo < hi")

    @classmethod
    def continuous(cls, name, lo, hi):
        return cls(name, float(lo), float(hi))

    @classmethod
    def discrete(cls, name, levels):
        levels = tuple(levels)
        return cls(name, min(levels), max(levels), levels)

    @property
    def kind(self):
        return "continuous" if self.levels is None else "discrete"

    @property
    def mid(self):
        return (self.lo + self.hi) / 2.0

    @property
    def half(self):
        return (self.hi - self.lo) / 2.0

    def candidates(self):
        return self.levels if self.levels is not None else (self.lo, self.mid, self.hi)

    def code(self, x):
        return (np.asarray(x, dtype=float) - self.mid) / self.half

    def decode(self, c):
        return self.mid + self.half * np.asarray(c, dtype=float)

    def contains(self, x, tol=1e-9):
        if self.levels is not None:
            return any(abs(x - v) <= tol for v in self.levels)
        return self.lo - tol <= x <= self.hi + tol

    def to_document(self):
        if self.levels is not None:
            return {"name": self.name, "kind": "discrete", "levels": list(self.levels)}
        return {"name": self.name, "kind": "continuous", "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_document(cls, doc):
        if doc.get("kind") == "discrete":
            return cls.discrete(doc["name"], doc["levels"])
        return cls.continuous(doc["name"], doc["lo"], doc["hi"])


@dataclass(frozen=True)
class FactorSpace:
    factors: tuple

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        names = self.names
        if len(set(names)) != len(names):
            raise ValueError("factor names must be unique")

    @property
    def names(self):
        return [f.name for f in self.factors]

    def __len__(self):
        return len(self.factors)

    def __getitem__(self, name):
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(f"unknown factor {name!r}")

    def index(self, name):
        return self.names.index(name)

    def code(self, natural):
        natural = np.asarray(natural, dtype=float)
        return np.column_stack([f.code(natural[:, j]) for j, f in enumerate(self.factors)])

    def decode(self, coded):
        coded = np.asarray(coded, dtype=float)
        return np.column_stack([f.decode(coded[:, j]) for j, f in enumerate(self.factors)])

    def to_document(self):
        return [f.to_document() for f in self.factors]

    @classmethod
    def from_document(cls, doc):
        return cls(tuple(Factor.from_document(d) for d in doc))


def default_space(n_intersections=3):
    """Ten-factor space of the ActF experiment."""
    fs = [Factor.continuous(f"VolSS_SB{i + 1}", 200, 600) for i in range(n_intersections)]
    fs += [Factor.continuous(f"VolSS_NB{i + 1}", 200, 600) for i in range(n_intersections)]
    fs += [Factor.continuous("VolEB", 400, 1200), Factor.continuous("VolWB", 400, 1200),
           Factor.discrete("LT", (10, 20, 30)),
           Factor.discrete("ActF", tuple(round(1.0 + 0.05 * i, 2) for i in range(7)))]
    return FactorSpace(tuple(fs))


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True)
class ModelSpec:
    """Polynomial model over named factors.

    ``terms`` holds index tuples: ``()`` intercept, ``(i,)`` main effect,
    ``(i, j)`` interaction and ``(i, i)`` quadratic (centered at midrange).
    """

    names: tuple
    terms: tuple
    kind: str = "custom"

    @classmethod
    def rsm(cls, names):
        k = len(names)
        terms = [()] + [(i,) for i in range(k)] + list(combinations(range(k), 2)) + [(i, i) for i in range(k)]
        return cls(tuple(names), tuple(terms), "rsm")

    @classmethod
    def main_effects(cls, names):
        return cls(tuple(names), ((),) + tuple((i,) for i in range(len(names))), "main")

    @classmethod
    def main_quadratic(cls, names, quadratic):
        """Intercept, all main effects and the quadratic terms of ``quadratic`` factors."""
        names = tuple(names)
        quad = tuple((names.index(q), names.index(q)) for q in quadratic)
        return cls(names, ((),) + tuple((i,) for i in range(len(names))) + quad,
                   "main+quad(" + ",".join(quadratic) + ")")

    @classmethod
    def single_quadratic(cls, names, factor):
        """Intercept plus the main and quadratic terms of one factor."""
        i = tuple(names).index(factor)
        return cls(tuple(names), ((), (i,), (i, i)), f"quad({factor})")

    @classmethod
    def parse(cls, text, names):
        text = text.strip()
        if text == "rsm":
            return cls.rsm(names)
        if text == "main":
            return cls.main_effects(names)
        if text.startswith("quad(") and text.endswith(")"):
            return cls.single_quadratic(names, text[5:-1])
        if text.startswith("main+quad(") and text.endswith(")"):
            return cls.main_quadratic(names, [q for q in text[10:-1].split(",") if q])
        raise ValueError(f"unknown model {text!r}")

    @property
    def p(self):
        return len(self.terms)

    def labels(self, space=None):
        out = []
        for t in self.terms:
            if not t:
                out.append("Intercept")
            elif len(t) == 1:
                out.append(self.names[t[0]])
            elif t[0] == t[1]:
                name = self.names[t[0]]
                mid = space[name].mid if space is not None else None
                out.append(f"({name}-{mid:g})^2" if mid is not None else f"{name}^2")
            else:
                out.append(f"{self.names[t[0]]}*{self.names[t[1]]}")
        return out

    def has(self, term):
        return tuple(term) in self.terms

    def matrix(self, coded):
        """Model matrix of coded settings (n x k) -> (n x p)."""
        coded = np.atleast_2d(np.asarray(coded, dtype=float))
        if coded.shape[1] != len(self.names):
            raise ValueError(f"expected {len(self.names)} factor columns, got {coded.shape[1]}")
        cols = []
        for t in self.terms:
            if not t:
                cols.append(np.ones(coded.shape[0]))
            elif len(t) == 1:
                cols.append(coded[:, t[0]])
            else:
                cols.append(coded[:, t[0]] * coded[:, t[1]])
        return np.column_stack(cols)

    def permuted(self, order):
        """Same model over factors reordered as ``[names[i] for i in order]``, terms in canonical order."""
        inv = {old: new for new, old in enumerate(order)}
        terms = sorted((tuple(sorted(inv[i] for i in t)) for t in self.terms), key=lambda t: (len(t), t))
        return ModelSpec(tuple(self.names[i] for i in order), tuple(terms), self.kind)


def n_rsm_parameters(k):
    return 1 + k + k * (k - 1) // 2 + k


# ---------------------------------------------------------------------------
# designs


@dataclass(frozen=True)
class ScenarioDesign:
    space: FactorSpace
    natural: np.ndarray  # n x k settings in natural units
    model: ModelSpec
    seed: int | None = None
    log_det: float = -math.inf
    history: tuple = field(default=(), compare=False)  # log det(X'X) after each accepted exchange

    @property
    def n_runs(self):
        return self.natural.shape[0]

    @property
    def coded(self):
        return self.space.code(self.natural)

    def model_matrix(self):
        return self.model.matrix(self.coded)

    def rows(self):
        names = self.space.names
        return [dict(zip(names, map(float, r))) for r in self.natural]

    def within_bounds(self):
        return all(f.contains(x) for r in self.natural for f, x in zip(self.space.factors, r))


def _log_det(M):
    sign, ld = np.linalg.slogdet(M)
    return ld if sign > 0 else -math.inf


def _exchange(coded, cands, model, rng_order, max_passes):
    """Coordinate exchange on a coded design in place. Returns (log det, history)."""
    n, k = coded.shape
    X = model.matrix(coded)
    p = X.shape[1]
    M = X.T @ X
    ridge = 0.0
    full = np.linalg.matrix_rank(M) == p
    if not full:
        ridge = 1e-6 * n
    Minv = np.linalg.inv(M + ridge * np.eye(p))
    ld = _log_det(M)
    history = [ld] if full else []
    for _ in range(max_passes):
        improved = False
        for i in rng_order(n):
            for j in range(k):
                levels = cands[j]
                x = X[i]
                trial = np.repeat(coded[i][None, :], len(levels), axis=0)
                trial[:, j] = levels
                Y = model.matrix(trial)
                # Fedorov delta for swapping row x -> y
                MiY = Y @ Minv
                dy = np.einsum("ij,ij->i", MiY, Y)
                dxy = MiY @ x
                dx = x @ Minv @ x
                delta = (1.0 + dy) * (1.0 - dx) + dxy ** 2
                best = int(np.argmax(delta))
                if delta[best] <= 1.0 + 1e-10 or levels[best] == coded[i, j]:
                    continue
                coded[i, j] = levels[best]
                X[i] = Y[best]
                M = X.T @ X
                if not full and np.linalg.matrix_rank(M) == p:
                    full, ridge = True, 0.0
                Minv = np.linalg.inv(M + ridge * np.eye(p))
                improved = True
                if full:
                    ld = _log_det(M)
                    history.append(ld)
        if not improved:
            break
    return (_log_det(M) if full else -math.inf), history


def generate_design(space, n_runs=72, seed=0, model=None, restarts=4, max_passes=50):
    """D-optimal design for ``model`` (default: full RSM) by coordinate exchange.

    The best of ``restarts`` random starts is returned (ties go to the lowest
    restart index). The search runs in a canonical (name-sorted) factor order
    so reordering the factors only permutes the columns of the result.
    """
    model = model or ModelSpec.rsm(space.names)
    if n_runs < model.p:
        raise InfeasibleDesignError(
            f"{n_runs} runs cannot support a {model.p}-parameter model "
            f"({model.p - n_runs} runs short)")
    order = sorted(range(len(space)), key=lambda j: space.names[j])
    cspace = FactorSpace(tuple(space.factors[j] for j in order))
    cmodel = model.permuted(order)
    cands = [np.asarray(f.code(f.candidates()), dtype=float) for f in cspace.factors]
    best = None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), r]))
        coded = np.column_stack([rng.choice(c, size=n_runs) for c in cands])
        ld, hist = _exchange(coded, cands, cmodel, lambda n: range(n), max_passes)
        if best is None or ld > best[0]:
            best = (ld, coded.copy(), hist)
    ld, coded, hist = best
    if not math.isfinite(ld):
        raise InfeasibleDesignError("no full-rank design found on the candidate grid")
    natural = cspace.decode(coded)
    back = np.empty_like(natural)
    for new, old in enumerate(order):
        back[:, old] = natural[:, new]
    back = _snap(space, back)
    return ScenarioDesign(space, back, model, int(seed), ld, tuple(hist))


def _snap(space, natural):
    """Remove decode round-off so settings equal their candidate levels exactly."""
    out = natural.copy()
    for j, f in enumerate(space.factors):
        levels = np.asarray(f.candidates(), dtype=float)
        idx = np.abs(out[:, j][:, None] - levels[None, :]).argmin(axis=1)
        close = np.abs(out[:, j] - levels[idx]) < 1e-9 * max(1.0, abs(f.hi))
        out[close, j] = levels[idx[close]]
    return out


def random_design(space, n_runs, rng, model=None):
    """Design drawn uniformly from the candidate grid."""
    model = model or ModelSpec.rsm(space.names)
    natural = np.column_stack([rng.choice(np.asarray(f.candidates(), dtype=float), size=n_runs)
                               for f in space.factors])
    return ScenarioDesign(space, natural, model)


def d_efficiency(design, model=None):
    """det(X'X / n)^(1/p) of the coded model matrix."""
    if isinstance(design, ScenarioDesign):
        X = (model or design.model).matrix(design.coded)
    else:
        X = np.asarray(design, dtype=float)
    n, p = X.shape
    rank = np.linalg.matrix_rank(X)
    if rank < p:
        raise RankDeficiencyError(f"model matrix has rank {rank} < {p} columns")
    sign, ld = np.linalg.slogdet(X.T @ X / n)
    return float(math.exp(ld / p))


# ---------------------------------------------------------------------------
# persistence


def write_design_csv(design, path):
    """Design rows as CSV plus a ``<path>.model.json`` sidecar with model and space."""
    names = design.space.names
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", *names])
        for i, row in enumerate(design.natural):
            w.writerow([f"S{i + 1:03d}", *[repr(float(v)) for v in row]])
    with open(str(path) + ".model.json", "w") as fh:
        json.dump({"model": design.model.kind, "factors": design.space.to_document(),
                   "seed": design.seed}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_design_csv(path, space=None, model=None):
    """Read a design CSV. Without a sidecar, ``space`` (default: the ten-factor space) is used."""
    side = None
    try:
        with open(str(path) + ".model.json") as fh:
            side = json.load(fh)
    except FileNotFoundError:
        pass
    if space is None:
        space = FactorSpace.from_document(side["factors"]) if side else default_space()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [n for n in space.names if n not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"design file lacks factor columns: {missing}")
        natural = np.array([[float(r[n]) for n in space.names] for r in reader], dtype=float)
    if natural.size == 0:
        raise ValueError("design file has no rows")
    design_model = model or ModelSpec.parse(side["model"] if side else "rsm", space.names)
    d = ScenarioDesign(space, natural, design_model, side.get("seed") if side else None)
    if not d.within_bounds():
        raise ValueError("design settings fall outside the factor ranges")
    return d
