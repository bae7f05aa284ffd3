"""Response-surface regression: OLS fit, single-df F tests, profilers and the ActF optimum.

Models are fitted on coded factors (see :mod:`actflab.design`); coefficients
are also reported on the natural centered scale, i.e. per unit of
``x - mid`` for main effects and per unit of ``(x - mid)**2`` for quadratics.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from .design import ModelSpec, ScenarioDesign
from .errors import RankDeficiencyError

ACTF = "ActF"


def build_model_matrix(design, responses, model=None):
    """Model matrix of ``design`` and the response vector.

    ``design`` is a :class:`ScenarioDesign` or a coded ``(n, k)`` array (then
    ``model`` is required).
    """
    if isinstance(design, ScenarioDesign):
        model = model or design.model
        X = model.matrix(design.coded)
    else:
        if model is None:
            raise ValueError("a model is required for a raw coded matrix")
        X = model.matrix(design)
    y = np.asarray(responses, dtype=float).ravel()
    if len(y) != X.shape[0]:
        raise ValueError(f"{len(y)} responses for {X.shape[0]} design rows")
    return X, y


@dataclass(frozen=True)
class OLSFit:
    coef: np.ndarray
    se: np.ndarray
    fitted: np.ndarray
    resid: np.ndarray
    ss_resid: float
    ss_total: float  # about the mean
    df_resid: int
    xtx_inv: np.ndarray
    labels: tuple

    @property
    def ms_resid(self):
        return self.ss_resid / self.df_resid if self.df_resid > 0 else math.nan

    @property
    def r2(self):
        return 1.0 - self.ss_resid / self.ss_total if self.ss_total > 0 else math.nan

    @property
    def ss_model(self):
        return self.ss_total - self.ss_resid


def fit_ols(X, y, labels=None):
    """Least squares by column-pivoted QR.

    Raises :class:`RankDeficiencyError` naming the columns that are linear
    combinations of the others.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = X.shape
    labels = tuple(labels) if labels is not None else tuple(f"x{j}" for j in range(p))
    if len(y) != n:
        raise ValueError(f"{len(y)} responses for {n} rows")
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(n, p) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < p:
        dep = sorted(int(j) for j in piv[rank:])
        raise RankDeficiencyError(
            f"model matrix has rank {rank} < {p}; dependent columns: {[labels[j] for j in dep]}",
            [labels[j] for j in dep])
    z = linalg.solve_triangular(R, Q.T @ y)
    coef = np.empty(p)
    coef[piv] = z
    Rinv = linalg.solve_triangular(R, np.eye(p))
    cov_p = Rinv @ Rinv.T
    xtx_inv = np.empty((p, p))
    xtx_inv[np.ix_(piv, piv)] = cov_p
    fitted = X @ coef
    resid = y - fitted
    ss_resid = float(resid @ resid)
    ss_total = float(((y - y.mean()) ** 2).sum())
    df = n - p
    ms = ss_resid / df if df > 0 else math.nan
    se = np.sqrt(np.diag(xtx_inv) * ms) if df > 0 else np.full(p, math.nan)
    return OLSFit(coef, se, fitted, resid, ss_resid, ss_total, df, xtx_inv, labels)


@dataclass(frozen=True)
class EffectTest:
    effect: str
    ss: float
    df: int
    f: float
    p: float


def effect_f_tests(fit, include_intercept=False):
    """Single-parameter F test of every coefficient: F = t^2, SS = F * MS_resid."""
    fit = getattr(fit, "ols", fit)
    if fit.df_resid < 1:
        raise ValueError("no residual degrees of freedom left for F tests")
    ms = fit.ms_resid
    out = []
    for j, label in enumerate(fit.labels):
        if label == "Intercept" and not include_intercept:
            continue
        var = fit.xtx_inv[j, j] * ms
        if fit.coef[j] == 0.0:
            F = 0.0
        elif var == 0.0:
            F = math.inf
        else:
            F = fit.coef[j] ** 2 / var
        out.append(EffectTest(label, F * ms, 1, F, float(stats.f.sf(F, 1, fit.df_resid))))
    return out


# ---------------------------------------------------------------------------
# fitted response surface


@dataclass(frozen=True)
class RSMFit:
    space: object  # FactorSpace
    model: ModelSpec
    ols: OLSFit
    n: int

    @property
    def labels(self):
        return self.ols.labels

    def _scale(self, term):
        s = 1.0
        for i in term:
            s *= self.space.factors[i].half
        return s

    def natural_coefficients(self):
        """Coefficients per unit of centered natural factors, with standard errors."""
        scale = np.array([self._scale(t) for t in self.model.terms])
        return self.ols.coef / scale, self.ols.se / scale

    def coefficient(self, term):
        """Natural-scale coefficient of ``term`` given as factor names, e.g. ("ActF", "ActF")."""
        idx = tuple(sorted(self.space.index(n) for n in term))
        if idx not in self.model.terms:
            return 0.0
        j = self.model.terms.index(idx)
        return float(self.ols.coef[j] / self._scale(idx))

    def settings(self, at=None):
        """Full natural setting vector: factor midranges overridden by ``at``."""
        x = np.array([f.mid for f in self.space.factors])
        for name, v in (at or {}).items():
            f = self.space[name]
            if not f.lo - 1e-9 <= v <= f.hi + 1e-9:
                raise ValueError(f"{name}={v} lies outside [{f.lo:g}, {f.hi:g}]")
            x[self.space.index(name)] = float(v)
        return x

    def predict(self, natural):
        natural = np.atleast_2d(np.asarray(natural, dtype=float))
        return self.model.matrix(self.space.code(natural)) @ self.ols.coef


def fit_rsm(design, responses, model=None):
    model = model or design.model
    X, y = build_model_matrix(design, responses, model)
    ols = fit_ols(X, y, model.labels(design.space))
    return RSMFit(design.space, model, ols, len(y))


@dataclass(frozen=True)
class ProfilerSlice:
    factor: str
    grid: np.ndarray
    predicted: np.ndarray
    current: float  # the factor's value in ``at``
    at: dict


def profile(fit, factor, at=None, n_points=31):
    """Predicted response along ``factor`` with the other factors held at ``at`` (default midrange)."""
    f = fit.space[factor]
    base = fit.settings(at)
    j = fit.space.index(factor)
    grid = np.linspace(f.lo, f.hi, n_points)
    pts = np.repeat(base[None, :], n_points, axis=0)
    pts[:, j] = grid
    pred = fit.predict(pts)
    if not np.all(np.isfinite(pred)):
        raise ValueError("non-finite predictions")
    return ProfilerSlice(factor, grid, pred, float(base[j]), dict(at or {}))


@dataclass(frozen=True)
class Optimum:
    value: float
    concave: bool
    interior: bool
    vertex: float | None  # unclamped stationary point (None if flat)
    linear: float  # slope at the midrange, natural units
    quadratic: float


def quadratic_vertex(linear, quadratic, mid, lo, hi):
    """Maximizer over [lo, hi] of ``linear*(x-mid) + quadratic*(x-mid)**2``."""
    def g(x):
        return linear * (x - mid) + quadratic * (x - mid) ** 2

    if quadratic < 0:
        vertex = mid - linear / (2.0 * quadratic)
        value = min(max(vertex, lo), hi)
        return Optimum(value, True, lo < vertex < hi, vertex, linear, quadratic)
    vertex = mid - linear / (2.0 * quadratic) if quadratic > 0 else None
    value = hi if g(hi) >= g(lo) else lo
    return Optimum(value, False, False, vertex, linear, quadratic)


def optimal_actf(fit, at=None, factor=ACTF):
    """Best ActF of the fitted surface with the other factors held at ``at``."""
    if factor not in fit.space.names:
        raise ValueError(f"model has no {factor} factor")
    i = fit.space.index(factor)
    if (i,) not in fit.model.terms or (i, i) not in fit.model.terms:
        raise ValueError(f"model lacks the {factor} main or quadratic term")
    f = fit.space[factor]
    x = fit.settings(at)
    linear = fit.coefficient((factor,))
    for j, other in enumerate(fit.space.names):
        if j != i:
            linear += fit.coefficient((factor, other)) * (x[j] - fit.space.factors[j].mid)
    return quadratic_vertex(linear, fit.coefficient((factor, factor)), f.mid, f.lo, f.hi)


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class RegressionReport:
    fit: RSMFit
    effects: tuple
    optimum: Optimum | None

    @property
    def df_resid(self):
        return self.fit.ols.df_resid

    @property
    def ss_resid(self):
        return self.fit.ols.ss_resid

    @property
    def r2(self):
        return self.fit.ols.r2

    def effect(self, label):
        for e in self.effects:
            if e.effect == label:
                return e
        raise KeyError(label)


def regression_report(fit, at=None):
    opt = None
    try:
        opt = optimal_actf(fit, at)
    except ValueError:
        pass
    return RegressionReport(fit, tuple(effect_f_tests(fit)), opt)


EFFECT_FIELDS = ["effect", "nparm", "df", "ss", "f_ratio", "p_value"]


def write_effects_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EFFECT_FIELDS)
        for e in report.effects:
            w.writerow([e.effect, 1, e.df, f"{e.ss:.6g}", f"{e.f:.6g}", f"{e.p:.6g}"])


def read_effects_csv(path):
    with open(path, newline="") as fh:
        return [EffectTest(r["effect"], float(r["ss"]), int(r["df"]), float(r["f_ratio"]),
                           float(r["p_value"])) for r in csv.DictReader(fh)]


def _fmt_p(p):
    return "<.0001" if p < 1e-4 else f"{p:.4f}"


def render_markdown(report, reference_actf=1.15, title="Response-surface fit of DRP"):
    fit = report.fit
    lines = [f"# {title}", "",
             f"- observations: {fit.n}, parameters: {fit.model.p}, residual df: {report.df_resid}",
             f"- R^2: {report.r2:.4f}, residual SS: {report.ss_resid:.6g}", ""]
    opt = report.optimum
    if opt is not None:
        shape = "concave" if opt.concave else "not concave"
        where = "interior" if opt.interior else "boundary"
        lines += ["## Optimal ActF", "",
                  f"- estimated optimum: {opt.value:.4f} ({shape}, {where})",
                  f"- reference value for comparison: {reference_actf:.2f}",
                  f"- linear ActF slope at midrange: {opt.linear:.6g}; quadratic coefficient: {opt.quadratic:.6g}"]
        try:
            lin = report.effect(ACTF)
            lines.append(f"- linear ActF term: F = {lin.f:.3f}, p = {_fmt_p(lin.p)}")
        except KeyError:
            pass
        lines.append("")
    coef, se = fit.natural_coefficients()
    lines += ["## Effect tests", "", "| Effect | Nparm | DF | Sum of Squares | F Ratio | Prob > F |",
              "|---|---|---|---|---|---|"]
    for e in report.effects:
        lines.append(f"| {e.effect} | 1 | {e.df} | {e.ss:.4f} | {e.f:.3f} | {_fmt_p(e.p)} |")
    lines += ["", "## Coefficients (centered natural units)", "", "| Term | Estimate | Std Error |",
              "|---|---|---|"]
    for label, c, s in zip(fit.labels, coef, se):
        lines.append(f"| {label} | {c:.6g} | {s:.6g} |")
    return "\n".join(lines) + "\n"


def plot_profiles(fit, directory, at=None):
    """Write one PNG per factor profiler slice into ``directory``; needs matplotlib."""
    import os

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(directory, exist_ok=True)
    paths = []
    for name in fit.space.names:
        s = profile(fit, name, at)
        fig, ax = plt.subplots(figsize=(3.2, 2.4))
        ax.plot(s.grid, s.predicted)
        ax.axvline(s.current, ls=":", c="k", lw=0.8)
        ax.set_xlabel(name)
        ax.set_ylabel("DRP (%)")
        fig.tight_layout()
        path = os.path.join(directory, f"profile_{name}.png")
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
