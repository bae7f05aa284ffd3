"""GEH volume calibration of simulated link counts against target counts.

Two conventions of the statistic are available. The standard one divides the
squared difference by the mean of the two volumes; the ``alternate`` one
divides by twice their sum, which gives exactly half the standard value.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

LINK_THRESHOLD = 5.0
NETWORK_THRESHOLD = 4.0
LINK_SHARE = 0.85


def geh(e, v, alternate=False):
    """GEH statistic of a model estimate ``e`` against a count ``v`` (both veh/h).

    Returns 0 when both volumes are zero.
    """
    e, v = float(e), float(v)
    if e < 0 or v < 0:
        raise ValueError("volumes must be non-negative")
    if e + v == 0:
        return 0.0
    # sqrt((e - v)^2 / ((e + v) / 2)), arranged so tiny volumes do not underflow
    g = math.sqrt(2.0) * abs(e - v) / math.sqrt(e + v)
    return g / 2.0 if alternate else g


@dataclass(frozen=True)
class LinkGEH:
    link: str
    estimate: float
    count: float
    geh: float
    passed: bool


@dataclass(frozen=True)
class CalibrationReport:
    links: tuple
    share_below: float  # share of links with GEH under the link threshold
    network_estimate: float
    network_count: float
    network_geh: float
    links_pass: bool
    network_pass: bool
    alternate: bool = False

    @property
    def passed(self):
        return self.links_pass and self.network_pass

    def summary(self):
        return (f"links below {LINK_THRESHOLD:g}: {100 * self.share_below:.1f}% "
                f"({'pass' if self.links_pass else 'fail'}); network GEH {self.network_geh:.3f} "
                f"({'pass' if self.network_pass else 'fail'}); overall {'PASS' if self.passed else 'FAIL'}")


def check_calibration(counts, alternate=False, link_threshold=LINK_THRESHOLD,
                      network_threshold=NETWORK_THRESHOLD, share=LINK_SHARE):
    """Evaluate ``counts``, a mapping ``link -> (estimate, count)``."""
    if not counts:
        raise ValueError("no links to calibrate")
    rows = []
    for link, (e, v) in counts.items():
        g = geh(e, v, alternate)
        rows.append(LinkGEH(str(link), float(e), float(v), g, g < link_threshold))
    frac = sum(r.passed for r in rows) / len(rows)
    e_sum = sum(r.estimate for r in rows)
    v_sum = sum(r.count for r in rows)
    g_net = geh(e_sum, v_sum, alternate)
    return CalibrationReport(tuple(rows), frac, e_sum, v_sum, g_net, frac >= share,
                             g_net < network_threshold, alternate)


def expected_link_volumes(net, vols):
    """Hourly flow each link should carry under movement volumes ``vols``."""
    out = {}
    for iid in net.ids:
        for approach in ("N", "S", "E", "W"):
            try:
                link = net.inbound_link(iid, approach)
            except KeyError:
                continue
            out[link.id] = vols.approach_volume(iid, approach)
    return out


def pair_counts(estimates, targets):
    """Join two ``link -> volume`` maps on their common links."""
    missing = set(targets) - set(estimates)
    if missing:
        raise ValueError(f"no estimate for links: {sorted(missing)}")
    return {link: (float(estimates[link]), float(v)) for link, v in targets.items()}


def write_report_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["link", "E", "V", "GEH", "pass"])
        for r in report.links:
            w.writerow([r.link, f"{r.estimate:g}", f"{r.count:g}", f"{r.geh:.4f}", int(r.passed)])
        w.writerow(["network", f"{report.network_estimate:g}", f"{report.network_count:g}",
                    f"{report.network_geh:.4f}", int(report.network_pass)])
        fh.write(f"# {report.summary()}\n")


def read_counts_csv(path):
    """Read ``link,count`` rows (extra columns ignored) into a mapping."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["link"]] = float(row["count"])
    return out

