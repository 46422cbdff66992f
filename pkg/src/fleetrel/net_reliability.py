"""Network reliability metrics.

Incident rates per device type, mean time between failures and to repair,
resolution-time percentiles, per-entity reliability curves with exponential
fits, categorical breakdowns and steady-state conditional risk.

Times in records are Unix seconds; every metric is reported in hours.
Percentiles use the nearest-rank rule throughout.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np

from ._validation import check_fraction, nearest_rank
from .exceptions import FleetrelError
from .stat_fit import fit_exponential_percentile

HOUR = 3600.0
RISK_THRESHOLD = 1e-4


@dataclass(frozen=True)
class IncidentStats:
    """Incidents ``i`` over population ``n``; the rate may exceed 1."""

    i: int
    n: int

    @property
    def r(self):
        return self.i / self.n

    def to_dict(self):
        return {"i": self.i, "n": self.n, "r": self.r}


def incident_rate(i, n):
    if n < 1:
        raise FleetrelError(f"device population must be >= 1, got {n}")
    if i < 0:
        raise FleetrelError(f"incident count must be >= 0, got {i}")
    return IncidentStats(int(i), int(n))


def _check_sorted(times, name):
    t = np.asarray(times, dtype=float)
    if np.any(np.diff(t) < 0):
        raise FleetrelError(f"{name} must be sorted in time")
    return t


def mtbf(event_starts, unit=HOUR):
    """Mean gap in hours between consecutive start times (seconds by default).

    Pass ``unit=1`` when the starts are already in hours.
    """
    t = _check_sorted(event_starts, "event starts")
    if len(t) < 2:
        raise FleetrelError("mtbf needs at least two events")
    return float(np.mean(np.diff(t))) / unit


def mttr(intervals, unit=HOUR):
    """Mean repair duration in hours.

    ``intervals`` holds ``(start, end)`` pairs or records with ``start`` and
    ``end``/``resolved``; open tickets are skipped.
    """
    durations = []
    for item in intervals:
        if isinstance(item, tuple):
            start, end = item
        else:
            start = item.start
            end = getattr(item, "end", None) if hasattr(item, "end") else item.resolved
        if end is None:
            continue
        if end < start:
            raise FleetrelError(f"interval ends before it starts: {start} > {end}")
        durations.append(end - start)
    if not durations:
        raise FleetrelError("mttr needs at least one closed interval")
    return float(np.mean(durations)) / unit


# ---------------------------------------------------------------------------
# per-entity curves


@dataclass(frozen=True)
class ReliabilityCurve:
    """Sorted per-entity values with a fitted ``a * exp(b * p)`` curve."""

    values: tuple
    fit: object

    @property
    def positions(self):
        n = len(self.values)
        return tuple((i + 1) / n for i in range(n))

    def percentile(self, p):
        return nearest_rank(self.values, p)

    def to_rows(self):
        return [
            {"p": p, "value": v, "fitted": float(self.fit(p))}
            for p, v in zip(self.positions, self.values)
        ]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "value", "fitted"])
            for row in self.to_rows():
                w.writerow([f"{row['p']:.6f}", f"{row['value']:.6f}", f"{row['fitted']:.6f}"])


def percentile_curve(per_entity_values):
    """Build a :class:`ReliabilityCurve` from one value per entity.

    The i-th smallest of ``n`` values sits at percentile ``(i + 1) / n``.
    """
    v = np.sort(np.asarray(list(per_entity_values), dtype=float))
    if len(v) < 3:
        raise FleetrelError(f"percentile_curve needs at least 3 entities, got {len(v)}")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise FleetrelError("per-entity values must be positive and finite")
    n = len(v)
    pts = [((i + 1) / n, float(x)) for i, x in enumerate(v)]
    return ReliabilityCurve(tuple(float(x) for x in v), fit_exponential_percentile(pts))


def exact_curve_sample(a, b, n):
    """``n`` values placed exactly on ``a * exp(b * p)`` at the curve positions."""
    return [a * np.exp(b * (i + 1) / n) for i in range(n)]


# ---------------------------------------------------------------------------
# incidents


def resolution_percentile(incidents, p=0.75):
    """Nearest-rank percentile of incident resolution time, in hours."""
    durations = sorted(inc.resolution_s for inc in incidents)
    if not durations:
        raise FleetrelError("resolution_percentile: no incidents")
    return nearest_rank(durations, p) / HOUR


GROUPINGS = ("root_cause", "device_type", "sev_level")


def breakdown(incidents, group_by="root_cause"):
    """Share of incidents per category.

    An incident with several root causes counts once toward each, so the
    root-cause shares may sum above one; each share is still at most one.
    """
    if group_by not in GROUPINGS:
        raise FleetrelError(f"group_by must be one of {GROUPINGS}, got {group_by!r}")
    incidents = list(incidents)
    if not incidents:
        raise FleetrelError("breakdown: no incidents")
    counts = Counter()
    for inc in incidents:
        if group_by == "root_cause":
            counts.update(set(inc.root_cause))
        else:
            counts[getattr(inc, group_by)] += 1
    return {k: counts[k] / len(incidents) for k in sorted(counts, key=str)}


def incident_table(incidents, populations):
    """Per device type ``{i, n, r, mtbi_h, p75irt_h}``.

    ``mtbi_h`` is ``None`` for types with fewer than two incidents and
    ``p75irt_h`` is ``None`` for types without incidents.
    """
    by_type = defaultdict(list)
    for inc in incidents:
        by_type[inc.device_type].append(inc)
    out = {}
    for dev in sorted(set(populations) | set(by_type)):
        if dev not in populations:
            raise FleetrelError(f"no population given for device type {dev!r}")
        incs = sorted(by_type.get(dev, []), key=lambda x: x.start)
        row = incident_rate(len(incs), populations[dev]).to_dict()
        row["mtbi_h"] = mtbf([x.start for x in incs]) if len(incs) >= 2 else None
        row["p75irt_h"] = resolution_percentile(incs) if incs else None
        out[dev] = row
    return out


# ---------------------------------------------------------------------------
# backbone tickets


def per_link_metrics(tickets, window_s=None):
    """Per-link MTBF and MTTR in hours from repair tickets.

    MTBF is the mean gap between consecutive ticket starts.  Links with a
    single ticket get the whole observation window ``window_s`` as their MTBF
    when one is given, and are skipped otherwise.  Maintenance tickets are excluded.
    """
    by_link = defaultdict(list)
    for t in tickets:
        if t.kind == "repair":
            by_link[t.link_id].append(t)
    out = {}
    for link in sorted(by_link):
        ts = sorted(by_link[link], key=lambda t: t.start)
        starts = [t.start for t in ts]
        if len(ts) >= 2:
            m = mtbf(starts)
        elif window_s is not None:
            m = window_s / HOUR
        else:
            continue
        closed = [t for t in ts if t.end is not None]
        out[link] = {
            "vendor": ts[0].vendor,
            "continent": ts[0].continent,
            "mtbf_h": m,
            "mttr_h": mttr(closed) if closed else None,
        }
    return out


def group_metrics(link_metrics, key):
    """Average per-link MTBF/MTTR over links sharing ``key`` (vendor or continent)."""
    groups = defaultdict(list)
    for m in link_metrics.values():
        groups[m[key]].append(m)
    out = {}
    for g in sorted(groups):
        ms = groups[g]
        repairs = [m["mttr_h"] for m in ms if m["mttr_h"] is not None]
        out[g] = {
            "links": len(ms),
            "mtbf_h": float(np.mean([m["mtbf_h"] for m in ms])),
            "mttr_h": float(np.mean(repairs)) if repairs else None,
        }
    return out


# ---------------------------------------------------------------------------
# conditional risk


def conditional_risk(mtbf_h, mttr_h):
    """Steady-state unavailability ``mttr / (mtbf + mttr)``."""
    if not mtbf_h > 0:
        raise FleetrelError(f"mtbf must be positive, got {mtbf_h!r}")
    if not mttr_h >= 0:
        raise FleetrelError(f"mttr must be non-negative, got {mttr_h!r}")
    return mttr_h / (mtbf_h + mttr_h)


def risk_check(mtbf_h, mttr_h, threshold=RISK_THRESHOLD):
    """True when the conditional risk stays below ``threshold``."""
    check_fraction(threshold, "threshold")
    return conditional_risk(mtbf_h, mttr_h) < threshold


def write_report(report, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
        fh.write("\n")
