"""Hierarchical attribution of DRAM errors to the component that failed.

Rules are applied in a fixed order, and errors claimed by one rule are excluded
from every later rule:

1. socket   - more than ``threshold_k`` errors spanning >1 channel on one socket
2. channel  - more than ``threshold_k`` errors spanning >1 bank on one channel
3. bank     - more than ``threshold_k`` errors spanning >1 row in one bank
4. row      - more than one column with errors in one row
5. column   - more than one row with errors in one column
6. cell     - another error at the same byte address within ``cell_window_s``
7. spurious - everything left over

Each rule is evaluated over the errors of one server in one UTC calendar month.
"""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from sklearn.base import BaseEstimator

from .exceptions import FleetrelError
from .trace_model import COMPONENT_CLASSES, utc_month

CLASS_ORDER = {name: i for i, name in enumerate(COMPONENT_CLASSES)}


def _loc(e, depth):
    """Location key of an error truncated to ``depth`` levels (socket=1 ... bank=3)."""
    return (e.socket, e.channel, e.bank)[:depth]


def _threshold_rule(events, remaining, labels, depth, child, threshold_k, name):
    groups = defaultdict(list)
    for i in remaining:
        groups[_loc(events[i], depth)].append(i)
    claimed = set()
    # ascending component index; each instance decided independently
    for key in sorted(groups):
        idx = groups[key]
        if len(idx) > threshold_k and len({child(events[i]) for i in idx}) > 1:
            for i in idx:
                labels[i] = name
            claimed.update(idx)
    return [i for i in remaining if i not in claimed]


def _spread_rule(events, remaining, labels, key, child, name):
    groups = defaultdict(list)
    for i in remaining:
        groups[key(events[i])].append(i)
    claimed = set()
    for k in sorted(groups):
        idx = groups[k]
        if len({child(events[i]) for i in idx}) > 1:
            for i in idx:
                labels[i] = name
            claimed.update(idx)
    return [i for i in remaining if i not in claimed]


def classify_month(events, threshold_k=1000, cell_window_s=60):
    """Assign a component class to every error of one server-month.

    Parameters
    ----------
    events : sequence of MemErrorEvent
        All errors of a single server within a single UTC month, any order.
    threshold_k : int or float
        Error-count threshold of the socket, channel and bank rules.  Pass
        ``math.inf`` to disable those three rules.
    cell_window_s : int
        Maximum separation in seconds of two errors at one byte address for
        them to count as a cell failure.

    Returns
    -------
    list of str
        Class names aligned with ``events``.
    """
    events = list(events)
    if threshold_k is None:
        threshold_k = math.inf
    if threshold_k < 1:
        raise FleetrelError(f"threshold_k must be >= 1, got {threshold_k}")
    if cell_window_s < 0:
        raise FleetrelError("cell_window_s must be >= 0")
    if not events:
        return []
    servers = {e.server_id for e in events}
    if len(servers) > 1:
        raise FleetrelError(f"classify_month needs one server, got {sorted(servers)[:3]}...")
    months = {utc_month(e.timestamp) for e in events}
    if len(months) > 1:
        raise FleetrelError(f"classify_month needs one UTC month, got {sorted(months)}")

    labels = [None] * len(events)
    remaining = list(range(len(events)))
    remaining = _threshold_rule(events, remaining, labels, 1, lambda e: e.channel, threshold_k, "socket")
    remaining = _threshold_rule(events, remaining, labels, 2, lambda e: e.bank, threshold_k, "channel")
    remaining = _threshold_rule(events, remaining, labels, 3, lambda e: e.row, threshold_k, "bank")
    remaining = _spread_rule(
        events, remaining, labels, lambda e: (e.socket, e.channel, e.bank, e.row), lambda e: e.column, "row"
    )
    remaining = _spread_rule(
        events, remaining, labels, lambda e: (e.socket, e.channel, e.bank, e.column), lambda e: e.row, "column"
    )

    by_byte = defaultdict(list)
    for i in remaining:
        by_byte[events[i].byte_address].append(i)
    for idx in by_byte.values():
        if len(idx) < 2:
            continue
        idx.sort(key=lambda i: events[i].timestamp)
        for pos, i in enumerate(idx):
            t = events[i].timestamp
            near_prev = pos > 0 and t - events[idx[pos - 1]].timestamp <= cell_window_s
            near_next = pos + 1 < len(idx) and events[idx[pos + 1]].timestamp - t <= cell_window_s
            if near_prev or near_next:
                labels[i] = "cell"
    return [lab or "spurious" for lab in labels]


def group_server_months(events):
    """Group events by ``(server_id, (year, month))`` preserving input order."""
    groups = defaultdict(list)
    for e in events:
        groups[(e.server_id, utc_month(e.timestamp))].append(e)
    return dict(sorted(groups.items()))


def classify_fleet(events, threshold_k=1000, cell_window_s=60):
    """Classify an arbitrary event stream; labels are aligned with ``events``."""
    events = list(events)
    positions = defaultdict(list)
    for pos, e in enumerate(events):
        positions[(e.server_id, utc_month(e.timestamp))].append(pos)
    labels = [None] * len(events)
    for key in sorted(positions):
        pos = positions[key]
        for p, lab in zip(pos, classify_month([events[p] for p in pos], threshold_k, cell_window_s)):
            labels[p] = lab
    return labels


@dataclass
class ClassificationReport:
    """Fleet-level class shares.

    ``error_fraction`` divides per-class error counts by all errors;
    ``server_fraction`` divides the number of server-months exhibiting a class
    by the number of server-months with errors, so it may sum above one.
    """

    assignments: dict
    error_counts: dict
    error_fraction: dict
    server_fraction: dict
    n_errors: int
    n_groups: int = field(default=0)

    def to_rows(self):
        return [
            {"class": c, "error_fraction": self.error_fraction[c], "server_fraction": self.server_fraction[c]}
            for c in COMPONENT_CLASSES
        ]

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["class", "error_fraction", "server_fraction"],
                                    lineterminator="\n")
            writer.writeheader()
            for row in self.to_rows():
                writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})


def summarize(classified):
    """Summarize classified server-months.

    Parameters
    ----------
    classified : mapping
        ``{(server_id, month): [class, ...]}`` as produced by pairing
        :func:`group_server_months` with :func:`classify_month`.

    Returns
    -------
    ClassificationReport
    """
    if not classified or not any(classified.values()):
        raise FleetrelError("summarize needs at least one classified error")
    counts = Counter()
    exhibiting = Counter()
    groups = 0
    for labels in classified.values():
        if not labels:
            continue
        groups += 1
        for lab in labels:
            if lab not in CLASS_ORDER:
                raise FleetrelError(f"unknown component class {lab!r}")
        counts.update(labels)
        exhibiting.update(set(labels))
    total = sum(counts.values())
    return ClassificationReport(
        assignments={k: list(v) for k, v in sorted(classified.items())},
        error_counts={c: counts[c] for c in COMPONENT_CLASSES},
        error_fraction={c: counts[c] / total for c in COMPONENT_CLASSES},
        server_fraction={c: exhibiting[c] / groups for c in COMPONENT_CLASSES},
        n_errors=total,
        n_groups=groups,
    )


class ComponentClassifier(BaseEstimator):
    """Estimator-style wrapper around :func:`classify_month`.

    ``fit`` classifies a fleet stream and stores ``labels_`` and ``report_``;
    ``predict`` classifies a new stream without touching fitted state.

    Examples
    --------
    >>> clf = ComponentClassifier(threshold_k=1000).fit(events)  # doctest: +SKIP
    >>> clf.report_.error_fraction["socket"]  # doctest: +SKIP
    """

    def __init__(self, threshold_k=1000, cell_window_s=60):
        self.threshold_k = threshold_k
        self.cell_window_s = cell_window_s

    def fit(self, X, y=None):
        events = list(X)
        self.labels_ = self.predict(events)
        grouped = defaultdict(list)
        for e, lab in zip(events, self.labels_):
            grouped[(e.server_id, utc_month(e.timestamp))].append(lab)
        self.report_ = summarize(dict(grouped))
        return self

    def predict(self, X):
        return classify_fleet(X, self.threshold_k, self.cell_window_s)

    def fit_predict(self, X, y=None):
        return self.fit(X).labels_
