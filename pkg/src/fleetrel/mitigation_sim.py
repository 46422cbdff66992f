"""Trace-driven simulation of DRAM error mitigations.

Two techniques are modeled:

* page offlining, replayed over a classified error trace, and
* physical page randomization, which periodically migrates every logical page
  to a random free frame so that write wear spreads over the whole device.

Error sources are modeled at the fault-class level.  Cell, row, column, bank
and spurious errors are tied to a page and stop once that page is offline.
Socket and channel faults are tied to the server, so their errors keep coming
whatever is offlined.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_fraction
from .exceptions import FleetrelError
from .trace_model import ClassifiedMemError, substream

PAGE_SIZE = 4096
DAY = 86400
PAGE_LATENCY_S = 374.9e-6
UNBOUND_CLASSES = frozenset({"socket", "channel"})


def page_of(event):
    """Physical page number holding ``event``; one DRAM row maps to one page."""
    if not (0 <= event.channel < 16 and 0 <= event.bank < 16 and 0 <= event.row < 2**32):
        raise FleetrelError(f"address out of range for page packing: {event}")
    return ((event.socket * 16 + event.channel) * 16 + event.bank) * 2**32 + event.row


# ---------------------------------------------------------------------------
# page offlining


@dataclass(frozen=True)
class OfflinePolicy:
    """When and how pages are taken offline.

    Parameters
    ----------
    trigger_errors : int
        Errors on a page before an offline attempt; 1 offlines immediately.
    cap_frac : float
        Once offline memory would exceed this share of host capacity, the host
        gets a repair ticket and offlining stops there.
    initial_fail_prob : float
        Probability that an offline attempt fails.
    retry : {"none", "fixed_delay"}
        With ``"fixed_delay"`` a failed attempt is retried ``retry_delay_s``
        later; with ``"none"`` the page is never attempted again.
    """

    trigger_errors: int = 1
    cap_frac: float = 0.05
    initial_fail_prob: float = 0.06
    retry: str = "none"
    retry_delay_s: int = 3600
    page_size: int = PAGE_SIZE

    def __post_init__(self):
        if self.trigger_errors < 1:
            raise FleetrelError("trigger_errors must be >= 1")
        check_fraction(self.cap_frac, "cap_frac")
        check_fraction(self.initial_fail_prob, "initial_fail_prob")
        if self.retry not in ("none", "fixed_delay"):
            raise FleetrelError(f"retry must be 'none' or 'fixed_delay', got {self.retry!r}")
        if self.retry == "fixed_delay" and self.retry_delay_s <= 0:
            raise FleetrelError("retry_delay_s must be positive")


class OfflineStore:
    """Permanent per-host set of offline pages, optionally backed by JSONL.

    Every page added is appended to the file, so reopening the same path
    replays the exact set, as after a reboot.
    """

    def __init__(self, path=None):
        self.path = path
        self._pages = defaultdict(set)
        if path is not None and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                for n, line in enumerate(fh, 1):
                    if not line.strip():
                        continue
                    try:
                        rec = json.loads(line)
                        self._pages[str(rec["host"])].add(int(rec["page"]))
                    except (ValueError, KeyError, TypeError) as exc:
                        raise FleetrelError(f"{path}: line {n}: bad offline record ({exc})") from None

    def add(self, host, page):
        if page in self._pages[host]:
            return
        self._pages[host].add(page)
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps({"host": host, "page": page}, separators=(",", ":")) + "\n")

    def pages(self, host):
        return frozenset(self._pages.get(host, ()))

    def __contains__(self, key):
        host, page = key
        return page in self._pages.get(host, ())

    def snapshot(self):
        return {h: frozenset(p) for h, p in self._pages.items() if p}


@dataclass
class OfflineResult:
    observed: int
    suppressed: int
    reduction_pct: float
    pages_offlined: int
    tickets: list
    timeline: list = field(default_factory=list)
    window: tuple = (0, 0)

    def to_dict(self):
        return {
            "observed": self.observed,
            "suppressed": self.suppressed,
            "reduction_pct": self.reduction_pct,
            "pages_offlined": self.pages_offlined,
            "tickets": list(self.tickets),
            "window": list(self.window),
        }

    def timeline_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["day", "errors", "pages_offline", "tickets"])
            for row in self.timeline:
                w.writerow([row["day"], row["errors"], row["pages_offline"], row["tickets"]])


def _as_classified(trace, classes):
    trace = list(trace)
    if classes is not None:
        classes = list(classes)
        if len(classes) != len(trace):
            raise FleetrelError("classes must align with the trace")
        return [ClassifiedMemError.from_event(e, c) for e, c in zip(trace, classes)]
    for e in trace:
        if not isinstance(e, ClassifiedMemError):
            raise FleetrelError("trace events need a fault class; classify them first or pass classes=")
    return trace


class _Host:
    __slots__ = ("rng", "offline", "counts", "given_up", "frozen")

    def __init__(self, rng, offline):
        self.rng = rng
        self.offline = set(offline)
        self.counts = Counter()
        self.given_up = set()
        self.frozen = False


def run_offline_sim(
    trace,
    policy=None,
    seed=0,
    *,
    classes=None,
    host_capacity_bytes=64 * 2**30,
    deploy_at=None,
    window_days=30,
    store=None,
):
    """Replay a classified error trace with page offlining enabled.

    Parameters
    ----------
    trace : sequence of ClassifiedMemError
        Errors sorted by timestamp.  Plain events are accepted together with
        ``classes``.
    policy : OfflinePolicy
    seed : int
        Offline-attempt failures are drawn from a per-host stream of this seed.
    host_capacity_bytes : int
        Physical memory per host, for the offline cap.
    deploy_at : int, optional
        Timestamp from which offlining runs; errors before it are never
        suppressed.  Defaults to the first error.
    window_days : int
        Reduction is measured over the trailing ``window_days`` of the
        deployed period, as ``1 - observed / raw`` where raw counts every
        error the trace would produce without offlining.
    store : OfflineStore, optional
        Pages already in the store start offline; new ones are added.

    Returns
    -------
    OfflineResult
        ``observed + suppressed`` always equals the trace length.
    """
    policy = policy or OfflinePolicy()
    events = _as_classified(trace, classes)
    if not events:
        raise FleetrelError("run_offline_sim: empty trace")
    times = np.array([e.timestamp for e in events])
    if np.any(np.diff(times) < 0):
        bad = int(np.nonzero(np.diff(times) < 0)[0][0]) + 1
        raise FleetrelError(f"trace is not sorted by time (event {bad} goes back in time)")
    if host_capacity_bytes <= 0:
        raise FleetrelError("host_capacity_bytes must be positive")
    store = store if store is not None else OfflineStore()
    t0 = int(times[0])
    deploy_at = t0 if deploy_at is None else int(deploy_at)
    cap_pages = math.floor(policy.cap_frac * host_capacity_bytes / policy.page_size)

    hosts = {}
    retries = []  # heap of (due, seq, host, page)
    seq = 0
    tickets = []
    observed_flags = np.zeros(len(events), dtype=bool)
    pages_offline_total = sum(len(p) for p in store.snapshot().values())
    day_rows = defaultdict(lambda: [0, 0, 0])

    def host_state(h):
        if h not in hosts:
            hosts[h] = _Host(substream(seed, "offline", h), store.pages(h))
        return hosts[h]

    def attempt(h, st, page, now):
        nonlocal seq, pages_offline_total
        if st.frozen or page in st.offline:
            return
        if len(st.offline) + 1 > cap_pages:
            st.frozen = True
            tickets.append({"host": h, "time": int(now), "pages_offline": len(st.offline)})
            return
        if st.rng.random() < policy.initial_fail_prob:
            if policy.retry == "fixed_delay":
                heapq.heappush(retries, (now + policy.retry_delay_s, seq, h, page))
                seq += 1
            else:
                st.given_up.add(page)
            return
        st.offline.add(page)
        store.add(h, page)
        pages_offline_total += 1

    for idx, e in enumerate(events):
        now = e.timestamp
        while retries and retries[0][0] <= now:
            due, _, h, page = heapq.heappop(retries)
            attempt(h, host_state(h), page, due)
        st = host_state(e.server_id)
        page = page_of(e)
        deployed = now >= deploy_at
        bound = e.fault_class not in UNBOUND_CLASSES
        if deployed and bound and page in st.offline:
            pass  # suppressed
        else:
            observed_flags[idx] = True
            if deployed and page not in st.given_up:
                st.counts[page] += 1
                if st.counts[page] >= policy.trigger_errors:
                    attempt(e.server_id, st, page, now)
        row = day_rows[(now - t0) // DAY]
        row[0] += int(observed_flags[idx])
        row[1] = pages_offline_total
        row[2] = len(tickets)

    timeline = []
    last = [0, 0, 0]
    for day in range(int((times[-1] - t0) // DAY) + 1):
        if day in day_rows:
            last = day_rows[day]
            timeline.append({"day": day, "errors": last[0], "pages_offline": last[1], "tickets": last[2]})
        else:
            timeline.append({"day": day, "errors": 0, "pages_offline": last[1], "tickets": last[2]})

    lo = max(deploy_at, int(times[-1]) - window_days * DAY)
    in_window = times >= lo
    raw = int(in_window.sum())
    seen = int((observed_flags & in_window).sum())
    reduction = 100.0 * (1.0 - seen / raw) if raw else 0.0
    n_obs = int(observed_flags.sum())
    return OfflineResult(
        observed=n_obs,
        suppressed=len(events) - n_obs,
        reduction_pct=reduction,
        pages_offlined=sum(len(s.offline) for s in hosts.values()),
        tickets=tickets,
        timeline=timeline,
        window=(lo, int(times[-1])),
    )


# ---------------------------------------------------------------------------
# physical memory with page randomization


class SimMemory:
    """Logical-to-physical page map over a fixed number of frames.

    The map is a bijection between mapped logical pages and frames that are
    neither free nor offline.  ``wear`` counts writes per frame.
    """

    def __init__(self, total_frames, page_size=PAGE_SIZE):
        if total_frames < 1:
            raise FleetrelError("total_frames must be >= 1")
        self.page_size = page_size
        self.total_frames = int(total_frames)
        self.l2p = {}
        self.p2l = {}
        self.wear = np.zeros(self.total_frames, dtype=np.int64)
        self.offline = set()
        self._free = list(range(self.total_frames))
        self._free_pos = {f: i for i, f in enumerate(self._free)}

    @property
    def free_frames(self):
        return frozenset(self._free)

    def _take_free(self, frame):
        i = self._free_pos.pop(frame)
        last = self._free.pop()
        if last != frame:
            self._free[i] = last
            self._free_pos[last] = i

    def _give_free(self, frame):
        self._free_pos[frame] = len(self._free)
        self._free.append(frame)

    def _draw_free(self, rng):
        if not self._free:
            raise FleetrelError("no free frame available")
        if rng is None:
            return min(self._free)
        return self._free[int(rng.integers(len(self._free)))]

    def map(self, logical, rng=None):
        """Map ``logical`` to a free frame (lowest one without ``rng``)."""
        if logical in self.l2p:
            raise FleetrelError(f"logical page {logical} is already mapped")
        frame = self._draw_free(rng)
        self._take_free(frame)
        self.l2p[logical] = frame
        self.p2l[frame] = logical
        return frame

    def unmap(self, logical):
        frame = self.l2p.pop(logical)
        del self.p2l[frame]
        self._give_free(frame)

    def write(self, logical, n=1):
        try:
            self.wear[self.l2p[logical]] += n
        except KeyError:
            raise FleetrelError(f"logical page {logical} is not mapped") from None

    def move(self, logical, frame):
        """Move ``logical`` to free ``frame``; the copy costs one write there."""
        if frame not in self._free_pos:
            raise FleetrelError(f"frame {frame} is not free")
        old = self.l2p[logical]
        self._take_free(frame)
        del self.p2l[old]
        self.l2p[logical] = frame
        self.p2l[frame] = logical
        self.wear[frame] += 1
        self._give_free(old)

    def take_offline(self, frame, rng=None):
        """Retire ``frame``, first migrating any page it holds."""
        if frame in self.offline:
            return
        if frame in self.p2l:
            logical = self.p2l[frame]
            self.move(logical, self._draw_free_excluding(frame, rng))
        self._take_free(frame)
        self.offline.add(frame)

    def _draw_free_excluding(self, frame, rng):
        choices = [f for f in self._free if f != frame]
        if not choices:
            raise FleetrelError("no free frame to migrate to")
        return min(choices) if rng is None else choices[int(rng.integers(len(choices)))]

    def check_invariants(self):
        """Raise ``AssertionError`` if any structural invariant is broken."""
        assert len(self.l2p) == len(self.p2l)
        for lp, f in self.l2p.items():
            assert self.p2l.get(f) == lp
        mapped = set(self.p2l)
        free = set(self._free)
        assert len(free) == len(self._free)
        assert all(self._free[i] == f for f, i in self._free_pos.items())
        assert not mapped & free and not mapped & self.offline and not free & self.offline
        assert mapped | free | self.offline == set(range(self.total_frames))
        assert np.all(self.wear >= 0)


def randomize_page(mem, logical_page, rng):
    """Move ``logical_page`` to a frame drawn uniformly from the free pool.

    The old frame returns to the pool and the destination frame takes one
    write for the copy.  ``mem`` is updated in place and returned.
    """
    if logical_page not in mem.l2p:
        raise FleetrelError(f"logical page {logical_page} is not mapped")
    frame = mem._draw_free(rng)
    mem.move(logical_page, frame)
    return mem


@dataclass(frozen=True)
class RandomizationPlan:
    """Migrate every in-use page once per period.

    ``pages_per_second = capacity * utilization / page_size / (period_days * 86400)``
    and the worst-case overhead fraction is that rate times the per-page
    migration latency.
    """

    capacity_bytes: float
    utilization: float = 1.0
    period_days: float = 1.0
    page_latency_s: float = PAGE_LATENCY_S
    page_size: int = PAGE_SIZE

    def __post_init__(self):
        if self.capacity_bytes <= 0:
            raise FleetrelError("capacity_bytes must be positive")
        check_fraction(self.utilization, "utilization")
        if not self.period_days > 0:
            raise FleetrelError(f"period_days must be positive, got {self.period_days!r}")
        if self.page_latency_s < 0 or self.page_size <= 0:
            raise FleetrelError("page_latency_s must be >= 0 and page_size > 0")

    @property
    def pages_per_second(self):
        return self.capacity_bytes * self.utilization / self.page_size / (self.period_days * DAY)

    @property
    def overhead_fraction(self):
        return self.pages_per_second * self.page_latency_s


def overhead_estimate(plan):
    """Return ``(pages_per_second, overhead_fraction)`` for ``plan``."""
    if not plan.period_days > 0:
        raise FleetrelError("period_days must be positive")
    return plan.pages_per_second, plan.overhead_fraction


def gini(values):
    """Gini coefficient of non-negative values; 0 for all-equal or all-zero."""
    x = np.sort(np.asarray(values, dtype=float))
    if x.size == 0:
        raise FleetrelError("gini of an empty sequence")
    if np.any(x < 0):
        raise FleetrelError("gini needs non-negative values")
    total = x.sum()
    if total == 0:
        return 0.0
    n = x.size
    ranks = np.arange(1, n + 1)
    return float(2.0 * np.sum(ranks * x) / (n * total) - (n + 1) / n)


@dataclass
class RandomizerResult:
    wear_baseline: np.ndarray
    wear_randomized: np.ndarray
    gini_baseline: float
    gini_randomized: float
    migrations: int
    pages_per_second: float
    overhead_fraction: float

    @property
    def gini_reduction(self):
        return 0.0 if self.gini_baseline == 0 else 1.0 - self.gini_randomized / self.gini_baseline

    def to_dict(self):
        return {
            "frames": int(self.wear_baseline.size),
            "gini_baseline": self.gini_baseline,
            "gini_randomized": self.gini_randomized,
            "gini_reduction": self.gini_reduction,
            "migrations": self.migrations,
            "pages_per_second": self.pages_per_second,
            "overhead_fraction": self.overhead_fraction,
        }


def run_randomizer_sim(access_profile, plan, steps, seed, writes_per_period=None):
    """Compare frame wear with and without page randomization.

    Parameters
    ----------
    access_profile : sequence of float
        Write weight of each logical page.
    plan : RandomizationPlan
        Its utilization sets the frame count, ``ceil(pages / utilization)``,
        with at least one spare frame so that pages can move.
    steps : int
        Number of simulated writes; both runs replay the same write sequence.
    seed : int
    writes_per_period : int, optional
        Writes that make up one randomization period.  Within a period every
        logical page is migrated once, round-robin.  Defaults to 16 writes per
        logical page.
    """
    w = np.asarray(access_profile, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise FleetrelError("access_profile must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() == 0:
        raise FleetrelError("access_profile weights must be non-negative and not all zero")
    if steps < 1:
        raise FleetrelError("steps must be >= 1")
    if plan.utilization == 0:
        raise FleetrelError("utilization must be positive to simulate")
    n = w.size
    frames = max(math.ceil(n / plan.utilization - 1e-9), n + 1)
    wpp = 16 * n if writes_per_period is None else int(writes_per_period)
    if wpp < 1:
        raise FleetrelError("writes_per_period must be >= 1")

    rng_writes = substream(seed, "randomizer", "writes")
    rng_moves = substream(seed, "randomizer", "moves")
    writes = rng_writes.choice(n, size=int(steps), p=w / w.sum())

    base = np.bincount(writes, minlength=frames).astype(np.int64)

    mem = SimMemory(frames)
    for lp in range(n):
        mem.map(lp)
    interval = wpp / n
    next_move = interval
    cursor = 0
    migrations = 0
    # sequential replay: wear depends on where each page sits at write time
    for i, lp in enumerate(writes, 1):
        mem.wear[mem.l2p[int(lp)]] += 1
        while i >= next_move:
            randomize_page(mem, cursor, rng_moves)
            migrations += 1
            cursor = (cursor + 1) % n
            next_move += interval
    pps, frac = overhead_estimate(plan)
    return RandomizerResult(base, mem.wear.copy(), gini(base), gini(mem.wear), migrations, pps, frac)
