"""SSD reliability analytics.

Error rates, failure rate as a function of any snapshot field, lifecycle phase
labeling over data written, correlated failures of paired drives and write
amplification seen from the operating system.

A drive counts as failed when it has reported at least one uncorrectable error
over its lifetime.  Bits accessed are ``8e12 * (flash_written_tb + flash_read_tb)``.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .exceptions import FleetrelError, PhasesNotIdentifiable
from .stat_fit import BucketedSeries, bucket_series

BITS_PER_TB = 8e12
SECTOR_BYTES = 512
PHASE_NAMES = ("early_detection", "early_failure", "usable_life", "wearout")


def _check_count(value, name):
    if isinstance(value, bool) or not float(value).is_integer() or value < 0:
        raise FleetrelError(f"{name} must be a non-negative integer, got {value!r}")


def uber(uncorrectable_errors, bits_accessed):
    """Uncorrectable bit error rate."""
    _check_count(uncorrectable_errors, "uncorrectable_errors")
    if not bits_accessed > 0:
        raise FleetrelError(f"bits_accessed must be positive, got {bits_accessed!r}")
    return uncorrectable_errors / bits_accessed


def ber(correctable, uncorrectable, bits_accessed):
    """Bit error rate over correctable and uncorrectable errors."""
    _check_count(correctable, "correctable")
    return uber(correctable + uncorrectable, bits_accessed)


def bits_accessed(snapshot):
    return (snapshot.flash_written_tb + snapshot.flash_read_tb) * BITS_PER_TB


def snapshot_uber(snapshot):
    return uber(snapshot.uncorrectable_errors, bits_accessed(snapshot))


def platform_uber(snapshots):
    """Pooled UBER per platform: total uncorrectable errors over total bits."""
    errs = defaultdict(int)
    bits = defaultdict(float)
    for s in snapshots:
        errs[s.platform] += s.uncorrectable_errors
        bits[s.platform] += bits_accessed(s)
    return {p: uber(errs[p], bits[p]) for p in sorted(errs)}


# ---------------------------------------------------------------------------
# factor curves

FACTORS = {
    "written": lambda s: s.flash_written_tb,
    "read": lambda s: s.flash_read_tb,
    "discarded": lambda s: s.discarded_blocks,
    "dram_buffer": lambda s: s.dram_buffer_util_pct,
    "temperature": lambda s: s.avg_temp_c,
    "bus_power": lambda s: s.bus_power_w,
    "os_written": lambda s: s.os_sectors_written * SECTOR_BYTES / 1e12,
}


def _selector(factor):
    if callable(factor):
        return factor
    if factor in FACTORS:
        return FACTORS[factor]
    raise FleetrelError(f"unknown factor {factor!r}; choose from {sorted(FACTORS)} or pass a callable")


def factor_curve(snapshots, factor, bucket_width, min_frac=0.001):
    """SSD failure rate bucketed by ``factor``.

    Parameters
    ----------
    snapshots : iterable of SSDSnapshot
    factor : str or callable
        A key of :data:`FACTORS` or a function of a snapshot.
    bucket_width : float
        Bucket width in the factor's units (TB for the data-volume factors).
    min_frac : float
        Buckets with fewer than this share of drives are dropped.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise FleetrelError("factor_curve: empty cohort")
    sel = _selector(factor)
    return bucket_series(((sel(s), s.failed) for s in snapshots), bucket_width, min_frac)


# ---------------------------------------------------------------------------
# lifecycle phases


@dataclass(frozen=True)
class LifecyclePhases:
    """Three increasing boundaries separating the four lifecycle phases.

    ``boundaries`` are in the curve's x units (TB written for the usual
    curve); ``indices`` are the matching bucket positions.
    """

    boundaries: tuple
    indices: tuple

    def __post_init__(self):
        if len(self.boundaries) != 3 or not all(a < b for a, b in zip(self.boundaries, self.boundaries[1:])):
            raise FleetrelError(f"phase boundaries must be 3 strictly increasing values, got {self.boundaries}")

    def phase_of(self, x):
        return PHASE_NAMES[sum(x > b for b in self.boundaries)]

    def to_dict(self):
        return {
            "boundaries": list(self.boundaries),
            "indices": list(self.indices),
            "phases": list(PHASE_NAMES),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)


def moving_average(values, window=5):
    """Centered moving average; windows are truncated at the edges."""
    v = np.asarray(values, dtype=float)
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(v)])
    out = np.empty_like(v)
    for i in range(len(v)):
        lo, hi = max(0, i - half), min(len(v), i + half + 1)
        out[i] = (csum[hi] - csum[lo]) / (hi - lo)
    return out


def label_phases(curve, window=5, refine=2):
    """Label the lifecycle phases of a failure-rate curve.

    The rates are smoothed with a centered moving average.  The first boundary
    is the first peak of the smoothed curve, the second the first trough after
    it and the third the onset of the final sustained increase.  Each boundary
    is then snapped to the raw curve within ``refine`` buckets: the highest
    point, the first lowest point and the last lowest point respectively.
    For a :class:`BucketedSeries`, a bucket whose lower confidence bound
    reaches the lowest rate counts as lowest too, so sampling noise does not
    move the trough boundaries.

    Parameters
    ----------
    curve : BucketedSeries or (x, y) pair
        At least 8 buckets.
    window : int
        Moving-average width in buckets.
    refine : int
        Half-width of the snapping window in buckets.

    Raises
    ------
    PhasesNotIdentifiable
        If the curve has no rise-fall-rise shape.
    """
    if isinstance(curve, BucketedSeries):
        x, y = np.asarray(curve.centers, float), np.asarray(curve.rates, float)
        floor = np.asarray(curve.ci_low, float)
    else:
        x, y = (np.asarray(a, float) for a in curve)
        floor = y
    n = len(y)
    if n < 8:
        raise FleetrelError(f"label_phases needs at least 8 buckets, got {n}")
    s = moving_average(y, window)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(s))))
    d = np.diff(s)
    sign = np.where(d > tol, 1, np.where(d < -tol, -1, 0))

    peak = next((i for i in range(1, n - 1) if sign[i - 1] > 0 and sign[i] <= 0), None)
    if peak is None:
        raise PhasesNotIdentifiable("phases not identifiable: no initial rise and fall")
    # ride any plateau at the top before looking for the fall
    trough = None
    falling = False
    for i in range(peak, n - 1):
        if sign[i] < 0:
            falling = True
        elif falling:
            trough = i
            break
    if trough is None or s[trough:].max() <= s[trough] + tol:
        raise PhasesNotIdentifiable("phases not identifiable: no later increase")
    level = s[trough] + 0.05 * (s[trough:].max() - s[trough])
    onset = trough + int(np.nonzero(s[trough:] <= level)[0][-1])

    def lowest(i, lo_bound):
        lo, hi = max(lo_bound, i - refine), min(n, i + refine + 1)
        if hi <= lo:
            return np.array([], dtype=int)
        m = y[lo:hi].min()
        return lo + np.nonzero(floor[lo:hi] <= m + tol)[0]

    lo, hi = max(0, peak - refine), min(n, peak + refine + 1)
    b1 = lo + int(np.argmax(y[lo:hi]))
    ties = lowest(trough, b1 + 1)
    b2 = int(ties[0]) if len(ties) else trough
    ties = lowest(onset, b2 + 1)
    b3 = int(ties[-1]) if len(ties) else onset
    if not b1 < b2 < b3:
        raise PhasesNotIdentifiable(f"phases not identifiable: boundaries {b1}, {b2}, {b3} do not increase")
    return LifecyclePhases(tuple(float(x[i]) for i in (b1, b2, b3)), (b1, b2, b3))


# ---------------------------------------------------------------------------
# correlated failures


@dataclass(frozen=True)
class FleetPairIndex:
    """Servers with two SSDs, split by which slot failed."""

    s_lower: frozenset
    s_higher: frozenset
    n_servers: int = 0

    @classmethod
    def from_snapshots(cls, snapshots, platform=None):
        """Index two-drive servers; servers with any other drive count are skipped."""
        by_server = defaultdict(list)
        for s in snapshots:
            if platform is None or s.platform == platform:
                by_server[s.server_id].append(s)
        lower, higher = set(), set()
        n = 0
        for sid, drives in by_server.items():
            if len(drives) != 2:
                continue
            n += 1
            a, b = sorted(drives, key=lambda d: d.slot_index)
            if a.slot_index == b.slot_index:
                raise FleetrelError(f"server {sid} has two drives in slot {a.slot_index}")
            if a.failed:
                lower.add(sid)
            if b.failed:
                higher.add(sid)
        return cls(frozenset(lower), frozenset(higher), n)


def conditional_both_fail(index):
    """Probability that both drives failed given that at least one did."""
    union = index.s_lower | index.s_higher
    if not union:
        raise FleetrelError("conditional_both_fail: no server has a failed drive")
    return len(index.s_lower & index.s_higher) / len(union)


def write_amplification_ratio(snapshot):
    """Flash bytes written per byte the OS reports writing.

    Below 1 when the device buffers and coalesces writes before they reach
    flash.
    """
    if snapshot.os_sectors_written <= 0:
        raise FleetrelError(f"{snapshot.ssd_id}: os_sectors_written must be positive")
    return snapshot.flash_written_tb * 1e12 / (snapshot.os_sectors_written * SECTOR_BYTES)


def phases_to_json(phases, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(phases.to_json() + "\n")


__all__ = [
    "FACTORS",
    "FleetPairIndex",
    "LifecyclePhases",
    "ber",
    "bits_accessed",
    "conditional_both_fail",
    "factor_curve",
    "label_phases",
    "moving_average",
    "platform_uber",
    "snapshot_uber",
    "uber",
    "write_amplification_ratio",
]
