"""Record types, JSONL/CSV/ticket I/O and the seeded synthetic trace generator.

Every record type round-trips through ``to_dict``/``from_dict``; one JSON object
per line, field names exactly as the dataclass fields.  Readers accept plain or
gzip-compressed files transparently.
"""

from __future__ import annotations

import csv
import dataclasses
import gzip
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator

import numpy as np

from .exceptions import FleetrelError, ParseError

ACCESS_TYPES = ("read", "write", "scrub")
SEVERITIES = ("correctable", "uncorrectable")
DENSITIES = {"1Gb": 1, "2Gb": 2, "4Gb": 4}
TRANSFER_WIDTHS = ("x4", "x8")
CHIP_COUNTS = (8, 16, 32, 48, 64)
DEVICE_TYPES = ("core", "CSA", "CSW", "ESW", "SSW", "FSW", "RSW")
SEV_LEVELS = (1, 2, 3)
ROOT_CAUSES = (
    "maintenance",
    "hardware",
    "misconfiguration",
    "bug",
    "accident",
    "capacity_planning",
    "undetermined",
)
CONTINENTS = ("NA", "EU", "AS", "SA", "AF", "AU")
TICKET_KINDS = ("repair", "maintenance")
COMPONENT_CLASSES = ("socket", "channel", "bank", "row", "column", "cell", "spurious")


@dataclass(frozen=True)
class Platform:
    name: str
    ssds_per_server: int
    pcie: str
    capacity_gb: float
    written_tb: float
    read_tb: float
    uber: float


# Platform table of the studied SSD fleet (per-SSD lifetime means).
PLATFORMS = {
    "A": Platform("A", 1, "v1,x4", 720, 27.2, 23.8, 5.2e-10),
    "B": Platform("B", 2, "v1,x4", 720, 48.5, 45.1, 2.6e-9),
    "C": Platform("C", 1, "v2,x4", 1200, 37.8, 43.4, 1.5e-10),
    "D": Platform("D", 2, "v2,x4", 1200, 18.9, 30.6, 5.7e-11),
    "E": Platform("E", 1, "v2,x4", 3200, 23.9, 51.1, 5.1e-11),
    "F": Platform("F", 2, "v2,x4", 3200, 14.8, 18.2, 1.8e-10),
}


# ---------------------------------------------------------------------------
# field coercion


def _get(d, key, line, *, optional=False, default=None):
    if key not in d or d[key] is None:
        if optional:
            return default
        raise ParseError("missing required field", line=line, field=key)
    return d[key]


def _as_int(value, key, line, *, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ParseError(f"expected integer, got {value!r}", line=line, field=key)
    if minimum is not None and value < minimum:
        raise ParseError(f"must be >= {minimum}, got {value}", line=line, field=key)
    return value


def _as_float(value, key, line, *, minimum=None, maximum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"expected number, got {value!r}", line=line, field=key)
    value = float(value)
    if not math.isfinite(value):
        raise ParseError("must be finite", line=line, field=key)
    if minimum is not None and value < minimum:
        raise ParseError(f"must be >= {minimum}, got {value}", line=line, field=key)
    if maximum is not None and value > maximum:
        raise ParseError(f"must be <= {maximum}, got {value}", line=line, field=key)
    return value


def _as_str(value, key, line, *, choices=None, nonempty=False):
    if not isinstance(value, str):
        raise ParseError(f"expected string, got {value!r}", line=line, field=key)
    if nonempty and not value:
        raise ParseError("must be non-empty", line=line, field=key)
    if choices is not None and value not in choices:
        raise ParseError(f"{value!r} not one of {list(choices)}", line=line, field=key)
    return value


def _reject_unknown(d, cls, line):
    known = {f.name for f in dataclasses.fields(cls)}
    for key in d:
        if key not in known:
            raise ParseError("unknown field", line=line, field=key)


class _Record:
    """Mixin providing dict/JSON conversion for the frozen record types."""

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}

    def to_json(self):
        return json.dumps(self.to_dict(), separators=(",", ":"))


# ---------------------------------------------------------------------------
# record types


@dataclass(frozen=True)
class MemErrorEvent(_Record):
    """One DRAM error observation with its physical location."""

    timestamp: int
    server_id: str
    socket: int
    channel: int
    bank: int
    row: int
    column: int
    byte_offset: int
    access_type: str = "read"
    severity: str = "correctable"

    def __post_init__(self):
        if self.timestamp <= 0:
            raise FleetrelError(f"timestamp must be > 0, got {self.timestamp}")
        if not self.server_id:
            raise FleetrelError("server_id must be non-empty")
        for name in ("socket", "channel", "bank", "row", "column", "byte_offset"):
            if getattr(self, name) < 0:
                raise FleetrelError(f"{name} must be >= 0")

    @property
    def byte_address(self):
        return (self.socket, self.channel, self.bank, self.row, self.column, self.byte_offset)

    @property
    def month(self):
        return utc_month(self.timestamp)

    @classmethod
    def from_dict(cls, d, line=None):
        _reject_unknown(d, cls, line)
        return cls(
            timestamp=_as_int(_get(d, "timestamp", line), "timestamp", line, minimum=1),
            server_id=_as_str(_get(d, "server_id", line), "server_id", line, nonempty=True),
            socket=_as_int(_get(d, "socket", line), "socket", line, minimum=0),
            channel=_as_int(_get(d, "channel", line), "channel", line, minimum=0),
            bank=_as_int(_get(d, "bank", line), "bank", line, minimum=0),
            row=_as_int(_get(d, "row", line), "row", line, minimum=0),
            column=_as_int(_get(d, "column", line), "column", line, minimum=0),
            byte_offset=_as_int(_get(d, "byte_offset", line), "byte_offset", line, minimum=0),
            access_type=_as_str(_get(d, "access_type", line), "access_type", line, choices=ACCESS_TYPES),
            severity=_as_str(_get(d, "severity", line), "severity", line, choices=SEVERITIES),
        )


@dataclass(frozen=True)
class ClassifiedMemError(_Record):
    """A :class:`MemErrorEvent` flattened together with its component class."""

    timestamp: int
    server_id: str
    socket: int
    channel: int
    bank: int
    row: int
    column: int
    byte_offset: int
    access_type: str
    severity: str
    fault_class: str

    @property
    def event(self):
        d = self.to_dict()
        d.pop("fault_class")
        return MemErrorEvent(**d)

    @classmethod
    def from_event(cls, event, fault_class):
        return cls(**event.to_dict(), fault_class=fault_class)

    @classmethod
    def from_dict(cls, d, line=None):
        _reject_unknown(d, cls, line)
        rest = dict(d)
        fault_class = _as_str(_get(rest, "fault_class", line), "fault_class", line, choices=COMPONENT_CLASSES)
        rest.pop("fault_class")
        return cls.from_event(MemErrorEvent.from_dict(rest, line), fault_class)


@dataclass(frozen=True)
class ServerDesign(_Record):
    """Server factor vector consumed by the logistic failure model."""

    capacity_gb: float
    density: str
    chips: int
    transfer_width: str = "x4"
    cpu_util_pct: float = 0.0
    mem_util_pct: float = 0.0
    age_years: float = 0.0
    cpus: int = 0
    workload: str | None = None

    def __post_init__(self):
        if not self.capacity_gb > 0:
            raise FleetrelError("capacity_gb must be > 0")
        if self.density not in DENSITIES:
            raise FleetrelError(f"density must be one of {list(DENSITIES)}")
        if self.chips not in CHIP_COUNTS:
            raise FleetrelError(f"chips must be one of {CHIP_COUNTS}, got {self.chips}")
        if self.transfer_width not in TRANSFER_WIDTHS:
            raise FleetrelError(f"transfer_width must be one of {TRANSFER_WIDTHS}")
        for name in ("cpu_util_pct", "mem_util_pct"):
            if not 0 <= getattr(self, name) <= 100:
                raise FleetrelError(f"{name} must lie in [0, 100]")
        if self.age_years < 0 or self.cpus < 0:
            raise FleetrelError("age_years and cpus must be >= 0")
        if self.chips * DENSITIES[self.density] / 8 < self.capacity_gb:
            raise FleetrelError(
                f"{self.chips} x {self.density} chips cannot hold {self.capacity_gb} GB"
            )

    @classmethod
    def from_dict(cls, d, line=None):
        _reject_unknown(d, cls, line)
        try:
            return cls(
                capacity_gb=_as_float(_get(d, "capacity_gb", line), "capacity_gb", line),
                density=_as_str(_get(d, "density", line), "density", line, choices=DENSITIES),
                chips=_as_int(_get(d, "chips", line), "chips", line),
                transfer_width=_as_str(
                    _get(d, "transfer_width", line, optional=True, default="x4"),
                    "transfer_width", line, choices=TRANSFER_WIDTHS,
                ),
                cpu_util_pct=_as_float(
                    _get(d, "cpu_util_pct", line, optional=True, default=0.0),
                    "cpu_util_pct", line, minimum=0, maximum=100,
                ),
                mem_util_pct=_as_float(
                    _get(d, "mem_util_pct", line, optional=True, default=0.0),
                    "mem_util_pct", line, minimum=0, maximum=100,
                ),
                age_years=_as_float(
                    _get(d, "age_years", line, optional=True, default=0.0), "age_years", line, minimum=0
                ),
                cpus=_as_int(_get(d, "cpus", line, optional=True, default=0), "cpus", line, minimum=0),
                workload=d.get("workload"),
            )
        except ParseError:
            raise
        except FleetrelError as exc:
            raise ParseError(str(exc), line=line) from None


@dataclass(frozen=True)
class LabeledDesign(_Record):
    """A :class:`ServerDesign` tagged with error-group membership."""

    design: ServerDesign
    in_error_group: bool

    def to_dict(self):
        return {**self.design.to_dict(), "in_error_group": self.in_error_group}

    @classmethod
    def from_dict(cls, d, line=None):
        rest = dict(d)
        label = _get(rest, "in_error_group", line)
        if not isinstance(label, bool):
            raise ParseError(f"expected boolean, got {label!r}", line=line, field="in_error_group")
        rest.pop("in_error_group")
        return cls(ServerDesign.from_dict(rest, line), label)


@dataclass(frozen=True)
class SSDSnapshot(_Record):
    """Lifetime counters of one SSD at snapshot time."""

    ssd_id: str
    platform: str
    slot_index: int
    server_id: str
    flash_written_tb: float
    flash_read_tb: float
    uncorrectable_errors: int
    discarded_blocks: int = 0
    dram_buffer_util_pct: float = 0.0
    avg_temp_c: float = 0.0
    bus_power_w: float = 0.0
    throttled: bool = False
    os_sectors_written: int = 0
    erases_per_gc: float = 0.0
    pages_copied: int = 0

    @property
    def failed(self):
        return self.uncorrectable_errors > 0

    @classmethod
    def from_dict(cls, d, line=None):
        _reject_unknown(d, cls, line)
        throttled = _get(d, "throttled", line, optional=True, default=False)
        if not isinstance(throttled, bool):
            raise ParseError(f"expected boolean, got {throttled!r}", line=line, field="throttled")
        nonneg_int = lambda k: _as_int(_get(d, k, line, optional=True, default=0), k, line, minimum=0)  # noqa: E731
        nonneg = lambda k: _as_float(_get(d, k, line, optional=True, default=0.0), k, line, minimum=0)  # noqa: E731
        return cls(
            ssd_id=_as_str(_get(d, "ssd_id", line), "ssd_id", line, nonempty=True),
            platform=_as_str(_get(d, "platform", line), "platform", line, choices=PLATFORMS),
            slot_index=_as_int(_get(d, "slot_index", line), "slot_index", line, minimum=0),
            server_id=_as_str(_get(d, "server_id", line), "server_id", line, nonempty=True),
            flash_written_tb=_as_float(_get(d, "flash_written_tb", line), "flash_written_tb", line, minimum=0),
            flash_read_tb=_as_float(_get(d, "flash_read_tb", line), "flash_read_tb", line, minimum=0),
            uncorrectable_errors=_as_int(
                _get(d, "uncorrectable_errors", line), "uncorrectable_errors", line, minimum=0
            ),
            discarded_blocks=nonneg_int("discarded_blocks"),
            dram_buffer_util_pct=nonneg("dram_buffer_util_pct"),
            avg_temp_c=_as_float(_get(d, "avg_temp_c", line, optional=True, default=0.0), "avg_temp_c", line),
            bus_power_w=nonneg("bus_power_w"),
            throttled=throttled,
            os_sectors_written=nonneg_int("os_sectors_written"),
            erases_per_gc=nonneg("erases_per_gc"),
            pages_copied=nonneg_int("pages_copied"),
        )


@dataclass(frozen=True)
class IncidentRecord(_Record):
    """An intra data center network incident (SEV).

    ``root_cause`` holds one or more categories; a single category serializes
    as a plain string, several as a list.
    """

    device_type: str
    sev_level: int
    root_cause: tuple
    start: int
    resolved: int

    def __post_init__(self):
        if isinstance(self.root_cause, str):
            object.__setattr__(self, "root_cause", (self.root_cause,))
        else:
            object.__setattr__(self, "root_cause", tuple(self.root_cause))
        if not self.root_cause:
            raise FleetrelError("root_cause must name at least one category")
        if self.resolved < self.start:
            raise FleetrelError("resolved before start")

    @property
    def resolution_s(self):
        return self.resolved - self.start

    def to_dict(self):
        d = super().to_dict()
        d["root_cause"] = self.root_cause[0] if len(self.root_cause) == 1 else list(self.root_cause)
        return d

    @classmethod
    def from_dict(cls, d, line=None):
        _reject_unknown(d, cls, line)
        causes = _get(d, "root_cause", line)
        if isinstance(causes, str):
            causes = [causes]
        if not isinstance(causes, list) or not causes:
            raise ParseError("expected category or list of categories", line=line, field="root_cause")
        causes = tuple(_as_str(c, "root_cause", line, choices=ROOT_CAUSES) for c in causes)
        start = _as_int(_get(d, "start", line), "start", line)
        resolved = _as_int(_get(d, "resolved", line), "resolved", line)
        if resolved < start:
            raise ParseError("resolved before start", line=line, field="resolved")
        sev = _get(d, "sev_level", line)
        if sev not in SEV_LEVELS or isinstance(sev, bool):
            raise ParseError(f"{sev!r} not one of {list(SEV_LEVELS)}", line=line, field="sev_level")
        return cls(
            device_type=_as_str(_get(d, "device_type", line), "device_type", line, choices=DEVICE_TYPES),
            sev_level=int(sev),
            root_cause=causes,
            start=start,
            resolved=resolved,
        )


@dataclass(frozen=True)
class FiberRepairTicket(_Record):
    """Backbone fiber repair or maintenance ticket; ``end`` is None while open."""

    link_id: str
    vendor: str
    continent: str
    kind: str
    start: int
    end: int | None = None
    est_duration_s: int | None = None

    def __post_init__(self):
        if self.end is not None and self.end < self.start:
            raise FleetrelError("end before start")

    @property
    def is_open(self):
        return self.end is None

    @property
    def duration_s(self):
        return None if self.end is None else self.end - self.start

    @classmethod
    def from_dict(cls, d, line=None):
        _reject_unknown(d, cls, line)
        end = _get(d, "end", line, optional=True)
        est = _get(d, "est_duration_s", line, optional=True)
        start = _as_int(_get(d, "start", line), "start", line)
        end = None if end is None else _as_int(end, "end", line)
        if end is not None and end < start:
            raise ParseError("end before start", line=line, field="end")
        return cls(
            link_id=_as_str(_get(d, "link_id", line), "link_id", line, nonempty=True),
            vendor=_as_str(_get(d, "vendor", line), "vendor", line, nonempty=True),
            continent=_as_str(_get(d, "continent", line), "continent", line, choices=CONTINENTS),
            kind=_as_str(_get(d, "kind", line), "kind", line, choices=TICKET_KINDS),
            start=start,
            end=end,
            est_duration_s=None if est is None else _as_int(est, "est_duration_s", line, minimum=0),
        )


SCHEMAS = {
    "mem_error": MemErrorEvent,
    "classified_mem_error": ClassifiedMemError,
    "server_design": ServerDesign,
    "labeled_design": LabeledDesign,
    "ssd_snapshot": SSDSnapshot,
    "incident": IncidentRecord,
    "fiber_ticket": FiberRepairTicket,
}


def utc_month(timestamp):
    """``(year, month)`` of an epoch-seconds timestamp in UTC."""
    dt = datetime.fromtimestamp(timestamp, tz=timezone.utc)
    return dt.year, dt.month


# ---------------------------------------------------------------------------
# stream I/O


def open_text(path):
    """Open ``path`` for reading text, decompressing gzip transparently."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic == b"\x1f\x8b":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
    return open(path, encoding="utf-8")


def _lines(stream):
    if isinstance(stream, (str, os.PathLike)) and os.path.exists(stream):
        with open_text(stream) as fh:
            yield from fh
    elif isinstance(stream, str):
        yield from stream.splitlines()
    elif isinstance(stream, bytes):
        data = gzip.decompress(stream) if stream[:2] == b"\x1f\x8b" else stream
        yield from data.decode("utf-8").splitlines()
    else:
        yield from stream


def iter_events(stream, schema="mem_error") -> Iterator:
    """Lazily parse JSONL records; see :func:`parse_events`."""
    try:
        cls = SCHEMAS[schema]
    except KeyError:
        raise FleetrelError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}") from None
    for lineno, raw in enumerate(_lines(stream), start=1):
        text = raw.strip()
        if not text:
            continue
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", line=lineno) from None
        if not isinstance(obj, dict):
            raise ParseError("expected a JSON object", line=lineno)
        yield cls.from_dict(obj, lineno)


def parse_events(stream, schema="mem_error"):
    """Parse line-delimited JSON records of one schema.

    Parameters
    ----------
    stream : str, path, bytes or iterable of str
        A path (plain or gzip), literal JSONL text, or an iterable of lines.
    schema : str
        One of the keys of :data:`SCHEMAS`.

    Returns
    -------
    list
        Records in file order, one per non-blank line.

    Raises
    ------
    ParseError
        On a malformed line; the error carries ``line`` and ``field``.
    FleetrelError
        On an unknown schema.
    """
    return list(iter_events(stream, schema))


def dumps_jsonl(records: Iterable) -> str:
    return "".join(r.to_json() + "\n" for r in records)


def write_jsonl(records, path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wt", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(r.to_json())
            fh.write("\n")


def write_csv(records, path_or_buf, cls=None):
    """CSV export with a header row in dataclass field order."""
    records = list(records)
    cls = cls or (type(records[0]) if records else None)
    if cls is None:
        raise FleetrelError("cannot infer CSV columns from an empty record list")
    header = [f.name for f in dataclasses.fields(cls)]
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            d = r.to_dict()
            writer.writerow(["" if d[h] is None else (";".join(d[h]) if isinstance(d[h], list) else d[h])
                             for h in header])
    finally:
        if own:
            fh.close()


# ---------------------------------------------------------------------------
# fiber ticket text format

_TICKET_KEYS = {
    "link": "link_id",
    "vendor": "vendor",
    "continent": "continent",
    "kind": "kind",
    "start": "start",
    "end": "end",
    "est_duration": "est_duration_s",
}
_TICKET_REQUIRED = ("link", "vendor", "continent", "kind", "start")


def parse_fiber_ticket(text):
    """Parse one ``key: value`` ticket block into a :class:`FiberRepairTicket`.

    Unknown keys are ignored (vendor emails carry free-form extras).  A missing
    ``end:`` yields an open ticket.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if ":" not in line:
            raise ParseError(f"expected 'key: value', got {line!r}", line=lineno)
        key, _, value = line.partition(":")
        key = key.strip().lower()
        if key in _TICKET_KEYS:
            values[key] = (value.strip(), lineno)
    for key in _TICKET_REQUIRED:
        if key not in values:
            raise ParseError("missing mandatory key", field=key)
    d = {}
    for key, (value, lineno) in values.items():
        name = _TICKET_KEYS[key]
        if name in ("start", "end", "est_duration_s"):
            if value == "":
                continue
            try:
                d[name] = int(value)
            except ValueError:
                raise ParseError(f"expected integer epoch seconds, got {value!r}", line=lineno, field=key) from None
        else:
            d[name] = value
    if "end" in d and d["end"] < d["start"]:
        raise ParseError("end before start", line=values["end"][1], field="end")
    return FiberRepairTicket.from_dict(d)


def format_fiber_ticket(ticket):
    lines = [
        f"link: {ticket.link_id}",
        f"vendor: {ticket.vendor}",
        f"continent: {ticket.continent}",
        f"kind: {ticket.kind}",
        f"start: {ticket.start}",
    ]
    if ticket.end is not None:
        lines.append(f"end: {ticket.end}")
    if ticket.est_duration_s is not None:
        lines.append(f"est_duration: {ticket.est_duration_s}")
    return "\n".join(lines) + "\n"


def parse_fiber_tickets(text):
    """Parse several ticket blocks separated by blank lines."""
    blocks, current = [], []
    for raw in text.splitlines():
        if raw.strip():
            current.append(raw)
        elif current:
            blocks.append("\n".join(current))
            current = []
    if current:
        blocks.append("\n".join(current))
    return [parse_fiber_ticket(b) for b in blocks]


def format_fiber_tickets(tickets):
    return "\n".join(format_fiber_ticket(t) for t in tickets)


# ---------------------------------------------------------------------------
# generator

# Server-level fault mix observed in the studied fleet (fraction of servers with
# errors that exhibit each component failure).
DEFAULT_FAULT_MIX = {
    "socket": 0.0134,
    "channel": 0.0110,
    "bank": 0.1408,
    "row": 0.0092,
    "column": 0.0099,
    "cell": 0.2554,
    "spurious": 0.5603,
}

DEFAULT_ROOT_CAUSE_MIX = {
    "maintenance": 0.17,
    "hardware": 0.13,
    "misconfiguration": 0.13,
    "bug": 0.12,
    "accident": 0.11,
    "capacity_planning": 0.05,
    "undetermined": 0.29,
}

DEFAULT_CONTINENT_MIX = {"NA": 0.37, "EU": 0.33, "AS": 0.14, "SA": 0.10, "AF": 0.04, "AU": 0.02}

# DRAM geometry used for synthetic addresses.
N_SOCKETS, N_CHANNELS, N_BANKS, N_ROWS, N_COLUMNS, N_BYTES = 2, 4, 8, 65536, 1024, 8

MONTH_START = 1414800000  # 2014-11-01T00:00:00Z
MONTH_SECONDS = 30 * 86400


@dataclass
class ClassBurst:
    """Per-class error burst parameters.

    The per-server error count is ``max(minimum, round(scale * pareto_draw))``.
    """

    scale: float = 1.0
    minimum: int = 1


def _default_bursts():
    # socket and channel scales put them at about 64% and 21% of all errors
    # under the default fault mix and Pareto draw
    big = 1001
    return {
        "socket": ClassBurst(15200.0, big),
        "channel": ClassBurst(6150.0, big),
        "bank": ClassBurst(1.0, big),
        "row": ClassBurst(1.0, 2),
        "column": ClassBurst(1.0, 2),
        "cell": ClassBurst(1.0, 2),
        "spurious": ClassBurst(1.0, 1),
    }


@dataclass
class DeviceIncidentParams:
    population: int
    yearly_rate: float


def _default_devices():
    return {
        "core": DeviceIncidentParams(20, 1.0),
        "CSA": DeviceIncidentParams(40, 0.8),
        "CSW": DeviceIncidentParams(200, 0.3),
        "ESW": DeviceIncidentParams(100, 0.1),
        "SSW": DeviceIncidentParams(200, 0.05),
        "FSW": DeviceIncidentParams(800, 0.02),
        "RSW": DeviceIncidentParams(20000, 0.001),
    }


@dataclass
class GeneratorSpec:
    """Full parameterisation of a synthetic fleet; ``seed`` determines the output."""

    seed: int
    fleet_size: int = 200
    fault_mix: dict = field(default_factory=lambda: dict(DEFAULT_FAULT_MIX))
    bursts: dict = field(default_factory=_default_bursts)
    dram_pareto_alpha: float = 1.5
    dram_pareto_x_min: float = 1.0
    dram_max_errors: int = 1_000_000
    dram_month_start: int = MONTH_START
    cell_window_s: int = 60
    # SSD
    ssd_servers: int | None = None
    ssd_platform_mix: dict = field(default_factory=lambda: {p: 1 / 6 for p in PLATFORMS})
    ssd_weibull_shape: float = 0.3
    ssd_weibull_scale: float = 5e3
    ssd_pair_both_fail: dict = field(default_factory=lambda: {"B": 0.422, "D": 0.599, "F": 0.398})
    ssd_coalescing: float = 0.7
    ssd_failure_scale: float = 1.0
    # network incidents
    devices: dict = field(default_factory=_default_devices)
    incident_years: float = 1.0
    incident_start: int = 1483228800  # 2017-01-01T00:00:00Z
    root_cause_mix: dict = field(default_factory=lambda: dict(DEFAULT_ROOT_CAUSE_MIX))
    multi_cause_prob: float = 0.0
    sev_mix: dict = field(default_factory=lambda: {1: 0.05, 2: 0.25, 3: 0.70})
    # backbone
    fiber_links: int = 100
    fiber_vendors: int = 10
    fiber_window_h: float = 24 * 365 * 3
    fiber_mtbf_curve: tuple = (462.88, 2.3408)
    fiber_mttr_curve: tuple = (1.513, 4.256)
    fiber_maintenance_prob: float = 0.3
    continent_mix: dict = field(default_factory=lambda: dict(DEFAULT_CONTINENT_MIX))

    def __post_init__(self):
        self.bursts = {k: v if isinstance(v, ClassBurst) else ClassBurst(**v) for k, v in self.bursts.items()}
        self.devices = {
            k: v if isinstance(v, DeviceIncidentParams) else DeviceIncidentParams(**v)
            for k, v in self.devices.items()
        }
        self.sev_mix = {int(k): v for k, v in self.sev_mix.items()}
        self.fiber_mtbf_curve = tuple(self.fiber_mtbf_curve)
        self.fiber_mttr_curve = tuple(self.fiber_mttr_curve)
        self.validate()

    def validate(self):
        if self.fleet_size <= 0:
            raise FleetrelError("fleet_size must be positive")
        if not 0 <= self.seed < 2**64:
            raise FleetrelError("seed must be a 64-bit unsigned integer")
        for name, mix, keys in (
            ("fault_mix", self.fault_mix, COMPONENT_CLASSES),
            ("ssd_platform_mix", self.ssd_platform_mix, PLATFORMS),
            ("root_cause_mix", self.root_cause_mix, ROOT_CAUSES),
            ("sev_mix", self.sev_mix, SEV_LEVELS),
            ("continent_mix", self.continent_mix, CONTINENTS),
        ):
            unknown = set(mix) - set(keys)
            if unknown:
                raise FleetrelError(f"{name}: unknown keys {sorted(map(str, unknown))}")
            if any(w < 0 for w in mix.values()) or abs(sum(mix.values()) - 1) > 1e-6:
                raise FleetrelError(f"{name}: weights must be non-negative and sum to 1")
        missing = set(COMPONENT_CLASSES) - set(self.bursts)
        if missing:
            raise FleetrelError(f"bursts: missing classes {sorted(missing)}")
        if self.dram_pareto_alpha <= 0 or self.dram_pareto_x_min <= 0:
            raise FleetrelError("Pareto parameters must be positive")
        if self.dram_max_errors < 1:
            raise FleetrelError("dram_max_errors must be >= 1")
        if not 0 <= self.fiber_maintenance_prob < 1:
            raise FleetrelError("fiber_maintenance_prob must be in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise FleetrelError(f"generator spec: unknown keys {sorted(unknown)}")
        if "seed" not in d:
            raise FleetrelError("generator spec: 'seed' is required")
        return cls(**d)

    def to_dict(self):
        return dataclasses.asdict(self)


def _stable64(text):
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


def substream(seed, stream, key=""):
    """Independent PCG64 generator for ``(seed, stream, key)``.

    Derived by hashing, so per-server draws do not depend on generation order.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _stable64(stream), _stable64(key)])))


def _choice(rng, mix):
    keys = list(mix)
    return keys[int(rng.choice(len(keys), p=np.array([mix[k] for k in keys], dtype=float)))]


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def server_ids(n, prefix="srv"):
    width = max(6, len(str(n - 1)))
    return [f"{prefix}{i:0{width}d}" for i in range(n)]


def _dram_server_draw(spec, sid):
    rng = substream(spec.seed, "dram", sid)
    cls = _choice(rng, spec.fault_mix)
    base = spec.dram_pareto_x_min * (1.0 + rng.pareto(spec.dram_pareto_alpha))
    burst = spec.bursts[cls]
    count = min(spec.dram_max_errors, max(burst.minimum, _round_half_up(burst.scale * base)))
    return rng, cls, count


def dram_error_counts(spec):
    """Per-server DRAM error counts exactly as :func:`generate_traces` draws them."""
    return {sid: _dram_server_draw(spec, sid)[2] for sid in server_ids(spec.fleet_size)}


def dram_server_classes(spec):
    """Per-server generated fault class, without materializing events."""
    return {sid: _dram_server_draw(spec, sid)[1] for sid in server_ids(spec.fleet_size)}


def _distinct_pair(rng, n):
    a = int(rng.integers(n))
    b = int(rng.integers(n - 1))
    return a, b + (b >= a)


def _spread(rng, count, n, forced):
    """``count`` draws from ``range(n)`` with the first two forced distinct."""
    vals = rng.integers(n, size=count)
    if count >= 2:
        vals[0], vals[1] = forced
    return vals


def _dram_events(spec, sid):
    rng, cls, c = _dram_server_draw(spec, sid)
    t0 = spec.dram_month_start
    times = np.sort(rng.integers(t0, t0 + MONTH_SECONDS, size=c))
    sock = np.full(c, rng.integers(N_SOCKETS))
    chan = np.full(c, rng.integers(N_CHANNELS))
    bank = np.full(c, rng.integers(N_BANKS))
    row = np.full(c, rng.integers(N_ROWS))
    col = np.full(c, rng.integers(N_COLUMNS))
    byte = rng.integers(N_BYTES, size=c)
    if cls == "socket":
        chan = _spread(rng, c, N_CHANNELS, _distinct_pair(rng, N_CHANNELS))
        bank = rng.integers(N_BANKS, size=c)
        row = rng.integers(N_ROWS, size=c)
        col = rng.integers(N_COLUMNS, size=c)
    elif cls == "channel":
        bank = _spread(rng, c, N_BANKS, _distinct_pair(rng, N_BANKS))
        row = rng.integers(N_ROWS, size=c)
        col = rng.integers(N_COLUMNS, size=c)
    elif cls == "bank":
        row = _spread(rng, c, N_ROWS, _distinct_pair(rng, N_ROWS))
        col = rng.integers(N_COLUMNS, size=c)
    elif cls == "row":
        col = _spread(rng, c, N_COLUMNS, _distinct_pair(rng, N_COLUMNS))
    elif cls == "column":
        row = _spread(rng, c, N_ROWS, _distinct_pair(rng, N_ROWS))
    elif cls == "cell":
        byte = np.full(c, rng.integers(N_BYTES))
        gaps = rng.integers(1, spec.cell_window_s, size=c - 1)
        span = int(gaps.sum())
        start = int(rng.integers(t0, max(t0 + 1, t0 + MONTH_SECONDS - span)))
        times = start + np.concatenate([[0], np.cumsum(gaps)])
    else:  # spurious: every event on its own column and row
        space = N_SOCKETS * N_CHANNELS * N_BANKS * N_COLUMNS
        flat = rng.choice(space, size=c, replace=c > space)
        sock, rest = np.divmod(flat, N_CHANNELS * N_BANKS * N_COLUMNS)
        chan, rest = np.divmod(rest, N_BANKS * N_COLUMNS)
        bank, col = np.divmod(rest, N_COLUMNS)
        row = rng.choice(N_ROWS, size=c, replace=c > N_ROWS)
    access = rng.choice(len(ACCESS_TYPES), size=c, p=[0.6, 0.3, 0.1])
    events = [
        MemErrorEvent(
            timestamp=int(times[i]),
            server_id=sid,
            socket=int(sock[i]),
            channel=int(chan[i]),
            bank=int(bank[i]),
            row=int(row[i]),
            column=int(col[i]),
            byte_offset=int(byte[i]),
            access_type=ACCESS_TYPES[int(access[i])],
            severity="correctable",
        )
        for i in range(c)
    ]
    return cls, events


def lifecycle_failure_prob(written_tb, capacity_gb):
    """Synthetic lifecycle-shaped SSD failure probability versus data written.

    Rises to a peak at the end of early detection, falls through early
    failure, then climbs again with wear.  Phase ends scale with capacity
    (about 3 TB and 15 TB for 720 GB drives).
    """
    s = capacity_gb / 720.0
    w = np.asarray(written_tb, dtype=float) / s
    bump = 0.25 * np.exp(-0.5 * ((w - 3.0) / 1.6) ** 2)
    base = 0.05 + 0.07 * np.clip(w - 15.0, 0, None) / 15.0
    rising = np.clip(w / 3.0, 0, 1)
    return np.clip(base * (0.4 + 0.6 * rising) + bump * rising, 0.0, 0.95)


def _ssd_snapshots(spec):
    n_servers = spec.ssd_servers if spec.ssd_servers is not None else spec.fleet_size
    out = []
    for sid in server_ids(n_servers, "ssdsrv"):
        rng = substream(spec.seed, "ssd", sid)
        plat = PLATFORMS[_choice(rng, spec.ssd_platform_mix)]
        k = plat.ssds_per_server
        written = rng.gamma(2.0, plat.written_tb / 2.0, size=k)
        read = rng.gamma(2.0, plat.read_tb / 2.0, size=k)
        p = np.clip(spec.ssd_failure_scale * lifecycle_failure_prob(written, plat.capacity_gb), 0, 0.95)
        if k == 2:
            both = spec.ssd_pair_both_fail.get(plat.name)
            if both is None:
                fails = rng.random(2) < p
            else:
                pm = float(p.mean())
                fails = np.zeros(2, dtype=bool)
                if rng.random() < min(1.0, 2 * pm / (1 + both)):
                    if rng.random() < both:
                        fails[:] = True
                    else:
                        fails[int(rng.integers(2))] = True
        else:
            fails = rng.random(1) < p
        for slot in range(k):
            errs = 0
            if fails[slot]:
                errs = max(1, math.ceil(spec.ssd_weibull_scale * rng.weibull(spec.ssd_weibull_shape)))
            flash_bytes = written[slot] * 1e12
            os_sectors = flash_bytes / (spec.ssd_coalescing * 512) * math.exp(rng.normal(0, 0.05))
            temp = float(rng.normal(38, 5))
            out.append(
                SSDSnapshot(
                    ssd_id=f"{sid}-{slot}",
                    platform=plat.name,
                    slot_index=slot,
                    server_id=sid,
                    flash_written_tb=round(float(written[slot]), 6),
                    flash_read_tb=round(float(read[slot]), 6),
                    uncorrectable_errors=int(errs),
                    discarded_blocks=int(rng.poisson(50 + 400 * fails[slot])),
                    dram_buffer_util_pct=round(float(rng.uniform(5, 95)), 3),
                    avg_temp_c=round(temp, 3),
                    bus_power_w=round(float(rng.normal(8.5, 1.5)), 3),
                    throttled=bool(temp > 48),
                    os_sectors_written=int(os_sectors),
                    erases_per_gc=round(float(rng.gamma(2.0, 1.5)), 4),
                    pages_copied=int(rng.poisson(written[slot] * 1e3)),
                )
            )
    return out


def _incidents(spec):
    out = []
    window = spec.incident_years * 365 * 86400
    for dev in DEVICE_TYPES:
        params = spec.devices.get(dev)
        if params is None:
            continue
        rng = substream(spec.seed, "incident", dev)
        i = int(rng.poisson(params.yearly_rate * params.population * spec.incident_years))
        starts = np.sort(rng.integers(spec.incident_start, spec.incident_start + int(window), size=i))
        for t in starts:
            causes = [_choice(rng, spec.root_cause_mix)]
            if rng.random() < spec.multi_cause_prob:
                other = _choice(rng, spec.root_cause_mix)
                if other != causes[0]:
                    causes.append(other)
            hours = float(rng.lognormal(math.log(6.0), 1.2))
            out.append(
                IncidentRecord(
                    device_type=dev,
                    sev_level=int(_choice(rng, spec.sev_mix)),
                    root_cause=tuple(causes),
                    start=int(t),
                    resolved=int(t) + max(60, int(hours * 3600)),
                )
            )
    return out


def _fiber_tickets(spec):
    out = []
    vendors = [f"vendor{i:02d}" for i in range(spec.fiber_vendors)]
    t0 = spec.incident_start
    n = spec.fiber_links
    # stratified percentiles: each link owns one of n equal strata of each
    # curve, assigned through independent permutations
    strata = substream(spec.seed, "fiber", "strata")
    mtbf_stratum, mttr_stratum = strata.permutation(n), strata.permutation(n)
    for j in range(n):
        link = f"link{j:04d}"
        rng = substream(spec.seed, "fiber", link)
        vendor = vendors[int(rng.integers(len(vendors)))]
        continent = _choice(rng, spec.continent_mix)
        a, b = spec.fiber_mtbf_curve
        mtbf_h = a * math.exp(b * (mtbf_stratum[j] + rng.random()) / n)
        a, b = spec.fiber_mttr_curve
        mttr_h = a * math.exp(b * (mttr_stratum[j] + rng.random()) / n)
        # repairs arrive at the link's MTBF; maintenance is a separate stream
        # sized so that it makes up fiber_maintenance_prob of all tickets
        pm = spec.fiber_maintenance_prob
        streams = [("repair", mtbf_h)]
        if pm > 0:
            streams.append(("maintenance", mtbf_h * (1 - pm) / pm))
        link_tickets = []
        for kind, mean_gap in streams:
            t = 0.0
            while True:
                t += rng.exponential(mean_gap)
                if t >= spec.fiber_window_h:
                    break
                start = t0 + int(t * 3600)
                dur = max(60, int(rng.exponential(mttr_h) * 3600))
                link_tickets.append(FiberRepairTicket(link, vendor, continent, kind, start, start + dur, int(mttr_h * 3600)))
        out.extend(sorted(link_tickets, key=lambda x: (x.start, x.kind)))
    return out


@dataclass
class TraceBundle:
    """Everything :func:`generate_traces` produces.

    ``dram_truth`` maps server id to the generated fault class; ``populations``
    maps device type to its active population.
    """

    mem_events: list
    dram_truth: dict
    ssd_snapshots: list
    incidents: list
    fiber_tickets: list
    populations: dict

    def classified_events(self):
        return [ClassifiedMemError.from_event(e, self.dram_truth[e.server_id]) for e in self.mem_events]

    def write(self, out_dir):
        """Write every stream under ``out_dir`` and return the file names."""
        os.makedirs(out_dir, exist_ok=True)
        files = {
            "mem_events": "mem_events.jsonl",
            "dram_truth": "dram_truth.json",
            "ssd_snapshots": "ssd_snapshots.jsonl",
            "incidents": "incidents.jsonl",
            "fiber_tickets": "fiber_tickets.txt",
            "populations": "network_population.json",
        }
        write_jsonl(self.mem_events, os.path.join(out_dir, files["mem_events"]))
        write_jsonl(self.ssd_snapshots, os.path.join(out_dir, files["ssd_snapshots"]))
        write_jsonl(self.incidents, os.path.join(out_dir, files["incidents"]))
        with open(os.path.join(out_dir, files["fiber_tickets"]), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(format_fiber_tickets(self.fiber_tickets))
        for key in ("dram_truth", "populations"):
            with open(os.path.join(out_dir, files[key]), "w", encoding="utf-8", newline="\n") as fh:
                json.dump(getattr(self, key), fh, indent=1, sort_keys=True)
                fh.write("\n")
        return files


def generate_traces(spec):
    """Generate a deterministic synthetic fleet from ``spec``.

    Per-server DRAM error counts follow the configured Pareto, SSD error counts
    the configured Weibull, and fiber inter-failure times are exponential with
    per-link means drawn from the configured percentile curve.  Streams are
    ordered by server id then timestamp.
    """
    if not isinstance(spec, GeneratorSpec):
        spec = GeneratorSpec.from_dict(spec)
    spec.validate()
    mem, truth = [], {}
    for sid in server_ids(spec.fleet_size):
        cls, events = _dram_events(spec, sid)
        truth[sid] = cls
        mem.extend(events)
    return TraceBundle(
        mem_events=mem,
        dram_truth=truth,
        ssd_snapshots=_ssd_snapshots(spec),
        incidents=_incidents(spec),
        fiber_tickets=_fiber_tickets(spec),
        populations={k: v.population for k, v in spec.devices.items()},
    )
