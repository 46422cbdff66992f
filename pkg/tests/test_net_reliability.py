import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fleetrel.exceptions import FleetrelError
from fleetrel.net_reliability import (
    HOUR,
    breakdown,
    conditional_risk,
    exact_curve_sample,
    group_metrics,
    incident_rate,
    incident_table,
    mtbf,
    mttr,
    per_link_metrics,
    percentile_curve,
    resolution_percentile,
    risk_check,
)
from fleetrel.stat_fit import binomial_ci
from fleetrel.trace_model import (
    DEFAULT_ROOT_CAUSE_MIX,
    FiberRepairTicket,
    GeneratorSpec,
    IncidentRecord,
    generate_traces,
)


def incident(hours=1.0, start=0, cause="hardware", dev="RSW", sev=3):
    return IncidentRecord(dev, sev, cause, start, start + int(hours * HOUR))


# ---------------------------------------------------------------------------
# rates and means


def test_incident_rate_examples():
    assert incident_rate(3, 2).r == 1.5
    assert incident_rate(0, 5).r == 0.0
    assert incident_rate(17, 10).r == pytest.approx(1.7)
    with pytest.raises(FleetrelError):
        incident_rate(1, 0)
    with pytest.raises(FleetrelError):
        incident_rate(-1, 3)


def test_mtbf_and_mttr_examples():
    assert mtbf([0, 10 * HOUR, 30 * HOUR]) == pytest.approx(15.0)
    assert mtbf([0, 10, 30], unit=1) == pytest.approx(15.0)
    assert mttr([(0, 3600)]) == pytest.approx(1.0)


def test_mtbf_mttr_errors():
    with pytest.raises(FleetrelError):
        mtbf([10, 0, 30])
    with pytest.raises(FleetrelError):
        mtbf([5])
    with pytest.raises(FleetrelError):
        mttr([])
    with pytest.raises(FleetrelError):
        mttr([(10, 5)])


def test_mttr_skips_open_tickets():
    tickets = [
        FiberRepairTicket("l", "v", "NA", "repair", 0, 7200),
        FiberRepairTicket("l", "v", "NA", "repair", 100, None),
    ]
    assert mttr(tickets) == pytest.approx(2.0)


@given(st.lists(st.integers(0, 10**8), min_size=2, max_size=40), st.integers(-(10**9), 10**9))
def test_mtbf_translation_invariant(starts, shift):
    starts = sorted(starts)
    assert mtbf([s + shift for s in starts]) == pytest.approx(mtbf(starts), rel=1e-9, abs=1e-9)


@given(
    st.lists(st.tuples(st.integers(0, 10**8), st.integers(0, 10**6)), min_size=1, max_size=40),
    st.integers(-(10**9), 10**9),
)
def test_mttr_translation_invariant(pairs, shift):
    intervals = [(s, s + d) for s, d in pairs]
    moved = [(s + shift, e + shift) for s, e in intervals]
    assert mttr(moved) == pytest.approx(mttr(intervals), rel=1e-9, abs=1e-9)


# ---------------------------------------------------------------------------
# curves


@pytest.mark.parametrize("a,b", [(1.513, 4.256), (336.51, 3.4371), (462.88, 2.3408), (1.1345, 4.7709)])
def test_curve_recovers_exact_models(a, b):
    curve = percentile_curve(exact_curve_sample(a, b, 100))
    assert curve.fit.a == pytest.approx(a, rel=1e-3)
    assert curve.fit.b == pytest.approx(b, rel=1e-3)
    assert curve.fit.r2 >= 0.999


def test_identical_values_flat_curve():
    curve = percentile_curve([5.0] * 10)
    assert curve.fit.b == pytest.approx(0.0, abs=1e-12)
    assert curve.fit.a == pytest.approx(5.0)


def test_curve_needs_three_positive_values():
    with pytest.raises(FleetrelError):
        percentile_curve([1.0, 2.0])
    with pytest.raises(FleetrelError):
        percentile_curve([1.0, 0.0, 2.0])


@given(st.lists(st.floats(0.01, 1e5), min_size=3, max_size=50))
def test_curve_percentile_monotone(values):
    curve = percentile_curve(values)
    ps = [i / 20 for i in range(1, 21)]
    got = [curve.percentile(p) for p in ps]
    assert all(x <= y for x, y in zip(got, got[1:]))
    assert list(curve.values) == sorted(curve.values)


def test_generated_edge_fleet_median_mtbf():
    # per-link curve placed so that its median is 1710 h; a long window keeps
    # the per-link gap estimates tight
    spec = GeneratorSpec(
        seed=0,
        fleet_size=1,
        ssd_servers=1,
        devices={},
        fiber_links=200,
        fiber_window_h=24 * 365 * 60,
        fiber_mtbf_curve=(1710 / math.exp(2.3408 / 2), 2.3408),
    )
    links = per_link_metrics(generate_traces(spec).fiber_tickets)
    curve = percentile_curve([m["mtbf_h"] for m in links.values()])
    assert curve.percentile(0.5) == pytest.approx(1710, rel=0.05)


def test_curve_csv(tmp_path):
    curve = percentile_curve([1.0, 2.0, 4.0])
    path = tmp_path / "c.csv"
    curve.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "p,value,fitted" and len(lines) == 4


# ---------------------------------------------------------------------------
# incidents


def test_resolution_percentile_examples():
    incs = [incident(h) for h in (1, 2, 3, 4)]
    assert resolution_percentile(incs) == pytest.approx(3.0)
    assert resolution_percentile(incs, p=1.0) == pytest.approx(4.0)
    with pytest.raises(FleetrelError):
        resolution_percentile([])


def test_long_tail_p75_below_mean():
    incs = [incident(1) for _ in range(9)] + [incident(1000)]
    durations = [i.resolution_s / HOUR for i in incs]
    assert resolution_percentile(incs) < np.mean(durations)


def test_breakdown_examples():
    assert breakdown([incident(cause="bug")] * 3) == {"bug": 1.0}
    out = breakdown([incident(cause="bug"), incident(cause="hardware")])
    assert out == {"bug": 0.5, "hardware": 0.5}
    assert breakdown([incident(sev=1), incident(sev=3)], "sev_level") == {1: 0.5, 3: 0.5}
    with pytest.raises(FleetrelError):
        breakdown([])
    with pytest.raises(FleetrelError):
        breakdown([incident()], "vendor")


def test_breakdown_multi_cause_counts_each():
    out = breakdown([incident(cause=("bug", "hardware")), incident(cause="bug")])
    assert out == {"bug": 1.0, "hardware": 0.5}
    assert sum(out.values()) > 1


@given(st.lists(st.sampled_from(sorted(DEFAULT_ROOT_CAUSE_MIX)), min_size=1, max_size=3, unique=True), st.integers(1, 5))
def test_breakdown_fractions_bounded(causes, copies):
    out = breakdown([incident(cause=tuple(causes))] * copies + [incident(cause="bug")])
    assert all(0 <= v <= 1 for v in out.values())


def test_generated_root_cause_mix():
    spec = GeneratorSpec(seed=5, fleet_size=1, ssd_servers=1, fiber_links=1)
    incs = generate_traces(spec).incidents
    shares = breakdown(incs)
    n = len(incs)
    for cause, target in DEFAULT_ROOT_CAUSE_MIX.items():
        lo, hi = binomial_ci(round(shares.get(cause, 0) * n), n, 0.999)
        assert lo <= target <= hi, cause


def test_incident_table_rows():
    incs = [incident(1, 0, dev="CSA"), incident(3, 10 * 3600, dev="CSA"), incident(2, 0, dev="RSW")]
    table = incident_table(incs, {"CSA": 2, "RSW": 4, "core": 1})
    assert table["CSA"] == {"i": 2, "n": 2, "r": 1.0, "mtbi_h": 10.0, "p75irt_h": 3.0}
    assert table["RSW"]["mtbi_h"] is None and table["RSW"]["r"] == 0.25
    assert table["core"]["i"] == 0 and table["core"]["p75irt_h"] is None
    with pytest.raises(FleetrelError):
        incident_table(incs, {"CSA": 2})


# ---------------------------------------------------------------------------
# backbone


def ticket(link, start_h, dur_h, kind="repair", vendor="v1", continent="EU"):
    s = int(start_h * HOUR)
    return FiberRepairTicket(link, vendor, continent, kind, s, s + int(dur_h * HOUR))


def test_per_link_metrics_ignores_maintenance():
    tickets = [
        ticket("a", 0, 1),
        ticket("a", 5, 100, kind="maintenance"),
        ticket("a", 10, 3),
        ticket("b", 0, 2, vendor="v2"),
    ]
    out = per_link_metrics(tickets)
    assert out == {"a": {"vendor": "v1", "continent": "EU", "mtbf_h": 10.0, "mttr_h": 2.0}}
    with_window = per_link_metrics(tickets, window_s=100 * HOUR)
    assert with_window["b"]["mtbf_h"] == pytest.approx(100.0)
    groups = group_metrics(with_window, "vendor")
    assert groups["v1"] == {"links": 1, "mtbf_h": 10.0, "mttr_h": 2.0}


# ---------------------------------------------------------------------------
# conditional risk


def test_conditional_risk_examples():
    assert conditional_risk(1710, 10) == pytest.approx(0.005814, abs=5e-7)
    assert not risk_check(1710, 10)
    assert conditional_risk(100, 0) == 0.0
    assert risk_check(100, 0)
    assert conditional_risk(7, 7) == 0.5
    with pytest.raises(FleetrelError):
        conditional_risk(0, 1)
    with pytest.raises(FleetrelError):
        conditional_risk(1, -1)


# inputs kept within a range where doubles resolve the change in risk
@given(st.floats(1e-2, 1e4), st.floats(0, 1e4, allow_subnormal=False), st.floats(1e-2, 1e3))
def test_conditional_risk_monotone(f, r, d):
    assert conditional_risk(f, r + d) > conditional_risk(f, r)
    if r > 0:
        assert conditional_risk(f + d, r) < conditional_risk(f, r)
