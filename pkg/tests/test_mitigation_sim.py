import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetrel.exceptions import FleetrelError
from fleetrel.mitigation_sim import (
    DAY,
    OfflinePolicy,
    OfflineStore,
    RandomizationPlan,
    SimMemory,
    gini,
    overhead_estimate,
    page_of,
    randomize_page,
    run_offline_sim,
    run_randomizer_sim,
)
from fleetrel.trace_model import ClassifiedMemError, MemErrorEvent

GiB = 2**30
T0 = 1_400_000_000


def err(t, cls="cell", host="h0", socket=0, channel=0, bank=0, row=7, column=3):
    e = MemErrorEvent(T0 + t, host, socket, channel, bank, row, column, 0, "read", "correctable")
    return ClassifiedMemError.from_event(e, cls)


def no_fail(**kw):
    return OfflinePolicy(initial_fail_prob=0.0, **kw)


# ---------------------------------------------------------------------------
# page offlining


def test_page_key_distinguishes_rows_and_banks():
    a, b, c = err(0), err(0, row=8), err(0, bank=1)
    assert len({page_of(a), page_of(b), page_of(c)}) == 3
    assert page_of(err(0, column=9)) == page_of(a)


def test_single_page_cell_errors_offlined():
    trace = [err(60 * i) for i in range(100)]
    res = run_offline_sim(trace, no_fail())
    assert (res.observed, res.suppressed, res.pages_offlined) == (1, 99, 1)
    assert res.reduction_pct == pytest.approx(99.0)


def test_always_failing_attempts_offline_nothing():
    trace = [err(60 * i) for i in range(100)]
    res = run_offline_sim(trace, OfflinePolicy(initial_fail_prob=1.0))
    assert res.pages_offlined == 0 and res.reduction_pct == 0.0 and res.observed == 100


def test_fixed_delay_retry_recovers_failed_attempt():
    trace = [err(60 * i) for i in range(200)]
    res = run_offline_sim(trace, OfflinePolicy(initial_fail_prob=0.5, retry="fixed_delay", retry_delay_s=120), seed=1)
    assert res.pages_offlined == 1
    assert res.suppressed > 150


def test_socket_channel_errors_never_suppressed():
    trace = [err(i, "socket" if i % 2 else "channel") for i in range(50)]
    res = run_offline_sim(trace, no_fail())
    assert res.suppressed == 0 and res.reduction_pct == 0.0


def test_reduction_bounded_by_unbound_share():
    # 85% socket/channel errors spread over many pages, 15% repeating cell errors
    trace = []
    for i in range(2000):
        if i % 20 < 17:
            trace.append(err(i * 60, "socket", channel=i % 4, row=i))
        else:
            trace.append(err(i * 60, "cell"))
    res = run_offline_sim(trace, no_fail())
    assert 0 < res.reduction_pct <= 15.0


def test_trigger_threshold_delays_offlining():
    trace = [err(60 * i) for i in range(10)]
    res = run_offline_sim(trace, no_fail(trigger_errors=3))
    assert res.observed == 3 and res.suppressed == 7


def test_deploy_at_leaves_earlier_errors_alone():
    trace = [err(60 * i) for i in range(10)]
    res = run_offline_sim(trace, no_fail(), deploy_at=T0 + 300)
    assert res.observed == 6  # five before deployment, one to trigger


def test_cap_emits_ticket_and_freezes_host():
    trace = [err(i, "cell", row=i) for i in range(5)] * 3
    trace = sorted(trace, key=lambda e: e.timestamp)
    res = run_offline_sim(trace, no_fail(cap_frac=2 * 4096 / GiB), host_capacity_bytes=GiB)
    assert res.pages_offlined == 2
    assert len(res.tickets) == 1 and res.tickets[0]["host"] == "h0"


def test_unsorted_trace_rejected():
    with pytest.raises(FleetrelError):
        run_offline_sim([err(10), err(5)], no_fail())
    with pytest.raises(FleetrelError):
        run_offline_sim([], no_fail())


def test_plain_events_need_classes():
    e = MemErrorEvent(T0, "h", 0, 0, 0, 0, 0, 0, "read", "correctable")
    with pytest.raises(FleetrelError):
        run_offline_sim([e])
    assert run_offline_sim([e], classes=["cell"]).observed == 1


def test_store_replay(tmp_path):
    path = tmp_path / "offline.jsonl"
    trace = [err(60 * i, row=i % 3) for i in range(30)]
    first = run_offline_sim(trace, no_fail(), store=OfflineStore(path))
    assert first.pages_offlined == 3
    reopened = OfflineStore(path)
    assert reopened.pages("h0") == {page_of(err(0, row=r)) for r in range(3)}
    second = run_offline_sim(trace, no_fail(), store=reopened)
    assert second.observed == 0 and second.suppressed == 30


def test_store_rejects_bad_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"host": "h"}\n')
    with pytest.raises(FleetrelError):
        OfflineStore(path)


def test_timeline_counts(tmp_path):
    trace = [err(0), err(10), err(DAY + 5, row=9), err(3 * DAY)]
    res = run_offline_sim(trace, no_fail())
    assert [r["day"] for r in res.timeline] == [0, 1, 2, 3]
    assert [r["errors"] for r in res.timeline] == [1, 1, 0, 0]
    assert res.timeline[-1]["pages_offline"] == 2
    path = tmp_path / "t.csv"
    res.timeline_csv(path)
    assert path.read_text().splitlines()[0] == "day,errors,pages_offline,tickets"


@settings(max_examples=60)
@given(
    st.lists(
        st.tuples(
            st.integers(0, 5000),
            st.sampled_from(["socket", "channel", "bank", "row", "column", "cell", "spurious"]),
            st.integers(0, 1),
            st.integers(0, 5),
        ),
        min_size=1,
        max_size=80,
    ),
    st.floats(0, 1),
    st.integers(0, 3),
)
def test_offline_conservation(rows, fail_prob, seed):
    trace = sorted((err(t, c, host=f"h{h}", row=r) for t, c, h, r in rows), key=lambda e: e.timestamp)
    res = run_offline_sim(trace, OfflinePolicy(initial_fail_prob=fail_prob), seed=seed)
    assert res.observed + res.suppressed == len(trace)
    assert 0.0 <= res.reduction_pct <= 100.0
    again = run_offline_sim(trace, OfflinePolicy(initial_fail_prob=fail_prob), seed=seed)
    assert again.to_dict() == res.to_dict()


# ---------------------------------------------------------------------------
# SimMemory and randomization


def test_two_frame_swap_is_deterministic():
    mem = SimMemory(2)
    mem.map(0)
    randomize_page(mem, 0, np.random.default_rng(0))
    assert mem.l2p == {0: 1} and mem.free_frames == {0}
    assert mem.wear.tolist() == [0, 1]
    mem.check_invariants()


def test_randomize_without_free_frame_fails():
    mem = SimMemory(1)
    mem.map(0)
    with pytest.raises(FleetrelError):
        randomize_page(mem, 0, np.random.default_rng(0))
    with pytest.raises(FleetrelError):
        randomize_page(mem, 5, np.random.default_rng(0))


@pytest.mark.parametrize("frames,pages", [(2, 1), (3, 2), (4, 2), (4, 3)])
def test_small_memory_bijection_exhaustive(frames, pages):
    # every sequence of three randomizations over every starting page
    for seq in itertools.product(range(pages), repeat=3):
        for seed in range(3):
            mem = SimMemory(frames)
            for lp in range(pages):
                mem.map(lp)
            rng = np.random.default_rng(seed)
            for lp in seq:
                randomize_page(mem, lp, rng)
                mem.check_invariants()
            assert sorted(mem.l2p) == list(range(pages))
            assert len(set(mem.l2p.values())) == pages


def test_random_operations_keep_invariants():
    rng = np.random.default_rng(42)
    mem = SimMemory(64)
    next_page = 0
    for _ in range(10_000):
        op = rng.integers(5)
        mapped = list(mem.l2p)
        if op == 0 and len(mem.free_frames) > 1:
            mem.map(next_page, rng)
            next_page += 1
        elif op == 1 and mapped:
            mem.unmap(mapped[int(rng.integers(len(mapped)))])
        elif op == 2 and mapped and mem.free_frames:
            randomize_page(mem, mapped[int(rng.integers(len(mapped)))], rng)
        elif op == 3 and mapped:
            mem.write(mapped[int(rng.integers(len(mapped)))])
        elif op == 4 and len(mem.offline) < 16 and len(mem.free_frames) > 1:
            mem.take_offline(int(rng.integers(64)), rng)
        mem.check_invariants()
    assert mem.offline and mem.l2p


def test_take_offline_migrates_page():
    mem = SimMemory(3)
    mem.map(0)
    mem.take_offline(0)
    assert mem.l2p[0] != 0 and 0 in mem.offline
    mem.check_invariants()


def test_memory_misuse_errors():
    mem = SimMemory(2)
    mem.map(0)
    with pytest.raises(FleetrelError):
        mem.map(0)
    with pytest.raises(FleetrelError):
        mem.write(1)
    with pytest.raises(FleetrelError):
        mem.move(0, 0)
    with pytest.raises(FleetrelError):
        SimMemory(0)


# ---------------------------------------------------------------------------
# overhead and wear


def test_overhead_for_256_gib_daily():
    pps, frac = overhead_estimate(RandomizationPlan(256 * GiB))
    assert pps == pytest.approx(777, abs=1)
    assert frac * 100 == pytest.approx(29.1, abs=0.2)


def test_overhead_scales_with_utilization_and_period():
    assert overhead_estimate(RandomizationPlan(256 * GiB, utilization=0.0)) == (0.0, 0.0)
    pps, _ = overhead_estimate(RandomizationPlan(256 * GiB, utilization=0.5, period_days=7))
    assert pps == pytest.approx(55.5, abs=0.1)
    with pytest.raises(FleetrelError):
        RandomizationPlan(256 * GiB, period_days=0)
    with pytest.raises(FleetrelError):
        RandomizationPlan(256 * GiB, utilization=1.5)


def test_gini_values():
    assert gini([3, 3, 3]) == 0.0
    assert gini([0, 0]) == 0.0
    assert gini([0, 0, 0, 1]) == pytest.approx(0.75)
    with pytest.raises(FleetrelError):
        gini([])
    with pytest.raises(FleetrelError):
        gini([-1, 2])


@given(st.lists(st.floats(0, 1e6), min_size=1, max_size=50))
def test_gini_in_unit_interval(values):
    g = gini(values)
    assert -1e-12 <= g < 1


def test_uniform_profile_stays_level():
    plan = RandomizationPlan(64 * 4096)
    res = run_randomizer_sim([1.0] * 64, plan, steps=200_000, seed=0)
    assert res.gini_baseline < 0.05 and res.gini_randomized < 0.05


def test_hot_page_wear_spread():
    plan = RandomizationPlan(64 * 4096)
    profile = [1000.0] + [1.0] * 63
    res = run_randomizer_sim(profile, plan, steps=200_000, seed=0)
    assert res.gini_reduction >= 0.5
    assert res.wear_baseline.sum() == 200_000
    assert res.wear_randomized.sum() == 200_000 + res.migrations


def test_randomizer_determinism_and_errors():
    plan = RandomizationPlan(16 * 4096)
    a = run_randomizer_sim([5.0] + [1.0] * 15, plan, steps=5000, seed=3)
    b = run_randomizer_sim([5.0] + [1.0] * 15, plan, steps=5000, seed=3)
    assert a.to_dict() == b.to_dict()
    assert np.array_equal(a.wear_randomized, b.wear_randomized)
    with pytest.raises(FleetrelError):
        run_randomizer_sim([1.0], plan, steps=0, seed=0)
    with pytest.raises(FleetrelError):
        run_randomizer_sim([0.0, 0.0], plan, steps=10, seed=0)
