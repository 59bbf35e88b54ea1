import numpy as np
import pytest

from fedhar.simclock import (
    DelayProfile,
    EventKind,
    LatencyModel,
    ServerResource,
    SimClock,
    apply_delays,
    sample_duration,
)


def test_pop_order_by_time():
    clock = SimClock()
    clock.schedule(5.0, EventKind.CLIENT_ARRIVAL, "a")
    clock.schedule(3.0, EventKind.CLIENT_ARRIVAL, "b")
    assert [clock.next_event().client_id for _ in range(2)] == ["b", "a"]
    assert clock.now == 5.0


def test_equal_times_pop_in_insertion_order():
    clock = SimClock()
    for cid in "xyz":
        clock.schedule(3.0, EventKind.CLIENT_ARRIVAL, cid)
    assert [clock.next_event().client_id for _ in range(3)] == list("xyz")


def test_random_events_pop_sorted():
    rng = np.random.default_rng(0)
    clock = SimClock()
    times = rng.integers(0, 500, size=10_000).astype(float)  # many ties
    for t in times:
        clock.schedule(t, EventKind.CENTRAL_EVAL)
    popped = [clock.next_event() for _ in range(len(times))]
    keys = [(e.fire_time, e.sequence_no) for e in popped]
    assert keys == sorted(keys)
    assert all(a <= b for a, b in zip([e.fire_time for e in popped], [e.fire_time for e in popped][1:]))


def test_clock_errors():
    clock = SimClock()
    with pytest.raises(IndexError):
        clock.next_event()
    clock.schedule(2.0, EventKind.TERMINATE)
    clock.next_event()
    with pytest.raises(ValueError):
        clock.schedule(1.0, EventKind.CENTRAL_EVAL)


def test_trace_dump(tmp_path):
    clock = SimClock()
    clock.schedule(1.5, EventKind.CLIENT_ARRIVAL, "c0")
    clock.schedule(2.0, EventKind.TERMINATE)
    clock.next_event()
    clock.next_event()
    clock.dump_trace(tmp_path / "events.tsv")
    assert (tmp_path / "events.tsv").read_text() == (
        "virtual_time\tseq\tkind\tclient_id\n"
        "1.500000\t0\tclient_arrival\tc0\n"
        "2.000000\t1\tterminate\t\n")


# ---------------------------------------------------------------- durations

def test_zero_jitter_returns_base():
    s = LatencyModel({"a": 3.0}, jitter="none").streams()
    assert [sample_duration(s, "a") for _ in range(3)] == [3.0, 3.0, 3.0]


def test_same_seed_same_sequence_per_client():
    model = LatencyModel({"a": 1.0, "b": 2.0}, seed=5)
    s1, s2 = model.streams(), model.streams()
    a1 = [s1.sample("a") for _ in range(5)]
    # interleaving draws for another client does not change a's stream
    a2 = []
    for _ in range(5):
        s2.sample("b")
        a2.append(s2.sample("a"))
    assert a1 == a2


@pytest.mark.parametrize("jitter,kw", [("lognormal", {"sigma": 0.5}), ("uniform", {"width": 0.5})])
def test_jitter_mean_matches_base(jitter, kw):
    s = LatencyModel({"a": 4.0}, jitter=jitter, seed=1, **kw).streams()
    draws = np.array([s.sample("a") for _ in range(10_000)])
    assert np.all(draws > 0)
    assert abs(draws.mean() / 4.0 - 1) < 0.05


def test_proportional_base_durations():
    m = LatencyModel.proportional({"a": 100, "b": 300}, 0.01, epochs=2)
    assert m.base == {"a": 2.0, "b": 6.0}


def test_latency_validation():
    with pytest.raises(ValueError):
        LatencyModel({"a": 0.0})
    with pytest.raises(ValueError):
        LatencyModel({"a": 1.0}, jitter="gamma")


# ---------------------------------------------------------------- server delays

def test_apply_delays():
    p = DelayProfile(10.0, 1.0)
    assert apply_delays(p, "merge", 5.0) == 6.0
    assert apply_delays(p, "eval", 5.0) == 15.0
    assert apply_delays(DelayProfile(), "eval", 5.0) == 5.0
    with pytest.raises(ValueError):
        DelayProfile(-1.0, 0.0)


def test_arrivals_during_eval_queue_in_order():
    server = ServerResource(DelayProfile(10.0, 1.0))
    assert server.perform("eval", 20.0) == 30.0
    commits = [server.perform("merge", t) for t in (21.0, 22.5, 29.0)]
    assert commits == [31.0, 32.0, 33.0]
    # an idle server starts work immediately
    assert server.perform("merge", 100.0) == 101.0


def test_busy_time_is_event_count_arithmetic():
    rng = np.random.default_rng(2)
    server = ServerResource(DelayProfile(10.0, 1.0))
    t = 0.0
    for _ in range(500):
        t += rng.exponential(3.0)
        server.perform("eval" if rng.random() < 0.2 else "merge", t)
    assert server.busy_time == 10.0 * server.counts["eval"] + 1.0 * server.counts["merge"]


def test_zero_profile_is_a_no_op():
    server = ServerResource()
    assert [server.perform("merge", t) for t in (1.0, 1.0, 2.0)] == [1.0, 1.0, 2.0]
    assert server.busy_time == 0.0
