import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import L2_2D
from dims.cluster import (
    Cluster,
    NodeStats,
    RunStats,
    WorkerPanic,
    decode_message,
    encode_message,
    simulated_cost,
    workload_stats,
)
from dims.messages import Message, MessageKind, decode_payload, encode_payload, make_message, obj_from_wire, obj_to_wire
from dims.metric import MetricObject
from dims.worker import WorkerNode


def small_cluster(n_workers=10, sequential=False):
    workers = [WorkerNode(i, L2_2D, 4, 5) for i in range(n_workers)]
    cl = Cluster(workers, sequential=sequential)
    for w in range(n_workers):
        objs = [MetricObject(w * 100 + j, (float(w), float(j))) for j in range(20)]
        body = {"leaf": w, "partitions": [[w, [o.id for o in objs]]], "objects": [obj_to_wire(o) for o in objs],
                "seed": 0}
        cl.dispatch([(w, make_message(MessageKind.BUILD_LOCAL, body, -1, w))])
    return cl


def range_task(w, r=1.5):
    body = {"q": obj_to_wire(MetricObject(-1, (float(w), 3.0))), "r": r, "leaves": [w], "partitions": [w],
            "validated": []}
    return w, make_message(MessageKind.RANGE_TASK, body, -1, w)


def test_zero_tasks():
    cl = small_cluster(3)
    stats = RunStats.empty(3)
    assert cl.dispatch([], stats) == []
    assert stats.messages == 0 and all(w.busy == 0 for w in stats.workers)


def test_four_of_ten_workers():
    cl = small_cluster()
    stats = RunStats.empty(10)
    replies = cl.dispatch([range_task(w) for w in (7, 2, 5, 0)], stats)
    assert [m.src for m in replies] == [0, 2, 5, 7]
    assert all(m.kind is MessageKind.RESULT for m in replies)
    idle = [s for s in stats.workers if s.node_id not in (0, 2, 5, 7)]
    assert len(idle) == 6 and all(s.busy == 0 and s.examined == 0 and s.wall == 0 for s in idle)
    assert stats.messages == 8
    assert stats.entries == 4 + sum(m.entry_count for m in replies)
    cl.close()


@pytest.mark.parametrize("sequential", [True, False])
def test_dispatch_twice_is_deterministic(sequential):
    cl = small_cluster(sequential=sequential)
    tasks = [range_task(w) for w in range(10)]
    a, b = RunStats.empty(10), RunStats.empty(10)
    ra, rb = cl.dispatch(tasks, a), cl.dispatch(tasks, b)
    assert [m.payload for m in ra] == [m.payload for m in rb]
    assert a.to_record(wall=False) == b.to_record(wall=False)
    cl.close()


def test_counts_sum_to_fan_in():
    cl = small_cluster()
    stats = RunStats.empty(10)
    replies = cl.dispatch([range_task(w, r=4.0) for w in range(10)], stats)
    assert sum(s.distances for s in stats.workers) == sum(decode_payload(m.payload)["distances"] for m in replies)


def test_worker_panic():
    cl = small_cluster(2)
    body = {"q": obj_to_wire(MetricObject(-1, (0.0, 0.0))), "r": 1.0, "leaves": [99], "partitions": [],
            "validated": []}
    with pytest.raises(WorkerPanic) as err:
        cl.dispatch([(1, make_message(MessageKind.RANGE_TASK, body, -1, 1))])
    assert err.value.worker_id == 1
    with pytest.raises(ValueError):
        cl.dispatch([(5, make_message(MessageKind.RANGE_TASK, body, -1, 5))])


def test_workload_stats():
    one = RunStats([NodeStats(0, 7, 3)])
    assert workload_stats(one)["busy"].std == 0
    two = RunStats([NodeStats(0, 1, 10), NodeStats(1, 5, 10)])
    ex = workload_stats(two)["examined"]
    assert ex.std == 0 and ex.mean == 10
    busy = workload_stats(two)["busy"]
    assert busy.std == 2 and (busy.min, busy.max) == (1, 5)


def test_simulated_cost():
    assert simulated_cost(RunStats.empty(4)) == 0
    run = RunStats([NodeStats(0, 30), NodeStats(1, 0)], NodeStats(-1, 5), messages=2, entries=4)
    assert simulated_cost(run, t_c=2.0) == 30 + 5 + 8


payloads = st.one_of(
    st.text(max_size=20),
    st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=6).map(tuple),
)


@given(st.integers(0, 2**40), payloads)
def test_object_wire_roundtrip(oid, payload):
    o = MetricObject(oid, payload)
    back = obj_from_wire(decode_payload(encode_payload({"o": obj_to_wire(o)}))["o"])
    assert back == o


@given(
    st.sampled_from(list(MessageKind)),
    st.lists(st.integers(0, 1000), max_size=30),
    st.integers(-1, 50),
    st.integers(-1, 50),
)
def test_message_envelope_roundtrip(kind, items, src, dst):
    field = {"BuildLocal": "objects", "InsertTask": "objects", "RangeTask": "partitions", "KnnTask": "partitions",
             "DeleteTask": "ids", "Result": "entries"}.get(kind.value, "x")
    msg = make_message(kind, {field: items}, src, dst)
    back = decode_message(encode_message(msg))
    assert back == msg
    assert back.entry_count == (len(items) if kind is not MessageKind.ACK else 0)
    assert isinstance(back, Message) and back.decode() == {field: items}
