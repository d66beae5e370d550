import queue
import threading
import time
from collections import Counter

import pytest

from streamlab.broker import LogBroker, TopicConfig
from streamlab.microbatch import (
    BatchPolicy,
    InvalidPolicyError,
    MicrobatchEngine,
    _form_batches,
)
from streamlab.topology import OperatorFailure
from streamlab.tuple_engine import TupleEngine


def out_topic(broker, name="out"):
    broker.create_topic(TopicConfig(name))
    return name


def read_all(broker, topic):
    t = broker.topic(topic)
    return [e.payload for e in t.read(0, 0, t.high_water_mark(0))]


def test_policy_validation():
    with pytest.raises(InvalidPolicyError):
        BatchPolicy(max_batch_size=0)
    with pytest.raises(InvalidPolicyError):
        BatchPolicy(max_batch_delay_ms=-1)
    assert BatchPolicy().max_batch_size == 1000
    assert BatchPolicy().max_batch_delay_ms == 100


def test_batch_count_ceiling(ingested_broker, default_payloads):
    engine = MicrobatchEngine(ingested_broker)
    out = out_topic(ingested_broker)
    topo = (
        engine.build("input", len(default_payloads), policy=BatchPolicy(1000, 100))
        .sink_write(out)
        .build()
    )
    report = engine.execute(topo, parallelism=1)
    assert report.batches == 11  # 10 full batches plus one of size 1
    assert report.records_in == 10001
    assert report.records_out == 10001


def test_identity_output_order_at_p1(ingested_broker, default_payloads):
    engine = MicrobatchEngine(ingested_broker)
    out = out_topic(ingested_broker)
    topo = engine.build("input", len(default_payloads)).sink_write(out).build()
    engine.execute(topo, parallelism=1)
    assert read_all(ingested_broker, out) == default_payloads


def test_inter_batch_ordering(ingested_broker, default_payloads):
    engine = MicrobatchEngine(ingested_broker)
    out = out_topic(ingested_broker)
    topo = (
        engine.build("input", len(default_payloads), policy=BatchPolicy(500, 100))
        .sink_write(out)
        .build()
    )
    report = engine.execute(topo, parallelism=2)
    bounds = report.batch_sink_bounds
    assert bounds is not None and len(bounds) == report.batches
    for (first_i, last_i), (first_j, _) in zip(bounds, bounds[1:]):
        assert first_i <= last_i
        assert first_j > last_i
    total = sum(last - first + 1 for first, last in bounds)
    assert total == report.records_out == len(default_payloads)


def test_cross_engine_grep_equivalence(ingested_broker, default_payloads):
    n = len(default_payloads)
    tuple_out = out_topic(ingested_broker, "out-tuple")
    te = TupleEngine(ingested_broker)
    te_topo = te.build("input", n).filter(lambda v: b"test" in v).sink_write(tuple_out).build()
    te.execute(te_topo, parallelism=1)

    mb_out = out_topic(ingested_broker, "out-mb")
    mb = MicrobatchEngine(ingested_broker)
    mb_topo = mb.build("input", n).filter(lambda v: b"test" in v).sink_write(mb_out).build()
    mb.execute(mb_topo, parallelism=2)

    assert Counter(read_all(ingested_broker, mb_out)) == Counter(
        read_all(ingested_broker, tuple_out)
    )


def test_batch_conservation_under_parallelism(ingested_broker, default_payloads):
    engine = MicrobatchEngine(ingested_broker)
    out = out_topic(ingested_broker)
    topo = (
        engine.build("input", len(default_payloads), policy=BatchPolicy(300, 100))
        .sink_write(out)
        .build()
    )
    report = engine.execute(topo, parallelism=3)
    assert report.batches == (10001 + 299) // 300
    assert report.records_in == 10001
    assert Counter(read_all(ingested_broker, out)) == Counter(default_payloads)


def test_operator_failure_propagates(ingested_broker):
    engine = MicrobatchEngine(ingested_broker)
    out = out_topic(ingested_broker)

    def boom(v):
        raise RuntimeError("nope")

    topo = engine.build("input", 50).map(boom, name="bad").sink_write(out).build()
    with pytest.raises(OperatorFailure) as exc:
        engine.execute(topo, parallelism=2)
    assert exc.value.node == "bad"


def test_plan_annotated_microbatch(ingested_broker):
    engine = MicrobatchEngine(ingested_broker)
    topo = engine.build("input", 10).filter(lambda v: True).sink_write("x").build()
    plan = engine.plan(topo, 2)
    assert [n.name for n in plan.nodes] == ["source", "filter", "sink"]
    assert all(n.annotation == "microbatch" for n in plan.nodes)
    assert all(n.parallelism == 2 for n in plan.nodes)


def test_delay_bound_closes_partial_batches():
    """White-box: a slowly filled source forces the delay bound to close
    batches before they reach max_batch_size."""
    broker = LogBroker()
    topic = broker.create_topic(TopicConfig("slow"))

    def trickle():
        for i in range(6):
            topic.append(0, b"%d" % i)
            time.sleep(0.05)

    feeder = threading.Thread(target=trickle)
    batches: queue.SimpleQueue = queue.SimpleQueue()
    feeder.start()
    _form_batches(topic, 6, BatchPolicy(max_batch_size=100, max_batch_delay_ms=20),
                  1, batches)
    feeder.join()

    sizes = []
    while True:
        batch = batches.get()
        if batch is None:
            break
        sizes.append(batch.size())
    assert sum(sizes) == 6
    assert len(sizes) >= 2  # delay bound split the input despite size 100
