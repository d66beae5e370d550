import pytest

from streamlab.broker import LogBroker, TopicConfig
from streamlab.corpus import CorpusSpec, generate_corpus, send, serialize_record

DEFAULT_N = 10001


def verify_broker_coherence(broker):
    """Every partition of every topic: offsets dense from 0, append
    timestamps non-decreasing in offset order."""
    for name in broker.topic_names():
        topic = broker.topic(name)
        for partition in range(topic.config.partitions):
            n = topic.high_water_mark(partition)
            entries = topic.read(partition, 0, n)
            assert [e.offset for e in entries] == list(range(n)), name
            for a, b in zip(entries, entries[1:]):
                assert a.append_ts <= b.append_ts, name


@pytest.fixture(scope="session")
def default_spec():
    return CorpusSpec(n_records=DEFAULT_N)


@pytest.fixture(scope="session")
def default_records(default_spec):
    return generate_corpus(default_spec)


@pytest.fixture(scope="session")
def default_payloads(default_records):
    return [serialize_record(r) for r in default_records]


@pytest.fixture
def ingested_broker(default_records):
    broker = LogBroker()
    broker.create_topic(TopicConfig("input"))
    send(default_records, broker, "input")
    yield broker
    verify_broker_coherence(broker)
