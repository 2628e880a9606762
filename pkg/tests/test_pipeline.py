import math

import pytest

from edgesim.engine import Engine, RngStream, ms, seconds
from edgesim.pipeline import (CloudArchive, CloudSyncer, DataRecord, DecisionPolicy, Pipeline,
                              PipelineParams, ServiceTime, Stage, StageKind, Verdict, aggregate,
                              decide, filter_record)
from edgesim.workload import RequestKind, WorkloadProfile, generate


def rec(i, kind=RequestKind.AVAILABILITY_CHECK, size=100, node="e", relevance=True):
    r = DataRecord(i, kind, "r", 0, relevance, size)
    r.node = node
    return r


def test_idle_stage_exit_is_enter_plus_service():
    eng = Engine()
    done = []
    st = Stage(eng, "e", StageKind.INGESTION, ServiceTime.fixed(1), on_done=done.append)
    eng.run_until(500)
    r = rec(1)
    st.arrive(r)
    eng.run()
    assert r.hops == [(StageKind.INGESTION, 500, 1500)]


def test_fifo_exits_plus_one_two_three_ms():
    eng = Engine()
    st = Stage(eng, "e", StageKind.INGESTION, ServiceTime.fixed(1))
    rs = [rec(i) for i in range(3)]
    for r in rs:
        st.arrive(r)
    eng.run()
    assert [r.hops[0][2] for r in rs] == [ms(1), ms(2), ms(3)]
    assert all(r.hops[0][1] == 0 for r in rs)


def test_full_queue_sheds_third_arrival():
    eng = Engine()
    shed = []
    st = Stage(eng, "e", StageKind.INGESTION, ServiceTime.fixed(1), capacity=2,
               on_shed=shed.append)
    rs = [rec(i) for i in range(4)]
    results = [st.arrive(r) for r in rs]
    # one in service, two waiting, the next is shed
    assert results == [True, True, True, False]
    assert shed == [rs[3]] and st.shed == 1


def test_work_conservation_with_multiple_instances():
    eng = Engine()
    st = Stage(eng, "e", StageKind.ANALYSIS, ServiceTime.fixed(2), instances=2)
    rs = [rec(i) for i in range(4)]
    for r in rs:
        st.arrive(r)
    eng.run()
    assert [r.hops[0][2] for r in rs] == [ms(2), ms(2), ms(4), ms(4)]


def test_set_instances_starts_waiting_work():
    eng = Engine()
    st = Stage(eng, "e", StageKind.ANALYSIS, ServiceTime.fixed(2))
    rs = [rec(i) for i in range(3)]
    for r in rs:
        st.arrive(r)
    st.set_instances(3)
    eng.run()
    assert [r.hops[0][2] for r in rs] == [ms(2)] * 3


def test_filter_verdicts():
    assert filter_record(rec(1, relevance=True)) is True
    assert filter_record(rec(1, relevance=False)) is False


def test_thirty_percent_irrelevant_drop_count():
    prof = WorkloadProfile(10_000, seconds(1), irrelevant_fraction=0.3)
    records = list(generate(prof, RngStream(9, "workload")))[:10_000]
    assert len(records) == 10_000
    drops = sum(1 for r in records if not filter_record(r))
    assert abs(drops - 3000) <= 3 * math.sqrt(10_000 * 0.3 * 0.7)


def test_aggregate_identity_and_compression():
    one = rec(1)
    unit = aggregate([one], 1.0)
    assert unit.size == one.size and unit.members == (one,)
    unit = aggregate([rec(i) for i in range(10)], 0.5)
    assert unit.size == 500 and unit.member_ids == tuple(range(10))


def test_aggregate_rejects_reuse_and_mixed_nodes():
    a = rec(1)
    aggregate([a])
    with pytest.raises(ValueError):
        aggregate([a])
    with pytest.raises(ValueError):
        aggregate([rec(2, node="x"), rec(3, node="y")])
    with pytest.raises(ValueError):
        aggregate([])


def test_decide_default_policy():
    pol = DecisionPolicy.default()
    assert decide(rec(1, RequestKind.CONFIRMATION), pol) is Verdict.CLOUD
    assert decide(rec(2, RequestKind.BOOKING), pol) is Verdict.CLOUD
    assert decide(rec(3, RequestKind.AVAILABILITY_CHECK), pol) is Verdict.LOCAL


def test_decide_rejects_non_verdict():
    with pytest.raises(TypeError):
        decide(rec(1), DecisionPolicy(lambda r: "LOCAL"))


def build_pipeline(eng, policy, syncer=None, **params):
    done, dropped = [], []
    holder = {}

    def analyzed(r):
        holder["p"].conclude(r)

    p = Pipeline(eng, "e", PipelineParams(**params), policy, analyzed=analyzed,
                 complete=done.append, dropped=lambda r, why: dropped.append((r, why)),
                 syncer=syncer)
    holder["p"] = p
    return p, done, dropped


def test_pipeline_chain_and_windows():
    eng = Engine()
    p, done, dropped = build_pipeline(eng, DecisionPolicy.default(), window_count=4,
                                      window_timeout=ms(20))
    rs = [rec(i) for i in range(6)] + [rec(6, relevance=False)]
    for r in rs:
        p.ingest(r)
    eng.run()
    assert len(done) == 6 and dropped == [(rs[6], "filtered")]
    chain = [StageKind.INGESTION, StageKind.FILTERING, StageKind.AGGREGATION,
             StageKind.ANALYSIS, StageKind.TEMP_STORAGE]
    for r in done:
        assert [h[0] for h in r.hops] == chain
        times = [t for h in r.hops for t in h[1:]]
        assert times == sorted(times)
    # 4 records fill a window; the remaining 2 wait out the timeout
    assert p.aggregator.windows_closed == 2
    assert p.active == 0 and p.ingested == p.responded + p.filtered + p.shed


def test_constant_local_policy_means_no_cloud_sync():
    eng = Engine()
    sent = []
    syncer = CloudSyncer(eng, "e", ms(100), lambda b, drop: sent.append(b))
    p, done, _ = build_pipeline(eng, DecisionPolicy.constant(Verdict.LOCAL), syncer)
    for i in range(20):
        p.ingest(rec(i, RequestKind.BOOKING))
    eng.run()
    assert len(done) == 20 and sent == [] and p.cloud_verdicts == 0


def test_cloud_sync_batches_one_message_per_interval():
    eng = Engine()
    archive = CloudArchive()
    sent = []

    def send(batch, on_drop):
        sent.append(batch)
        eng.schedule(ms(80), archive.append, batch, eng.now + ms(80))

    syncer = CloudSyncer(eng, "e", ms(100), send)
    for i in range(7):
        r = rec(i)
        r.processed_at = eng.now
        syncer.add(r)
    eng.run()
    assert len(sent) == 1 and len(sent[0].records) == 7
    # cloud copy lags the edge by at most interval + transit
    assert all(arr - edge_t <= ms(100) + ms(80) for edge_t, arr in archive.records.values())


def test_cloud_sync_retry_limit_flags_unsynced():
    eng = Engine()
    attempts = []
    syncer = CloudSyncer(eng, "e", ms(100), lambda b, drop: (attempts.append(1), drop(b)),
                         retry_limit=3, backoff=ms(200))
    syncer.add(rec(1))
    eng.run()
    assert len(attempts) == 3
    assert len(syncer.unsynced) == 1 and syncer.unsynced[0].unsynced


def test_service_time_distributions():
    rng = RngStream(1, "s")
    u = ServiceTime.uniform(1, 3)
    assert all(ms(1) <= u.sample(rng) <= ms(3) for _ in range(1000))
    e = ServiceTime.exponential(2)
    xs = [e.sample(rng) for _ in range(20_000)]
    assert abs(sum(xs) / len(xs) - ms(2)) < ms(0.1)
    assert ServiceTime.fixed(0.5).sample(rng) == 500
