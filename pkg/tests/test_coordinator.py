import math
import random

import pytest

from conftest import EDIT, L2_2D, P22, P31, P32, brute_knn, dists_match, fig_tree, range_matches
from dims.coordinator import DIMS, DIMSConfig, DuplicateId, IndexNotBuilt, UnknownId
from dims.ingest import gaussian_clusters, index_bytes, index_from_bytes
from dims.metric import MetricObject


def fig_dims(**kw):
    tree, objs = fig_tree()
    d = DIMS(L2_2D, DIMSConfig(n_workers=3, fanout=3, leaf_width=2, seed=5, sequential=True, **kw))
    d.deploy(tree, objs)
    return d, objs


def test_figure_range_query():
    d, objs = fig_dims()
    ans = d.range_query(objs[9], 2.8)
    assert set(ans.ids) == {8, 9, 10, 11, 13}
    assert set(ans.plan.candidates) == {P22, P31, P32}
    assert ans.plan.validated == [P31]
    assert all(dd is None or dd <= 2.8 for _, dd in ans.entries)


def test_figure_knn_query():
    d, objs = fig_dims()
    ans = d.knn_query(objs[9], 2)
    assert ans.ids == [9, 13]
    assert ans.entries[-1][1] == 1.0
    assert ans.plan.d_t >= 1.0


def test_example_words(words):
    d = DIMS(EDIT, DIMSConfig(n_partitions=2, n_workers=2, fanout=2, sequential=True))
    d.build(words)
    q = MetricObject(-1, "10110")
    assert {words[i].payload for i in d.range_query(q, 1).ids} == {"10111", "0110"}
    assert {words[i].payload for i in d.knn_query(q, 3).ids} == {"10111", "0110", "00100"}


def test_not_built():
    d = DIMS(L2_2D)
    q = MetricObject(0, (0.0, 0.0))
    with pytest.raises(IndexNotBuilt):
        d.range_query(q, 1.0)
    with pytest.raises(IndexNotBuilt):
        d.knn_query(q, 1)
    with pytest.raises(IndexNotBuilt):
        d.insert_object(q)


@pytest.fixture(scope="module")
def clustered():
    objs, _ = gaussian_clusters(3000, seed=11)
    d = DIMS(L2_2D, DIMSConfig(n_partitions=60, n_workers=5, fanout=6, seed=1))
    d.build(objs)
    yield d, objs
    d.close()


def test_max_radius_returns_everything(clustered):
    d, objs = clustered
    ans = d.range_query(objs[0], 1e6)
    assert sorted(ans.ids) == list(range(len(objs)))


def test_k_equals_n(clustered):
    d, objs = clustered
    ans = d.knn_query(objs[5], len(objs) + 10)
    assert len(ans.entries) == len(objs)
    assert [x for _, x in ans.entries] == sorted(x for _, x in ans.entries)


def test_random_queries_match_oracle(clustered):
    d, objs = clustered
    rng = random.Random(3)
    for _ in range(40):
        q = MetricObject(-1, (rng.uniform(-5, 25), rng.uniform(-5, 25)))
        r = rng.uniform(0, 4)
        ans = d.range_query(q, r)
        assert range_matches(L2_2D, objs, q, r, ans.ids)
        k = rng.choice([1, 2, 4, 8, 16, 32])
        kn = d.knn_query(q, k)
        want = brute_knn(L2_2D, objs, q, k)
        assert dists_match([x for _, x in kn.entries], want)
        assert kn.plan.d_t >= want[-1] - 1e-12


def test_candidates_monotone_in_radius(clustered):
    d, objs = clustered
    q = objs[7]
    prev = set()
    for r in (0.1, 0.5, 1.0, 2.0, 4.0):
        cand = set(d.range_query(q, r).plan.candidates)
        assert prev <= cand
        prev = cand


def test_every_candidate_has_one_task(clustered):
    d, objs = clustered
    ans = d.range_query(objs[3], 2.0)
    owners = {}
    for w, leaves in ans.plan.tasks.items():
        for lid in leaves:
            assert d.assignment[lid] == w
            owners[lid] = w
    for pid in ans.plan.candidates:
        assert d.leaf_of(pid) in owners


def test_pruned_subtrees_hold_no_answers(clustered):
    d, objs = clustered
    q, r = objs[100], 1.5
    cand = set(d.range_query(q, r).plan.candidates)
    for e in d.tree.leaf_entries():
        if e.pid not in cand:
            assert all(math.dist(objs[i].payload, q.payload) > r for i in e.items)


def test_examined_accounting(clustered):
    d, objs = clustered
    ans = d.range_query(objs[9], 1.0)
    examined = sum(w.examined for w in ans.stats.workers) + ans.stats.primary.examined
    assert examined >= len(ans.entries)


def small_index(n=800, seed=2, **kw):
    objs, _ = gaussian_clusters(n, seed=seed)
    cfg = dict(n_partitions=20, n_workers=4, fanout=4, seed=3, sequential=True)
    cfg.update(kw)
    d = DIMS(L2_2D, DIMSConfig(**cfg))
    d.build(objs)
    return d, objs


def test_insert_then_find():
    d, _ = small_index()
    o = MetricObject(10_000, (3.3, 4.4))
    d.insert_object(o)
    assert d.range_query(o, 0.0).ids == [10_000]
    with pytest.raises(DuplicateId):
        d.insert_object(o)


def test_delete_then_miss():
    d, objs = small_index()
    d.delete_object(5)
    assert 5 not in d.range_query(objs[5], 0.0).ids
    with pytest.raises(UnknownId):
        d.delete_object(5)


def test_delete_everything():
    d, objs = small_index(n=120)
    for o in objs:
        d.delete_object(o.id)
    assert d.range_query(objs[0], 1e9).ids == []
    assert d.knn_query(objs[0], 3).ids == []


def test_insert_into_full_partition_splits():
    d, objs = small_index()
    before = len(list(d.tree.leaf_entries()))
    cap = d.tree.config.leaf_capacity
    full = max(d.tree.leaf_entries(), key=lambda e: len(e.items))
    center = full.center.payload
    for j in range(cap + 1):
        d.insert_object(MetricObject(20_000 + j, (center[0] + 1e-6 * j, center[1])))
    assert len(list(d.tree.leaf_entries())) >= before + 1
    assert d.tree.audit() == []
    # every object is held by exactly the worker owning its partition's bucket
    for e in d.tree.leaf_entries():
        lid = d.leaf_of(e.pid)
        node = d.workers[d.assignment[lid]]
        for oid in e.items:
            assert node.leaf_of[oid] == lid and node.pid_of[oid] == e.pid
    assert sum(len(w.store) for w in d.workers) == len(d.catalog)


def test_updates_stay_exact():
    d, objs = small_index(n=1500, n_partitions=30)
    rng = random.Random(9)
    for i in rng.sample(range(1500), 300):
        o = d.catalog[i]
        d.delete_object(i)
        d.insert_object(o)
    gone = set(rng.sample(range(1500), 150))
    for i in gone:
        d.delete_object(i)
    live = [o for o in objs if o.id not in gone]
    for _ in range(30):
        q = MetricObject(-1, (rng.uniform(0, 25), rng.uniform(0, 25)))
        r = rng.uniform(0, 3)
        assert range_matches(L2_2D, live, q, r, d.range_query(q, r).ids)
        assert dists_match([x for _, x in d.knn_query(q, 8).entries], brute_knn(L2_2D, live, q, 8))


def test_save_load_identical_answers():
    d, objs = small_index()
    d.insert_object(MetricObject(9999, (1.0, 1.0)))
    blob = index_bytes(d)
    back = index_from_bytes(blob)
    assert index_bytes(back) == blob
    rng = random.Random(1)
    for _ in range(20):
        q = rng.choice(objs)
        assert d.range_query(q, 1.0).entries == back.range_query(q, 1.0).entries
        a, b = d.knn_query(q, 5), back.knn_query(q, 5)
        assert a.entries == b.entries
        assert a.stats.to_record(wall=False) == b.stats.to_record(wall=False)
    back.insert_object(MetricObject(7777, (2.0, 2.0)))
    assert back.range_query(MetricObject(-1, (2.0, 2.0)), 0.0).ids == [7777]


def test_parallel_and_sequential_agree():
    d1, objs = small_index(sequential=True)
    d2, _ = small_index(sequential=False)
    for q in objs[:20]:
        a, b = d1.knn_query(q, 4), d2.knn_query(q, 4)
        assert a.entries == b.entries
        assert a.stats.to_record(wall=False) == b.stats.to_record(wall=False)
    d2.close()
