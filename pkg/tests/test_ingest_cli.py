import json
import math
import struct

import pytest

from conftest import EDIT, L2_2D, WORDS
from dims import cli
from dims.coordinator import DIMS, DIMSConfig
from dims.ingest import (
    CorruptIndex,
    DatasetSpec,
    Format,
    ParseError,
    RadiusSpec,
    VersionMismatch,
    distance_scale,
    gaussian_clusters,
    index_bytes,
    load_dataset,
    load_index,
    resolve_radius,
    save_index,
    write_vector_binary,
    write_vector_text,
    write_words,
)
from dims.metric import DimensionMismatch, KindMismatch, Metric, MetricKind, MetricObject
from dims.partitioner import EmptyDataset


def test_word_list(tmp_path):
    p = tmp_path / "w.txt"
    write_words(p, WORDS)
    objs = load_dataset(DatasetSpec(p, Format.WORDS, EDIT))
    assert [(o.id, o.payload) for o in objs] == list(enumerate(WORDS))
    again = load_dataset(DatasetSpec(p, Format.WORDS, EDIT))
    assert objs == again


def test_empty_file(tmp_path):
    p = tmp_path / "e.txt"
    p.write_text("")
    with pytest.raises(EmptyDataset):
        load_dataset(DatasetSpec(p, Format.WORDS, EDIT))


def test_bad_word_line(tmp_path):
    p = tmp_path / "w.txt"
    p.write_text("abc\ntwo words\n")
    with pytest.raises(ParseError) as err:
        load_dataset(DatasetSpec(p, Format.WORDS, EDIT))
    assert err.value.where == "line 2"


def test_binary_one_vector(tmp_path):
    p = tmp_path / "v.bin"
    p.write_bytes(struct.pack("<I3f", 3, 1.0, 2.0, 3.0))
    (o,) = load_dataset(DatasetSpec(p, Format.VECTOR_BINARY, Metric(MetricKind.L2, 3)))
    assert o.payload == (1.0, 2.0, 3.0) and o.id == 0


def test_binary_errors(tmp_path):
    p = tmp_path / "v.bin"
    p.write_bytes(struct.pack("<I3f", 3, 1.0, 2.0, 3.0)[:-2])
    with pytest.raises(ParseError):
        load_dataset(DatasetSpec(p, Format.VECTOR_BINARY, Metric(MetricKind.L2, 3)))
    p.write_bytes(struct.pack("<I2f", 2, 1.0, 2.0))
    with pytest.raises(DimensionMismatch):
        load_dataset(DatasetSpec(p, Format.VECTOR_BINARY, Metric(MetricKind.L2, 3)))


def test_vector_text_and_limit(tmp_path):
    p = tmp_path / "v.txt"
    vecs = [(float(i), float(i) / 2) for i in range(10)]
    write_vector_text(p, vecs)
    objs = load_dataset(DatasetSpec(p, Format.VECTOR_TEXT, L2_2D))
    assert [o.payload for o in objs] == vecs
    assert len(load_dataset(DatasetSpec(p, Format.VECTOR_TEXT, L2_2D, limit_pct=20))) == 2
    p.write_text("1 2\n3 x\n")
    with pytest.raises(ParseError):
        load_dataset(DatasetSpec(p, Format.VECTOR_TEXT, L2_2D))
    p.write_text("1 2\n3 4 5\n")
    with pytest.raises(DimensionMismatch):
        load_dataset(DatasetSpec(p, Format.VECTOR_TEXT, L2_2D))


def test_binary_roundtrip_float32(tmp_path):
    p = tmp_path / "v.bin"
    write_vector_binary(p, [(0.5, 0.25), (1.0, -2.0)])
    assert [o.payload for o in load_dataset(DatasetSpec(p, "binary", L2_2D))] == [(0.5, 0.25), (1.0, -2.0)]


def test_format_metric_mismatch(tmp_path):
    with pytest.raises(KindMismatch):
        DatasetSpec(tmp_path / "x", Format.WORDS, L2_2D)


def test_radius_resolution():
    objs = [MetricObject(0, (0.0, 0.0)), MetricObject(1, (3.0, 4.0))]
    assert resolve_radius(RadiusSpec(100), L2_2D, objs) == 5.0
    assert resolve_radius(RadiusSpec(2.5, percent=False), L2_2D, objs) == 2.5
    with pytest.raises(ValueError):
        RadiusSpec(0)
    data, _ = gaussian_clusters(2000, seed=3)
    r1 = resolve_radius(RadiusSpec(0.8), L2_2D, data, seed=4)
    assert r1 == resolve_radius(RadiusSpec(0.8), L2_2D, data, seed=4)
    grid = [resolve_radius(RadiusSpec(p), L2_2D, data, seed=4) for p in (0.1, 0.2, 0.4, 0.8, 1.6, 3.2)]
    assert grid == sorted(grid)
    assert math.isclose(grid[3], 0.008 * distance_scale(L2_2D, data, seed=4))


@pytest.fixture
def saved(tmp_path):
    objs, _ = gaussian_clusters(400, seed=1)
    d = DIMS(L2_2D, DIMSConfig(n_partitions=20, n_workers=3, fanout=4, sequential=True))
    d.build(objs)
    path = tmp_path / "idx.dims"
    save_index(d, path)
    return d, path


def test_index_file_errors(saved, tmp_path):
    d, path = saved
    data = path.read_bytes()
    assert data[:5] == b"DIMS1"
    cut = tmp_path / "cut.dims"
    cut.write_bytes(data[: len(data) // 2])
    with pytest.raises(CorruptIndex):
        load_index(cut)
    bumped = tmp_path / "v2.dims"
    bumped.write_bytes(data[:4] + b"2" + data[5:])
    with pytest.raises(VersionMismatch):
        load_index(bumped)
    flipped = bytearray(data)
    flipped[-10] ^= 0xFF
    bad = tmp_path / "flip.dims"
    bad.write_bytes(bytes(flipped))
    with pytest.raises(CorruptIndex):
        load_index(bad)
    assert index_bytes(load_index(path)) == data


# -- command line ----------------------------------------------------------------


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, [json.loads(line) for line in out.out.splitlines() if line.strip()], out.err


@pytest.fixture
def word_index(tmp_path, capsys):
    data = tmp_path / "words.txt"
    write_words(data, WORDS)
    idx = tmp_path / "words.dims"
    code, recs, _ = run(capsys, "build", "--data", data, "--metric", "edit", "--np", 2, "--workers", 2,
                        "--fanout", 2, "--out", idx)
    assert code == 0 and recs[0]["objects"] == 4
    return data, idx


def test_cli_query_range_words(word_index, capsys):
    _, idx = word_index
    code, recs, _ = run(capsys, "query", "--index", idx, "--mode", "range", "--q", "10110", "--radius", 1)
    assert code == 0
    assert sorted(recs[0]["answer_payloads"]) == ["0110", "10111"]
    code, recs, _ = run(capsys, "query", "--index", idx, "--mode", "knn", "--q", "10110", "--k", 3)
    assert sorted(recs[0]["answer_payloads"]) == ["00100", "0110", "10111"]


def test_cli_bench_schema(tmp_path, capsys):
    objs, _ = gaussian_clusters(1500, seed=2)
    data = tmp_path / "pts.txt"
    write_vector_text(data, [o.payload for o in objs])
    idx = tmp_path / "pts.dims"
    assert run(capsys, "build", "--data", data, "--metric", "l2", "--out", idx)[0] == 0
    code, recs, _ = run(capsys, "bench", "--index", idx, "--queries", 5, "--no-wall", "--sequential")
    assert code == 0
    per_query = [r for r in recs if not r.get("summary")]
    assert len(per_query) == 5
    for r in per_query:
        assert {"latency", "distance_count", "busy", "messages"} <= set(r)
        assert set(r["distance_count"]) == {"primary", "workers"} and len(r["busy"]) == 10
    (summary,) = [r for r in recs if r.get("summary")]
    assert summary["workload_std"]["examined"] >= 0
    code, again, _ = run(capsys, "bench", "--index", idx, "--queries", 5, "--no-wall", "--sequential")
    assert again == recs
    code, recs, _ = run(capsys, "bench", "--index", idx, "--queries", 2, "--mode", "knn", "--grid", "--no-wall")
    assert [r["setting"] for r in recs if r.get("summary")] == [1, 2, 4, 8, 16, 32]


def test_cli_optimize_curve(tmp_path, capsys):
    objs, _ = gaussian_clusters(2000, seed=4)
    data = tmp_path / "pts.txt"
    write_vector_text(data, [o.payload for o in objs])
    idx = tmp_path / "pts.dims"
    run(capsys, "build", "--data", data, "--metric", "l2", "--np", 50, "--out", idx)
    code, recs, _ = run(capsys, "optimize", "--index", idx, "--samples", 2000)
    assert code == 0
    rec = recs[0]
    assert [c["N_p"] for c in rec["curve"]] == [50, 100, 200, 400, 800, 1600]
    assert all(c["total"] is not None for c in rec["curve"])
    assert 1 <= rec["n_star"] <= 2000


def test_cli_validate(word_index, capsys):
    data, _ = word_index
    code, recs, _ = run(capsys, "validate", "--data", data, "--metric", "edit", "--triples", 500)
    assert code == 0 and recs[0]["violations"] == 0


def test_cli_exit_codes(tmp_path, capsys, monkeypatch):
    assert run(capsys, "nope")[0] == cli.EXIT_USAGE
    assert run(capsys, "query", "--index", tmp_path / "missing", "--mode", "knn", "--q", "a")[0] == cli.EXIT_DATA
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    code, _, err = run(capsys, "build", "--data", empty, "--metric", "edit", "--out", tmp_path / "x")
    assert code == cli.EXIT_DATA and "data error" in err
    monkeypatch.setenv(cli.SEED_ENV, "abc")
    words = tmp_path / "w.txt"
    write_words(words, WORDS)
    assert run(capsys, "validate", "--data", words, "--metric", "edit")[0] == cli.EXIT_USAGE


def test_cli_seed_from_environment(tmp_path, capsys, monkeypatch):
    objs, _ = gaussian_clusters(300, seed=5)
    data = tmp_path / "pts.txt"
    write_vector_text(data, [o.payload for o in objs])
    monkeypatch.setenv(cli.SEED_ENV, "7")
    a, b, c = (tmp_path / n for n in ("a", "b", "c"))
    run(capsys, "build", "--data", data, "--metric", "l2", "--np", 10, "--out", a)
    run(capsys, "build", "--data", data, "--metric", "l2", "--np", 10, "--out", b)
    run(capsys, "build", "--data", data, "--metric", "l2", "--np", 10, "--seed", 8, "--out", c)
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()
    assert load_index(a).config.seed == 7
