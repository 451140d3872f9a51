import hashlib
import json

import numpy as np
import pytest

from wice_exporter.cli import main
from wice_exporter.exporter import (
    ModelUnavailable,
    collect_texts,
    encode_texts,
    export_embeddings,
    text_key,
)


def write_graphs_fixture(path, texts, reference="ref words", title=None):
    """Minimal graphs file in the documented JSONL schema."""
    nodes = [{"node_id": 0, "raw_tag": "article", "tag_group": 15,
              "kind": "element", "is_main_image": False}]
    edges = []
    for i, text in enumerate(texts, start=1):
        nodes.append({"node_id": i, "raw_tag": "#text", "tag_group": 21,
                      "kind": "text", "text": text,
                      "is_main_image": False})
        edges.append([0, i])
    record = {
        "page_id": "p0", "site_id": "s", "title": title,
        "reference_text": reference, "reference_source": "alt",
        "anchors": {}, "nodes": nodes, "edges": edges,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(record, ensure_ascii=False) + "\n")


def test_collect_texts_dedup_and_coverage(tmp_path):
    path = tmp_path / "graphs.jsonl"
    write_graphs_fixture(path, ["alpha", "beta", "alpha"],
                         reference="the reference", title="a title")
    texts = collect_texts(path)
    assert texts.count("alpha") == 1
    assert "the reference" in texts
    assert "a title" in texts


def test_dummy_encoder_deterministic_unit_norm():
    a = encode_texts(["one", "two"], "dummy:24")
    b = encode_texts(["one", "two"], "dummy:24")
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-9)
    assert not np.allclose(a[0], a[1])


def test_export_round_trip_and_manifest(tmp_path):
    graphs = tmp_path / "graphs.jsonl"
    write_graphs_fixture(graphs, [f"text number {i}" for i in range(10)])
    out = tmp_path / "cache.tsv"
    manifest = export_embeddings(graphs, "dummy:32", out)
    assert manifest.dim == 32
    assert manifest.text_count == 11  # 10 node texts + reference
    assert manifest.content_hash == hashlib.sha256(
        out.read_bytes()).hexdigest()
    sidecar = json.loads((tmp_path / "cache.tsv.manifest.json").read_text())
    assert sidecar["model"] == "dummy:32"

    header, *rows = out.read_text(encoding="utf-8").splitlines()
    assert header == "dim=32 provider=dummy:32"
    assert len(rows) == 11
    keys = [r.split("\t")[0] for r in rows]
    assert keys == sorted(keys)
    for row in rows:
        key, payload = row.split("\t")
        vec = np.array([float(x) for x in payload.split(" ")])
        assert len(vec) == 32
        assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6


def test_export_deterministic_bytes(tmp_path):
    graphs = tmp_path / "graphs.jsonl"
    write_graphs_fixture(graphs, ["un", "deux", "trois"])
    out1 = tmp_path / "c1.tsv"
    out2 = tmp_path / "c2.tsv"
    m1 = export_embeddings(graphs, "dummy:16", out1)
    m2 = export_embeddings(graphs, "dummy:16", out2)
    assert out1.read_bytes() == out2.read_bytes()
    assert m1.content_hash == m2.content_hash


def test_bad_model_id_is_model_unavailable(tmp_path):
    graphs = tmp_path / "graphs.jsonl"
    write_graphs_fixture(graphs, ["x"])
    with pytest.raises(ModelUnavailable):
        export_embeddings(graphs, "dummy:not-a-number", tmp_path / "c.tsv")


def test_cli_exit_codes(tmp_path, capsys):
    graphs = tmp_path / "graphs.jsonl"
    write_graphs_fixture(graphs, ["hello", "world"])
    code = main(["--graphs", str(graphs), "--model", "dummy:16",
                 "--out", str(tmp_path / "c.tsv")])
    assert code == 0
    out = capsys.readouterr().out
    assert "texts: 3" in out
    assert main(["--graphs", str(graphs), "--model", "dummy:bogus",
                 "--out", str(tmp_path / "c2.tsv")]) == 2
    assert main(["--graphs", str(tmp_path / "missing.jsonl"),
                 "--model", "dummy:16",
                 "--out", str(tmp_path / "c3.tsv")]) == 1


# ------------------------------------------------------ compliance gate
# [SECONDARY] acceptance: the cache must load through the pipeline's own
# cache provider with zero MissingEmbedding errors and unit-norm vectors
# on a 50-text fixture.

def test_exporter_compliance_with_pipeline_reader(tmp_path):
    wice_featurize = pytest.importorskip(
        "wice.featurize",
        reason="pipeline package not installed; format compliance is "
               "checked against its cache reader")
    graphs = tmp_path / "graphs.jsonl"
    texts = [f"fixture sentence number {i} with words" for i in range(49)]
    write_graphs_fixture(graphs, texts, reference="fixture reference text")
    out = tmp_path / "cache.tsv"
    manifest = export_embeddings(graphs, "dummy:48", out)
    assert manifest.text_count == 50

    provider = wice_featurize.read_cache(out)
    assert provider.dim == 48
    missing = 0
    for text in texts + ["fixture reference text"]:
        try:
            vec = provider.embed(text)
        except wice_featurize.MissingEmbedding:
            missing += 1
            continue
        assert abs(np.linalg.norm(vec) - 1.0) <= 1e-6
    assert missing == 0
    print("[PASS] exporter-compliance: 50-text cache loads through the "
          "pipeline cache provider, 0 missing, all unit-norm +/- 1e-6")
