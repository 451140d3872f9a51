import json
import os

import pytest

from wice import dom, featurize, gnn, training, wice_eval
from wice.cli import main


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    """One full pipeline run on a tiny corpus, shared by the checks."""
    root = tmp_path_factory.mktemp("pipeline")
    run(["synth", "--pages", "40", "--sites", "3", "--seed", "11",
         "--out", str(root / "corpus")])
    run(["preprocess", "--corpus", str(root / "corpus" / "pages"),
         "--manifest", str(root / "corpus" / "manifest.tsv"),
         "--out", str(root / "graphs.jsonl")])
    run(["embed", "--graphs", str(root / "graphs.jsonl"),
         "--provider", "hashed", "--dim", "32", "--seed", "0",
         "--out", str(root / "cache.tsv")])
    run(["train", "--graphs", str(root / "graphs.jsonl"),
         "--embeddings", str(root / "cache.tsv"),
         "--split", "by_page", "--seed", "0", "--arch", "wgcn",
         "--epochs", "3", "--out", str(root / "model.ckpt"),
         "--metrics", str(root / "metrics.jsonl")])
    run(["evaluate", "--graphs", str(root / "graphs.jsonl"),
         "--embeddings", str(root / "cache.tsv"),
         "--ckpt", str(root / "model.ckpt"),
         "--split-file", str(root / "model.ckpt.split.json"),
         "--out", str(root / "results.jsonl")])
    return root


def run(argv, expect=0):
    code = main(argv)
    assert code == expect, f"wice {' '.join(argv)} -> exit {code}"
    return code


def test_full_pipeline_artifacts(pipeline_dir):
    root = pipeline_dir
    graphs = dom.read_graphs(root / "graphs.jsonl")
    assert len(graphs) == 40
    provider = featurize.read_cache(root / "cache.tsv")
    assert provider.dim == 32
    params, extra = gnn.load_checkpoint(root / "model.ckpt")
    assert params.architecture == "wgcn"
    assert "config_hash" in extra
    metrics = training.read_metrics(root / "metrics.jsonl")
    assert {m["split"] for m in metrics} == {"train", "valid"}
    results = wice_eval.read_results(root / "results.jsonl")
    methods = {r.method for r in results}
    assert "wgcn" in methods and "oracle" in methods


def test_sidecars_written(pipeline_dir):
    for artifact in ("graphs.jsonl", "cache.tsv", "model.ckpt",
                     "results.jsonl"):
        meta_path = pipeline_dir / (artifact + ".meta.json")
        assert meta_path.exists()
        meta = json.loads(meta_path.read_text())
        assert meta["config_hash"]
        assert meta["stage"]


def test_split_file_written(pipeline_dir):
    split = training.read_split(pipeline_dir / "model.ckpt.split.json")
    assert split["mode"] == "by_page"
    total = len(split["train"]) + len(split["valid"]) + len(split["test"])
    assert total == 40


def test_evaluate_before_train_is_missing_prerequisite(tmp_path):
    code = main(["evaluate", "--graphs", str(tmp_path / "nope.jsonl"),
                 "--embeddings", str(tmp_path / "nope.tsv"),
                 "--out", str(tmp_path / "r.jsonl")])
    assert code == 2


def test_usage_error_exit_code(tmp_path):
    assert main(["synth", "--pages", "5", "--sites", "2", "--seed", "0"]) == 1
    assert main(["train", "--bogus-flag"]) == 1


def test_embed_rerun_byte_identical(pipeline_dir, tmp_path):
    out2 = tmp_path / "cache2.tsv"
    run(["embed", "--graphs", str(pipeline_dir / "graphs.jsonl"),
         "--provider", "hashed", "--dim", "32", "--seed", "0",
         "--out", str(out2)])
    assert out2.read_bytes() == (pipeline_dir / "cache.tsv").read_bytes()


def test_chain_mismatch_detected(pipeline_dir, tmp_path):
    # build a second corpus and graphs file, then feed train a cache
    # that was derived from the first graphs file
    run(["synth", "--pages", "10", "--sites", "2", "--seed", "99",
         "--out", str(tmp_path / "corpus2")])
    run(["preprocess", "--corpus", str(tmp_path / "corpus2" / "pages"),
         "--manifest", str(tmp_path / "corpus2" / "manifest.tsv"),
         "--out", str(tmp_path / "graphs2.jsonl")])
    code = main(["train", "--graphs", str(tmp_path / "graphs2.jsonl"),
                 "--embeddings", str(pipeline_dir / "cache.tsv"),
                 "--epochs", "1",
                 "--out", str(tmp_path / "m.ckpt")])
    assert code == 2


def test_cache_provider_round_trip(pipeline_dir, tmp_path):
    # embed --provider cache re-exports the vectors it needs
    out = tmp_path / "resliced.tsv"
    run(["embed", "--graphs", str(pipeline_dir / "graphs.jsonl"),
         "--provider", "cache", "--cache", str(pipeline_dir / "cache.tsv"),
         "--out", str(out)])
    a = featurize.read_cache(out)
    b = featurize.read_cache(pipeline_dir / "cache.tsv")
    assert a.dim == b.dim
    assert set(a.vectors) == set(b.vectors)


def test_extract_prints_context(pipeline_dir, capsys):
    graphs = dom.read_graphs(pipeline_dir / "graphs.jsonl")
    page_id = graphs[0].page_id
    html_path = pipeline_dir / "corpus" / "pages" / f"{page_id}.html"
    run(["extract", "--ckpt", str(pipeline_dir / "model.ckpt"),
         "--html", str(html_path)])
    out = capsys.readouterr().out
    assert "node_id:" in out
    assert "weight:" in out
    assert "text:" in out


def test_config_file_defaults_and_overrides(tmp_path):
    config = {
        "common": {"seed": 5},
        "synth": {"pages": 6, "sites": 2, "out": str(tmp_path / "c")},
    }
    cfg_path = tmp_path / "run.json"
    cfg_path.write_text(json.dumps(config))
    run(["--config", str(cfg_path), "synth"])
    rows = dom.read_manifest(tmp_path / "c" / "manifest.tsv")
    assert len(rows) == 6
    # CLI override wins over the file value
    run(["--config", str(cfg_path), "synth", "--pages", "9",
         "--out", str(tmp_path / "c2")])
    assert len(dom.read_manifest(tmp_path / "c2" / "manifest.tsv")) == 9


def test_denylist_override(tmp_path):
    (tmp_path / "page.html").write_text(
        '<article><img src=x width=5 height=5 alt="ref words">'
        "<aside><p>aside text here</p></aside><p>body text</p></article>")
    (tmp_path / "manifest.tsv").write_text("page\tsite.a\tu\n")
    deny = tmp_path / "deny.txt"
    deny.write_text("aside\nscript\n")
    run(["preprocess", "--corpus", str(tmp_path),
         "--manifest", str(tmp_path / "manifest.tsv"),
         "--denylist", str(deny),
         "--out", str(tmp_path / "g.jsonl")])
    (graph,) = dom.read_graphs(tmp_path / "g.jsonl")
    texts = [n.text for n in graph.nodes if n.kind == "text"]
    assert texts == ["body text"]


def test_preprocess_error_rate_threshold(tmp_path):
    (tmp_path / "pages").mkdir()
    (tmp_path / "pages" / "good.html").write_text(
        '<article><img src=x width=5 height=5 alt="ref"><p>tx</p></article>')
    (tmp_path / "pages" / "bad.html").write_text("<p>no image at all</p>")
    (tmp_path / "manifest.tsv").write_text(
        "good\ts\tu\nbad\ts\tu\n")
    args = ["preprocess", "--corpus", str(tmp_path / "pages"),
            "--manifest", str(tmp_path / "manifest.tsv"),
            "--out", str(tmp_path / "g.jsonl")]
    assert main(args + ["--max-error-rate", "0.6"]) == 0
    assert main(args + ["--max-error-rate", "0.4"]) == 2
    # the graphs file still contains the good page
    (graph,) = dom.read_graphs(tmp_path / "g.jsonl")
    assert graph.page_id == "good"


def test_atomic_write_leaves_no_temp_files(pipeline_dir):
    leftovers = [p for p in os.listdir(pipeline_dir) if ".tmp" in p]
    assert leftovers == []
