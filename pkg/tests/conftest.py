import pathlib

import pytest

from wice import dom, featurize, synth, training


@pytest.fixture(scope="session")
def mini_corpus(tmp_path_factory):
    """Small generated corpus shared across test modules: 60 pages over
    4 sites, preprocessed and featurized at dim 32."""
    root = tmp_path_factory.mktemp("mini_corpus")
    synth.generate_corpus(60, 4, 7, root)
    rows = dom.read_manifest(root / "manifest.tsv")
    graphs = []
    for page_id, site_id, url in rows:
        html = dom.load_corpus_page(root / "pages", page_id)
        graphs.append(dom.preprocess_page(
            dom.PageRecord(page_id, site_id, url, html)))
    provider = featurize.HashedProvider(128, 0)
    examples, skipped = training.build_examples(graphs, provider)
    return {
        "root": pathlib.Path(root),
        "rows": rows,
        "graphs": graphs,
        "provider": provider,
        "examples": examples,
        "skipped": skipped,
        "truth": synth.read_truth(root / "truth.jsonl"),
    }
