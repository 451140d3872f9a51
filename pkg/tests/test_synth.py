import numpy as np

from wice import dom, featurize, synth, training


def test_generate_page_deterministic():
    topics = synth.build_topics(3)
    plans = synth.plan_sites(2, 3, topics)
    a, ta = synth.generate_page(plans[0].template, topics, 5, "p00001", 3)
    b, tb = synth.generate_page(plans[0].template, topics, 5, "p00001", 3)
    assert a == b
    assert ta == tb


def test_generate_corpus_layout(tmp_path):
    summary = synth.generate_corpus(10, 2, 1, tmp_path)
    rows = dom.read_manifest(tmp_path / "manifest.tsv")
    assert len(rows) == 10
    assert len({site for _, site, _ in rows}) == 2
    assert summary["pages"] == 10
    truth = synth.read_truth(tmp_path / "truth.jsonl")
    assert set(truth) == {pid for pid, _, _ in rows}
    for pid, _, _ in rows:
        assert (tmp_path / "pages" / f"{pid}.html").exists()


def test_generate_corpus_deterministic(tmp_path):
    d1 = tmp_path / "one"
    d2 = tmp_path / "two"
    synth.generate_corpus(8, 2, 5, d1)
    synth.generate_corpus(8, 2, 5, d2)
    assert (d1 / "manifest.tsv").read_bytes() == (d2 / "manifest.tsv").read_bytes()
    assert (d1 / "truth.jsonl").read_bytes() == (d2 / "truth.jsonl").read_bytes()
    for page in sorted(p.name for p in (d1 / "pages").iterdir()):
        assert (d1 / "pages" / page).read_bytes() == \
            (d2 / "pages" / page).read_bytes()


def test_every_page_preprocessable(mini_corpus):
    # no NoImage / NoReferenceText by construction
    graphs = mini_corpus["graphs"]
    assert len(graphs) == len(mini_corpus["rows"])
    for g in graphs:
        assert sum(1 for n in g.nodes if n.is_main_image) == 1
        assert g.reference_text
        assert len(g.text_node_ids()) >= 3


def test_anchor_survives_pipeline(mini_corpus):
    for g in mini_corpus["graphs"]:
        assert "ctx" in g.anchors
        node = g.node(g.anchors["ctx"])
        assert node.kind == dom.KIND_TEXT
        assert len(node.text) > 20


def test_planted_node_beats_distractors(mini_corpus):
    """The planted paragraph must out-cosine every other non-headline
    text node against the reference on nearly all pages."""
    provider = mini_corpus["provider"]
    wins = 0
    total = 0
    for g in mini_corpus["graphs"]:
        emb = featurize.featurize_graph(g, provider)
        ref = emb.reference_vector
        planted = g.anchors["ctx"]
        parent_of = {c: p for p, c in g.edges}
        planted_cos = float(emb.node_vectors[planted] @ ref)
        best_other = max(
            (float(vec @ ref) for node_id, vec in emb.node_vectors.items()
             if node_id != planted
             and g.node(parent_of[node_id]).raw_tag not in ("h1", "figcaption")),
            default=-1.0)
        total += 1
        if planted_cos > best_other:
            wins += 1
    assert wins / total >= 0.95


def test_by_site_split_respects_sites(mini_corpus):
    rows = [(g.page_id, g.site_id) for g in mini_corpus["graphs"]]
    splits = training.split_dataset(rows,
                                    training.SplitSpec("by_site", seed=2))
    site_of = dict(rows)
    seen = {}
    for part in ("train", "valid", "test"):
        for pid in splits[part]:
            assert seen.setdefault(site_of[pid], part) == part


def test_family_mix_present():
    topics = synth.build_topics(0)
    plans = synth.plan_sites(20, 0, topics)
    families = {p.template.family for p in plans}
    assert families == set(synth.FAMILIES)


def test_truth_metadata_fields(mini_corpus):
    for record in mini_corpus["truth"].values():
        assert record["anchor"] == "ctx"
        assert record["family"] in synth.FAMILIES
        assert isinstance(record["noise"], bool)
        assert record["caption_mode"] in ("figcaption", "alt_wins",
                                          "alt_only")
