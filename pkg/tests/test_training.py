import numpy as np
import pytest

from wice import dom, featurize, gnn, training
from wice.errors import EmptyCorpus
from wice.gnn import GraphTensors


def pages(n, sites):
    return [(f"p{i:04d}", f"site{i % sites}") for i in range(n)]


# ------------------------------------------------------------------ splits

def test_split_by_page_sizes():
    splits = training.split_dataset(pages(10, 3),
                                    training.SplitSpec("by_page", seed=0))
    assert len(splits["train"]) == 5
    assert len(splits["valid"]) == 2
    assert len(splits["test"]) == 3


def test_split_partition_sound():
    ids = pages(137, 11)
    for mode in ("by_page", "by_site"):
        splits = training.split_dataset(ids, training.SplitSpec(mode, seed=4))
        all_ids = splits["train"] + splits["valid"] + splits["test"]
        assert sorted(all_ids) == sorted(p for p, _ in ids)
        assert len(set(splits["train"]) & set(splits["valid"])) == 0
        assert len(set(splits["train"]) & set(splits["test"])) == 0
        assert len(set(splits["valid"]) & set(splits["test"])) == 0


def test_split_by_site_never_splits_a_site():
    ids = pages(100, 7)
    site_of = dict(ids)
    splits = training.split_dataset(ids, training.SplitSpec("by_site", seed=1))
    placement = {}
    for part in ("train", "valid", "test"):
        for page_id in splits[part]:
            site = site_of[page_id]
            assert placement.setdefault(site, part) == part


def test_split_two_pages_one_site_stay_together():
    ids = [("p1", "shared"), ("p2", "shared"), ("p3", "other"),
           ("p4", "third")]
    splits = training.split_dataset(ids, training.SplitSpec("by_site", seed=0))
    for part in ("train", "valid", "test"):
        members = set(splits[part])
        assert not ({"p1", "p2"} & members) or {"p1", "p2"} <= members


def test_split_deterministic():
    ids = pages(50, 5)
    a = training.split_dataset(ids, training.SplitSpec("by_page", seed=9))
    b = training.split_dataset(ids, training.SplitSpec("by_page", seed=9))
    assert a == b
    c = training.split_dataset(ids, training.SplitSpec("by_page", seed=10))
    assert a != c


def test_split_empty_corpus():
    with pytest.raises(EmptyCorpus):
        training.split_dataset([], training.SplitSpec("by_page", seed=0))


def test_split_unknown_mode():
    with pytest.raises(ValueError):
        training.split_dataset(pages(4, 2),
                               training.SplitSpec("by_time", seed=0))


def test_split_file_round_trip(tmp_path):
    spec = training.SplitSpec("by_site", seed=3)
    splits = training.split_dataset(pages(30, 4), spec)
    path = tmp_path / "split.json"
    training.write_split(splits, spec, path)
    loaded = training.read_split(path)
    assert loaded["mode"] == "by_site"
    assert loaded["seed"] == 3
    for part in ("train", "valid", "test"):
        assert loaded[part] == splits[part]


# ------------------------------------------------------------ training loop

def _verbatim_page_examples(n_copies, dim=24):
    """Pages whose body repeats the caption verbatim, so the proxy loss
    can be driven to ~0 by concentrating weight on that node."""
    html = (b'<article>'
            b'<figure><img src=x width=50 height=50>'
            b'<figcaption>rivers rise in spring flood season</figcaption>'
            b'</figure>'
            b'<p>rivers rise in spring flood season</p>'
            b'<p>unrelated market report words entirely</p>'
            b'<p>another unrelated paragraph about sports games</p>'
            b'</article>')
    provider = featurize.HashedProvider(dim, 0)
    examples = {}
    records = []
    for i in range(n_copies):
        page_id = f"copy{i:03d}"
        graph = dom.preprocess_page(
            dom.PageRecord(page_id, f"s{i % 2}", "u", html))
        emb = featurize.featurize_graph(graph, provider)
        examples[page_id] = gnn.graph_tensors(graph, emb)
        records.append((page_id, f"s{i % 2}"))
    return examples, records


def test_train_zero_epochs_returns_initialization():
    examples, records = _verbatim_page_examples(6)
    splits = training.split_dataset(records,
                                    training.SplitSpec("by_page", seed=0))
    config = training.TrainConfig(epochs=0, seed=0, hidden=(8, 4))
    result = training.train(examples, splits, config)
    fresh = training.init_model(config, 47, 24)
    for name, arr in fresh.arrays.items():
        assert np.array_equal(result.params.arrays[name], arr)


def test_train_overfits_identical_pages():
    # corpus of identical pages containing the caption verbatim: train
    # loss must fall below 0.05 within 50 epochs
    examples, records = _verbatim_page_examples(10)
    splits = {"train": [p for p, _ in records], "valid": [], "test": []}
    config = training.TrainConfig(epochs=50, lr=3e-2, patience=0, seed=0,
                                  hidden=(16, 8))
    result = training.train(examples, splits, config)
    train_losses = [m["mean_loss"] for m in result.metrics
                    if m["split"] == "train"]
    assert min(train_losses) < 0.05


def test_train_deterministic_loss_curves():
    examples, records = _verbatim_page_examples(8)
    splits = training.split_dataset(records,
                                    training.SplitSpec("by_page", seed=1))
    config = training.TrainConfig(epochs=5, seed=3, hidden=(8, 4))
    a = training.train(examples, splits, config)
    b = training.train(examples, splits, config)
    assert a.metrics == b.metrics
    for name in a.params.arrays:
        assert np.array_equal(a.params.arrays[name], b.params.arrays[name])


def test_train_monotone_overfit_sanity(mini_corpus):
    page_ids = list(mini_corpus["examples"])[:20]
    examples = {p: mini_corpus["examples"][p] for p in page_ids}
    splits = {"train": page_ids, "valid": [], "test": []}
    config = training.TrainConfig(epochs=100, lr=3e-3, patience=0, seed=0,
                                  hidden=(32, 8))
    result = training.train(examples, splits, config)
    train_losses = [m["mean_loss"] for m in result.metrics
                    if m["split"] == "train"]
    assert train_losses[99] < train_losses[0]


def test_train_early_stopping_triggers():
    # lr=0 means validation never improves after the first epoch, so
    # training must stop after `patience` flat epochs
    examples, records = _verbatim_page_examples(6)
    splits = training.split_dataset(records,
                                    training.SplitSpec("by_page", seed=0))
    config = training.TrainConfig(epochs=30, lr=0.0, patience=2, seed=0,
                                  hidden=(8, 4))
    result = training.train(examples, splits, config)
    epochs_run = max(m["epoch"] for m in result.metrics)
    assert epochs_run == 3  # epoch 1 sets the best, 2 flat epochs follow
    assert result.best_epoch == 1


def test_train_accumulation_runs():
    examples, records = _verbatim_page_examples(6)
    splits = {"train": [p for p, _ in records], "valid": [], "test": []}
    config = training.TrainConfig(epochs=2, seed=0, accumulate=3,
                                  hidden=(8, 4))
    result = training.train(examples, splits, config)
    assert result.params.step == 2 * 2  # 6 pages / 3 accumulated


def test_train_resume_continues(tmp_path):
    examples, records = _verbatim_page_examples(8)
    splits = training.split_dataset(records,
                                    training.SplitSpec("by_page", seed=0))
    config = training.TrainConfig(epochs=3, seed=0, hidden=(8, 4))
    first = training.train(examples, splits, config)
    path = tmp_path / "resume.ckpt"
    gnn.save_checkpoint(first.params, path)
    loaded, _ = gnn.load_checkpoint(path)
    second = training.train(examples, splits, config, params=loaded)
    assert second.params.step > 0
    assert second.best_valid_loss <= first.best_valid_loss + 0.05


# ------------------------------------------------------------- regression

def test_evaluate_regression_perfect_model():
    # single text node whose embedding equals the reference: wgcn output
    # is exactly that embedding, so the loss is 0
    vec = np.ones(24) / np.sqrt(24)
    gt = GraphTensors(
        page_id="perfect", site_id="s", n_nodes=3,
        tag_groups=np.zeros(3, dtype=np.intp), image_id=1,
        text_ids=np.array([2], dtype=np.intp),
        text_embeddings=vec[None, :], reference=vec.copy(),
        edges=[(0, 1), (0, 2)],
        features=np.random.default_rng(0).normal(size=(3, 47)),
    )
    params = gnn.init_params("wgcn", 47, 24, seed=0, hidden=(8,))
    mean, included, skipped = training.evaluate_regression(params, [gt])
    assert included == 1 and skipped == 0
    assert abs(mean) < 1e-12


def test_evaluate_regression_single_page_mean(mini_corpus):
    gt = next(iter(mini_corpus["examples"].values()))
    params = gnn.init_params("wgcn", gt.features.shape[1], 128, seed=0,
                             hidden=(8, 4))
    mean, included, _ = training.evaluate_regression(params, [gt])
    assert included == 1
    assert abs(mean - gnn.page_loss(params, gt)) < 1e-15


def test_evaluate_regression_skips_textless():
    gt_empty = GraphTensors(
        page_id="empty", site_id="s", n_nodes=2,
        tag_groups=np.zeros(2, dtype=np.intp), image_id=1,
        text_ids=np.array([], dtype=np.intp),
        text_embeddings=np.zeros((0, 24)),
        reference=np.ones(24) / np.sqrt(24),
        edges=[(0, 1)],
        features=np.zeros((2, 47)),
    )
    params = gnn.init_params("wgcn", 47, 24, seed=0, hidden=(8,))
    mean, included, skipped = training.evaluate_regression(params, [gt_empty])
    assert included == 0 and skipped == 1


def test_metrics_round_trip(tmp_path):
    metrics = [{"epoch": 1, "split": "train", "mean_loss": 0.5},
               {"epoch": 1, "split": "valid", "mean_loss": 0.6}]
    path = tmp_path / "metrics.jsonl"
    training.write_metrics(metrics, path)
    assert training.read_metrics(path) == metrics
