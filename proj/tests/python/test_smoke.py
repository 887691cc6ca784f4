"""End-to-end smoke tests for the Python bindings.

Everything runs on a small synthetic dataset and the `tiny` model preset so
the whole file finishes in well under a minute.
"""

import json

import numpy as np
import pytest

import vithash as vh

SMOKE_PROTOCOL = json.dumps(
    {
        "name": "smoke",
        "scheme": "per_class_disjoint",
        "train_per_class": 10,
        "query_per_class": 5,
        "map_cutoff": 20,
    }
)


@pytest.fixture(scope="module")
def dataset():
    pool = vh.synth_dataset(
        classes=4, per_class=30, image_size=16, channels=3, noise_sigma=0.05, seed=1
    )
    return vh.apply_protocol(pool, SMOKE_PROTOCOL, seed=2)


@pytest.fixture(scope="module")
def trained(dataset):
    model = vh.Model.fresh(preset="tiny", bits=16, mode="all", seed=3)
    result = vh.train(
        model,
        dataset,
        objective="greedyhash",
        lr=1e-3,
        epochs=2,
        batch_size=16,
        eval_every=2,
        seed=7,
    )
    return model, result


def test_dataset_and_protocol(dataset):
    assert len(dataset) == 120
    assert dataset.classes == 4
    assert dataset.protocol == "smoke"
    assert len(dataset.train) == 40
    assert len(dataset.query) == 20
    assert len(dataset.database) == 60
    assert dataset.map_cutoff == 20

    img = dataset.image_of(0)
    assert img.shape == (16, 16, 3)
    assert img.dtype == np.float32
    assert 0.0 <= float(img.min()) and float(img.max()) <= 1.0
    assert len(dataset.labels_of(0)) >= 1

    assert "synth" in vh.protocols()
    with pytest.raises(ValueError):
        vh.apply_protocol(dataset, "not-a-protocol", seed=0)


def test_model_shape_and_training(trained):
    model, result = trained
    assert model.bits == 16
    assert model.mode == "all"
    assert model.parameters > 0

    assert 0.0 <= result["best_map"] <= 1.0
    assert result["metrics_csv"].startswith("# config ")
    assert "epoch,split,loss,map" in result["metrics_csv"]
    assert result["map_history"] == [(2, result["best_map"])]


def test_encode_and_retrieval(trained, dataset):
    model, _ = trained
    queries = vh.encode_split(model, dataset, "query", batch_size=16)
    db = vh.encode_split(model, dataset, "database", batch_size=16)

    assert queries.bits == 16
    assert len(queries) == 20 and len(db) == 60
    codes = db.codes()
    assert codes.shape == (60, 1) and codes.dtype == np.uint64
    # 16-bit codes leave the upper 48 bits of the word clear
    assert int(codes.max()) < (1 << 16)

    result = vh.map_at_k(queries, db, cutoff=20)
    assert 0.0 <= result["map"] <= 1.0
    assert len(result["per_query_ap"]) == 20

    curve = vh.pr_curve(queries, db)
    assert len(curve["recall"]) == 21 and len(curve["precision"]) == 21
    assert curve["queries_used"] + curve["queries_skipped"] == 20

    order = vh.rank(list(db.codes()[0]), db.bits, db, topk=5)
    assert order[0] == 0  # distance zero to itself
    assert len(order) == 5

    assert vh.hamming([0b1011], [0b0010], 4) == 2


def test_code_set_round_trip(trained, dataset, tmp_path):
    model, _ = trained
    db = vh.encode_split(model, dataset, "database", batch_size=16)
    path = str(tmp_path / "db.vtsc")
    db.save(path)
    back = vh.CodeSet.load(path)
    assert back.bits == db.bits
    assert back.ids == db.ids
    assert back.labels == db.labels
    assert np.array_equal(back.codes(), db.codes())

    with pytest.raises(OSError):
        vh.CodeSet.load(str(tmp_path / "missing.vtsc"))


def test_weights_round_trip(trained, dataset, tmp_path):
    model, _ = trained
    path = str(tmp_path / "model.vtsw")
    model.save(path)

    fresh = vh.Model.fresh(preset="tiny", bits=16, mode="all", seed=999)
    fresh.load(path)
    a = vh.encode_split(model, dataset, "query", batch_size=16)
    b = vh.encode_split(fresh, dataset, "query", batch_size=16)
    assert np.array_equal(a.codes(), b.codes())

    weights = vh.load_weights(path)
    assert "embed.w_pe" in weights
    total = sum(int(np.prod(w.shape)) for w in weights.values())
    assert total == model.parameters
