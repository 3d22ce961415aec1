import numpy as np
import pytest

from duca.config import BankEntry
from duca.errors import InvalidInputError
from duca.experiment import (
    ablation_variants,
    build_bank,
    run_benchmark,
    run_experiment,
    synthetic_config,
)
from duca.synthetic import TEXTURES, object_categories, texture_dataset, texture_image


def test_texture_dataset_shape_and_determinism():
    a = texture_dataset(n_per_class=2, seed=3)
    b = texture_dataset(n_per_class=2, seed=3)
    assert [x[:2] for x in a] == [x[:2] for x in b]
    assert len(a) == 8 and {x[1] for x in a} == set(TEXTURES)
    for (_, _, ia), (_, _, ib) in zip(a, b):
        np.testing.assert_array_equal(ia, ib)
        assert ia.shape[0] == 288 and 0 <= ia.min() and ia.max() <= 1


def test_texture_kinds_differ(rng):
    h = texture_image("stripes-h", 64, 64, rng, period=16, noise=0.0)
    assert np.allclose(h[:, 0], h[:, 40])  # constant along rows
    with pytest.raises(InvalidInputError):
        texture_image("plaid", 8, 8, rng)


def test_object_categories():
    cats = object_categories(n_images=2)
    assert len(cats) == 8 and all(len(imgs) == 2 for _, imgs in cats)


def test_ablation_rows_cover_six_axes():
    rows = ablation_variants(synthetic_config())
    assert len(rows) == 13
    assert [a for a, _, _ in rows].count("codebook") == 3
    axes = {a for a, _, _ in rows}
    assert axes == {"codebook", "sampling", "codebook size", "encoding", "pooling",
                    "augmentation"}
    by = {(a, v): c for a, v, c in rows}
    assert [e.kind for e in by[("sampling", "k-means")].bank] == ["supervised", "kmeans", "kmeans"]
    assert by[("codebook size", "single 400")].bank[1].size == 400
    assert by[("augmentation", "on")].augment


def test_random_books_are_disjoint(rng):
    pool = rng.standard_normal((100, 5))
    cfg = synthetic_config(bank=[BankEntry("random", 30).__dict__, BankEntry("random", 30).__dict__])
    bank = build_bank(cfg, pool)
    rows = [set(b.source["rows"]) for b in bank.books]
    assert not rows[0] & rows[1]


def test_in_memory_run_is_deterministic():
    items = texture_dataset(n_per_class=30, seed=2)
    cfg = synthetic_config(bank=[BankEntry("random", 60).__dict__])
    a = run_experiment(items, cfg)
    b = run_experiment(items, cfg)
    assert a.report.to_json() == b.report.to_json()
    assert a.report.mean_accuracy > 0.5
    assert len(a.test_ids) == 40 and len(a.train_ids) == 80


def test_benchmark_queries_exclude_atoms(rng):
    desc = rng.standard_normal((130, 6))
    rep = run_benchmark(desc, total_atoms=60, books=3)
    assert rep["patches"] == 70
