import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from duca.codebook import (
    Codebook,
    CodebookBank,
    build_random_bank,
    build_supervised,
    build_supervised_from_descriptors,
    build_unsupervised_kmeans,
    build_unsupervised_random,
    kmeans,
    load_bank,
    load_codebook,
    max_pool_descriptors,
    sample_rows,
    save_bank,
    save_codebook,
)
from duca.config import PipelineConfig
from duca.container import write_container
from duca.errors import FormatError, IntegrityError, InvalidInputError
from duca.features import StubBackend


def test_max_pool_example():
    book = build_supervised_from_descriptors([("chair", [[1, -2], [0, 5]])])
    np.testing.assert_array_equal(book.atoms, [[1, 5]])
    assert book.labels == ["chair"]
    np.testing.assert_array_equal(max_pool_descriptors([[1, -2], [0, 5]]), [1, 5])
    with pytest.raises(InvalidInputError):
        max_pool_descriptors(np.zeros((0, 2)))


def test_supervised_atom_count_matches_categories(rng):
    cats = [(f"object-{k}", rng.standard_normal((3, 6))) for k in range(1325)]
    book = build_supervised_from_descriptors(cats)
    assert book.size == 1325


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_supervised_atoms_dominate(n_cats, n_patches, seed):
    r = np.random.default_rng(seed)
    cats = [(f"c{k}", r.standard_normal((n_patches, 4))) for k in range(n_cats)]
    book = build_supervised_from_descriptors(cats)
    for atom, (_, desc) in zip(book.atoms, cats):
        assert np.all(atom >= desc.astype(np.float32) - 1e-7)


def test_supervised_singleton_patch_equals_descriptor(rng):
    backend = StubBackend(dim=16)
    img = rng.random((224, 224, 3))
    book = build_supervised([("lamp", [img])], backend, rescale=224)
    np.testing.assert_allclose(book.atoms[0], backend.describe(img), atol=1e-6)


def test_supervised_errors(rng):
    backend = StubBackend(dim=8)
    with pytest.raises(InvalidInputError):
        build_supervised([("empty", [])], backend)
    with pytest.warns(UserWarning), pytest.raises(InvalidInputError):
        build_supervised([("tiny", [rng.random((100, 100, 3))])], backend, rescale=None)


def test_supervised_skips_small_image_with_warning(rng):
    backend = StubBackend(dim=8)
    imgs = [rng.random((100, 100, 3)), rng.random((224, 230, 3))]
    with pytest.warns(UserWarning, match="skipped"):
        book = build_supervised([("door", imgs)], backend, rescale=None)
    assert book.size == 1


def test_random_exhaustive_sample_is_permutation(rng):
    pool = rng.standard_normal((3000, 8))
    book = build_unsupervised_random(pool, 3000, seed=5)
    rows = np.array(book.source["rows"])
    assert sorted(rows) == list(range(3000))
    np.testing.assert_array_equal(book.atoms, pool[rows].astype(np.float32))


def test_random_determinism_and_no_duplicates(rng):
    pool = rng.standard_normal((500, 8))
    a = build_random_bank(pool, [100, 100, 100], seed=3)
    b = build_random_bank(pool, [100, 100, 100], seed=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.atoms, y.atoms)
    rows = np.concatenate([bk.source["rows"] for bk in a])
    assert len(set(rows)) == 300


def test_random_skips_zero_rows():
    pool = np.zeros((10, 3))
    pool[::2] = 1.0 + np.arange(5)[:, None]
    (rows,) = sample_rows(pool, [5], seed=0)
    assert sorted(rows) == [0, 2, 4, 6, 8]
    with pytest.raises(InvalidInputError):
        sample_rows(pool, [6], seed=0)


def test_default_config_three_random_books_of_3000():
    bank = PipelineConfig().bank
    assert [e.size for e in bank if e.kind == "random"] == [3000, 3000, 3000]


def test_kmeans_fixed_point(rng):
    pts = rng.standard_normal((6, 3)) * 10
    res = kmeans(pts, 6, seed=0)
    got = res.centers[np.lexsort(res.centers.T)]
    want = pts[np.lexsort(pts.T)]
    np.testing.assert_allclose(got, want, atol=1e-9)


def test_kmeans_two_blobs_within_standard_error(rng):
    a = rng.normal([5, 5], 1.0, size=(400, 2))
    b = rng.normal([-5, -5], 1.0, size=(400, 2))
    res = kmeans(np.vstack([a, b]), 2, seed=1)
    centers = res.centers[np.argsort(res.centers[:, 0])]
    se = 1.0 / np.sqrt(400)
    # oracle: the sample means of the generating blobs
    assert np.all(np.abs(centers[0] - b.mean(axis=0)) < 3 * se)
    assert np.all(np.abs(centers[1] - a.mean(axis=0)) < 3 * se)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 8))
def test_kmeans_objective_monotone_and_terminates(seed, k):
    x = np.random.default_rng(seed).standard_normal((40, 3))
    res = kmeans(x, k, seed=seed, max_iters=50)
    obj = np.array(res.objective)
    assert np.all(np.diff(obj) <= 1e-9 * (1 + obj[:-1]))
    assert res.iterations <= 50


def test_kmeans_deterministic_and_reseeds_empty_clusters():
    x = np.vstack([np.zeros((20, 2)), np.ones((1, 2)) * 100, np.ones((1, 2)) * 101])
    a = kmeans(x, 3, seed=4)
    b = kmeans(x, 3, seed=4)
    np.testing.assert_array_equal(a.centers, b.centers)
    assert len(np.unique(a.labels)) == 3


def test_kmeans_book_rejects_large_k(rng):
    with pytest.raises(InvalidInputError):
        build_unsupervised_kmeans(rng.standard_normal((5, 2)), 6)


def test_codebook_round_trip(tmp_path, rng):
    for book in (Codebook(rng.standard_normal((4, 3)), "random", seed=2),
                 Codebook(rng.standard_normal((2, 3)), "supervised", labels=["a", "b"])):
        save_codebook(book, tmp_path / "b.ducb")
        back = load_codebook(tmp_path / "b.ducb")
        np.testing.assert_array_equal(back.atoms, book.atoms)
        assert back.labels == book.labels and back.provenance == book.provenance


def test_codebook_load_errors(tmp_path, rng):
    write_container(tmp_path / "f.ducf", b"DUCF", np.ones((2, 2)), {"provenance": "random"})
    with pytest.raises(FormatError):
        load_codebook(tmp_path / "f.ducf")
    write_container(tmp_path / "s.ducb", b"DUCB", np.ones((2, 2)), {"provenance": "supervised"})
    with pytest.raises(IntegrityError):
        load_codebook(tmp_path / "s.ducb")
    book = Codebook(rng.standard_normal((2, 2)), "random")
    write_container(tmp_path / "d.ducb", b"DUCB", book.atoms + 1,
                    {"provenance": "random", "digest": book.digest()})
    with pytest.raises(IntegrityError):
        load_codebook(tmp_path / "d.ducb")


def test_zero_atom_rejected():
    with pytest.raises(IntegrityError):
        Codebook(np.array([[0.0, 0.0], [1.0, 0.0]]), "random")


def test_bank_round_trip_and_offsets(tmp_path, rng):
    books = build_random_bank(rng.standard_normal((50, 4)), [10, 5, 7], seed=0)
    bank = CodebookBank(books)
    assert bank.total == 22 and bank.offsets() == [0, 10, 15, 22]
    index = save_bank(bank, tmp_path / "bank", {"note": 1})
    assert json.loads(index.read_text())["note"] == 1
    back = load_bank(tmp_path / "bank")
    assert back.digest() == bank.digest()
    with pytest.raises(InvalidInputError):
        CodebookBank([books[0], Codebook(np.ones((1, 3)), "random")])
