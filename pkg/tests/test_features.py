import numpy as np
import pytest

from duca.container import decode_container, encode_container, read_container, write_container
from duca.errors import FormatError, IntegrityError, InvalidInputError, MissingFeatureError
from duca.features import (
    FeatureStore,
    StoreBackend,
    StubBackend,
    describe,
    load_store,
    make_key,
    save_store,
    split_key,
    stub_describe,
)


@pytest.fixture(scope="module")
def backend():
    return StubBackend()


def test_stub_shape_and_default_dim(backend, rng):
    d = describe(backend, rng.random((224, 224, 3)))
    assert d.shape == (512,)
    assert np.all(np.abs(d) < 1)


def test_stub_deterministic(backend, rng):
    p = rng.random((224, 224, 3))
    np.testing.assert_array_equal(backend.describe(p), backend.describe(p))
    np.testing.assert_array_equal(stub_describe(p, seed=3, dim=64), stub_describe(p, seed=3, dim=64))


def test_stub_seed_changes_projection(rng):
    p = rng.random((224, 224, 3))
    assert not np.array_equal(stub_describe(p, seed=0, dim=32), stub_describe(p, seed=1, dim=32))


def test_constant_patch_is_zero(backend):
    patch = np.empty((224, 224, 3))
    patch[...] = [0.2, 0.7, 0.4]
    np.testing.assert_array_equal(backend.describe(patch), 0.0)


def test_one_block_change_moves_descriptor(backend, rng):
    a = rng.random((100, 224, 224, 3))
    b = a.copy()
    for k in range(100):
        i, j = rng.integers(0, 16, size=2)
        b[k, 14 * i:14 * i + 14, 14 * j:14 * j + 14] = rng.random((14, 14, 3))
    da, db = backend.describe_batch(a), backend.describe_batch(b)
    assert np.all(np.any(da != db, axis=1))


def test_stub_locality(backend, rng):
    img = rng.random((300, 300, 3))
    patch = img[40:264, 50:274].copy()
    other = rng.random((300, 300, 3))
    other[40:264, 50:274] = patch
    np.testing.assert_array_equal(backend.describe(img[40:264, 50:274]),
                                  backend.describe(other[40:264, 50:274]))


def test_stub_batch_matches_single(backend, rng):
    ps = rng.random((3, 224, 224, 3))
    batch = backend.describe_batch(ps)
    for k in range(3):
        np.testing.assert_allclose(batch[k], backend.describe(ps[k]), atol=1e-12)


def test_stub_wrong_shape(backend):
    with pytest.raises(InvalidInputError):
        backend.describe(np.zeros((100, 100, 3)))


def test_keys_round_trip():
    key = make_key("scene/a", "flip-rot+30", 17)
    assert key == "scene/a/flip-rot+30/17"
    assert split_key(key) == ("scene/a", "flip-rot+30", 17)


def _store(rng, n=5, d=4):
    keys = [make_key("img", "original", k) for k in range(n)]
    return FeatureStore(rng.standard_normal((n, d)).astype(np.float32),
                        {k: i for i, k in enumerate(keys)}, "stub-d4-s0", (0.1, 0.2, 0.3),
                        {"note": "x"})


def test_store_round_trip(tmp_path, rng):
    store = _store(rng)
    save_store(store, tmp_path / "s.ducf")
    back = load_store(tmp_path / "s.ducf")
    assert back.manifest == store.manifest
    np.testing.assert_array_equal(back.matrix, store.matrix)
    assert back.backend == store.backend and back.mean == store.mean
    assert back.meta["note"] == "x"
    assert back.digest() == store.digest()


def test_store_backend_lookup(rng):
    store = _store(rng)
    sb = StoreBackend(store)
    key = make_key("img", "original", 2)
    np.testing.assert_array_equal(describe(sb, key=key), store.matrix[2])
    with pytest.raises(MissingFeatureError):
        describe(sb, key=make_key("img", "original", 99))
    with pytest.raises(KeyError):
        store.get("nope/original/0")


def test_wrong_magic_names_expected(tmp_path, rng):
    write_container(tmp_path / "b.ducb", b"DUCB", np.ones((2, 2)), {})
    with pytest.raises(FormatError, match="DUCF"):
        load_store(tmp_path / "b.ducb")


def test_row_out_of_range(rng):
    with pytest.raises(IntegrityError):
        FeatureStore(np.zeros((2, 3)), {"a/o/0": 0, "a/o/1": 2})
    with pytest.raises(IntegrityError):
        FeatureStore(np.zeros((2, 3)), {"a/o/0": 0})
    with pytest.raises(IntegrityError):
        FeatureStore(np.zeros((2, 3)), {"a/o/0": 1, "a/o/1": 1})


def test_store_extend(rng):
    store = _store(rng, n=2)
    more = store.extend(["img2/original/0"], np.ones((1, 4)))
    assert len(more) == 3
    np.testing.assert_array_equal(more.get("img2/original/0"), 1.0)
    with pytest.raises(InvalidInputError):
        more.extend(["img2/original/0"], np.ones((1, 4)))
    assert list(more.group_by_image()) == [("img", "original"), ("img2", "original")]


def test_container_error_classes():
    blob = encode_container(b"DUCF", np.arange(6, dtype=np.float32).reshape(2, 3), {"k": 1})
    m, meta = decode_container(blob, b"DUCF")
    assert m.shape == (2, 3) and meta == {"k": 1}
    messages = []
    for bad in (blob[:10], blob[:30], blob[:-3], b"XXXX" + blob[4:],
                blob[:4] + (2).to_bytes(4, "little") + blob[8:]):
        with pytest.raises(FormatError) as exc:
            decode_container(bad, b"DUCF")
        messages.append(str(exc.value))
    assert len(set(messages)) == 5


def test_write_is_atomic_and_leaves_no_temp(tmp_path):
    path = tmp_path / "x.ducf"
    write_container(path, b"DUCF", np.zeros((1, 1)), {})
    write_container(path, b"DUCF", np.ones((1, 1)), {})
    assert [p.name for p in tmp_path.iterdir()] == ["x.ducf"]
    m, _ = read_container(path, b"DUCF")
    assert m[0, 0] == 1.0
