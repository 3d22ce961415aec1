"""Patch descriptors.

The convolutional network is treated as a black box behind the backend
contract: a backend has a ``name``, a descriptor dimension ``dim``, an RGB
``mean`` and a deterministic ``describe``. Two backends ship here: a seeded
random-projection stub for desk-scale work, and a lookup into a store of
precomputed activations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from duca.container import digest_of, read_container, write_container
from duca.errors import IntegrityError, InvalidInputError, MissingFeatureError
from duca.imaging import DEFAULT_WINDOW

MAGIC = b"DUCF"
STUB_GRID = 16


def make_key(image_id: str, tag: str, index: int) -> str:
    return f"{image_id}/{tag}/{index}"


def split_key(key: str) -> tuple[str, str, int]:
    image_id, tag, index = key.rsplit("/", 2)
    return image_id, tag, int(index)


class StubBackend:
    """Random-projection stand-in for the CNN.

    A patch is block-averaged to 16x16x3, centred per channel, flattened,
    projected by a seeded ``dim x 768`` Gaussian matrix and squashed by tanh.
    """

    def __init__(self, dim: int = 512, seed: int = 0, patch_side: int = DEFAULT_WINDOW,
                 gain: float = 4.0):
        if dim < 1:
            raise InvalidInputError("stub dimension must be >= 1")
        if patch_side % STUB_GRID:
            raise InvalidInputError(f"stub patch side must be a multiple of {STUB_GRID}")
        self.dim = dim
        self.seed = seed
        self.patch_side = patch_side
        self.gain = gain
        self.name = f"stub-d{dim}-s{seed}"
        self.mean = (0.0, 0.0, 0.0)
        n_in = STUB_GRID * STUB_GRID * 3
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((dim, n_in)) * (gain / np.sqrt(n_in))

    def describe_batch(self, patches: np.ndarray) -> np.ndarray:
        patches = np.asarray(patches, dtype=np.float64)
        if patches.ndim == 3:
            patches = patches[None]
        s = self.patch_side
        if patches.ndim != 4 or patches.shape[1:] != (s, s, 3):
            raise InvalidInputError(
                f"stub backend expects {s}x{s}x3 patches, got {patches.shape[1:]}"
            )
        b = s // STUB_GRID
        n = patches.shape[0]
        small = patches.reshape(n, STUB_GRID, b, STUB_GRID, b, 3).mean(axis=(2, 4))
        # shifting by one block first keeps constant patches exactly zero
        small = small - small[:, :1, :1]
        small = small - small.mean(axis=(1, 2), keepdims=True)
        flat = small.reshape(n, -1)
        return np.tanh(flat @ self.projection.T)

    def describe(self, patch: np.ndarray) -> np.ndarray:
        return self.describe_batch(patch)[0]

    def config(self) -> dict:
        return {"kind": "stub", "dim": self.dim, "seed": self.seed,
                "patch_side": self.patch_side, "gain": self.gain}


def stub_describe(patch: np.ndarray, seed: int = 0, dim: int = 512) -> np.ndarray:
    return StubBackend(dim=dim, seed=seed, patch_side=np.asarray(patch).shape[0]).describe(patch)


@dataclass
class FeatureStore:
    """Descriptors keyed by ``imageId/variantTag/patchIndex`` (or any string
    key, for pooled image vectors)."""

    matrix: np.ndarray
    manifest: dict[str, int]
    backend: str = "unknown"
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float32)
        if self.matrix.ndim != 2:
            raise IntegrityError("feature matrix must be 2-D")
        self.validate()

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def __contains__(self, key) -> bool:
        return key in self.manifest

    def validate(self) -> None:
        count = self.matrix.shape[0]
        if len(self.manifest) != count:
            raise IntegrityError(
                f"manifest has {len(self.manifest)} entries but matrix has {count} rows"
            )
        rows = list(self.manifest.values())
        bad = [r for r in rows if not (0 <= r < count)]
        if bad:
            raise IntegrityError(f"manifest references row {bad[0]} outside [0, {count})")
        if len(set(rows)) != len(rows):
            raise IntegrityError("manifest maps two keys to the same row")
        if not np.all(np.isfinite(self.matrix)):
            raise IntegrityError("feature matrix contains non-finite values")

    def get(self, key: str) -> np.ndarray:
        try:
            return self.matrix[self.manifest[key]]
        except KeyError:
            raise MissingFeatureError(f"no descriptor stored for key {key!r}") from None

    def keys(self) -> list[str]:
        """Keys in row order."""
        return sorted(self.manifest, key=self.manifest.__getitem__)

    def rows_for(self, keys) -> np.ndarray:
        missing = [k for k in keys if k not in self.manifest]
        if missing:
            raise MissingFeatureError(f"no descriptor stored for key {missing[0]!r}")
        return self.matrix[[self.manifest[k] for k in keys]]

    def group_by_image(self) -> dict[tuple[str, str], list[str]]:
        """``(image_id, tag) -> keys`` ordered by patch index."""
        groups: dict[tuple[str, str], list[tuple[int, str]]] = {}
        for key in self.manifest:
            image_id, tag, index = split_key(key)
            groups.setdefault((image_id, tag), []).append((index, key))
        return {g: [k for _, k in sorted(v)] for g, v in sorted(groups.items())}

    def extend(self, keys: list[str], rows: np.ndarray) -> "FeatureStore":
        rows = np.asarray(rows, dtype=np.float32).reshape(len(keys), -1)
        if len(self) and rows.size and rows.shape[1] != self.dim:
            raise InvalidInputError(f"dimension {rows.shape[1]} != store dimension {self.dim}")
        clash = [k for k in keys if k in self.manifest]
        if clash:
            raise InvalidInputError(f"key {clash[0]!r} already stored")
        manifest = dict(self.manifest)
        base = len(self)
        manifest.update({k: base + i for i, k in enumerate(keys)})
        matrix = rows if not len(self) else np.vstack([self.matrix, rows])
        return FeatureStore(matrix, manifest, self.backend, self.mean, dict(self.meta))

    def digest(self) -> str:
        return digest_of(self.matrix, self.manifest, self.backend)


class StoreBackend:
    """Serves precomputed activations; ``describe`` is a keyed lookup."""

    def __init__(self, store: FeatureStore):
        self.store = store
        self.name = store.backend
        self.dim = store.dim
        self.mean = tuple(store.mean)

    def describe(self, patch=None, key: str | None = None) -> np.ndarray:
        if key is None:
            raise MissingFeatureError("store backend needs an (image, variant, patch) key")
        return self.store.get(key)

    def describe_keys(self, keys) -> np.ndarray:
        return self.store.rows_for(keys)

    def config(self) -> dict:
        return {"kind": "store", "backend": self.name, "digest": self.store.digest()}


def describe(backend, patch=None, key: str | None = None) -> np.ndarray:
    if isinstance(backend, StoreBackend):
        return backend.describe(key=key)
    return backend.describe(patch)


def save_store(store: FeatureStore, path) -> None:
    meta = dict(store.meta)
    meta.update(manifest=store.manifest, backend=store.backend, mean=list(store.mean))
    write_container(path, MAGIC, store.matrix, meta)


def load_store(path) -> FeatureStore:
    matrix, meta = read_container(path, MAGIC)
    try:
        manifest = {str(k): int(v) for k, v in meta.pop("manifest").items()}
    except (KeyError, AttributeError, TypeError, ValueError) as exc:
        raise IntegrityError(f"{path}: feature store manifest missing or malformed") from exc
    backend = meta.pop("backend", "unknown")
    mean = tuple(float(v) for v in meta.pop("mean", (0.0, 0.0, 0.0)))
    return FeatureStore(matrix, manifest, backend, mean, meta)
