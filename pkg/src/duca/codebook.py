"""Codebooks of scene representative patches.

A codebook stores its atoms as rows of an (m, D) float32 matrix; ``matrix``
gives the (D, m) column view used when encoding. Supervised books carry one
label per atom.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from duca.container import atomic_write_text, digest_of, read_container, write_container
from duca.errors import FormatError, IntegrityError, InvalidInputError
from duca.imaging import DEFAULT_STRIDE, DEFAULT_WINDOW, extract_patches

MAGIC = b"DUCB"
PROVENANCES = ("supervised", "random", "kmeans")
SUPERVISED_RESCALE = 256


@dataclass
class Codebook:
    atoms: np.ndarray
    provenance: str
    labels: list[str] | None = None
    seed: int | None = None
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        self.atoms = np.ascontiguousarray(self.atoms, dtype=np.float32)
        if self.atoms.ndim != 2 or self.atoms.shape[0] < 1:
            raise IntegrityError(f"codebook needs at least one atom, got shape {self.atoms.shape}")
        if self.provenance not in PROVENANCES:
            raise IntegrityError(f"unknown provenance {self.provenance!r}")
        if not np.all(np.isfinite(self.atoms)):
            raise IntegrityError("codebook atoms contain non-finite values")
        zero = np.flatnonzero(~np.any(self.atoms != 0, axis=1))
        if zero.size:
            raise IntegrityError(f"atom {zero[0]} is the all-zero vector")
        if self.provenance == "supervised":
            if self.labels is None:
                raise IntegrityError("supervised codebook without labels")
            if len(self.labels) != self.size or len(set(self.labels)) != len(self.labels):
                raise IntegrityError("supervised labels must be unique, one per atom")
        elif self.labels is not None and len(self.labels) != self.size:
            raise IntegrityError("label count does not match atom count")
        self._normalized = None

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.atoms.T

    def normalized(self) -> np.ndarray:
        """Unit-norm atoms as float64 rows."""
        if self._normalized is None:
            a = self.atoms.astype(np.float64)
            self._normalized = a / np.linalg.norm(a, axis=1, keepdims=True)
        return self._normalized

    def digest(self) -> str:
        return digest_of(self.atoms, self.labels, self.provenance, self.seed)


@dataclass
class CodebookBank:
    books: list[Codebook]

    def __post_init__(self):
        if not self.books:
            raise InvalidInputError("a bank needs at least one codebook")
        dims = {b.dim for b in self.books}
        if len(dims) != 1:
            raise InvalidInputError(f"codebooks disagree on descriptor dimension: {sorted(dims)}")

    @property
    def sizes(self) -> list[int]:
        return [b.size for b in self.books]

    @property
    def total(self) -> int:
        return sum(self.sizes)

    @property
    def dim(self) -> int:
        return self.books[0].dim

    def offsets(self) -> list[int]:
        return list(np.cumsum([0] + self.sizes))

    def digest(self) -> str:
        return digest_of([b.digest() for b in self.books])


def max_pool_descriptors(descriptors) -> np.ndarray:
    d = np.asarray(descriptors)
    if d.ndim != 2 or d.shape[0] == 0:
        raise InvalidInputError("max pooling needs at least one descriptor")
    return d.max(axis=0)


def build_supervised_from_descriptors(categories) -> Codebook:
    """``categories`` is a sequence of ``(name, descriptors)``; each atom is
    the elementwise max over that category's patch descriptors."""
    names, atoms = [], []
    for name, desc in categories:
        desc = np.asarray(desc, dtype=np.float64)
        if desc.size == 0:
            raise InvalidInputError(f"category {name!r} has no patches")
        names.append(str(name))
        atoms.append(max_pool_descriptors(desc.reshape(-1, desc.shape[-1])))
    if not atoms:
        raise InvalidInputError("no categories given")
    return Codebook(np.stack(atoms), "supervised", labels=names,
                    source={"categories": len(names)})


def build_supervised(categories, backend, rescale: int = SUPERVISED_RESCALE,
                     window: int = DEFAULT_WINDOW, stride: int = DEFAULT_STRIDE) -> Codebook:
    """``categories`` is a sequence of ``(name, images)``."""
    pooled = []
    for name, images in categories:
        images = list(images)
        if not images:
            raise InvalidInputError(f"category {name!r} has no images")
        descs = []
        for k, img in enumerate(images):
            short = min(img.shape[:2]) if rescale is None else rescale
            if short < window:
                warnings.warn(f"category {name!r} image {k}: smaller than the "
                              f"{window}px window after rescaling, skipped")
                continue
            _, patches = extract_patches(img, rescale, window, stride)
            descs.append(backend.describe_batch(patches))
        if not descs:
            raise InvalidInputError(f"category {name!r} produced no patches")
        pooled.append((name, np.vstack(descs)))
    book = build_supervised_from_descriptors(pooled)
    book.source.update(backend=backend.name, rescale=rescale, window=window, stride=stride)
    return book


def _pool_matrix(pool) -> np.ndarray:
    matrix = getattr(pool, "matrix", pool)
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise InvalidInputError("descriptor pool must be 2-D")
    return matrix


def _usable_rows(matrix) -> np.ndarray:
    return np.flatnonzero(np.any(matrix != 0, axis=1))


def sample_rows(pool, sizes, seed: int) -> list[np.ndarray]:
    """One draw without replacement of ``sum(sizes)`` non-zero rows, split into
    consecutive groups of the given sizes."""
    matrix = _pool_matrix(pool)
    usable = _usable_rows(matrix)
    total = int(sum(sizes))
    if total > usable.size:
        raise InvalidInputError(
            f"cannot sample {total} atoms from a pool of {usable.size} usable rows"
        )
    pick = np.random.default_rng(seed).choice(usable, size=total, replace=False)
    bounds = np.cumsum([0] + list(sizes))
    return [pick[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def build_unsupervised_random(pool, size: int, seed: int = 0) -> Codebook:
    if size < 1:
        raise InvalidInputError("codebook size must be >= 1")
    (rows,) = sample_rows(pool, [size], seed)
    return Codebook(_pool_matrix(pool)[rows], "random", seed=seed,
                    source={"pool_rows": int(_pool_matrix(pool).shape[0]), "rows": rows.tolist()})


def build_random_bank(pool, sizes, seed: int = 0) -> list[Codebook]:
    """Disjoint random codebooks drawn from one pool."""
    matrix = _pool_matrix(pool)
    books = []
    for k, rows in enumerate(sample_rows(matrix, sizes, seed)):
        books.append(Codebook(matrix[rows], "random", seed=seed,
                              source={"pool_rows": int(matrix.shape[0]), "part": k,
                                      "rows": rows.tolist()}))
    return books


def _sq_dists(x, x_sq, centers):
    d = x_sq[:, None] - 2.0 * (x @ centers.T) + np.sum(centers * centers, axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans_plus_plus(x: np.ndarray, k: int, rng) -> np.ndarray:
    n = x.shape[0]
    x_sq = np.sum(x * x, axis=1)
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, x_sq, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers.append(x[idx])
        closest = np.minimum(closest, _sq_dists(x, x_sq, x[idx][None])[:, 0])
    return np.array(centers)


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    objective: list[float]
    iterations: int
    reseeded: int


def kmeans(x, k: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-4) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds. An empty cluster is re-seeded
    at the point farthest from its current centre."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or n < k:
        raise InvalidInputError(f"k-means needs 1 <= k <= {n}, got k={k}")
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(x, k, rng)
    x_sq = np.sum(x * x, axis=1)
    history, reseeded, it = [], 0, 0
    labels = np.zeros(n, dtype=np.intp)
    for it in range(1, max_iters + 1):
        dist = _sq_dists(x, x_sq, centers)
        labels = dist.argmin(axis=1)
        closest = dist[np.arange(n), labels]
        history.append(float(closest.sum()))
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            donors = counts[labels] > 1
            far = int(np.argmax(np.where(donors, closest, -1.0)))
            counts[labels[far]] -= 1
            labels[far] = j
            counts[j] = 1
            closest[far] = 0.0
            reseeded += 1
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, x)
        new = sums / counts[:, None]
        shift = float(np.sum(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if shift < tol:
            break
    dist = _sq_dists(x, x_sq, centers)
    labels = dist.argmin(axis=1)
    history.append(float(dist[np.arange(n), labels].sum()))
    return KMeansResult(centers, labels, history, it, reseeded)


def build_unsupervised_kmeans(pool, k: int, seed: int = 0, max_iters: int = 100,
                              tol: float = 1e-4) -> Codebook:
    matrix = _pool_matrix(pool)
    usable = matrix[_usable_rows(matrix)]
    result = kmeans(usable, k, seed=seed, max_iters=max_iters, tol=tol)
    return Codebook(result.centers, "kmeans", seed=seed,
                    source={"pool_rows": int(matrix.shape[0]), "iterations": result.iterations,
                            "objective": result.objective[-1]})


def save_codebook(book: Codebook, path) -> None:
    meta = {"labels": book.labels, "provenance": book.provenance, "seed": book.seed,
            "source": book.source, "digest": book.digest()}
    write_container(path, MAGIC, book.atoms, meta)


def load_codebook(path) -> Codebook:
    atoms, meta = read_container(path, MAGIC)
    if "provenance" not in meta:
        raise IntegrityError(f"{path}: codebook metadata lacks provenance")
    book = Codebook(atoms, meta["provenance"], labels=meta.get("labels"),
                    seed=meta.get("seed"), source=meta.get("source") or {})
    stored = meta.get("digest")
    if stored is not None and stored != book.digest():
        raise IntegrityError(f"{path}: codebook digest {stored} does not match contents")
    return book


def save_bank(bank: CodebookBank, directory, extra: dict | None = None) -> Path:
    """Write ``book-NN.ducb`` files plus an ordered ``bank.json`` index."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, book in enumerate(bank.books):
        name = f"book-{k:02d}-{book.provenance}.ducb"
        save_codebook(book, directory / name)
        files.append(name)
    index = directory / "bank.json"
    spec = dict(extra or {})
    spec.update(books=files, digest=bank.digest())
    atomic_write_text(index, json.dumps(spec, indent=2, sort_keys=True))
    return index


def bank_index(path) -> Path:
    path = Path(path)
    return path / "bank.json" if path.is_dir() else path


def load_bank(path) -> CodebookBank:
    index = bank_index(path)
    try:
        spec = json.loads(index.read_text())
        files = spec["books"]
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"{index}: not a codebook bank index ({exc})") from exc
    bank = CodebookBank([load_codebook(index.parent / f) for f in files])
    if spec.get("digest") not in (None, bank.digest()):
        raise IntegrityError(f"{index}: bank digest does not match its codebooks")
    return bank
