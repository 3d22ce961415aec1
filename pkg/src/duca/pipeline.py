"""Image-level assembly: pooling patch codes, one-vs-one classification and
per-patch contribution scores."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from duca.container import digest_of, read_container, write_container
from duca.errors import ConvergenceError, DucaError, IntegrityError, InvalidInputError
from duca.svmcore import DEFAULT_MAX_EPOCHS, DEFAULT_TOL, train_many

MAGIC = b"DUCM"
POOLING_MODES = ("max", "mean")


def pool(codes, mode: str = "max", normalize: bool = True) -> np.ndarray:
    """Elementwise max or mean over the patch codes (rows), then optional
    l2 normalisation."""
    if mode not in POOLING_MODES:
        raise InvalidInputError(f"unknown pooling mode {mode!r}")
    if isinstance(codes, (list, tuple)):
        if not codes:
            raise InvalidInputError("cannot pool an empty list of codes")
        if len({np.shape(c) for c in codes}) != 1:
            raise InvalidInputError("codes have ragged lengths")
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise InvalidInputError("cannot pool an empty list of codes")
    v = codes.max(axis=0) if mode == "max" else codes.mean(axis=0)
    if normalize:
        v = l2_normalize(v)
    return v


def l2_normalize(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


@dataclass
class OvOModel:
    """One binary machine per unordered class pair; for pair ``(i, j)`` with
    ``i < j`` the first class is the positive side."""

    classes: list[str]
    pairs: list[tuple[int, int]]
    weights: np.ndarray  # (n_pairs, dim)
    biases: np.ndarray
    C: float = 1.0
    pooling: str = "max"
    normalize: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.atleast_2d(np.asarray(self.weights, dtype=np.float64))
        self.biases = np.asarray(self.biases, dtype=np.float64).reshape(-1)
        self.pairs = [tuple(int(v) for v in p) for p in self.pairs]
        n = len(self.classes)
        expected = list(combinations(range(n), 2))
        if sorted(self.pairs) != expected:
            raise IntegrityError("model must hold exactly one machine per class pair")
        if self.weights.shape[0] != len(self.pairs) or self.biases.size != len(self.pairs):
            raise IntegrityError("machine count does not match class pairs")

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def decisions(self, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        if V.shape[1] != self.dim:
            raise InvalidInputError(f"vector dimension {V.shape[1]} != model dimension {self.dim}")
        return V @ self.weights.T + self.biases

    def digest(self) -> str:
        return digest_of(self.weights.astype(np.float32), self.biases.astype(np.float32),
                         self.classes, self.pairs)


def train_classifier(vectors, labels, C: float = 1.0, tol: float = DEFAULT_TOL,
                     max_epochs: int = DEFAULT_MAX_EPOCHS, seed: int = 0,
                     pooling: str = "max", normalize: bool = True) -> OvOModel:
    X = np.asarray(vectors, dtype=np.float64)
    labels = [str(l) for l in labels]
    if X.ndim != 2 or X.shape[0] != len(labels):
        raise InvalidInputError("need one label per image vector")
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise InvalidInputError(f"need at least two classes, got {classes}")
    lab = np.array([classes.index(l) for l in labels])
    pairs = list(combinations(range(len(classes)), 2))
    weights = np.zeros((len(pairs), X.shape[1]))
    biases = np.zeros(len(pairs))
    for k, (i, j) in enumerate(pairs):
        mask = (lab == i) | (lab == j)
        y = np.where(lab[mask] == i, 1.0, -1.0)
        try:
            W, b, _ = train_many(X[mask], y, C=C, tol=tol, max_epochs=max_epochs, seed=seed)
        except ConvergenceError as exc:
            raise ConvergenceError(f"pair ({classes[i]}, {classes[j]}): {exc}",
                                   residual=exc.residual, iterations=exc.iterations,
                                   context={"pair": (classes[i], classes[j])}) from exc
        except DucaError as exc:
            raise type(exc)(f"pair ({classes[i]}, {classes[j]}): {exc}") from exc
        weights[k], biases[k] = W[:, 0], b[0]
    return OvOModel(classes, pairs, weights, biases, C, pooling, normalize)


@dataclass(frozen=True)
class Prediction:
    label: str
    votes: np.ndarray
    scores: np.ndarray  # signed margin sums per class


def tally(model: OvOModel, V):
    """Vote counts and signed margin sums, both (N, L)."""
    d = model.decisions(V)
    n, L = d.shape[0], len(model.classes)
    votes = np.zeros((n, L), dtype=np.int64)
    margins = np.zeros((n, L))
    for k, (i, j) in enumerate(model.pairs):
        win_i = d[:, k] > 0
        votes[:, i] += win_i
        votes[:, j] += ~win_i
        margins[:, i] += d[:, k]
        margins[:, j] -= d[:, k]
    return votes, margins


def resolve(votes: np.ndarray, margins: np.ndarray) -> np.ndarray:
    """Most votes, then largest margin sum among the tied classes, then the
    lowest class index."""
    out = np.empty(votes.shape[0], dtype=np.intp)
    for r in range(votes.shape[0]):
        tied = np.flatnonzero(votes[r] == votes[r].max())
        if tied.size > 1:
            best = margins[r, tied].max()
            tied = tied[margins[r, tied] == best]
        out[r] = tied[0]
    return out


def predict_batch(model: OvOModel, V):
    votes, margins = tally(model, V)
    idx = resolve(votes, margins)
    return [model.classes[i] for i in idx], votes, margins


def predict(model: OvOModel, v) -> Prediction:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise InvalidInputError("predict takes one image vector; use predict_batch")
    labels, votes, margins = predict_batch(model, v[None])
    return Prediction(labels[0], votes[0], margins[0])


def target_direction(model: OvOModel, target_label: str) -> np.ndarray:
    """Sum of the weight vectors of every machine involving the target,
    each signed toward the target."""
    if target_label not in model.classes:
        raise InvalidInputError(f"unknown class {target_label!r}")
    t = model.classes.index(target_label)
    w = np.zeros(model.dim)
    for k, (i, j) in enumerate(model.pairs):
        if i == t:
            w += model.weights[k]
        elif j == t:
            w -= model.weights[k]
    return w


def patch_contributions(model: OvOModel, codes, target_label: str, pooling: str | None = None,
                        raw: bool = False) -> np.ndarray:
    """Score each patch by the target-direction weight of the pooled
    dimensions it supplies the maximum for (ties split equally), min-max
    scaled to [0, 1] unless ``raw``."""
    pooling = pooling or model.pooling
    if pooling != "max":
        raise InvalidInputError(f"patch contributions need max pooling, model uses {pooling!r}")
    codes = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if codes.shape[1] != model.dim:
        raise InvalidInputError("code length does not match the model")
    w = target_direction(model, target_label)
    attains = codes == codes.max(axis=0, keepdims=True)
    share = attains / attains.sum(axis=0, keepdims=True)
    scores = (share * codes) @ w
    if raw:
        return scores
    lo, hi = scores.min(), scores.max()
    if hi - lo <= 0:
        return np.ones_like(scores)
    return (scores - lo) / (hi - lo)


def save_model(model: OvOModel, path) -> None:
    matrix = np.hstack([model.weights, model.biases[:, None]])
    meta = dict(model.meta)
    meta.update(classes=model.classes, pairs=[list(p) for p in model.pairs], C=model.C,
                pooling=model.pooling, normalize=model.normalize)
    write_container(path, MAGIC, matrix, meta)


def load_model(path) -> OvOModel:
    matrix, meta = read_container(path, MAGIC)
    try:
        classes, pairs = meta.pop("classes"), meta.pop("pairs")
    except KeyError as exc:
        raise IntegrityError(f"{path}: model metadata lacks {exc}") from None
    C = float(meta.pop("C", 1.0))
    pooling = meta.pop("pooling", "max")
    normalize = bool(meta.pop("normalize", True))
    return OvOModel(classes, pairs, matrix[:, :-1], matrix[:, -1], C, pooling, normalize, meta)
