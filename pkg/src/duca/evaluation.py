"""Split protocols and evaluation metrics."""

from __future__ import annotations

import json
import os
import platform
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from duca.errors import InvalidInputError

RULES = ("per-class-count", "percentage", "odd-even")


@dataclass(frozen=True)
class SplitProtocol:
    name: str
    rule: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.rule not in RULES:
            raise InvalidInputError(f"unknown split rule {self.rule!r}")


# Standard protocols of the benchmark datasets, plus the desk-scale fixture.
PROTOCOLS = {
    "mit67": SplitProtocol("mit67", "per-class-count", {"train": 80, "test": 20}),
    "scene15": SplitProtocol("scene15", "per-class-count", {"train": 100, "test": None}),
    "nyu": SplitProtocol("nyu", "percentage", {"train": 60, "test": 40, "contiguous": True}),
    "graz02": SplitProtocol("graz02", "odd-even", {"train": 150, "test": 150}),
    "sports8": SplitProtocol("sports8", "per-class-count", {"train": 70, "test": 60}),
    "ocis": SplitProtocol("ocis", "percentage", {"train": 66, "test": 33}),
    "synthetic": SplitProtocol("synthetic", "per-class-count", {"train": 20, "test": 10}),
}


def _field(item, name):
    return item[name] if isinstance(item, dict) else getattr(item, name)


def make_split(items, protocol: SplitProtocol):
    """Returns ``(train_ids, test_ids)``.

    ``items`` need ``id``, ``label`` and (for ordered rules) ``index``
    attributes or keys. Percentage splits take ``floor(n * test/(train+test))``
    test items per class and the remainder for training.
    """
    by_class: dict[str, list] = {}
    for item in items:
        by_class.setdefault(str(_field(item, "label")), []).append(item)
    rng = np.random.default_rng(protocol.seed)
    p = protocol.params
    train, test = [], []
    for label in sorted(by_class):
        members = by_class[label]
        n = len(members)
        if protocol.rule == "per-class-count":
            n_train = int(p["train"])
            n_test = n - n_train if p.get("test") is None else int(p["test"])
            if n_train + n_test > n or n_test < 0:
                raise InvalidInputError(
                    f"class {label!r} has {n} items, protocol {protocol.name!r} needs "
                    f"{n_train} + {n_test}"
                )
            order = [members[i] for i in rng.permutation(n)]
            train += order[:n_train]
            test += order[n_train : n_train + n_test]
        elif protocol.rule == "percentage":
            frac = Fraction(p["test"]) / (Fraction(p["train"]) + Fraction(p["test"]))
            n_test = int(np.floor(n * frac))
            n_train = n - n_test
            if n_train < 1 or n_test < 1:
                raise InvalidInputError(f"class {label!r} has too few items ({n}) to split")
            if p.get("contiguous"):
                order = sorted(members, key=lambda it: _field(it, "index"))
            else:
                order = [members[i] for i in rng.permutation(n)]
            train += order[:n_train]
            test += order[n_train:]
        else:
            order = sorted(members, key=lambda it: _field(it, "index"))
            odd, even = order[0::2], order[1::2]
            n_train, n_test = int(p["train"]), int(p["test"])
            if len(odd) < n_train or len(even) < n_test:
                raise InvalidInputError(
                    f"class {label!r} has {n} items, odd-even protocol needs "
                    f"{n_train} odd and {n_test} even"
                )
            train += odd[:n_train]
            test += even[:n_test]
    return [str(_field(i, "id")) for i in train], [str(_field(i, "id")) for i in test]


@dataclass
class EvalReport:
    classes: list[str]
    per_class_accuracy: list
    mean_accuracy: float
    overall_accuracy: float
    confusion: list[list[float]]
    counts: list[list[int]]
    cmc: list[float] | None = None
    eer: dict | None = None
    timing: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**data)


def confusion_matrix(predictions, truths, classes) -> np.ndarray:
    index = {c: k for k, c in enumerate(classes)}
    if len(predictions) != len(truths):
        raise InvalidInputError("predictions and truths differ in length")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predictions, truths):
        if p not in index or t not in index:
            raise InvalidInputError(f"unknown label {p if p not in index else t!r}")
        counts[index[t], index[p]] += 1
    return counts


def confusion_and_accuracy(predictions, truths, classes) -> EvalReport:
    """Row-normalised confusion (rows are true classes), mean per-class and
    overall accuracy."""
    classes = [str(c) for c in classes]
    predictions = [str(p) for p in predictions]
    truths = [str(t) for t in truths]
    counts = confusion_matrix(predictions, truths, classes)
    rows = counts.sum(axis=1)
    conf = np.zeros(counts.shape)
    nonempty = rows > 0
    conf[nonempty] = counts[nonempty] / rows[nonempty, None]
    per_class = [float(conf[k, k]) if nonempty[k] else None for k in range(len(classes))]
    mean_acc = float(np.mean(np.diag(conf)[nonempty])) if nonempty.any() else 0.0
    overall = float(np.trace(counts) / counts.sum()) if counts.sum() else 0.0
    return EvalReport(classes, per_class, mean_acc, overall, conf.tolist(), counts.tolist())


def true_class_rank(scores, truths) -> np.ndarray:
    """Zero-based rank of the true class; equal scores order by class index."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.intp)
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores must be finite")
    own = scores[np.arange(len(truths)), truths][:, None]
    idx = np.arange(scores.shape[1])[None, :]
    ahead = (scores > own) | ((scores == own) & (idx < truths[:, None]))
    return ahead.sum(axis=1)


def cmc_curve(scores, truths) -> np.ndarray:
    """``cmc[k-1]`` is the fraction of samples whose true class is in the top k."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    ranks = true_class_rank(scores, truths)
    L = scores.shape[1]
    return np.array([np.mean(ranks < k) for k in range(1, L + 1)])


def error_rates(scores, truths):
    """False-positive and false-negative rates at every threshold in the score
    set plus +inf, a sample being called positive when ``score >= t``."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths, dtype=bool)
    pos, neg = scores[truths], scores[~truths]
    if pos.size == 0 or neg.size == 0:
        raise InvalidInputError("equal error rate needs both positive and negative samples")
    thresholds = np.append(np.unique(scores), np.inf)
    fpr = np.array([(neg >= t).mean() for t in thresholds])
    fnr = np.array([(pos < t).mean() for t in thresholds])
    return thresholds, fpr, fnr


def equal_error_rate(scores, truths) -> float:
    """Rate where the false-positive and false-negative curves cross,
    linearly interpolated between adjacent thresholds."""
    _, fpr, fnr = error_rates(scores, truths)
    diff = fpr - fnr  # non-increasing, from >= 0 down to -1
    k = int(np.argmax(diff <= 0))
    if diff[k] == 0 or k == 0:
        return float(fpr[k] if diff[k] == 0 else 0.5 * (fpr[k] + fnr[k]))
    d0, d1 = diff[k - 1], diff[k]
    t = d0 / (d0 - d1)
    return float(fpr[k - 1] + t * (fpr[k] - fpr[k - 1]))


def per_class_eer(scores, truths, classes) -> dict:
    """One-vs-rest EER per class from a (samples, classes) score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    truths = np.asarray(truths)
    out = {}
    for k, c in enumerate(classes):
        positive = truths == k
        if positive.all() or not positive.any():
            out[c] = None
        else:
            out[c] = equal_error_rate(scores[:, k], positive)
    return out


def hardware_note() -> str:
    return f"{platform.machine()} {platform.processor() or 'cpu'}, {os.cpu_count()} cores, " \
           f"python {platform.python_version()}"


def benchmark_encoding(bank_single, bank_multi, descriptors, params=None,
                       patches_per_image: int | None = None, repeats: int = 1) -> dict:
    """Wall-clock encoding time of one large codebook against several smaller
    ones with the same total atom count."""
    from duca.encoding import EncodingParams, encode_bank

    params = params or EncodingParams()
    if bank_single.total != bank_multi.total:
        raise InvalidInputError("benchmark banks must have equal total atom counts")
    descriptors = np.asarray(descriptors, dtype=np.float64)
    n = descriptors.shape[0]
    per_image = patches_per_image or n

    def run(bank):
        best = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            encode_bank(bank, descriptors, params.mode, params)
            best = min(best, time.perf_counter() - t0)
        return {"books": len(bank.books), "atoms": bank.sizes, "seconds": best,
                "ms_per_patch": 1e3 * best / n, "seconds_per_image": best * per_image / n}

    single, multi = run(bank_single), run(bank_multi)
    return {"mode": params.mode, "patches": n, "patches_per_image": per_image,
            "single": single, "multi": multi,
            "ratio": single["seconds"] / multi["seconds"] if multi["seconds"] > 0 else None,
            "hardware": hardware_note()}
