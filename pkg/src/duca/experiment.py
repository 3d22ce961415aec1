"""End-to-end runs held in memory: extraction, codebooks, encoding, pooling,
classification and evaluation, plus the ablation sweep and the
single-versus-multiple codebook benchmark."""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from duca.codebook import (
    CodebookBank,
    build_random_bank,
    build_supervised,
    build_unsupervised_kmeans,
)
from duca.config import BankEntry, PipelineConfig
from duca.encoding import EncodingParams, encode_bank, train_metric_encoder
from duca.errors import InvalidInputError
from duca.evaluation import (
    PROTOCOLS,
    SplitProtocol,
    benchmark_encoding,
    cmc_curve,
    confusion_and_accuracy,
    make_split,
    per_class_eer,
)
from duca.features import StubBackend
from duca.imaging import augment, extract_patches
from duca.pipeline import pool, predict_batch, train_classifier

log = logging.getLogger(__name__)


def synthetic_config(**changes) -> PipelineConfig:
    """Desk-scale settings for the procedural texture fixture."""
    base = PipelineConfig(
        rescale=288, augment=False, stub_dim=128,
        bank=[BankEntry("random", 200, seed=0), BankEntry("random", 200, seed=0)],
        split="synthetic", out_dir="duca-out",
    )
    return base.replace(**changes) if changes else base


def make_backend(config: PipelineConfig):
    if config.backend != "stub":
        raise InvalidInputError("in-memory runs need the stub backend; use the CLI for stores")
    return StubBackend(dim=config.stub_dim, seed=config.stub_seed, patch_side=config.window,
                       gain=config.stub_gain)


def protocol_for(config: PipelineConfig) -> SplitProtocol:
    if config.split not in PROTOCOLS:
        raise InvalidInputError(f"unknown split protocol {config.split!r}")
    p = PROTOCOLS[config.split]
    return SplitProtocol(p.name, p.rule, dict(p.params), config.split_seed)


def image_variants(img, with_augmentation: bool):
    if with_augmentation:
        return [(v.tag, v.image) for v in augment(img)]
    return [("original", img)]


def describe_image(img, backend, config: PipelineConfig, with_augmentation: bool):
    """``[(tag, descriptors)]`` with float32 descriptors, one row per patch."""
    out = []
    for tag, variant in image_variants(img, with_augmentation):
        _, patches = extract_patches(variant, config.rescale, config.window, config.stride)
        out.append((tag, backend.describe_batch(patches).astype(np.float32)))
    return out


def build_bank(config: PipelineConfig, pool_rows, categories=None, backend=None,
               supervised=None) -> CodebookBank:
    """Books in config order. Random books are one disjoint draw split in order;
    supervised books come from ``categories`` as ``[(name, images)]`` or from a
    prebuilt ``supervised`` codebook."""
    random_entries = [e for e in config.bank if e.kind == "random"]
    random_books = iter(())
    if random_entries:
        random_books = iter(build_random_bank(pool_rows, [e.size for e in random_entries],
                                              seed=random_entries[0].seed))
    books = []
    for entry in config.bank:
        if entry.kind == "random":
            books.append(next(random_books))
        elif entry.kind == "kmeans":
            books.append(build_unsupervised_kmeans(pool_rows, entry.size, seed=entry.seed,
                                                   max_iters=entry.max_iters, tol=entry.tol))
        elif supervised is not None:
            books.append(supervised)
        else:
            if categories is None:
                raise InvalidInputError("supervised codebook requested without object categories")
            books.append(build_supervised(categories, backend, rescale=config.supervised_rescale,
                                          window=config.window, stride=config.stride))
    return CodebookBank(books)


def train_encoders(bank: CodebookBank, config: PipelineConfig):
    if config.encoding != "metric":
        return None
    return [train_metric_encoder(book, C=config.C_encoder, tol=config.svm_tol,
                                 use_bias=config.metric_bias, seed=config.seed)
            for book in bank.books]


def encoding_params(config: PipelineConfig) -> EncodingParams:
    return EncodingParams(config.encoding, config.alpha, config.kkt_tol, config.max_sweeps)


def encode_groups(groups, bank, config, encoders=None):
    """Encode every ``key -> descriptors`` group; patches of all groups are
    solved in one batch and split back afterwards."""
    keys = list(groups)
    if not keys:
        return {}
    stacked = np.vstack([groups[k] for k in keys])
    codes = encode_bank(bank, stacked, config.encoding, encoding_params(config), encoders)
    bounds = np.cumsum([0] + [len(groups[k]) for k in keys])
    return {k: codes[a:b] for k, a, b in zip(keys, bounds[:-1], bounds[1:])}


@dataclass
class ExperimentResult:
    report: object
    model: object
    bank: CodebookBank
    train_ids: list
    test_ids: list
    test_codes: dict = field(repr=False, default_factory=dict)
    seconds: dict = field(default_factory=dict)


def _describe_all(items, backend, config, train_set, workers):
    def work(item):
        image_id, _, img = item
        return image_id, describe_image(img, backend, config,
                                        config.augment and image_id in train_set)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool_:
            results = list(pool_.map(work, items))
    else:
        results = [work(it) for it in items]
    return {(image_id, tag): d for image_id, variants in results for tag, d in variants}


def run_experiment(items, config: PipelineConfig, categories=None, cache: dict | None = None,
                   codes_for_pooling: bool = False) -> ExperimentResult:
    """``items`` is a list of ``(image_id, label, image)``.

    ``cache`` may be shared between runs that differ only downstream of
    extraction or encoding, so those stages are not repeated.
    """
    cache = {} if cache is None else cache
    seconds = {}
    labels = {iid: lab for iid, lab, _ in items}
    indexed = [{"id": iid, "label": lab, "index": k} for k, (iid, lab, _) in enumerate(items)]
    train_ids, test_ids = make_split(indexed, protocol_for(config))
    train_set = set(train_ids)
    keep = train_set | set(test_ids)
    items = [it for it in items if it[0] in keep]

    t0 = time.perf_counter()
    backend = make_backend(config)
    dkey = ("describe", config.extraction_digest(), tuple(sorted(train_set)))
    if dkey not in cache:
        cache[dkey] = _describe_all(items, backend, config, train_set, config.workers)
    descs = cache[dkey]
    seconds["extract"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    train_groups = {k: v for k, v in descs.items() if k[0] in train_set}
    test_groups = {k: v for k, v in descs.items() if k[0] not in train_set and k[1] == "original"}
    bkey = ("bank", dkey, repr(config.bank), config.supervised_rescale)
    if bkey not in cache:
        pool_rows = np.vstack([train_groups[k] for k in sorted(train_groups)])
        cache[bkey] = build_bank(config, pool_rows, categories, backend)
    bank = cache[bkey]
    seconds["codebooks"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ekey = ("encode", bkey, config.encoding, config.alpha, config.kkt_tol, config.C_encoder,
            config.metric_bias, config.svm_tol, config.seed)
    if ekey not in cache:
        encoders = train_encoders(bank, config)
        all_groups = dict(train_groups)
        all_groups.update(test_groups)
        cache[ekey] = encode_groups(all_groups, bank, config, encoders)
    codes = cache[ekey]
    seconds["encode"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    train_keys = sorted(train_groups)
    X = np.stack([pool(codes[k], config.pooling, config.normalize) for k in train_keys])
    y = [labels[k[0]] for k in train_keys]
    model = train_classifier(X, y, C=config.C_classifier, tol=config.svm_tol, seed=config.seed,
                             pooling=config.pooling, normalize=config.normalize)
    test_keys = [(iid, "original") for iid in test_ids]
    V = np.stack([pool(codes[k], config.pooling, config.normalize) for k in test_keys])
    predicted, _, margins = predict_batch(model, V)
    seconds["classify"] = time.perf_counter() - t0

    truths = [labels[i] for i in test_ids]
    report = confusion_and_accuracy(predicted, truths, model.classes)
    truth_idx = [model.classes.index(t) for t in truths]
    report.cmc = cmc_curve(margins, truth_idx).tolist()
    report.eer = per_class_eer(margins, truth_idx, model.classes)
    report.extra = {"bank_sizes": bank.sizes, "code_length": bank.total,
                    "train_vectors": len(train_keys), "test_images": len(test_ids),
                    "config_digest": config.digest()}
    test_codes = {k[0]: codes[k] for k in test_keys} if codes_for_pooling else {}
    return ExperimentResult(report, model, bank, train_ids, test_ids, test_codes, seconds)


def ablation_variants(base: PipelineConfig, unsupervised_size: int = 400, books: int = 2):
    """Table rows ``(axis, variant, config)`` toggling one component at a time
    around ``base``. The baseline combines a supervised book with ``books``
    random books of ``unsupervised_size / books`` atoms each."""
    part = unsupervised_size // books
    sup = BankEntry("supervised")
    rand = [BankEntry("random", part, seed=base.seed) for _ in range(books)]
    km = [BankEntry("kmeans", part, seed=base.seed + k) for k in range(books)]
    single = [BankEntry("random", part * books, seed=base.seed)]
    both = base.replace(bank=[asdict_entry(e) for e in [sup] + rand], augment=False,
                        encoding="sparse", pooling="max")

    def v(**kw):
        if "bank" in kw:
            kw["bank"] = [asdict_entry(e) for e in kw["bank"]]
        return both.replace(**kw)

    return [
        ("codebook", "supervised", v(bank=[sup])),
        ("codebook", "unsupervised", v(bank=rand)),
        ("codebook", "supervised+unsupervised", both),
        ("sampling", "k-means", v(bank=[sup] + km)),
        ("sampling", "random", both),
        ("codebook size", f"single {part * books}", v(bank=[sup] + single)),
        ("codebook size", f"{books} x {part}", both),
        ("encoding", "sparse", both),
        ("encoding", "metric", v(encoding="metric")),
        ("pooling", "mean", v(pooling="mean")),
        ("pooling", "max", both),
        ("augmentation", "off", both),
        ("augmentation", "on", v(augment=True)),
    ]


def asdict_entry(entry: BankEntry) -> dict:
    return dict(copy.deepcopy(entry.__dict__))


def run_ablation(items, base: PipelineConfig, categories, unsupervised_size: int = 400,
                 books: int = 2, on_row=None) -> list[dict]:
    cache: dict = {}
    done: dict = {}
    rows = []
    for axis, variant, cfg in ablation_variants(base, unsupervised_size, books):
        key = cfg.digest()
        if key not in done:
            t0 = time.perf_counter()
            res = run_experiment(items, cfg, categories, cache)
            done[key] = (res.report, time.perf_counter() - t0)
            log.info("ablation %s/%s: mean accuracy %.4f", axis, variant, res.report.mean_accuracy)
        report, secs = done[key]
        row = {"axis": axis, "variant": variant, "mean_accuracy": report.mean_accuracy,
               "overall_accuracy": report.overall_accuracy, "seconds": secs,
               "code_length": report.extra["code_length"]}
        rows.append(row)
        if on_row:
            on_row(row)
    return rows


def pooling_comparison(items, config: PipelineConfig, categories=None) -> dict:
    """Mean accuracy under max and mean pooling on shared patch codes."""
    cache: dict = {}
    out = {}
    for mode in ("max", "mean"):
        out[mode] = run_experiment(items, config.replace(pooling=mode), categories,
                                   cache).report.mean_accuracy
    return out


def run_benchmark(descriptors, total_atoms: int = 900, books: int = 3, seed: int = 0,
                  params: EncodingParams | None = None, patches_per_image=None,
                  repeats: int = 1, queries=None) -> dict:
    """Encoding time of one ``total_atoms`` book against ``books`` disjoint
    books of ``total_atoms / books`` atoms drawn from ``descriptors``.

    ``queries`` are the descriptors timed; by default they are the pool rows
    not drawn as atoms, so no query coincides with an atom."""
    descriptors = np.asarray(descriptors)
    single = CodebookBank(build_random_bank(descriptors, [total_atoms], seed=seed))
    multi = CodebookBank(build_random_bank(descriptors, [total_atoms // books] * books, seed=seed))
    if queries is None:
        used = np.zeros(len(descriptors), dtype=bool)
        for book in single.books + multi.books:
            used[book.source["rows"]] = True
        queries = descriptors[~used & np.any(descriptors != 0, axis=1)]
        if len(queries) == 0:
            raise InvalidInputError("no descriptors left over to time; pass queries")
    return benchmark_encoding(single, multi, queries, params, patches_per_image, repeats)
