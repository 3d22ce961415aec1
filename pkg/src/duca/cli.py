"""Command-line surface.

Each artifact records the digests it was produced from and every command
checks them before use, so a model never meets vectors from another bank.
Exit codes come from the error classes in ``duca.errors``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from duca import plotting
from duca.codebook import (
    bank_index,
    build_supervised_from_descriptors,
    load_bank,
    save_bank,
)
from duca.config import PipelineConfig, load_config, load_manifest, save_config
from duca.container import atomic_write_text, digest_of
from duca.encoding import MarginWarning, load_metric_encoder, save_metric_encoder
from duca.errors import (
    DigestMismatchError,
    DucaError,
    EmptyOutputError,
    InvalidInputError,
    MissingFeatureError,
)
from duca.evaluation import (
    PROTOCOLS,
    cmc_curve,
    confusion_and_accuracy,
    hardware_note,
    make_split,
    per_class_eer,
)
from duca.experiment import (
    build_bank,
    describe_image,
    encode_groups,
    encoding_params,
    make_backend,
    protocol_for,
    run_ablation,
    run_benchmark,
    synthetic_config,
    train_encoders,
)
from duca.features import FeatureStore, load_store, make_key, save_store
from duca.imaging import as_image, patch_grid, rescale_min_side
from duca.pipeline import (
    load_model,
    patch_contributions,
    pool,
    predict_batch,
    save_model,
    train_classifier,
)

log = logging.getLogger("duca")

CHECKPOINT_EVERY = 50


def load_image(path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return as_image(np.asarray(im.convert("RGB")))


def _load_items(manifest):
    return [(it.id, it.label, load_image(manifest.resolve(it))) for it in manifest.items]


def _write_csv(path, header, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_text(path, buf.getvalue())
    return Path(path)


def _write_json(path, data) -> Path:
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True))
    return Path(path)


def _expect(kind: str, have, want, where) -> None:
    if have != want:
        raise DigestMismatchError(f"{where}: {kind} digest {have} does not match expected {want}")


def _check_extraction(store: FeatureStore, config: PipelineConfig, where) -> None:
    if config.backend == "stub":
        _expect("extraction", store.meta.get("extraction_digest"), config.extraction_digest(), where)


def _split(manifest, config):
    return make_split(manifest.items, protocol_for(config))


# extract

def cmd_extract(manifest_path, config: PipelineConfig, out, checkpoint: int = CHECKPOINT_EVERY):
    """Describe every patch of every (augmented) image into a DUCF store.

    Images already present in ``out`` are skipped, so an interrupted run
    resumes where it stopped. Returns ``(path, new_rows)``.
    """
    if config.backend != "stub":
        raise InvalidInputError("the store backend reads precomputed features; nothing to extract")
    manifest = load_manifest(manifest_path)
    bad = [it.id for it in manifest.items if "/" in it.id]
    if bad:
        raise InvalidInputError(f"image id {bad[0]!r} contains '/', which keys reserve")
    out = Path(out)
    backend = make_backend(config)
    meta = {"kind": "features", "extraction_digest": config.extraction_digest(),
            "manifest_digest": manifest.digest(), "backend_config": backend.config()}
    if out.exists():
        store = load_store(out)
        _expect("extraction", store.meta.get("extraction_digest"), meta["extraction_digest"], out)
    else:
        store = FeatureStore(np.zeros((0, config.stub_dim), np.float32), {}, backend.name,
                             (0.0, 0.0, 0.0), meta)
    done = {k.split("/", 1)[0] for k in store.manifest}
    todo = [it for it in manifest.items if it.id not in done]
    errors = out.with_name(out.name + ".errors.log")
    failures = []

    def work(item):
        try:
            img = load_image(manifest.resolve(item))
            return item, describe_image(img, backend, config, config.augment), None
        except (OSError, ValueError) as exc:
            return item, None, exc

    start = len(store)
    with ThreadPoolExecutor(max_workers=config.workers) as ex:
        for k in range(0, len(todo), checkpoint):
            keys, rows = [], []
            for item, variants, exc in ex.map(work, todo[k : k + checkpoint]):
                if exc is not None:
                    log.warning("skipping %s: %s", item.id, exc)
                    failures.append(f"{item.id}\t{item.path}\t{exc}")
                    continue
                for tag, desc in variants:
                    keys += [make_key(item.id, tag, i) for i in range(len(desc))]
                    rows.append(desc)
            if keys:
                store = store.extend(keys, np.vstack(rows))
                store.meta.update(meta)
                save_store(store, out)
                log.info("checkpoint: %d rows in %s", len(store), out)
    added = len(store) - start
    if failures:
        with open(errors, "a") as fh:
            fh.write("\n".join(failures) + "\n")
    if len(store) == 0:
        raise EmptyOutputError(f"no descriptors extracted; see {errors}")
    log.info("extract: %d new rows, %d total, %d unreadable images", added, len(store),
             len(failures))
    return out, added


# build-codebooks

def _category_descriptors(categories_path, config, category_features=None):
    """``[(name, descriptors)]`` for the supervised book, in class order."""
    cats = load_manifest(categories_path)
    by_class: dict[str, list] = {c: [] for c in cats.classes}
    if category_features is not None:
        store = load_store(category_features)
        groups = store.group_by_image()
        label = {it.id: it.label for it in cats.items}
        for (image_id, _tag), keys in groups.items():
            if image_id in label:
                by_class[label[image_id]].append(store.rows_for(keys))
    else:
        backend = make_backend(config)
        sup = config.replace(rescale=config.supervised_rescale)
        for it in cats.items:
            img = load_image(cats.resolve(it))
            for _, desc in describe_image(img, backend, sup, False):
                by_class[it.label].append(desc)
    missing = [c for c, d in by_class.items() if not d]
    if missing:
        raise InvalidInputError(f"object category {missing[0]!r} produced no patches")
    return [(c, np.vstack(d)) for c, d in by_class.items()], cats.digest()


def cmd_build_codebooks(features, config: PipelineConfig, out, manifest=None, categories=None,
                        category_features=None):
    """Build the configured bank from training-split descriptors and save it
    under ``out`` (plus metric encoders when the encoding mode needs them)."""
    store = load_store(features)
    _check_extraction(store, config, features)
    keys = store.keys()
    if manifest is not None:
        train_ids, _ = _split(load_manifest(manifest), config)
        train_set = set(train_ids)
        keys = [k for k in keys if k.split("/", 1)[0] in train_set]
    if not keys:
        raise EmptyOutputError("no training descriptors to build codebooks from")
    pool_rows = store.rows_for(keys)
    supervised, cat_digest = None, None
    if any(e.kind == "supervised" for e in config.bank):
        cat_path = categories or next((e.categories for e in config.bank if e.categories), None)
        if cat_path is None:
            raise InvalidInputError("a supervised codebook needs --categories")
        descs, cat_digest = _category_descriptors(cat_path, config, category_features)
        supervised = build_supervised_from_descriptors(descs)
        supervised.source.update(categories_digest=cat_digest)
    bank = build_bank(config, pool_rows, supervised=supervised)
    out = Path(out)
    extra = {"features_digest": store.digest(), "extraction_digest": config.extraction_digest(),
             "bank_config": digest_of([e.__dict__ for e in config.bank]),
             "categories_digest": cat_digest}
    encoders = train_encoders(bank, config)
    if encoders:
        out.mkdir(parents=True, exist_ok=True)
        names = [f"encoder-{k:02d}.ducw" for k in range(len(encoders))]
        for name, enc in zip(names, encoders):
            save_metric_encoder(enc, out / name)
        extra.update(encoders=names, encoder_config=digest_of(config.C_encoder, config.metric_bias,
                                                              config.svm_tol, config.seed))
    index = save_bank(bank, out, extra)
    log.info("build-codebooks: %d books, %d atoms, digest %s", len(bank.books), bank.total,
             bank.digest())
    return index


def _load_encoders(bank_path, bank):
    spec = json.loads(bank_index(bank_path).read_text())
    names = spec.get("encoders")
    if not names:
        raise InvalidInputError("metric encoding needs encoders; rebuild codebooks with "
                                "encoding: metric")
    encoders = [load_metric_encoder(bank_index(bank_path).parent / n) for n in names]
    for book, enc in zip(bank.books, encoders):
        _expect("codebook", enc.codebook_digest, book.digest(), bank_path)
    return encoders


# encode

def cmd_encode(features, codebooks, config: PipelineConfig, out, chunk: int = 64):
    """One pooled image vector per ``(image, variant)`` keyed ``imageId/tag``."""
    store = load_store(features)
    _check_extraction(store, config, features)
    bank = load_bank(codebooks)
    if bank.dim != store.dim:
        raise InvalidInputError(f"codebook dimension {bank.dim} != descriptor dimension {store.dim}")
    encoders = _load_encoders(codebooks, bank) if config.encoding == "metric" else None
    groups = store.group_by_image()
    if not groups:
        raise EmptyOutputError(f"{features} holds no descriptors")
    names = list(groups)
    parts = [names[k : k + chunk] for k in range(0, len(names), chunk)]

    def work(part):
        codes = encode_groups({g: store.rows_for(groups[g]) for g in part}, bank, config, encoders)
        return [pool(codes[g], config.pooling, config.normalize) for g in part]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginWarning)
        with ThreadPoolExecutor(max_workers=config.workers) as ex:
            vectors = [v for block in ex.map(work, parts) for v in block]
    manifest = {f"{iid}/{tag}": k for k, (iid, tag) in enumerate(names)}
    meta = {"kind": "vectors", "bank_digest": bank.digest(),
            "encoding_digest": config.encoding_digest(),
            "extraction_digest": store.meta.get("extraction_digest"),
            "features_digest": store.digest(), "pooling": config.pooling,
            "normalize": config.normalize}
    vec = FeatureStore(np.stack(vectors), manifest, f"vectors-{config.encoding}", store.mean, meta)
    save_store(vec, out)
    log.info("encode: %d image vectors of length %d", len(vec), vec.dim)
    return Path(out)


def _index_vectors(vec: FeatureStore):
    by_image: dict[str, list[str]] = {}
    for key in vec.keys():
        by_image.setdefault(key.rsplit("/", 1)[0], []).append(key)
    return by_image


# train

def cmd_train(vectors, manifest_path, config: PipelineConfig, out):
    vec = load_store(vectors)
    if vec.meta.get("kind") != "vectors":
        raise InvalidInputError(f"{vectors} is not an image-vector file")
    _expect("encoding", vec.meta.get("encoding_digest"), config.encoding_digest(), vectors)
    manifest = load_manifest(manifest_path)
    labels = {it.id: it.label for it in manifest.items}
    train_ids, _ = _split(manifest, config)
    by_image = _index_vectors(vec)
    keys = [k for iid in train_ids for k in by_image.get(iid, [])]
    missing = [iid for iid in train_ids if iid not in by_image]
    if missing:
        log.warning("%d training images have no vectors (first %s)", len(missing), missing[0])
    if not keys:
        raise EmptyOutputError("no training vectors found for the split")
    y = [labels[k.rsplit("/", 1)[0]] for k in keys]
    model = train_classifier(vec.rows_for(keys), y, C=config.C_classifier, tol=config.svm_tol,
                             seed=config.seed, pooling=config.pooling, normalize=config.normalize)
    model.meta.update(bank_digest=vec.meta.get("bank_digest"),
                      encoding_digest=vec.meta.get("encoding_digest"),
                      vectors_digest=vec.digest(), manifest_digest=manifest.digest(),
                      config_digest=config.digest(), split=config.split,
                      train_vectors=len(keys))
    save_model(model, out)
    log.info("train: %d classes, %d pairs, %d vectors", len(model.classes), len(model.pairs),
             len(keys))
    return Path(out)


# evaluate

def cmd_evaluate(model_path, vectors, manifest_path, config: PipelineConfig, out,
                 heatmaps: int = 0, features=None, codebooks=None):
    """Score the test split; writes report.json, confusion and CMC (CSV and
    PNG), predictions.csv and optional contribution heat maps."""
    model = load_model(model_path)
    vec = load_store(vectors)
    _expect("bank", vec.meta.get("bank_digest"), model.meta.get("bank_digest"), vectors)
    _expect("encoding", vec.meta.get("encoding_digest"), model.meta.get("encoding_digest"), vectors)
    manifest = load_manifest(manifest_path)
    labels = {it.id: it.label for it in manifest.items}
    _, test_ids = _split(manifest, config)
    keys = [f"{iid}/original" for iid in test_ids]
    absent = [k for k in keys if k not in vec]
    if absent:
        raise MissingFeatureError(f"no image vector for test key {absent[0]!r}")
    unknown = sorted({labels[i] for i in test_ids} - set(model.classes))
    if unknown:
        raise InvalidInputError(f"test class {unknown[0]!r} was not seen in training")
    t0 = time.perf_counter()
    predicted, votes, margins = predict_batch(model, vec.rows_for(keys))
    seconds = time.perf_counter() - t0
    truths = [labels[i] for i in test_ids]
    report = confusion_and_accuracy(predicted, truths, model.classes)
    truth_idx = [model.classes.index(t) for t in truths]
    report.cmc = cmc_curve(margins, truth_idx).tolist()
    report.eer = per_class_eer(margins, truth_idx, model.classes)
    report.extra = {"model_digest": model.digest(), "bank_digest": model.meta.get("bank_digest"),
                    "test_images": len(keys), "split": config.split}
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "report.json", report.to_json())
    # wall-clock figures live apart so the report itself is reproducible bit for bit
    _write_json(out / "timing.json", {"classify_ms_per_image": 1e3 * seconds / max(1, len(keys)),
                                      "hardware": hardware_note()})
    _write_csv(out / "confusion.csv", ["true\\predicted"] + model.classes,
               [[c] + [f"{v:.6f}" for v in row] for c, row in zip(model.classes, report.confusion)])
    _write_csv(out / "cmc.csv", ["rank", "rate"],
               [[k + 1, f"{r:.6f}"] for k, r in enumerate(report.cmc)])
    _write_csv(out / "predictions.csv", ["id", "truth", "predicted"] + model.classes,
               [[i, t, p] + [f"{m:.6f}" for m in row]
                for i, t, p, row in zip(test_ids, truths, predicted, margins)])
    plotting.plot_confusion(report.confusion, model.classes, out / "confusion.png")
    plotting.plot_cmc(report.cmc, out / "cmc.png")
    if heatmaps > 0:
        _heatmaps(model, manifest, test_ids[:heatmaps], dict(zip(test_ids, predicted)),
                  features, codebooks, config, out)
    log.info("evaluate: mean accuracy %.4f over %d test images", report.mean_accuracy, len(keys))
    print(f"mean accuracy: {report.mean_accuracy:.4f}")
    return report


def _heatmaps(model, manifest, ids, predicted, features, codebooks, config, out):
    if features is None or codebooks is None:
        raise InvalidInputError("heat maps need --features and --codebooks")
    if model.pooling != "max":
        log.warning("patch contributions are defined for max pooling only; no heat maps")
        return
    store = load_store(features)
    bank = load_bank(codebooks)
    _expect("bank", bank.digest(), model.meta.get("bank_digest"), codebooks)
    encoders = _load_encoders(codebooks, bank) if config.encoding == "metric" else None
    groups = store.group_by_image()
    items = manifest.by_id()
    for iid in ids:
        keys = groups.get((iid, "original"))
        if not keys:
            raise MissingFeatureError(f"no patch descriptors for {iid}/original")
        codes = encode_groups({iid: store.rows_for(keys)}, bank, config, encoders)[iid]
        scores = patch_contributions(model, codes, predicted[iid])
        img = rescale_min_side(load_image(manifest.resolve(items[iid])), config.rescale)
        rects = patch_grid(img.shape[0], img.shape[1], config.window, config.stride)
        plotting.plot_heatmap(img, rects, scores, out / "heatmaps" / f"{iid}.png",
                              title=f"{iid}: {predicted[iid]}")


# ablate, benchmark, grid

def _categories_images(path):
    if path is None:
        return None
    cats = load_manifest(path)
    grouped: dict[str, list] = {c: [] for c in cats.classes}
    for it in cats.items:
        grouped[it.label].append(load_image(cats.resolve(it)))
    return list(grouped.items())


def cmd_ablate(manifest_path, config: PipelineConfig, out, categories=None, size: int = 400,
               books: int = 2):
    """Toggle one component at a time and write the comparison table."""
    items = _load_items(load_manifest(manifest_path))
    cats = _categories_images(categories)
    if cats is None:
        raise InvalidInputError("the ablation needs --categories for its supervised codebook")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", MarginWarning)
        rows = run_ablation(items, config, cats, size, books)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    fields = ["axis", "variant", "mean_accuracy", "overall_accuracy", "code_length", "seconds"]
    _write_csv(out / "ablation.csv", fields, [[r[f] for f in fields] for r in rows])
    _write_json(out / "ablation.json", rows)
    plotting.plot_ablation(rows, out / "ablation.png")
    for r in rows:
        print(f"{r['axis']:>14}  {r['variant']:<24} {100 * r['mean_accuracy']:6.2f}")
    return rows


def synthetic_descriptors(config, need: int, seed: int = 0) -> np.ndarray:
    """At least ``need`` non-zero stub descriptors of texture images."""
    from duca.synthetic import texture_dataset

    backend = make_backend(config)
    rows, count, batch = [], 0, 0
    while count < need:
        for _, _, img in texture_dataset(n_per_class=4, seed=seed + 1000 * batch):
            for _, d in describe_image(img, backend, config, False):
                d = d[np.any(d != 0, axis=1)]
                rows.append(d)
                count += len(d)
        batch += 1
    return np.vstack(rows)


def cmd_benchmark(config: PipelineConfig, out, features=None, total: int = 900, books: int = 3,
                  queries: int = 500, repeats: int = 1):
    """Time one ``total``-atom book against ``books`` smaller ones."""
    if features is not None:
        desc = load_store(features).matrix
    else:
        desc = synthetic_descriptors(config, total + queries, seed=config.seed)
    desc = desc[np.any(desc != 0, axis=1)]
    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(desc))
    if len(desc) < total + 1:
        raise InvalidInputError(f"benchmark needs more than {total} descriptors, got {len(desc)}")
    n_q = min(queries, len(desc) - total)
    query_rows, pool_rows = desc[order[:n_q]], desc[order[n_q:]]
    params = encoding_params(config.replace(encoding="sparse"))
    report = run_benchmark(pool_rows, total, books, config.seed, params, repeats=repeats,
                           queries=query_rows)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "benchmark.json", report)
    _write_csv(out / "benchmark.csv", ["bank", "books", "atoms", "seconds", "ms_per_patch"],
               [[name, report[name]["books"], "+".join(map(str, report[name]["atoms"])),
                 f"{report[name]['seconds']:.6f}", f"{report[name]['ms_per_patch']:.6f}"]
                for name in ("single", "multi")])
    plotting.plot_benchmark(report, out / "benchmark.png")
    print(f"single/multi time ratio: {report['ratio']:.3f}")
    return report


def cmd_grid(features, codebooks, manifest_path, config: PipelineConfig, out, Cs=(0.1, 1.0, 10.0),
             alphas=(0.05, 0.1, 0.2), val_share: int = 25):
    """Validation accuracy over C x alpha, holding out part of the training split."""
    from duca.evaluation import SplitProtocol

    store = load_store(features)
    _check_extraction(store, config, features)
    bank = load_bank(codebooks)
    manifest = load_manifest(manifest_path)
    labels = {it.id: it.label for it in manifest.items}
    train_ids, _ = _split(manifest, config)
    train_set = set(train_ids)
    inner = [it for it in manifest.items if it.id in train_set]
    fit_ids, val_ids = make_split(inner, SplitProtocol(
        "validation", "percentage", {"train": 100 - val_share, "test": val_share}, config.seed))
    fit_set = set(fit_ids)
    groups = {g: keys for g, keys in store.group_by_image().items()
              if g[0] in fit_set or (g[0] in val_ids and g[1] == "original")}
    encoders = _load_encoders(codebooks, bank) if config.encoding == "metric" else None
    if config.encoding == "metric":
        alphas = (config.alpha,)
    values = np.zeros((len(Cs), len(alphas)))
    descs = {g: store.rows_for(k) for g, k in groups.items()}
    for j, alpha in enumerate(alphas):
        cfg = config.replace(alpha=float(alpha))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", MarginWarning)
            codes = encode_groups(descs, bank, cfg, encoders)
        fit_keys = sorted(g for g in codes if g[0] in fit_set)
        val_keys = [(i, "original") for i in val_ids]
        X = np.stack([pool(codes[g], cfg.pooling, cfg.normalize) for g in fit_keys])
        V = np.stack([pool(codes[g], cfg.pooling, cfg.normalize) for g in val_keys])
        y = [labels[g[0]] for g in fit_keys]
        for i, C in enumerate(Cs):
            model = train_classifier(X, y, C=float(C), tol=cfg.svm_tol, seed=cfg.seed,
                                     pooling=cfg.pooling, normalize=cfg.normalize)
            pred, _, _ = predict_batch(model, V)
            rep = confusion_and_accuracy(pred, [labels[i] for i in val_ids], model.classes)
            values[i, j] = rep.mean_accuracy
            log.info("grid C=%g alpha=%g: %.4f", C, alpha, rep.mean_accuracy)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "grid.csv", ["C", "alpha", "mean_accuracy"],
               [[C, a, f"{values[i, j]:.6f}"] for i, C in enumerate(Cs)
                for j, a in enumerate(alphas)])
    plotting.plot_grid(values, list(Cs), list(alphas), out / "grid.png")
    i, j = np.unravel_index(int(np.argmax(values)), values.shape)
    best = {"C": float(Cs[i]), "alpha": float(alphas[j]), "mean_accuracy": float(values[i, j])}
    _write_json(out / "grid.json", {"values": values.tolist(), "C": list(map(float, Cs)),
                                    "alpha": list(map(float, alphas)), "best": best})
    print(f"best: C={best['C']:g} alpha={best['alpha']:g} accuracy={best['mean_accuracy']:.4f}")
    return best


def cmd_synth(out, n_per_class: int = 30, seed: int = 0):
    """Write the texture fixture, an object-category set and a matching config."""
    from duca.synthetic import object_categories, texture_dataset, write_categories, write_dataset

    need = sum(PROTOCOLS["synthetic"].params.values())
    if n_per_class < need:
        raise InvalidInputError(f"the synthetic split needs at least {need} images per class")
    out = Path(out)
    manifest = write_dataset(texture_dataset(n_per_class=n_per_class, seed=seed), out / "scenes")
    cats = write_categories(object_categories(seed=seed + 1), out / "categories")
    config = synthetic_config(seed=seed, split_seed=seed, out_dir=str(out / "run"))
    save_config(config, out / "config.yaml")
    print(f"wrote {manifest}, {cats} and {out / 'config.yaml'}")
    return manifest, cats, out / "config.yaml"


# argument parsing

def _common(p):
    p.add_argument("--config", help="YAML config file (default: $DUCA_CONFIG, then built-ins)")
    p.add_argument("--workers", type=int, help="parallel workers over images")
    p.add_argument("--seed", type=int, help="override every seed in the config")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--log-level", default="INFO",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duca", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="describe dense patches into a feature store")
    p.add_argument("manifest")
    p.add_argument("--checkpoint", type=int, default=CHECKPOINT_EVERY,
                   help="images per checkpoint write")
    _common(p)

    p = sub.add_parser("build-codebooks", help="build the codebook bank")
    p.add_argument("features")
    p.add_argument("--manifest", help="dataset manifest; restricts the pool to training images")
    p.add_argument("--categories", help="object-category manifest for the supervised book")
    p.add_argument("--category-features", help="precomputed store for the category images")
    _common(p)

    p = sub.add_parser("encode", help="encode and pool into image vectors")
    p.add_argument("features")
    p.add_argument("codebooks")
    _common(p)

    p = sub.add_parser("train", help="train the one-vs-one classifier")
    p.add_argument("vectors")
    p.add_argument("manifest")
    _common(p)

    p = sub.add_parser("evaluate", help="score the test split, or run the ablation table")
    p.add_argument("model", nargs="?")
    p.add_argument("vectors", nargs="?")
    p.add_argument("manifest", nargs="?")
    p.add_argument("--heatmaps", type=int, default=0, help="heat maps for the first N test images")
    p.add_argument("--features", help="patch store, for heat maps")
    p.add_argument("--codebooks", help="bank directory, for heat maps")
    p.add_argument("--ablation", metavar="MANIFEST", help="run the ablation table on MANIFEST")
    p.add_argument("--categories", help="object-category manifest for the ablation")
    _common(p)

    p = sub.add_parser("ablate", help="one-component-at-a-time comparison table")
    p.add_argument("manifest")
    p.add_argument("--categories", required=True)
    p.add_argument("--size", type=int, default=400, help="unsupervised atoms in total")
    p.add_argument("--books", type=int, default=2)
    _common(p)

    p = sub.add_parser("benchmark", help="single versus multiple codebook encoding time")
    p.add_argument("--features", help="descriptor store (default: synthetic descriptors)")
    p.add_argument("--total", type=int, default=900)
    p.add_argument("--books", type=int, default=3)
    p.add_argument("--queries", type=int, default=500)
    p.add_argument("--repeats", type=int, default=1)
    _common(p)

    p = sub.add_parser("grid", help="C x alpha grid search on a validation split")
    p.add_argument("features")
    p.add_argument("codebooks")
    p.add_argument("manifest")
    p.add_argument("--C", type=_floats, default=[0.1, 1.0, 10.0])
    p.add_argument("--alpha", type=_floats, default=[0.05, 0.1, 0.2])
    _common(p)

    p = sub.add_parser("synth", help="write the synthetic texture fixture")
    p.add_argument("--per-class", type=int, default=30)
    _common(p)
    return parser


def _config(args) -> PipelineConfig:
    config = load_config(args.config)
    changes = {}
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.seed is not None:
        changes.update(seed=args.seed, split_seed=args.seed,
                       bank=[dict(e.__dict__, seed=args.seed) for e in config.bank])
    return config.replace(**changes) if changes else config


def _out(args, config, default) -> Path:
    return Path(args.out) if args.out else Path(config.out_dir) / default


def run(args) -> None:
    config = _config(args)
    cmd = args.command
    if cmd == "extract":
        cmd_extract(args.manifest, config, _out(args, config, "features.ducf"), args.checkpoint)
    elif cmd == "build-codebooks":
        cmd_build_codebooks(args.features, config, _out(args, config, "bank"), args.manifest,
                            args.categories, args.category_features)
    elif cmd == "encode":
        cmd_encode(args.features, args.codebooks, config, _out(args, config, "vectors.ducf"))
    elif cmd == "train":
        cmd_train(args.vectors, args.manifest, config, _out(args, config, "model.ducm"))
    elif cmd == "evaluate":
        if args.ablation:
            cmd_ablate(args.ablation, config, _out(args, config, "ablation"), args.categories)
        elif None in (args.model, args.vectors, args.manifest):
            raise InvalidInputError("evaluate needs MODEL VECTORS MANIFEST or --ablation")
        else:
            cmd_evaluate(args.model, args.vectors, args.manifest, config,
                         _out(args, config, "report"), args.heatmaps, args.features,
                         args.codebooks)
    elif cmd == "ablate":
        cmd_ablate(args.manifest, config, _out(args, config, "ablation"), args.categories,
                   args.size, args.books)
    elif cmd == "benchmark":
        cmd_benchmark(config, _out(args, config, "benchmark"), args.features, args.total,
                      args.books, args.queries, args.repeats)
    elif cmd == "grid":
        cmd_grid(args.features, args.codebooks, args.manifest, config,
                 _out(args, config, "grid"), args.C, args.alpha)
    elif cmd == "synth":
        cmd_synth(args.out or "duca-synth", args.per_class, args.seed or 0)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except DucaError as exc:
        log.error("%s", exc)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
