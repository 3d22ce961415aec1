"""Pipeline configuration and dataset manifests.

A config file is YAML (JSON is accepted too, being a subset). Every constant
of the method is a field with its published value as the default.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from duca.container import digest_of
from duca.errors import FormatError, InvalidInputError

CONFIG_ENV = "DUCA_CONFIG"
BANK_KINDS = ("supervised", "random", "kmeans")


@dataclass
class BankEntry:
    kind: str
    size: int | None = None  # ignored for supervised books (one atom per category)
    seed: int = 0
    categories: str | None = None  # category manifest for supervised books
    max_iters: int = 100
    tol: float = 1e-4

    def __post_init__(self):
        if self.kind not in BANK_KINDS:
            raise InvalidInputError(f"unknown codebook kind {self.kind!r}")
        if self.kind != "supervised" and (self.size is None or self.size < 1):
            raise InvalidInputError(f"{self.kind} codebook needs a positive size")


def default_bank() -> list[BankEntry]:
    return [BankEntry("supervised")] + [BankEntry("random", 3000, seed=0) for _ in range(3)]


@dataclass
class PipelineConfig:
    rescale: int = 700
    window: int = 224
    stride: int = 32
    augment: bool = True
    backend: str = "stub"
    stub_dim: int = 512
    stub_seed: int = 0
    stub_gain: float = 4.0
    supervised_rescale: int = 256
    bank: list[BankEntry] = field(default_factory=default_bank)
    encoding: str = "sparse"
    alpha: float = 0.1
    kkt_tol: float = 1e-6
    max_sweeps: int = 1000
    C_encoder: float = 1.0
    C_classifier: float = 1.0
    svm_tol: float = 1e-4
    metric_bias: bool = True
    pooling: str = "max"
    normalize: bool = True
    split: str = "mit67"
    split_seed: int = 0
    seed: int = 0
    workers: int = 1
    out_dir: str = "duca-out"

    def __post_init__(self):
        self.bank = [b if isinstance(b, BankEntry) else BankEntry(**b) for b in self.bank]
        self.validate()

    def validate(self) -> None:
        for name in ("rescale", "window", "stride", "stub_dim", "supervised_rescale",
                     "max_sweeps", "workers"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"config field {name} must be positive")
        for name in ("alpha", "kkt_tol", "C_encoder", "C_classifier", "svm_tol", "stub_gain"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"config field {name} must be positive")
        if not self.bank:
            raise InvalidInputError("config bank must list at least one codebook")
        if self.backend not in ("stub", "store"):
            raise InvalidInputError(f"unknown backend {self.backend!r}")
        if self.encoding not in ("sparse", "metric"):
            raise InvalidInputError(f"unknown encoding mode {self.encoding!r}")
        if self.pooling not in ("max", "mean"):
            raise InvalidInputError(f"unknown pooling mode {self.pooling!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "PipelineConfig":
        data = self.to_dict()
        data.update(changes)
        return PipelineConfig.from_dict(data)

    # Digests of the fields each artifact depends on.
    def extraction_digest(self) -> str:
        return digest_of({k: getattr(self, k) for k in
                          ("rescale", "window", "stride", "augment", "backend", "stub_dim",
                           "stub_seed", "stub_gain")})

    def encoding_digest(self) -> str:
        return digest_of({k: getattr(self, k) for k in
                          ("encoding", "alpha", "kkt_tol", "C_encoder", "metric_bias",
                           "pooling", "normalize")})

    def digest(self) -> str:
        return digest_of(self.to_dict())


def dump_config(config: PipelineConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def save_config(config: PipelineConfig, path) -> None:
    Path(path).write_text(dump_config(config))


def load_config(path=None) -> PipelineConfig:
    """Load from ``path``, else from ``$DUCA_CONFIG``, else the defaults."""
    if path is None:
        path = os.environ.get(CONFIG_ENV)
        if not path:
            return PipelineConfig()
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise FormatError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError(f"config {path} must be a mapping")
    return PipelineConfig.from_dict(data)


@dataclass(frozen=True)
class ManifestItem:
    id: str
    path: str
    label: str
    index: int = 0


@dataclass
class DatasetManifest:
    classes: list[str]
    items: list[ManifestItem]
    root: Path = Path(".")

    def __post_init__(self):
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("manifest image ids must be unique")
        bad = [it.label for it in self.items if it.label not in self.classes]
        if bad:
            raise InvalidInputError(f"manifest label {bad[0]!r} is not a declared class")

    def by_id(self) -> dict[str, ManifestItem]:
        return {it.id: it for it in self.items}

    def resolve(self, item: ManifestItem) -> Path:
        p = Path(item.path)
        return p if p.is_absolute() else self.root / p

    def digest(self) -> str:
        return digest_of(self.classes, [asdict(i) for i in self.items])


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
        items = [ManifestItem(str(r["id"]), str(r["path"]), str(r["label"]),
                              int(r.get("index", k)))
                 for k, r in enumerate(data["items"])]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"cannot read dataset manifest {path}: {exc}") from exc
    classes = data.get("classes") or sorted({i.label for i in items})
    return DatasetManifest([str(c) for c in classes], items, path.parent)
