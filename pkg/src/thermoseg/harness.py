"""Config-driven experiment runner for the progressive-data ablation.

Each experiment row picks a backbone, a parent checkpoint (the baseline
"Mb" or an earlier experiment), an augmentation toggle, and a training
data volume; the runner fits, evaluates train-subset and test mAP 50-95,
and records everything in a registry.  The default 12-row matrix walks
volumes 20/20/20/20/40/40/60/60/80/80/100/100 percent with augmentation
off/on pairs, later rows fine-tuning from the best 20 percent model.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentSpec
from .backend import (
    Backend,
    BackboneSpec,
    FreezePolicy,
    ModelCheckpoint,
    OptimizerSpec,
    SegmentationModel,
    TrainHyperparams,
)
from .evaluator import map_50_95
from .manifest import DatasetManifest, split_by_fraction
from .predictions import InstancePrediction

BASELINE_ID = "Mb"


class HarnessError(RuntimeError):
    pass


class ConfigurationError(HarnessError):
    pass


@dataclass
class ExperimentConfig:
    experiment_id: str
    backbone: BackboneSpec
    base_model: str = BASELINE_ID
    augmentation: AugmentSpec | None = None
    data_volume: float = 1.0
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    hyper: TrainHyperparams = field(default_factory=TrainHyperparams)
    freeze: FreezePolicy = field(default_factory=FreezePolicy)
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 < self.data_volume <= 1.0):
            raise ConfigurationError(
                f"{self.experiment_id}: data volume must be in (0, 1], got {self.data_volume}"
            )

    @property
    def backbone_base(self) -> str:
        return f"{self.backbone.kind}-{self.base_model}"

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "backbone": self.backbone.kind,
            "base_model": self.base_model,
            "augmentation": self.augmentation.to_dict() if self.augmentation else None,
            "data_volume": self.data_volume,
            "optimizer": {
                "kind": self.optimizer.kind,
                "learning_rate": self.optimizer.learning_rate,
                "momentum": self.optimizer.momentum,
                "weight_decay": self.optimizer.weight_decay,
            },
            "hyper": self.hyper.to_dict(),
            "freeze": self.freeze.frozen_stages,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExperimentConfig":
        aug = obj.get("augmentation")
        opt = obj.get("optimizer") or {}
        return cls(
            experiment_id=str(obj["experiment_id"]),
            backbone=BackboneSpec(obj["backbone"]),
            base_model=str(obj.get("base_model", BASELINE_ID)),
            augmentation=AugmentSpec.from_dict(aug) if aug else None,
            data_volume=float(obj.get("data_volume", 1.0)),
            optimizer=OptimizerSpec(
                kind=opt.get("kind", "SGD"),
                learning_rate=float(opt.get("learning_rate", 0.02)),
                momentum=float(opt.get("momentum", 0.9)),
                weight_decay=float(opt.get("weight_decay", 0.0001)),
            ),
            hyper=TrainHyperparams.from_dict(obj.get("hyper") or {}),
            freeze=FreezePolicy(int(obj.get("freeze", 1))),
            seed=int(obj.get("seed", 0)),
        )


@dataclass
class RegistryEntry:
    experiment_id: str
    checkpoint: ModelCheckpoint
    map_train: float  # SEGM mAP 50-95 on the fitted subset
    map_test: float  # SEGM mAP 50-95 on the full test manifest
    map_train_bbox: float
    map_test_bbox: float
    config: ExperimentConfig

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "weights_ref": self.checkpoint.weights_ref,
            "provenance": self.checkpoint.provenance(),
            "map_train": self.map_train,
            "map_test": self.map_test,
            "map_train_bbox": self.map_train_bbox,
            "map_test_bbox": self.map_test_bbox,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RegistryEntry":
        prov = obj["provenance"]
        return cls(
            experiment_id=obj["experiment_id"],
            checkpoint=ModelCheckpoint(
                weights_ref=obj["weights_ref"],
                parent=prov["parent"],
                backbone=BackboneSpec(prov["backbone"]),
                config_hash=prov["config_hash"],
                train_manifest_hash=prov["train_manifest_hash"],
                backend_kind=prov.get("backend", "stub"),
            ),
            map_train=float(obj["map_train"]),
            map_test=float(obj["map_test"]),
            map_train_bbox=float(obj["map_train_bbox"]),
            map_test_bbox=float(obj["map_test_bbox"]),
            config=ExperimentConfig.from_dict(obj["config"]),
        )


class ModelRegistry:
    """Ordered store of experiment results, optionally file-backed."""

    INDEX_NAME = "registry.json"

    def __init__(self, root: Path | None = None):
        self.root = Path(root) if root else None
        self.entries: dict[str, RegistryEntry] = {}

    def add(self, entry: RegistryEntry) -> None:
        if entry.experiment_id in self.entries:
            raise HarnessError(f"experiment id {entry.experiment_id!r} already registered")
        self.entries[entry.experiment_id] = entry
        self._persist()

    def __contains__(self, experiment_id: str) -> bool:
        return experiment_id in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def get(self, experiment_id: str) -> RegistryEntry:
        try:
            return self.entries[experiment_id]
        except KeyError:
            raise HarnessError(f"unknown experiment id {experiment_id!r}") from None

    def provenance_chain(self, experiment_id: str) -> list[str]:
        """Parent labels from an experiment back to the baseline."""
        chain = [experiment_id]
        current = self.get(experiment_id)
        seen = {experiment_id}
        while current.checkpoint.parent != BASELINE_ID:
            parent = current.checkpoint.parent
            if parent in seen:
                raise HarnessError(f"provenance cycle at {parent!r}")
            seen.add(parent)
            chain.append(parent)
            current = self.get(parent)
        chain.append(BASELINE_ID)
        return chain

    def _persist(self) -> None:
        if self.root is None:
            return
        self.root.mkdir(parents=True, exist_ok=True)
        payload = [e.to_dict() for e in self.entries.values()]
        (self.root / self.INDEX_NAME).write_text(json.dumps(payload, indent=2))

    @classmethod
    def load(cls, root: Path) -> "ModelRegistry":
        registry = cls(root)
        index = Path(root) / cls.INDEX_NAME
        if index.exists():
            for obj in json.loads(index.read_text()):
                entry = RegistryEntry.from_dict(obj)
                registry.entries[entry.experiment_id] = entry
        return registry


def predict_manifest(
    model: SegmentationModel,
    manifest: DatasetManifest,
    score_threshold: float = 0.0,
) -> list[InstancePrediction]:
    """Predictions over every manifest image, in its source frame."""
    predictions: list[InstancePrediction] = []
    for rec in manifest.images:
        image = manifest.load_image(rec)
        for p in model.predict(image, score_threshold=score_threshold):
            p.image_id = rec.image_id
            predictions.append(p)
    return predictions


def run_experiment(
    cfg: ExperimentConfig,
    train: DatasetManifest,
    test: DatasetManifest,
    registry: ModelRegistry,
    backend: Backend,
) -> RegistryEntry:
    """Fit one experiment row, evaluate, and append it to the registry."""
    subset = split_by_fraction(train, cfg.data_volume, cfg.seed)

    if cfg.base_model == BASELINE_ID:
        model = backend.load_pretrained(BASELINE_ID, cfg.backbone, cfg.freeze)
    else:
        parent = registry.get(cfg.base_model)
        model = backend.load_checkpoint(parent.checkpoint, origin=cfg.base_model)
        if model.backbone != cfg.backbone:
            raise ConfigurationError(
                f"{cfg.experiment_id}: backbone {cfg.backbone.kind} does not match parent "
                f"{cfg.base_model} ({model.backbone.kind})"
            )

    model.optimizer = cfg.optimizer
    checkpoint, _curve = model.fit(subset, cfg.hyper, cfg.augmentation)

    train_preds = predict_manifest(model, subset)
    test_preds = predict_manifest(model, test)
    _, map_train = map_50_95(train_preds, subset, mode="segm")
    _, map_test = map_50_95(test_preds, test, mode="segm")
    _, map_train_bbox = map_50_95(train_preds, subset, mode="bbox")
    _, map_test_bbox = map_50_95(test_preds, test, mode="bbox")

    entry = RegistryEntry(
        experiment_id=cfg.experiment_id,
        checkpoint=checkpoint,
        map_train=map_train if map_train is not None else 0.0,
        map_test=map_test if map_test is not None else 0.0,
        map_train_bbox=map_train_bbox if map_train_bbox is not None else 0.0,
        map_test_bbox=map_test_bbox if map_test_bbox is not None else 0.0,
        config=cfg,
    )
    registry.add(entry)
    return entry


@dataclass
class AblationReport:
    rows: list[RegistryEntry]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["id", "backbone_base", "aug", "volume", "map_train", "map_test"])
        for e in self.rows:
            writer.writerow(
                [
                    e.experiment_id,
                    e.config.backbone_base,
                    "yes" if (e.config.augmentation and e.config.augmentation.enabled) else "no",
                    f"{round(e.config.data_volume * 100)}%",
                    f"{100.0 * e.map_train:.1f}",
                    f"{100.0 * e.map_test:.1f}",
                ]
            )
        return buf.getvalue()


def run_ablation(
    matrix: list[ExperimentConfig],
    train: DatasetManifest,
    test: DatasetManifest,
    backend: Backend,
    registry: ModelRegistry | None = None,
) -> AblationReport:
    """Run a whole experiment matrix; parents must precede children."""
    registry = registry if registry is not None else ModelRegistry()
    ids = set(registry.entries)
    for cfg in matrix:
        if cfg.experiment_id in ids:
            raise ConfigurationError(f"duplicate experiment id {cfg.experiment_id!r}")
        if cfg.base_model != BASELINE_ID and cfg.base_model not in ids:
            raise ConfigurationError(
                f"{cfg.experiment_id}: base model {cfg.base_model!r} is not defined earlier "
                "in the matrix (cycle or missing dependency)"
            )
        ids.add(cfg.experiment_id)

    rows = [run_experiment(cfg, train, test, registry, backend) for cfg in matrix]
    return AblationReport(rows=rows)


def select_best(registry: ModelRegistry) -> str:
    """Experiment id with the highest test mAP 50-95.

    Ties break toward the smaller data volume, then the lexically
    smaller id, so selection is deterministic.
    """
    if not registry.entries:
        raise HarnessError("registry is empty")
    return min(
        registry.entries.values(),
        key=lambda e: (-e.map_test, e.config.data_volume, e.experiment_id),
    ).experiment_id


def default_matrix(seed: int = 0, hyper: TrainHyperparams | None = None) -> list[ExperimentConfig]:
    """The standard 12-row ablation matrix.

    Rows pair augmentation off/on at each data volume; the first four
    rows compare backbones from the baseline at 20 percent volume, and
    later rows fine-tune from the fourth row's checkpoint while volume
    grows by 20 points per pair.
    """
    hyper = hyper or TrainHyperparams()
    aug = AugmentSpec(seed=seed)
    rows: list[ExperimentConfig] = []

    def cfg(eid: str, backbone: str, base: str, use_aug: bool, volume: float) -> ExperimentConfig:
        return ExperimentConfig(
            experiment_id=eid,
            backbone=BackboneSpec(backbone),
            base_model=base,
            augmentation=aug if use_aug else None,
            data_volume=volume,
            hyper=hyper,
            seed=seed,
        )

    rows.append(cfg("M1", "R50", "Mb", False, 0.2))
    rows.append(cfg("M2", "R50", "Mb", True, 0.2))
    rows.append(cfg("M3", "R101", "Mb", False, 0.2))
    rows.append(cfg("M4", "R101", "Mb", True, 0.2))
    for i, volume in enumerate((0.4, 0.6, 0.8, 1.0)):
        rows.append(cfg(f"M{5 + 2 * i}", "R101", "M4", False, volume))
        rows.append(cfg(f"M{6 + 2 * i}", "R101", "M4", True, volume))
    return rows


def load_matrix(path: Path) -> list[ExperimentConfig]:
    """Read an experiment matrix from a YAML or JSON list file."""
    text = Path(path).read_text()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        doc = yaml.safe_load(text)
    else:
        doc = json.loads(text)
    if not isinstance(doc, list):
        raise ConfigurationError("matrix file must hold a list of experiment configs")
    return [ExperimentConfig.from_dict(obj) for obj in doc]


def save_matrix(matrix: list[ExperimentConfig], path: Path) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in matrix], indent=2))
