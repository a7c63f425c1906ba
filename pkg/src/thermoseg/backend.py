"""Trainable instance-segmentation backend contract plus a stub backend.

The segmentation network itself is a pluggable component behind this
contract.  The stub backend makes the whole harness, evaluator, and
service testable without training: it answers predictions by looking up
the ground truth it was shown and perturbing it with noise that shrinks
as its quality parameter approaches 1.  Fitting a stub raises its
quality linearly with the training-data fraction, so data-volume
ablation trends are observable.
"""

from __future__ import annotations

import hashlib
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import cv2
import numpy as np

from .augment import AugmentSpec
from .geometry import BBox
from .manifest import (
    Annotation,
    CategoryTable,
    DatasetManifest,
    annotation_from_coco,
    annotation_to_coco,
    manifest_to_coco,
)
from .predictions import InstancePrediction
from .resize import DEFAULT_TARGET, resize_record

BACKBONE_STAGE_COUNT = 5  # stem plus four residual stages
MAX_DETECTIONS = 100


class BackendError(RuntimeError):
    pass


class UnresolvableWeightsError(BackendError):
    pass


class BackboneMismatchError(BackendError):
    pass


class TrainingDivergedError(BackendError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class BackboneSpec:
    kind: Literal["R50", "R101"]

    def __post_init__(self) -> None:
        if self.kind not in ("R50", "R101"):
            raise ValueError(f"backbone must be R50 or R101, got {self.kind!r}")

    @property
    def n_stages(self) -> int:
        return BACKBONE_STAGE_COUNT


@dataclass(frozen=True)
class OptimizerSpec:
    kind: Literal["SGD", "Adam"] = "SGD"
    learning_rate: float = 0.02
    momentum: float = 0.9  # SGD only
    weight_decay: float = 0.0001

    def __post_init__(self) -> None:
        if self.kind not in ("SGD", "Adam"):
            raise ValueError(f"optimizer must be SGD or Adam, got {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")

    @classmethod
    def adam(cls, learning_rate: float = 1e-4) -> "OptimizerSpec":
        return cls(kind="Adam", learning_rate=learning_rate, momentum=0.0)


@dataclass(frozen=True)
class FreezePolicy:
    """Number of initial backbone stages excluded from updates."""

    frozen_stages: int = 1

    def __post_init__(self) -> None:
        if not (0 <= self.frozen_stages <= BACKBONE_STAGE_COUNT):
            raise ValueError(
                f"frozen_stages must be in [0, {BACKBONE_STAGE_COUNT}], got {self.frozen_stages}"
            )


@dataclass(frozen=True)
class TrainHyperparams:
    mask_head_train_roi: int = 200
    max_gt_per_image: int = 512
    train_roi: int = 512
    epochs: int = 12
    batch_size: int = 2
    score_threshold: float = 0.05
    input_size: int = DEFAULT_TARGET

    def __post_init__(self) -> None:
        for name in ("mask_head_train_roi", "max_gt_per_image", "train_roi", "epochs",
                     "batch_size", "input_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (0.0 <= self.score_threshold <= 1.0):
            raise ValueError("score threshold must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "mask_head_train_roi": self.mask_head_train_roi,
            "max_gt_per_image": self.max_gt_per_image,
            "train_roi": self.train_roi,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "score_threshold": self.score_threshold,
            "input_size": self.input_size,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainHyperparams":
        return cls(**{k: obj[k] for k in cls().to_dict() if k in obj})


@dataclass(frozen=True)
class ModelCheckpoint:
    """Opaque weights reference plus full provenance."""

    weights_ref: str
    parent: str
    backbone: BackboneSpec
    config_hash: str
    train_manifest_hash: str
    backend_kind: str = "stub"

    def provenance(self) -> dict:
        return {
            "parent": self.parent,
            "backbone": self.backbone.kind,
            "config_hash": self.config_hash,
            "train_manifest_hash": self.train_manifest_hash,
            "backend": self.backend_kind,
        }

    @classmethod
    def from_dir(cls, path: Path) -> "ModelCheckpoint":
        doc = json.loads((Path(path) / "provenance.json").read_text())
        return cls(
            weights_ref=str(path),
            parent=doc["parent"],
            backbone=BackboneSpec(doc["backbone"]),
            config_hash=doc["config_hash"],
            train_manifest_hash=doc["train_manifest_hash"],
            backend_kind=doc.get("backend", "stub"),
        )


def config_hash(obj: dict) -> str:
    """Stable digest of a config mapping, independent of key order."""
    payload = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def manifest_hash(manifest: DatasetManifest) -> str:
    payload = json.dumps(manifest_to_coco(manifest), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


class SegmentationModel(ABC):
    """A loaded model handle: exclusively owned during fit, shareable for predict."""

    backbone: BackboneSpec
    freeze: FreezePolicy
    categories: CategoryTable
    origin: str  # label of the checkpoint this handle was loaded from ("Mb" at the root)

    @abstractmethod
    def fit(
        self,
        train: DatasetManifest,
        hyper: TrainHyperparams,
        aug: AugmentSpec | None = None,
    ) -> tuple[ModelCheckpoint, list[float]]:
        """Train and persist a checkpoint; returns it with the per-epoch loss curve."""

    @abstractmethod
    def predict(
        self, image: np.ndarray, score_threshold: float = 0.5
    ) -> list[InstancePrediction]:
        """Detections on one image, sorted by descending score, capped at 100."""

    @abstractmethod
    def parameter_counts(self) -> tuple[int, int]:
        """(total, trainable) parameter counts under the freeze policy."""

    @property
    def num_categories(self) -> int:
        return len(self.categories)


class Backend(ABC):
    kind: str

    @abstractmethod
    def load_pretrained(
        self, weights_ref: str, backbone: BackboneSpec, freeze: FreezePolicy
    ) -> SegmentationModel:
        ...

    @abstractmethod
    def load_checkpoint(
        self, checkpoint: ModelCheckpoint, origin: str | None = None
    ) -> SegmentationModel:
        ...


# --------------------------------------------------------------------------
# Ground-truth oracle (what the stub "knows")
# --------------------------------------------------------------------------


class GroundTruthOracle:
    """Content-addressed ground truth store keyed by image pixels."""

    def __init__(self) -> None:
        self._entries: dict[str, tuple[int, int, list[Annotation]]] = {}

    @staticmethod
    def image_key(image: np.ndarray) -> str:
        arr = np.ascontiguousarray(image)
        digest = hashlib.blake2b(digest_size=16)
        digest.update(str(arr.shape).encode())
        digest.update(str(arr.dtype).encode())
        digest.update(arr.tobytes())
        return digest.hexdigest()

    def register(self, image: np.ndarray, annotations: list[Annotation]) -> str:
        key = self.image_key(image)
        h, w = image.shape[:2]
        self._entries[key] = (w, h, list(annotations))
        return key

    def register_manifest(
        self, manifest: DatasetManifest, input_size: int | None = DEFAULT_TARGET
    ) -> list[str]:
        """Register every manifest image in its source frame (and, when
        input_size is given, in the letterboxed model-input frame too).
        Returns the source-frame keys in manifest order."""
        keys = []
        for rec in manifest.images:
            image = manifest.load_image(rec)
            anns = manifest.annotations_for(rec.image_id)
            keys.append(self.register(image, anns))
            if input_size:
                resized, resized_anns, _ = resize_record(image, anns, target=input_size)
                self.register(resized, resized_anns)
        return keys

    def lookup(self, image: np.ndarray) -> tuple[int, int, list[Annotation]] | None:
        return self._entries.get(self.image_key(image))

    def merge(self, other: "GroundTruthOracle") -> None:
        self._entries.update(other._entries)

    def to_dict(self) -> dict:
        return {
            key: {
                "width": w,
                "height": h,
                "annotations": [annotation_to_coco(a) for a in anns],
            }
            for key, (w, h, anns) in self._entries.items()
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "GroundTruthOracle":
        oracle = cls()
        for key, entry in obj.items():
            oracle._entries[key] = (
                int(entry["width"]),
                int(entry["height"]),
                [annotation_from_coco(a) for a in entry["annotations"]],
            )
        return oracle


# --------------------------------------------------------------------------
# Stub backend
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StubNoise:
    """Noise amplitudes at quality 0; everything scales by (1 - quality)."""

    drop_rate: float = 0.55
    fp_rate: float = 0.7
    shift_sigma: float = 0.38  # box shift, fraction of box extent
    scale_sigma: float = 0.35  # log-scale jitter


DEFAULT_NOISE = StubNoise()

# emulated parameter budgets (backbone stages then heads), in thousands
_STAGE_SHARES = (0.01, 0.08, 0.15, 0.33, 0.43)
_BACKBONE_PARAMS = {"R50": 23_500_000, "R101": 42_500_000}
_HEAD_PARAMS = 20_500_000


class StubModel(SegmentationModel):
    def __init__(
        self,
        backend: "StubBackend",
        backbone: BackboneSpec,
        freeze: FreezePolicy,
        quality: float,
        origin: str = "Mb",
        trained_keys: set[str] | None = None,
        stage_weights: list[np.ndarray] | None = None,
    ):
        self.backend = backend
        self.backbone = backbone
        self.freeze = freeze
        self.categories = CategoryTable.default()
        self.quality = float(quality)
        self.origin = origin
        self.trained_keys = set(trained_keys or ())
        if stage_weights is None:
            seed_rng = np.random.default_rng(abs(hash(backbone.kind)) % 2**32)
            stage_weights = [seed_rng.normal(size=16) for _ in range(backbone.n_stages)]
        self.stage_weights = stage_weights
        self._fit_count = 0

    # -- contract -----------------------------------------------------------

    def parameter_counts(self) -> tuple[int, int]:
        backbone_total = _BACKBONE_PARAMS[self.backbone.kind]
        frozen = sum(
            int(share * backbone_total)
            for share in _STAGE_SHARES[: self.freeze.frozen_stages]
        )
        total = backbone_total + _HEAD_PARAMS
        return total, total - frozen

    def fit(
        self,
        train: DatasetManifest,
        hyper: TrainHyperparams,
        aug: AugmentSpec | None = None,
    ) -> tuple[ModelCheckpoint, list[float]]:
        if not train.images:
            raise BackendError("training manifest is empty")
        for rec in train.images:
            image = train.load_image(rec)
            anns = train.annotations_for(rec.image_id)
            key = self.backend.oracle.register(image, anns)
            self.trained_keys.add(key)
            resized, resized_anns, _ = resize_record(image, anns, target=hyper.input_size)
            self.trained_keys.add(self.backend.oracle.register(resized, resized_anns))

        fraction = 1.0
        if self.backend.full_train_size:
            fraction = len(train.images) / self.backend.full_train_size
        aug_enabled = aug is not None and aug.enabled
        self.quality = min(
            1.0,
            self.backend.base_quality
            + self.backend.volume_gain * fraction
            + (self.backend.aug_bonus if aug_enabled else 0.0)
            + (self.backend.backbone_bonus if self.backbone.kind == "R101" else 0.0),
        )

        self._fit_count += 1
        rng = np.random.default_rng((self.backend.noise_seed, self._fit_count))
        for stage in range(self.freeze.frozen_stages, self.backbone.n_stages):
            self.stage_weights[stage] = self.stage_weights[stage] + rng.normal(
                scale=0.05, size=16
            )

        curve = [
            (1.6 - 0.9 * self.quality) * math.exp(-0.35 * epoch) + 0.02
            for epoch in range(hyper.epochs)
        ]

        cfg = {
            "backbone": self.backbone.kind,
            "frozen_stages": self.freeze.frozen_stages,
            "hyper": hyper.to_dict(),
            "aug": aug.to_dict() if aug is not None else None,
        }
        checkpoint = self.backend.save_checkpoint(
            self,
            parent=self.origin,
            config_hash=config_hash(cfg),
            train_manifest_hash=manifest_hash(train),
        )
        return checkpoint, curve

    def predict(
        self, image: np.ndarray, score_threshold: float = 0.5
    ) -> list[InstancePrediction]:
        entry = self.backend.oracle.lookup(image)
        if entry is None:
            return []
        width, height, annotations = entry
        key = self.backend.oracle.image_key(image)
        quality = self.quality
        if key in self.trained_keys:
            quality = min(1.0, quality + self.backend.train_boost)
        amp = 1.0 - quality
        noise = self.backend.noise
        rng = np.random.default_rng(
            np.random.SeedSequence([self.backend.noise_seed % 2**63, int(key[:15], 16)])
        )

        preds: list[InstancePrediction] = []
        for ann in annotations:
            u_drop = rng.random()
            shift = rng.normal(size=2)
            dlog = rng.normal()
            u_score = rng.random()
            if u_drop < noise.drop_rate * amp:
                continue
            pred = self._perturbed(ann, amp, shift, dlog, width, height, noise)
            if pred is None:
                continue
            pred.score = max(0.0, min(1.0, 1.0 - amp * u_score))
            preds.append(pred)

        for _ in range(len(annotations) + 2):
            u_gate = rng.random()
            cx = rng.uniform(0.1, 0.9) * width
            cy = rng.uniform(0.1, 0.9) * height
            side = rng.uniform(0.05, 0.2) * min(width, height)
            aspect = rng.uniform(0.6, 1.6)
            cat_pick = int(rng.integers(0, len(self.categories)))
            u_score = rng.random()
            if u_gate >= noise.fp_rate * amp:
                continue
            fp = self._false_positive(cx, cy, side, aspect, cat_pick, width, height)
            if fp is None:
                continue
            fp.score = max(0.0, min(1.0, amp * (0.2 + 0.6 * u_score)))
            preds.append(fp)

        preds = [p for p in preds if p.score >= score_threshold]
        preds.sort(key=lambda p: -p.score)
        return preds[:MAX_DETECTIONS]

    # -- internals ----------------------------------------------------------

    def _perturbed(
        self,
        ann: Annotation,
        amp: float,
        shift: np.ndarray,
        dlog: float,
        width: int,
        height: int,
        noise: StubNoise,
    ) -> InstancePrediction | None:
        mask = ann.rasterize(width, height)
        if amp == 0.0:
            return InstancePrediction(
                image_id=ann.image_id,
                category_id=ann.category_id,
                score=1.0,
                bbox=ann.bbox,
                mask=mask,
            )
        box = ann.bbox
        scale = math.exp(noise.scale_sigma * amp * dlog)
        dx = noise.shift_sigma * amp * shift[0] * box.w
        dy = noise.shift_sigma * amp * shift[1] * box.h
        cx = box.x + box.w / 2.0
        cy = box.y + box.h / 2.0
        new_w = box.w * scale
        new_h = box.h * scale
        new_x = cx - new_w / 2.0 + dx
        new_y = cy - new_h / 2.0 + dy
        try:
            new_box = BBox(new_x, new_y, new_w, new_h).clipped(width, height)
        except Exception:
            return None
        # same map in cv2's integer-index convention (half-pixel correction)
        half = (scale - 1.0) * 0.5
        matrix = np.array(
            [
                [scale, 0.0, dx + (1 - scale) * cx + half],
                [0.0, scale, dy + (1 - scale) * cy + half],
            ]
        )
        jittered = cv2.warpAffine(
            mask.astype(np.uint8), matrix, (width, height), flags=cv2.INTER_NEAREST
        ).astype(bool)
        if not jittered.any():
            x0, y0 = int(new_box.x), int(new_box.y)
            x1 = min(width, int(math.ceil(new_box.x2)))
            y1 = min(height, int(math.ceil(new_box.y2)))
            jittered = np.zeros((height, width), dtype=bool)
            jittered[y0:y1, x0:x1] = True
            if not jittered.any():
                return None
        return InstancePrediction(
            image_id=ann.image_id,
            category_id=ann.category_id,
            score=1.0,
            bbox=new_box,
            mask=jittered,
        )

    def _false_positive(
        self, cx: float, cy: float, side: float, aspect: float,
        cat_pick: int, width: int, height: int,
    ) -> InstancePrediction | None:
        w = side * aspect
        h = side
        try:
            box = BBox(cx - w / 2, cy - h / 2, w, h).clipped(width, height)
        except Exception:
            return None
        mask = np.zeros((height, width), dtype=bool)
        mask[int(box.y) : int(math.ceil(box.y2)), int(box.x) : int(math.ceil(box.x2))] = True
        if not mask.any():
            return None
        category = self.categories.entries[cat_pick]
        return InstancePrediction(
            image_id=None,
            category_id=category.category_id,
            score=0.0,
            bbox=box,
            mask=mask,
        )


class StubBackend(Backend):
    """Deterministic fake backend with volume-linked quality."""

    kind = "stub"

    def __init__(
        self,
        checkpoint_dir: Path | None = None,
        oracle: GroundTruthOracle | None = None,
        noise_seed: int = 0,
        base_quality: float = 0.33,
        volume_gain: float = 0.5,
        aug_bonus: float = 0.05,
        backbone_bonus: float = 0.02,
        train_boost: float = 0.12,
        full_train_size: int | None = None,
        noise: StubNoise = DEFAULT_NOISE,
    ):
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.oracle = oracle or GroundTruthOracle()
        self.noise_seed = noise_seed
        self.base_quality = base_quality
        self.volume_gain = volume_gain
        self.aug_bonus = aug_bonus
        self.backbone_bonus = backbone_bonus
        self.train_boost = train_boost
        self.full_train_size = full_train_size
        self.noise = noise
        self._memory: dict[str, dict] = {}

    def load_pretrained(
        self, weights_ref: str, backbone: BackboneSpec, freeze: FreezePolicy
    ) -> StubModel:
        if weights_ref not in ("Mb", "stub:Mb"):
            raise UnresolvableWeightsError(
                f"stub backend only resolves the baseline 'Mb', got {weights_ref!r}"
            )
        return StubModel(self, backbone, freeze, quality=self.base_quality, origin="Mb")

    def save_checkpoint(
        self,
        model: StubModel,
        parent: str,
        config_hash: str,
        train_manifest_hash: str,
    ) -> ModelCheckpoint:
        state = {
            "kind": "stub",
            "quality": model.quality,
            "backbone": model.backbone.kind,
            "frozen_stages": model.freeze.frozen_stages,
            "trained_keys": sorted(model.trained_keys),
            "stage_weights": [w.tolist() for w in model.stage_weights],
            "oracle": self.oracle.to_dict(),
            "stub_params": {
                "noise_seed": self.noise_seed,
                "base_quality": self.base_quality,
                "volume_gain": self.volume_gain,
                "aug_bonus": self.aug_bonus,
                "backbone_bonus": self.backbone_bonus,
                "train_boost": self.train_boost,
            },
        }
        ref_hash = hashlib.sha256(
            json.dumps([config_hash, train_manifest_hash, parent], default=str).encode()
        ).hexdigest()[:12]
        if self.checkpoint_dir is not None:
            target = self.checkpoint_dir / ref_hash
            target.mkdir(parents=True, exist_ok=True)
            (target / "weights.json").write_text(json.dumps(state))
            weights_ref = str(target)
        else:
            weights_ref = f"stub-mem:{ref_hash}"
            self._memory[weights_ref] = state
        checkpoint = ModelCheckpoint(
            weights_ref=weights_ref,
            parent=parent,
            backbone=model.backbone,
            config_hash=config_hash,
            train_manifest_hash=train_manifest_hash,
            backend_kind=self.kind,
        )
        if self.checkpoint_dir is not None:
            (Path(weights_ref) / "provenance.json").write_text(
                json.dumps(checkpoint.provenance())
            )
        return checkpoint

    def load_checkpoint(
        self, checkpoint: ModelCheckpoint, origin: str | None = None
    ) -> StubModel:
        state = self._load_state(checkpoint.weights_ref)
        if state.get("kind") != "stub":
            raise UnresolvableWeightsError(
                f"checkpoint {checkpoint.weights_ref} is not a stub checkpoint"
            )
        self.oracle.merge(GroundTruthOracle.from_dict(state["oracle"]))
        model = StubModel(
            self,
            BackboneSpec(state["backbone"]),
            FreezePolicy(state["frozen_stages"]),
            quality=state["quality"],
            origin=origin or checkpoint.parent,
            trained_keys=set(state["trained_keys"]),
            stage_weights=[np.array(w) for w in state["stage_weights"]],
        )
        return model

    def _load_state(self, weights_ref: str) -> dict:
        if weights_ref in self._memory:
            return self._memory[weights_ref]
        path = Path(weights_ref) / "weights.json"
        if not path.exists():
            raise UnresolvableWeightsError(f"no stub weights at {weights_ref!r}")
        return json.loads(path.read_text())


def stub_backend(
    quality: float,
    noise_seed: int = 0,
    oracle: GroundTruthOracle | None = None,
    checkpoint_dir: Path | None = None,
) -> StubModel:
    """A ready-to-predict stub handle at a fixed quality level."""
    if not (0.0 <= quality <= 1.0):
        raise ValueError(f"quality must be in [0, 1], got {quality}")
    backend = StubBackend(
        checkpoint_dir=checkpoint_dir,
        oracle=oracle,
        noise_seed=noise_seed,
        base_quality=quality,
    )
    return backend.load_pretrained("Mb", BackboneSpec("R50"), FreezePolicy(1))
