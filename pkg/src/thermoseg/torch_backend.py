"""Real trainable backend on torchvision's region-proposal segmentation model.

Optional: importing this module requires the ``torch`` extra.  The
architecture itself is an imported component; this adapter wires it to
the backend contract (category-table head reshape, backbone-stage
freezing, letterboxed training batches, checkpoint provenance).

Hyperparameter mapping notes: ``train_roi`` maps to the box head's
per-image RoI batch; ``mask_head_train_roi`` and ``max_gt_per_image``
have no direct torchvision knob and are recorded in provenance only.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .augment import AugmentSpec, apply_pipeline
from .backend import (
    Backend,
    BackboneSpec,
    BackendError,
    FreezePolicy,
    ModelCheckpoint,
    OptimizerSpec,
    SegmentationModel,
    TrainHyperparams,
    TrainingDivergedError,
    UnresolvableWeightsError,
    config_hash,
    manifest_hash,
)
from .geometry import BBox, mask_to_bbox
from .manifest import CategoryTable, DatasetManifest
from .predictions import InstancePrediction
from .resize import resize_record

try:
    import torch
    from torchvision.models.detection import MaskRCNN, maskrcnn_resnet50_fpn
    from torchvision.models.detection.backbone_utils import resnet_fpn_backbone

    TORCH_AVAILABLE = True
except ImportError:  # pragma: no cover - environment without the torch extra
    TORCH_AVAILABLE = False

MAX_DETECTIONS = 100
_STAGE_MODULES = ("conv1", "layer1", "layer2", "layer3", "layer4")  # body stage order


def _require_torch() -> None:
    if not TORCH_AVAILABLE:
        raise BackendError("torch/torchvision are not installed (install the 'torch' extra)")


def _build_model(backbone: BackboneSpec, num_classes: int, input_size: int):
    if backbone.kind == "R50":
        return maskrcnn_resnet50_fpn(
            weights=None,
            weights_backbone=None,
            num_classes=num_classes,
            min_size=input_size,
            max_size=input_size,
            box_detections_per_img=MAX_DETECTIONS,
        )
    body = resnet_fpn_backbone(backbone_name="resnet101", weights=None)
    return MaskRCNN(
        body,
        num_classes=num_classes,
        min_size=input_size,
        max_size=input_size,
        box_detections_per_img=MAX_DETECTIONS,
    )


class TorchvisionModel(SegmentationModel):
    def __init__(
        self,
        backend: "TorchvisionBackend",
        net,
        backbone: BackboneSpec,
        freeze: FreezePolicy,
        origin: str = "Mb",
    ):
        self.backend = backend
        self._net = net
        self.backbone = backbone
        self.freeze = freeze
        self.categories = CategoryTable.default()
        self.origin = origin
        self.optimizer = OptimizerSpec()
        self._apply_freeze()

    def _apply_freeze(self) -> None:
        body = self._net.backbone.body
        frozen = _STAGE_MODULES[: self.freeze.frozen_stages]
        for name, module in body.named_children():
            requires_grad = name not in frozen and name not in ("bn1",)
            if name == "bn1":  # stem batchnorm freezes with the stem conv
                requires_grad = "conv1" not in frozen
            for param in module.parameters():
                param.requires_grad_(requires_grad)

    def parameter_counts(self) -> tuple[int, int]:
        total = sum(p.numel() for p in self._net.parameters())
        trainable = sum(p.numel() for p in self._net.parameters() if p.requires_grad)
        return total, trainable

    def frozen_parameter_snapshot(self) -> dict[str, np.ndarray]:
        return {
            name: param.detach().cpu().numpy().copy()
            for name, param in self._net.named_parameters()
            if not param.requires_grad
        }

    def _make_optimizer(self):
        params = [p for p in self._net.parameters() if p.requires_grad]
        if self.optimizer.kind == "Adam":
            return torch.optim.Adam(
                params, lr=self.optimizer.learning_rate,
                weight_decay=self.optimizer.weight_decay,
            )
        return torch.optim.SGD(
            params,
            lr=self.optimizer.learning_rate,
            momentum=self.optimizer.momentum,
            weight_decay=self.optimizer.weight_decay,
        )

    def fit(
        self,
        train: DatasetManifest,
        hyper: TrainHyperparams,
        aug: AugmentSpec | None = None,
    ) -> tuple[ModelCheckpoint, list[float]]:
        _require_torch()
        if not train.images:
            raise BackendError("training manifest is empty")
        if hasattr(self._net.roi_heads, "batch_size_per_image"):
            self._net.roi_heads.batch_size_per_image = hyper.train_roi

        rng = np.random.default_rng(self.backend.seed)
        device = self.backend.device
        self._net.to(device).train()
        optimizer = self._make_optimizer()

        curve: list[float] = []
        for epoch in range(hyper.epochs):
            order = rng.permutation(len(train.images))
            epoch_losses: list[float] = []
            for start in range(0, len(order), hyper.batch_size):
                batch = [train.images[i] for i in order[start : start + hyper.batch_size]]
                images, targets = [], []
                for rec in batch:
                    tensor, target = self._prepare_example(train, rec, hyper, aug, rng)
                    if target is None:
                        continue
                    images.append(tensor.to(device))
                    targets.append({k: v.to(device) for k, v in target.items()})
                if not images:
                    continue
                losses = self._net(images, targets)
                loss = sum(losses.values())
                value = float(loss.detach().cpu())
                if not math.isfinite(value):
                    raise TrainingDivergedError(epoch, value)
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                epoch_losses.append(value)
            curve.append(sum(epoch_losses) / max(1, len(epoch_losses)))

        cfg = {
            "backbone": self.backbone.kind,
            "frozen_stages": self.freeze.frozen_stages,
            "optimizer": self.optimizer.kind,
            "learning_rate": self.optimizer.learning_rate,
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

    def _prepare_example(self, manifest, rec, hyper, aug, rng):
        image = manifest.load_image(rec)
        annotations = manifest.annotations_for(rec.image_id)
        if aug is not None and aug.enabled:
            image, annotations = apply_pipeline(image, annotations, aug, rng)
        image, annotations, _ = resize_record(image, annotations, target=hyper.input_size)
        annotations = annotations[: hyper.max_gt_per_image]
        boxes, labels, masks = [], [], []
        h, w = image.shape[:2]
        for a in annotations:
            mask = a.rasterize(w, h)
            if not mask.any():
                continue
            box = mask_to_bbox(mask)
            boxes.append([box.x, box.y, box.x2, box.y2])
            labels.append(a.category_id)
            masks.append(mask)
        if not boxes:
            return None, None
        tensor = torch.from_numpy(image.astype(np.float32) / 255.0)[None].repeat(3, 1, 1)
        target = {
            "boxes": torch.tensor(boxes, dtype=torch.float32),
            "labels": torch.tensor(labels, dtype=torch.int64),
            "masks": torch.from_numpy(np.stack(masks).astype(np.uint8)),
        }
        return tensor, target

    def predict(
        self, image: np.ndarray, score_threshold: float = 0.5
    ) -> list[InstancePrediction]:
        _require_torch()
        self._net.eval()
        tensor = torch.from_numpy(image.astype(np.float32) / 255.0)[None].repeat(3, 1, 1)
        with torch.inference_mode():
            output = self._net([tensor.to(self.backend.device)])[0]
        h, w = image.shape[:2]
        preds: list[InstancePrediction] = []
        for box, label, score, mask in zip(
            output["boxes"].cpu().numpy(),
            output["labels"].cpu().numpy(),
            output["scores"].cpu().numpy(),
            output["masks"].cpu().numpy(),
        ):
            if score < score_threshold:
                continue
            x1, y1, x2, y2 = [float(v) for v in box]
            x1, x2 = max(0.0, x1), min(float(w), x2)
            y1, y2 = max(0.0, y1), min(float(h), y2)
            if x2 <= x1 or y2 <= y1:
                continue
            binary = mask[0] >= 0.5
            if not binary.any():
                continue
            preds.append(
                InstancePrediction(
                    image_id=None,
                    category_id=int(label),
                    score=float(min(1.0, max(0.0, score))),
                    bbox=BBox(x1, y1, x2 - x1, y2 - y1),
                    mask=binary,
                )
            )
        preds.sort(key=lambda p: -p.score)
        return preds[:MAX_DETECTIONS]


class TorchvisionBackend(Backend):
    kind = "torchvision"

    def __init__(
        self,
        checkpoint_dir: Path | None = None,
        device: str = "cpu",
        input_size: int = 512,
        seed: int = 0,
    ):
        _require_torch()
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.device = device
        self.input_size = input_size
        self.seed = seed

    def load_pretrained(
        self, weights_ref: str, backbone: BackboneSpec, freeze: FreezePolicy
    ) -> TorchvisionModel:
        num_classes = len(CategoryTable.default()) + 1  # categories plus background
        net = _build_model(backbone, num_classes, self.input_size)
        if weights_ref in ("random", "Mb"):
            pass  # fresh initialization; "Mb" placeholder when no weights file is mounted
        elif Path(weights_ref).exists():
            state = torch.load(weights_ref, map_location=self.device, weights_only=True)
            compatible = {
                k: v
                for k, v in state.items()
                if k in net.state_dict() and net.state_dict()[k].shape == v.shape
            }
            net.load_state_dict(compatible, strict=False)
        else:
            raise UnresolvableWeightsError(f"cannot resolve weights {weights_ref!r}")
        torch.manual_seed(self.seed)
        return TorchvisionModel(self, net, backbone, freeze)

    def save_checkpoint(
        self, model: TorchvisionModel, parent: str, config_hash: str, train_manifest_hash: str
    ) -> ModelCheckpoint:
        if self.checkpoint_dir is None:
            raise BackendError("torchvision backend needs a checkpoint directory to fit")
        ref_hash = config_hash[:8] + train_manifest_hash[:8]
        target = self.checkpoint_dir / ref_hash
        target.mkdir(parents=True, exist_ok=True)
        torch.save(model._net.state_dict(), target / "weights.pth")
        (target / "meta.json").write_text(
            json.dumps(
                {"backbone": model.backbone.kind, "frozen_stages": model.freeze.frozen_stages}
            )
        )
        checkpoint = ModelCheckpoint(
            weights_ref=str(target),
            parent=parent,
            backbone=model.backbone,
            config_hash=config_hash,
            train_manifest_hash=train_manifest_hash,
            backend_kind=self.kind,
        )
        (target / "provenance.json").write_text(json.dumps(checkpoint.provenance()))
        return checkpoint

    def load_checkpoint(
        self, checkpoint: ModelCheckpoint, origin: str | None = None
    ) -> TorchvisionModel:
        ref = Path(checkpoint.weights_ref)
        meta_path = ref / "meta.json"
        weights_path = ref / "weights.pth"
        if not weights_path.exists():
            raise UnresolvableWeightsError(f"no weights at {checkpoint.weights_ref!r}")
        meta = json.loads(meta_path.read_text())
        backbone = BackboneSpec(meta["backbone"])
        freeze = FreezePolicy(meta["frozen_stages"])
        net = _build_model(backbone, len(CategoryTable.default()) + 1, self.input_size)
        net.load_state_dict(torch.load(weights_path, map_location=self.device, weights_only=True))
        return TorchvisionModel(self, net, backbone, freeze, origin=origin or checkpoint.parent)
