import os
import json
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from pydantic import BaseModel, Field, ValidationError

from .colormap import ColorMap, cityscapes_colormap, encode_labels, load_colormap
from .data_pipeline import from_uint8, load_image, to_uint8
from .errors import ConfigError, EmptyDatasetError, InvalidInputError
from .manifest import DatasetManifest
from .networks import load_model_state, read_checkpoint, translate

Protocol = Literal["segmentation", "maps"]
Direction = Literal["x2y", "y2x"]

IGNORE_LABEL: int = 255
MAPS_THRESHOLD: float = 20.0
DECODE_CHUNK: int = 65536  # pixels per distance block

ImageLike = Union[np.ndarray, torch.Tensor]


# --- conversions ---
def _as_rgb_uint8(image: ImageLike) -> np.ndarray:
    """(3, H, W) tensor in [-1, 1] or (H, W, 3) array on the 0-255 scale -> (H, W, 3) array."""
    if isinstance(image, torch.Tensor):
        return to_uint8(image)
    arr = np.asarray(image)
    if arr.ndim != 3 or arr.shape[-1] != 3:
        raise InvalidInputError(f"Expected an (H, W, 3) RGB array, got shape {arr.shape}")
    return arr


def _read_rgb(path: Union[str, Path]) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8).copy()


def decode_labels_nearest_color(image: ImageLike, colormap: ColorMap) -> np.ndarray:
    """Per pixel, the class whose color is nearest in RGB (Euclidean); ties go to the lowest id."""
    if colormap is None or colormap.n_classes == 0:
        raise ConfigError("Nearest-color decoding needs a non-empty colormap")
    rgb = _as_rgb_uint8(image)
    h, w, _ = rgb.shape
    pixels = rgb.reshape(-1, 3).astype(np.float64)
    colors = colormap.colors().astype(np.float64)
    out = np.empty(pixels.shape[0], dtype=np.int64)
    for start in range(0, pixels.shape[0], DECODE_CHUNK):
        block = pixels[start : start + DECODE_CHUNK]
        diff = block[:, None, :] - colors[None, :, :]
        # squared distances are integers here, so equal distances compare equal
        out[start : start + DECODE_CHUNK] = np.argmin(np.einsum("ijk,ijk->ij", diff, diff), axis=1)
    return out.reshape(h, w)


def decode_labels_exact(image: ImageLike, colormap: ColorMap) -> np.ndarray:
    """Ground-truth decoding: exact color matches only, anything else becomes IGNORE_LABEL."""
    rgb = _as_rgb_uint8(image).astype(np.int64)
    keys = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
    out = np.full(keys.shape, IGNORE_LABEL, dtype=np.int64)
    for class_id, (r, g, b) in enumerate(colormap.colors()):
        out[keys == ((int(r) << 16) | (int(g) << 8) | int(b))] = class_id
    return out


def resize_for_eval(pred: ImageLike, target_hw: Tuple[int, int]) -> ImageLike:
    """Bicubic resize of a predicted color image to the ground-truth resolution."""
    target_hw = (int(target_hw[0]), int(target_hw[1]))
    if isinstance(pred, torch.Tensor):
        if tuple(pred.shape[-2:]) == target_hw:
            return pred
        batched = pred.unsqueeze(0) if pred.ndim == 3 else pred
        out = F.interpolate(batched.float(), size=target_hw, mode="bicubic", align_corners=False)
        out = out.clamp(-1.0, 1.0)
        return out[0] if pred.ndim == 3 else out
    arr = _as_rgb_uint8(pred)
    if arr.shape[:2] == target_hw:
        return arr
    return to_uint8(resize_for_eval(from_uint8(arr), target_hw))


# --- metrics ---
@dataclass
class SegMetrics:
    pixel_accuracy: float
    mean_class_accuracy: float
    mean_iou: float
    confusion: np.ndarray  # rows: ground truth, columns: prediction
    per_class_accuracy: np.ndarray  # nan for classes absent from ground truth
    per_class_iou: np.ndarray

    @classmethod
    def from_confusion(cls, confusion: np.ndarray) -> "SegMetrics":
        confusion = np.asarray(confusion, dtype=np.int64)
        total = int(confusion.sum())
        if total == 0:
            raise InvalidInputError("No evaluated pixels (everything is ignored)")
        diag = np.diag(confusion).astype(np.float64)
        gt_count = confusion.sum(axis=1).astype(np.float64)
        pred_count = confusion.sum(axis=0).astype(np.float64)
        present = gt_count > 0
        class_acc = np.full(confusion.shape[0], np.nan)
        class_iou = np.full(confusion.shape[0], np.nan)
        class_acc[present] = diag[present] / gt_count[present]
        class_iou[present] = diag[present] / (gt_count[present] + pred_count[present] - diag[present])
        return cls(
            pixel_accuracy=float(diag.sum() / total),
            mean_class_accuracy=float(class_acc[present].mean()),
            mean_iou=float(class_iou[present].mean()),
            confusion=confusion,
            per_class_accuracy=class_acc,
            per_class_iou=class_iou,
        )

    def as_dict(self) -> Dict[str, float]:
        return {
            "pixel_accuracy": self.pixel_accuracy,
            "mean_class_accuracy": self.mean_class_accuracy,
            "mean_iou": self.mean_iou,
        }


def confusion_matrix(pred_classes: np.ndarray, gt_classes: np.ndarray, n_classes: int) -> np.ndarray:
    pred = np.asarray(pred_classes, dtype=np.int64)
    gt = np.asarray(gt_classes, dtype=np.int64)
    if pred.shape != gt.shape:
        raise InvalidInputError(f"Shape mismatch: prediction {pred.shape} vs ground truth {gt.shape}")
    valid = gt != IGNORE_LABEL
    gt, pred = gt[valid], pred[valid]
    if gt.size and (gt.min() < 0 or gt.max() >= n_classes):
        raise InvalidInputError(f"Ground truth holds class ids outside [0, {n_classes})")
    if pred.size and (pred.min() < 0 or pred.max() >= n_classes):
        raise InvalidInputError(f"Prediction holds class ids outside [0, {n_classes})")
    counts = np.bincount(gt * n_classes + pred, minlength=n_classes * n_classes)
    return counts.reshape(n_classes, n_classes)


def segmentation_metrics(pred_classes: np.ndarray, gt_classes: np.ndarray, n_classes: int) -> SegMetrics:
    """Pixel accuracy, mean class accuracy and mean IoU over classes present in ground truth."""
    return SegMetrics.from_confusion(confusion_matrix(pred_classes, gt_classes, n_classes))


def maps_pixel_accuracy(pred: ImageLike, gt: ImageLike, threshold: float = MAPS_THRESHOLD) -> float:
    """Fraction of pixels whose largest per-channel absolute difference is strictly below threshold."""
    pred_arr = _as_rgb_uint8(pred).astype(np.float64)
    gt_arr = _as_rgb_uint8(gt).astype(np.float64)
    if pred_arr.shape != gt_arr.shape:
        raise InvalidInputError(f"Shape mismatch: prediction {pred_arr.shape} vs ground truth {gt_arr.shape}")
    diff = np.abs(pred_arr - gt_arr).max(axis=-1)
    return float(np.mean(diff < threshold))


# --- reports ---
class ImageScore(BaseModel):
    id: str
    metrics: Dict[str, float]


class EvalReport(BaseModel):
    protocol: Protocol
    direction: Direction = "x2y"
    checkpoint: Optional[str] = None
    manifest: Optional[str] = None
    n_images: int = 0
    threshold: Optional[float] = None
    class_names: List[str] = Field(default_factory=list)
    rows: List[ImageScore] = Field(default_factory=list)
    skipped: List[str] = Field(default_factory=list)  # ids with no evaluable pixels
    aggregate: Dict[str, float] = Field(default_factory=dict)
    pooled: Dict[str, float] = Field(default_factory=dict)
    pooled_class_iou: List[Optional[float]] = Field(default_factory=list)
    run_info: Dict[str, Any] = Field(default_factory=dict)


# --- protocol workers ---
class BaseProtocolWorker(ABC):
    """Abstract base class for one scoring protocol."""

    name: str = ""
    requires_colormap: bool = False

    @abstractmethod
    def score_image(self, pred: np.ndarray, gt: np.ndarray) -> Tuple[Dict[str, float], Optional[np.ndarray]]:
        """Scores one (prediction, ground truth) RGB pair; returns metrics and an optional confusion."""
        pass

    def pooled(self, confusion: Optional[np.ndarray]) -> Dict[str, float]:
        return {}


class SegmentationWorker(BaseProtocolWorker):
    name = "segmentation"
    requires_colormap = True

    def __init__(self, colormap: ColorMap):
        self.colormap = colormap

    def score_image(self, pred: np.ndarray, gt: np.ndarray) -> Tuple[Dict[str, float], Optional[np.ndarray]]:
        pred = resize_for_eval(pred, gt.shape[:2])
        pred_classes = decode_labels_nearest_color(pred, self.colormap)
        gt_classes = decode_labels_exact(gt, self.colormap)
        confusion = confusion_matrix(pred_classes, gt_classes, self.colormap.n_classes)
        if confusion.sum() == 0:
            # ground truth entirely void
            return {}, confusion
        return SegMetrics.from_confusion(confusion).as_dict(), confusion

    def pooled(self, confusion: Optional[np.ndarray]) -> Dict[str, float]:
        return SegMetrics.from_confusion(confusion).as_dict() if confusion is not None else {}


class MapsWorker(BaseProtocolWorker):
    name = "maps"

    def __init__(self, threshold: float = MAPS_THRESHOLD):
        self.threshold = threshold

    def score_image(self, pred: np.ndarray, gt: np.ndarray) -> Tuple[Dict[str, float], Optional[np.ndarray]]:
        pred = resize_for_eval(pred, gt.shape[:2])
        return {"pixel_accuracy": maps_pixel_accuracy(pred, gt, self.threshold)}, None


class ProtocolDispatcher:
    """Picks the scoring worker for a protocol name and checks its colormap requirement."""

    def __init__(self, colormap: Optional[ColorMap] = None, threshold: float = MAPS_THRESHOLD):
        self.colormap = colormap
        self.threshold = threshold

    def dispatch(self, protocol: str) -> BaseProtocolWorker:
        if protocol == "segmentation":
            if self.colormap is None:
                raise ConfigError("The segmentation protocol needs a colormap")
            return SegmentationWorker(self.colormap)
        if protocol == "maps":
            if self.colormap is not None:
                raise ConfigError("The maps protocol compares colors directly; do not pass a colormap")
            return MapsWorker(self.threshold)
        raise ConfigError(f"Unknown protocol '{protocol}', expected 'segmentation' or 'maps'")


def score_predictions(
    pairs: Iterable[Tuple[str, ImageLike, ImageLike]],
    protocol: Protocol,
    colormap: Optional[ColorMap] = None,
    threshold: float = MAPS_THRESHOLD,
    max_workers: int = 4,
) -> EvalReport:
    """Scores (id, prediction, ground truth) triples; aggregate = mean of the per-image rows."""
    worker = ProtocolDispatcher(colormap, threshold).dispatch(protocol)
    items = [(sid, _as_rgb_uint8(pred), _as_rgb_uint8(gt)) for sid, pred, gt in pairs]
    if not items:
        raise EmptyDatasetError("Nothing to evaluate")

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(lambda item: worker.score_image(item[1], item[2]), items))

    rows: List[ImageScore] = []
    skipped: List[str] = []
    for (sid, _, _), (metrics, _) in zip(items, results):
        if not metrics:
            logging.warning(f"Image '{sid}' has no pixels in colormap colors; left out of the per-image means.")
            skipped.append(sid)
            continue
        rows.append(ImageScore(id=sid, metrics=metrics))
    if not rows:
        raise EmptyDatasetError("No image has pixels to evaluate")

    keys = list(rows[0].metrics)
    aggregate = {k: float(np.mean([r.metrics[k] for r in rows])) for k in keys}

    confusion: Optional[np.ndarray] = None
    for _, conf in results:
        if conf is not None:
            confusion = conf if confusion is None else confusion + conf
    pooled_class_iou: List[Optional[float]] = []
    if confusion is not None:
        per_class = SegMetrics.from_confusion(confusion).per_class_iou
        pooled_class_iou = [None if np.isnan(v) else float(v) for v in per_class]

    return EvalReport(
        protocol=protocol,
        n_images=len(rows),
        threshold=threshold if protocol == "maps" else None,
        class_names=colormap.names() if colormap is not None else [],
        rows=rows,
        skipped=skipped,
        aggregate=aggregate,
        pooled=worker.pooled(confusion),
        pooled_class_iou=pooled_class_iou,
    )


def save_report(report: EvalReport, path: Union[str, Path]) -> None:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
    with open(tmp_path, "w", encoding="utf-8") as f:
        json.dump(report.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp_path, out_path)


def load_report(path: Union[str, Path]) -> EvalReport:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return EvalReport.model_validate(json.load(f))
    except (json.JSONDecodeError, ValidationError, OSError) as e:
        logging.error(f"Error loading report '{path}': {e}")
        raise ConfigError(f"Cannot load report '{path}': {e}") from e


def _generator_size(h: int, w: int) -> Tuple[int, int]:
    return max(4, h - h % 4), max(4, w - w % 4)


def evaluate(
    checkpoint: Union[str, Path],
    manifest: DatasetManifest,
    protocol: Protocol,
    colormap: Optional[ColorMap] = None,
    out: Optional[Union[str, Path]] = None,
    direction: Direction = "x2y",
    save_images: Optional[Union[str, Path]] = None,
    threshold: float = MAPS_THRESHOLD,
    device: str = "cpu",
) -> EvalReport:
    """
    Translates every paired sample of the manifest with the checkpoint's generator and scores
    the outputs against the other half of the pair.
    """
    if protocol == "segmentation":
        if direction != "x2y":
            raise ConfigError("The segmentation protocol scores label images; use direction x2y")
        colormap = colormap or manifest.get_colormap()
    elif protocol == "maps" and colormap is not None:
        raise ConfigError("The maps protocol compares colors directly; do not pass a colormap")
    if not manifest.paired:
        raise EmptyDatasetError("Evaluation manifest lists no pairs")
    manifest.validate_files()

    run_info = read_checkpoint(checkpoint).get("run_info") or {}
    models = load_model_state(checkpoint, device)
    generator = models.g_xy if direction == "x2y" else models.g_yx

    pairs: List[Tuple[str, np.ndarray, np.ndarray]] = []
    for entry in manifest.paired:
        src_path, tgt_path = (entry.path_x, entry.path_y) if direction == "x2y" else (entry.path_y, entry.path_x)
        source = load_image(manifest.resolve(src_path))
        target = _read_rgb(manifest.resolve(tgt_path))
        h, w = source.shape[-2:]
        fitted = F.interpolate(source.unsqueeze(0), size=_generator_size(h, w), mode="bicubic", align_corners=False)
        pred = to_uint8(translate(generator, fitted.clamp(-1.0, 1.0)))
        if save_images is not None:
            img_dir = Path(save_images)
            img_dir.mkdir(parents=True, exist_ok=True)
            Image.fromarray(pred).save(img_dir / f"{entry.id}.png", format="PNG")
        pairs.append((entry.id, pred, target))

    report = score_predictions(pairs, protocol, colormap, threshold)
    report.direction = direction
    report.checkpoint = str(checkpoint)
    report.manifest = manifest.name
    report.run_info = run_info
    if out is not None:
        save_report(report, out)
        logging.info(f"Evaluation report written to {out}")
    logging.info(f"Evaluated {report.n_images} images ({protocol}, {direction}): {report.aggregate}")
    return report


# --- summaries over repeated runs ---
class SummaryRow(BaseModel):
    strategy: str
    n_paired: int
    n_runs: int
    mean: Dict[str, float]
    std: Dict[str, float]


def summarize_reports(paths: Sequence[Union[str, Path]]) -> List[SummaryRow]:
    """Groups reports by (selection strategy, paired count); mean and population std per metric."""
    groups: Dict[Tuple[str, int], List[EvalReport]] = {}
    for path in paths:
        report = load_report(path)
        strategy = str(report.run_info.get("strategy", "none"))
        n_paired = int(report.run_info.get("n_paired", 0))
        groups.setdefault((strategy, n_paired), []).append(report)
    if not groups:
        raise EmptyDatasetError("No reports to summarize")

    rows: List[SummaryRow] = []
    for (strategy, n_paired), reports in sorted(groups.items()):
        keys = sorted(set.intersection(*(set(r.aggregate) for r in reports)))
        values = {k: np.array([r.aggregate[k] for r in reports]) for k in keys}
        rows.append(
            SummaryRow(
                strategy=strategy,
                n_paired=n_paired,
                n_runs=len(reports),
                mean={k: float(v.mean()) for k, v in values.items()},
                std={k: float(v.std()) for k, v in values.items()},
            )
        )
    return rows


__all__ = [
    "BaseProtocolWorker",
    "EvalReport",
    "IGNORE_LABEL",
    "ProtocolDispatcher",
    "SegMetrics",
    "SummaryRow",
    "cityscapes_colormap",
    "decode_labels_exact",
    "decode_labels_nearest_color",
    "encode_labels",
    "evaluate",
    "load_colormap",
    "load_report",
    "maps_pixel_accuracy",
    "resize_for_eval",
    "save_report",
    "score_predictions",
    "segmentation_metrics",
    "summarize_reports",
]
