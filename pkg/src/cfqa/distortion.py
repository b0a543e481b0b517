"""True semantic distortion labels from task-head prediction outputs.

Each task has its own label: the ground-truth rank in classification logits,
the mIoU difference between segmentation masks, and the RMSE difference
between depth maps. Two difference modes exist because "difference" can be
read two ways:

- consistency (default): compare the compressed-feature prediction against the
  original-feature prediction directly;
- annotation: compare each prediction against a ground-truth annotation and
  take the accuracy drop.

All labels are oriented so that larger values mean more degradation.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateError, FormatError, ShapeError
from .store import FeatureTensor, Task, load_tensor, save_tensor

IGNORE_LABEL = 255
VOC_NUM_CLASSES = 21  # 20 categories + background

MODE_CONSISTENCY = "consistency"
MODE_ANNOTATION = "annotation"
MODE_RANK = "rank"


@dataclass
class ClsLogits:
    values: np.ndarray
    gt_label: int

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size == 0:
            raise ShapeError("empty logits")
        if not 0 <= self.gt_label < v.size:
            raise ValueError(f"gt_label {self.gt_label} outside 0..{v.size - 1}")
        self.values = v


@dataclass
class SegMask:
    labels: np.ndarray
    num_classes: int = VOC_NUM_CLASSES

    def __post_init__(self) -> None:
        a = np.asarray(self.labels)
        if a.ndim != 2:
            raise ShapeError(f"mask must be 2D, got rank {a.ndim}")
        a = a.astype(np.int64)
        bad = (a != IGNORE_LABEL) & ((a < 0) | (a >= self.num_classes))
        if bad.any():
            raise ValueError("mask labels outside [0, num_classes) and not ignore")
        self.labels = a


@dataclass
class DepthMap:
    values: np.ndarray
    valid_mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeError(f"depth map must be 2D, got rank {v.ndim}")
        mask = (
            np.ones(v.shape, dtype=bool)
            if self.valid_mask is None
            else np.asarray(self.valid_mask, dtype=bool)
        )
        if mask.shape != v.shape:
            raise ShapeError("valid mask shape differs from depth shape")
        if not np.isfinite(v[mask]).all():
            raise ValueError("non-finite depth at valid pixels")
        self.values = v
        self.valid_mask = mask


@dataclass
class DistortionLabel:
    task: Task
    value: float
    mode: str = MODE_CONSISTENCY  # consistency | annotation | rank
    higher_is_worse: bool = True


def cls_rank(logits: ClsLogits) -> DistortionLabel:
    """1-based position of the ground-truth label in the descending logits.

    Ties go to the lower class index, so an undistorted argmax prediction is
    always rank 1.
    """
    v = logits.values
    if np.isnan(v).any():
        raise ValueError("NaN logit")
    gt = logits.gt_label
    rank = 1 + int((v > v[gt]).sum()) + int((v[:gt] == v[gt]).sum())
    return DistortionLabel(task=Task.CLS, value=float(rank), mode=MODE_RANK)


def _check_masks(a: SegMask, b: SegMask) -> None:
    if a.labels.shape != b.labels.shape:
        raise ShapeError(f"mask shapes differ: {a.labels.shape} vs {b.labels.shape}")
    if a.num_classes != b.num_classes:
        raise ShapeError(f"class counts differ: {a.num_classes} vs {b.num_classes}")


def miou(a: SegMask, b: SegMask) -> float:
    """Mean IoU over classes present in either mask, ignoring 255 pixels."""
    _check_masks(a, b)
    nc = a.num_classes
    valid = (a.labels != IGNORE_LABEL) & (b.labels != IGNORE_LABEL)
    av = a.labels[valid]
    bv = b.labels[valid]
    confusion = np.bincount(av * nc + bv, minlength=nc * nc).reshape(nc, nc)
    inter = np.diag(confusion)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - inter
    present = union > 0
    if not present.any():
        raise DegenerateError("no non-ignored pixels")
    return float(np.mean(inter[present] / union[present]))


def delta_miou(
    pred_orig: SegMask,
    pred_comp: SegMask,
    annotation: SegMask | None = None,
    mode: str = MODE_CONSISTENCY,
) -> DistortionLabel:
    """Segmentation distortion: prediction disagreement or annotation-mIoU drop."""
    if mode == MODE_CONSISTENCY:
        value = 1.0 - miou(pred_comp, pred_orig)
    elif mode == MODE_ANNOTATION:
        if annotation is None:
            raise ConfigError("annotation mode needs an annotation mask")
        value = miou(pred_orig, annotation) - miou(pred_comp, annotation)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return DistortionLabel(task=Task.SEG, value=value, mode=mode)


def rmse(a: DepthMap, b: DepthMap) -> float:
    """RMSE over jointly valid pixels, accumulated in float64."""
    if a.values.shape != b.values.shape:
        raise ShapeError(f"depth shapes differ: {a.values.shape} vs {b.values.shape}")
    joint = a.valid_mask & b.valid_mask
    if not joint.any():
        raise DegenerateError("empty joint validity mask")
    d = a.values[joint] - b.values[joint]
    return float(np.sqrt(np.dot(d, d) / d.size))


def delta_rmse(
    pred_orig: DepthMap,
    pred_comp: DepthMap,
    annotation: DepthMap | None = None,
    mode: str = MODE_CONSISTENCY,
) -> DistortionLabel:
    """Depth distortion: direct prediction RMSE or annotation-RMSE increase."""
    if mode == MODE_CONSISTENCY:
        value = rmse(pred_comp, pred_orig)
    elif mode == MODE_ANNOTATION:
        if annotation is None:
            raise ConfigError("annotation mode needs an annotation map")
        value = rmse(pred_comp, annotation) - rmse(pred_orig, annotation)
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return DistortionLabel(task=Task.DPT, value=value, mode=mode)


# ---------------------------------------------------------------------------
# Prediction file formats: logits CSV, masks as P5 PGM, depth as rank-2 CFT.


def write_cls_logits(logits: ClsLogits, path: str | Path) -> None:
    row = [str(logits.gt_label)] + [repr(float(v)) for v in logits.values]
    Path(path).write_text(",".join(row) + "\n", encoding="utf-8")


def read_cls_logits(path: str | Path) -> ClsLogits:
    with open(path, newline="", encoding="utf-8") as fh:
        row = next(csv.reader(fh))
    if len(row) < 2:
        raise FormatError(f"{path}: expected gt_label plus at least one logit")
    return ClsLogits(values=np.array([float(x) for x in row[1:]]), gt_label=int(row[0]))


def write_pgm(values: np.ndarray, path: str | Path) -> None:
    """Binary (P5) PGM with maxval 255; one byte per pixel."""
    a = np.asarray(values)
    if a.ndim != 2:
        raise ShapeError("PGM payload must be 2D")
    if a.min() < 0 or a.max() > 255:
        raise ValueError("PGM values must be in [0, 255]")
    h, w = a.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + a.astype(np.uint8).tobytes(order="C"))


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise FormatError(f"{path}: not a P5 PGM")
    # Header tokens may be separated by any whitespace or comment lines.
    token_re = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")
    tokens: list[bytes] = []
    pos = 2
    while len(tokens) < 3:
        m = token_re.match(raw, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    w, h, maxval = (int(t) for t in tokens)
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported")
    pos += 1  # single whitespace byte before the raster
    data = raw[pos : pos + w * h]
    if len(data) != w * h:
        raise FormatError(f"{path}: raster shorter than {w}x{h}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).astype(np.int64)


def write_seg_mask(mask: SegMask, path: str | Path) -> None:
    write_pgm(mask.labels, path)


def read_seg_mask(path: str | Path, num_classes: int = VOC_NUM_CLASSES) -> SegMask:
    return SegMask(labels=read_pgm(path), num_classes=num_classes)


def write_depth(depth: DepthMap, path: str | Path, mask_path: str | Path | None = None) -> None:
    """Depth as a rank-2 CFT; invalid pixels are stored as 0 with the mask aside."""
    values = np.where(depth.valid_mask, depth.values, 0.0).astype(np.float32)
    save_tensor(FeatureTensor(id=Path(path).stem, task=Task.SYNTHETIC, values=values), path)
    if mask_path is not None:
        write_pgm(depth.valid_mask.astype(np.uint8), mask_path)


def read_depth(path: str | Path, mask_path: str | Path | None = None) -> DepthMap:
    t = load_tensor(path)
    if len(t.shape) != 2:
        raise ShapeError(f"depth CFT must be rank 2, got rank {len(t.shape)}")
    mask = None if mask_path is None else read_pgm(mask_path) != 0
    return DepthMap(values=t.values.astype(np.float64), valid_mask=mask)
