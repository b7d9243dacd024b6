"""Lung mask ingestion, left/right splitting, fallback segmentation, Dice.

Masks use the palette {0: background, 1: right lung, 2: left lung}. Side
assignment follows the radiological LPS convention: the component whose
physical centroid has the smaller x coordinate is the patient's right
lung. Pass ``flip_lr=True`` for data stored with the opposite handedness.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import (
    AmbiguousLabelsError,
    EmptyMaskError,
    GeometryError,
    SegmentationFailedError,
)
from .nifti import ImageVolume, LabelVolume, read_labels

log = logging.getLogger(__name__)

LUNG_PALETTE = {0: "background", 1: "right_lung", 2: "left_lung"}
RIGHT, LEFT = 1, 2

# 6-connectivity: faces only, the smallest 3D structuring element.
_STRUCT6 = ndimage.generate_binary_structure(3, 1)


@dataclass(eq=False)
class LungMask:
    volume: LabelVolume
    source: str  # external_file | fallback_segmenter | manual
    voxel_counts: dict[int, int]

    def __post_init__(self):
        bad = set(np.unique(self.volume.data)) - {0, RIGHT, LEFT}
        if bad:
            raise AmbiguousLabelsError(f"lung mask holds labels {sorted(bad)}")
        if self.foreground_count == 0:
            raise EmptyMaskError("lung mask has no foreground voxels")

    @property
    def foreground_count(self) -> int:
        return self.voxel_counts.get(RIGHT, 0) + self.voxel_counts.get(LEFT, 0)

    @property
    def geometry(self):
        return self.volume.geometry


def _as_lung_mask(data: np.ndarray, geometry, source: str) -> LungMask:
    vol = LabelVolume(geometry, data.astype(np.uint8), palette=dict(LUNG_PALETTE))
    return LungMask(vol, source, vol.counts())


def _centroid_x_mm(fg_labels: np.ndarray, component: int, geometry) -> float:
    idx = np.argwhere(fg_labels == component)
    centroid = idx.mean(axis=0)
    return float(geometry.voxel_to_mm(centroid)[0])


def split_left_right(binary_mask: LabelVolume, flip_lr: bool = False,
                     source: str = "external_file") -> LungMask:
    """Split a binary foreground into right/left lungs by 6-connectivity.

    The two largest components are kept; with a single component the mask
    degenerates to label 1 with a warning instead of failing.
    """
    fg = binary_mask.data > 0
    if not fg.any():
        raise EmptyMaskError("binary mask is empty")
    comps, n = ndimage.label(fg, structure=_STRUCT6)
    if n == 1:
        log.warning("single connected component; degenerate anatomy, kept as label 1")
        return _as_lung_mask(comps.astype(np.uint8), binary_mask.geometry, source)
    sizes = ndimage.sum_labels(fg, comps, index=np.arange(1, n + 1))
    order = np.argsort(-sizes, kind="stable")  # ties broken by component id
    keep = [int(order[0]) + 1, int(order[1]) + 1]
    x0 = _centroid_x_mm(comps, keep[0], binary_mask.geometry)
    x1 = _centroid_x_mm(comps, keep[1], binary_mask.geometry)
    right_comp = keep[0] if x0 <= x1 else keep[1]
    left_comp = keep[1] if right_comp == keep[0] else keep[0]
    if flip_lr:
        right_comp, left_comp = left_comp, right_comp
    data = np.zeros(binary_mask.geometry.dims, dtype=np.uint8)
    data[comps == right_comp] = RIGHT
    data[comps == left_comp] = LEFT
    return _as_lung_mask(data, binary_mask.geometry, source)


def ingest_mask(vol: LabelVolume, binarize_threshold: int | None = None,
                flip_lr: bool = False, source: str = "external_file") -> LungMask:
    """Normalize an arbitrary label volume into a LungMask.

    Already-labelled {0,1,2} volumes pass through untouched; binary or
    single-foreground-label volumes are split into sides; any other label
    set needs ``binarize_threshold`` (foreground = labels >= threshold).
    """
    labels = set(LabelVolume.occurring_labels(vol.data))
    foreground = sorted(labels - {0})
    if binarize_threshold is not None:
        fg = vol.data >= binarize_threshold
        if not fg.any():
            raise EmptyMaskError(f"no labels >= {binarize_threshold}")
        binary = LabelVolume(vol.geometry, fg.astype(np.uint8))
        return split_left_right(binary, flip_lr=flip_lr, source=source)
    if not foreground:
        raise EmptyMaskError("label volume is all background")
    if foreground == [RIGHT, LEFT]:
        return _as_lung_mask(vol.data, vol.geometry, source)
    if len(foreground) == 1:
        binary = LabelVolume(vol.geometry, (vol.data > 0).astype(np.uint8))
        return split_left_right(binary, flip_lr=flip_lr, source=source)
    if len(foreground) == 2:
        # two foreground labels with unknown semantics: reassign sides by centroid
        data = vol.data
        xa = _centroid_x_mm((data == foreground[0]).astype(np.int32), 1, vol.geometry)
        xb = _centroid_x_mm((data == foreground[1]).astype(np.int32), 1, vol.geometry)
        right_label = foreground[0] if xa <= xb else foreground[1]
        if flip_lr:
            right_label = foreground[1] if right_label == foreground[0] else foreground[0]
        out = np.zeros(vol.geometry.dims, dtype=np.uint8)
        out[data == right_label] = RIGHT
        out[(data > 0) & (data != right_label)] = LEFT
        return _as_lung_mask(out, vol.geometry, source)
    raise AmbiguousLabelsError(
        f"{len(foreground)} foreground labels {foreground} and no remap rule; "
        "pass binarize_threshold")


def _otsu_threshold(values: np.ndarray) -> float | None:
    """Classic 256-bin Otsu; None when the input has no contrast."""
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return None
    hist, edges = np.histogram(values, bins=256, range=(lo, hi))
    p = hist.astype(np.float64) / hist.sum()
    centers = (edges[:-1] + edges[1:]) / 2.0
    w0 = np.cumsum(p)
    w1 = 1.0 - w0
    m0 = np.cumsum(p * centers)
    m_total = m0[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        mu0 = m0 / w0
        mu1 = (m_total - m0) / w1
        between = w0 * w1 * (mu0 - mu1) ** 2
    between[~np.isfinite(between)] = -1.0
    k = int(np.argmax(between))
    if between[k] <= 0:
        return None
    return float(centers[k])


def fallback_segment(img: ImageVolume, flip_lr: bool = False) -> LungMask:
    """Classical threshold segmenter for desk-scale runs.

    Assumes hypointense lung parenchyma inside a brighter chest wall:
    body = filled largest bright component, lung candidates = dark voxels
    inside the body, then radius-1 closing and the two largest components.
    """
    data = np.asarray(img.data, dtype=np.float64)
    thr = _otsu_threshold(data.ravel())
    if thr is None:
        raise SegmentationFailedError("image has no intensity contrast")
    bright = data > thr
    if not bright.any():
        raise SegmentationFailedError("no bright voxels above global threshold")
    comps, n = ndimage.label(bright, structure=_STRUCT6)
    sizes = ndimage.sum_labels(bright, comps, index=np.arange(1, n + 1))
    body = comps == (int(np.argmax(sizes)) + 1)
    body = ndimage.binary_fill_holes(body, structure=_STRUCT6)

    inside = data[body]
    thr2 = _otsu_threshold(inside)
    if thr2 is None:
        raise SegmentationFailedError("body interior has no intensity contrast")
    candidates = body & (data < thr2)
    candidates = ndimage.binary_closing(candidates, structure=_STRUCT6)
    if not candidates.any():
        raise SegmentationFailedError("no lung candidate voxels inside body")
    binary = LabelVolume(img.geometry, candidates.astype(np.uint8))
    return split_left_right(binary, flip_lr=flip_lr, source="fallback_segmenter")


def _label_set(vol: LabelVolume, label) -> np.ndarray:
    if label == "foreground":
        return vol.data > 0
    return vol.data == int(label)


def dice_score(a: LabelVolume, b: LabelVolume, label="foreground") -> float:
    """2|A∩B| / (|A|+|B|) over the selected label; empty/empty gives 1.0."""
    if a.geometry.dims != b.geometry.dims:
        raise GeometryError(f"dims differ: {a.geometry.dims} vs {b.geometry.dims}")
    sa = _label_set(a, label)
    sb = _label_set(b, label)
    na, nb = int(sa.sum()), int(sb.sum())
    if na == 0 and nb == 0:
        return 1.0
    inter = int((sa & sb).sum())
    return 2.0 * inter / (na + nb)


@dataclass(frozen=True)
class DiceRow:
    case_id: str
    label: str
    dice: float | None
    error: str | None = None


DICE_LABELS = ("1", "2", "foreground")


def _case_id(path) -> str:
    name = Path(path).name
    for ext in (".nii.gz", ".nii"):
        if name.endswith(ext):
            return name[: -len(ext)]
    return name


def evaluate_masks(pred_paths, gt_paths) -> list[DiceRow]:
    """Per-pair Dice table; a failing pair becomes an error row, the run continues.

    Rows: per case one entry per label in {1, 2, foreground} plus a per-case
    arithmetic mean; then aggregate mean rows across successful cases.
    """
    if len(pred_paths) != len(gt_paths):
        raise GeometryError(
            f"{len(pred_paths)} predictions vs {len(gt_paths)} ground truths")
    rows: list[DiceRow] = []
    per_label_values: dict[str, list[float]] = {lab: [] for lab in (*DICE_LABELS, "mean")}
    for pred_path, gt_path in zip(pred_paths, gt_paths):
        case = _case_id(pred_path)
        try:
            pred = read_labels(pred_path)
            gt = read_labels(gt_path)
            case_values = []
            for lab in DICE_LABELS:
                d = dice_score(pred, gt, label=lab if lab == "foreground" else int(lab))
                rows.append(DiceRow(case, lab, d))
                per_label_values[lab].append(d)
                case_values.append(d)
            case_mean = float(np.mean(case_values))
            rows.append(DiceRow(case, "mean", case_mean))
            per_label_values["mean"].append(case_mean)
        except Exception as exc:  # keep scoring the remaining pairs
            code = getattr(exc, "code", exc.__class__.__name__)
            rows.append(DiceRow(case, "error", None, error=str(code)))
    for lab in (*DICE_LABELS, "mean"):
        if per_label_values[lab]:
            rows.append(DiceRow("mean", lab, float(np.mean(per_label_values[lab]))))
    return rows


def dice_table_csv(rows: list[DiceRow], precision: int = 6) -> str:
    lines = ["case_id,label,dice"]
    for row in rows:
        if row.error is not None:
            lines.append(f"{row.case_id},{row.label},error:{row.error}")
        else:
            lines.append(f"{row.case_id},{row.label},{row.dice:.{precision}g}")
    return "\n".join(lines) + "\n"
