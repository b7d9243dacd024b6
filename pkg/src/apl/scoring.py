"""Pixel-level and grid-level quantification over the sampled slices.

Pixel mode: diseased-to-lung ratio = annotated voxels / lung voxels on the
sampled slices, per category and total. Grid mode tessellates each sampled
slice into cell_edge x cell_edge cells anchored at the image origin; a
cell is a lung cell when at least a fraction tau of its pixels are lung,
and a lung cell takes the highest-precedence category that annotated any
of its lung pixels.

Volumes are voxel counts times the voxel volume. In grid mode both sides
of the ratio are expressed in full-cell equivalents (cell count times
cell_edge^2 voxels), which keeps ratio * lung_volume == category_volume
exact and collapses to the pixel-mode volumes at cell_edge 1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .annotation import CATEGORY_CODES, SliceAnnotation
from .errors import GeometryError, PairingError, ParameterError, UndefinedScoreError
from .lungmask import LungMask
from .nifti import extract_axial_slice
from .sampling import SliceSamplePlan

DEFAULT_TAU = 0.5

CSV_HEADER = "subject_id,mode,cat1_ratio,cat2_ratio,cat3_ratio,total_ratio,lung_mm3,cell_edge,tau"


@dataclass(frozen=True)
class ScoreReport:
    per_category_ratio: dict[int, float]
    total_ratio: float
    per_category_volume_mm3: dict[int, float]
    sampled_lung_volume_mm3: float
    mode: str  # "pixel" | "grid"
    slices_used: tuple[int, ...]
    clip_to_lung: bool
    grid_params: tuple[int, float] | None = None  # (cell_edge, tau)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "per_category_ratio": {str(c): self.per_category_ratio[c] for c in CATEGORY_CODES},
            "total_ratio": self.total_ratio,
            "per_category_volume_mm3": {
                str(c): self.per_category_volume_mm3[c] for c in CATEGORY_CODES},
            "sampled_lung_volume_mm3": self.sampled_lung_volume_mm3,
            "slices_used": list(self.slices_used),
            "clip_to_lung": self.clip_to_lung,
            "grid_params": None if self.grid_params is None else {
                "cell_edge": self.grid_params[0], "tau": self.grid_params[1]},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self, subject_id: str, precision: int = 6) -> str:
        def fmt(x: float) -> str:
            return f"{x:.{precision}g}"

        cell_edge = "" if self.grid_params is None else str(self.grid_params[0])
        tau = "" if self.grid_params is None else fmt(self.grid_params[1])
        return ",".join([
            subject_id, self.mode,
            fmt(self.per_category_ratio[1]), fmt(self.per_category_ratio[2]),
            fmt(self.per_category_ratio[3]), fmt(self.total_ratio),
            fmt(self.sampled_lung_volume_mm3), cell_edge, tau,
        ])


@dataclass(frozen=True)
class GridCell:
    x0: int
    y0: int
    z: int
    lung_pixel_count: int
    total_pixel_count: int
    assigned_category: int


@dataclass(frozen=True)
class GridTessellation:
    cell_edge: int
    cells: tuple[GridCell, ...]


def _annotation_planes(mask: LungMask, annotations, plan: SliceSamplePlan) -> dict[int, np.ndarray]:
    """Validate and index annotations by slice; missing slices score zero."""
    geo = mask.geometry
    axis = geo.axial_axis
    in_plane = tuple(d for a, d in enumerate(geo.dims) if a != axis)
    planes: dict[int, np.ndarray] = {}
    for ann in annotations:
        z = ann.z if isinstance(ann, SliceAnnotation) else int(ann[0])
        grid = ann.labels if isinstance(ann, SliceAnnotation) else np.asarray(ann[1])
        if z not in plan.slices:
            raise ParameterError(f"annotation at z={z} is not a sampled slice")
        if grid.shape != in_plane:
            raise GeometryError(
                f"annotation grid {grid.shape} does not match in-plane dims {in_plane}")
        planes[z] = grid
    return planes


def pixel_score(mask: LungMask, annotations, plan: SliceSamplePlan,
                clip_to_lung: bool = True) -> ScoreReport:
    """Diseased-to-lung ratio over the sampled slices, per category.

    Unannotated sampled slices contribute a zero numerator but their full
    lung denominator; with ``clip_to_lung`` (the default) annotated pixels
    outside the lung mask are ignored.
    """
    planes = _annotation_planes(mask, annotations, plan)
    voxel_mm3 = mask.geometry.voxel_volume_mm3
    lung_total = 0
    cat_counts = {c: 0 for c in CATEGORY_CODES}
    for z in plan.slices:
        lung_plane = extract_axial_slice(mask.volume, z) > 0
        lung_total += int(lung_plane.sum())
        grid = planes.get(z)
        if grid is None:
            continue
        for c in CATEGORY_CODES:
            hit = grid == c
            if clip_to_lung:
                hit = hit & lung_plane
            cat_counts[c] += int(hit.sum())
    if lung_total == 0:
        raise UndefinedScoreError("no lung voxels on any sampled slice")
    ratios = {c: cat_counts[c] / lung_total for c in CATEGORY_CODES}
    return ScoreReport(
        per_category_ratio=ratios,
        total_ratio=sum(ratios.values()),
        per_category_volume_mm3={c: cat_counts[c] * voxel_mm3 for c in CATEGORY_CODES},
        sampled_lung_volume_mm3=lung_total * voxel_mm3,
        mode="pixel",
        slices_used=tuple(plan.slices),
        clip_to_lung=clip_to_lung,
    )


def _pad_to_cells(arr: np.ndarray, ce: int) -> np.ndarray:
    nx, ny = arr.shape
    px = (-nx) % ce
    py = (-ny) % ce
    if px or py:
        arr = np.pad(arr, ((0, px), (0, py)))
    return arr


def tessellate_slice(lung_plane: np.ndarray, ann_plane: np.ndarray | None,
                     z: int, cell_edge: int, tau: float) -> list[GridCell]:
    """Tile one slice into origin-anchored cells (partial edge cells kept)."""
    nx, ny = lung_plane.shape
    ce = cell_edge
    nxc, nyc = math.ceil(nx / ce), math.ceil(ny / ce)

    lung = _pad_to_cells(lung_plane.astype(bool), ce)
    lung_counts = lung.reshape(nxc, ce, nyc, ce).sum(axis=(1, 3))

    widths = np.minimum(ce, nx - np.arange(nxc) * ce)
    heights = np.minimum(ce, ny - np.arange(nyc) * ce)
    totals = np.outer(widths, heights)

    with np.errstate(invalid="ignore"):
        is_lung_cell = lung_counts / totals >= tau

    assigned = np.zeros((nxc, nyc), dtype=np.int8)
    if ann_plane is not None:
        for c in reversed(CATEGORY_CODES):  # ascending precedence: low code wins
            hit = _pad_to_cells((ann_plane == c) & lung_plane.astype(bool), ce)
            any_c = hit.reshape(nxc, ce, nyc, ce).any(axis=(1, 3))
            assigned[is_lung_cell & any_c] = c

    cells = []
    for i in range(nxc):
        for j in range(nyc):
            cells.append(GridCell(
                x0=i * ce, y0=j * ce, z=z,
                lung_pixel_count=int(lung_counts[i, j]),
                total_pixel_count=int(totals[i, j]),
                assigned_category=int(assigned[i, j]) if is_lung_cell[i, j] else 0,
            ))
    return cells


def grid_score(mask: LungMask, annotations, plan: SliceSamplePlan,
               cell_edge: int, tau: float = DEFAULT_TAU,
               return_tessellation: bool = False):
    """Grid-level comparison score over the sampled slices.

    Ratio = diseased lung cells / lung cells; volumes use full-cell
    equivalents so the report stays internally consistent (see module doc).
    """
    if cell_edge < 1:
        raise ParameterError(f"cell_edge must be >= 1, got {cell_edge}")
    if not 0.0 < tau <= 1.0:
        raise ParameterError(f"tau must lie in (0, 1], got {tau}")
    planes = _annotation_planes(mask, annotations, plan)

    all_cells: list[GridCell] = []
    lung_cells = 0
    cat_cells = {c: 0 for c in CATEGORY_CODES}
    for z in plan.slices:
        lung_plane = extract_axial_slice(mask.volume, z) > 0
        cells = tessellate_slice(lung_plane, planes.get(z), z, cell_edge, tau)
        all_cells.extend(cells)
        for cell in cells:
            if cell.total_pixel_count and cell.lung_pixel_count / cell.total_pixel_count >= tau:
                lung_cells += 1
                if cell.assigned_category:
                    cat_cells[cell.assigned_category] += 1
    if lung_cells == 0:
        raise UndefinedScoreError("no lung cells on any sampled slice")

    cell_mm3 = cell_edge * cell_edge * mask.geometry.voxel_volume_mm3
    ratios = {c: cat_cells[c] / lung_cells for c in CATEGORY_CODES}
    report = ScoreReport(
        per_category_ratio=ratios,
        total_ratio=sum(ratios.values()),
        per_category_volume_mm3={c: cat_cells[c] * cell_mm3 for c in CATEGORY_CODES},
        sampled_lung_volume_mm3=lung_cells * cell_mm3,
        mode="grid",
        slices_used=tuple(plan.slices),
        clip_to_lung=True,  # grid cells only ever look at lung pixels
        grid_params=(cell_edge, tau),
    )
    if return_tessellation:
        return report, GridTessellation(cell_edge, tuple(all_cells))
    return report


def default_cell_edge(mask: LungMask, plan: SliceSamplePlan) -> int:
    """Scale the grid to the lung: max in-plane bounding-box edge / 20."""
    longest = 0
    for z in plan.slices:
        lung = extract_axial_slice(mask.volume, z) > 0
        xs = np.flatnonzero(lung.any(axis=1))
        ys = np.flatnonzero(lung.any(axis=0))
        if xs.size == 0:
            continue
        longest = max(longest, int(xs[-1] - xs[0] + 1), int(ys[-1] - ys[0] + 1))
    return max(1, math.floor(longest / 20 + 0.5))  # round half away from zero


@dataclass(frozen=True)
class ScorePair:
    pixel_total: float
    grid_total: float
    per_category: dict[int, tuple[float, float]]


def compare_scores(pixel: ScoreReport, grid: ScoreReport) -> ScorePair:
    """Pair one subject's pixel and grid reports for downstream statistics."""
    if pixel.mode != "pixel" or grid.mode != "grid":
        raise PairingError(f"expected pixel+grid reports, got {pixel.mode}+{grid.mode}")
    if pixel.slices_used != grid.slices_used:
        raise PairingError("reports were scored on different slice plans")
    return ScorePair(
        pixel_total=pixel.total_ratio,
        grid_total=grid.total_ratio,
        per_category={c: (pixel.per_category_ratio[c], grid.per_category_ratio[c])
                      for c in CATEGORY_CODES},
    )
