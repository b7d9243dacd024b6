"""Disease categories, per-slice pixel masks and their run-length codec.

Planes are (width, height) arrays indexed [x, y]; the RLE flattens them
x-fastest, so flat index = y * width + x. The text wire form is
``"width,height,category;start:len,start:len,..."`` with an empty mask
ending right after the semicolon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GeometryError, MalformedRleError

# Category precedence is the numeric order: 1 beats 2 beats 3 wherever a
# pixel is claimed twice (worst-abnormality-first hierarchy).
CATEGORY_NAMES = {
    1: "bronchiectasis_airway_thickening",
    2: "mucus_plugging",
    3: "consolidation_atelectasis",
}
CATEGORY_COLOURS = {1: (255, 0, 0), 2: (255, 255, 0), 3: (0, 0, 255)}
CATEGORY_CODES = (1, 2, 3)


@dataclass(frozen=True)
class Category:
    code: int
    name: str
    display_colour: tuple[int, int, int]


CATEGORIES = {c: Category(c, CATEGORY_NAMES[c], CATEGORY_COLOURS[c]) for c in CATEGORY_CODES}

ANNOTATION_PALETTE = {0: "none", **CATEGORY_NAMES}


@dataclass(frozen=True)
class RleMask:
    """Maximal, sorted, non-overlapping runs over the flattened plane."""

    width: int
    height: int
    category: int
    runs: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise MalformedRleError(f"plane dims {self.width}x{self.height} invalid")
        size = self.width * self.height
        prev_end = -1
        for start, length in self.runs:
            if length < 1 or start < 0:
                raise MalformedRleError(f"run ({start},{length}) malformed")
            if start <= prev_end:  # overlap or adjacency: runs must be maximal
                raise MalformedRleError(f"run at {start} overlaps or touches previous run")
            if start + length > size:
                raise MalformedRleError(f"run ({start},{length}) exceeds plane size {size}")
            prev_end = start + length

    @property
    def pixel_count(self) -> int:
        return sum(length for _, length in self.runs)


def encode_rle(plane: np.ndarray, category: int = 1) -> RleMask:
    """Run-length encode the nonzero pixels of a (width, height) plane."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise GeometryError(f"plane must be 2D, got shape {plane.shape}")
    width, height = plane.shape
    flat = plane.ravel(order="F") != 0
    if not flat.any():
        return RleMask(width, height, category, ())
    padded = np.concatenate(([False], flat, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    runs = tuple((int(s), int(e - s)) for s, e in zip(starts, ends))
    return RleMask(width, height, category, runs)


def decode_rle(mask: RleMask) -> np.ndarray:
    """Inverse of encode: a boolean (width, height) plane."""
    flat = np.zeros(mask.width * mask.height, dtype=bool)
    for start, length in mask.runs:
        flat[start:start + length] = True
    return flat.reshape((mask.width, mask.height), order="F")


def to_wire(mask: RleMask) -> str:
    head = f"{mask.width},{mask.height},{mask.category};"
    return head + ",".join(f"{s}:{n}" for s, n in mask.runs)


def from_wire(text: str) -> RleMask:
    head, sep, body = text.partition(";")
    if not sep:
        raise MalformedRleError("missing ';' separator")
    parts = head.split(",")
    if len(parts) != 3:
        raise MalformedRleError(f"header {head!r} must be width,height,category")
    try:
        width, height, category = (int(p) for p in parts)
    except ValueError as exc:
        raise MalformedRleError(f"non-integer header field in {head!r}") from exc
    runs = []
    if body:
        for token in body.split(","):
            start, sep2, length = token.partition(":")
            if not sep2:
                raise MalformedRleError(f"run token {token!r} must be start:len")
            try:
                runs.append((int(start), int(length)))
            except ValueError as exc:
                raise MalformedRleError(f"non-integer run token {token!r}") from exc
    return RleMask(width, height, category, tuple(runs))


def merge_category_masks(per_category: dict[int, RleMask],
                         dims: tuple[int, int] | None = None) -> np.ndarray:
    """Resolve per-category binary masks into one single-label grid.

    Pixels claimed by several categories keep the highest-precedence one
    (lowest code). An empty map yields an all-zero grid of ``dims``.
    """
    sizes = {(m.width, m.height) for m in per_category.values()}
    if dims is not None:
        sizes.add(tuple(dims))
    if not sizes:
        raise GeometryError("empty category map needs explicit dims")
    if len(sizes) > 1:
        raise GeometryError(f"category masks disagree on dims: {sorted(sizes)}")
    (width, height), = sizes
    grid = np.zeros((width, height), dtype=np.uint8)
    for code in sorted(per_category, reverse=True):  # low codes painted last win
        if code not in CATEGORIES:
            raise MalformedRleError(f"unknown category code {code}")
        grid[decode_rle(per_category[code])] = code
    return grid


@dataclass(frozen=True)
class SliceAnnotation:
    """One annotated slice: single-label grid plus timing capture."""

    z: int
    labels: np.ndarray  # (width, height) of {0,1,2,3}
    started_at: float | None = None
    ended_at: float | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise GeometryError("annotation grid must be 2D")
        bad = set(np.unique(labels)) - {0, *CATEGORY_CODES}
        if bad:
            raise GeometryError(f"annotation grid holds non-category labels {sorted(bad)}")
        if labels.flags.writeable:
            labels = labels.copy()
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def category_counts(self) -> dict[int, int]:
        return {c: int((self.labels == c).sum()) for c in CATEGORY_CODES}

    def to_rles(self) -> list[RleMask]:
        """Canonical per-category RLE of the merged grid (ascending codes)."""
        return [encode_rle(self.labels == c, c) for c in CATEGORY_CODES
                if bool((self.labels == c).any())]
