"""Lung-bounded uniform axial slice sampling.

Given the inclusive axial extent of the lung mask, pick k slices with the
centred-bin rule ``z_min + floor((i + 0.5) * E / k)``: one representative
per equal-width bin, so apex and base are not double-weighted and the
picks are duplicate-free whenever the extent covers at least k slices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMaskError, ParameterError

DEFAULT_SLICE_COUNT = 10


@dataclass(frozen=True)
class SliceSamplePlan:
    z_min: int
    z_max: int
    k_requested: int
    slices: tuple[int, ...]
    short_extent: bool = False

    def __post_init__(self):
        if self.z_min > self.z_max:
            raise ParameterError(f"z_min {self.z_min} > z_max {self.z_max}")
        if any(not self.z_min <= z <= self.z_max for z in self.slices):
            raise ParameterError("sampled slice outside extent")
        if any(b <= a for a, b in zip(self.slices, self.slices[1:])):
            raise ParameterError("sampled slices must be strictly increasing")

    @property
    def extent(self) -> int:
        return self.z_max - self.z_min + 1

    def to_dict(self) -> dict:
        return {
            "z_min": self.z_min,
            "z_max": self.z_max,
            "k_requested": self.k_requested,
            "slices": list(self.slices),
            "short_extent": self.short_extent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SliceSamplePlan":
        return cls(int(d["z_min"]), int(d["z_max"]), int(d["k_requested"]),
                   tuple(int(z) for z in d["slices"]), bool(d["short_extent"]))


def lung_extent(mask) -> tuple[int, int]:
    """Smallest and largest axial indices containing any lung voxel."""
    vol = mask.volume if hasattr(mask, "volume") else mask
    axis = vol.geometry.axial_axis
    other = tuple(a for a in range(3) if a != axis)
    per_slice = np.any(vol.data > 0, axis=other)
    hit = np.flatnonzero(per_slice)
    if hit.size == 0:
        raise EmptyMaskError("mask has no foreground voxels")
    return int(hit[0]), int(hit[-1])


def sample_slices(extent: tuple[int, int], k: int = DEFAULT_SLICE_COUNT) -> SliceSamplePlan:
    z_min, z_max = extent
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if z_min > z_max:
        raise ParameterError(f"empty extent ({z_min}, {z_max})")
    span = z_max - z_min + 1
    if span < k:
        picks = tuple(range(z_min, z_max + 1))
        return SliceSamplePlan(z_min, z_max, k, picks, short_extent=True)
    picks = tuple(z_min + math.floor((i + 0.5) * span / k) for i in range(k))
    return SliceSamplePlan(z_min, z_max, k, picks)


def plan_for_mask(mask, k: int = DEFAULT_SLICE_COUNT) -> SliceSamplePlan:
    return sample_slices(lung_extent(mask), k)
