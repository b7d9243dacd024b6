"""Deterministic synthetic chest phantoms with exact ground truth.

Geometry is a bright solid body ellipsoid enclosing two dark lung
ellipsoids; disease lesions (blobs and axis-aligned tubes) sit strictly
inside the lungs at an intermediate intensity. Masks and annotation maps
are rasterized from the same continuous shapes, so the returned truth
counts are exact by construction.

All randomness flows from splitmix64, a published 64-bit generator chosen
for cross-language portability. Constants: increment 0x9E3779B97F4A7C15,
mixers 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB, shifts 30/27/31.
Identical seeds therefore reproduce identical phantoms anywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ParameterError
from .lungmask import LUNG_PALETTE, LungMask
from .nifti import ImageVolume, LabelVolume, VolumeGeometry
from .annotation import ANNOTATION_PALETTE, CATEGORY_CODES
from .sampling import plan_for_mask

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Phantom intensity levels (arbitrary units); lesions sit between the dark
# lung parenchyma and the bright chest wall.
AIR, LUNG_I, LESION_I, BODY_I = 0.0, 30.0, 90.0, 200.0
DYNAMIC_RANGE = BODY_I - AIR

_NOISE_STREAM_TAG = 0x6E6F697365  # distinct stream for image noise


def _mix(x: int) -> int:
    z = x & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class SplitMix64:
    """Scalar splitmix64 stream; output i is mix(seed + i * gamma)."""

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return _mix(self.seed + self.counter * _GAMMA)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53-bit resolution."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + self.next_float() * (hi - lo)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi]; modulo fold is fine at these ranges."""
        return lo + self.next_u64() % (hi - lo + 1)

    def choice(self, items):
        return items[self.randint(0, len(items) - 1)]


def splitmix64_array(seed: int, n: int) -> np.ndarray:
    """Vectorized stream identical to n calls of SplitMix64.next_u64."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + idx * np.uint64(_GAMMA)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
    return z ^ (z >> np.uint64(31))


def _gaussian_noise(seed: int, n: int) -> np.ndarray:
    """Standard normals via Box-Muller on the splitmix64 stream."""
    raw = splitmix64_array(seed, 2 * n)
    u1 = ((raw[:n] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53  # (0, 1]
    u2 = (raw[n:] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@dataclass(frozen=True)
class LungSpec:
    centre: tuple[float, float, float]  # voxel coordinates
    semi_axes: tuple[float, float, float]


@dataclass(frozen=True)
class LesionSpec:
    category: int  # 1..3
    shape: str  # "blob" | "tube"
    centre: tuple[float, float, float]
    radius: float
    half_length: float = 0.0  # tubes only
    axis: int = 2  # tube orientation

    def __post_init__(self):
        if self.category not in CATEGORY_CODES:
            raise ParameterError(f"lesion category {self.category} not in {CATEGORY_CODES}")
        if self.shape not in ("blob", "tube"):
            raise ParameterError(f"lesion shape {self.shape!r} unknown")
        if self.radius <= 0:
            raise ParameterError("lesion radius must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    seed: int
    dims: tuple[int, int, int] = (64, 64, 48)
    spacing: tuple[float, float, float] = (1.5, 1.5, 1.5)
    lungs: tuple[LungSpec, LungSpec] = ()
    lesions: tuple[LesionSpec, ...] = ()
    noise_sigma: float = 0.0  # fraction of the dynamic range

    def __post_init__(self):
        if len(self.lungs) == 0:
            object.__setattr__(self, "lungs", default_lungs(self.dims))
        if len(self.lungs) != 2:
            raise ParameterError("phantom needs exactly two lung ellipsoids")


@dataclass(frozen=True)
class PhantomTruth:
    """Exact voxel counts rasterized alongside the phantom."""

    lung_voxels_total: int
    lung_voxels_per_slice: tuple[int, ...]
    category_voxels_total: dict[int, int]
    category_voxels_per_slice: dict[int, tuple[int, ...]]


@dataclass(frozen=True)
class PhantomResult:
    spec: PhantomSpec
    image: ImageVolume
    mask: LungMask
    annotation: LabelVolume
    truth: PhantomTruth


def default_lungs(dims) -> tuple[LungSpec, LungSpec]:
    nx, ny, nz = dims
    semi = (0.13 * nx, 0.24 * ny, 0.33 * nz)
    right = LungSpec((0.31 * nx, 0.50 * ny, 0.50 * nz), semi)
    left = LungSpec((0.69 * nx, 0.50 * ny, 0.50 * nz), semi)
    return (right, left)


def _coords(dims):
    nx, ny, nz = dims
    return np.ogrid[0:nx, 0:ny, 0:nz]


def _ellipsoid(dims, centre, semi_axes) -> np.ndarray:
    xs, ys, zs = _coords(dims)
    cx, cy, cz = centre
    sx, sy, sz = semi_axes
    d = ((xs - cx) / sx) ** 2 + ((ys - cy) / sy) ** 2 + ((zs - cz) / sz) ** 2
    return d <= 1.0


def _lesion_voxels(dims, lesion: LesionSpec) -> np.ndarray:
    xs, ys, zs = _coords(dims)
    deltas = (xs - lesion.centre[0], ys - lesion.centre[1], zs - lesion.centre[2])
    if lesion.shape == "blob":
        return deltas[0] ** 2 + deltas[1] ** 2 + deltas[2] ** 2 <= lesion.radius ** 2
    lateral = [deltas[a] for a in range(3) if a != lesion.axis]
    along = deltas[lesion.axis]
    return ((lateral[0] ** 2 + lateral[1] ** 2 <= lesion.radius ** 2)
            & (np.abs(along) <= lesion.half_length))


def _lesion_inside_lung(lesion: LesionSpec, lung: LungSpec, margin: float = 0.0) -> bool:
    """Conservative containment: endpoint balls inside the unit ellipsoid."""
    semi = np.asarray(lung.semi_axes)
    ball = lesion.radius / float(semi.min())
    ends = [np.asarray(lesion.centre, dtype=float)]
    if lesion.shape == "tube":
        offset = np.zeros(3)
        offset[lesion.axis] = lesion.half_length
        ends = [ends[0] - offset, ends[0] + offset]
    centre = np.asarray(lung.centre)
    return all(
        float(np.linalg.norm((e - centre) / semi)) + ball <= 1.0 - margin for e in ends)


def generate(spec: PhantomSpec) -> PhantomResult:
    """Rasterize one phantom; bit-identical for identical specs."""
    dims = spec.dims
    geometry = VolumeGeometry.from_spacing(dims, spec.spacing)

    # right lung = smaller physical x (identity-orientation affine)
    lungs = sorted(spec.lungs, key=lambda s: s.centre[0])
    lung_regions = [_ellipsoid(dims, s.centre, s.semi_axes) for s in lungs]
    if (lung_regions[0] & lung_regions[1]).any():
        raise ParameterError("lung ellipsoids overlap")

    body = _ellipsoid(dims, ((dims[0] - 1) / 2, (dims[1] - 1) / 2, (dims[2] - 1) / 2),
                      (0.47 * dims[0], 0.45 * dims[1], 0.49 * dims[2]))
    lung_any = lung_regions[0] | lung_regions[1]
    if (lung_any & ~body).any():
        raise ParameterError("lung ellipsoids poke outside the body")

    mask_data = np.zeros(dims, dtype=np.uint8)
    mask_data[lung_regions[0]] = 1
    mask_data[lung_regions[1]] = 2

    ann_data = np.zeros(dims, dtype=np.uint8)
    for lesion in spec.lesions:
        if not any(_lesion_inside_lung(lesion, lung) for lung in lungs):
            raise ParameterError(
                f"lesion at {lesion.centre} not contained in either lung")
    for code in sorted(CATEGORY_CODES, reverse=True):  # precedence: low code wins
        for lesion in spec.lesions:
            if lesion.category == code:
                ann_data[_lesion_voxels(dims, lesion)] = code

    image = np.full(dims, AIR, dtype=np.float32)
    image[body] = BODY_I
    image[lung_any] = LUNG_I
    image[ann_data > 0] = LESION_I
    if spec.noise_sigma > 0:
        sigma = spec.noise_sigma * DYNAMIC_RANGE
        noise = _gaussian_noise(spec.seed ^ _NOISE_STREAM_TAG, image.size)
        image = image + sigma * noise.reshape(dims).astype(np.float32)

    mask_vol = LabelVolume(geometry, mask_data, palette=dict(LUNG_PALETTE))
    mask = LungMask(mask_vol, "manual", mask_vol.counts())
    annotation = LabelVolume(geometry, ann_data, palette=dict(ANNOTATION_PALETTE))

    lung_per_slice = tuple(int(v) for v in (mask_data > 0).sum(axis=(0, 1)))
    cat_per_slice = {c: tuple(int(v) for v in (ann_data == c).sum(axis=(0, 1)))
                     for c in CATEGORY_CODES}
    truth = PhantomTruth(
        lung_voxels_total=int((mask_data > 0).sum()),
        lung_voxels_per_slice=lung_per_slice,
        category_voxels_total={c: int((ann_data == c).sum()) for c in CATEGORY_CODES},
        category_voxels_per_slice=cat_per_slice,
    )
    return PhantomResult(spec, ImageVolume(geometry, image), mask, annotation, truth)


def _sample_point_in_ellipsoid(rng: SplitMix64, lung: LungSpec, shrink: float) -> np.ndarray:
    while True:
        p = np.array([rng.uniform(-1.0, 1.0) for _ in range(3)])
        if float(np.linalg.norm(p)) <= shrink:
            return np.asarray(lung.centre) + p * np.asarray(lung.semi_axes)


def _bounding_radius(lesion: LesionSpec) -> float:
    return lesion.radius + (lesion.half_length if lesion.shape == "tube" else 0.0)


def _lesions_disjoint(a: LesionSpec, b: LesionSpec, gap: float = 1.5) -> bool:
    d = float(np.linalg.norm(np.asarray(a.centre) - np.asarray(b.centre)))
    return d > _bounding_radius(a) + _bounding_radius(b) + gap


def _place_lesion(rng: SplitMix64, lungs, existing, category: int,
                  max_attempts: int = 100) -> LesionSpec | None:
    """Rejection-sample one lesion inside a lung, disjoint from the others."""
    for _ in range(max_attempts):
        lung = rng.choice(lungs)
        smallest = min(lung.semi_axes)
        shape = rng.choice(("blob", "tube"))
        radius = rng.uniform(1.0, max(1.1, 0.22 * smallest))
        axis = rng.randint(0, 2) if shape == "tube" else 2
        half_length = (rng.uniform(1.5, max(1.6, 0.25 * lung.semi_axes[axis]))
                       if shape == "tube" else 0.0)
        centre = _sample_point_in_ellipsoid(rng, lung, shrink=0.62)
        lesion = LesionSpec(category, shape, tuple(float(v) for v in centre),
                            radius, half_length, axis)
        if not _lesion_inside_lung(lesion, lung, margin=0.02):
            continue
        if all(_lesions_disjoint(lesion, other) for other in existing):
            return lesion
    return None


def _place_blob_on_slice(rng: SplitMix64, lungs, existing, category: int,
                         z_at: int, max_attempts: int = 500) -> LesionSpec | None:
    """Place a blob whose centre sits exactly on axial slice z_at.

    The in-plane sampling radius is budgeted from the slice's normalized
    axial offset so containment holds by construction; only disjointness
    can reject.
    """
    for _ in range(max_attempts):
        lung = rng.choice(lungs)
        sx, sy, sz = lung.semi_axes
        smallest = min(lung.semi_axes)
        radius = rng.uniform(1.0, max(1.1, 0.18 * smallest))
        ball = radius / smallest
        z_norm = (z_at - lung.centre[2]) / sz
        cap = 0.98 - ball
        budget_sq = cap * cap - z_norm * z_norm
        if budget_sq <= 0:
            continue  # slice too close to the apex/base of this lung
        budget = math.sqrt(budget_sq)
        while True:
            px, py = rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)
            if px * px + py * py <= 1.0:
                break
        centre = (lung.centre[0] + px * budget * sx,
                  lung.centre[1] + py * budget * sy, float(z_at))
        lesion = LesionSpec(category, "blob", centre, radius)
        if all(_lesions_disjoint(lesion, other) for other in existing):
            return lesion
    return None


def random_spec(seed: int, noise_sigma: float = 0.0,
                max_lesions: int = 6) -> PhantomSpec:
    """A randomized desk-scale phantom; dims, lungs and lesions all vary."""
    rng = SplitMix64(seed)
    dims = (rng.randint(36, 56), rng.randint(36, 56), rng.randint(28, 44))
    spacing = rng.choice(((1.1, 1.1, 1.1), (1.5, 1.5, 1.5), (1.1, 1.1, 3.0)))
    lungs = default_lungs(dims)
    lesions: list[LesionSpec] = []
    for _ in range(rng.randint(0, max_lesions)):
        lesion = _place_lesion(rng, lungs, lesions, category=rng.randint(1, 3))
        if lesion is not None:
            lesions.append(lesion)
    return PhantomSpec(seed=seed, dims=dims, spacing=spacing, lungs=lungs,
                       lesions=tuple(lesions), noise_sigma=noise_sigma)


def cohort(n: int, base_seed: int, noise_sigma: float = 0.0) -> list[PhantomResult]:
    """n phantoms over one fixed anatomy with strictly growing disease burden.

    Subject i carries i+1 pairwise-disjoint blob lesions, each centred on a
    sampled slice of the shared plan, so every added lesion contributes
    annotated voxels to the sampled-slice score.
    """
    if n < 2:
        raise ParameterError("cohort needs n >= 2")
    rng = SplitMix64(base_seed)
    dims = (64, 64, 48)
    lungs = default_lungs(dims)
    base = PhantomSpec(seed=base_seed, dims=dims, lungs=lungs, noise_sigma=noise_sigma)
    plan = plan_for_mask(generate(base).mask)

    # Stick to slices with enough lung cross-section to host a blob.
    cz, sz = lungs[0].centre[2], lungs[0].semi_axes[2]
    eligible = [z for z in plan.slices if abs((z - cz) / sz) <= 0.6]

    lesions: list[LesionSpec] = []
    while len(lesions) < n:
        z_at = eligible[len(lesions) % len(eligible)]
        lesion = _place_blob_on_slice(rng, lungs, lesions,
                                      category=rng.randint(1, 3), z_at=z_at)
        if lesion is None:
            raise ParameterError(f"could not place lesion {len(lesions) + 1} of {n}")
        lesions.append(lesion)

    return [generate(replace(base, lesions=tuple(lesions[: i + 1])))
            for i in range(n)]
