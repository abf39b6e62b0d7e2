"""Lesion center selection inside an eroded white-matter mask."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatch, NoValidLocation, ParamOutOfRange, RetryExhausted
from .rng import as_rng
from .texture import foreground_box
from .volume import LabelMap3


@dataclass(frozen=True)
class PlacementParams:
    # None selects the automatic per-axis radius derived from the lesion bounding box
    erosion_radius: tuple | None = None
    max_draws: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.erosion_radius is not None:
            r = self.erosion_radius
            r = (int(r),) * 3 if np.isscalar(r) else tuple(int(x) for x in r)
            if len(r) != 3 or min(r) < 0:
                raise ParamOutOfRange(f"erosion_radius must be 3 non-negative ints, got {self.erosion_radius}")
            object.__setattr__(self, "erosion_radius", r)
        if self.max_draws < 1:
            raise ParamOutOfRange("max_draws must be >= 1")


def erode(mask: LabelMap3, radius_xyz) -> LabelMap3:
    """Keep voxels whose box of half-extents ``radius_xyz`` lies inside the mask.

    Voxels outside the grid count as background.
    """
    r = tuple(int(x) for x in radius_xyz)
    if len(r) != 3 or min(r) < 0:
        raise ParamOutOfRange(f"radius must be 3 non-negative ints, got {radius_xyz}")
    m = (mask.data if isinstance(mask, LabelMap3) else np.asarray(mask)) > 0
    if r == (0, 0, 0):
        return LabelMap3(m)
    size = tuple(2 * x + 1 for x in r)
    return LabelMap3(ndimage.minimum_filter(m.astype(np.uint8), size=size, mode="constant", cval=0))


def anchor(lesion_mask):
    """Lesion-grid voxel that lands on the selected center: the middle of the foreground box."""
    lo, hi = foreground_box(np.asarray(lesion_mask) > 0)
    return lo + (hi - 1 - lo) // 2


def auto_radius(lesion_mask):
    """Per-axis half-extent of the foreground box around its anchor, plus one voxel."""
    lo, hi = foreground_box(np.asarray(lesion_mask) > 0)
    a = lo + (hi - 1 - lo) // 2
    return tuple(int(x) + 1 for x in np.maximum(a - lo, hi - 1 - a))


def lesion_origin(center, lesion_mask, pad=0):
    """Host index of the first voxel of the lesion's (padded) foreground box placed at ``center``."""
    lo, _ = foreground_box(np.asarray(lesion_mask) > 0)
    return tuple(int(x) for x in np.asarray(center) - (anchor(lesion_mask) - lo) - pad)


def crop_to_foreground(lesion_mask, *arrays, pad=1):
    """Crop the mask (and companions) to its foreground box grown by ``pad`` zero voxels."""
    m = np.asarray(lesion_mask)
    lo, hi = foreground_box(m > 0)
    box = tuple(slice(l, h) for l, h in zip(lo, hi))
    out = [np.pad(m[box], pad)]
    out.extend(np.pad(np.asarray(a)[box], pad) for a in arrays)
    return out


def candidate_centers(wm_mask: LabelMap3, lesion_mask: LabelMap3, params: PlacementParams = PlacementParams()):
    radius = params.erosion_radius or auto_radius(lesion_mask.data)
    return erode(wm_mask, radius)


def select_center(wm_mask: LabelMap3, lesion_mask: LabelMap3, params: PlacementParams = PlacementParams(),
                  rng=None, *, exclude=None):
    """Uniform draw from the eroded white-matter mask.

    ``exclude`` is an optional host-sized boolean array; a center is redrawn
    (up to ``max_draws`` times) while the placed lesion overlaps it.
    """
    eroded = candidate_centers(wm_mask, lesion_mask, params).data
    flat = np.flatnonzero(eroded.ravel(order="F"))
    if flat.size == 0:
        raise NoValidLocation("eroded white-matter mask is empty")
    rng = as_rng(rng)
    if exclude is None:
        return _unravel(flat[rng.integers(flat.size)], eroded.shape)
    exclude = np.asarray(exclude, dtype=bool)
    if exclude.shape != eroded.shape:
        raise DimensionMismatch(f"exclude mask {exclude.shape} vs wm mask {eroded.shape}")
    fg = np.argwhere(np.asarray(lesion_mask.data) > 0) - anchor(lesion_mask.data)
    for _ in range(params.max_draws):
        c = _unravel(flat[rng.integers(flat.size)], eroded.shape)
        pts = fg + np.asarray(c)
        if not exclude[tuple(pts.T)].any():
            return c
    raise RetryExhausted(f"every center collided with excluded voxels after {params.max_draws} draws")


def _unravel(i, shape):
    return tuple(int(x) for x in np.unravel_index(i, shape, order="F"))
