"""Lesion intensity textures harvested from a host brain, with intensity perturbation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NoValidLocation, ParamOutOfRange
from .masksynth import MaskSynthParams, gen_lesion_mask
from .rng import as_rng, make_rng
from .volume import LabelMap3, Volume3

MAX_PLACEMENT_DRAWS = 1000


@dataclass(frozen=True)
class PerturbParams:
    gamma_range: tuple = (0.7, 1.3)
    noise_std: float = 0.05
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "gamma_range", tuple(float(g) for g in self.gamma_range))
        lo, hi = self.gamma_range
        if not 0 < lo <= hi:
            raise ParamOutOfRange(f"gamma_range {self.gamma_range} must satisfy 0 < low <= high")
        if self.noise_std < 0:
            raise ParamOutOfRange("noise_std must be >= 0")


def foreground_box(mask):
    """Inclusive-exclusive bounding box ``(lo, hi)`` of the nonzero voxels."""
    nz = np.nonzero(np.asarray(mask))
    if nz[0].size == 0:
        raise ParamOutOfRange("mask is empty")
    lo = np.array([a.min() for a in nz])
    hi = np.array([a.max() + 1 for a in nz])
    return lo, hi


def grid_offset(center, lesion_dims):
    """Host index of lesion-grid voxel (0, 0, 0) when the grid's middle voxel sits on ``center``."""
    return np.asarray(center) - np.asarray(lesion_dims) // 2


def _box_fits(brain, lo, hi):
    if (lo < 0).any() or (hi > np.asarray(brain.shape)).any():
        return False
    return bool(brain[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]].all())


def sample_texture(host: Volume3, brain_mask: LabelMap3, lesion_mask: LabelMap3, rng=None, *, center=None) -> Volume3:
    """Copy host intensities under ``lesion_mask`` from a random brain location.

    A center voxel is drawn uniformly from the brain mask until the lesion's
    foreground bounding box, placed with the lesion grid's middle voxel on
    that center, lies entirely inside the brain. ``center`` skips the draw.
    """
    if brain_mask.dims != host.dims:
        raise DimensionMismatch(f"brain mask {brain_mask.dims} vs host {host.dims}")
    brain = brain_mask.data > 0
    lmask = lesion_mask.data > 0
    lo, hi = foreground_box(lmask)
    if center is None:
        candidates = np.flatnonzero(brain.ravel(order="F"))
        if candidates.size == 0:
            raise NoValidLocation("brain mask is empty")
        rng = as_rng(rng)
        for _ in range(MAX_PLACEMENT_DRAWS):
            c = np.unravel_index(candidates[rng.integers(candidates.size)], brain.shape, order="F")
            off = grid_offset(c, lmask.shape)
            if _box_fits(brain, off + lo, off + hi):
                center = c
                break
        else:
            raise NoValidLocation(f"no brain location fits the lesion after {MAX_PLACEMENT_DRAWS} draws")
    off = grid_offset(center, lmask.shape)
    if not _box_fits(np.ones(host.dims, bool), off + lo, off + hi):
        raise NoValidLocation(f"lesion at center {tuple(center)} leaves the host grid")

    out = np.zeros(lmask.shape, dtype=np.float32)
    idx = np.nonzero(lmask)
    out[idx] = host.data[tuple(i + o for i, o in zip(idx, off))]
    return Volume3(out, host.spacing)


def perturb_intensity(texture: Volume3, mask: LabelMap3, params: PerturbParams, rng=None,
                      *, value_range=None, gamma=None) -> Volume3:
    """Scale the foreground by one random factor and add small Gaussian noise.

    The noise is recentred to zero mean over the foreground so the mean
    intensity ratio equals the drawn factor exactly. ``value_range`` clamps
    foreground values (typically the host's min and max). ``gamma`` forces
    the factor.
    """
    if texture.dims != mask.dims:
        raise DimensionMismatch(f"texture {texture.dims} vs mask {mask.dims}")
    rng = as_rng(rng)
    fg = mask.data > 0
    data = np.array(texture.data, dtype=np.float64)
    data[~fg] = 0.0
    if gamma is None:
        gamma = rng.uniform(*params.gamma_range)
    elif gamma <= 0:
        raise ParamOutOfRange(f"gamma must be > 0, got {gamma}")
    vals = data[fg]
    out_vals = gamma * vals
    std = vals.std() if vals.size else 0.0
    if params.noise_std > 0 and std > 0:
        eta = rng.normal(0.0, params.noise_std * std, size=vals.size)
        out_vals = out_vals + (eta - eta.mean())
    if value_range is not None:
        out_vals = np.clip(out_vals, value_range[0], value_range[1])
    data[fg] = out_vals
    return Volume3(data.astype(texture.data.dtype), texture.spacing)


def gen_lesion_pair(host: Volume3, brain_mask: LabelMap3, mask_params: MaskSynthParams,
                    perturb_params: PerturbParams):
    """Synthesise a (lesion image, lesion mask) pair on the mask grid."""
    mask = gen_lesion_mask(mask_params)
    seed = perturb_params.seed
    texture = sample_texture(host, brain_mask, mask, make_rng(seed, "texture"))
    value_range = (float(host.data.min()), float(host.data.max()))
    image = perturb_intensity(texture, mask, perturb_params, make_rng(seed, "perturb"), value_range=value_range)
    return image, mask
