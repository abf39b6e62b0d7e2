"""Procedural binary lesion masks: ellipsoid unions, elastic warps, noisy boundaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import ParamOutOfRange, RetryExhausted
from .perlin import PerlinNoise3
from .rng import as_rng, make_rng
from .volume import LabelMap3, touches_face

MAX_CENTER_DRAWS = 50
MAX_ELASTIC_ATTEMPTS = 10
MAX_MASK_ATTEMPTS = 10
# elastic_deform rejects warps that change the foreground count by more than this fraction
MAX_VOLUME_CHANGE = 0.5


def _triple(v):
    if np.isscalar(v):
        return (int(v),) * 3
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ParamOutOfRange(f"expected 3 grid dims, got {t}")
    return t


@dataclass(frozen=True)
class MaskSynthParams:
    grid_dims: tuple = (64, 64, 64)
    n_ellipsoids_range: tuple = (1, 5)
    half_axis_range: tuple = (5.0, 15.0)
    elastic_sigma_range: tuple = (3.0, 6.0)
    elastic_alpha: float = 8.0
    perlin_cell: float = 8.0
    perlin_amplitude: float = 1.5
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "grid_dims", _triple(self.grid_dims))
        object.__setattr__(self, "n_ellipsoids_range", tuple(int(x) for x in self.n_ellipsoids_range))
        object.__setattr__(self, "half_axis_range", tuple(float(x) for x in self.half_axis_range))
        object.__setattr__(self, "elastic_sigma_range", tuple(float(x) for x in self.elastic_sigma_range))
        self.validate()

    @property
    def margin(self):
        """Clearance kept between an ellipsoid surface and the grid face.

        Covers the largest elastic displacement, one voxel of trilinear
        support, the noise amplitude and one voxel of face clearance.
        """
        return self.elastic_alpha + self.perlin_amplitude + 2.0

    def validate(self):
        n_lo, n_hi = self.n_ellipsoids_range
        a_lo, a_hi = self.half_axis_range
        s_lo, s_hi = self.elastic_sigma_range
        if not 1 <= n_lo <= n_hi:
            raise ParamOutOfRange(f"n_ellipsoids_range {self.n_ellipsoids_range} invalid")
        if not 0 < a_lo <= a_hi:
            raise ParamOutOfRange(f"half_axis_range {self.half_axis_range} invalid")
        if not 0 < s_lo <= s_hi:
            raise ParamOutOfRange(f"elastic_sigma_range {self.elastic_sigma_range} invalid")
        if self.elastic_alpha < 0:
            raise ParamOutOfRange("elastic_alpha must be >= 0")
        if self.perlin_cell < 2:
            raise ParamOutOfRange("perlin_cell must be >= 2")
        if self.perlin_amplitude < 0:
            raise ParamOutOfRange("perlin_amplitude must be >= 0")
        need = 2.0 * (a_hi + self.margin)
        if min(self.grid_dims) < need:
            raise ParamOutOfRange(
                f"grid {self.grid_dims} too small: half-axis {a_hi} with margin {self.margin} needs {need:g} voxels"
            )


def ellipsoid_voxels(dims, center, half_axes):
    """Boolean grid of voxels whose centers satisfy sum(((a + 0.5 - c) / r)^2) <= 1."""
    out = np.zeros(dims, dtype=bool)
    lo = [max(0, math.floor(c - r - 0.5)) for c, r in zip(center, half_axes)]
    hi = [min(n, math.ceil(c + r + 0.5)) for n, c, r in zip(dims, center, half_axes)]
    if any(h <= l for l, h in zip(lo, hi)):
        return out
    axes = [(np.arange(l, h) + 0.5 - c) / r for l, h, c, r in zip(lo, hi, center, half_axes)]
    q = axes[0][:, None, None] ** 2 + axes[1][None, :, None] ** 2 + axes[2][None, None, :] ** 2
    out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = q <= 1.0
    return out


def gen_ellipsoid_union(params: MaskSynthParams, rng=None, *, n=None, half_axes=None, centers=None) -> LabelMap3:
    """Union of overlapping ellipsoids.

    ``n``, ``half_axes`` and ``centers`` override the random draws (useful for
    fixtures). The first ellipsoid sits at the grid center; each later one is
    redrawn until it intersects the union so far.
    """
    rng = as_rng(rng)
    dims = params.grid_dims
    if n is None:
        n = int(rng.integers(params.n_ellipsoids_range[0], params.n_ellipsoids_range[1] + 1))
    streams = rng.spawn(n)
    grid_center = tuple(d / 2.0 for d in dims)
    union = np.zeros(dims, dtype=bool)
    for i, sub in enumerate(streams):
        if half_axes is not None:
            r = tuple(float(a) for a in half_axes[i])
        else:
            r = tuple(sub.uniform(*params.half_axis_range, size=3))
        if centers is not None:
            shape = ellipsoid_voxels(dims, tuple(centers[i]), r)
        elif i == 0:
            shape = ellipsoid_voxels(dims, grid_center, r)
        else:
            lo = [ri + params.margin for ri in r]
            hi = [d - ri - params.margin for d, ri in zip(dims, r)]
            for _ in range(MAX_CENTER_DRAWS):
                c = tuple(sub.uniform(l, h) for l, h in zip(lo, hi))
                shape = ellipsoid_voxels(dims, c, r)
                if (shape & union).any():
                    break
            else:
                # the grid center lies inside the first ellipsoid, so overlap is guaranteed
                shape = ellipsoid_voxels(dims, grid_center, r)
        union |= shape
    if not union.any():
        raise ParamOutOfRange("ellipsoid union is empty")
    if touches_face(union):
        raise ParamOutOfRange("ellipsoid union touches the grid face")
    return LabelMap3(union)


def _deform_field(shape, sigma, rng):
    """Smoothed uniform noise per component, rescaled so its largest magnitude is 1."""
    comps = []
    for _ in range(3):
        noise = rng.uniform(-1.0, 1.0, size=shape).astype(np.float32)
        f = ndimage.gaussian_filter(noise, sigma, mode="constant")
        peak = np.abs(f).max()
        comps.append(f / peak if peak > 0 else f)
    return comps


def elastic_deform(mask: LabelMap3, sigma, alpha, rng=None) -> LabelMap3:
    """Backward-warp a binary mask through a smooth random displacement field.

    Each displacement component is at most ``alpha`` voxels. Warps that
    change the foreground count by more than 50% are redrawn.
    """
    if not sigma > 0:
        raise ParamOutOfRange(f"sigma must be > 0, got {sigma}")
    if alpha < 0:
        raise ParamOutOfRange(f"alpha must be >= 0, got {alpha}")
    src = mask.data.astype(bool)
    if alpha == 0:
        return LabelMap3(src)
    rng = as_rng(rng)
    before = np.count_nonzero(src)
    grid = np.indices(src.shape, dtype=np.float64)
    values = src.astype(np.float64)
    for _ in range(MAX_ELASTIC_ATTEMPTS):
        disp = _deform_field(src.shape, sigma, rng)
        coords = [g + alpha * d for g, d in zip(grid, disp)]
        warped = ndimage.map_coordinates(values, coords, order=1, mode="constant", cval=0.0) >= 0.5
        after = np.count_nonzero(warped)
        if before == 0 or abs(after - before) <= MAX_VOLUME_CHANGE * before:
            return LabelMap3(warped)
    raise RetryExhausted(f"no elastic warp within {MAX_VOLUME_CHANGE:.0%} volume change after {MAX_ELASTIC_ATTEMPTS} draws")


def signed_distance(mask, reach=None):
    """Distance to the voxel-face boundary: positive inside, negative outside, never zero.

    With ``reach`` set, the transform runs on the foreground bounding box
    padded by ``reach + 1`` voxels. Values are exact inside the foreground and
    within ``reach`` outside it; farther voxels are reported as ``-inf``.
    """
    inside = np.asarray(mask, dtype=bool)
    if reach is None or not inside.any():
        box = tuple(slice(0, n) for n in inside.shape)
    else:
        pad = int(math.ceil(reach)) + 1
        nz = np.nonzero(inside)
        box = tuple(slice(max(0, int(a.min()) - pad), min(n, int(a.max()) + pad + 1))
                    for a, n in zip(nz, inside.shape))
    sub = inside[box]
    d_in = ndimage.distance_transform_edt(sub)
    d_out = ndimage.distance_transform_edt(~sub)
    out = np.full(inside.shape, -np.inf)
    out[box] = np.where(sub, d_in - 0.5, 0.5 - d_out)
    return out


def perlin_roughen(mask: LabelMap3, cell, amplitude, rng=None) -> LabelMap3:
    """Perturb the mask iso-surface by ``amplitude`` times gradient noise."""
    if cell < 2:
        raise ParamOutOfRange(f"cell must be >= 2, got {cell}")
    if amplitude < 0:
        raise ParamOutOfRange(f"amplitude must be >= 0, got {amplitude}")
    src = mask.data.astype(bool)
    if amplitude == 0 or not src.any() or src.all():
        return LabelMap3(src)
    noise = PerlinNoise3(as_rng(rng))
    d = signed_distance(src, reach=amplitude)
    # only voxels within `amplitude` of the boundary can flip
    band = np.nonzero(np.abs(d) < amplitude)
    out = src.copy()
    out[band] = d[band] + amplitude * noise.sample_voxels(band, cell) > 0
    return LabelMap3(out)


def largest_component(mask):
    """Keep the largest 6-connected component (ties go to the lowest label)."""
    labels, count = ndimage.label(mask)
    if count <= 1:
        return np.asarray(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def gen_lesion_mask(params: MaskSynthParams) -> LabelMap3:
    """Ellipsoid union, then elastic warp, then noisy boundary, then largest component."""
    for attempt in range(MAX_MASK_ATTEMPTS):
        try:
            union = gen_ellipsoid_union(params, make_rng(params.seed, "ellipsoids", attempt))
            erng = make_rng(params.seed, "elastic", attempt)
            sigma = erng.uniform(*params.elastic_sigma_range)
            warped = elastic_deform(union, sigma, params.elastic_alpha, erng)
            rough = perlin_roughen(warped, params.perlin_cell, params.perlin_amplitude,
                                   make_rng(params.seed, "perlin", attempt))
        except RetryExhausted:
            continue
        out = largest_component(rough.data)
        if out.any() and not touches_face(out):
            return LabelMap3(out)
    raise RetryExhausted(f"no usable lesion mask after {MAX_MASK_ATTEMPTS} attempts (seed {params.seed})")
