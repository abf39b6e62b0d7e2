"""Voxel-grid value types and patch extract/insert.

Arrays are indexed ``data[x, y, z]``. The on-disk and "linear" order is
x-fastest, i.e. ``data.ravel(order="F")``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NonFinite, OutOfBounds, ParamOutOfRange

LABEL_BACKGROUND = 0
LABEL_REAL = 1
LABEL_SYNTHETIC = 2


def _frozen(a):
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def _as_triple(v, name):
    t = tuple(v)
    if len(t) != 3:
        raise DimensionMismatch(f"{name} must have 3 components, got {len(t)}")
    return t


@dataclass(frozen=True, eq=False)
class Volume3:
    """Dense scalar 3D grid with voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    # Untouched header extras (affine rows, qform codes) echoed back on save.
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise DimensionMismatch(f"Volume3 needs a 3D array, got shape {data.shape}")
        if min(data.shape) < 1:
            raise DimensionMismatch(f"empty axis in shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if not np.isfinite(data).all():
            raise NonFinite("Volume3 data contains NaN or Inf")
        spacing = tuple(float(s) for s in _as_triple(self.spacing, "spacing"))
        if any(not s > 0 for s in spacing):
            raise ParamOutOfRange(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.data.shape

    def with_data(self, data):
        return Volume3(data, self.spacing, dict(self.meta))

    def linear(self):
        """Voxel values in x-fastest linear order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_linear(cls, values, dims, spacing=(1.0, 1.0, 1.0)):
        dims = _as_triple(dims, "dims")
        values = np.asarray(values)
        if values.size != int(np.prod(dims)):
            raise DimensionMismatch(f"{values.size} values do not fill dims {dims}")
        return cls(values.reshape(dims, order="F"), spacing)


@dataclass(frozen=True, eq=False)
class LabelMap3:
    """Integer 3D grid: 0 background, 1 real lesion, 2 synthetic lesion."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise DimensionMismatch(f"LabelMap3 needs a 3D array, got shape {data.shape}")
        if data.dtype != bool and not np.issubdtype(data.dtype, np.integer):
            if not np.array_equal(data, np.round(data)):
                raise ParamOutOfRange("label values must be integers")
        if data.size and (data.min() < 0 or data.max() > 2):
            raise ParamOutOfRange("label values must lie in {0, 1, 2}")
        data = data.astype(np.uint8)
        spacing = tuple(float(s) for s in _as_triple(self.spacing, "spacing"))
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.data.shape

    def count(self, label=1):
        return int(np.count_nonzero(self.data == label))

    def binary(self, label=1):
        """Boolean array of voxels carrying ``label``."""
        return self.data == label

    def is_binary(self):
        return bool(self.data.max(initial=0) <= 1)


@dataclass(frozen=True, eq=False)
class Patch:
    """A sub-volume and its {0,1} mask, anchored at ``origin`` in a host grid."""

    origin: tuple
    volume: Volume3
    mask: LabelMap3

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(int(o) for o in _as_triple(self.origin, "origin")))
        if self.mask.dims != self.volume.dims:
            raise DimensionMismatch(f"mask dims {self.mask.dims} != volume dims {self.volume.dims}")
        if not self.mask.is_binary():
            raise ParamOutOfRange("patch mask must be restricted to {0, 1}")


def touches_face(mask):
    m = np.asarray(mask)
    return bool(
        m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any() or m[:, :, 0].any() or m[:, :, -1].any()
    )


def check_box(host_dims, origin, dims):
    origin = _as_triple(origin, "origin")
    dims = _as_triple(dims, "dims")
    for o, d, n in zip(origin, dims, host_dims):
        if d < 1 or o < 0 or o + d > n:
            raise OutOfBounds(f"box origin={origin} dims={dims} exceeds host dims {tuple(host_dims)}")
    return tuple(slice(o, o + d) for o, d in zip(origin, dims))


def extract_patch(host: Volume3, origin, dims) -> Volume3:
    box = check_box(host.dims, origin, dims)
    return Volume3(host.data[box], host.spacing)


def insert_patch(host: Volume3, patch: Patch) -> Volume3:
    """Copy patch values into ``host`` wherever the patch mask is 1."""
    box = check_box(host.dims, patch.origin, patch.volume.dims)
    out = np.array(host.data, copy=True)
    sel = patch.mask.data == 1
    out[box][sel] = patch.volume.data[sel].astype(out.dtype, copy=False)
    return host.with_data(out)
