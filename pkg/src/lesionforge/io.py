"""Volume, label-map and matrix file I/O.

Two formats are supported:

``nifti1``
    Single-file NIfTI-1 (``.nii`` or ``.nii.gz``), little-endian only.
    Readable datatypes are uint8 (2), int16 (4) and float32 (16). Volumes are
    written as float32 with ``vox_offset = 352``.

``rawjson``
    ``<name>.bin`` holding little-endian float32 values plus a ``<name>.json``
    sidecar. Volumes use ``{"dims": [nx, ny, nz], "spacing": [sx, sy, sz]}``
    with x-fastest payload order. General arrays (embedding matrices, feature
    maps) use ``{"shape": [...]}`` with row-major payload order, except that
    trailing spatial axes of a feature map are stored x-fastest (see
    :func:`save_features`).
"""

from __future__ import annotations

import gzip
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IoFailure, MalformedHeader, UnsupportedDatatype
from .volume import LabelMap3, Volume3

HEADER_SIZE = 348
VOX_OFFSET = 352
MAGIC = b"n+1\x00"

DT_UINT8 = 2
DT_INT16 = 4
DT_FLOAT32 = 16
_DTYPES = {
    DT_UINT8: np.dtype("<u1"),
    DT_INT16: np.dtype("<i2"),
    DT_FLOAT32: np.dtype("<f4"),
}
_CODES = {v: k for k, v in _DTYPES.items()}

# Header bytes that carry orientation; echoed verbatim when a loaded volume is saved.
_ORIENT_SLICE = slice(252, 328)
_XYZT_UNITS = 123
_NIFTI_UNITS_MM = 2

FORMATS = ("nifti1", "rawjson")


def _open_read(path):
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except FileNotFoundError:
        raise
    except (OSError, EOFError) as exc:
        raise MalformedHeader(f"{path}: cannot read ({exc})") from exc


def _write_bytes(path, payload):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == ".gz":
            # mtime=0 keeps compressed output byte-identical across runs
            with open(path, "wb") as raw, gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0) as fh:
                fh.write(payload)
        else:
            path.write_bytes(payload)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def guess_format(path):
    name = str(path).lower()
    if name.endswith(".nii") or name.endswith(".nii.gz"):
        return "nifti1"
    if name.endswith(".bin") or name.endswith(".json"):
        return "rawjson"
    raise ValueError(f"cannot infer file format from {path!r}; pass format explicitly")


# -- NIfTI-1 ---------------------------------------------------------------


def parse_nifti1(buf):
    """Parse a NIfTI-1 byte string into ``(array, spacing, meta)``."""
    if len(buf) < HEADER_SIZE:
        raise MalformedHeader(f"file is {len(buf)} bytes, shorter than a NIfTI-1 header")
    sizeof_hdr = struct.unpack_from("<i", buf, 0)[0]
    if sizeof_hdr != HEADER_SIZE:
        if struct.unpack_from(">i", buf, 0)[0] == HEADER_SIZE:
            raise MalformedHeader("big-endian NIfTI files are not supported")
        raise MalformedHeader(f"sizeof_hdr is {sizeof_hdr}, expected 348")
    magic = bytes(buf[344:348])
    if magic != MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}, expected {MAGIC!r}")

    dim = struct.unpack_from("<8h", buf, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise MalformedHeader(f"dim[0]={ndim} out of range")
    if ndim < 3 or any(d != 1 for d in dim[4:ndim + 1]):
        raise DimensionMismatch(f"expected a 3D volume, header dims are {dim[1:ndim + 1]}")
    shape = tuple(int(d) for d in dim[1:4])
    if min(shape) < 1:
        raise MalformedHeader(f"non-positive dimension in {shape}")

    datatype, bitpix = struct.unpack_from("<hh", buf, 70)
    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"NIfTI datatype code {datatype} is not supported")
    dtype = _DTYPES[datatype]
    if bitpix != dtype.itemsize * 8:
        raise MalformedHeader(f"bitpix {bitpix} inconsistent with datatype {datatype}")

    pixdim = struct.unpack_from("<8f", buf, 76)
    spacing = tuple(abs(float(p)) if p != 0 else 1.0 for p in pixdim[1:4])
    vox_offset = int(struct.unpack_from("<f", buf, 108)[0])
    if vox_offset < HEADER_SIZE:
        raise MalformedHeader(f"vox_offset {vox_offset} lies inside the header")
    slope, inter = struct.unpack_from("<ff", buf, 112)

    n = int(np.prod(shape))
    end = vox_offset + n * dtype.itemsize
    if len(buf) < end:
        raise MalformedHeader(f"truncated data: need {end} bytes, file has {len(buf)}")
    raw = np.frombuffer(buf, dtype=dtype, count=n, offset=vox_offset)
    data = raw.astype(np.float32).reshape(shape, order="F")
    if slope != 0 and (slope != 1 or inter != 0):
        data = (data * np.float32(slope) + np.float32(inter)).astype(np.float32)

    meta = {
        "orientation": bytes(buf[_ORIENT_SLICE]),
        "xyzt_units": buf[_XYZT_UNITS],
        "pixdim0": float(pixdim[0]) if pixdim[0] in (-1.0, 1.0) else 1.0,
        "datatype": int(datatype),
    }
    return data, spacing, meta


def build_nifti1(data, spacing, meta=None, datatype=DT_FLOAT32):
    """Serialise a 3D array into single-file NIfTI-1 bytes."""
    meta = meta or {}
    dtype = _DTYPES[datatype]
    nx, ny, nz = data.shape
    sx, sy, sz = (float(s) for s in spacing)
    hdr = bytearray(VOX_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    hdr[38] = ord("r")
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<hh", hdr, 70, datatype, dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, meta.get("pixdim0", 1.0), sx, sy, sz, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<f", hdr, 108, float(VOX_OFFSET))
    struct.pack_into("<ff", hdr, 112, 1.0, 0.0)
    hdr[_XYZT_UNITS] = meta.get("xyzt_units", _NIFTI_UNITS_MM)
    orient = meta.get("orientation")
    if orient is not None and len(orient) == _ORIENT_SLICE.stop - _ORIENT_SLICE.start:
        hdr[_ORIENT_SLICE] = orient
    else:
        # qform and sform both scanner-aligned: diagonal affine from spacing
        struct.pack_into("<hh", hdr, 252, 1, 1)
        struct.pack_into("<4f", hdr, 280, sx, 0.0, 0.0, 0.0)
        struct.pack_into("<4f", hdr, 296, 0.0, sy, 0.0, 0.0)
        struct.pack_into("<4f", hdr, 312, 0.0, 0.0, sz, 0.0)
    hdr[344:348] = MAGIC
    # bytes 348..351: extension flag, all zero (no extensions)
    payload = np.asarray(data).astype(dtype).tobytes(order="F")
    return bytes(hdr) + payload


# -- rawjson ---------------------------------------------------------------


def _rawjson_paths(path):
    path = Path(path)
    if path.suffix in (".bin", ".json"):
        path = path.with_suffix("")
    return path.with_name(path.name + ".bin"), path.with_name(path.name + ".json")


def _read_sidecar(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedHeader(f"{path}: invalid JSON sidecar ({exc})") from exc


def _read_payload(bin_path, count):
    raw = Path(bin_path).read_bytes()
    if len(raw) != 4 * count:
        raise MalformedHeader(f"{bin_path}: expected {4 * count} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float32)


def _write_rawjson(path, values, sidecar):
    bin_path, json_path = _rawjson_paths(path)
    _write_bytes(bin_path, np.ascontiguousarray(values, dtype="<f4").tobytes())
    try:
        json_path.write_text(json.dumps(sidecar))
    except OSError as exc:
        raise IoFailure(f"cannot write {json_path}: {exc}") from exc


# -- public API ------------------------------------------------------------


def load_volume(path, format=None) -> Volume3:
    format = format or guess_format(path)
    if format == "nifti1":
        data, spacing, meta = parse_nifti1(_open_read(path))
        return Volume3(data, spacing, meta)
    if format == "rawjson":
        bin_path, json_path = _rawjson_paths(path)
        side = _read_sidecar(json_path)
        try:
            dims = [int(d) for d in side["dims"]]
            spacing = [float(s) for s in side.get("spacing", (1.0, 1.0, 1.0))]
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedHeader(f"{json_path}: missing or invalid dims/spacing") from exc
        if len(dims) != 3:
            raise DimensionMismatch(f"{json_path}: expected 3 dims, got {dims}")
        values = _read_payload(bin_path, int(np.prod(dims)))
        return Volume3.from_linear(values, dims, spacing)
    raise ValueError(f"unknown format {format!r}")


def save_volume(v: Volume3, path, format=None) -> None:
    format = format or guess_format(path)
    if format == "nifti1":
        _write_bytes(path, build_nifti1(v.data, v.spacing, v.meta))
    elif format == "rawjson":
        _write_rawjson(path, v.linear(), {"dims": list(v.dims), "spacing": list(v.spacing)})
    else:
        raise ValueError(f"unknown format {format!r}")


def load_labels(path, format=None) -> LabelMap3:
    v = load_volume(path, format)
    return LabelMap3(np.rint(v.data).astype(np.int16), v.spacing, v.meta)


def save_labels(labels: LabelMap3, path, format=None) -> None:
    format = format or guess_format(path)
    if format == "nifti1":
        _write_bytes(path, build_nifti1(labels.data, labels.spacing, labels.meta, DT_UINT8))
    else:
        save_volume(Volume3(labels.data.astype(np.float32), labels.spacing), path, format)


def load_matrix(path, meta_path=None):
    """Load a row-major float32 array whose sidecar records ``shape``."""
    bin_path, json_path = _rawjson_paths(path)
    if meta_path is not None:
        json_path = Path(meta_path)
    side = _read_sidecar(json_path)
    shape = side.get("shape", side.get("dims"))
    if shape is None:
        raise MalformedHeader(f"{json_path}: sidecar needs a 'shape' field")
    shape = tuple(int(s) for s in shape)
    return _read_payload(bin_path, int(np.prod(shape))).reshape(shape)


def save_matrix(a, path):
    a = np.asarray(a)
    _write_rawjson(path, a.ravel(order="C"), {"shape": list(a.shape)})


def load_features(path, meta_path=None):
    """Load a ``[n, c, X, Y, Z]`` feature map.

    The payload holds, for each batch item and channel in turn, one volume in
    x-fastest order (C order of ``[n, c, Z, Y, X]``).
    """
    bin_path, json_path = _rawjson_paths(path)
    if meta_path is not None:
        json_path = Path(meta_path)
    side = _read_sidecar(json_path)
    shape = tuple(int(s) for s in side.get("shape", ()))
    if len(shape) != 5:
        raise DimensionMismatch(f"{json_path}: feature shape must be [n, c, X, Y, Z], got {list(shape)}")
    n, c, x, y, z = shape
    flat = _read_payload(bin_path, int(np.prod(shape)))
    return flat.reshape(n, c, z, y, x).transpose(0, 1, 4, 3, 2).copy()


def save_features(f, path):
    f = np.asarray(f, dtype=np.float32)
    if f.ndim != 5:
        raise DimensionMismatch(f"feature map must be 5D, got shape {f.shape}")
    _write_rawjson(path, f.transpose(0, 1, 4, 3, 2).ravel(order="C"), {"shape": list(f.shape)})
