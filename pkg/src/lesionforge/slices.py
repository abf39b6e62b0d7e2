"""PGM/PPM slice export for eyeballing volumes and label overlays."""

from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, IoFailure, OutOfBounds

AXES = {"x": 0, "y": 1, "z": 2}


def _slice(a, axis, index):
    if index < 0 or index >= a.shape[axis]:
        raise OutOfBounds(f"slice {index} outside axis of length {a.shape[axis]}")
    # rows follow the second remaining axis, columns the first
    return np.take(a, index, axis=axis).T


def window(img):
    """Min-max window to 8 bits; a constant slice maps to mid-gray."""
    lo, hi = float(img.min()), float(img.max())
    if hi <= lo:
        return np.full(img.shape, 128, dtype=np.uint8)
    return np.rint((img - lo) / (hi - lo) * 255.0).astype(np.uint8)


def tint(gray, labels):
    """RGB overlay: label 1 pushed to red, label 2 to green, others gray."""
    rgb = np.repeat(gray[..., None], 3, axis=2)
    half = gray // 2
    real, syn = labels == 1, labels == 2
    rgb[real] = np.stack([np.full_like(gray, 255), half, half], axis=-1)[real]
    rgb[syn] = np.stack([half, np.full_like(gray, 255), half], axis=-1)[syn]
    return rgb


def _write(path, header, pixels):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(header + pixels.tobytes())
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_pnm(path):
    """Read back a binary PGM (P5) or PPM (P6) with maxval 255."""
    raw = Path(path).read_bytes()
    magic, w, h, maxval, rest = raw.split(maxsplit=4)
    w, h = int(w), int(h)
    if magic == b"P5":
        return np.frombuffer(rest, np.uint8, w * h).reshape(h, w)
    if magic == b"P6":
        return np.frombuffer(rest, np.uint8, w * h * 3).reshape(h, w, 3)
    raise ValueError(f"{path}: not a binary PGM/PPM file")


def export_slices(v, labels=None, axis="z", index=0, path="slice.pgm"):
    """Write one slice as PGM, plus a label-tinted PPM next to it when labels are given.

    Returns the list of written paths.
    """
    ax = AXES[axis] if isinstance(axis, str) else int(axis)
    data = np.asarray(getattr(v, "data", v))
    gray = window(_slice(data.astype(np.float64), ax, index))
    h, w = gray.shape
    path = Path(path)
    pgm = path.with_suffix(".pgm")
    _write(pgm, f"P5\n{w} {h}\n255\n".encode(), gray)
    written = [pgm]
    if labels is not None:
        lab = np.asarray(getattr(labels, "data", labels))
        if lab.shape != data.shape:
            raise DimensionMismatch(f"labels {lab.shape} vs volume {data.shape}")
        ppm = path.with_suffix(".ppm")
        _write(ppm, f"P6\n{w} {h}\n255\n".encode(), tint(gray, _slice(lab, ax, index)))
        written.append(ppm)
    return written
