"""PCA-constrained sampling of embedding vectors."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateData, DimensionMismatch, IoFailure, MalformedHeader, NonFinite, ParamOutOfRange
from .rng import as_rng

# cumulative-variance comparisons tolerate this much round-off (e.g. 9/10 summing to 0.8999...)
_VARIANCE_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class LatentSet:
    mean: np.ndarray
    components: np.ndarray
    explained_ratio: np.ndarray
    proj_min: np.ndarray
    proj_max: np.ndarray
    vectors: np.ndarray | None = None
    variance_target: float = 0.90

    @property
    def k(self):
        return self.components.shape[0]

    @property
    def d(self):
        return self.components.shape[1]

    def to_dict(self):
        return {
            "variance_target": self.variance_target,
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_ratio": self.explained_ratio.tolist(),
            "proj_min": self.proj_min.tolist(),
            "proj_max": self.proj_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        try:
            comps = np.asarray(d["components"], dtype=np.float64)
            out = cls(
                mean=np.asarray(d["mean"], dtype=np.float64),
                components=comps.reshape(len(d["components"]), -1) if comps.size else comps.reshape(0, 0),
                explained_ratio=np.asarray(d["explained_ratio"], dtype=np.float64),
                proj_min=np.asarray(d["proj_min"], dtype=np.float64),
                proj_max=np.asarray(d["proj_max"], dtype=np.float64),
                variance_target=float(d.get("variance_target", 0.90)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedHeader(f"invalid latent model: {exc}") from exc
        if out.mean.shape != (out.d,) or not (out.explained_ratio.shape == out.proj_min.shape == out.proj_max.shape == (out.k,)):
            raise DimensionMismatch("latent model arrays have inconsistent shapes")
        return out

    def save(self, path):
        try:
            Path(path).write_text(json.dumps(self.to_dict(), indent=1))
        except OSError as exc:
            raise IoFailure(f"cannot write {path}: {exc}") from exc

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise MalformedHeader(f"{path}: invalid JSON ({exc})") from exc


def _pin_signs(vecs):
    """Flip each column so its largest-magnitude entry (first on ties) is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def pca_fit(vectors, variance_target=0.90) -> LatentSet:
    """Fit the smallest PCA basis covering ``variance_target`` of the variance."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch(f"expected an N x d matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2 or d < 1:
        raise DegenerateData(f"need N >= 2 rows and d >= 1 columns, got {x.shape}")
    if not np.isfinite(x).all():
        raise NonFinite("embedding matrix contains NaN or Inf")
    if not 0 < variance_target <= 1:
        raise ParamOutOfRange(f"variance_target must be in (0, 1], got {variance_target}")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    evals = np.clip(evals, 0.0, None)
    total = evals.sum()
    if not total > 0 or total <= 1e-12 * max(1.0, float(np.abs(x).max()) ** 2):
        raise DegenerateData("embedding vectors have zero total variance")

    # eigh is ascending; a stable sort on the negated values keeps axis order on ties
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], _pin_signs(evecs[:, order])
    ratio = evals / total
    cum = np.cumsum(ratio)
    k = int(np.searchsorted(cum, variance_target - _VARIANCE_SLACK) + 1)
    k = min(k, d)
    comps = evecs[:, :k].T.copy()
    proj = centered @ comps.T
    return LatentSet(mean, comps, ratio[:k].copy(), proj.min(axis=0), proj.max(axis=0), x, float(variance_target))


def project(ls: LatentSet, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != ls.d:
        raise DimensionMismatch(f"vector length {x.shape[-1]} != latent dimension {ls.d}")
    return (x - ls.mean) @ ls.components.T


def inverse(ls: LatentSet, z):
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != ls.k:
        raise DimensionMismatch(f"reduced vector length {z.shape[-1]} != K = {ls.k}")
    return ls.mean + z @ ls.components


def constrained_sample(ls: LatentSet, rng=None, n=None):
    """Uniform draw inside the bounding box of the projected training rows, mapped back.

    Returns one d-vector, or an ``(n, d)`` array when ``n`` is given.
    """
    rng = as_rng(rng)
    size = (ls.k,) if n is None else (int(n), ls.k)
    z = rng.uniform(ls.proj_min, ls.proj_max, size=size)
    return inverse(ls, z)
