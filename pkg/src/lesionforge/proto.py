"""Prototype consistency between real (label 1) and synthetic (label 2) lesion features.

Feature maps are arrays of shape ``(c, X, Y, Z)`` for one item or
``(n, c, X, Y, Z)`` for a batch. Everything here is forward-only numpy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyClass, NoContributingItems, ParamOutOfRange, ZeroNormVector
from .rng import as_rng, make_rng
from .volume import LABEL_REAL, LABEL_SYNTHETIC, LabelMap3

log = logging.getLogger(__name__)

COS_EPS = 1e-12
ZERO_NORM = 1e-30


@dataclass(frozen=True)
class ProtoConfig:
    k: int = 64
    lambda1: float = 1.0
    lambda2: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ParamOutOfRange("k must be >= 1")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ParamOutOfRange("loss weights must be >= 0")


@dataclass(frozen=True)
class ProtoLosses:
    l_pd: float
    l_prd: float
    l_pc: float
    items: int

    def as_dict(self):
        return {"L_pd": self.l_pd, "L_prd": self.l_prd, "L_pc": self.l_pc}


def _labels(M):
    return np.asarray(M.data if isinstance(M, LabelMap3) else M)


def _class_columns(F, M, label):
    F = np.asarray(F, dtype=np.float64)
    M = _labels(M)
    if F.ndim != 4 or F.shape[1:] != M.shape:
        raise DimensionMismatch(f"feature map {F.shape} does not match labels {M.shape}")
    sel = M == label
    if not sel.any():
        raise EmptyClass(f"no voxel carries label {label}")
    return F[:, sel]


def class_prototype(F, M, label):
    """Mean feature vector over the voxels carrying ``label``."""
    cols = _class_columns(F, M, label)
    # shifted mean: a class with identical columns returns that column exactly
    ref = cols[:, :1]
    return ref[:, 0] + (cols - ref).sum(axis=1) / cols.shape[1]


def prototype_difference_loss(p_real, p_syn):
    p_real, p_syn = np.asarray(p_real, dtype=np.float64), np.asarray(p_syn, dtype=np.float64)
    if p_real.shape != p_syn.shape:
        raise DimensionMismatch(f"prototype shapes differ: {p_real.shape} vs {p_syn.shape}")
    return float(np.abs(p_real - p_syn).sum())


def sample_class_features(F, M, label, k, rng=None):
    """``k`` feature columns drawn uniformly, with replacement, from one class."""
    cols = _class_columns(F, M, label)
    idx = as_rng(rng).integers(cols.shape[1], size=int(k))
    return cols[:, idx]


def cosine_to_columns(p, cols):
    """Cosine similarity between vector ``p`` and each column of ``cols``."""
    p = np.asarray(p, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    pn = np.linalg.norm(p)
    cn = np.linalg.norm(cols, axis=0)
    if pn < ZERO_NORM or (cn < ZERO_NORM).any():
        raise ZeroNormVector("cosine similarity of a zero-norm vector is undefined")
    return (p @ cols) / np.maximum(pn * cn, COS_EPS)


def prototype_relation_loss(p_real, p_syn, f_real, f_syn):
    f_real, f_syn = np.asarray(f_real), np.asarray(f_syn)
    if f_real.shape != f_syn.shape or f_real.shape[0] != np.shape(p_real)[0] or np.shape(p_real) != np.shape(p_syn):
        raise DimensionMismatch("prototype and sampled-feature dimensions disagree")
    a = np.abs(cosine_to_columns(p_real, f_real) - cosine_to_columns(p_real, f_syn)).sum()
    b = np.abs(cosine_to_columns(p_syn, f_real) - cosine_to_columns(p_syn, f_syn)).sum()
    return float(a + b)


def prototype_terms(F, M_batch, cfg: ProtoConfig = ProtoConfig(), rng=None) -> ProtoLosses:
    """Batch-mean prototype difference and relation losses and their weighted sum.

    Items lacking either lesion class are skipped with a warning. Each item
    draws its samples from its own stream so results do not depend on which
    items were skipped.
    """
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 4:
        F = F[None]
    if F.ndim != 5:
        raise DimensionMismatch(f"feature map must be (n, c, X, Y, Z), got shape {F.shape}")
    if isinstance(M_batch, (LabelMap3, np.ndarray)) and _labels(M_batch).ndim == 3:
        M_batch = [M_batch]
    M_batch = list(M_batch)
    if len(M_batch) != F.shape[0]:
        raise DimensionMismatch(f"{F.shape[0]} feature items but {len(M_batch)} label maps")

    pd, prd = [], []
    for i, (Fi, Mi) in enumerate(zip(F, M_batch)):
        Mi = _labels(Mi)
        if not ((Mi == LABEL_REAL).any() and (Mi == LABEL_SYNTHETIC).any()):
            log.warning("batch item %d lacks a real or synthetic lesion; skipped", i)
            continue
        item_rng = rng.spawn(1)[0] if rng is not None else make_rng(cfg.seed, "proto", i)
        p_real = class_prototype(Fi, Mi, LABEL_REAL)
        p_syn = class_prototype(Fi, Mi, LABEL_SYNTHETIC)
        f_real = sample_class_features(Fi, Mi, LABEL_REAL, cfg.k, item_rng)
        f_syn = sample_class_features(Fi, Mi, LABEL_SYNTHETIC, cfg.k, item_rng)
        pd.append(prototype_difference_loss(p_real, p_syn))
        prd.append(prototype_relation_loss(p_real, p_syn, f_real, f_syn))
    if not pd:
        raise NoContributingItems("no batch item contains both real and synthetic lesions")
    l_pd, l_prd = float(np.mean(pd)), float(np.mean(prd))
    return ProtoLosses(l_pd, l_prd, cfg.lambda1 * l_pd + cfg.lambda2 * l_prd, len(pd))


def prototype_consistency(F, M_batch, cfg: ProtoConfig = ProtoConfig(), rng=None) -> float:
    """Weighted prototype consistency loss ``lambda1 * L_pd + lambda2 * L_prd``."""
    return prototype_terms(F, M_batch, cfg, rng).l_pc
