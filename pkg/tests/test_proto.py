import math

import numpy as np
import pytest

from lesionforge.errors import DimensionMismatch, EmptyClass, NoContributingItems, ParamOutOfRange, ZeroNormVector
from lesionforge.proto import (
    ProtoConfig,
    class_prototype,
    cosine_to_columns,
    prototype_consistency,
    prototype_difference_loss,
    prototype_relation_loss,
    prototype_terms,
    sample_class_features,
)
from lesionforge.rng import make_rng


def hand_item():
    """2 channels on a 2x1x1 grid: a real voxel with feature (1,0), a synthetic one with (0,1)."""
    F = np.zeros((2, 2, 1, 1))
    F[:, 0, 0, 0] = (1.0, 0.0)
    F[:, 1, 0, 0] = (0.0, 1.0)
    M = np.array([1, 2], np.uint8).reshape(2, 1, 1)
    return F, M


def brute_cos(a, b):
    dot = na = nb = 0.0
    for x, y in zip(a, b):
        dot += x * y
        na += x * x
        nb += y * y
    return dot / max(math.sqrt(na) * math.sqrt(nb), 1e-12)


def brute_relation(pr, ps, fr, fs):
    total = 0.0
    for p in (pr, ps):
        for j in range(fr.shape[1]):
            total += abs(brute_cos(p, fr[:, j]) - brute_cos(p, fs[:, j]))
    return total


def brute_prototype(F, M, label):
    acc = np.zeros(F.shape[0])
    n = 0
    for idx in np.ndindex(M.shape):
        if M[idx] == label:
            acc += F[(slice(None),) + idx]
            n += 1
    return acc / n


def test_hand_chain():
    F, M = hand_item()
    res = prototype_terms(F, [M], ProtoConfig(k=1, lambda1=1, lambda2=50))
    assert (res.l_pd, res.l_prd, res.l_pc) == (2.0, 2.0, 102.0)
    assert res.as_dict() == {"L_pd": 2.0, "L_prd": 2.0, "L_pc": 102.0}
    assert prototype_consistency(F, [M], ProtoConfig(k=1)) == 102.0


def test_difference_loss_cases():
    assert prototype_difference_loss([1, 0], [0, 1]) == 2.0
    assert prototype_difference_loss([3, 4], [3, 4]) == 0.0
    a, b = make_rng(0).normal(size=(2, 16))
    assert prototype_difference_loss(a, b) == pytest.approx(sum(abs(x - y) for x, y in zip(a, b)), rel=1e-12)
    with pytest.raises(DimensionMismatch):
        prototype_difference_loss([1, 2], [1, 2, 3])


def test_prototype_cases():
    F = np.broadcast_to(np.array([2.0, -1.0])[:, None, None, None], (2, 3, 3, 3)).copy()
    M = np.zeros((3, 3, 3), np.uint8)
    M[0, :, :] = 1
    M[2, 2, 2] = 2
    np.testing.assert_array_equal(class_prototype(F, M, 1), [2.0, -1.0])
    F = make_rng(1).normal(size=(2, 3, 3, 3))
    np.testing.assert_array_equal(class_prototype(F, M, 2), F[:, 2, 2, 2])
    np.testing.assert_allclose(class_prototype(F, M, 1), brute_prototype(F, M, 1), rtol=1e-12)
    with pytest.raises(EmptyClass):
        class_prototype(F, np.zeros((3, 3, 3), np.uint8), 1)
    with pytest.raises(DimensionMismatch):
        class_prototype(F, np.zeros((3, 3, 4), np.uint8), 1)


def test_prototype_permutation_invariant():
    rng = make_rng(2)
    F = rng.normal(size=(3, 4, 4, 4))
    M = (rng.random((4, 4, 4)) < 0.5).astype(np.uint8)
    perm = rng.permutation(64)
    Fp = F.reshape(3, 64)[:, perm].reshape(3, 4, 4, 4)
    Mp = M.reshape(64)[perm].reshape(4, 4, 4)
    np.testing.assert_allclose(class_prototype(Fp, Mp, 1), class_prototype(F, M, 1), rtol=1e-12)


def test_sampling():
    F, M = hand_item()
    cols = sample_class_features(F, M, 1, 5, make_rng(0))
    assert cols.shape == (2, 5) and (cols == np.array([[1.0], [0.0]])).all()
    rng = make_rng(3)
    F = rng.normal(size=(2, 4, 1, 1))
    M = np.array([1, 0, 1, 0], np.uint8).reshape(4, 1, 1)
    draws = sample_class_features(F, M, 1, 10000, make_rng(4))
    frac = (draws[0] == F[0, 0, 0, 0]).mean()
    assert abs(frac - 0.5) <= 0.05
    members = {tuple(F[:, i, 0, 0]) for i in (0, 2)}
    assert all(tuple(c) in members for c in draws.T[:50])
    with pytest.raises(EmptyClass):
        sample_class_features(F, M, 2, 3, make_rng(0))


def test_relation_loss_cases():
    assert prototype_relation_loss([1, 0], [0, 1], [[1], [0]], [[0], [1]]) == 2.0
    f = make_rng(5).normal(size=(4, 7))
    assert prototype_relation_loss(f[:, 0], f[:, 1], f, f) == 0.0
    with pytest.raises(ZeroNormVector):
        prototype_relation_loss([0, 0], [0, 1], [[1], [0]], [[0], [1]])
    with pytest.raises(ZeroNormVector):
        cosine_to_columns([1, 0], [[0, 1], [0, 0]])
    with pytest.raises(DimensionMismatch):
        prototype_relation_loss([1, 0], [0, 1], [[1], [0]], [[0, 1], [1, 0]])


def test_relation_loss_matches_brute_force():
    rng = make_rng(6)
    for _ in range(100):
        c, k = rng.integers(1, 9), rng.integers(1, 17)
        pr, ps = rng.normal(size=(2, c))
        fr, fs = rng.normal(size=(2, c, k))
        ref = brute_relation(pr, ps, fr, fs)
        assert prototype_relation_loss(pr, ps, fr, fs) == pytest.approx(ref, rel=1e-6, abs=1e-12)


def test_scaling_by_power_of_two_is_exact():
    rng = make_rng(7)
    F = rng.normal(size=(2, 3, 5, 5, 5))
    M = [np.where(rng.random((5, 5, 5)) < 0.5, 1, 2).astype(np.uint8) for _ in range(2)]
    cfg = ProtoConfig(k=16, seed=3)
    base = prototype_terms(F, M, cfg)
    for s in (0.25, 2.0, 8.0):
        scaled = prototype_terms(F * s, M, cfg)
        assert scaled.l_prd == base.l_prd
        assert scaled.l_pd == s * base.l_pd


def test_zero_cases():
    rng = make_rng(8)
    v = rng.normal(size=3)
    F = np.broadcast_to(v[:, None, None, None], (3, 4, 4, 4)).copy()
    M = np.where(rng.random((4, 4, 4)) < 0.5, 1, 2).astype(np.uint8)
    res = prototype_terms(F, [M])
    assert (res.l_pd, res.l_prd, res.l_pc) == (0.0, 0.0, 0.0)
    G = rng.normal(size=(3, 4, 4, 4))
    assert prototype_consistency(G, [M], ProtoConfig(lambda1=0, lambda2=0)) == 0.0


def test_batch_skips_and_means(caplog):
    rng = make_rng(9)
    F = rng.normal(size=(3, 2, 4, 4, 4))
    good = np.where(rng.random((4, 4, 4)) < 0.5, 1, 2).astype(np.uint8)
    only_real = np.ones((4, 4, 4), np.uint8)
    cfg = ProtoConfig(k=8, seed=1)
    batch = prototype_terms(F, [good, only_real, good], cfg)
    assert batch.items == 2
    assert "lacks" in caplog.text
    # each item samples from its own stream, so it can be recomputed alone
    item0 = prototype_terms(F[0], good, cfg)
    item2_pd = prototype_difference_loss(class_prototype(F[2], good, 1), class_prototype(F[2], good, 2))
    assert batch.l_pd == pytest.approx((item0.l_pd + item2_pd) / 2, rel=1e-12)
    with pytest.raises(NoContributingItems):
        prototype_terms(F, [only_real] * 3, cfg)
    with pytest.raises(DimensionMismatch):
        prototype_terms(F, [good, good], cfg)


def test_deterministic_and_config_checks():
    rng = make_rng(10)
    F = rng.normal(size=(1, 2, 4, 4, 4))
    M = np.where(rng.random((4, 4, 4)) < 0.5, 1, 2).astype(np.uint8)
    assert prototype_terms(F, [M]) == prototype_terms(F, [M])
    with pytest.raises(ParamOutOfRange):
        ProtoConfig(k=0)
    with pytest.raises(ParamOutOfRange):
        ProtoConfig(lambda2=-1)
