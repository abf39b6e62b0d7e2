import json

import numpy as np
import pytest

from lesionforge import io
from lesionforge.errors import ConfigError
from lesionforge.pipeline import Inputs, PipelineConfig, augment_batch, augment_one
from lesionforge.slices import export_slices, read_pnm
from lesionforge.volume import LabelMap3, Volume3

SMALL_MASK = {"grid_dims": 32, "n_ellipsoids_range": [1, 3], "half_axis_range": [3, 6],
              "elastic_sigma_range": [2, 3], "elastic_alpha": 2, "perlin_cell": 4, "perlin_amplitude": 1.0}


def write_config(tmp_path, files, **extra):
    d = dict(files, mask=SMALL_MASK, seed=11, count=3, out_dir=str(tmp_path / "out"))
    d.update(extra)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


@pytest.fixture
def real_lesion(tmp_path, brain):
    host, _, wm = brain
    lab = np.zeros(host.dims, np.uint8)
    lab[26:30, 26:30, 26:30] = 1
    path = tmp_path / "lesions.nii.gz"
    io.save_labels(LabelMap3(lab), path)
    return str(path)


def test_augment_one_invariants(tmp_path, brain_files, brain, real_lesion):
    host, _, wm = brain
    cfg = PipelineConfig.load(write_config(tmp_path, brain_files, lesion_labels=real_lesion, lesions_per_image=2))
    res = augment_one(cfg, 1234)
    lab = res.labels.data
    assert set(np.unique(lab)) <= {0, 1, 2}
    assert (lab == 1).sum() == 64 and (lab[26:30, 26:30, 26:30] == 1).all()
    syn = lab == 2
    assert syn.sum() == sum(res.lesion_voxels)
    assert wm.data[syn].all()
    assert res.volume.data.dtype == host.data.dtype
    assert np.isfinite(res.volume.data).all()
    assert res.volume.data[~syn].tobytes() == host.data[~syn].tobytes()
    assert len(res.centers) == 2


def test_batch_manifest_and_outputs(tmp_path, brain_files):
    cfg = PipelineConfig.load(write_config(tmp_path, brain_files))
    manifest = augment_batch(cfg)
    assert [m["status"] for m in manifest] == ["ok"] * 3
    assert len({m["child_seed"] for m in manifest}) == 3
    on_disk = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert on_disk == manifest
    for m in manifest:
        assert set(m) >= {"inputs", "child_seed", "center", "lesion_voxels", "mode", "residual", "status"}
        vol = io.load_volume(m["outputs"]["image"])
        lab = io.load_labels(m["outputs"]["labels"])
        assert lab.count(2) == m["lesion_voxels"][0]
        assert vol.dims == lab.dims


def read_outputs(out_dir):
    files = sorted(p for p in out_dir.iterdir())
    return {p.name: p.read_bytes() for p in files}


def test_batch_deterministic_and_worker_independent(tmp_path, brain_files):
    runs = []
    for tag, workers in (("run1", 1), ("run2", 1), ("run4w", 4)):
        out = tmp_path / tag
        cfg = PipelineConfig.load(write_config(tmp_path, brain_files), out_dir=str(out), workers=workers)
        augment_batch(cfg)
        got = read_outputs(out)
        got["manifest.json"] = got["manifest.json"].replace((str(out) + "/").encode(), b"OUT/")
        runs.append(got)
    assert runs[0] == runs[1] == runs[2]


def test_empty_wm_marks_items_failed(tmp_path, brain_files, brain):
    io.save_labels(LabelMap3(np.zeros(brain[0].dims, np.uint8)), brain_files["wm_mask"])
    cfg = PipelineConfig.load(write_config(tmp_path, brain_files, count=2))
    manifest = augment_batch(cfg)
    assert [m["status"] for m in manifest] == ["failed", "failed"]
    assert all(m["error"].startswith("NoValidLocation") for m in manifest)


def test_config_errors(tmp_path, brain_files):
    with pytest.raises(ConfigError):
        PipelineConfig.load(tmp_path / "missing.json")
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(dict(brain_files, count=0))
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(dict(brain_files, mode="poisson"))
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(dict(brain_files, bogus=1))
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(dict(brain_files, mask={"grid_dims": 8}))
    cfg = PipelineConfig.from_dict(dict(brain_files, host=str(tmp_path / "nope.nii")))
    with pytest.raises(ConfigError):
        Inputs.load(cfg)


def test_relative_paths_and_overrides(tmp_path, brain_files):
    rel = {k: v.rsplit("/", 1)[1] for k, v in brain_files.items()}
    cfg = PipelineConfig.load(write_config(tmp_path, rel), seed=5, count=None)
    assert cfg.host == str(tmp_path / "host.nii.gz")
    assert cfg.seed == 5 and cfg.count == 3


# -- slices ----------------------------------------------------------------


def test_constant_volume_gives_uniform_gray(tmp_path):
    (p,) = export_slices(Volume3(np.full((5, 6, 7), 3.0)), axis="z", index=2, path=tmp_path / "s.pgm")
    img = read_pnm(p)
    assert img.shape == (6, 5)  # rows = ny, columns = nx
    assert (img == 128).all()


@pytest.mark.parametrize("axis, shape", [("x", (7, 6)), ("y", (7, 5)), ("z", (6, 5))])
def test_slice_dims(tmp_path, axis, shape):
    v = Volume3(np.random.default_rng(0).normal(size=(5, 6, 7)))
    (p,) = export_slices(v, axis=axis, index=1, path=tmp_path / "s")
    img = read_pnm(p)
    assert img.shape == shape and img.min() == 0 and img.max() == 255


def test_overlay_differs_exactly_on_labels(tmp_path):
    rng = np.random.default_rng(1)
    v = Volume3(rng.normal(size=(8, 8, 8)))
    lab = rng.choice([0, 1, 2], size=(8, 8, 8), p=[0.6, 0.2, 0.2]).astype(np.uint8)
    pgm, ppm = export_slices(v, LabelMap3(lab), "z", 3, tmp_path / "s")
    gray, rgb = read_pnm(pgm), read_pnm(ppm)
    differ = (rgb != gray[..., None]).any(axis=2)
    np.testing.assert_array_equal(differ, lab[:, :, 3].T > 0)
    assert (rgb[lab[:, :, 3].T == 1][:, 0] == 255).all()
    assert (rgb[lab[:, :, 3].T == 2][:, 1] == 255).all()


def test_slice_out_of_bounds(tmp_path):
    from lesionforge.errors import DimensionMismatch, OutOfBounds
    v = Volume3(np.zeros((4, 4, 4)))
    with pytest.raises(OutOfBounds):
        export_slices(v, axis="z", index=4, path=tmp_path / "s")
    with pytest.raises(DimensionMismatch):
        export_slices(v, LabelMap3(np.zeros((4, 4, 5), np.uint8)), "z", 0, tmp_path / "s")
