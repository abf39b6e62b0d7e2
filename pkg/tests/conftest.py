import numpy as np
import pytest

from lesionforge import io
from lesionforge.masksynth import MaskSynthParams
from lesionforge.volume import LabelMap3, Volume3


def synthetic_brain(n=56, seed=0):
    """Ellipsoidal 'brain' with a brighter white-matter core, smooth shading and noise."""
    rng = np.random.default_rng(seed)
    g = np.indices((n, n, n)).astype(float) + 0.5
    r = np.sqrt(((g[0] - n / 2) / (0.42 * n)) ** 2 + ((g[1] - n / 2) / (0.40 * n)) ** 2
                + ((g[2] - n / 2) / (0.38 * n)) ** 2)
    brain = r < 1.0
    wm = r < 0.7
    img = 90.0 + 15.0 * np.sin(g[0] / 6.0) + 10.0 * np.cos(g[1] / 9.0) + rng.normal(0.0, 4.0, (n, n, n))
    img[wm] += 35.0
    img[~brain] = 0.0
    return Volume3(img.astype(np.float32)), LabelMap3(brain), LabelMap3(wm)


@pytest.fixture(scope="session")
def brain():
    return synthetic_brain()


@pytest.fixture
def small_mask_params():
    return MaskSynthParams(grid_dims=32, n_ellipsoids_range=(1, 3), half_axis_range=(3.0, 6.0),
                           elastic_sigma_range=(2.0, 3.0), elastic_alpha=2.0, perlin_cell=4.0,
                           perlin_amplitude=1.0)


@pytest.fixture
def brain_files(tmp_path, brain):
    host, bm, wm = brain
    paths = {"host": tmp_path / "host.nii.gz", "brain_mask": tmp_path / "brain.nii.gz", "wm_mask": tmp_path / "wm.nii.gz"}
    io.save_volume(host, paths["host"])
    io.save_labels(bm, paths["brain_mask"])
    io.save_labels(wm, paths["wm_mask"])
    return {k: str(v) for k, v in paths.items()}


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance verdicts, one line per criterion, at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        title, verdict, detail = results[num]
        terminalreporter.write_line(f"[{num:2d}] {verdict}  {title}" + (f"  ({detail})" if detail else ""))
