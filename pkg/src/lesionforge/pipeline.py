"""End-to-end augmentation: synthesise lesions, place them, blend them in."""

from __future__ import annotations

import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, LesionForgeError, ParamOutOfRange
from .masksynth import MaskSynthParams
from .placement import PlacementParams, crop_to_foreground, lesion_origin, select_center
from .proto import ProtoConfig
from .rng import child_seed, make_rng
from .spb import MODES, SolverConfig, blend
from .texture import PerturbParams, gen_lesion_pair
from .volume import LabelMap3, Volume3

log = logging.getLogger(__name__)

# center redraws allowed when a new lesion would overlap an existing one
MAX_COLLISION_DRAWS = 100


@dataclass
class PipelineConfig:
    host: str
    brain_mask: str
    wm_mask: str
    out_dir: str = "augmented"
    lesion_labels: str | None = None
    count: int = 1
    lesions_per_image: int = 1
    seed: int = 0
    mode: str = "spb"
    workers: int = 1
    mask: MaskSynthParams = field(default_factory=MaskSynthParams)
    perturb: PerturbParams = field(default_factory=PerturbParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    proto: ProtoConfig = field(default_factory=ProtoConfig)

    def __post_init__(self):
        if self.count < 1 or self.lesions_per_image < 1:
            raise ConfigError("count and lesions_per_image must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def check_files(self):
        for name in ("host", "brain_mask", "wm_mask", "lesion_labels"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name}: file not found: {p}")

    @classmethod
    def from_dict(cls, d, base_dir=None, **overrides):
        """Build a config from parsed JSON; ``overrides`` that are not None win."""
        d = dict(d)
        d.update({k: v for k, v in overrides.items() if v is not None})
        try:
            sections = {
                "mask": MaskSynthParams(**d.pop("mask", {})),
                "perturb": PerturbParams(**d.pop("perturb", {})),
                "solver": SolverConfig(**d.pop("solver", {})),
                "proto": ProtoConfig(**d.pop("proto", {})),
            }
            cfg = cls(**d, **sections)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        except ParamOutOfRange as exc:
            raise ConfigError(str(exc)) from exc
        if base_dir is not None:
            for name in ("host", "brain_mask", "wm_mask", "lesion_labels", "out_dir"):
                p = getattr(cfg, name)
                if p is not None and not Path(p).is_absolute():
                    setattr(cfg, name, str(Path(base_dir) / p))
        return cfg

    @classmethod
    def load(cls, path, **overrides):
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d, base_dir=Path(path).parent, **overrides)


@dataclass
class Inputs:
    host: Volume3
    brain: LabelMap3
    wm: LabelMap3
    labels: LabelMap3 | None = None

    @classmethod
    def load(cls, cfg: PipelineConfig):
        cfg.check_files()
        host = io.load_volume(cfg.host)
        brain = io.load_labels(cfg.brain_mask)
        wm = io.load_labels(cfg.wm_mask)
        labels = io.load_labels(cfg.lesion_labels) if cfg.lesion_labels else None
        for name, m in (("brain mask", brain), ("wm mask", wm), ("lesion labels", labels)):
            if m is not None and m.dims != host.dims:
                raise ConfigError(f"{name} dims {m.dims} differ from host dims {host.dims}")
        return cls(host, brain, wm, labels)


@dataclass
class AugmentResult:
    volume: Volume3
    labels: LabelMap3
    centers: list
    lesion_voxels: list
    residuals: list


def augment_one(cfg: PipelineConfig, seed, inputs: Inputs | None = None) -> AugmentResult:
    """Insert ``cfg.lesions_per_image`` synthetic lesions into the host image.

    Existing lesion voxels become label 1, inserted regions label 2. New
    lesions never overlap existing or previously inserted ones.
    """
    inputs = inputs or Inputs.load(cfg)
    host = inputs.host
    labels = np.zeros(host.dims, dtype=np.uint8)
    if inputs.labels is not None:
        labels[inputs.labels.data > 0] = 1
    centers, voxels, residuals = [], [], []
    for j in range(cfg.lesions_per_image):
        mask_params = dataclasses.replace(cfg.mask, seed=child_seed(seed, "mask", j))
        perturb = dataclasses.replace(cfg.perturb, seed=child_seed(seed, "perturb", j))
        image, mask = gen_lesion_pair(host, inputs.brain, mask_params, perturb)
        center = select_center(inputs.wm, mask, PlacementParams(max_draws=MAX_COLLISION_DRAWS),
                               make_rng(seed, "place", j), exclude=labels > 0)
        mask_crop, image_crop = crop_to_foreground(mask.data, image.data, pad=1)
        origin = lesion_origin(center, mask.data, pad=1)
        host, placed, info = blend(host, Volume3(image_crop, host.spacing), LabelMap3(mask_crop), origin,
                                   cfg.mode, cfg.solver, return_info=True)
        labels[placed.data == 2] = 2
        centers.append(list(center))
        voxels.append(int(mask.count(1)))
        residuals.append(info.residual)
    return AugmentResult(host, LabelMap3(labels, host.spacing, dict(host.meta)), centers, voxels, residuals)


def _run_item(cfg, inputs, index, out_dir):
    seed = child_seed(cfg.seed, index, "item")
    entry = {
        "index": index,
        "inputs": {"host": cfg.host, "brain_mask": cfg.brain_mask, "wm_mask": cfg.wm_mask,
                   "lesion_labels": cfg.lesion_labels},
        "child_seed": seed,
        "mode": cfg.mode,
    }
    try:
        res = augment_one(cfg, seed, inputs)
        image_path = out_dir / f"item_{index:04d}_image.nii.gz"
        label_path = out_dir / f"item_{index:04d}_labels.nii.gz"
        io.save_volume(res.volume, image_path)
        io.save_labels(res.labels, label_path)
        entry.update(center=res.centers, lesion_voxels=res.lesion_voxels, residual=res.residuals,
                     status="ok", error=None, outputs={"image": str(image_path), "labels": str(label_path)})
    except LesionForgeError as exc:
        log.warning("item %d failed: %s", index, exc)
        entry.update(center=None, lesion_voxels=None, residual=None, status="failed",
                     error=f"{type(exc).__name__}: {exc}", outputs=None)
    return entry


def augment_batch(cfg: PipelineConfig, workers=None):
    """Generate ``cfg.count`` augmented pairs and write ``manifest.json``.

    Items fail independently; a failed item is recorded with its error and
    the batch carries on. Output is independent of the worker count.
    """
    inputs = Inputs.load(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = workers or cfg.workers
    if workers == 1:
        manifest = [_run_item(cfg, inputs, i, out_dir) for i in range(cfg.count)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            manifest = list(pool.map(lambda i: _run_item(cfg, inputs, i, out_dir), range(cfg.count)))
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest
