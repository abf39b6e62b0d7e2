"""Procedural 3D brain-lesion augmentation with soft Poisson blending."""

from .errors import LesionForgeError
from .io import load_labels, load_volume, save_labels, save_volume
from .latent import LatentSet, constrained_sample, inverse, pca_fit, project
from .masksynth import MaskSynthParams, elastic_deform, gen_ellipsoid_union, gen_lesion_mask, perlin_roughen
from .pipeline import PipelineConfig, augment_batch, augment_one
from .placement import PlacementParams, erode, select_center
from .proto import (
    ProtoConfig,
    class_prototype,
    prototype_consistency,
    prototype_difference_loss,
    prototype_relation_loss,
    sample_class_features,
)
from .spb import BlendRegion, GuidanceField, SolverConfig, blend, build_guidance, divergence, forward_gradient, solve_poisson
from .texture import PerturbParams, gen_lesion_pair, perturb_intensity, sample_texture
from .volume import LabelMap3, Patch, Volume3, extract_patch, insert_patch

__version__ = "0.1.0"
