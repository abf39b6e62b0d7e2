"""``lesionforge`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import io
from .errors import ConfigError, LesionForgeError
from .latent import LatentSet, constrained_sample, pca_fit
from .masksynth import MaskSynthParams, gen_lesion_mask
from .pipeline import PipelineConfig, augment_batch
from .placement import PlacementParams, crop_to_foreground, lesion_origin, select_center
from .proto import ProtoConfig, prototype_terms
from .rng import make_rng
from .slices import export_slices
from .spb import METHODS, MODES, SolverConfig, blend
from .texture import PerturbParams, gen_lesion_pair
from .volume import LabelMap3, Volume3

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_ALL_FAILED = 3


def _triple(text):
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y,Z integers, got {text!r}")
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated integers, got {text!r}")
    return tuple(vals)


def _add_mask_options(p):
    p.add_argument("--grid", type=int, default=64)
    p.add_argument("--n-min", type=int, default=1)
    p.add_argument("--n-max", type=int, default=5)
    p.add_argument("--ax-min", type=float, default=5.0)
    p.add_argument("--ax-max", type=float, default=15.0)
    p.add_argument("--sigma-min", type=float, default=3.0)
    p.add_argument("--sigma-max", type=float, default=6.0)
    p.add_argument("--alpha", type=float, default=8.0)
    p.add_argument("--perlin-cell", type=float, default=8.0)
    p.add_argument("--perlin-amp", type=float, default=1.5)


def _mask_params(args):
    return MaskSynthParams(
        grid_dims=args.grid,
        n_ellipsoids_range=(args.n_min, args.n_max),
        half_axis_range=(args.ax_min, args.ax_max),
        elastic_sigma_range=(args.sigma_min, args.sigma_max),
        elastic_alpha=args.alpha,
        perlin_cell=args.perlin_cell,
        perlin_amplitude=args.perlin_amp,
        seed=args.seed,
    )


def cmd_gen_mask(args):
    io.save_labels(gen_lesion_mask(_mask_params(args)), args.out)


def cmd_gen_pair(args):
    host = io.load_volume(args.host)
    brain = io.load_labels(args.brain_mask)
    perturb = PerturbParams(gamma_range=(args.gamma_min, args.gamma_max), noise_std=args.noise_std, seed=args.seed)
    image, mask = gen_lesion_pair(host, brain, _mask_params(args), perturb)
    io.save_volume(image, args.out_img)
    io.save_labels(mask, args.out_mask)


def cmd_blend(args):
    host = io.load_volume(args.host)
    lesion = io.load_volume(args.lesion)
    mask = io.load_labels(args.lesion_mask)
    if args.center is not None:
        mask_crop, lesion_crop = crop_to_foreground(mask.data, lesion.data, pad=1)
        origin = lesion_origin(args.center, mask.data, pad=1)
        lesion, mask = Volume3(lesion_crop, lesion.spacing), LabelMap3(mask_crop)
    else:
        origin = args.origin
    cfg = SolverConfig(method=args.method, rel_tol=args.tol, max_iter=args.max_iter, jacobi=args.jacobi)
    out, labels, info = blend(host, lesion, mask, origin, args.mode, cfg, return_info=True)
    io.save_volume(out, args.out)
    if args.out_labels:
        io.save_labels(labels, args.out_labels)
    print(json.dumps({"unknowns": info.unknowns, "iterations": info.iterations, "residual": info.residual}))


def cmd_place(args):
    wm = io.load_labels(args.wm_mask)
    lesion = io.load_labels(args.lesion_mask)
    params = PlacementParams(erosion_radius=args.radius, seed=args.seed)
    c = select_center(wm, lesion, params, make_rng(args.seed, "place"))
    print(",".join(str(v) for v in c))


def cmd_latent_fit(args):
    x = io.load_matrix(args.inp, args.meta)
    model = pca_fit(x, args.target)
    model.save(args.out)
    print(json.dumps({"K": model.k, "d": model.d, "explained": float(model.explained_ratio.sum())}))


def cmd_latent_sample(args):
    model = LatentSet.load(args.model)
    samples = constrained_sample(model, make_rng(args.seed, "latent"), n=args.n)
    io.save_matrix(samples.astype(np.float32), args.out)


def cmd_proto_loss(args):
    feats = io.load_features(args.features, args.features_meta)
    labels = [io.load_labels(p) for p in args.labels]
    if len(labels) == 1 and feats.shape[0] > 1:
        labels = labels * feats.shape[0]
    cfg = ProtoConfig(k=args.k, lambda1=args.lambda1, lambda2=args.lambda2, seed=args.seed)
    print(json.dumps(prototype_terms(feats, labels, cfg).as_dict()))


def cmd_export_slice(args):
    vol = io.load_volume(args.volume)
    labels = io.load_labels(args.labels) if args.labels else None
    for p in export_slices(vol, labels, args.axis, args.index, args.out):
        print(p)


def cmd_pipeline(args):
    cfg = PipelineConfig.load(args.config, seed=args.seed, count=args.count, out_dir=args.out,
                              mode=args.mode, workers=args.workers, lesions_per_image=args.lesions)
    manifest = augment_batch(cfg)
    ok = sum(item["status"] == "ok" for item in manifest)
    print(f"{ok}/{len(manifest)} items ok; manifest at {cfg.out_dir}/manifest.json")
    return EXIT_OK if ok else EXIT_ALL_FAILED


def build_parser():
    parser = argparse.ArgumentParser(prog="lesionforge", description="Synthetic 3D brain-lesion augmentation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-mask", help="generate a procedural lesion mask")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    _add_mask_options(p)
    p.set_defaults(func=cmd_gen_mask)

    p = sub.add_parser("gen-pair", help="generate a (lesion image, lesion mask) pair from a host brain")
    p.add_argument("--host", required=True)
    p.add_argument("--brain-mask", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-img", required=True)
    p.add_argument("--out-mask", required=True)
    p.add_argument("--gamma-min", type=float, default=0.7)
    p.add_argument("--gamma-max", type=float, default=1.3)
    p.add_argument("--noise-std", type=float, default=0.05)
    _add_mask_options(p)
    p.set_defaults(func=cmd_gen_pair)

    p = sub.add_parser("blend", help="blend a lesion into a host image")
    p.add_argument("--host", required=True)
    p.add_argument("--lesion", required=True)
    p.add_argument("--lesion-mask", required=True)
    where = p.add_mutually_exclusive_group(required=True)
    where.add_argument("--origin", type=_triple, help="host index of lesion voxel (0,0,0)")
    where.add_argument("--center", type=_triple, help="host voxel for the lesion's anchor, as printed by `place`")
    p.add_argument("--mode", choices=MODES, default="spb")
    p.add_argument("--method", choices=METHODS, default="cg")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--jacobi", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--out-labels")
    p.set_defaults(func=cmd_blend)

    p = sub.add_parser("place", help="pick a lesion center in an eroded white-matter mask")
    p.add_argument("--wm-mask", required=True)
    p.add_argument("--lesion-mask", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--radius", type=_triple, default=None, help="erosion half-extents X,Y,Z (default: auto)")
    p.set_defaults(func=cmd_place)

    latent = sub.add_parser("latent", help="PCA-constrained latent sampling")
    lsub = latent.add_subparsers(dest="latent_command", required=True)
    p = lsub.add_parser("fit")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--meta", default=None)
    p.add_argument("--target", type=float, default=0.90)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_latent_fit)
    p = lsub.add_parser("sample")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_latent_sample)

    p = sub.add_parser("proto-loss", help="prototype consistency loss of a feature map")
    p.add_argument("--features", required=True)
    p.add_argument("--features-meta", default=None)
    p.add_argument("--labels", required=True, action="append", help="label map; repeat once per batch item")
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_proto_loss)

    p = sub.add_parser("export-slice", help="write a PGM slice (and label PPM)")
    p.add_argument("--volume", required=True)
    p.add_argument("--labels")
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_slice)

    p = sub.add_parser("pipeline", help="batch augmentation from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int, help="number of augmented images")
    p.add_argument("--lesions", type=int, help="synthetic lesions per image")
    p.add_argument("--out")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        code = args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LesionForgeError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
