"""Command line entry point: ``uwstereo {run,enhance,match,rectify,mesh,synth}``.

Any ``--<block>.<param> VALUE`` flag (for example ``--gcstereo.smoothness_weight 0.04``
or ``--enhance.homomorphic.r_high 2.0``) overrides the matching key of the JSON config.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .depth import CameraRig, build_mesh, smooth_depth, triangulate_depth, write_depth, write_ply
from .enhance import (
    WaveletDenoiseParams,
    adjust_intensity,
    anisotropic_diffuse,
    equalize_color_means,
    homomorphic_filter,
    preprocess,
    remove_moire,
    wavelet_denoise,
)
from .gcstereo import read_disparity
from .imgcore import RasterImage, crop_extension, load_image, save_image, symmetric_extend, write_pfm
from .pipeline import ConfigError, PipelineConfig, StageError, run_pipeline, save_raster, set_dotted
from .rectify import estimate_rectification, vertical_disparity_rms, warp_pair
from .synth import SceneKind, SyntheticScene, degrade_scene, generate_scene
from .tiepoints import TiePointSet, find_tiepoints

ENHANCE_STEPS = ("all", "moire", "homomorphic", "wavelet", "diffusion", "intensity", "colormeans")


def _split_overrides(extra: list[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        name = tok[2:].split("=", 1)[0]
        if not tok.startswith("--") or ("." not in name and name != "seed"):
            raise ConfigError(f"unrecognised argument {tok!r} (overrides look like --block.param VALUE)")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {tok} needs a value")
            value = extra[i + 1]
            i += 2
        out[key] = value
    return out


def _config(args, overrides: dict) -> PipelineConfig:
    if getattr(args, "config", None):
        return PipelineConfig.load(args.config, overrides)
    d: dict = {}
    for k, v in overrides.items():
        set_dotted(d, k, v)
    return PipelineConfig.from_dict(d)


def _stage(name, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except (StageError, ConfigError):
        raise
    except Exception as exc:
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args, overrides) -> int:
    cfg = _config(args, overrides)
    if args.left:
        cfg.input_left = args.left
    if args.right:
        cfg.input_right = args.right
    if args.output_dir:
        cfg.output_dir = args.output_dir
    report = run_pipeline(cfg)
    acc = report["stages"].get("gcstereo", {}).get("accuracy")
    print(f"wrote {os.path.join(cfg.output_dir, 'report.json')}")
    if acc:
        print(f"disparity exact: {acc['fraction_exact']:.4f} of {acc['evaluated']} pixels")
    return 0


def _single_step(img: RasterImage, step: str, p) -> RasterImage:
    """One enhancement step on its own; gray steps run on every channel."""
    if step == "colormeans":
        return equalize_color_means(img)
    fns = {
        "moire": lambda ch: remove_moire(ch, p.moire),
        "homomorphic": lambda ch: homomorphic_filter(RasterImage.gray(np.maximum(ch.plane, 0.0)), p.homomorphic),
        "diffusion": lambda ch: anisotropic_diffuse(ch, p.diffusion),
        "intensity": lambda ch: adjust_intensity(ch, p.intensity),
    }

    def wavelet(ch):
        ext, rec = symmetric_extend(ch)
        levels = min(p.wavelet.levels, int(np.log2(ext.width)))
        if levels < 1:
            return ch
        wp = WaveletDenoiseParams(levels, p.wavelet.neighborhood_half_width, p.wavelet.filter_bank)
        return crop_extension(wavelet_denoise(ext, wp), rec)

    fns["wavelet"] = wavelet
    planes = [fns[step](RasterImage.gray(img.channel(k))).plane for k in range(img.channels)]
    return RasterImage(np.stack(planes, axis=2), img.colorspace)


def cmd_enhance(args, overrides) -> int:
    params = _config(args, overrides).enhance_params()
    img = _stage("enhance", load_image, args.input)
    if args.step == "all":
        out = _stage("enhance", preprocess, img, params)
    else:
        out = _stage("enhance", _single_step, img, args.step, params)
    stem, ext = os.path.splitext(args.output)
    if ext.lower() == ".pfm":
        save_raster(out, stem)
    else:
        save_image(out, args.output)
    return 0


def cmd_match(args, overrides) -> int:
    cfg = _config(args, overrides)
    left, right = load_image(args.left), load_image(args.right)
    tps = _stage("tiepoints", find_tiepoints, left, right, **cfg.tiepoint_options())
    tps.save(args.output)
    print(f"{int(tps.inlier.sum())} inliers of {len(tps)} matches -> {args.output}")
    return 0


def cmd_rectify(args, overrides) -> int:
    cfg = _config(args, overrides)
    left, right = load_image(args.left), load_image(args.right)
    if args.tiepoints:
        tps = TiePointSet.load(args.tiepoints)
    else:
        tps = _stage("tiepoints", find_tiepoints, left, right, **cfg.tiepoint_options())
    opts = cfg.rectify_options()
    opts.pop("identity")
    opts.pop("already_rectified_px")
    ml, mr = tps.inliers
    model = _stage("rectify", estimate_rectification, ml, mr, left.width, left.height, seed=cfg.seed, **opts)
    os.makedirs(args.output_dir, exist_ok=True)
    model.save(os.path.join(args.output_dir, "rectification.json"))
    rp = _stage("rectify", warp_pair, left, right, model)
    save_raster(rp.left, os.path.join(args.output_dir, "rectified_left"))
    save_raster(rp.right, os.path.join(args.output_dir, "rectified_right"))
    print(
        f"vertical disparity rms {vertical_disparity_rms(ml, mr):.3f} px -> "
        f"{vertical_disparity_rms(ml, mr, model):.3f} px"
    )
    return 0


def cmd_mesh(args, overrides) -> int:
    cfg = _config(args, overrides)
    opts = cfg.depth_options()
    rig = CameraRig(args.focal_length, args.baseline)
    dm = _stage("depth", read_disparity, args.disparity)
    tex = load_image(args.texture)
    depth = _stage("depth", smooth_depth, triangulate_depth(dm, rig), int(opts["smooth_window"]))
    write_depth(depth, os.path.splitext(args.output)[0] + "_depth.pfm")
    mesh = _stage("depth", build_mesh, depth, tex, rig, int(opts["stride"]), opts["max_edge"])
    write_ply(mesh, args.output)
    print(f"{len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles -> {args.output}")
    return 0


def cmd_synth(args, overrides) -> int:
    if overrides:
        raise ConfigError("synth takes no --block.param overrides")
    kw = {"kind": args.kind, "focal_length": args.focal_length, "baseline": args.baseline}
    if args.shift is not None:
        kw["shift"] = args.shift
    if args.planes is not None:
        kw["plane_disparities"] = tuple(args.planes)
    if args.rotation is not None:
        kw["rotation_deg"] = args.rotation
    if args.sphere_radius is not None:
        kw["sphere_radius"] = args.sphere_radius
    if args.contrast is not None:
        kw["texture_contrast"] = args.contrast
    scene = _stage("synth", SyntheticScene, **kw)
    left, right, truth = _stage("synth", generate_scene, scene, args.width, args.height, args.seed)
    degrade = {
        "illumination_ramp": tuple(args.ramp) if args.ramp else None,
        "noise_sigma": args.noise,
        "color_cast": tuple(args.cast) if args.cast else None,
    }
    if any(v for v in degrade.values()):
        left = degrade_scene(left, **degrade, seed=args.seed)
        right = degrade_scene(right, **degrade, seed=args.seed + 1)
    out = args.output_dir
    os.makedirs(out, exist_ok=True)
    save_image(left, os.path.join(out, "left.png"))
    save_image(right, os.path.join(out, "right.png"))
    write_pfm(np.where(truth.valid, truth.disparity, np.nan), os.path.join(out, "truth_disparity.pfm"))
    if truth.depth is not None:
        write_pfm(np.where(np.isfinite(truth.depth), truth.depth, np.nan), os.path.join(out, "truth_depth.pfm"))
    meta = {
        "scene": {k: (v.value if hasattr(v, "value") else v) for k, v in scene.__dict__.items()},
        "width": args.width,
        "height": args.height,
        "seed": args.seed,
        "degradation": degrade,
        "surface": {k: np.asarray(v).tolist() for k, v in truth.surface.items()},
    }
    with open(os.path.join(out, "scene.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    config = {
        "input_left": "left.png",
        "input_right": "right.png",
        "output_dir": "run",
        "truth_disparity": "truth_disparity.pfm",
        "rig": {"focal_length": scene.focal_length, "baseline": scene.baseline},
        "seed": args.seed,
        # range from the tie points, not from the truth
        "gcstereo": {"disparity_min": "auto", "disparity_max": "auto"},
    }
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    print(f"wrote {args.kind} scene to {out}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="uwstereo", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="JSON pipeline config (per-module blocks)")
        return sp

    sp = with_config(sub.add_parser("run", help="run the full pipeline"))
    sp.add_argument("--left")
    sp.add_argument("--right")
    sp.add_argument("-o", "--output-dir")
    sp.set_defaults(func=cmd_run)

    sp = with_config(sub.add_parser("enhance", help="preprocess one image"))
    sp.add_argument("input")
    sp.add_argument("output", help=".png/.ppm/.pgm, or .pfm for the exact float result")
    sp.add_argument("--step", default="all", choices=ENHANCE_STEPS, help="run one step alone (default: the whole chain)")
    sp.set_defaults(func=cmd_enhance)

    sp = with_config(sub.add_parser("match", help="find tie points between two images"))
    sp.add_argument("left")
    sp.add_argument("right")
    sp.add_argument("output", help="tie point text file")
    sp.set_defaults(func=cmd_match)

    sp = with_config(sub.add_parser("rectify", help="estimate and apply the rectifying collineations"))
    sp.add_argument("left")
    sp.add_argument("right")
    sp.add_argument("--tiepoints", help="tie point file (matched afresh when omitted)")
    sp.add_argument("-o", "--output-dir", required=True)
    sp.set_defaults(func=cmd_rectify)

    sp = with_config(sub.add_parser("mesh", help="triangulate a disparity map into a textured PLY mesh"))
    sp.add_argument("disparity", help="disparity stem (reads STEM.pgm and STEM.json)")
    sp.add_argument("texture", help="rectified left image")
    sp.add_argument("output", help="PLY path")
    sp.add_argument("--focal-length", type=float, required=True, help="pixels")
    sp.add_argument("--baseline", type=float, required=True, help="metres")
    sp.set_defaults(func=cmd_mesh)

    sp = sub.add_parser("synth", help="render a synthetic stereo scene with ground truth")
    sp.add_argument("kind", choices=[k.value for k in SceneKind])
    sp.add_argument("-o", "--output-dir", required=True)
    sp.add_argument("--width", type=int, default=128)
    sp.add_argument("--height", type=int, default=128)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--shift", type=int)
    sp.add_argument("--planes", type=int, nargs=2, metavar=("NEAR", "FAR"))
    sp.add_argument("--rotation", type=float, help="degrees (rotated_camera_pair)")
    sp.add_argument("--sphere-radius", type=float)
    sp.add_argument("--contrast", type=float)
    sp.add_argument("--focal-length", type=float, default=200.0)
    sp.add_argument("--baseline", type=float, default=0.1)
    sp.add_argument("--ramp", type=float, nargs=2, metavar=("LO", "HI"), help="illumination ramp")
    sp.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma")
    sp.add_argument("--cast", type=float, nargs=3, metavar=("R", "G", "B"), help="per-channel gains")
    sp.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args, extra = ap.parse_known_args(argv)
    try:
        overrides = _split_overrides(extra)
        return args.func(args, overrides)
    except StageError as exc:
        print(f"uwstereo: error in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"uwstereo: error in stage 'config': {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"uwstereo: error in stage '{args.command}': {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
