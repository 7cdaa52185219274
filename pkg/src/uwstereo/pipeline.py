"""Stage wiring: enhance -> tiepoints -> rectify -> gcstereo -> depth.

Every stage writes its outputs to the run directory, and downstream stages
consume exactly what was written, so a run can be resumed with earlier
stages disabled.
"""

from __future__ import annotations

import copy
import json
import os
import time
from dataclasses import dataclass, field, fields

import numpy as np

from .depth import CameraRig, build_mesh, smooth_depth, triangulate_depth, write_depth, write_ply
from .enhance import EnhanceParams, preprocess
from .gcstereo import DisparityMap, StereoEnergyParams, read_disparity, solve_disparity, write_disparity
from .imgcore import RasterImage, load_image, read_pfm, save_image, write_pfm
from .rectify import (
    RectificationModel,
    apply_homography,
    estimate_rectification,
    vertical_disparity_rms,
    warp_image,
    warp_pair,
)
from .tiepoints import TiePointSet, find_tiepoints

STAGES = ("enhance", "tiepoints", "rectify", "gcstereo", "depth")

# file names inside the output directory
ENHANCED = ("enhanced_left", "enhanced_right")
RECTIFIED = ("rectified_left", "rectified_right")
TIEPOINTS_FILE = "tiepoints.txt"
RECTIFICATION_FILE = "rectification.json"
DISPARITY_STEM = "disparity"
DEPTH_FILE = "depth.pfm"
MESH_FILE = "mesh.ply"
REPORT_FILE = "report.json"


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


DEPTH_DEFAULTS = {"smooth_window": 5, "stride": 2, "max_edge": None}
# already_rectified_px: keep the identity when tie points are row-aligned to within this RMS
RECTIFY_DEFAULTS = {"identity": False, "already_rectified_px": 0.5, "damping": 1e-3, "max_iter": 200, "rtol": 1e-10}
GCSTEREO_EXTRA = {"auto_margin": 2}


@dataclass
class PipelineConfig:
    input_left: str | None = None
    input_right: str | None = None
    output_dir: str = "out"
    enhance: dict = field(default_factory=dict)
    tiepoints: dict = field(default_factory=dict)
    rectify: dict = field(default_factory=dict)
    gcstereo: dict = field(default_factory=dict)
    depth: dict = field(default_factory=dict)
    rig: CameraRig | None = None
    seed: int = 0
    stages_enabled: dict = field(default_factory=lambda: {s: True for s in STAGES})
    truth_disparity: str | None = None

    @classmethod
    def from_dict(cls, d: dict, base_dir: str | None = None) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = copy.deepcopy(d)
        rig = d.pop("rig", None)
        if isinstance(rig, dict):
            try:
                rig = CameraRig(float(rig["focal_length"]), float(rig["baseline"]))
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(f"bad rig block: {exc}") from None
        stages = {s: True for s in STAGES}
        extra = set(d.get("stages_enabled", {})) - set(STAGES)
        if extra:
            raise ConfigError(f"unknown stages: {sorted(extra)}")
        stages.update({k: bool(v) for k, v in d.pop("stages_enabled", {}).items()})
        if base_dir:
            for key in ("input_left", "input_right", "output_dir", "truth_disparity"):
                if d.get(key) is not None and not os.path.isabs(d[key]):
                    d[key] = os.path.join(base_dir, d[key])
        for key in ("enhance", "tiepoints", "rectify", "gcstereo", "depth"):
            if not isinstance(d.get(key, {}), dict):
                raise ConfigError(f"'{key}' block must be an object")
        cfg = cls(rig=rig, stages_enabled=stages, **d)
        cfg.seed = int(cfg.seed)
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike, overrides: dict | None = None) -> "PipelineConfig":
        with open(path) as fh:
            d = json.load(fh)
        for key, value in (overrides or {}).items():
            set_dotted(d, key, value)
        return cls.from_dict(d, base_dir=os.path.dirname(os.path.abspath(path)))

    def to_dict(self) -> dict:
        d = {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self)}
        d["rig"] = None if self.rig is None else {"focal_length": self.rig.focal_length, "baseline": self.rig.baseline}
        return d

    # --- per-stage parameter objects -------------------------------------

    def enhance_params(self) -> EnhanceParams:
        defaults = EnhanceParams()
        blocks = {}
        for name, block in self.enhance.items():
            if not hasattr(defaults, name):
                raise ConfigError(f"enhance: unknown block '{name}'")
            try:
                blocks[name] = type(getattr(defaults, name))(**block)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"enhance.{name}: {exc}") from None
        return EnhanceParams(**blocks)

    def tiepoint_options(self) -> dict:
        allowed = {"max_count", "min_spacing", "window", "search_radius", "min_ncc", "threshold", "max_iterations", "confidence"}
        bad = set(self.tiepoints) - allowed
        if bad:
            raise ConfigError(f"tiepoints: unknown keys {sorted(bad)}")
        return {**self.tiepoints, "seed": self.seed}

    def rectify_options(self) -> dict:
        bad = set(self.rectify) - set(RECTIFY_DEFAULTS)
        if bad:
            raise ConfigError(f"rectify: unknown keys {sorted(bad)}")
        return {**RECTIFY_DEFAULTS, **self.rectify}

    def stereo_block(self) -> dict:
        names = {f.name for f in fields(StereoEnergyParams)} | set(GCSTEREO_EXTRA)
        bad = set(self.gcstereo) - names
        if bad:
            raise ConfigError(f"gcstereo: unknown keys {sorted(bad)}")
        if "seed" in self.gcstereo:
            raise ConfigError("gcstereo: the seed comes from the top-level 'seed' key")
        return {**GCSTEREO_EXTRA, **self.gcstereo}

    def stereo_params(self, auto_range: tuple[int, int] | None = None) -> StereoEnergyParams:
        block = self.stereo_block()
        margin = int(block.pop("auto_margin"))
        for key, k in (("disparity_min", 0), ("disparity_max", 1)):
            if block.get(key) == "auto":
                if auto_range is None:
                    raise ConfigError(f"gcstereo.{key} = 'auto' needs tie points")
                block[key] = auto_range[k] - margin if k == 0 else auto_range[k] + margin
        try:
            return StereoEnergyParams(**block, seed=self.seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"gcstereo: {exc}") from None

    def depth_options(self) -> dict:
        bad = set(self.depth) - set(DEPTH_DEFAULTS)
        if bad:
            raise ConfigError(f"depth: unknown keys {sorted(bad)}")
        return {**DEPTH_DEFAULTS, **self.depth}

    def validate(self) -> None:
        """Fail before any work if a parameter block or referenced path is bad."""
        self.enhance_params()
        self.tiepoint_options()
        self.rectify_options()
        block = self.stereo_block()
        if "auto" not in (block.get("disparity_min"), block.get("disparity_max")):
            self.stereo_params()
        opts = self.depth_options()
        if opts["smooth_window"] < 1 or opts["smooth_window"] % 2 == 0:
            raise ConfigError("depth.smooth_window must be odd and >= 1")
        if self.stages_enabled.get("depth") and self.rig is None:
            raise ConfigError("the depth stage needs a 'rig' block (focal_length, baseline)")
        for key in ("input_left", "input_right", "truth_disparity"):
            p = getattr(self, key)
            if p is not None and not os.path.exists(p):
                raise ConfigError(f"{key}: no such file {p}")


def set_dotted(d: dict, key: str, value) -> None:
    """Set ``d['a']['b'] = value`` for ``key == 'a.b'``; string values are JSON-decoded when possible."""
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError:
            pass
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
        if not isinstance(d, dict):
            raise ConfigError(f"cannot override '{key}': '{p}' is not a block")
    d[parts[-1]] = value


# ---------------------------------------------------------------------------
# persistence helpers


def _as_stored(img: RasterImage) -> RasterImage:
    # what a float32 PFM round trip returns, so reloaded runs match in-memory ones
    return RasterImage(img.data.astype(np.float32).astype(np.float64), img.colorspace)


def save_raster(img: RasterImage, stem: str) -> RasterImage:
    """Write ``stem.pfm`` (exact float32) and ``stem.png`` (preview); return the stored image."""
    write_pfm(img.data if img.channels == 3 else img.plane, stem + ".pfm")
    save_image(img, stem + ".png")
    return _as_stored(img)


def load_raster(stem: str) -> RasterImage:
    a = read_pfm(stem + ".pfm")
    return RasterImage.gray(a) if a.ndim == 2 else RasterImage.rgb(a)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def disparity_accuracy(dm: DisparityMap, truth: np.ndarray, mask: np.ndarray | None = None) -> dict:
    """Share of pixels valid in both maps whose label equals the rounded truth."""
    tv = np.isfinite(truth)
    both = dm.valid & tv
    if mask is not None:
        both &= mask
    n = int(both.sum())
    hit = int((dm.labels[both] == np.rint(truth[both])).sum())
    return {"evaluated": n, "exact": hit, "fraction_exact": hit / n if n else 0.0}


# ---------------------------------------------------------------------------
# the run


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Run the enabled stages in order and write ``report.json``; returns the report."""
    try:
        cfg.validate()
    except ConfigError as exc:
        raise StageError("config", exc) from exc
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    p = lambda name: os.path.join(out, name)  # noqa: E731
    enabled = cfg.stages_enabled
    report: dict = {"config": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"}, "stages": {}, "outputs": {}}
    timings: dict = {}

    def record(stage, info, files, t0):
        report["stages"][stage] = _jsonable(info)
        report["outputs"][stage] = sorted(files)
        timings[stage] = time.perf_counter() - t0

    def need(stage, cond, what):
        if not cond:
            raise StageError(stage, f"{what} is missing: enable the producing stage or provide it in {out}")

    stage = "pipeline"
    try:
        # enhance -----------------------------------------------------------
        t0 = time.perf_counter()
        stage = "enhance"
        if enabled["enhance"]:
            need(stage, cfg.input_left and cfg.input_right, "input_left/input_right")
            params = cfg.enhance_params()
            pair = []
            for src, stem in zip((cfg.input_left, cfg.input_right), ENHANCED):
                pair.append(save_raster(preprocess(load_image(src), params), p(stem)))
            left, right = pair
            record(stage, {"channel_means": [left.data.mean(axis=(0, 1)), right.data.mean(axis=(0, 1))]},
                   [s + e for s in ENHANCED for e in (".pfm", ".png")], t0)
        elif all(os.path.exists(p(s + ".pfm")) for s in ENHANCED):
            left, right = (load_raster(p(s)) for s in ENHANCED)
        else:
            # no enhanced pair on disk: downstream works on the raw inputs
            left = right = None
            if cfg.input_left and cfg.input_right:
                left, right = load_image(cfg.input_left), load_image(cfg.input_right)
        downstream = [s for s in STAGES[1:] if enabled[s]]
        if downstream and left is None and (enabled["tiepoints"] or enabled["rectify"]):
            raise StageError(downstream[0], "no input pair: give input_left/input_right or an enhanced pair")

        # tie points --------------------------------------------------------
        t0 = time.perf_counter()
        stage = "tiepoints"
        tps = None
        if enabled["tiepoints"]:
            tps = find_tiepoints(left, right, **cfg.tiepoint_options())
            tps.save(p(TIEPOINTS_FILE))
            tps = TiePointSet.load(p(TIEPOINTS_FILE))
            record(stage, {"matches": len(tps), "inliers": int(tps.inlier.sum())}, [TIEPOINTS_FILE], t0)
        elif os.path.exists(p(TIEPOINTS_FILE)):
            tps = TiePointSet.load(p(TIEPOINTS_FILE))

        # rectification -----------------------------------------------------
        t0 = time.perf_counter()
        stage = "rectify"
        model = None
        if enabled["rectify"]:
            opts = cfg.rectify_options()
            identity = opts.pop("identity")
            already = opts.pop("already_rectified_px")
            if not identity:
                need(stage, tps is not None, "tie point file")
                ml, mr = tps.inliers
                # resampling an aligned pair only blurs it
                identity = already is not None and vertical_disparity_rms(ml, mr) <= already
            if identity:
                model = RectificationModel.identity(left.width, left.height)
            else:
                model = estimate_rectification(ml, mr, left.width, left.height, seed=cfg.seed, **opts)
            model.save(p(RECTIFICATION_FILE))
            model = RectificationModel.load(p(RECTIFICATION_FILE))
            rp = warp_pair(left, right, model)
            rl = save_raster(rp.left, p(RECTIFIED[0]))
            rr = save_raster(rp.right, p(RECTIFIED[1]))
            info = {
                "identity": bool(identity),
                "residual_rms": model.residual_rms,
                "alpha_prime": model.alpha_prime,
                "angles": model.angles,
                "fit": model.info,
                "valid_box_left": rp.valid_left,
                "valid_box_right": rp.valid_right,
            }
            if tps is not None:
                ml, mr = tps.inliers
                info["vertical_rms_before"] = vertical_disparity_rms(ml, mr)
                info["vertical_rms_after"] = vertical_disparity_rms(ml, mr, model)
            record(stage, info, [RECTIFICATION_FILE] + [s + e for s in RECTIFIED for e in (".pfm", ".png")], t0)
        else:
            if os.path.exists(p(RECTIFICATION_FILE)):
                model = RectificationModel.load(p(RECTIFICATION_FILE))
            if all(os.path.exists(p(s + ".pfm")) for s in RECTIFIED):
                rl, rr = (load_raster(p(s)) for s in RECTIFIED)
            else:
                rl = rr = None

        # dense disparity ---------------------------------------------------
        t0 = time.perf_counter()
        stage = "gcstereo"
        dm = None
        if enabled["gcstereo"]:
            need(stage, rl is not None, "rectified pair")
            auto = None
            if tps is not None and tps.inlier.sum() > 0:
                ml, mr = tps.inliers
                if model is not None:
                    ml, mr = apply_homography(model.H_left, ml), apply_homography(model.H_right, mr)
                d = ml[:, 0] - mr[:, 0]
                auto = (int(np.floor(d.min())), int(np.ceil(d.max())))
            try:
                params = cfg.stereo_params(auto)
            except ConfigError as exc:
                raise StageError(stage, exc) from exc
            dm = solve_disparity(rl, rr, params)
            if model is not None:
                # pixels that map outside the source image carry no data
                ones = RasterImage.gray(np.ones((rl.height, rl.width)))
                dm.valid &= warp_image(ones, model.H_left)[1]
            files = write_disparity(dm, p(DISPARITY_STEM))
            dm = read_disparity(p(DISPARITY_STEM))
            info = {
                "energy": dm.energy,
                "disparity_min": dm.disparity_min,
                "disparity_max": dm.disparity_max,
                "valid_fraction": float(dm.valid.mean()),
            }
            with open(files["json"]) as fh:
                meta = json.load(fh)
            info.update({k: meta[k] for k in ("sweeps", "moves", "lr_rejected", "energy_per_sweep") if k in meta})
            if cfg.truth_disparity:
                info["accuracy"] = disparity_accuracy(dm, read_pfm(cfg.truth_disparity))
            record(stage, info, [os.path.basename(f) for f in files.values()], t0)
        elif os.path.exists(p(DISPARITY_STEM + ".json")):
            dm = read_disparity(p(DISPARITY_STEM))

        # depth and mesh ----------------------------------------------------
        t0 = time.perf_counter()
        stage = "depth"
        if enabled["depth"]:
            need(stage, dm is not None, "disparity map")
            need(stage, rl is not None, "rectified left image (mesh texture)")
            opts = cfg.depth_options()
            offset = 0.0
            if model is not None:
                offset = float(model.K_new_left[0, 2] - model.K_new_right[0, 2])
            depth = smooth_depth(triangulate_depth(dm, cfg.rig, disparity_offset=offset), int(opts["smooth_window"]))
            write_depth(depth, p(DEPTH_FILE))
            mesh = build_mesh(depth, rl, cfg.rig, int(opts["stride"]), opts["max_edge"])
            write_ply(mesh, p(MESH_FILE))
            z = depth.depth[depth.valid]
            info = {
                "disparity_offset": offset,
                "valid_fraction": float(depth.valid.mean()),
                "depth_min": float(z.min()) if z.size else None,
                "depth_median": float(np.median(z)) if z.size else None,
                "depth_max": float(z.max()) if z.size else None,
                "mesh_vertices": len(mesh.vertices),
                "mesh_triangles": len(mesh.triangles),
            }
            record(stage, info, [DEPTH_FILE, MESH_FILE, "mesh_texture.png"], t0)
    except StageError:
        raise
    except Exception as exc:  # tag whatever went wrong with the stage it happened in
        raise StageError(stage, f"{type(exc).__name__}: {exc}") from exc
    finally:
        report["timings"] = timings
        with open(p(REPORT_FILE), "w") as fh:
            json.dump(_jsonable(report), fh, indent=2, sort_keys=True)
    return report
