"""Command-line entry point.

One executable with subcommands wiring the library into reproducible
pipelines: synthetic model generation, map rendering/resampling, the
resolution study, dataset preprocessing, augmentation, loss evaluation,
fitting and metrics. Every command is deterministic given its inputs and
seed, never mutates inputs, writes a provenance sidecar (config hash, seed,
tool version; no timestamps) next to each artifact, and uses exit status 0
on success, 2 on usage errors and 1 on data errors with a single-line JSON
report on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import cv2
import numpy as np

from . import __version__
from .augment import AugmentParams, Sample, augment
from .bodymodel import BodyModel, forward, regress_joints
from .camera import CameraExtrinsics, CropSpec, auto_crop, make_ground_truth
from .errors import LoadError, UVBodyError
from .fileio import read_f32, read_json, write_f32, write_json, write_provenance
from .fitting import FitConfig, fit_from_map, fit_vertices
from .losses import JointLossTerm, LossConfig, total_loss
from .metrics import evaluate_batch
from .modelio import load_model, save_model
from .study import resolution_study, sample_params
from .synth import synth_model
from .uvmap import load_uvpm, render_position_map, resample_vertices, save_uvpm
from .weightmask import WeightMaskConfig, build_weight_mask, joint_uv_locations


def _out_dir(args) -> Path:
    """--out-dir, overridable by UVBODY_OUT_DIR when the flag is absent."""
    if getattr(args, "out_dir", None):
        return Path(args.out_dir)
    env = os.environ.get("UVBODY_OUT_DIR")
    return Path(env) if env else Path(".")


def _load_vertices(path: str, model: BodyModel) -> np.ndarray:
    if path.endswith(".uvpm"):
        return resample_vertices(model.uv_layout, load_uvpm(path))
    return read_f32(path, (model.num_vertices, 3))


def _config_dict(args, keys) -> dict:
    # output destinations and parallelism are excluded: provenance describes
    # how the data was produced, and identical runs must stay byte-identical
    # across directories and --jobs settings
    cfg = {"seed": getattr(args, "seed", None), "version": __version__}
    for k in keys:
        if k in ("out", "out_dir", "jobs"):
            continue
        v = getattr(args, k, None)
        if isinstance(v, Path):
            v = str(v)
        cfg[k] = v
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_model_synth(args) -> int:
    model = synth_model(args.seed, args.subdiv)
    out = Path(args.out)
    save_model(model, out)
    write_provenance(out / "provenance.json", args.seed, _config_dict(args, ["subdiv", "out"]))
    return 0


def _cmd_uv_render(args) -> int:
    model = load_model(args.model)
    vertices = _load_vertices(args.vertices, model)
    pmap = render_position_map(model.uv_layout, vertices, args.res)
    cfg = _config_dict(args, ["model", "vertices", "res", "out"])
    save_uvpm(args.out, pmap, sidecar={"tool": "uvbody", "version": __version__, "config": cfg})
    if args.png:
        scale = _export_png(args.png, pmap)
        write_json(Path(args.png).with_suffix(".json"), scale)
    return 0


def _export_png(path: str, pmap) -> dict:
    from .uvmap import export_png16

    return export_png16(path, pmap)


def _cmd_uv_resample(args) -> int:
    model = load_model(args.model)
    pmap = load_uvpm(args.map)
    vertices, unreachable = resample_vertices(model.uv_layout, pmap, return_unreachable=True)
    write_f32(args.out, vertices)
    write_provenance(
        Path(args.out).with_suffix(".json"),
        None,
        {**_config_dict(args, ["model", "map", "out"]), "unreachable": unreachable.tolist()},
    )
    return 0


def _cmd_study(args) -> int:
    model = load_model(args.model)
    resolutions = sorted(int(r) for r in args.res.split(","))
    rng = np.random.default_rng(np.uint64(args.seed))
    samples = sample_params(model, args.samples, rng)

    # Samples are independent; aggregation follows list order, so the output
    # is identical for any --jobs value.
    def one(sample):
        return resolution_study(model, [sample], resolutions)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            reports = list(pool.map(one, samples))
    else:
        reports = [one(s) for s in samples]
    from .study import StudyReport, StudyRow

    rows = [
        StudyRow(
            resolution=res,
            surface_mm=float(np.mean([r.rows[i].surface_mm for r in reports])),
            joint_mm=float(np.mean([r.rows[i].joint_mm for r in reports])),
        )
        for i, res in enumerate(resolutions)
    ]
    report = StudyReport(rows=tuple(rows))
    out = Path(args.out)
    out.write_text(report.to_csv())
    write_provenance(
        out.with_suffix(out.suffix + ".json"),
        args.seed,
        _config_dict(args, ["model", "res", "samples", "jobs", "out"]),
    )
    return 0


def _record_to_sample(record: dict, model: BodyModel, out_size: int) -> tuple:
    ext = CameraExtrinsics(
        rotation=np.array(record["extrinsics"]["rotation"], dtype=np.float64),
        translation=np.array(record["extrinsics"]["translation"], dtype=np.float64),
    )
    if "mesh" in record:
        vertices = read_f32(record["mesh"], (model.num_vertices, 3))
    else:
        vertices = forward(model, np.array(record["theta"]), np.array(record["beta"])).vertices
    if "crop" in record:
        c = record["crop"]
        crop = CropSpec(
            center_px=np.array(c["center_px"], dtype=np.float64),
            scale=float(c["scale"]),
            out_size=int(c.get("out_size", out_size)),
        )
    else:
        crop = auto_crop(ext.apply(vertices), out_size=out_size)
    return vertices, ext, crop


def _cmd_preprocess(args) -> int:
    model = load_model(args.model)
    out_dir = _out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    with open(args.manifest) as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))

    def one(item):
        idx, record = item
        vertices, ext, crop = _record_to_sample(record, model, args.out_size)
        pmap = make_ground_truth(vertices, ext, crop, model)
        stem = record.get("id", f"sample_{idx:06d}")
        save_uvpm(out_dir / f"{stem}.uvpm", pmap)
        if "image" in record:
            img = cv2.imread(record["image"], cv2.IMREAD_COLOR)
            if img is None:
                raise LoadError(f"cannot read image {record['image']}")
            img = cv2.resize(img, (crop.out_size, crop.out_size), interpolation=cv2.INTER_LINEAR)
            cv2.imwrite(str(out_dir / f"{stem}.png"), img)
        return stem

    items = list(enumerate(records))
    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            stems = list(pool.map(one, items))
    else:
        stems = [one(it) for it in items]
    write_provenance(
        out_dir / "preprocess.provenance.json",
        args.seed,
        {**_config_dict(args, ["model", "manifest", "out_size", "jobs"]), "samples": stems},
    )
    return 0


def _cmd_augment(args) -> int:
    model = load_model(args.model)
    pmap = load_uvpm(args.map)
    if args.image:
        img = cv2.imread(args.image, cv2.IMREAD_COLOR)
        if img is None:
            raise LoadError(f"cannot read image {args.image}")
        img = img[:, :, ::-1]  # BGR -> RGB
    else:
        img = np.zeros((pmap.resolution, pmap.resolution, 3), dtype=np.uint8)
    sample = Sample(image=img, gt_map=pmap)
    if args.random:
        rng = np.random.default_rng(np.uint64(args.seed))
        params = AugmentParams.random(rng, allow_flip=model.mirror_perm is not None)
    else:
        params = AugmentParams(
            translate_px=np.array([args.translate_x, args.translate_y]),
            rotate_deg=args.rotate_deg,
            flip=args.flip,
            jitter_gain=np.array(args.jitter_gain),
            jitter_offset=np.array(args.jitter_offset),
        )
    out = augment(sample, params, model)
    out_dir = _out_dir(args)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_uvpm(out_dir / f"{args.stem}.uvpm", out.gt_map)
    cv2.imwrite(str(out_dir / f"{args.stem}.png"), out.image[:, :, ::-1])
    write_provenance(
        out_dir / f"{args.stem}.provenance.json",
        args.seed,
        {**_config_dict(args, ["model", "map", "image", "random"]), "augment": out.meta["augment"]},
    )
    return 0


def _cmd_loss_eval(args) -> int:
    model = load_model(args.model)
    pred = load_uvpm(args.pred)
    gt = load_uvpm(args.gt)
    config = read_json(args.config) if args.config else {}
    mask_cfg = WeightMaskConfig(
        joint_radius_texels=config.get("joint_radius_texels", 8.0),
        joint_gain=config.get("joint_gain", 4.0),
    )
    mask = build_weight_mask(
        model.uv_layout,
        model.part_labels,
        joint_uv_locations(model),
        pred.resolution,
        mask_cfg,
    )
    joint_term = None
    if config.get("joint_subset"):
        joint_term = JointLossTerm(model=model, subset=np.array(config["joint_subset"]))
    cfg = LossConfig(
        mask=mask,
        tv_weight=config.get("tv_weight", 1e-3),
        part_alphas=np.array(config["part_alphas"]) if "part_alphas" in config else None,
        joint_term=joint_term,
    )
    breakdown = total_loss(pred, gt, cfg)
    print(json.dumps(breakdown.to_dict(), sort_keys=True))
    return 0


def _cmd_fit(args) -> int:
    model = load_model(args.model)
    config = read_json(args.config) if args.config else {}
    cfg = FitConfig(
        max_outer_iters=config.get("max_outer_iters", 60),
        lm_iters=config.get("lm_iters", 3),
        lm_damping_init=config.get("lm_damping_init", 1e-3),
        pose_prior_weight=config.get("pose_prior_weight", 1e-3),
        shape_prior_weight=config.get("shape_prior_weight", 1e-4),
        convergence_tol=config.get("convergence_tol", 1e-6),
        vertex_weights=np.array(config["vertex_weights"]) if "vertex_weights" in config else None,
    )
    if args.input.endswith(".uvpm"):
        result = fit_from_map(model, load_uvpm(args.input), cfg)
    else:
        result = fit_vertices(model, read_f32(args.input, (model.num_vertices, 3)), cfg)
    payload = result.to_dict()
    if args.out:
        write_json(args.out, payload)
        write_provenance(
            Path(args.out).with_suffix(".provenance.json"),
            None,
            _config_dict(args, ["model", "input", "config", "out"]),
        )
    print(json.dumps(payload, sort_keys=True))
    return 0


def _cmd_metrics(args) -> int:
    model = load_model(args.model)

    def load_items(manifest_path):
        items = []
        with open(manifest_path) as f:
            for line in f:
                line = line.strip()
                if line:
                    items.append(_load_vertices(json.loads(line)["path"], model))
        return items

    preds = load_items(args.pred)
    gts = load_items(args.gt)
    subset = np.array([int(i) for i in args.joints.split(",")]) if args.joints else None
    report = evaluate_batch(
        preds,
        gts,
        model,
        joint_subset=subset,
        mpjpe_mode=args.mpjpe_mode,
        surface_mode=args.surface_mode,
        pa_with_scale=not args.pa_no_scale,
    )
    out_json = Path(args.out)
    write_json(out_json, report.to_dict())
    csv_path = out_json.with_suffix(".csv")
    lines = ["sample,mpjpe_mm,mpjpe_pa_mm,surface_mm"]
    for i, row in enumerate(report.samples):
        lines.append(f"{i},{row.mpjpe_mm!r},{row.mpjpe_pa_mm!r},{row.surface_mm!r}")
    csv_path.write_text("\n".join(lines) + "\n")
    write_provenance(
        out_json.with_suffix(".provenance.json"),
        None,
        _config_dict(args, ["model", "pred", "gt", "joints", "mpjpe_mode", "surface_mode"]),
    )
    print(json.dumps(report.to_dict(), sort_keys=True))
    return 0


_SUBPARSER_FLAGS: dict[str, set[str]] = {}
# subcommands where --config is consumed by the handler itself
_CONFIG_IS_DATA = {"loss-eval", "fit"}


def _apply_config_file(argv: list[str]) -> list[str]:
    """--config file.json provides flag defaults; explicit flags override."""
    if not argv or argv[0] in _CONFIG_IS_DATA or "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        return argv
    cfg = read_json(argv[idx + 1])
    known = _SUBPARSER_FLAGS.get(argv[0], set())
    rest = argv[1:idx] + argv[idx + 2:]
    extra: list[str] = []
    for key, value in sorted(cfg.items()):
        flag = "--" + key.replace("_", "-")
        if flag in known and flag not in rest and not isinstance(value, (dict, list)):
            if isinstance(value, bool):
                if value:
                    extra.append(flag)
            else:
                extra.extend([flag, str(value)])
    return [argv[0]] + extra + rest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uvbody",
        description="UV position-map body toolkit",
    )
    parser.add_argument("--version", action="version", version=f"uvbody {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model-synth", help="generate the synthetic body model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subdiv", type=int, default=2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_model_synth)

    p = sub.add_parser("uv-render", help="render vertices to a position map")
    p.add_argument("--model", required=True)
    p.add_argument("--vertices", required=True, help=".f32 raw N*3 file or .uvpm")
    p.add_argument("--res", type=int, default=256)
    p.add_argument("--out", required=True)
    p.add_argument("--png", default=None, help="optional 16-bit PNG preview")
    p.set_defaults(func=_cmd_uv_render)

    p = sub.add_parser("uv-resample", help="resample vertices from a position map")
    p.add_argument("--model", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_uv_resample)

    p = sub.add_parser("study", help="resolution/error study")
    p.add_argument("--model", required=True)
    p.add_argument("--res", default="32,64,128,256")
    p.add_argument("--samples", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_study)

    p = sub.add_parser("preprocess", help="build ground-truth maps from a JSONL manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--out-size", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("augment", help="augment one sample (image + map)")
    p.add_argument("--model", required=True)
    p.add_argument("--map", required=True)
    p.add_argument("--image", default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--stem", default="augmented")
    p.add_argument("--random", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--translate-x", type=float, default=0.0)
    p.add_argument("--translate-y", type=float, default=0.0)
    p.add_argument("--rotate-deg", type=float, default=0.0)
    p.add_argument("--flip", action="store_true")
    p.add_argument("--jitter-gain", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    p.add_argument("--jitter-offset", type=float, nargs=3, default=[0.0, 0.0, 0.0])
    p.set_defaults(func=_cmd_augment)

    p = sub.add_parser("loss-eval", help="evaluate the map losses")
    p.add_argument("--model", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--config", default=None)
    p.set_defaults(func=_cmd_loss_eval)

    p = sub.add_parser("fit", help="fit pose/shape to a map or vertex file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help=".uvpm or raw .f32 vertices")
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("metrics", help="evaluate predictions against ground truth")
    p.add_argument("--model", required=True)
    p.add_argument("--pred", required=True, help="JSONL manifest of {path} records")
    p.add_argument("--gt", required=True)
    p.add_argument("--joints", default=None, help="comma-separated joint subset")
    p.add_argument("--mpjpe-mode", choices=["depth_only", "full_root"], default="depth_only")
    p.add_argument("--surface-mode", choices=["raw", "root_depth"], default="raw")
    p.add_argument("--pa-no-scale", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_metrics)

    for name, sp in sub.choices.items():
        _SUBPARSER_FLAGS[name] = set(sp._option_string_actions)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    argv = _apply_config_file(argv)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UVBodyError as exc:
        sys.stderr.write(
            json.dumps({"error": str(exc), "kind": type(exc).__name__}, sort_keys=True) + "\n"
        )
        return 1
    except FileNotFoundError as exc:
        sys.stderr.write(
            json.dumps({"error": str(exc), "kind": "FileNotFound"}, sort_keys=True) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
