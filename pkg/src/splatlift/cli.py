"""Command-line entry point: ``splatlift <command> [options]``.

Commands: synth, train, decode, eval, toy, compare. Every command accepts
``--config FILE`` with ``key = value`` lines; explicit flags win over the
file. Exit status is 0 on success, 1 for configuration or input errors and
2 for numerical failures during optimisation.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import io
from .baseline import DEFAULT_EPS, DEFAULT_MAX_SAMPLES, DEFAULT_MIN_PTS, NoClustersFound, two_stage_labels
from .codec import DecodeConfig, decode_map
from .core import MaskKind
from .losses import LinearProjection
from .metrics import linear_scaling, median_time
from .optim import ConfigError, NumericalError, TrainConfig, toy_corner_experiment, train
from .pipeline import (
    apply_classes,
    decode_views,
    evaluate_predictions,
    fit_code_classes,
    render_view,
)
from .synth import Inconsistency, SpecInfeasible, SynthSpec, generate, make_inconsistent

log = logging.getLogger("splatlift")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

BASELINE_KEYS = {"eps": float, "min_pts": int, "max_samples": int}
PATH_KEYS = {"out", "manifest", "scene"}


# ---------------------------------------------------------------- configuration


def _known_keys() -> set[str]:
    keys = {f.name for cls in (SynthSpec, TrainConfig, DecodeConfig) for f in fields(cls)}
    return keys | set(BASELINE_KEYS) | PATH_KEYS


def load_config_file(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} does not exist")
    values = io.read_config(p)
    unknown = sorted(set(values) - _known_keys())
    if unknown:
        raise ConfigError(f"{path}: unknown keys {unknown}")
    return values


def build(cls, file_values: dict[str, str], flags: dict[str, Any]):
    """Dataclass from defaults, then config-file values, then non-None flags."""
    kwargs = io.dataclass_overrides(cls, file_values)
    names = {f.name for f in fields(cls)}
    kwargs.update({k: v for k, v in flags.items() if k in names and v is not None})
    return cls(**kwargs)


def _pick(file_values: dict[str, str], flag: Any, key: str, cast=str, default=None):
    if flag is not None:
        return flag
    if key in file_values:
        return cast(file_values[key])
    return default


def _require_file(path: str | Path | None, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing {what} path")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} {p} does not exist")
    return p


def _config_dict(obj) -> dict:
    d = obj.as_dict() if hasattr(obj, "as_dict") else asdict(obj)
    return io.to_jsonable(d)


# ---------------------------------------------------------------- synth


def run_synth(spec: SynthSpec, out: Path) -> io.Manifest:
    dataset = generate(spec)
    out.mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(exist_ok=True)
    meta = {"seed": spec.rng_seed, "synth": _config_dict(spec)}
    io.write_scene(out / "scene.txt", dataset.scene, meta)

    if spec.inconsistency == Inconsistency.PERMUTE_PER_VIEW:
        inputs, _ = make_inconsistent(dataset.instance_masks, spec.rng_seed + 1, spec.num_objects)
    else:
        inputs = dataset.instance_masks
    split_of = {i: "train" for i in dataset.train_views} | {i: "eval" for i in dataset.eval_views}
    views = []
    for i, cam in enumerate(dataset.cameras):
        names = tuple(f"masks/view_{i:03d}_{tag}.pgm" for tag in ("instance_gt", "semantic_gt", "instance_input"))
        comments = {"seed": spec.rng_seed, "view": i}
        io.write_pgm(out / names[0], dataset.instance_masks[i], comments)
        io.write_pgm(out / names[1], dataset.semantic_masks[i], comments)
        io.write_pgm(out / names[2], inputs[i], comments)
        views.append(io.ManifestView(i, split_of[i], cam, *names))
    manifest_meta = {
        "scene": "scene.txt",
        "seed": spec.rng_seed,
        "num_objects": spec.num_objects,
        "num_classes": spec.num_classes,
        "object_class": dataset.object_class.tolist(),
        "synth": _config_dict(spec),
    }
    io.write_manifest(out / "manifest.txt", manifest_meta, views)
    return io.read_manifest(out / "manifest.txt")


def cmd_synth(args, file_values) -> int:
    flags = {
        "num_objects": args.objects, "primitives_per_object": args.primitives, "num_classes": args.classes,
        "num_views": args.views, "num_eval_views": args.eval_views, "embedding_dim": args.embedding_dim,
        "semantic_dim": args.semantic_dim, "rng_seed": args.seed,
        "image_size": tuple(args.size) if args.size else None,
    }
    if args.consistent:
        flags["inconsistency"] = Inconsistency.NONE
    spec = build(SynthSpec, file_values, flags)
    out = Path(_pick(file_values, args.out, "out", default="synth_out"))
    manifest = run_synth(spec, out)
    h, w = spec.image_size
    print(f"objects={spec.num_objects} classes={spec.num_classes} views={len(manifest.split('train'))} "
          f"eval_views={len(manifest.split('eval'))} pixels_per_view={h * w} "
          f"primitives={spec.num_objects * spec.primitives_per_object} -> {out / 'manifest.txt'}")
    return EXIT_OK


# ---------------------------------------------------------------- train


def load_split(manifest: io.Manifest, split: str, instance_source: str = "input"):
    views = manifest.split(split)
    if not views:
        raise ConfigError(f"manifest lists no {split} views")
    cams, inst, sem = [], [], []
    for v in views:
        rel = v.instance_input if instance_source == "input" else v.instance_gt
        for p in (rel, v.semantic_gt):
            _require_file(manifest.path(p), "mask")
        cams.append(v.camera)
        inst.append(io.read_pgm(manifest.path(rel), MaskKind.INSTANCE))
        sem.append(io.read_pgm(manifest.path(v.semantic_gt), MaskKind.SEMANTIC))
    return cams, inst, sem


def write_projections(path: Path, instance: LinearProjection, semantic: LinearProjection, meta) -> None:
    rows = []
    for name, proj in (("instance", instance), ("semantic", semantic)):
        for r, row in enumerate(proj.matrix):
            rows.append([name, r, *map(float, row)])
    width = max(instance.matrix.shape[1], semantic.matrix.shape[1])
    io.write_csv(path, ["channel", "row", *[f"c{k}" for k in range(width)]], rows, meta)


def run_train(manifest: io.Manifest, cfg: TrainConfig, out: Path, plot: bool = True) -> dict:
    scene_path = _require_file(manifest.scene_path, "scene")
    scene = io.read_scene(scene_path)
    cams, inst, sem = load_split(manifest, "train")
    out.mkdir(parents=True, exist_ok=True)

    def progress(it, state):
        if it % 500 == 0 or it == cfg.iterations:
            log.info("iteration %d/%d total=%.6g", it, cfg.iterations, state.history["total"][-1])

    result = train(scene, cams, inst, sem, cfg, progress)
    log.info("segmentation losses used %d of %d training views (mask_fraction=%g)",
             len(result.masked_views), len(cams), cfg.mask_fraction)
    meta = {"seed": cfg.rng_seed, "config": _config_dict(cfg)}
    io.write_scene(out / "trained_scene.txt", result.scene, meta)
    write_projections(out / "projection.csv", result.projection, result.semantic_projection, meta)
    terms = ("cluster", "triplet", "reg3d", "total")
    rows = ([i, *(result.history[t][i] for t in terms)] for i in range(len(result.history["total"])))
    io.write_csv(out / "losses.csv", ["iteration", *terms], rows, meta)
    if plot and result.history["total"]:
        from .plotting import plot_losses

        plot_losses({t: result.history[t] for t in terms}, out / "losses.svg", cfg.late_start)
    train_views = manifest.split("train")
    summary = {
        "seed": cfg.rng_seed,
        "config": _config_dict(cfg),
        # relative, so reruns into sibling directories produce identical bytes
        "manifest": os.path.relpath(manifest.root / "manifest.txt", out),
        "views_total": len(train_views),
        "views_with_masks": [train_views[i].index for i in result.masked_views],
        "final_loss": {t: (result.history[t][-1] if result.history[t] else None) for t in terms},
    }
    io.write_json(out / "train_summary.json", summary)
    return summary


def _train_config(args, file_values) -> TrainConfig:
    flags = {
        "iterations": args.iterations, "learning_rate": args.lr, "late_loss_start": args.late_start,
        "max_triplets": args.max_triplets, "mask_fraction": args.mask_fraction, "mask_scale": args.mask_scale,
        "rng_seed": args.seed, "lambda_cluster": args.lambda_cluster, "lambda_triplet": args.lambda_triplet,
        "lambda_3d": args.lambda_3d, "margin": args.margin, "neighbor_threshold": args.neighbor_threshold,
        "embedding_dim": args.embedding_dim, "semantic_dim": args.semantic_dim,
    }
    cfg = build(TrainConfig, file_values, flags)
    problems = cfg.validate()
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg


def _manifest(args, file_values) -> io.Manifest:
    path = _require_file(_pick(file_values, args.manifest, "manifest"), "manifest")
    return io.read_manifest(path)


def cmd_train(args, file_values) -> int:
    manifest = _manifest(args, file_values)
    cfg = _train_config(args, file_values)
    out = Path(_pick(file_values, args.out, "out", default="train_out"))
    summary = run_train(manifest, cfg, out, plot=not args.no_plot)
    print(f"trained {cfg.iterations} iterations on {len(summary['views_with_masks'])}/"
          f"{summary['views_total']} masked views; final total loss {summary['final_loss']['total']!r} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- decode / eval


def _scene_arg(args, file_values, manifest: io.Manifest) -> Path:
    return _require_file(_pick(file_values, args.scene, "scene", default=None) or manifest.scene_path, "scene")


def run_decode(manifest: io.Manifest, scene_path: Path, out: Path, split: str, threshold: float,
               save_embeddings: bool) -> list[str]:
    scene = io.read_scene(scene_path)
    out.mkdir(parents=True, exist_ok=True)
    views = manifest.views if split == "all" else manifest.split(split)
    written = []
    for v in views:
        rendered = render_view(scene, v.camera)
        inst, sem = decode_views([rendered], threshold)
        comments = {"view": v.index, "decode_threshold": threshold}
        for tag, m in (("instance", inst[0]), ("semantic_code", sem[0])):
            name = f"view_{v.index:03d}_{tag}.pgm"
            io.write_pgm(out / name, m, comments)
            written.append(name)
        if save_embeddings:
            io.write_embedding_map(out / f"view_{v.index:03d}_instance.emb", rendered.instance)
            io.write_embedding_map(out / f"view_{v.index:03d}_semantic.emb", rendered.semantic)
    io.write_json(out / "decode_meta.json", {
        "scene": str(scene_path), "split": split, "decode_threshold": threshold, "files": written,
        "seed": manifest.meta.get("seed"),
    })
    return written


def cmd_decode(args, file_values) -> int:
    manifest = _manifest(args, file_values)
    scene_path = _scene_arg(args, file_values, manifest)
    threshold = _pick(file_values, args.threshold, "decode_threshold", float, 0.5)
    DecodeConfig(threshold)
    out = Path(_pick(file_values, args.out, "out", default="decode_out"))
    written = run_decode(manifest, scene_path, out, args.split, threshold, args.save_embeddings)
    print(f"decoded {len(written) // 2} views -> {out}")
    return EXIT_OK


def _decode_timed(rendered, threshold):
    maps = [r.instance for r in rendered] + [r.semantic for r in rendered]

    def run():
        return [decode_map(m, DecodeConfig(threshold, m.dim)) for m in maps]

    return run


def run_eval(manifest: io.Manifest, scene_path: Path, out: Path, threshold: float = 0.5,
             compare_baseline: bool = False, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS,
             max_samples: int = DEFAULT_MAX_SAMPLES, repeats: int = 3) -> dict:
    scene = io.read_scene(scene_path)
    seed = int(manifest.meta.get("seed", 0))

    train_cams, _, train_sem = load_split(manifest, "train")
    train_rendered = [render_view(scene, c) for c in train_cams]
    _, train_codes = decode_views(train_rendered, threshold)
    table = fit_code_classes(train_codes, train_sem)

    cams, gt_inst, gt_sem = load_split(manifest, "eval", instance_source="gt")
    rendered = [render_view(scene, c) for c in cams]
    pred_inst, sem_codes = decode_views(rendered, threshold)
    pred_sem = apply_classes(sem_codes, table)
    metrics = evaluate_predictions(pred_inst, pred_sem, gt_inst, gt_sem)
    num_pixels = sum(c.width * c.height for c in cams)
    report = {
        "seed": seed,
        "scene": scene_path.name,
        "eval_views": [v.index for v in manifest.split("eval")],
        "decode_threshold": threshold,
        "code_class_table": table.as_dict(),
        "single_stage": metrics,
    }
    timings = {"pixels": num_pixels, "decode_seconds": median_time(_decode_timed(rendered, threshold), repeats)}

    if compare_baseline:
        def baseline():
            return two_stage_labels([r.instance for r in rendered], eps, min_pts, max_samples, seed)

        model, base_inst = baseline()
        base = evaluate_predictions(base_inst, pred_sem, gt_inst, gt_sem)
        report["two_stage"] = {
            "eps": eps, "min_pts": min_pts, "max_samples": max_samples,
            "clusters": int(model.centroids.shape[0]),
            **{k: base[k] for k in ("pq_scene", "pq_scene_x100", "miou", "pq_detail")},
        }
        timings["baseline_seconds"] = median_time(baseline, repeats)
        timings["speedup"] = timings["baseline_seconds"] / timings["decode_seconds"]

    out.mkdir(parents=True, exist_ok=True)
    io.write_json(out / "metrics.json", report)
    io.write_json(out / "timings.json", {"seed": seed, **timings})
    rows = [["single_stage", metrics["pq_scene"], metrics["miou"], metrics["collisions"]]]
    if compare_baseline:
        rows.append(["two_stage", report["two_stage"]["pq_scene"], report["two_stage"]["miou"], ""])
    io.write_csv(out / "methods.csv", ["method", "pq_scene", "miou", "collisions"], rows,
                 {"seed": seed, "decode_threshold": threshold, "eps": eps, "min_pts": min_pts})
    return report


def _baseline_params(args, file_values):
    return (
        _pick(file_values, args.eps, "eps", float, DEFAULT_EPS),
        _pick(file_values, args.min_pts, "min_pts", int, DEFAULT_MIN_PTS),
        _pick(file_values, args.max_samples, "max_samples", int, DEFAULT_MAX_SAMPLES),
    )


def cmd_eval(args, file_values) -> int:
    manifest = _manifest(args, file_values)
    scene_path = _scene_arg(args, file_values, manifest)
    threshold = _pick(file_values, args.threshold, "decode_threshold", float, 0.5)
    out = Path(_pick(file_values, args.out, "out", default="eval_out"))
    eps, min_pts, max_samples = _baseline_params(args, file_values)
    report = run_eval(manifest, scene_path, out, threshold, args.compare_baseline, eps, min_pts, max_samples,
                      args.repeats)
    s = report["single_stage"]
    line = f"PQ^scene={s['pq_scene_x100']:.2f} mIoU={100 * s['miou']:.2f} collisions={s['collisions']}"
    if "two_stage" in report:
        line += f" | two-stage PQ^scene={report['two_stage']['pq_scene_x100']:.2f}"
    print(line + f" -> {out / 'metrics.json'}")
    return EXIT_OK


# ---------------------------------------------------------------- compare


def run_compare(manifest: io.Manifest, scene_path: Path, out: Path, sizes: Sequence[int] = (64, 128, 256),
                threshold: float = 0.5, eps: float = DEFAULT_EPS, min_pts: int = DEFAULT_MIN_PTS,
                max_samples: int = DEFAULT_MAX_SAMPLES, repeats: int = 5, view: int = 0,
                plot: bool = True) -> dict:
    """Decode vs cluster-then-assign wall time on one held-out view rendered at several sizes."""
    scene = io.read_scene(scene_path)
    seed = int(manifest.meta.get("seed", 0))
    eval_views = manifest.split("eval")
    if not 0 <= view < len(eval_views):
        raise ConfigError(f"view {view} out of range for {len(eval_views)} eval views")
    base_cam = eval_views[view].camera
    records, timing_rows = [], []
    for size in sizes:
        cam = base_cam.scaled(size / base_cam.width)
        emb = render_view(scene, cam).instance
        cfg = DecodeConfig(threshold, emb.dim)
        decoded = decode_map(emb, cfg)
        t_dec = median_time(lambda: decode_map(emb, cfg), repeats, min_seconds=0.2)

        def baseline():
            return two_stage_labels([emb], eps, min_pts, max_samples, seed)

        model, _ = baseline()
        t_base = median_time(baseline, repeats)
        pixels = cam.width * cam.height
        records.append({
            "size": size, "pixels": pixels, "clusters": int(model.centroids.shape[0]),
            "decoded_labels": int(np.unique(decoded.labels[decoded.labels > 0]).size),
        })
        timing_rows.append([size, pixels, t_dec, t_base, t_base / t_dec])
    scaling = linear_scaling([r[1] for r in timing_rows], [r[2] for r in timing_rows])
    out.mkdir(parents=True, exist_ok=True)
    report = {"seed": seed, "view": eval_views[view].index, "decode_threshold": threshold,
              "eps": eps, "min_pts": min_pts, "max_samples": max_samples, "sizes": records}
    io.write_json(out / "compare_metrics.json", report)
    io.write_csv(out / "compare_timings.csv", ["size", "pixels", "decode_seconds", "baseline_seconds", "speedup"],
                 timing_rows, {"seed": seed, "eps": eps, "min_pts": min_pts, "repeats": repeats})
    io.write_json(out / "compare_scaling.json", scaling)
    if plot:
        from .plotting import plot_compare

        plot_compare([f"{r[0]}²" for r in timing_rows], [r[2] for r in timing_rows],
                     [r[3] for r in timing_rows], out / "compare.svg")
    return {"report": report, "timings": timing_rows, "scaling": scaling}


def cmd_compare(args, file_values) -> int:
    manifest = _manifest(args, file_values)
    scene_path = _scene_arg(args, file_values, manifest)
    threshold = _pick(file_values, args.threshold, "decode_threshold", float, 0.5)
    out = Path(_pick(file_values, args.out, "out", default="compare_out"))
    eps, min_pts, max_samples = _baseline_params(args, file_values)
    res = run_compare(manifest, scene_path, out, args.sizes, threshold, eps, min_pts, max_samples, args.repeats,
                      args.view, plot=not args.no_plot)
    for size, pixels, t_dec, t_base, speedup in res["timings"]:
        print(f"{size}x{size}: decode {t_dec:.3g}s, cluster+assign {t_base:.3g}s, speedup {speedup:.1f}x")
    print(f"decode slope ratio {res['scaling']['slope_ratio']:.2f} -> {out}")
    return EXIT_OK


# ---------------------------------------------------------------- toy


def run_toy(num_points: int, num_groups: int, steps: int, seed: int, lr: float, out: Path,
            plot: bool = True) -> dict:
    res = toy_corner_experiment(num_points, num_groups, steps, seed, lr)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"seed": seed, "config": {"num_points": num_points, "num_groups": num_groups, "steps": steps,
                                     "learning_rate": lr}}
    header = ["step", *[f"p{i}_{axis}" for i in range(num_points) for axis in ("x", "y")]]
    flat = res.trajectory.reshape(res.trajectory.shape[0], -1)
    with open(out / "toy_trajectory.csv", "w") as fh:
        for k, v in meta.items():
            fh.write(f"# {k} = {io._meta_value(v)}\n")
        fh.write(",".join(header) + "\n")
        body = np.column_stack([np.arange(flat.shape[0]), flat])
        np.savetxt(fh, body, fmt=["%d"] + ["%.8f"] * flat.shape[1], delimiter=",")

    corners = np.round(res.group_means)
    dist = np.abs(res.group_means - corners).max(axis=1)
    rows = [[g, *res.group_means[g], *corners[g].astype(int), dist[g]] for g in range(num_groups)]
    io.write_csv(out / "toy_means.csv", ["group", "mean_x", "mean_y", "corner_x", "corner_y", "max_abs_offset"],
                 rows, meta)
    diffs = res.group_means[:, None, :] - res.group_means[None, :, :]
    pair = np.sqrt((diffs**2).sum(-1))[np.triu_indices(num_groups, 1)]

    def spread(pos):
        return float(np.mean([pos[res.groups == g].var(axis=0).sum() for g in range(num_groups)]))

    report = {
        **meta,
        "group_means": res.group_means,
        "nearest_corners": corners.astype(int),
        "max_offset_from_corner": float(dist.max()),
        "distinct_corners": len({tuple(c) for c in corners.astype(int).tolist()}) == num_groups,
        "min_pairwise_distance": float(pair.min()) if pair.size else None,
        "within_group_variance_initial": spread(res.trajectory[0]),
        "within_group_variance_final": spread(res.trajectory[-1]),
        "final_loss": float(res.losses[-1]) if res.losses.size else None,
    }
    io.write_json(out / "toy_report.json", report)
    if plot:
        from .plotting import plot_toy

        plot_toy(res.trajectory, res.groups, out / "toy.svg")
    return report


def cmd_toy(args, file_values) -> int:
    out = Path(_pick(file_values, args.out, "out", default="toy_out"))
    seed = _pick(file_values, args.seed, "rng_seed", int, 0)
    report = run_toy(args.points, args.groups, args.steps, seed, args.lr, out, plot=not args.no_plot)
    print(f"groups={args.groups} distinct_corners={report['distinct_corners']} "
          f"max_offset={report['max_offset_from_corner']:.4f} min_pair_distance={report['min_pairwise_distance']} "
          f"variance {report['within_group_variance_initial']:.4g} -> {report['within_group_variance_final']:.4g}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatlift", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_manifest=True):
        p.add_argument("--config", help="key = value config file; flags override it")
        p.add_argument("--out", help="output directory")
        if needs_manifest:
            p.add_argument("--manifest", help="manifest written by 'synth'")
            p.add_argument("--scene", help="scene file (defaults to the manifest's scene)")

    p = sub.add_parser("synth", help="generate a synthetic scene, masks and manifest")
    common(p, needs_manifest=False)
    p.add_argument("--objects", type=int)
    p.add_argument("--primitives", type=int, help="primitives per object")
    p.add_argument("--classes", type=int)
    p.add_argument("--views", type=int, help="training views")
    p.add_argument("--eval-views", type=int)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--embedding-dim", type=int)
    p.add_argument("--semantic-dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--consistent", action="store_true", help="keep instance ids consistent across views")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="optimise embeddings against the training masks")
    common(p)
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--late-start", type=int, help="iteration that enables triplet and 3-D terms")
    p.add_argument("--max-triplets", type=int)
    p.add_argument("--mask-fraction", type=float)
    p.add_argument("--mask-scale", type=float)
    p.add_argument("--lambda-cluster", type=float)
    p.add_argument("--lambda-triplet", type=float)
    p.add_argument("--lambda-3d", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--neighbor-threshold", type=float)
    p.add_argument("--embedding-dim", type=int)
    p.add_argument("--semantic-dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("decode", help="render views and write decoded label maps")
    common(p)
    p.add_argument("--split", choices=("train", "eval", "all"), default="eval")
    p.add_argument("--threshold", type=float)
    p.add_argument("--save-embeddings", action="store_true")
    p.set_defaults(handler=cmd_decode)

    def baseline_opts(q):
        q.add_argument("--threshold", type=float)
        q.add_argument("--eps", type=float, help="density-clustering radius in sigmoid space")
        q.add_argument("--min-pts", type=int)
        q.add_argument("--max-samples", type=int)

    p = sub.add_parser("eval", help="score held-out views against consistent ground truth")
    common(p)
    baseline_opts(p)
    p.add_argument("--compare-baseline", action="store_true", help="also run cluster-then-assign")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("compare", help="wall time of decode vs cluster-then-assign across map sizes")
    common(p)
    baseline_opts(p)
    p.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256])
    p.add_argument("--view", type=int, default=0, help="index into the eval views")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("toy", help="2-d sigmoid toy: groups drift to distinct corners")
    common(p, needs_manifest=False)
    p.add_argument("--groups", type=int, default=4)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-plot", action="store_true")
    p.set_defaults(handler=cmd_toy)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        file_values = load_config_file(args.config)
        return args.handler(args, file_values)
    except NumericalError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SpecInfeasible, NoClustersFound, io.FormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
