"""Stage-by-stage pipeline driver.

Each subcommand reads a YAML config (plus flag overrides), consumes the
previous stage's artifacts from the output directory, and writes its own
artifacts atomically together with a run manifest. Reruns with identical
inputs produce byte-identical outputs.

Exit codes: 0 success, 2 validation error, 3 missing upstream artifact.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import glob
import io
import json
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import alignment as alignment_mod
from . import binio, boosting, diffusion, explain as explain_mod
from . import image_io, metrics, probmap as probmap_mod, regional, render, segmentation, synth
from .celldb import build_cell_db, load_db, save_db
from .config import PipelineConfig, config_from_dict, config_to_dict
from .features import FEATURE_NAMES, manual_features
from .kmeans import streaming_kmeans
from .manifest import atomic_write_text, write_manifest

VALIDATION_ERROR = 2
MISSING_ARTIFACT = 3


class ValidationError(Exception):
    pass


class MissingArtifact(Exception):
    pass


# ---------------------------------------------------------------- paths


def sections_dir(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.paths.out_dir, "sections")


def truth_dir(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.paths.out_dir, "truth")


def segments_path(cfg: PipelineConfig, section_id: str) -> str:
    return os.path.join(cfg.paths.out_dir, "segments", f"{section_id}.ndjson")


def annotations_path(cfg: PipelineConfig) -> str:
    return cfg.paths.annotations or os.path.join(cfg.paths.out_dir, "annotations.json")


def reps_path(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.paths.out_dir, "representatives.bin")


def dm_model_path(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.paths.out_dir, "dm_model.bin")


def alignment_path(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.paths.out_dir, "alignment.bin")


def celldb_path(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.paths.out_dir, "celldb.bin")


def grid_path(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.paths.out_dir, "grid.json")


def regions_path(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.paths.out_dir, "regions.bin")


def model_path(cfg: PipelineConfig, structure: str) -> str:
    return os.path.join(cfg.paths.out_dir, "models", f"{structure}.json")


def manifest_path(cfg: PipelineConfig, step: str) -> str:
    return os.path.join(cfg.paths.out_dir, "manifests", f"{step}.json")


def _require(path: str, prior_command: str) -> str:
    if not os.path.exists(path):
        raise MissingArtifact(f"missing {path}; run `cytoarch {prior_command}` first")
    return path


def list_section_images(cfg: PipelineConfig) -> List[str]:
    return sorted(glob.glob(os.path.join(sections_dir(cfg), "*.png")))


def load_sections(cfg: PipelineConfig, ids: Optional[Sequence[str]] = None):
    paths = list_section_images(cfg)
    if not paths:
        raise MissingArtifact(
            f"no section images in {sections_dir(cfg)}; run `cytoarch synth` or place PNGs there"
        )
    images = [image_io.load_section(p) for p in paths]
    if ids is not None:
        wanted = set(ids)
        images = [img for img in images if img.section_id in wanted]
        found = {img.section_id for img in images}
        missing = wanted - found
        if missing:
            raise ValidationError(f"sections not found: {sorted(missing)}")
    return images


def resolve_section_split(cfg: PipelineConfig) -> Tuple[List[str], List[str]]:
    """(train_ids, eval_ids): explicit lists when given, else all-but-last /
    last of the available sections."""
    paths = list_section_images(cfg)
    if not paths:
        raise MissingArtifact(
            f"no section images in {sections_dir(cfg)}; run `cytoarch synth` or place PNGs there"
        )
    all_ids = [image_io.load_section(p).section_id for p in paths]
    train = list(cfg.paths.train_sections) or (all_ids[:-1] if len(all_ids) > 1 else all_ids)
    ev = list(cfg.paths.eval_sections) or all_ids[-1:]
    return train, ev


def load_segments_for(cfg: PipelineConfig, section_id: str):
    return image_io.load_segments(_require(segments_path(cfg, section_id), "segment"))


def structure_names(cfg: PipelineConfig, annotations) -> List[str]:
    names = sorted({a.name for a in annotations})
    if cfg.structures:
        unknown = set(cfg.structures) - set(names)
        if unknown:
            raise ValidationError(f"structures not present in annotations: {sorted(unknown)}")
        names = list(cfg.structures)
    if not names:
        raise ValidationError("no annotated structures found")
    return names


# ---------------------------------------------------------------- commands


def cmd_synth(cfg: PipelineConfig) -> None:
    cfg.synth.validate()
    if cfg.n_sections < 1:
        raise ValidationError("n_sections must be >= 1")
    outputs = []
    annotations = []
    for i in range(cfg.n_sections):
        section_id = f"s{i:03d}"
        section_cfg = dataclasses.replace(cfg.synth, seed=cfg.synth.seed + i)
        image, truth = synth.generate_synthetic_section(section_cfg, section_id)
        png = os.path.join(sections_dir(cfg), f"{section_id}.png")
        image_io.save_section(image, png)
        truth_path = os.path.join(truth_dir(cfg), f"{section_id}.json")
        atomic_write_text(truth_path, synth.ground_truth_json(truth))
        outputs += [png, truth_path]
        for name, poly in sorted(truth.structures.items()):
            annotations.append(
                regional.StructureAnnotation(section_id=section_id, name=name, polygon=poly)
            )
    ann_path = os.path.join(cfg.paths.out_dir, "annotations.json")
    regional.save_annotations(annotations, ann_path)
    outputs.append(ann_path)
    write_manifest(
        manifest_path(cfg, "synth"),
        "synth",
        config_to_dict(cfg),
        inputs=[],
        outputs=outputs,
    )
    print(f"synth: wrote {cfg.n_sections} sections, {len(annotations)} structure outlines")


def cmd_segment(cfg: PipelineConfig) -> None:
    images = load_sections(cfg)
    seg = cfg.segmentation
    inputs, outputs = [], []
    total = 0
    for image in images:
        segments = segmentation.segment_section(
            image,
            block_size=seg.block_size,
            c=seg.c,
            min_area=seg.min_area,
            max_area=seg.max_area,
        )
        out = segments_path(cfg, image.section_id)
        image_io.save_segments(segments, out)
        inputs.append(os.path.join(sections_dir(cfg), f"{image.section_id}.png"))
        outputs.append(out)
        total += len(segments)
        print(f"segment: {image.section_id}: {len(segments)} cells")
    write_manifest(
        manifest_path(cfg, "segment"), "segment", config_to_dict(cfg), inputs, outputs
    )
    print(f"segment: {total} cells across {len(images)} sections")


def _patch_chunks(cfg: PipelineConfig, section_ids: Sequence[str]):
    """Callable yielding flattened rotation-normalized patches in chunks."""
    patch_size = cfg.patch.size
    chunk_size = cfg.kmeans.chunk_size

    def chunks():
        buffer: List[np.ndarray] = []
        for sid in section_ids:
            image = load_sections(cfg, [sid])[0]
            for segment in load_segments_for(cfg, sid):
                patch = segmentation.extract_patch(image, segment, patch_size)
                buffer.append(patch.pixels.ravel())
                if len(buffer) >= chunk_size:
                    yield np.array(buffer)
                    buffer = []
        if buffer:
            yield np.array(buffer)

    return chunks


def cmd_kmeans(cfg: PipelineConfig) -> None:
    train_ids, _ = resolve_section_split(cfg)
    for sid in train_ids:
        _require(segments_path(cfg, sid), "segment")
    km = cfg.kmeans
    reps, counts = streaming_kmeans(
        _patch_chunks(cfg, train_ids),
        k=km.k,
        min_cluster=km.min_cluster,
        seed=km.seed,
        init_sample=km.init_sample,
        n_passes=km.n_passes,
    )
    binio.write_arrays(
        reps_path(cfg),
        {"representatives": reps, "counts": counts},
        kind="patch_reps",
        meta={"patch_size": cfg.patch.size},
    )
    write_manifest(
        manifest_path(cfg, "kmeans"),
        "kmeans",
        config_to_dict(cfg),
        [segments_path(cfg, sid) for sid in train_ids],
        [reps_path(cfg)],
    )
    print(f"kmeans: {len(reps)} representatives (k={km.k}, min_cluster={km.min_cluster})")


def cmd_dmfit(cfg: PipelineConfig) -> None:
    arrays, _ = binio.read_arrays(_require(reps_path(cfg), "kmeans"), expect_kind="patch_reps")
    reps = arrays["representatives"]
    dm = cfg.dm
    if len(reps) < dm.n_evecs + 1:
        raise ValidationError(
            f"{len(reps)} representatives cannot support n_evecs={dm.n_evecs}; "
            "lower dm.n_evecs or raise kmeans.k"
        )
    model = diffusion.fit_diffusion_map(reps, epsilon=dm.epsilon, alpha=dm.alpha, n_evecs=dm.n_evecs)
    diffusion.save_model(model, dm_model_path(cfg))
    write_manifest(
        manifest_path(cfg, "dmfit"),
        "dmfit",
        config_to_dict(cfg),
        [reps_path(cfg)],
        [dm_model_path(cfg)],
    )
    print(
        f"dmfit: {model.n_evecs} eigenpairs over {len(reps)} representatives, "
        f"epsilon={model.epsilon:.6g}, top eigenvalue {model.eigenvalues[0]:.4f}"
    )


def cmd_align(cfg: PipelineConfig) -> None:
    if not cfg.reference_model:
        raise ValidationError("align requires reference_model (config key or --reference)")
    new_model = diffusion.load_model(_require(dm_model_path(cfg), "dmfit"))
    if not os.path.exists(cfg.reference_model):
        raise ValidationError(f"reference model not found: {cfg.reference_model}")
    reference = diffusion.load_model(cfg.reference_model)
    affine = alignment_mod.align_brain_features(new_model, reference, m=cfg.dm.m)
    alignment_mod.save_affine(affine, alignment_path(cfg))
    cost = alignment_mod.alignment_cost(
        affine,
        diffusion.embed_many(new_model, reference.representatives, m=cfg.dm.m),
        diffusion.embed_many(reference, reference.representatives, m=cfg.dm.m),
    )
    write_manifest(
        manifest_path(cfg, "align"),
        "align",
        config_to_dict(cfg),
        [dm_model_path(cfg), cfg.reference_model],
        [alignment_path(cfg)],
    )
    print(f"align: fitted affine map, residual cost {cost:.6g}")


def cmd_embed(cfg: PipelineConfig) -> None:
    model = diffusion.load_model(_require(dm_model_path(cfg), "dmfit"))
    affine = None
    if os.path.exists(alignment_path(cfg)):
        affine = alignment_mod.load_affine(alignment_path(cfg))
    images = load_sections(cfg)
    cell_ids: List[str] = []
    section_ids: List[str] = []
    centroids: List[np.ndarray] = []
    areas: List[float] = []
    rows: List[np.ndarray] = []
    inputs = []
    resolution = None
    for image in images:
        resolution = image.resolution_um if resolution is None else resolution
        segments = load_segments_for(cfg, image.section_id)
        inputs.append(segments_path(cfg, image.section_id))
        if not segments:
            continue
        patches = [segmentation.extract_patch(image, s, cfg.patch.size) for s in segments]
        flat = np.array([p.pixels.ravel() for p in patches])
        emb = diffusion.embed_many(model, flat, m=cfg.dm.m)
        if affine is not None:
            emb = alignment_mod.apply_affine(affine, emb)
        for segment, patch, coords in zip(segments, patches, emb):
            mf = manual_features(segment, patch)
            rows.append(np.concatenate([mf.as_array(), coords]))
            cell_ids.append(segment.cell_id)
            section_ids.append(segment.section_id)
            centroids.append(segment.centroid)
            areas.append(float(segment.area))
    if not rows:
        raise ValidationError("no cells found in any section; check segmentation output")
    db = build_cell_db(
        cell_ids,
        section_ids,
        np.array(centroids),
        np.array(areas),
        np.array(rows),
        resolution_um=resolution,
        meta={"aligned": affine is not None},
    )
    save_db(db, celldb_path(cfg))
    write_manifest(
        manifest_path(cfg, "embed"),
        "embed",
        config_to_dict(cfg),
        inputs + [dm_model_path(cfg)],
        [celldb_path(cfg)],
    )
    print(f"embed: {len(db)} cells in feature database" + (" (aligned)" if affine is not None else ""))


def _load_annotations(cfg: PipelineConfig):
    path = annotations_path(cfg)
    if not os.path.exists(path):
        raise MissingArtifact(
            f"missing annotations at {path}; run `cytoarch synth` or set paths.annotations"
        )
    return regional.load_annotations(path)


def _section_dims(cfg: PipelineConfig, ids: Sequence[str]) -> Dict[str, Tuple[int, int]]:
    return {img.section_id: (img.height, img.width) for img in load_sections(cfg, ids)}


def cmd_regionize(cfg: PipelineConfig) -> None:
    db = load_db(_require(celldb_path(cfg), "embed"))
    annotations = _load_annotations(cfg)
    names = structure_names(cfg, annotations)
    train_ids, _ = resolve_section_split(cfg)
    train_mask = np.array([s in set(train_ids) for s in db.sections], dtype=bool)
    if train_mask.sum() < regional.MIN_GRID_CELLS:
        raise ValidationError(
            f"threshold grid needs {regional.MIN_GRID_CELLS}+ training cells, found {int(train_mask.sum())}"
        )
    grid = regional.fit_threshold_grid(db.features[train_mask])
    regional.save_grid(grid, grid_path(cfg))
    matrix = regional.build_labeled_tiles(
        db,
        grid,
        annotations,
        _section_dims(cfg, train_ids),
        side=cfg.regional.tile_side,
        stride=cfg.regional.train_stride,
        min_cells=cfg.regional.min_cells,
        structures=names,
    )
    regional.save_tile_matrix(matrix, regions_path(cfg))
    write_manifest(
        manifest_path(cfg, "regionize"),
        "regionize",
        config_to_dict(cfg),
        [celldb_path(cfg), annotations_path(cfg)],
        [grid_path(cfg), regions_path(cfg)],
    )
    n_pos = {name: int(matrix.labels[name].sum()) for name in names}
    print(f"regionize: {len(matrix)} training tiles; positives per structure: {n_pos}")


def _structures_to_process(cfg: PipelineConfig, requested: Optional[str], available) -> List[str]:
    if requested:
        if requested not in available:
            raise ValidationError(f"unknown structure {requested!r}; available: {sorted(available)}")
        return [requested]
    return list(available)


def cmd_train(cfg: PipelineConfig, structure: Optional[str] = None) -> None:
    matrix = regional.load_tile_matrix(_require(regions_path(cfg), "regionize"))
    cfg.boost.validate()
    names = _structures_to_process(cfg, structure, sorted(matrix.labels))
    usable = ~matrix.low_support
    outputs = []
    for name in names:
        y = matrix.labels[name][usable].astype(np.float64)
        X = matrix.features[usable]
        if y.min() == y.max():
            raise ValidationError(
                f"structure {name!r} has single-class labels on usable tiles; "
                "adjust tiling or annotations"
            )
        model = boosting.train_detector(
            X,
            y,
            rounds=cfg.boost.rounds,
            max_depth=cfg.boost.max_depth,
            eta=cfg.boost.eta,
            reg_lambda=cfg.boost.reg_lambda,
            min_child_weight=cfg.boost.min_child_weight,
        )
        out = model_path(cfg, name)
        boosting.save_model(model, out)
        outputs.append(out)
        print(
            f"train: {name}: {len(y)} tiles ({int(y.sum())} positive), "
            f"final train loss {model.loss_history[-1]:.4f}"
        )
    write_manifest(
        manifest_path(cfg, "train"),
        "train",
        {"config": config_to_dict(cfg), "structures": names},
        [regions_path(cfg)],
        outputs,
    )


def cmd_eval(cfg: PipelineConfig, structure: Optional[str] = None) -> None:
    db = load_db(_require(celldb_path(cfg), "embed"))
    grid = regional.load_grid(_require(grid_path(cfg), "regionize"))
    annotations = _load_annotations(cfg)
    names = _structures_to_process(cfg, structure, structure_names(cfg, annotations))
    _, eval_ids = resolve_section_split(cfg)
    matrix = regional.build_labeled_tiles(
        db,
        grid,
        annotations,
        _section_dims(cfg, eval_ids),
        side=cfg.regional.tile_side,
        stride=cfg.regional.train_stride,
        min_cells=cfg.regional.min_cells,
        structures=names,
    )
    usable = ~matrix.low_support
    eval_dir = os.path.join(cfg.paths.out_dir, "eval")
    outputs = []
    for name in names:
        model = boosting.load_model(_require(model_path(cfg, name), "train"))
        scores = model.predict_score(matrix.features[usable])
        labels = matrix.labels[name][usable].astype(int)
        if labels.min() == labels.max():
            raise ValidationError(f"evaluation tiles for {name!r} are single-class; AUC undefined")
        auc = metrics.roc_auc(scores, labels)
        fpr, tpr, thr = metrics.roc_curve(scores, labels)
        report = io.StringIO()
        w = csv.writer(report, lineterminator="\n")
        w.writerow(["structure", "auc", "n_tiles", "n_positive", "n_low_support"])
        w.writerow([name, repr(float(auc)), int(usable.sum()), int(labels.sum()), int((~usable).sum())])
        report_path = os.path.join(eval_dir, f"{name}_auc.csv")
        atomic_write_text(report_path, report.getvalue())
        curve = io.StringIO()
        w = csv.writer(curve, lineterminator="\n")
        w.writerow(["fpr", "tpr", "threshold"])
        for f, t, s in zip(fpr, tpr, thr):
            w.writerow([repr(float(f)), repr(float(t)), repr(float(s))])
        curve_path = os.path.join(eval_dir, f"{name}_roc.csv")
        atomic_write_text(curve_path, curve.getvalue())
        png_path = os.path.join(eval_dir, f"{name}_roc.png")
        render.curve_png([(fpr, tpr)], png_path)
        outputs += [report_path, curve_path, png_path]
        print(f"eval: {name}: ROC AUC {auc:.4f} on {int(usable.sum())} tiles ({int(labels.sum())} positive)")
    write_manifest(
        manifest_path(cfg, "eval"),
        "eval",
        {"config": config_to_dict(cfg), "structures": names},
        [celldb_path(cfg), grid_path(cfg)],
        outputs,
    )


def cmd_probmap(cfg: PipelineConfig, structure: Optional[str] = None, section: Optional[str] = None) -> None:
    db = load_db(_require(celldb_path(cfg), "embed"))
    grid = regional.load_grid(_require(grid_path(cfg), "regionize"))
    annotations = _load_annotations(cfg)
    names = _structures_to_process(cfg, structure, structure_names(cfg, annotations))
    _, eval_ids = resolve_section_split(cfg)
    ids = [section] if section else eval_ids
    maps_dir = os.path.join(cfg.paths.out_dir, "probmaps")
    outputs = []
    for name in names:
        model = boosting.load_model(_require(model_path(cfg, name), "train"))
        for image in load_sections(cfg, ids):
            pm = probmap_mod.probability_map(
                image.section_id,
                image.height,
                image.width,
                db,
                grid,
                model,
                side=cfg.regional.tile_side,
                stride=cfg.regional.map_stride,
                min_cells=cfg.regional.min_cells,
            )
            base = os.path.join(maps_dir, f"{name}_{image.section_id}")
            probmap_mod.save_probability_map(pm, base + ".json")
            rendered = probmap_mod.render_probability_map(pm, image.height, image.width)
            render.save_grayscale_png(rendered, base + ".png")
            outputs += [base + ".json", base + ".png"]
            print(
                f"probmap: {name} on {image.section_id}: "
                f"{len(pm.tiles)} tiles, {int(pm.low_support.sum())} low-support"
            )
    write_manifest(
        manifest_path(cfg, "probmap"),
        "probmap",
        {"config": config_to_dict(cfg), "structures": names, "sections": ids},
        [celldb_path(cfg), grid_path(cfg)],
        outputs,
    )


def cmd_explain(
    cfg: PipelineConfig,
    structure: Optional[str] = None,
    feature: str = "rotation_angle",
    lo: float = -65.0,
    hi: float = 11.3,
    section: Optional[str] = None,
) -> None:
    db = load_db(_require(celldb_path(cfg), "embed"))
    grid = regional.load_grid(_require(grid_path(cfg), "regionize"))
    annotations = _load_annotations(cfg)
    names = _structures_to_process(cfg, structure, structure_names(cfg, annotations))
    if feature not in FEATURE_NAMES:
        raise ValidationError(f"unknown feature {feature!r}; choose from {FEATURE_NAMES}")
    _, eval_ids = resolve_section_split(cfg)
    sid = section or eval_ids[0]
    image = load_sections(cfg, [sid])[0]
    segments = load_segments_for(cfg, sid)
    explain_dir = os.path.join(cfg.paths.out_dir, "explain")
    outputs = []
    for name in names:
        model = boosting.load_model(_require(model_path(cfg, name), "train"))
        report = explain_mod.feature_importance(model, grid)
        importance_path = os.path.join(explain_dir, f"{name}_importance.csv")
        explain_mod.save_importance_csv(report, importance_path)
        overlay, tinted = explain_mod.highlight_cells(image, segments, db, feature, lo, hi)
        overlay_path = os.path.join(explain_dir, f"{name}_{sid}_{feature}_overlay.png")
        render.save_rgb_png(overlay, overlay_path)
        tiles = regional.tile_section(
            image.height, image.width, cfg.regional.tile_side, cfg.regional.map_stride
        )
        high_idx, low_idx = explain_mod.margin_region_cells(
            db,
            grid,
            model,
            sid,
            tiles,
            margin_high=cfg.explain.margin_high,
            margin_low=cfg.explain.margin_low,
            min_cells=cfg.regional.min_cells,
        )
        comparison = explain_mod.cdf_comparison(db, grid, feature, high_idx, low_idx)
        cdf_path = os.path.join(explain_dir, f"{name}_{sid}_{feature}_cdf.csv")
        explain_mod.save_cdf_csv(comparison, feature, cdf_path)
        t = comparison["thresholds"]
        span = float(t[-1] - t[0]) or 1.0
        xs = (t - t[0]) / span
        cdf_png = os.path.join(explain_dir, f"{name}_{sid}_{feature}_cdf.png")
        render.curve_png(
            [(xs, comparison["cdf_high"]), (xs, comparison["cdf_low"])],
            cdf_png,
            diagonal=False,
        )
        outputs += [importance_path, overlay_path, cdf_path, cdf_png]
        top = report.top(3)
        top_desc = ", ".join(f"{e.name} (gain {e.gain:.3g})" for e in top)
        print(
            f"explain: {name}: tinted {len(tinted)} cells with {feature} in [{lo}, {hi}] "
            f"on {sid}; top features: {top_desc}"
        )
    write_manifest(
        manifest_path(cfg, "explain"),
        "explain",
        {
            "config": config_to_dict(cfg),
            "structures": names,
            "feature": feature,
            "lo": lo,
            "hi": hi,
            "section": sid,
        },
        [celldb_path(cfg), grid_path(cfg)],
        outputs,
    )


# ---------------------------------------------------------------- arg parsing


def _apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply `a.b.c=value` assignments onto the raw config dict."""
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"override {item!r} is not of the form key.path=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        for key in keys[:-1]:
            node = node.setdefault(key, {})
            if not isinstance(node, dict):
                raise ValidationError(f"cannot override {dotted!r}: {key!r} is not a mapping")
        node[keys[-1]] = value
    return data


def _load_cfg(args) -> PipelineConfig:
    if args.config:
        if not os.path.exists(args.config):
            raise ValidationError(f"config file not found: {args.config}")
        with open(args.config, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
    else:
        data = {}
    data = _apply_overrides(data, args.set or [])
    cfg = config_from_dict(data)
    if getattr(args, "out", None):
        cfg.paths.out_dir = args.out
    if getattr(args, "reference", None):
        cfg.reference_model = args.reference
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cytoarch",
        description="Cell-shape cytoarchitecture pipeline: segment, embed, detect, explain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="YAML pipeline config (defaults apply when omitted)")
        p.add_argument("--out", help="output directory (overrides paths.out_dir)")
        p.add_argument(
            "--set",
            action="append",
            metavar="KEY.PATH=VALUE",
            help="override a config entry, e.g. --set kmeans.k=256",
        )
        return p

    common(sub.add_parser("synth", help="generate synthetic sections + ground truth"))
    common(sub.add_parser("segment", help="threshold + connected components per section"))
    common(sub.add_parser("kmeans", help="representative patches via streaming k-means"))
    common(sub.add_parser("dmfit", help="fit the diffusion-map embedding"))
    p = common(sub.add_parser("align", help="fit affine map onto a reference model"))
    p.add_argument("--reference", help="path to the reference dm_model.bin")
    common(sub.add_parser("embed", help="build the 20-feature cell database"))
    common(sub.add_parser("regionize", help="threshold grid + labeled training tiles"))
    p = common(sub.add_parser("train", help="train per-structure boosted detectors"))
    p.add_argument("--structure", help="train a single structure (default: all)")
    p = common(sub.add_parser("eval", help="ROC AUC report on held-out sections"))
    p.add_argument("--structure", help="evaluate a single structure (default: all)")
    p = common(sub.add_parser("probmap", help="render per-tile probability maps"))
    p.add_argument("--structure", help="single structure (default: all)")
    p.add_argument("--section", help="section id (default: eval sections)")
    p = common(sub.add_parser("explain", help="feature importance, cell overlay, CDF comparison"))
    p.add_argument("--structure", help="single structure (default: all)")
    p.add_argument("--feature", default="rotation_angle", help="cell feature family to inspect")
    p.add_argument("--lo", type=float, default=-65.0, help="low end of the highlighted range")
    p.add_argument("--hi", type=float, default=11.3, help="high end of the highlighted range")
    p.add_argument("--section", help="section id for the overlay (default: first eval section)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_cfg(args)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "segment":
            cmd_segment(cfg)
        elif args.command == "kmeans":
            cmd_kmeans(cfg)
        elif args.command == "dmfit":
            cmd_dmfit(cfg)
        elif args.command == "align":
            cmd_align(cfg)
        elif args.command == "embed":
            cmd_embed(cfg)
        elif args.command == "regionize":
            cmd_regionize(cfg)
        elif args.command == "train":
            cmd_train(cfg, structure=args.structure)
        elif args.command == "eval":
            cmd_eval(cfg, structure=args.structure)
        elif args.command == "probmap":
            cmd_probmap(cfg, structure=args.structure, section=args.section)
        elif args.command == "explain":
            cmd_explain(
                cfg,
                structure=args.structure,
                feature=args.feature,
                lo=args.lo,
                hi=args.hi,
                section=args.section,
            )
        else:  # pragma: no cover - argparse enforces the choices
            parser.error(f"unknown command {args.command}")
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_ERROR
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return MISSING_ARTIFACT
    return 0


if __name__ == "__main__":
    sys.exit(main())
