"""Umbrella command line: stain, helm, metrics, survival, cohort, pyramid
and the annotation service, one subcommand group each."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import cohort as cohort_mod
from . import helm as helm_mod
from . import instmetrics as im
from . import mapio
from . import pyramid as pyramid_mod
from . import service as service_mod
from . import stainlab
from . import survival as survival_mod
from .raster import draw_contours, load_rgb, save_image


def _interval(text: str) -> tuple[float, float]:
    lo, hi = (float(part) for part in text.split(","))
    return (lo, hi)


@click.group()
def main():
    """Whole-slide TIL quantification toolkit."""


# -- stain -------------------------------------------------------------------


@main.group()
def stain():
    """Stain deconvolution and augmentation."""


@stain.command("deconvolve")
@click.argument("src", type=click.Path(exists=True))
@click.option("--out-h", type=click.Path(), help="Hematoxylin channel PNG.")
@click.option("--out-e", type=click.Path(), help="Eosin channel PNG.")
@click.option("--out-d", type=click.Path(), help="DAB channel PNG.")
def stain_deconvolve(src, out_h, out_e, out_d):
    """Split an H&E image into rescaled stain-channel images."""
    img = load_rgb(src)
    hed = stainlab.rgb_to_hed(img)
    for channel, path in ((0, out_h), (1, out_e), (2, out_d)):
        if path:
            scaled = helm_mod.rescale_channel(hed[..., channel]).astype(np.uint8)
            save_image(scaled, path)
            click.echo(f"wrote {path}")


@stain.command("augment")
@click.argument("src", type=click.Path(exists=True))
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--alpha", default="0.95,1.05", show_default=True, help="lo,hi")
@click.option("--beta", default="-0.05,0.05", show_default=True, help="lo,hi")
@click.option("-o", "--out", "dst", type=click.Path(), required=True)
def stain_augment(src, seed, alpha, beta, dst):
    """Apply the linear stain augmentation with a fixed seed."""
    params = stainlab.AugmentParams(
        alpha_range=_interval(alpha), beta_range=_interval(beta), seed=seed
    )
    save_image(stainlab.hed_linear_augment(load_rgb(src), params), dst)
    click.echo(f"wrote {dst}")


# -- helm --------------------------------------------------------------------


@main.group()
def helm():
    """Rule-based nucleus detection."""


@helm.command("detect")
@click.argument("patch", type=click.Path(exists=True))
@click.option("--params", "params_path", type=click.Path(exists=True))
@click.option("-o", "--out", "dst", type=click.Path(), required=True)
def helm_detect_cmd(patch, params_path, dst):
    """Detect nuclei in a patch, writing detections.json."""
    params = helm_mod.HelmParams.from_json(params_path) if params_path else None
    detections = helm_mod.helm_detect(load_rgb(patch), params)
    Path(dst).write_text(json.dumps(helm_mod.detections_to_json(detections), indent=1))
    click.echo(f"{len(detections)} detections -> {dst}")


@helm.command("overlay")
@click.argument("patch", type=click.Path(exists=True))
@click.argument("detections", type=click.Path(exists=True))
@click.option("-o", "--out", "dst", type=click.Path(), required=True)
def helm_overlay(patch, detections, dst):
    """Render detection contours onto the patch."""
    img = load_rgb(patch).copy()
    dets = helm_mod.detections_from_json(json.loads(Path(detections).read_text()))
    by_class: dict[str, list] = {}
    for det in dets:
        by_class.setdefault(det.class_label, []).append(det.contour)
    for cls, contours in sorted(by_class.items()):
        draw_contours(img, contours, color=service_mod.class_color(cls), thickness=2)
    save_image(img, dst)
    click.echo(f"wrote {dst}")


# -- metrics -----------------------------------------------------------------


def _load_side(path: Path, counterpart_shape, size_opt):
    if path.suffix == ".png":
        return mapio.load_instance_map(path)
    detections = helm_mod.detections_from_json(json.loads(path.read_text()))
    if counterpart_shape is not None:
        height, width = counterpart_shape
    elif size_opt:
        width, height = size_opt
    else:
        raise click.ClickException(
            f"{path.name}: rasterizing detections needs --size when both sides are detections.json"
        )
    return mapio.detections_to_instance_map(detections, width, height)


def _collect(directory: Path) -> dict[str, Path]:
    out: dict[str, Path] = {}
    for path in sorted(directory.iterdir()):
        if path.suffix == ".png":
            out[path.stem] = path
        elif path.suffix == ".json" and not (path.parent / f"{path.stem}.png").exists():
            out[path.stem] = path
    return out


@main.group()
def metrics():
    """Segmentation and classification evaluation."""


@metrics.command("eval")
@click.option("--gt", "gt_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--pred", "pred_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--classes", "classes_path", type=click.Path(exists=True),
              help="JSON class remap applied to both sides, e.g. merging epithelial classes.")
@click.option("--iou", type=float, default=0.5, show_default=True)
@click.option("--size", type=(int, int), default=None, help="width height for detections-only pairs")
@click.option("-o", "--out", "dst", type=click.Path(), required=True)
def metrics_eval(gt_dir, pred_dir, classes_path, iou, size, dst):
    """Aggregate the full metric report over paired gt/pred files.

    Instance maps are 16-bit label PNGs with a JSON id->class sidecar, or
    detections.json files (rasterized internally).
    """
    gt_files = _collect(Path(gt_dir))
    pred_files = _collect(Path(pred_dir))
    stems = sorted(set(gt_files) & set(pred_files))
    if not stems:
        raise click.ClickException("no common file stems between --gt and --pred")
    remap = json.loads(Path(classes_path).read_text()) if classes_path else None
    acc = im.MetricsAccumulator(iou_threshold=iou)
    for stem in stems:
        gt_map = _load_side(gt_files[stem], None, size)
        pred_map = _load_side(pred_files[stem], gt_map.labels.shape, size)
        if remap:
            full = {c: remap.get(c, c) for c in set(gt_map.classes.values()) | set(pred_map.classes.values())}
            gt_map = im.class_remap(gt_map, full)
            pred_map = im.class_remap(pred_map, full)
        acc.update(gt_map, pred_map)
    report = acc.finalize().to_json()
    report["n_images"] = len(stems)
    Path(dst).write_text(json.dumps(report, indent=1))
    click.echo(f"evaluated {len(stems)} image pairs -> {dst}")


# -- survival ----------------------------------------------------------------


@main.group()
def survival():
    """Cohort survival statistics."""


def _load_scores(cohort_path, column):
    records, scores = cohort_mod.load_cohort(cohort_path)
    if column not in scores:
        raise click.ClickException(
            f"column {column!r} not in {sorted(scores)}"
        )
    return records, scores[column]


@survival.command("analyze")
@click.option("--cohort", "cohort_path", type=click.Path(exists=True), required=True)
@click.option("--score-col", required=True)
@click.option("--cutoff", default="median", show_default=True,
              help='"median" or a numeric cutoff')
@click.option("-o", "--out", "dst", type=click.Path(), required=True)
def survival_analyze(cohort_path, score_col, cutoff, dst):
    """Dichotomize and compare survival (KM, log-rank, hazard ratio)."""
    records, scores = _load_scores(cohort_path, score_col)
    if cutoff == "median":
        groups, cut = survival_mod.median_dichotomize(scores)
    else:
        cut = float(cutoff)
        groups = survival_mod.dichotomize(scores, cut)
    by_group = {
        name: [r for r in records if groups[r.patient_id] == name]
        for name in ("low", "high")
    }
    result = {"score_col": score_col, "cutoff": cut, "groups": {}}
    for name, members in by_group.items():
        curve = survival_mod.km_curve(members)
        median = survival_mod.median_survival(curve)
        result["groups"][name] = {
            "n": len(members),
            "events": sum(1 for r in members if r.event),
            "five_year_survival": round(survival_mod.survival_at(curve, 60.0), 4),
            "median_months": median if median is None else round(median, 4),
        }
    lr = survival_mod.logrank(by_group["low"], by_group["high"])
    result["logrank"] = {
        "chi_square": round(lr.chi_square, 4),
        "p_value": lr.p_value,
        "p": survival_mod.format_p(lr.p_value),
    }
    try:
        hr = survival_mod.hazard_ratio(records, groups)
        result["hazard_ratio"] = {
            "hr": round(hr.hr, 4),
            "ci_low": round(hr.ci_low, 4),
            "ci_high": round(hr.ci_high, 4),
            "reference": hr.reference,
        }
    except survival_mod.SeparationError as exc:
        result["hazard_ratio"] = {"hr": None, "diagnostic": str(exc)}
    Path(dst).write_text(json.dumps(result, indent=1))
    click.echo(f"wrote {dst}")


@survival.command("sweep")
@click.option("--cohort", "cohort_path", type=click.Path(exists=True), required=True)
@click.option("--score-col", required=True)
@click.option("--min-group-fraction", type=float, default=0.10, show_default=True)
@click.option("-o", "--out", "dst", type=click.Path(), required=True)
def survival_sweep(cohort_path, score_col, min_group_fraction, dst):
    """Log-rank p-values over every possible dichotomization cut-off."""
    records, scores = _load_scores(cohort_path, score_col)
    scored = [
        survival_mod.SurvivalRecord(
            patient_id=r.patient_id, time=r.time, event=r.event,
            score=scores[r.patient_id],
        )
        for r in records
    ]
    points = survival_mod.cutoff_sweep(scored, min_group_fraction=min_group_fraction)
    payload = [{"cutoff": p.cutoff, "p_value": p.p_value} for p in points]
    Path(dst).write_text(json.dumps(payload, indent=1))
    click.echo(f"{len(points)} cut-offs -> {dst}")


@survival.command("correlate")
@click.option("--cohort", "cohort_path", type=click.Path(exists=True), required=True)
@click.option("--x", "x_col", required=True)
@click.option("--y", "y_col", required=True)
def survival_correlate(cohort_path, x_col, y_col):
    """Pearson correlation between two score columns."""
    records, scores = cohort_mod.load_cohort(cohort_path)
    for col in (x_col, y_col):
        if col not in scores:
            raise click.ClickException(f"column {col!r} not in {sorted(scores)}")
    ids = sorted(scores[x_col])
    r = survival_mod.pearson_r(
        [scores[x_col][i] for i in ids], [scores[y_col][i] for i in ids]
    )
    click.echo(json.dumps({"x": x_col, "y": y_col, "n": len(ids), "r": round(r, 4)}))


# -- cohort ------------------------------------------------------------------


@main.group()
def cohort():
    """Patch extraction and per-patient quantification."""


@cohort.command("extract")
@click.option("--slide", "slide_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--side", type=int, default=cohort_mod.DEFAULT_PATCH_SIDE, show_default=True)
@click.option("--max-patches", type=int, default=cohort_mod.DEFAULT_MAX_PATCHES, show_default=True)
def cohort_extract(slide_path, out_dir, side, max_patches):
    """Extract grid patches over tissue from a slide."""
    slide = cohort_mod.open_slide(slide_path)
    specs = cohort_mod.extract_patches(slide, side=side, max_patches=max_patches)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, spec in enumerate(specs):
        x, y = spec.origin
        patch = slide.read_region(x, y, spec.side, spec.side)
        save_image(patch, out / f"{spec.slide_id}__{i:03d}_x{x}_y{y}.png")
    click.echo(f"{len(specs)} patches -> {out_dir}")


@cohort.command("quantify")
@click.option("--patches", "patches_dir", type=click.Path(exists=True, file_okay=False), required=True)
@click.option("--detector", default="helm", show_default=True)
@click.option("--out", "dst", type=click.Path(), required=True)
def cohort_quantify(patches_dir, detector, dst):
    """Run the detector on every patch, writing per-patch counts."""
    if detector != "helm":
        raise click.ClickException(f"unknown detector {detector!r}; only 'helm' is built in")
    rows = []
    for path in sorted(Path(patches_dir).glob("*.png")):
        patient_id = path.stem.split("__")[0]
        detections = helm_mod.helm_detect(load_rgb(path))
        count = sum(1 for d in detections if d.class_label == "inflammatory")
        rows.append((patient_id, path.stem, count))
    with open(dst, "w") as fh:
        fh.write("patient_id,patch_id,inflammatory_count\n")
        for patient_id, patch_id, count in rows:
            fh.write(f"{patient_id},{patch_id},{count}\n")
    click.echo(f"{len(rows)} patches -> {dst}")


# -- pyramid / serve ---------------------------------------------------------


@main.group()
def pyramid():
    """DeepZoom pyramid construction."""


@pyramid.command("build")
@click.argument("src", type=click.Path(exists=True))
@click.option("-o", "--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--tile-size", type=int, default=254, show_default=True)
@click.option("--overlap", type=int, default=1, show_default=True)
@click.option("--format", "fmt", type=click.Choice(["jpeg", "png"]), default="jpeg", show_default=True)
@click.option("--workers", type=int, default=None)
def pyramid_build(src, out_dir, tile_size, overlap, fmt, workers):
    """Tile a slide into a DeepZoom pyramid."""
    desc = pyramid_mod.build_pyramid(
        src, out_dir, tile_size=tile_size, overlap=overlap, fmt=fmt, workers=workers
    )
    click.echo(
        f"{desc.width}x{desc.height}, levels 0..{desc.max_level} -> {out_dir}"
    )


@main.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
@click.option("--host", default="0.0.0.0", show_default=True)
def serve_cmd(config_path, host):
    """Run the annotation service."""
    config = service_mod.load_config(config_path)
    click.echo(f"serving on {host}:{config.port} (pyramids: {config.pyramid_root})")
    service_mod.serve(config, host=host)


if __name__ == "__main__":
    main()
