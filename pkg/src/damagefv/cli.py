"""Command line entry point: ``damagefv synth|ingest|train|infer|cv|evaluate``."""
import functools
import json
import logging
import os
import sys

import click
import numpy as np

from . import evaluation as ev
from . import pipeline as P
from .formats import FormatError
from .imaging import CLASS_NAMES, N_CLASSES, save_image, save_labelmap
from .segments import segments_from_truth, write_segment_dump
from .synth import PlacementError, SceneSpec, corpus_digest, generate_corpus

log = logging.getLogger("damagefv")


def _kernel_weights(ctx, param, value):
    if value is None:
        return None
    try:
        parts = tuple(float(v) for v in value.split(","))
    except ValueError:
        raise click.BadParameter("expected two comma-separated numbers, e.g. 1,1") from None
    if len(parts) != 2:
        raise click.BadParameter("expected exactly two weights w1,w2")
    return parts


def config_options(weighting_choices=("on", "off")):
    """Flags shared by the model-building commands; they override the config file."""
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="key=value config file"),
        click.option("--manifest", help="corpus manifest.json"),
        click.option("--model-dir", help="directory holding the trained models"),
        click.option("--gmm-k", type=int, help="GMM components"),
        click.option("--svm-c", type=float, help="SVM regularisation C"),
        click.option("--crf-iters", type=int, help="mean-field sweeps"),
        click.option("--crf-tol", type=float, help="mean-field stopping tolerance"),
        click.option("--theta-pos", type=float, help="CRF spatial bandwidth (pixels)"),
        click.option("--theta-int", type=float, help="CRF intensity bandwidth"),
        click.option("--kernel-weights", callback=_kernel_weights, help="CRF kernel weights w1,w2"),
        click.option("--class-weighting", type=click.Choice(weighting_choices), help="class-weighted pixel loss"),
        click.option("--folds", type=int, help="cross-validation folds"),
        click.option("--seed", type=int, help="master seed"),
        click.option("--min-area", type=int, help="smallest kept segment (pixels)"),
    ]

    def wrap(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn

    return wrap


def build_config(kw):
    path = kw.pop("config_path", None)
    return P.load_config(path, kw)


def handle_errors(fn):
    """Map failures onto exit codes: 2 config, 3 data, 4 numeric."""

    @functools.wraps(fn)
    def inner(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except P.PipelineError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)
        except (FormatError, PlacementError) as exc:
            click.echo(f"error: [data] {exc}", err=True)
            sys.exit(3)
        except FloatingPointError as exc:
            click.echo(f"error: [numeric] {exc}", err=True)
            sys.exit(4)

    return inner


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="log progress")
def main(verbose):
    """Building damage classification with dense CRF segments and Fisher vectors."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--scenes", default=50, show_default=True, type=click.IntRange(1))
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--empty-frac", default=0.0, show_default=True, type=click.FloatRange(0, 1))
@click.option("--noise-free", is_flag=True, help="exact annotator polygons and labels")
@click.option("--width", default=48, show_default=True, type=click.IntRange(16))
@click.option("--height", default=48, show_default=True, type=click.IntRange(16))
@handle_errors
def synth(out_dir, scenes, seed, empty_frac, noise_free, width, height):
    """Write a synthetic corpus with a manifest."""
    spec = SceneSpec(width=width, height=height)
    if noise_free:
        spec = spec.noise_free()
    path = generate_corpus(scenes, spec, seed, out_dir, empty_frac)
    click.echo(f"{path} sha256={corpus_digest(out_dir)}")


@main.command()
@click.option("--manifest", required=True, type=click.Path(dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@handle_errors
def ingest(manifest, out_dir):
    """Merge annotator masks by majority vote and dump ground-truth segments."""
    items = P.load_corpus(manifest, drop_empty=False)
    os.makedirs(os.path.join(out_dir, "merged"), exist_ok=True)
    rows = []
    for it in items:
        save_labelmap(os.path.join(out_dir, "merged", f"{it.image_id}.pgm"), it.labels)
        rows += [(it.image_id, s) for s in segments_from_truth(it.labels)]
    write_segment_dump(os.path.join(out_dir, "segments.jsonl"), rows)
    n_empty = sum(1 for it in items if not np.any(it.labels))
    freqs = np.bincount(np.concatenate([it.labels.ravel() for it in items]), minlength=N_CLASSES)
    click.echo(f"{len(items)} scenes, {n_empty} without damage, {len(rows)} segments")
    for c in range(N_CLASSES):
        click.echo(f"  {CLASS_NAMES[c]:<10} {freqs[c]:>8} px")


@main.command()
@config_options()
@handle_errors
def train(**kw):
    """Fit the pixel model, GMM vocabulary and segment SVM."""
    cfg = build_config(kw)
    paths = P.run_training(cfg)
    click.echo(f"config {P.config_hash(cfg)}")
    for name, path in paths.items():
        click.echo(f"  {name}: {path}")


@main.command()
@click.argument("image", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--probabilities", type=click.Path(exists=True, dir_okay=False),
              help="NZRP probability field replacing the pixel model")
@config_options()
@handle_errors
def infer(image, out_dir, probabilities, **kw):
    """Label the damage segments of one image."""
    cfg = build_config(kw)
    image_id = os.path.splitext(os.path.basename(image))[0]
    try:
        res = P.run_inference(cfg, image, probabilities=probabilities, image_id=image_id)
    except (OSError, ValueError) as exc:
        if isinstance(exc, P.PipelineError):
            raise
        raise P.DataError("infer", str(exc)) from exc
    os.makedirs(out_dir, exist_ok=True)
    save_labelmap(os.path.join(out_dir, f"{image_id}_labels.pgm"), res.labels)
    save_image(os.path.join(out_dir, f"{image_id}_overlay.ppm"), res.overlay)
    write_segment_dump(os.path.join(out_dir, f"{image_id}_segments.jsonl"),
                       [(image_id, s) for s in res.segments])
    for s in res.segments:
        flag = " (unencodable)" if s.unencodable else ""
        click.echo(f"segment {s.id}: {CLASS_NAMES[s.predicted_class]} area={s.area}{flag}")


@main.command()
@click.option("--out", "out_path", type=click.Path(dir_okay=False), help="write the report here")
@click.option("--format", "fmt", type=click.Choice(["json", "table"]), default="json", show_default=True)
@config_options(("on", "off", "both"))
@handle_errors
def cv(out_path, fmt, **kw):
    """k-fold comparison of segmentation, FV and the combined pipeline."""
    cfg = build_config(kw)
    report = P.run_cv(cfg)
    text = P.report_json(report) if fmt == "json" else P.report_table(report)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


@main.command()
@click.option("--format", "fmt", type=click.Choice(["json", "table"]), default="table", show_default=True)
@click.option("--dump", type=click.Path(dir_okay=False), help="segment dump (JSON lines)")
@config_options()
@handle_errors
def evaluate(fmt, dump, **kw):
    """Score trained models against the merged annotations of a corpus."""
    cfg = build_config(kw)
    models = P.load_models(cfg)
    items = P.load_corpus(cfg.manifest)
    results = [P.infer_item(cfg, models, it) for it in items]
    gts = [it.labels for it in items]
    seg = P.evaluate_maps(gts, [r.pixel_labels for r in results])
    comb = P.evaluate_maps(gts, [r.labels for r in results])
    if dump:
        write_segment_dump(dump, [(it.image_id, s) for it, r in zip(items, results) for s in r.segments])
    if fmt == "json":
        def block(m):
            return {
                "mean_accuracy": m["mean_accuracy"],
                "global_accuracy": m["global_accuracy"],
                "confusion": m["confusion"].to_json(),
                "precision_recall": {CLASS_NAMES[c]: {"precision": p, "recall": r}
                                     for c, (p, r) in zip(m["confusion"].classes, m["precision_recall"])},
            }
        out = {"n_scenes": len(items), "segmentation": block(seg), "combined": block(comb)}
        click.echo(json.dumps(out, indent=1, sort_keys=True))
        return
    click.echo(f"{len(items)} scenes")
    for name, m in (("segmentation", seg), ("combined", comb)):
        acc = m["mean_accuracy"]
        click.echo(f"\n{name}: mean pixel accuracy "
                   f"{ev.UNDEFINED_TEXT if acc is None else f'{acc:.2f}'}")
        click.echo(ev.render_precision_recall(m["confusion"], m["precision_recall"]))
        click.echo(ev.render_confusion(m["confusion"]))


if __name__ == "__main__":
    main()
