"""Operator command line: ingest, augment, train, eval, ablate, classify, serve."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from .augment import AugmentationPolicy, materialize, plan
from .dataset import (
    DEFAULT_CONSOLIDATION,
    assign_folds,
    class_stats,
    load_consolidation,
    load_manifest,
    save_manifest,
    scan_corpus,
    split,
)
from .evaluate import cross_validate, evaluate_probs, run_ablation
from .model import Model, build_model, load_weights, save_weights, ModelSpec
from .service import (
    ServiceConfig,
    classify_image_bytes,
    run_service,
    weight_file_version,
)
from .trainer import HeadWeights, TrainConfig, extract_features, train_head
from . import reports


def load_config_file(path) -> dict[str, str]:
    """Simple key=value config; '#' starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise click.ClickException(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def common_options(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True, help="Master random seed.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="key=value config file; values fill unset options.")(fn)
    fn = click.option("--json", "as_json", is_flag=True, help="Emit machine-readable JSON on stdout.")(fn)
    return fn


def config_value(config_path, key, fallback):
    if config_path:
        values = load_config_file(config_path)
        if key in values:
            return values[key]
    return fallback


@click.group()
def main():
    """Food recognition dataset, training, and serving toolkit."""


@main.command()
@click.argument("corpus_root", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Manifest output path (JSONL).")
@click.option("--consolidation", "consolidation_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Consolidation map file; defaults to the built-in merges.")
@click.option("--no-consolidate", is_flag=True, help="Keep raw labels as final labels.")
@click.option("--train-fraction", type=float, default=0.9, show_default=True)
@click.option("--folds", type=int, default=10, show_default=True, help="Cross-validation folds assigned to training originals.")
@common_options
def scan(corpus_root, output, consolidation_path, no_consolidate, train_fraction, folds, seed, config_path, as_json):
    """Scan a corpus tree into a manifest with splits and folds."""
    if no_consolidate:
        cmap = {}
    elif consolidation_path:
        cmap = load_consolidation(consolidation_path)
    else:
        cmap = DEFAULT_CONSOLIDATION
    records, taxonomy, report = scan_corpus(corpus_root, cmap)
    records, split_warnings = split(records, train_fraction, seed)
    records, fold_warnings = assign_folds(records, k=folds, seed=seed)
    save_manifest(records, output)
    summary = {
        "records": len(records),
        "raw_classes": len(taxonomy.raw_labels),
        "final_classes": len(taxonomy.final_labels),
        "skipped": len(report.skipped),
        "warnings": report.warnings + split_warnings + fold_warnings,
        "manifest": str(output),
    }
    if as_json:
        click.echo(json.dumps(summary, sort_keys=True))
    else:
        click.echo(report.to_text(), nl=False)
        for w in split_warnings + fold_warnings:
            click.echo(f"warning: {w}")
        click.echo(f"wrote {len(records)} records to {output}")


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-root", required=True, type=click.Path(file_okay=False), help="Directory for augmented images and reports.")
@click.option("--threshold", type=int, default=100, show_default=True, help="Classes below this training count get augmented.")
@click.option("--target", type=int, default=None, help="Per-class target count; defaults to the threshold.")
@click.option("--out-manifest", type=click.Path(dir_okay=False), default=None, help="Updated manifest path; defaults to <output-root>/manifest.jsonl.")
@common_options
def augment(manifest_path, output_root, threshold, target, out_manifest, seed, config_path, as_json):
    """Top up underrepresented classes with the sequential augmentation chain."""
    records = load_manifest(manifest_path)
    policy = AugmentationPolicy(class_threshold=threshold, target_count=target, seed=seed)
    items, warnings = plan(records, policy)
    records, report = materialize(records, items, output_root)
    out_manifest = out_manifest or str(Path(output_root) / "manifest.jsonl")
    save_manifest(records, out_manifest)
    report_txt = Path(output_root) / "augmentation_report.txt"
    report_txt.write_text(report.to_text())
    figure = Path(output_root) / "class_distribution.png"
    reports.save_class_distribution_figure(report.after, figure, threshold=threshold)
    if as_json:
        click.echo(
            json.dumps(
                {
                    "added": len(items),
                    "manifest": out_manifest,
                    "report": str(report_txt),
                    "figure": str(figure),
                    "warnings": warnings,
                },
                sort_keys=True,
            )
        )
    else:
        click.echo(report.to_text(), nl=False)
        for w in warnings:
            click.echo(f"warning: {w}")
        click.echo(f"added {len(items)} augmented samples; manifest: {out_manifest}")


def _head_from_model(model: Model) -> HeadWeights:
    return HeadWeights(model.params["classifier.weight"], model.params["classifier.bias"])


def _labels_for(model: Model, records):
    if model.labels:
        return tuple(model.labels)
    return tuple(sorted({r.label for r in records}))


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Backbone weight file (head is retrained).")
@click.option("-o", "--output-dir", required=True, type=click.Path(file_okay=False))
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--learning-rate", type=float, default=1e-3, show_default=True)
@click.option("--cv-folds", type=int, default=0, help="If > 0, also run k-fold cross-validation on the training originals.")
@common_options
def train(manifest_path, weights_path, output_dir, epochs, batch_size, learning_rate, cv_folds, seed, config_path, as_json):
    """Train the classifier head on frozen-backbone features."""
    records = load_manifest(manifest_path)
    model = load_weights(weights_path)
    labels = _labels_for(model, records)
    if len(labels) != model.spec.num_classes:
        from .model import replace_head

        model = replace_head(model, len(labels), seed=seed, labels=labels)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_records = [r for r in records if r.split == "train"]
    if not train_records:
        raise click.ClickException("manifest has no training records")
    cache, skipped = extract_features(
        model, train_records, labels, cache_path=out / "train_features.plf"
    )
    config = TrainConfig(
        batch_size=batch_size, head_lr=learning_rate, epochs=epochs, seed=seed
    )
    head, curve = train_head(cache, config)
    params = dict(model.params)
    params["classifier.weight"] = head.weight
    params["classifier.bias"] = head.bias
    trained = Model(model.spec, params, labels=labels)
    model_out = out / "model.plf"
    save_weights(trained, model_out)
    reports.save_loss_curve_figure(curve, out / "loss_curve.png")
    (out / "loss_curve.csv").write_text(
        "epoch,mean_cross_entropy\n"
        + "".join(f"{i + 1},{v:.8f}\n" for i, v in enumerate(curve))
    )
    result = {
        "model": str(model_out),
        "epochs_run": len(curve),
        "final_loss": curve[-1],
        "skipped_images": len(skipped),
    }
    if cv_folds > 1:
        folds = np.array(
            [r.fold if r.fold is not None else -1 for r in train_records
             if r.path in set(cache.paths)]
        )
        mask = folds >= 0
        from .evaluate import cross_validate as run_cv
        from .trainer import FeatureCache

        cv_cache = FeatureCache(
            features=cache.features[mask],
            labels=cache.labels[mask],
            paths=[p for p, m in zip(cache.paths, mask) if m],
            label_names=cache.label_names,
        )
        cv = run_cv(cv_cache, folds[mask], config, k=cv_folds)
        result["cv_mean_top1"] = cv.mean_top_k[1]
        result["cv_std_top1"] = cv.std_top_k[1]
    if as_json:
        click.echo(json.dumps(result, sort_keys=True))
    else:
        click.echo(f"trained head in {len(curve)} epochs, final loss {curve[-1]:.4f}")
        if "cv_mean_top1" in result:
            click.echo(
                f"{cv_folds}-fold CV top-1: {result['cv_mean_top1']:.1%} "
                f"(std {result['cv_std_top1']:.1%})"
            )
        click.echo(f"model written to {model_out}")


@main.command(name="eval")
@click.argument("manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output-dir", required=True, type=click.Path(file_okay=False))
@click.option("--split", "which_split", type=click.Choice(["test", "train"]), default="test", show_default=True)
@common_options
def eval_cmd(manifest_path, weights_path, output_dir, which_split, seed, config_path, as_json):
    """Evaluate a trained model on a manifest split."""
    records = [r for r in load_manifest(manifest_path) if r.split == which_split]
    if not records:
        raise click.ClickException(f"manifest has no '{which_split}' records")
    model = load_weights(weights_path)
    labels = _labels_for(model, records)
    cache, skipped = extract_features(model, records, labels)
    head = _head_from_model(model)
    metrics = evaluate_probs(
        head.probabilities(cache.features),
        cache.labels,
        labels,
        k_list=(1, 5),
        paths=cache.paths,
    )
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports.save_metrics_json(metrics, out / "metrics.json")
    (out / "metrics.txt").write_text(reports.metrics_table_text(metrics))
    reports.save_mispredictions_csv(metrics, out / "mispredictions.csv")
    reports.save_confusion_figure(metrics, out / "confusion.png")
    if as_json:
        click.echo(json.dumps(metrics.to_json(), sort_keys=True))
    else:
        click.echo(reports.metrics_table_text(metrics), nl=False)
        click.echo(f"reports written to {out} ({len(skipped)} unreadable images skipped)")


@main.command()
@click.argument("corpus_root", type=click.Path(exists=True, file_okay=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False), help="Backbone weight file.")
@click.option("-o", "--output-dir", required=True, type=click.Path(file_okay=False))
@click.option("--threshold", type=int, default=100, show_default=True)
@click.option("--epochs", type=int, default=30, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option("--train-fraction", type=float, default=0.9, show_default=True)
@common_options
def ablate(corpus_root, weights_path, output_dir, threshold, epochs, batch_size, train_fraction, seed, config_path, as_json):
    """Run the consolidation/augmentation ablation grid end to end."""
    model = load_weights(weights_path)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = run_ablation(
        corpus_root,
        model,
        TrainConfig(batch_size=batch_size, epochs=epochs, seed=seed),
        AugmentationPolicy(class_threshold=threshold, seed=seed),
        out / "work",
        train_fraction=train_fraction,
        seed=seed,
    )
    (out / "ablation.txt").write_text(report.to_text())
    reports.save_ablation_figure(report, out / "ablation.png")
    rows = [
        {
            "consolidation": r.consolidation,
            "augmentation": r.augmentation,
            "num_classes": r.num_classes,
            "top1": r.top1,
            "published_top1": r.reference_top1,
        }
        for r in report.rows
    ]
    (out / "ablation.json").write_text(json.dumps(rows, sort_keys=True, indent=2) + "\n")
    if as_json:
        click.echo(json.dumps(rows, sort_keys=True))
    else:
        click.echo(report.to_text(), nl=False)


@main.command()
@click.argument("image_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--k", type=int, default=5, show_default=True)
@common_options
def classify(image_path, weights_path, k, seed, config_path, as_json):
    """Classify one image file; prints 'label probability' per line."""
    model = load_weights(weights_path)
    try:
        payload = classify_image_bytes(
            model, Path(image_path).read_bytes(), k, weight_file_version(weights_path)
        )
    except ValueError as exc:
        raise click.ClickException(str(exc))
    if as_json:
        click.echo(json.dumps(payload, sort_keys=True))
    else:
        for p in payload["predictions"]:
            click.echo(f"{p['label']} {p['probability']:.6f}")


@main.command()
@click.option("--weights", "weights_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8008, show_default=True)
@click.option("--max-upload-bytes", type=int, default=8 * 1024 * 1024, show_default=True)
@click.option("--default-k", type=int, default=5, show_default=True)
@common_options
def serve(weights_path, host, port, max_upload_bytes, default_k, seed, config_path, as_json):
    """Run the classification HTTP service."""
    host = config_value(config_path, "host", host)
    port = int(config_value(config_path, "port", port))
    config = ServiceConfig(
        host=host,
        port=port,
        weights_path=weights_path,
        default_k=default_k,
        max_upload_bytes=max_upload_bytes,
    )
    run_service(config)


@main.command(name="make-demo-weights", hidden=True)
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--labels", "labels_csv", default=None, help="Comma-separated class labels.")
@click.option("--spec", "spec_kind", type=click.Choice(["full", "tiny"]), default="full", show_default=True)
@common_options
def make_demo_weights(output, labels_csv, spec_kind, seed, config_path, as_json):
    """Write a randomly initialized weight file (for demos and tests)."""
    labels = labels_csv.split(",") if labels_csv else None
    if spec_kind == "tiny":
        spec = ModelSpec(
            rows=((1, 8, 1, 1), (6, 16, 2, 1)),
            stem_channels=8,
            head_width=32,
            input_size=32,
            num_classes=len(labels) if labels else 23,
        )
    else:
        spec = ModelSpec(num_classes=len(labels) if labels else 23)
    model = build_model(spec, seed=seed, labels=labels)
    save_weights(model, output)
    if as_json:
        click.echo(json.dumps({"weights": output, "parameters": model.parameter_count()}))
    else:
        click.echo(f"wrote {model.parameter_count()} parameters to {output}")


if __name__ == "__main__":
    sys.exit(main())
