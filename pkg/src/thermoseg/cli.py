"""Command-line interface for the survey workbench."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .backend import GroundTruthOracle, StubBackend
from .evaluator import evaluate
from .harness import (
    ModelRegistry,
    default_matrix,
    load_matrix,
    run_ablation,
    select_best,
)
from .labelme import labelme_to_coco
from .manifest import (
    Category,
    CategoryTable,
    DatasetManifest,
    ImageRecord,
    compute_instance_counts,
    parse_coco_manifest,
    save_manifest,
    validate_manifest,
)
from .predictions import load_predictions
from .synthgen import SceneSpec, generate_dataset


@click.group()
def main() -> None:
    """Thermographic survey segmentation workbench."""


# ---------------------------------------------------------------- dataset --


@main.group()
def dataset() -> None:
    """Manifest conversion, validation, and bookkeeping."""


def _load_categories(path: Path | None) -> CategoryTable:
    if path is None:
        return CategoryTable.default()
    doc = json.loads(Path(path).read_text())
    return CategoryTable(
        Category(int(c["id"]), str(c["name"]), c["role"]) for c in doc
    )


@dataset.command()
@click.option("--labelme-dir", "labelme_dir", type=click.Path(exists=True, path_type=Path),
              required=True, help="Directory of per-image annotation JSON files.")
@click.option("--categories", type=click.Path(exists=True, path_type=Path), default=None,
              help="Category table JSON (defaults to the 7 standard classes).")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--split", type=click.Choice(["train", "test", "evaluation"]), default="train")
def convert(labelme_dir: Path, categories: Path | None, out: Path, split: str) -> None:
    """Convert a directory of per-image polygon files into one COCO manifest."""
    table = _load_categories(categories)
    records = []
    for path in sorted(labelme_dir.glob("*.json")):
        doc = json.loads(path.read_text())
        file_ref = doc.get("imagePath") or path.with_suffix(".png").name
        width = doc.get("imageWidth")
        height = doc.get("imageHeight")
        if not width or not height:
            raise click.ClickException(f"{path.name}: missing imageWidth/imageHeight")
        records.append(
            (ImageRecord(0, str(file_ref), int(width), int(height)), path)
        )
    manifest = labelme_to_coco(records, table, split_tag=split)
    save_manifest(manifest, out)
    click.echo(f"wrote {out}: {len(manifest.images)} images, "
               f"{len(manifest.annotations)} annotations")


@dataset.command()
@click.argument("manifest_path", type=click.Path(exists=True, path_type=Path))
@click.option("--check-files", is_flag=True, help="Also require image files to resolve.")
def validate(manifest_path: Path, check_files: bool) -> None:
    """Validate a COCO manifest; exits non-zero when findings exist."""
    manifest = parse_coco_manifest(manifest_path)
    findings = validate_manifest(manifest, check_files=check_files)
    for f in findings:
        click.echo(f"{f.severity}: {f.entity}: {f.rule}: {f.message}")
    if findings:
        sys.exit(1)
    click.echo("ok: no findings")


@dataset.command()
@click.argument("manifest_path", type=click.Path(exists=True, path_type=Path))
def counts(manifest_path: Path) -> None:
    """Per-class instance counts."""
    manifest = parse_coco_manifest(manifest_path)
    table = compute_instance_counts(manifest)
    for name, count in table.items():
        click.echo(f"{name}\t{count}")
    click.echo(f"total\t{sum(table.values())}")


# ---------------------------------------------------------------- synthgen --


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, path_type=Path), default=None,
              help="SceneSpec YAML/JSON; defaults to the standard 256x256 spec.")
@click.option("--n", "n_images", type=int, default=50)
@click.option("--seed", type=int, default=0)
@click.option("--split", type=click.Choice(["train", "test", "evaluation"]), default="train")
@click.option("--out", type=click.Path(path_type=Path), required=True)
def synthgen(spec_path: Path | None, n_images: int, seed: int, split: str, out: Path) -> None:
    """Generate synthetic thermal-style scenes plus a COCO manifest."""
    if spec_path is not None:
        text = Path(spec_path).read_text()
        if str(spec_path).endswith((".yaml", ".yml")):
            import yaml

            doc = yaml.safe_load(text)
        else:
            doc = json.loads(text)
        spec = SceneSpec.from_dict(doc or {})
    else:
        spec = SceneSpec()
    manifest = generate_dataset(spec, n_images, seed=seed, split_tag=split, out_dir=out)
    save_manifest(manifest, Path(out) / "manifest.json")
    click.echo(f"wrote {n_images} scenes and manifest.json to {out}")


# ------------------------------------------------------------------- train --


@main.group()
def train() -> None:
    """Ablation experiments and model selection."""


@train.command(name="run")
@click.option("--config", "config_path", default="default",
              help="Matrix YAML/JSON, or 'default' for the 12-row matrix.")
@click.option("--train", "train_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--test", "test_path", type=click.Path(exists=True, path_type=Path),
              required=True)
@click.option("--backend", "backend_kind", type=click.Choice(["stub", "real", "torchvision"]),
              default="stub", help="'real' is an alias for the torchvision backend.")
@click.option("--seed", type=int, default=0)
@click.option("--out", type=click.Path(path_type=Path), required=True)
def train_run(config_path: str, train_path: Path, test_path: Path,
              backend_kind: str, seed: int, out: Path) -> None:
    """Run an experiment matrix and persist the registry + report."""
    train_manifest = parse_coco_manifest(train_path)
    test_manifest = parse_coco_manifest(test_path)
    matrix = (
        default_matrix(seed=seed)
        if config_path == "default"
        else load_matrix(Path(config_path))
    )
    out = Path(out)
    if backend_kind == "stub":
        oracle = GroundTruthOracle()
        oracle.register_manifest(train_manifest)
        oracle.register_manifest(test_manifest)
        backend = StubBackend(
            checkpoint_dir=out / "checkpoints",
            oracle=oracle,
            noise_seed=seed,
            full_train_size=len(train_manifest.images),
        )
    else:
        from .torch_backend import TorchvisionBackend

        backend = TorchvisionBackend(checkpoint_dir=out / "checkpoints", seed=seed)
    registry = ModelRegistry(out)
    report = run_ablation(matrix, train_manifest, test_manifest, backend, registry)
    (out / "ablation.csv").write_text(report.to_csv_text())
    click.echo(report.to_csv_text().rstrip())
    click.echo(f"best: {select_best(registry)}")


@train.command(name="best")
@click.argument("registry_dir", type=click.Path(exists=True, path_type=Path))
def train_best(registry_dir: Path) -> None:
    """Print the best-performing experiment id in a registry."""
    registry = ModelRegistry.load(registry_dir)
    click.echo(select_best(registry))


# ---------------------------------------------------------------- evaluate --


@main.command(name="evaluate")
@click.option("--gt", "gt_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--dt", "dt_path", type=click.Path(exists=True, path_type=Path), required=True)
@click.option("--mode", type=click.Choice(["bbox", "segm", "both"]), default="both")
@click.option("--report", "report_path", type=click.Path(path_type=Path), default=None)
def evaluate_cmd(gt_path: Path, dt_path: Path, mode: str, report_path: Path | None) -> None:
    """Evaluate a COCO-results predictions file against a manifest."""
    manifest = parse_coco_manifest(gt_path)
    predictions = load_predictions(dt_path)
    modes = ("bbox", "segm") if mode == "both" else (mode,)
    report = evaluate(predictions, manifest, modes=modes)
    text = report.to_csv_text()
    click.echo(text.rstrip())
    if report_path is not None:
        Path(report_path).write_text(text)


# -------------------------------------------------------------------- serve --


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path),
              default=None)
@click.option("--store", "store_dir", type=click.Path(path_type=Path), default=None)
@click.option("--registry", "registry_dir", type=click.Path(path_type=Path), default=None)
@click.option("--ui", "ui_dir", type=click.Path(path_type=Path), default=None,
              help="Built frontend directory to serve at /.")
@click.option("--host", default=None)
@click.option("--port", type=int, default=None)
def serve(config_path, store_dir, registry_dir, ui_dir, host, port) -> None:
    """Run the survey HTTP service."""
    import uvicorn

    from .service import ServiceConfig, create_app

    if config_path is not None:
        config = ServiceConfig.load(config_path)
    else:
        if store_dir is None or registry_dir is None:
            raise click.ClickException("either --config or both --store and --registry")
        config = ServiceConfig(store_dir=store_dir, registry_dir=registry_dir)
    if ui_dir:
        config.ui_dir = ui_dir
    if host:
        config.host = host
    if port:
        config.port = port
    uvicorn.run(create_app(config), host=config.host, port=config.port)


@main.command()
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=0)
@click.option("--full", is_flag=True, help="Fit the whole 12-row matrix, not just one model.")
@click.option("--n-train", type=int, default=12)
@click.option("--n-test", type=int, default=5)
def demo(out: Path, seed: int, full: bool, n_train: int, n_test: int) -> None:
    """Build a stub-backed demo registry ready for `thermoseg serve`."""
    from .service.demo import build_demo_registry

    registry, train_manifest, test_manifest = build_demo_registry(
        Path(out), n_train=n_train, n_test=n_test, seed=seed, quick=not full
    )
    click.echo(
        f"registry at {out} with {len(registry)} model(s); "
        f"{len(train_manifest.images)} train / {len(test_manifest.images)} test scenes"
    )
    click.echo(f"serve with: thermoseg serve --store {out}/store --registry {out}")
