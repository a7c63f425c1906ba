"""Build a self-contained stub-backed registry for demos and tests."""

from __future__ import annotations

from pathlib import Path

from ..backend import GroundTruthOracle, StubBackend, TrainHyperparams
from ..harness import ModelRegistry, default_matrix, run_ablation
from ..manifest import DatasetManifest, save_manifest
from ..synthgen import SceneSpec, generate_dataset


def build_demo_registry(
    out_dir: Path,
    n_train: int = 12,
    n_test: int = 5,
    seed: int = 0,
    scene_size: int = 192,
    input_size: int = 512,
    quick: bool = True,
) -> tuple[ModelRegistry, DatasetManifest, DatasetManifest]:
    """Generate synthetic data, fit stub models, and persist a registry.

    ``quick`` fits only the final matrix row; otherwise the whole default
    12-row ablation runs.  The returned registry directory is directly
    servable (the service resolves checkpoints relative to it).
    """
    out_dir = Path(out_dir)
    spec = SceneSpec(width=scene_size, height=scene_size, seed=seed)
    train = generate_dataset(spec, n_train, seed=1000 + seed, split_tag="train",
                             out_dir=out_dir / "data" / "train")
    test = generate_dataset(spec, n_test, seed=9000 + seed, split_tag="test",
                            out_dir=out_dir / "data" / "test")
    save_manifest(train, out_dir / "data" / "train" / "manifest.json")
    save_manifest(test, out_dir / "data" / "test" / "manifest.json")

    oracle = GroundTruthOracle()
    oracle.register_manifest(train, input_size=input_size)
    oracle.register_manifest(test, input_size=input_size)

    backend = StubBackend(
        checkpoint_dir=out_dir / "checkpoints",
        oracle=oracle,
        noise_seed=seed,
        full_train_size=len(train.images),
    )
    registry = ModelRegistry(out_dir)
    hyper = TrainHyperparams(epochs=2, input_size=input_size)
    matrix = default_matrix(seed=seed, hyper=hyper)
    if quick:
        final = matrix[-1]
        final.base_model = "Mb"  # no parent chain in quick mode
        matrix = [final]
    run_ablation(matrix, train, test, backend, registry)
    return registry, train, test
