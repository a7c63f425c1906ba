"""Run a stub-backed service instance for integration tests and demos.

Usage: python3 -m thermoseg.service.fixture --dir /tmp/fx --port 8931
Builds a quick demo registry under --dir, then serves until killed.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import uvicorn

from .app import create_app
from .config import ServiceConfig
from .demo import build_demo_registry


def main(argv: list[str] | None = None) -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dir", required=True, type=Path)
    parser.add_argument("--port", type=int, default=8931)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--n-train", type=int, default=5)
    parser.add_argument("--n-test", type=int, default=2)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    root = args.dir
    registry_dir = root / "registry"
    if not (registry_dir / "registry.json").exists():
        build_demo_registry(
            registry_dir,
            n_train=args.n_train,
            n_test=args.n_test,
            seed=args.seed,
            scene_size=160,
        )
    config = ServiceConfig(store_dir=root / "store", registry_dir=registry_dir)
    app = create_app(config)
    print(f"FIXTURE_READY port={args.port}", flush=True)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
