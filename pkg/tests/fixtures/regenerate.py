"""Rebuild the golden pipeline fixtures: ``python3 tests/fixtures/regenerate.py``."""
from pathlib import Path

from lonchar.cli import main

HERE = Path(__file__).resolve().parent


def run_pipeline(out_dir: Path) -> None:
    cfg = str(HERE / "pipeline_config.json")
    out_dir = Path(out_dir)
    steps = [
        ["simulate", "--config", cfg, "--out", str(out_dir / "stream.ndjson"), "--summary", str(out_dir / "summary.json")],
        ["characterize", "--config", cfg, "--stream", str(out_dir / "stream.ndjson"), "--out", str(out_dir / "characterize.json")],
        ["metrics", "--config", cfg, "--estimate", str(out_dir / "characterize.json"), "--epsilon", "0.5",
         "--out", str(out_dir / "metrics.json")],
    ]
    for argv in steps:
        if main(argv) != 0:
            raise SystemExit(f"step failed: {argv[0]}")


if __name__ == "__main__":
    run_pipeline(HERE)
