"""Shared fixtures for the acceptance suite.

The end-to-end benchmark trains both diffusion stages on the 12-object toy
family twice under one seed (the second run backs the determinism check).
That costs real CPU time, so everything lands in a persistent cache directory
under the system temp dir: completed stages are skipped on rerun and denoiser
training resumes from its checkpoint if a previous session was interrupted.
Delete the cache directory to force a fresh build.
"""

import json
import tempfile
import time
from pathlib import Path

import pytest
import yaml

from probshape import pipeline
from probshape.config import load_config

CACHE_DIR = Path(tempfile.gettempdir()) / "probshape_acceptance"

BENCH_CONFIG = {
    "seed": 123,
    "dataset": {
        "objects": 12,
        "views_per_object": 6,
        "holdout_views": 2,
        "resolution": 32,
        "supervision_points": 20000,
    },
    "triplane": {
        "p": 3,
        "n": 4,
        "decoder_widths": [12, 64, 64, 1],
        "points_per_epoch": 2000,
        "train": {"peak_lr": 0.01, "warmup_steps": 25, "total_steps": 250,
                  "batch_size": 1, "seed": 11},
    },
    "diffusion": {
        "stage1": {"hidden": 32, "solver_steps": 50,
                   "train": {"peak_lr": 0.002, "warmup_steps": 100,
                             "total_steps": 3000, "batch_size": 8, "seed": 21}},
        "stage2": {"hidden": 48, "solver_steps": 25,
                   "train": {"peak_lr": 0.002, "warmup_steps": 100,
                             "total_steps": 1200, "batch_size": 16, "seed": 22}},
    },
    "eval": {"n_points": 2048, "n_hypotheses": 8, "lod": 5,
             "ransac_threshold_frac": 0.02, "ransac_iterations": 256},
}


def _build_run(run_dir: Path, log):
    """Run the full pipeline into run_dir, skipping completed stages."""
    run_dir.mkdir(parents=True, exist_ok=True)
    raw = json.loads(json.dumps(BENCH_CONFIG))
    raw["output_dir"] = str(run_dir / "out")
    cfg_path = run_dir / "config.yaml"
    cfg_path.write_text(yaml.safe_dump(raw))
    cfg = load_config(cfg_path)

    t0 = time.time()
    if not (cfg.dataset_dir / "manifest.json").exists():
        log(f"[{run_dir.name}] generating dataset")
        pipeline.generate_dataset(cfg, log=lambda *a: None)
    if not (cfg.checkpoint_dir / "decoder.nnc").exists():
        log(f"[{run_dir.name}] fitting triplane library")
        pipeline.fit_library(cfg, log=lambda *a: None)
    # train_stage resumes from its checkpoint and is a no-op once finished
    log(f"[{run_dir.name}] training stages")
    pipeline.train_stage(cfg, "norf", log=lambda *a: None)
    pipeline.train_stage(cfg, "shape", log=lambda *a: None)
    build_seconds = time.time() - t0

    # cumulative wall time spent building this run, across interrupted sessions
    timing_path = run_dir / "timing.json"
    prior = json.loads(timing_path.read_text()) if timing_path.exists() else {}
    total = prior.get("build_seconds", 0.0) + build_seconds
    timing_path.write_text(json.dumps({"build_seconds": total}) + "\n")

    if not (cfg.report_dir / "eval.json").exists():
        log(f"[{run_dir.name}] estimating held-out views")
        pipeline.estimate_all(cfg, log=lambda *a: None)
        log(f"[{run_dir.name}] evaluating")
        pipeline.evaluate(cfg, log=lambda *a: None)
    return cfg


@pytest.fixture(scope="session")
def benchmark_runs():
    """Two identically seeded end-to-end runs plus the first run's report."""
    log = print
    cfg_a = _build_run(CACHE_DIR / "run_a", log)
    cfg_b = _build_run(CACHE_DIR / "run_b", log)
    report = json.loads((cfg_a.report_dir / "eval.json").read_text())
    timing = json.loads((CACHE_DIR / "run_a" / "timing.json").read_text())
    return {"cfg_a": cfg_a, "cfg_b": cfg_b, "report": report,
            "build_seconds": timing["build_seconds"]}
