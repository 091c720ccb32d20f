"""
Ablation Grid
Cartesian sweeps over loss weights, annotation ratio, prompts and training
modes; one run directory per grid point, one CSV row per run
"""

import itertools
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence

import pandas as pd

from exceptions import RejectedInputError
from logger_config import setup_logger
from models.training_models import ExperimentConfig, PromptSet
from services.reporting import write_table
from services.wssl_pipeline import BASELINE_PATTERN, run_baseline, run_wssl

logger = setup_logger(__name__)

GRID_KEYS = ("alpha", "beta", "lambda", "full_fraction", "prompts", "mode")
ABLATION_CSV = "ablation.csv"
ABLATION_MD = "ablation.md"


def validate_grid(grid: Mapping[str, Sequence[Any]]) -> None:
    unknown = sorted(set(grid) - set(GRID_KEYS))
    if unknown:
        raise RejectedInputError(f"unknown grid keys {unknown}; allowed {list(GRID_KEYS)}")
    for key, values in grid.items():
        if not values:
            raise RejectedInputError(f'grid key "{key}" has no values')
    for prompt in grid.get("prompts", []):
        PromptSet(prompt)
    for mode in grid.get("mode", []):
        if mode != "wssl" and not BASELINE_PATTERN.match(mode):
            raise RejectedInputError(f'unknown grid mode "{mode}"')


def grid_points(grid: Mapping[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    keys = [k for k in GRID_KEYS if k in grid]
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def point_name(point: Mapping[str, Any]) -> str:
    if not point:
        return "base"
    return "_".join(f"{key}={value}" for key, value in point.items()).replace("+", "-")


def point_config(base: ExperimentConfig, point: Mapping[str, Any], out_dir: str) -> ExperimentConfig:
    data = base.model_dump()
    if "alpha" in point:
        data["student"]["loss"]["alpha"] = float(point["alpha"])
    if "beta" in point:
        data["student"]["loss"]["beta"] = float(point["beta"])
    if "lambda" in point:
        data["teacher"]["loss"]["lambda_"] = float(point["lambda"])
    if "full_fraction" in point:
        data["full_fraction"] = float(point["full_fraction"])
    if "prompts" in point:
        data["student"]["prompts"] = point["prompts"]
    data["run_dir"] = str(Path(out_dir) / point_name(point))
    data["name"] = f"{base.name}:{point_name(point)}"
    return ExperimentConfig(**data)


def run_point(payload: Dict[str, Any]) -> Dict[str, Any]:
    """Run one grid point; module-level so worker processes can unpickle it"""
    cfg = ExperimentConfig(**payload["config"])
    point = payload["point"]
    mode = point.get("mode", "wssl")
    outcome = run_wssl(cfg) if mode == "wssl" else run_baseline(cfg, mode)

    row: Dict[str, Any] = {"run": point_name(point), **point}
    for split, report in outcome.reports.items():
        row.update({f"{split}_{key}": value for key, value in report.flat_metrics().items()})
    if outcome.teacher:
        row.update({f"teacher_{key}": value for key, value in outcome.teacher.items() if key != "n_cases"})
    return row


def run_ablation_grid(base: ExperimentConfig, grid: Mapping[str, Sequence[Any]], out_dir: str,
                      workers: int = 1) -> pd.DataFrame:
    """One run per grid point; rows are in grid order whatever the worker count"""
    validate_grid(grid)
    points = grid_points(grid)
    payloads = [{"config": point_config(base, p, out_dir).model_dump(), "point": p} for p in points]
    logger.info(f"🧮 Ablation grid: {len(points)} runs, {workers} worker(s) -> {out_dir}")

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_point, payloads))
    else:
        rows = [run_point(p) for p in payloads]

    frame = pd.DataFrame(rows)
    write_table(frame, str(Path(out_dir) / ABLATION_CSV), str(Path(out_dir) / ABLATION_MD))
    return frame
