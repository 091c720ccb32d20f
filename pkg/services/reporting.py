"""
Reporting
Score files, ROC exports, SVG ROC plots and CSV/Markdown result tables
"""

import json
from pathlib import Path
from typing import Dict, List, Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from exceptions import SchemaError, StorageError  # noqa: E402
from logger_config import setup_logger  # noqa: E402
from models.eval_models import EvalReport, ScoreSet  # noqa: E402
from services.metrics_service import auc, roc_curve_with_thresholds  # noqa: E402

logger = setup_logger(__name__)

# Keep SVG text as text so annotations stay machine-readable
plt.rcParams["svg.fonttype"] = "none"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def write_scores(scoresets: Mapping[str, ScoreSet], path: str) -> None:
    payload = {split: s.model_dump(mode="json") for split, s in scoresets.items()}
    _write_text(Path(path), json.dumps(payload, sort_keys=True, indent=2))


def read_scores(path: str) -> Dict[str, ScoreSet]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise StorageError(f"cannot read scores {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path} is not valid JSON: {e}") from e
    if "ids" in payload:
        return {"test": ScoreSet(**payload)}
    return {split: ScoreSet(**value) for split, value in payload.items()}


def roc_frame(scoreset: ScoreSet) -> pd.DataFrame:
    points, thresholds = roc_curve_with_thresholds(scoreset)
    return pd.DataFrame({
        "threshold": thresholds,
        "fpr": [p[0] for p in points],
        "tpr": [p[1] for p in points],
    })


def write_roc_csv(scoreset: ScoreSet, path: str) -> pd.DataFrame:
    frame = roc_frame(scoreset)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)
    return frame


def plot_roc(curves: Mapping[str, ScoreSet], path: str, title: str = "ROC") -> Dict[str, float]:
    """One staircase per score set, each labelled `<name> (AUC = x.xxxxxx)`; returns the AUCs"""
    figure, axis = plt.subplots(figsize=(5, 5))
    areas = {}
    for name, scoreset in curves.items():
        frame = roc_frame(scoreset)
        areas[name] = auc(scoreset)
        axis.plot(frame["fpr"], frame["tpr"], drawstyle="default",
                  label=f"{name} (AUC = {areas[name]:.6f})")
    axis.plot([0, 1], [0, 1], linestyle=":", color="grey", linewidth=0.8)
    axis.set_xlim(0, 1)
    axis.set_ylim(0, 1.01)
    axis.set_xlabel("1 - specificity")
    axis.set_ylabel("sensitivity")
    axis.set_title(title)
    axis.legend(loc="lower right")
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        figure.savefig(path, format="svg")
    except OSError as e:
        raise StorageError(f"cannot write plot {path}: {e}") from e
    finally:
        plt.close(figure)
    return areas


def report_frame(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    """One row per named report with its scalar metrics"""
    rows = []
    for name, report in reports.items():
        rows.append({"run": name, "split": report.split, "n_cases": report.n_cases, **report.flat_metrics()})
    return pd.DataFrame(rows)


def write_table(frame: pd.DataFrame, csv_path: str, markdown_path: str = None, floatfmt: str = ".4f") -> None:
    Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(csv_path, index=False)
    if markdown_path:
        _write_text(Path(markdown_path), frame.to_markdown(index=False, floatfmt=floatfmt) + "\n")


def load_reports(paths: Sequence[str], split: str = "test") -> Dict[str, EvalReport]:
    """`report.json` files of several runs, keyed by run directory name"""
    reports: Dict[str, EvalReport] = {}
    for path in paths:
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise StorageError(f"cannot read report {path}: {e}") from e
        if split not in payload:
            raise SchemaError(f"{path} has no {split} report")
        reports[Path(path).parent.name] = EvalReport(**payload[split])
    return reports


def summary_lines(reports: Mapping[str, EvalReport]) -> List[str]:
    lines = []
    for name, r in reports.items():
        parts = [f"{key}={value:.4f}" for key, value in r.flat_metrics().items() if value is not None]
        lines.append(f"{name} [{r.split}] " + " ".join(parts))
    return lines
