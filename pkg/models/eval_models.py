"""
Evaluation Models
Score sets, DeLong results and per-split evaluation reports
"""

from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ScoreSet(BaseModel):
    """Per-record cancer probabilities with aligned labels and ids"""
    model_config = ConfigDict(extra="forbid")

    ids: List[str]
    scores: List[float]
    labels: List[int]

    @model_validator(mode='after')
    def validate_lengths(self):
        if not (len(self.ids) == len(self.scores) == len(self.labels)):
            raise ValueError('ids, scores and labels must have equal lengths')
        if any(label not in (0, 1) for label in self.labels):
            raise ValueError('labels must be binary')
        return self


class DeLongResult(BaseModel):
    model_config = ConfigDict(extra="forbid")

    auc_a: float
    auc_b: float
    z: float
    p_value: float
    variance: float


class EvalReport(BaseModel):
    """Metrics of one model on one split"""
    model_config = ConfigDict(extra="forbid")

    split: str
    n_cases: int
    dice_overall: Optional[float] = Field(default=None, ge=0, le=1)
    dice_by_location: Dict[str, Optional[float]] = Field(default_factory=dict)
    auc: Optional[float] = Field(default=None, ge=0, le=1)
    text_det_auc: Optional[float] = Field(default=None, ge=0, le=1)
    sensitivity: Optional[float] = Field(default=None, ge=0, le=1)
    specificity: Optional[float] = Field(default=None, ge=0, le=1)
    location_accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    delong: Optional[DeLongResult] = None
    roc_points: List[Tuple[float, float]] = Field(default_factory=list)
    cutoff: float = 0.5
    dice_protocol: str = "per-case mean over cases with non-empty ground truth"
    config_hash: Optional[str] = None

    @model_validator(mode='after')
    def validate_roc(self):
        for (f0, t0), (f1, t1) in zip(self.roc_points, self.roc_points[1:]):
            if f1 < f0 or t1 < t0:
                raise ValueError('roc_points must be monotone nondecreasing')
        return self

    def flat_metrics(self) -> Dict[str, Optional[float]]:
        """Scalar metrics only, for CSV rows"""
        row: Dict[str, Optional[float]] = {
            "dice_overall": self.dice_overall,
            "auc": self.auc,
            "text_det_auc": self.text_det_auc,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "location_accuracy": self.location_accuracy,
        }
        for group, value in self.dice_by_location.items():
            row[f"dice_{group}"] = value
        return row
