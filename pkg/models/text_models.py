"""
Text Models
Label vocabulary and frozen text-embedding tables
"""

from typing import Dict, List, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import NUM_LOCATION_BINS

PROMPT_TEMPLATE = "A patient with {label} cancer"


class LabelVocabulary(BaseModel):
    """Report labels; index 0 of each list is the background "no" class"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    diagnostic_labels: Tuple[str, ...] = ("no", "esophageal")
    location_labels: Tuple[str, ...] = (
        "no",
        "upper esophageal",
        "middle esophageal",
        "lower esophageal",
        "esophagogastric junction",
    )

    @model_validator(mode='after')
    def validate_lengths(self):
        if len(self.diagnostic_labels) != 2:
            raise ValueError('exactly two diagnostic labels are required')
        if len(self.location_labels) != NUM_LOCATION_BINS + 1:
            raise ValueError(f'location_labels must have L+1 = {NUM_LOCATION_BINS + 1} entries')
        if self.diagnostic_labels[0] != "no" or self.location_labels[0] != "no":
            raise ValueError('index 0 must be the "no" background label')
        return self

    @property
    def num_locations(self) -> int:
        return len(self.location_labels)

    @property
    def labels(self) -> List[str]:
        """All distinct labels, diagnostic first, in index order"""
        seen: List[str] = []
        for label in self.diagnostic_labels + self.location_labels:
            if label not in seen:
                seen.append(label)
        return seen


class TextEmbeddingTable(BaseModel):
    """prompt -> D-vector rows; frozen once built"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    encoder: str
    dim: int = Field(..., ge=2)
    normalized: bool
    rows: Dict[str, Tuple[float, ...]]

    @model_validator(mode='after')
    def validate_dims(self):
        for prompt, row in self.rows.items():
            if len(row) != self.dim:
                raise ValueError(f'row for "{prompt}" has length {len(row)}, expected {self.dim}')
        return self
