# WSSL Models
from .phantom_models import (
    PhantomConfig, PatientRecord, Manifest, ManifestRecord, DatasetInfo,
    Supervision, Split, TumorStage, TumorGeometry
)
from .training_models import (
    RoiSpec, AugmentSpec, BackboneConfig, HeadsConfig, NetworkConfig, LossConfig,
    TrainConfig, TrainMode, PromptSet, TextConfig, ExperimentConfig,
    PseudoLabelSet, PseudoMaskEntry
)
from .text_models import LabelVocabulary, TextEmbeddingTable
from .eval_models import ScoreSet, DeLongResult, EvalReport

__all__ = [
    'PhantomConfig', 'PatientRecord', 'Manifest', 'ManifestRecord', 'DatasetInfo',
    'Supervision', 'Split', 'TumorStage', 'TumorGeometry',
    'RoiSpec', 'AugmentSpec', 'BackboneConfig', 'HeadsConfig', 'NetworkConfig', 'LossConfig',
    'TrainConfig', 'TrainMode', 'PromptSet', 'TextConfig', 'ExperimentConfig',
    'PseudoLabelSet', 'PseudoMaskEntry',
    'LabelVocabulary', 'TextEmbeddingTable',
    'ScoreSet', 'DeLongResult', 'EvalReport'
]
