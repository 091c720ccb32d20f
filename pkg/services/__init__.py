# WSSL Services Package
# Training and pipeline modules import torch networks; import them directly.
from .array_store import ArrayStore
from .phantom_service import generate_dataset, generate_patient, assign_supervision, load_manifest
from .metrics_service import dice_score, auc, roc_curve, sens_spec, location_accuracy, delong_test

__all__ = [
    'ArrayStore',
    'generate_dataset', 'generate_patient', 'assign_supervision', 'load_manifest',
    'dice_score', 'auc', 'roc_curve', 'sens_spec', 'location_accuracy', 'delong_test'
]
