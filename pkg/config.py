"""
Text-Guided WSSL Configuration
Defaults for phantom generation, preprocessing, training and evaluation
"""

import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# ==============================================================================
# PATHS & RUNTIME SETTINGS
# ==============================================================================

DATA_DIR = os.getenv("WSSL_DATA_DIR", "./data/phantoms")
RUN_DIR = os.getenv("WSSL_RUN_DIR", "./runs")
EMBEDDING_TABLE = os.getenv("WSSL_EMBEDDING_TABLE", "")  # empty -> pseudo encoder in memory
EMBEDDING_DIR = "./embeddings"

DEFAULT_SEED = int(os.getenv("WSSL_SEED", "1"))
NUM_THREADS = int(os.getenv("WSSL_NUM_THREADS", "4"))
DEVICE = os.getenv("WSSL_DEVICE", "cpu")

# File-access audit (records every array read by the storage layer)
AUDIT_ENABLED = os.getenv("WSSL_AUDIT", "False").lower() == "true"
AUDIT_LOG = os.getenv("WSSL_AUDIT_LOG", "")

# ==============================================================================
# PHANTOM SETTINGS
# ==============================================================================

# Desk-scale volume, (W, H, Z) voxels; spacing recorded as metadata only
VOLUME_SHAPE = (48, 48, 48)
VOXEL_SPACING_MM = (0.7, 0.7, 5.0)
ORGAN_RADIUS_RANGE = (4.0, 6.0)
TUMOR_RADIUS_RANGE = (2.0, 4.0)
TUMOR_CONTRAST = 0.35
NOISE_SIGMA = 0.2
CANCER_PREVALENCE = 0.59  # 980 / 1651
STAGE_I_CONTRAST_FACTOR = 0.8

SPLIT_RATIOS = (0.64, 0.16, 0.20)
FULL_FRACTION = 0.3
N_PHANTOMS = 200

# Location bins, top to bottom of the organ; bin 4 carries the stomach cap
NUM_LOCATION_BINS = 4

# ==============================================================================
# PREPROCESSING SETTINGS
# ==============================================================================

ROI_MARGIN = (32, 32, 4)  # (mx, my, mz) voxels
TARGET_SHAPE = (32, 32, 32)  # desk scale; full scale is (96, 96, 64)
NORMALIZE_VARIANCE_FLOOR = 1e-8

AUGMENT_ROTATION_MAX_DEG = 15.0
AUGMENT_SCALE_RANGE = (0.9, 1.1)
AUGMENT_FLIP_AXES = ("x", "y")
AUGMENT_FLIP_PROBABILITY = 0.5
AUGMENT_INTENSITY_SCALE_RANGE = (0.9, 1.1)

# ==============================================================================
# MODEL SETTINGS
# ==============================================================================

BACKBONE_STAGES = 4
BASE_CHANNELS = 8
DET_HEAD_CHANNELS = 32
TEXT_DIM = 768

# ==============================================================================
# LOSS & TRAINING SETTINGS
# ==============================================================================

LAMBDA_TEXT = 0.01  # teacher text weight
ALPHA_TEXT = 0.01  # student text weight
BETA_DET = 0.1  # joint detection weight
DICE_SMOOTH = 1e-5
TEMPERATURE_INIT = 0.07
TEMPERATURE_BOUNDS = (1e-3, 10.0)

EPOCHS = 50
WARMUP_EPOCHS = 5
LEARNING_RATE = 5e-4
WEIGHT_DECAY = 1e-4
BATCH_SIZE = 4  # 6 at full scale

PSEUDO_THRESHOLD = 0.5

# ==============================================================================
# EVALUATION SETTINGS
# ==============================================================================

SCORE_CUTOFF = 0.5
DELONG_VARIANCE_FLOOR = 1e-12

# ==============================================================================
# LOGGING
# ==============================================================================

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FORMAT = "%(log_color)s%(asctime)s | %(levelname)-8s | %(name)s | %(message)s"
