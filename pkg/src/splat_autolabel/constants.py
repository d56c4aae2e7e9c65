import os
from typing import Tuple

THREADS: int = os.cpu_count() or 1
CONFIG_VERSION: int = 1
CHECKPOINT_VERSION: int = 1

# geometry
DEPTH_EPSILON: float = 1e-9
ROTATION_TOLERANCE: float = 1e-6

# scene
STATE_DIM: int = 32
OPACITY_LOGITS_DIM: int = 16
INITIAL_OPACITY: float = 0.1
STATE_INIT_STD: float = 0.01
PRUNE_OPACITY: float = 0.005
RESET_OPACITY: float = 0.01
PERCENT_DENSE: float = 0.01
SPLIT_COUNT: int = 2
SPLIT_SCALE_DIVISOR: float = 0.8 * SPLIT_COUNT

# renderer
TILE_SIZE: int = 16
NEAR_PLANE: float = 0.01
LOW_PASS: float = 0.3
ALPHA_MAX: float = 0.99
TRANSMITTANCE_MIN: float = 1e-4
MAX_CONDITION: float = 1e12
SSIM_WINDOW: int = 11
SSIM_SIGMA: float = 1.5
SSIM_C1: float = 0.01**2
SSIM_C2: float = 0.03**2
SSIM_WEIGHT: float = 0.2
PSNR_CAP: float = 100.0

# deformation
POSITION_BANDS: int = 10
TIME_BANDS: int = 6
DEFORM_WIDTH: int = 256
DEFORM_DEPTH: int = 8
DEM_WIDTH: int = 128
OEM_WIDTH: int = 64
POSITION_FACTOR_BIAS: float = 4.0
OPACITY_FACTOR_BIAS: float = 3.0

# adaptor
ADAPTOR_WIDTH: int = 256
ADAPTOR_DEPTH: int = 8
ADAPTOR_WEIGHTS: Tuple[float, float, float] = (50.0, 0.1, 1.0)
ADAPTOR_FOLLOWING: int = 15
ADAPTOR_LR: float = 2e-4
ADAPTOR_BATCH: int = 16
ADAPTOR_EPOCHS: int = 1000
RPT_TRANSLATION: Tuple[float, float, float] = (2.0, 2.0, 0.5)  # meters, camera frame
RPT_YAW_DEGREES: float = 5.0
ADAPTOR_W2_FLOOR: float = 0.1  # fraction of w2 left after the decay
ADAPTOR_DECAY_FRACTION: float = 0.5  # of the epochs

# labeling
AP_GATE: float = 2.0  # meters
AP_RECALL_POINTS: int = 101
MIN_BOX_AREA: float = 25.0  # pixels^2
