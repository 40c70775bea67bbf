"""
Toolkit constants and default configuration values.
"""

# HU window (Hounsfield units)
HU_MIN = -1000.0  # air, maps to 0.0 after normalization
HU_MAX = 600.0  # maps to 1.0 after normalization

# Label coding (0 = background, lobes in report column order)
NUM_CLASSES = 6
LOBE_CODES = {
    'RU': 1,  # right upper
    'RM': 2,  # right middle
    'RL': 3,  # right lower
    'LU': 4,  # left upper
    'LL': 5,  # left lower
}
LOBE_NAMES = tuple(LOBE_CODES.keys())

# Preprocessing defaults
OTSU_BINS = 256
CLOSE_KERNEL_SIZE = 3  # pixels, square
DILATE_KERNEL_SIZE = 5  # pixels, square
MIN_COMPONENT_FRACTION = 0.001  # of the volume's voxel count
MAX_LUNG_COMPONENTS = 2

# Phantom generator HU constants (not clinical reference values)
PHANTOM_BODY_HU = 40.0  # soft tissue
PHANTOM_LUNG_HU = -850.0  # aerated parenchyma
PHANTOM_AIR_HU = -1000.0  # outside the body
PHANTOM_FISSURE_HU = -600.0  # visible fissure sheet
PHANTOM_NOISE_SIGMA = 20.0  # HU
PHANTOM_DEFAULT_DIMS = (32, 64, 64)  # (z, y, x)
PHANTOM_DEFAULT_SPACING = (2.5, 0.7, 0.7)  # mm

# Shifted acquisition profile of the external phantom domain
EXTERNAL_NOISE_FACTOR = 2.0
EXTERNAL_BODY_OFFSET_HU = 60.0
EXTERNAL_LUNG_OFFSET_HU = 50.0
EXTERNAL_JITTER_FACTOR = 1.5

# Network defaults
BASE_WIDTH = 16  # channels at full resolution
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

# Loss defaults
LOSS_LAMBDA = 1.0
LOSS_ALPHA = 1.0
LOSS_GAMMA = 2.0
PROB_FLOOR = 1e-7
DICE_SMOOTH = 1e-5

# Optimizer / training defaults
EPOCHS = 300
LEARNING_RATE = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# Augmentation defaults
SHIFT_MAX = 8  # voxels per axis
FLIP_Z_PROB = 0.5
ROTATE_MAX_DEG = 10.0  # degrees, XY plane

# Ablation defaults
TRAIN_FRACTION = 0.8  # share of cases used for training

# File formats
CHECKPOINT_MAGIC = b'LOBECKPT'
CHECKPOINT_VERSION = 1

# Gradient check defaults
GRADCHECK_EPS = 1e-5
