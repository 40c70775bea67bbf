"""
lobekit: pulmonary lobe segmentation toolkit.

Lung cropping, a small 3-D residual U-Net on a NumPy autodiff engine,
dice + focal training, synthetic phantoms and the ablation harness.
"""

__version__ = '0.1.0'

from .errors import LobekitError
from .volume_io import BinaryMask, CropRegion, LabelMask, Volume, read_metaimage, write_metaimage

__all__ = [
    '__version__',
    'BinaryMask',
    'CropRegion',
    'LabelMask',
    'LobekitError',
    'Volume',
    'read_metaimage',
    'write_metaimage',
]
