"""
Diagnostic figures: training loss curve and hull overlay of one slice.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import IoFailure  # noqa: E402
from .volume_io import CropRegion, Volume  # noqa: E402

logger = logging.getLogger(__name__)


def _save(fig, path: Union[str, Path]) -> None:
    try:
        fig.savefig(path, dpi=100)
    except OSError as e:
        raise IoFailure(f"cannot write figure {path}: {e}") from e
    finally:
        plt.close(fig)
    logger.debug("figure written", extra={'path': str(path)})


def plot_history(history: Sequence, path: Union[str, Path]) -> None:
    """
    Mean training loss per epoch.

    Args:
        history: EpochRecord sequence (epoch, mean_loss, wall_seconds)
        path: Output image path
    """
    epochs = [r.epoch for r in history]
    losses = [r.mean_loss for r in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, color='tab:blue', linewidth=1.5)
    ax.set_xlabel('epoch')
    ax.set_ylabel('mean hybrid loss')
    if losses and min(losses) > 0:
        ax.set_yscale('log')
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    _save(fig, path)


def plot_hull_overlay(
    volume: Volume,
    hull: np.ndarray,
    region: CropRegion,
    path: Union[str, Path],
    z: Optional[int] = None,
) -> None:
    """
    One axial slice with the dilated hull outline and the crop box.

    Args:
        volume: Full-size volume (HU or normalized)
        hull: Full-size hull mask
        region: Crop box
        path: Output image path
        z: Slice index; defaults to the middle of the crop box
    """
    if z is None:
        z = (region.lo[0] + region.hi[0]) // 2
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(np.asarray(volume.data[z], dtype=np.float32), cmap='gray', interpolation='nearest')
    hull_slice = np.asarray(hull[z], dtype=float)
    if hull_slice.any():
        ax.contour(hull_slice, levels=[0.5], colors='tab:orange', linewidths=1.0)
    (y0, x0), (y1, x1) = region.lo[1:], region.hi[1:]
    ax.add_patch(plt.Rectangle((x0 - 0.5, y0 - 0.5), x1 - x0, y1 - y0,
                               fill=False, edgecolor='tab:cyan', linewidth=1.0))
    ax.set_title(f'slice z={z}')
    ax.set_axis_off()
    fig.tight_layout()
    _save(fig, path)
