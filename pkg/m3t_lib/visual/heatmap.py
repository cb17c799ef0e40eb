"""
Gate heatmap export.

`export_gate_heatmap` writes the H×W gate map as an 8-bit PGM after min-max
normalisation plus a text sidecar with the raw values; `render_overlay`
blends the upsampled map over the input image as a PNG.
"""
import logging
from pathlib import Path
from typing import Union

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from m3t_lib.core.exceptions import DimensionError
from m3t_lib.data_processing.image import encode_netpbm, resize_bilinear, to_three_channels

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def normalize_heatmap(alpha: np.ndarray) -> np.ndarray:
    """Min-max scales to 0..255 (uint8); a constant map becomes all zeros."""
    alpha = np.asarray(alpha, dtype=np.float64)
    lo, hi = float(alpha.min()), float(alpha.max())
    if hi <= lo:
        return np.zeros(alpha.shape, dtype=np.uint8)
    return np.round((alpha - lo) / (hi - lo) * 255.0).astype(np.uint8)


def sidecar_path(path: PathLike) -> Path:
    return Path(path).with_suffix(".txt")


def export_gate_heatmap(alpha, out: PathLike) -> Path:
    """
    Writes the gate map as a P5 PGM and its raw values next to it.

    Args:
        alpha: Gate coefficients [H×W] (array or Tensor).
        out: Target .pgm path; the sidecar uses the same stem with '.txt'.

    Returns:
        The sidecar path.
    """
    values = np.asarray(getattr(alpha, "data", alpha), dtype=np.float64)
    if values.ndim != 2:
        raise DimensionError(f"gate heatmap must be 2-D, got {values.shape}")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(encode_netpbm(normalize_heatmap(values)))
    sidecar = sidecar_path(out)
    lines = ["\t".join(f"{v:.9g}" for v in row) for row in values]
    sidecar.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Gate heatmap {values.shape} written to {out}")
    return sidecar


def render_overlay(image: np.ndarray, alpha, out_png: PathLike, opacity: float = 0.45):
    """Renders the input image with the bilinearly upsampled gate map blended on top."""
    image = to_three_channels(np.asarray(image, dtype=np.float64))
    values = np.asarray(getattr(alpha, "data", alpha), dtype=np.float64)
    heat = resize_bilinear(values, image.shape[0], image.shape[1])

    fig, axes = plt.subplots(1, 2, figsize=(8, 4))
    axes[0].imshow(np.clip(image, 0, 1))
    axes[0].set_title("Input")
    axes[1].imshow(np.clip(image, 0, 1))
    axes[1].imshow(heat, cmap="jet", alpha=opacity, vmin=0.0, vmax=1.0)
    axes[1].set_title("Lesion gate overlay")
    for ax in axes:
        ax.axis("off")
    plt.tight_layout()
    out_png = Path(out_png)
    out_png.parent.mkdir(parents=True, exist_ok=True)
    plt.savefig(out_png)
    plt.close(fig)
    logger.info(f"Overlay saved to {out_png}")
