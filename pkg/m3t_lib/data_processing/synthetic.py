"""
Deterministic synthetic retinal corpus.

Each sample is a fundus-like disc on a textured background carrying one to
three coloured blobs ("lesions") of distinct classes in distinct quadrants.
The imaging modality decides how the scene is rendered: color fundus images
are written as PPM, red free, autofluorescence and fluorescein angiography
images as single-channel PGM. Keywords name the modality and the lesion
classes; the description names modality, classes and quadrants, so
keywords carry part of the information the description needs and the image
carries the rest.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from m3t_lib.data_processing.corpus import CorpusRecord, write_corpus
from m3t_lib.data_processing.image import write_netpbm

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MODALITIES: Dict[str, str] = {
    "color fundus": "ppm",
    "red free": "pgm",
    "autofluorescence": "pgm",
    "fluorescein angiography": "pgm",
}
LESION_COLORS: Dict[str, Tuple[float, float, float]] = {
    "drusen": (0.95, 0.85, 0.35),
    "hemorrhage": (0.45, 0.02, 0.02),
    "exudate": (1.0, 1.0, 0.8),
    "scar": (0.25, 0.3, 0.3),
}
QUADRANTS = ("upper left", "upper right", "lower left", "lower right")
_BACKGROUND = {
    "color fundus": (0.75, 0.3, 0.12),
    "red free": (0.45, 0.45, 0.45),
    "autofluorescence": (0.3, 0.3, 0.3),
    "fluorescein angiography": (0.15, 0.15, 0.15),
}
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass
class SyntheticSample:
    pixels: np.ndarray                 # uint8, H×W×3 (color) or H×W (gray)
    modality: str
    lesions: List[Tuple[str, str]]     # (class, quadrant) in quadrant order
    keywords: str
    description: str

    @property
    def extension(self) -> str:
        return MODALITIES[self.modality]


def describe(modality: str, lesions: Sequence[Tuple[str, str]]) -> Tuple[str, str]:
    """Keyword string and description for a scene."""
    keywords = ", ".join([modality] + [cls for cls, _ in lesions])
    parts = [f"{cls} in the {quadrant} quadrant" for cls, quadrant in lesions]
    description = f"{modality} image showing {parts[0]}"
    if len(parts) > 1:
        description += f" with {parts[1]}"
    if len(parts) > 2:
        description += f" and {parts[2]}"
    return keywords, description


def _background(rng: np.random.Generator, size: int, modality: str) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / float(size)
    texture = np.zeros((size, size))
    for _ in range(3):
        fx, fy = rng.uniform(2.0, 6.0, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        texture += np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
    texture = 0.04 * texture / 3.0 + rng.normal(0.0, 0.015, size=(size, size))
    disc = ((xx - 0.5) ** 2 + (yy - 0.5) ** 2) <= 0.47 ** 2
    base = np.array(_BACKGROUND[modality])
    image = np.zeros((size, size, 3))
    image[disc] = base
    image += texture[:, :, None] * disc[:, :, None]
    return image


def _paint_blob(image: np.ndarray, rng: np.random.Generator, quadrant: str, color: Sequence[float]):
    size = image.shape[0]
    row, col = divmod(QUADRANTS.index(quadrant), 2)
    cy = (row + rng.uniform(0.3, 0.7)) * size / 2.0
    cx = (col + rng.uniform(0.3, 0.7)) * size / 2.0
    sigma = rng.uniform(0.05, 0.08) * size
    yy, xx = np.mgrid[0:size, 0:size]
    weight = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))[:, :, None]
    image *= 1.0 - weight
    image += weight * np.asarray(color)


def _render(rng: np.random.Generator, size: int, modality: str, lesions) -> np.ndarray:
    image = _background(rng, size, modality)
    for cls, quadrant in lesions:
        _paint_blob(image, rng, quadrant, LESION_COLORS[cls])
    image = np.clip(image, 0.0, 1.0)
    if MODALITIES[modality] == "pgm":
        if modality == "red free":
            gray = image[:, :, 1]
        else:
            gray = image @ _LUMA
        image = gray
    return np.round(image * 255.0).astype(np.uint8)


def generate_synthetic_corpus(n: int, seed: int, image_size: int) -> List[SyntheticSample]:
    """
    Renders n samples; identical (n, seed, image_size) give identical samples.

    Args:
        n: Number of samples (>= 1).
        seed: Generator seed.
        image_size: Side length of the square images.
    """
    if n < 1:
        raise ValueError(f"synthetic corpus size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    modalities = list(MODALITIES)
    classes = list(LESION_COLORS)
    samples = []
    for _ in range(n):
        modality = modalities[rng.integers(len(modalities))]
        count = int(rng.integers(1, 4))
        picked = [classes[i] for i in rng.choice(len(classes), size=count, replace=False)]
        quadrants = sorted(rng.choice(len(QUADRANTS), size=count, replace=False))
        lesions = [(cls, QUADRANTS[q]) for cls, q in zip(picked, quadrants)]
        keywords, description = describe(modality, lesions)
        pixels = _render(rng, image_size, modality, lesions)
        samples.append(SyntheticSample(pixels, modality, lesions, keywords, description))
    logger.info(f"Generated {n} synthetic samples ({image_size}×{image_size}, seed {seed})")
    return samples


def write_synthetic_corpus(samples: Sequence[SyntheticSample], out_dir: PathLike,
                           corpus_name: str = "corpus.tsv") -> Path:
    """Writes images under out_dir/images and the corpus TSV; returns the corpus path."""
    out_dir = Path(out_dir)
    records = []
    for i, sample in enumerate(samples):
        image_path = out_dir / "images" / f"{i:05d}.{sample.extension}"
        write_netpbm(sample.pixels, image_path)
        records.append(CorpusRecord(str(image_path), sample.keywords, sample.description, i + 1))
    corpus_path = out_dir / corpus_name
    write_corpus(records, corpus_path)
    logger.info(f"Synthetic corpus of {len(samples)} records written to {corpus_path}")
    return corpus_path
