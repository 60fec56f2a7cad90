"""8-bit grayscale PGM (P5) files for rendered samples."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """Write an image with values in [0, 1] as binary PGM."""
    Image.fromarray(to_uint8(img), mode="L").save(path, format="PPM")


def read_pgm(path: str | Path) -> np.ndarray:
    """Read a PGM back as float64 in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode != "L":
                raise DataError(f"{path}: expected 8-bit grayscale, got mode {im.mode}")
            return np.asarray(im, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"{path}: cannot read PGM: {exc}") from exc


def write_pgm_dir(directory: str | Path, images: np.ndarray, prefix: str = "sample") -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(images):
        p = directory / f"{prefix}_{i:04d}.pgm"
        write_pgm(p, img)
        paths.append(p)
    return paths


def read_pgm_dir(directory: str | Path) -> tuple[list[str], np.ndarray]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"{directory}: not a directory")
    files = sorted(directory.glob("*.pgm"))
    if not files:
        raise DataError(f"{directory}: no .pgm files")
    imgs = [read_pgm(f) for f in files]
    shapes = {im.shape for im in imgs}
    if len(shapes) != 1:
        raise DataError(f"{directory}: images have differing shapes {sorted(shapes)}")
    return [f.name for f in files], np.stack(imgs)
