"""Raster conventions, parsing labels and PNG I/O.

Images are float64 arrays of shape (H, W, C) with C in {1, 3} and samples on
the unit interval. Binary masks are bool arrays of shape (H, W). Parsing maps
are uint8 arrays of shape (H, W) holding raw label codes.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from PIL import Image as PILImage

from .errors import (
    CorruptImageError,
    DimensionMismatchError,
    InvalidLabelError,
    UnsupportedImageError,
    ValidationError,
)

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# value written into removed regions of the preserved-region input
FILL_VALUE = 0.5


class Label(enum.IntEnum):
    BACKGROUND = 0
    HEAD_HAIR = 1
    LEFT_HAND = 2
    RIGHT_HAND = 3
    NECK = 4
    LEFT_GARMENT = 5  # left sleeve
    RIGHT_GARMENT = 6  # right sleeve
    TORSO_GARMENT = 7
    LOWER_BODY = 8


GARMENT_PARTS = (Label.LEFT_GARMENT, Label.RIGHT_GARMENT, Label.TORSO_GARMENT)
UPPER_BODY = frozenset(
    {
        Label.LEFT_HAND,
        Label.RIGHT_HAND,
        Label.NECK,
        Label.LEFT_GARMENT,
        Label.RIGHT_GARMENT,
        Label.TORSO_GARMENT,
    }
)
MAX_LABEL = max(Label)


@dataclass(frozen=True)
class AuxInputs:
    """Densepose and pose heatmap. Carried through, never consumed."""

    densepose: np.ndarray
    pose_heatmap: np.ndarray

    def __post_init__(self):
        densepose = as_image(self.densepose)
        pose = as_image(self.pose_heatmap)
        if densepose.shape[2] != 3:
            raise ValidationError("densepose must have 3 channels")
        if densepose.shape[:2] != pose.shape[:2]:
            raise DimensionMismatchError("densepose and pose heatmap differ in size")
        object.__setattr__(self, "densepose", densepose)
        object.__setattr__(self, "pose_heatmap", pose)

    def check_matches(self, person: np.ndarray) -> None:
        if self.densepose.shape[:2] != person.shape[:2]:
            raise DimensionMismatchError("auxiliary inputs do not match the person image")


def as_image(data) -> np.ndarray:
    """Validate and normalise an image array to float64 (H, W, C)."""
    arr = np.asarray(data)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValidationError(f"image must be HxW, HxWx1 or HxWx3, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError("image must be at least 1x1")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64, copy=False)


def as_mask(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValidationError(f"mask must be 2-D, got shape {arr.shape}")
    return arr.astype(bool, copy=False)


def check_parsing(data) -> np.ndarray:
    """Return the parsing map as uint8, raising on the first invalid code."""
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValidationError(f"parsing map must be 2-D, got shape {arr.shape}")
    flat = arr.ravel()
    bad = np.flatnonzero((flat < 0) | (flat > MAX_LABEL))
    if bad.size:
        idx = int(bad[0])
        raise InvalidLabelError(int(flat[idx]), idx)
    return arr.astype(np.uint8, copy=False)


def same_size(*arrays) -> tuple[int, int]:
    shapes = {a.shape[:2] for a in arrays}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"size mismatch: {sorted(shapes)}")
    return shapes.pop()


def quantize(image: np.ndarray) -> np.ndarray:
    """Unit interval -> uint8 with round-half-away-from-zero."""
    scaled = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def _png_header(path: Path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(33)
    if len(head) < 33 or head[:8] != PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise CorruptImageError(f"{path}: not a PNG stream")
    bit_depth, color_type = struct.unpack(">BB", head[24:26])
    return bit_depth, color_type


def _read_png(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    bit_depth, color_type = _png_header(path)
    if color_type not in (0, 2):
        raise UnsupportedImageError(
            f"{path}: unsupported PNG color type {color_type} (need gray or RGB)"
        )
    if bit_depth != 8:
        raise UnsupportedImageError(f"{path}: unsupported bit depth {bit_depth} (need 8)")
    try:
        with PILImage.open(path) as im:
            im.load()
            arr = np.array(im)
    except (OSError, SyntaxError, ValueError) as exc:
        raise CorruptImageError(f"{path}: corrupt PNG stream ({exc})") from exc
    if arr.dtype != np.uint8:
        raise UnsupportedImageError(f"{path}: decoded to {arr.dtype}")
    return arr


def _write_png(path, arr: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    PILImage.fromarray(arr).save(path, format="PNG")


def load_image(path) -> np.ndarray:
    """Read an 8-bit gray or RGB PNG as a float (H, W, C) image."""
    return as_image(_read_png(path))


def save_image(path, image) -> None:
    _write_png(path, quantize(as_image(image)))


def load_mask(path) -> np.ndarray:
    arr = _read_png(path)
    if arr.ndim == 3:
        arr = arr.max(axis=2)
    return arr >= 128


def save_mask(path, mask) -> None:
    _write_png(path, as_mask(mask).astype(np.uint8) * 255)


def load_parsing_map(path) -> np.ndarray:
    arr = _read_png(path)
    if arr.ndim != 2:
        raise UnsupportedImageError(f"{path}: parsing map must be grayscale")
    return check_parsing(arr)


def save_parsing_map(path, parsing) -> None:
    _write_png(path, check_parsing(parsing))


def mask_from_labels(parsing, labels: Iterable[int]) -> np.ndarray:
    parsing = np.asarray(parsing)
    codes = [int(Label(code)) for code in labels]
    if not codes:
        return np.zeros(parsing.shape, dtype=bool)
    return np.isin(parsing, codes)


def overlay(base, top, alpha) -> np.ndarray:
    """Take ``top`` where ``alpha`` is set and ``base`` elsewhere."""
    base = as_image(base)
    top = as_image(top)
    alpha = as_mask(alpha)
    same_size(base, top, alpha)
    if base.shape[2] != top.shape[2]:
        raise DimensionMismatchError("base and top differ in channel count")
    return np.where(alpha[:, :, None], top, base)
