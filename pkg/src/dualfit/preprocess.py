"""Narrow-band erosion, inpainting-mask composition and preserved-region input."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ValidationError
from .imaging import (
    FILL_VALUE,
    GARMENT_PARTS,
    UPPER_BODY,
    Label,
    as_image,
    as_mask,
    check_parsing,
    mask_from_labels,
    same_size,
)


@dataclass(frozen=True)
class BandSpec:
    kernel_size: int = 3
    iterations: int = 5

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValidationError(f"kernel size must be odd and >= 1, got {self.kernel_size}")
        if self.iterations < 0:
            raise ValidationError(f"iterations must be >= 0, got {self.iterations}")

    @property
    def radius(self) -> int:
        return (self.kernel_size - 1) // 2


@dataclass(frozen=True)
class PreprocessResult:
    preserved: np.ndarray
    inpaint_mask: np.ndarray
    bands: dict = field(default_factory=dict)


def _erode_once(mask: np.ndarray, r: int) -> np.ndarray:
    h, w = mask.shape
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=bool)
    padded[r : r + h, r : r + w] = mask
    # the square window is separable: rows first, then columns
    rows = np.ones((h + 2 * r, w), dtype=bool)
    for dx in range(2 * r + 1):
        rows &= padded[:, dx : dx + w]
    out = np.ones((h, w), dtype=bool)
    for dy in range(2 * r + 1):
        out &= rows[dy : dy + h]
    return out


def erode(mask, spec: BandSpec = BandSpec()) -> np.ndarray:
    """Binary erosion with a square kernel, applied ``spec.iterations`` times.

    Pixels outside the frame count as background, so foreground touching the
    border erodes inward.
    """
    out = as_mask(mask).copy()
    if spec.radius == 0:
        return out
    for _ in range(spec.iterations):
        if not out.any():
            break
        out = _erode_once(out, spec.radius)
    return out


def narrow_band(mask, spec: BandSpec = BandSpec()) -> np.ndarray:
    mask = as_mask(mask)
    return mask & ~erode(mask, spec)


def chebyshev_depth(mask) -> np.ndarray:
    """Chessboard distance from each foreground pixel to the nearest
    background pixel, with the area outside the frame counted as background."""
    mask = as_mask(mask)
    padded = np.pad(mask, 1, constant_values=False)
    depth = ndimage.distance_transform_cdt(padded, metric="chessboard")
    return depth[1:-1, 1:-1]


def band_width(mask, band) -> int:
    """Measured thickness of ``band`` relative to the region ``mask``."""
    band = as_mask(band)
    if not band.any():
        return 0
    return int(chebyshev_depth(mask)[band].max())


def build_inpaint_mask(parsing, bands, extra_holes=None) -> np.ndarray:
    """Union of hands, neck, the part bands and the assembly holes."""
    parsing = check_parsing(parsing)
    bands = list(bands.values()) if isinstance(bands, dict) else list(bands)
    out = mask_from_labels(parsing, [Label.LEFT_HAND, Label.RIGHT_HAND, Label.NECK])
    for band in bands:
        band = as_mask(band)
        same_size(out, band)
        out |= band
    if extra_holes is not None:
        extra_holes = as_mask(extra_holes)
        same_size(out, extra_holes)
        out |= extra_holes
    return out


def build_preserved_input(person, parsing, warped, warped_alpha, inpaint_mask) -> np.ndarray:
    """Blank the upper body (head and hair kept), paste the warped garment,
    then blank the inpainting region."""
    person = as_image(person)
    parsing = check_parsing(parsing)
    warped = as_image(warped)
    warped_alpha = as_mask(warped_alpha)
    inpaint_mask = as_mask(inpaint_mask)
    same_size(person, parsing, warped, warped_alpha, inpaint_mask)
    if warped.shape[2] != person.shape[2]:
        raise ValidationError("warped garment and person differ in channel count")

    out = person.copy()
    out[mask_from_labels(parsing, UPPER_BODY)] = FILL_VALUE
    out[warped_alpha] = warped[warped_alpha]
    out[inpaint_mask] = FILL_VALUE
    return out


def part_masks(parsing, warped_alpha) -> dict:
    """Sleeve and torso masks of the warped garment."""
    parsing = check_parsing(parsing)
    warped_alpha = as_mask(warped_alpha)
    same_size(parsing, warped_alpha)
    return {part: (parsing == part) & warped_alpha for part in GARMENT_PARTS}


def preprocess(
    person, parsing, warped, warped_alpha, hole_mask=None, spec: BandSpec = BandSpec()
) -> PreprocessResult:
    parsing = check_parsing(parsing)
    parts = part_masks(parsing, warped_alpha)
    bands = {part: narrow_band(m, spec) for part, m in parts.items()}
    mask = build_inpaint_mask(parsing, bands, hole_mask)
    preserved = build_preserved_input(person, parsing, warped, warped_alpha, mask)
    return PreprocessResult(preserved=preserved, inpaint_mask=mask, bands=bands)
