"""Harmonic fill of masked regions (discrete Laplace, Dirichlet boundary).

Stands in for a learned generator: masked pixels are replaced by the
solution of the 4-neighbour Laplace equation whose boundary values are the
surrounding unmasked pixels. Solved with red-black Gauss-Seidel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .errors import UndeterminedSystemError, ValidationError
from .imaging import as_image, as_mask, same_size

log = logging.getLogger(__name__)

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
# (dy, dx) in fixed summation order
_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class SolverSpec:
    tolerance: float = 1e-5
    max_iterations: int = 10000

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValidationError(f"tolerance must be > 0, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")


class InpaintResult(NamedTuple):
    image: np.ndarray
    residual: float
    iterations: int
    converged: bool


class _Stencil:
    """Gather indices of the in-frame 4-neighbours of a set of pixels.

    The mean is formed as ``ref + sum(n_i - ref) / count`` with ``ref`` the
    first in-frame neighbour, which is exact when all neighbours agree.
    """

    def __init__(self, shape, ys, xs):
        h, w = shape
        self.target = (ys + 1) * (w + 2) + (xs + 1)
        idx, valid = [], []
        for dy, dx in _OFFSETS:
            ny, nx = ys + dy, xs + dx
            valid.append((ny >= 0) & (ny < h) & (nx >= 0) & (nx < w))
            idx.append((ny + 1) * (w + 2) + (nx + 1))
        self.idx = np.stack(idx)
        self.valid = np.stack(valid).astype(np.float64)[..., None]
        first = np.argmax(self.valid[..., 0], axis=0)
        self.ref = self.idx[first, np.arange(ys.size)]
        self.count = self.valid.sum(axis=0)

    def mean(self, flat: np.ndarray) -> np.ndarray:
        # flat: padded image reshaped to (pixels, channels)
        ref = flat[self.ref]
        diff = (flat[self.idx] - ref) * self.valid
        return ref + diff.sum(axis=0) / self.count


def _padded_flat(image: np.ndarray) -> np.ndarray:
    padded = np.pad(image, ((1, 1), (1, 1), (0, 0)))
    return padded.reshape(-1, image.shape[2])


def _unpad(flat: np.ndarray, shape, channels: int) -> np.ndarray:
    h, w = shape
    return flat.reshape(h + 2, w + 2, channels)[1:-1, 1:-1]


def _initial_fill(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Mean Dirichlet value of each masked component, broadcast over it."""
    h, w = mask.shape
    labels, count = ndimage.label(mask, structure=_CROSS)
    channels = image.shape[2]
    sums = np.zeros((count + 1, channels))
    weights = np.zeros(count + 1)
    ys, xs = np.nonzero(mask)
    comp = labels[ys, xs]
    for dy, dx in _OFFSETS:
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        ok[ok] &= ~mask[ny[ok], nx[ok]]
        np.add.at(sums, comp[ok], image[ny[ok], nx[ok]])
        np.add.at(weights, comp[ok], 1.0)
    empty = np.flatnonzero(weights[1:] == 0) + 1
    if empty.size:
        y, x = np.argwhere(labels == empty[0])[0]
        raise UndeterminedSystemError(
            f"masked component at x={x}, y={y} has no unmasked neighbour"
        )
    lo = np.full((count + 1, channels), np.inf)
    hi = np.full((count + 1, channels), -np.inf)
    for dy, dx in _OFFSETS:
        ny, nx = ys + dy, xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        ok[ok] &= ~mask[ny[ok], nx[ok]]
        np.minimum.at(lo, comp[ok], image[ny[ok], nx[ok]])
        np.maximum.at(hi, comp[ok], image[ny[ok], nx[ok]])
    # clamp so a constant boundary gives that constant exactly
    means = np.clip(sums / np.maximum(weights, 1.0)[:, None], lo, hi)
    out = image.copy()
    out[ys, xs] = means[comp]
    return out


def laplace_residual(image, mask) -> float:
    """Largest |u - mean of in-frame 4-neighbours| over masked pixels."""
    image = as_image(image)
    mask = as_mask(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return 0.0
    stencil = _Stencil(mask.shape, ys, xs)
    flat = _padded_flat(image)
    return float(np.abs(flat[stencil.target] - stencil.mean(flat)).max())


def harmonic_inpaint(image, mask, spec: SolverSpec = SolverSpec()) -> InpaintResult:
    """Fill ``mask`` with the harmonic interpolant of its surroundings.

    Every channel is solved independently; pixels outside the mask are
    returned untouched. Iteration stops once a sweep moves no pixel by more
    than the tolerance and the geometric-rate estimate of the remaining error
    is also within it. On hitting ``max_iterations`` the last iterate is
    returned with ``converged=False``.
    """
    image = as_image(image)
    mask = as_mask(mask)
    same_size(image, mask)
    if not mask.any():
        return InpaintResult(image.copy(), 0.0, 0, True)
    if mask.all():
        raise UndeterminedSystemError("mask covers the whole frame")

    channels = image.shape[2]
    flat = _padded_flat(_initial_fill(image, mask))
    parity = np.indices(mask.shape).sum(0) % 2
    classes = [_Stencil(mask.shape, *np.nonzero(mask & (parity == p))) for p in (0, 1)]
    classes = [c for c in classes if c.target.size]

    tol = spec.tolerance
    prev_delta = np.inf
    residual = np.inf
    converged = False
    iterations = 0
    for iterations in range(1, spec.max_iterations + 1):
        delta = 0.0
        for stencil in classes:
            new = stencil.mean(flat)
            delta = max(delta, float(np.abs(new - flat[stencil.target]).max()))
            flat[stencil.target] = new
        if delta <= tol:
            rate = delta / prev_delta if prev_delta > 0 else 0.0
            tail = delta * rate / (1.0 - rate) if rate < 1.0 else np.inf
            if tail <= tol or delta <= 1e-3 * tol:
                residual = laplace_residual(_unpad(flat, mask.shape, channels), mask)
                if residual <= tol:
                    converged = True
                    break
        prev_delta = delta

    out = image.copy()
    out[mask] = _unpad(flat, mask.shape, channels)[mask]
    if not converged:
        residual = laplace_residual(out, mask)
        log.warning(
            "harmonic fill did not converge in %d iterations (residual %.3g)",
            spec.max_iterations,
            residual,
        )
    return InpaintResult(out, residual, iterations, converged)


def compose_tryon(preserved, mask, spec: SolverSpec = SolverSpec()) -> InpaintResult:
    """Final try-on output: ``preserved`` with the masked region regenerated."""
    preserved = as_image(preserved)
    mask = as_mask(mask)
    same_size(preserved, mask)
    if not mask.any():
        return InpaintResult(preserved.copy(), 0.0, 0, True)
    return harmonic_inpaint(preserved, mask, spec)
