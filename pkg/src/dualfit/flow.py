"""Flow fields: .flo I/O, upsampling, backward warping and part assembly.

A flow field is a float64 array of shape (H, W, 2) holding (u, v)
displacements in pixels of its own grid. Warping is backward: output pixel
(x, y) samples the source at (x + u, y + v).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    FlowFormatError,
    SingularSystemError,
    ValidationError,
)
from .imaging import GARMENT_PARTS, Label, as_image, as_mask, same_size

FLO_MAGIC = b"PIEH"
COVERAGE_THRESHOLD = 0.5


def as_flow(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValidationError(f"flow must be HxWx2, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValidationError("flow contains non-finite values")
    return arr


def read_flow(path) -> np.ndarray:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != FLO_MAGIC:
        raise FlowFormatError(f"{path}: bad magic {raw[:4]!r}, expected {FLO_MAGIC!r}")
    if len(raw) < 12:
        raise FlowFormatError(f"{path}: truncated header")
    width, height = struct.unpack("<ii", raw[4:12])
    if width < 1 or height < 1:
        raise FlowFormatError(f"{path}: invalid dimensions {width}x{height}")
    expected = 12 + width * height * 8
    if len(raw) < expected:
        raise FlowFormatError(
            f"{path}: truncated payload ({len(raw)} bytes, expected {expected})"
        )
    if len(raw) > expected:
        raise FlowFormatError(f"{path}: {len(raw) - expected} trailing bytes")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(height, width, 2)
    if not np.isfinite(data).all():
        raise FlowFormatError(f"{path}: non-finite flow values")
    return data.astype(np.float64)


def write_flow(path, flow) -> None:
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(FLO_MAGIC + struct.pack("<ii", w, h) + flow.astype("<f4").tobytes())


def _axis_weights(n_src: int, n_dst: int):
    # sample-centre convention, clamped at the edges
    coord = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    coord = np.clip(coord, 0.0, n_src - 1)
    i0 = np.floor(coord).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, coord - i0


def upsample_flow(flow, target_w: int, target_h: int) -> np.ndarray:
    """Bilinearly resample a flow onto a finer grid and rescale its vectors."""
    flow = as_flow(flow)
    src_h, src_w = flow.shape[:2]
    if target_w < src_w or target_h < src_h:
        raise ValidationError(
            f"cannot downscale flow from {src_w}x{src_h} to {target_w}x{target_h}"
        )
    x0, x1, wx = _axis_weights(src_w, target_w)
    y0, y1, wy = _axis_weights(src_h, target_h)
    # a + w * (b - a) keeps constant fields exact
    rows = flow[:, x0] + wx[None, :, None] * (flow[:, x1] - flow[:, x0])
    out = rows[y0] + wy[:, None, None] * (rows[y1] - rows[y0])
    out[..., 0] *= target_w / src_w
    out[..., 1] *= target_h / src_h
    return out


@dataclass(frozen=True)
class WarpedPart:
    image: np.ndarray
    coverage: np.ndarray
    part_id: Label | None = None

    def __post_init__(self):
        same_size(self.image, self.coverage)


def _bilinear(data: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    h, w = data.shape[:2]
    sx = np.clip(sx, 0.0, w - 1)
    sy = np.clip(sy, 0.0, h - 1)
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[..., None]
    fy = (sy - y0)[..., None]
    top = data[y0, x0] + fx * (data[y0, x1] - data[y0, x0])
    bottom = data[y1, x0] + fx * (data[y1, x1] - data[y1, x0])
    return top + fy * (bottom - top)


def sample_coords(flow, source_shape) -> tuple[np.ndarray, np.ndarray]:
    """Source-pixel coordinates addressed by each output pixel of ``flow``."""
    fh, fw = flow.shape[:2]
    sh, sw = source_shape[:2]
    ys, xs = np.mgrid[0:fh, 0:fw].astype(np.float64)
    sx = xs + flow[..., 0]
    sy = ys + flow[..., 1]
    if (sh, sw) != (fh, fw):
        sx = (sx + 0.5) * (sw / fw) - 0.5
        sy = (sy + 0.5) * (sh / fh) - 0.5
    return sx, sy


def apply_flow(source, source_alpha, flow, part_id=None) -> WarpedPart:
    """Backward-warp ``source`` and its alpha through ``flow``.

    A pixel is covered when its bilinear footprint lies inside the source
    frame and the interpolated alpha reaches 0.5. Uncovered pixels are 0.
    """
    source = as_image(source)
    source_alpha = as_mask(source_alpha)
    same_size(source, source_alpha)
    flow = as_flow(flow)
    sh, sw = source.shape[:2]
    sx, sy = sample_coords(flow, source.shape)
    inside = (sx >= 0) & (sx <= sw - 1) & (sy >= 0) & (sy <= sh - 1)
    values = _bilinear(source, sx, sy)
    alpha = _bilinear(source_alpha.astype(np.float64)[..., None], sx, sy)[..., 0]
    coverage = inside & (alpha >= COVERAGE_THRESHOLD)
    image = np.where(coverage[..., None], values, 0.0)
    return WarpedPart(image=image, coverage=coverage, part_id=part_id)


def assemble_parts(
    parts: Mapping[Label, WarpedPart], global_parsing: Mapping[Label, np.ndarray]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assemble warped parts into one garment using the global parsing.

    Returns ``(warped, garment_alpha, hole_mask)``. A pixel assigned to part
    ``k`` takes part ``k``'s sample; it lands in ``garment_alpha`` when that
    part covers it and in ``hole_mask`` otherwise. Unassigned pixels are 0 in
    all three outputs.
    """
    for part in GARMENT_PARTS:
        if part not in parts:
            raise ValidationError(f"missing warped part {part.name}")
        if part not in global_parsing:
            raise ValidationError(f"missing global parsing mask for {part.name}")
    images = [as_image(parts[p].image) for p in GARMENT_PARTS]
    covers = [as_mask(parts[p].coverage) for p in GARMENT_PARTS]
    assign = [as_mask(global_parsing[p]) for p in GARMENT_PARTS]
    same_size(*images, *covers, *assign)
    channels = {im.shape[2] for im in images}
    if len(channels) != 1:
        raise DimensionMismatchError("warped parts differ in channel count")

    claimed = np.zeros(assign[0].shape, dtype=np.int32)
    for m in assign:
        claimed += m
    if (claimed > 1).any():
        y, x = np.argwhere(claimed > 1)[0]
        raise ValidationError(f"global parsing masks overlap (first at x={x}, y={y})")

    warped = np.zeros_like(images[0])
    alpha = np.zeros(assign[0].shape, dtype=bool)
    holes = np.zeros(assign[0].shape, dtype=bool)
    for image, cover, region in zip(images, covers, assign):
        warped[region] = image[region]
        alpha |= region & cover
        holes |= region & ~cover
    return warped, alpha, holes


class Style(enum.Enum):
    TUCKED_IN = "tucked_in"
    TUCKED_OUT = "tucked_out"


@dataclass(frozen=True)
class WearingStyle:
    style: Style
    ratio_flat: float
    ratio_warped: float
    disparity: float


def bbox_ratio(mask) -> float:
    """Height / width of the tight bounding box of a non-empty mask."""
    mask = as_mask(mask)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise ValidationError("empty mask has no bounding box")
    height = ys.max() - ys.min() + 1
    width = xs.max() - xs.min() + 1
    return float(height) / float(width)


def dgt_classify(flat_torso, warped_torso, threshold: float = 0.1) -> WearingStyle:
    """Decide tucked-in vs tucked-out from the torso aspect-ratio change.

    Tucking shortens the visible torso, so a warped ratio below
    ``ratio_flat * (1 - threshold)`` is read as tucked-in.
    """
    flat = bbox_ratio(flat_torso)
    warped = bbox_ratio(warped_torso)
    style = Style.TUCKED_IN if warped < flat * (1.0 - threshold) else Style.TUCKED_OUT
    return WearingStyle(style, flat, warped, abs(warped - flat) / flat)


def truncation_mask(style: WearingStyle, preserved_region) -> np.ndarray:
    preserved_region = as_mask(preserved_region)
    if style.style is Style.TUCKED_IN:
        return preserved_region.copy()
    return np.zeros_like(preserved_region)


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r2 * np.log(r2)
    return np.where(r2 > 0, out, 0.0)


class ThinPlateSpline:
    """2-D thin-plate spline mapping ``dst`` control points onto ``src``."""

    def __init__(self, dst_points, src_points, regularization: float = 0.0):
        dst = np.asarray(dst_points, dtype=np.float64)
        src = np.asarray(src_points, dtype=np.float64)
        if dst.shape != src.shape or dst.ndim != 2 or dst.shape[1] != 2:
            raise ValidationError("control points must be two matching (N, 2) arrays")
        if regularization < 0:
            raise ValidationError("regularization must be >= 0")
        n = dst.shape[0]
        if n < 3:
            raise SingularSystemError("thin-plate spline needs at least 3 control points")
        if np.unique(dst, axis=0).shape[0] != n:
            raise SingularSystemError("duplicate control points")
        P = np.hstack([np.ones((n, 1)), dst])
        if np.linalg.matrix_rank(P) < 3:
            raise SingularSystemError("control points are collinear")

        d2 = ((dst[:, None, :] - dst[None, :, :]) ** 2).sum(-1)
        L = np.zeros((n + 3, n + 3))
        L[:n, :n] = _tps_kernel(d2) + regularization * np.eye(n)
        L[:n, n:] = P
        L[n:, :n] = P.T
        rhs = np.zeros((n + 3, 2))
        rhs[:n] = src
        try:
            coef = np.linalg.solve(L, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"singular thin-plate system: {exc}") from exc
        self.control = dst
        self.weights = coef[:n]
        self.affine = coef[n:]

    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        flat = pts.reshape(-1, 2)
        d2 = ((flat[:, None, :] - self.control[None, :, :]) ** 2).sum(-1)
        out = self.affine[0] + flat @ self.affine[1:] + _tps_kernel(d2) @ self.weights
        return out.reshape(pts.shape)


def _transform(kind: str, params: dict):
    if kind == "identity":
        return lambda p: p
    if kind == "translate":
        offset = np.array([params.get("dx", 0.0), params.get("dy", 0.0)], dtype=np.float64)
        return lambda p: p + offset
    if kind == "affine":
        A = np.asarray(params["matrix"], dtype=np.float64)
        if A.shape != (2, 3):
            raise ValidationError("affine matrix must be 2x3")
        return lambda p: p @ A[:, :2].T + A[:, 2]
    if kind == "tps":
        pairs = params["pairs"]
        dst = [pair[0] for pair in pairs]
        src = [pair[1] for pair in pairs]
        return ThinPlateSpline(dst, src, params.get("regularization", 0.0))
    raise ValidationError(f"unknown synthetic flow kind {kind!r}")


def synth_flow(kind: str, width: int, height: int, *, out_size=None, **params) -> np.ndarray:
    """Displacement field whose backward warp realises a named transform.

    ``kind`` is one of identity, translate (dx, dy), affine (matrix, 2x3,
    mapping output to source coordinates) or tps (pairs of
    ``(output_point, source_point)``, optional regularization).

    With ``out_size=(W, H)`` the transform is expressed in pixels of a WxH
    frame, and the returned width x height field carries it in its own pixel
    units, ready for :func:`upsample_flow`.
    """
    transform = _transform(kind, params)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    grid = np.stack([xs, ys], axis=-1)
    if kind == "translate" and out_size is None:
        # exact constant without coordinate round-off
        flow = np.empty((height, width, 2))
        flow[..., 0] = params.get("dx", 0.0)
        flow[..., 1] = params.get("dy", 0.0)
        return flow
    if out_size is None:
        return transform(grid) - grid
    scale = np.array([out_size[0] / width, out_size[1] / height])
    outer = (grid + 0.5) * scale - 0.5
    return (transform(outer) - outer) / scale


def parse_synth_spec(text: str) -> tuple[str, dict]:
    """Parse ``identity``, ``translate:DX,DY``, ``affine:a,b,c,d,e,f`` or
    ``tps:x,y,sx,sy;...[@lambda]`` into ``(kind, params)``."""
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "identity":
            return kind, {}
        if kind == "translate":
            dx, dy = (float(v) for v in rest.split(","))
            return kind, {"dx": dx, "dy": dy}
        if kind == "affine":
            vals = [float(v) for v in rest.split(",")]
            if len(vals) != 6:
                raise ValueError("need 6 coefficients")
            return kind, {"matrix": np.reshape(vals, (2, 3))}
        if kind == "tps":
            body, _, lam = rest.partition("@")
            pairs = []
            for chunk in body.split(";"):
                x, y, sx, sy = (float(v) for v in chunk.split(","))
                pairs.append(((x, y), (sx, sy)))
            return kind, {"pairs": pairs, "regularization": float(lam) if lam else 0.0}
    except ValueError as exc:
        raise ValidationError(f"bad synthetic flow spec {text!r}: {exc}") from exc
    raise ValidationError(f"unknown synthetic flow kind {kind!r}")


def warp_garment(
    garment,
    garment_parsing,
    flows: Mapping[Label, np.ndarray],
    global_parsing: Mapping[Label, np.ndarray],
    out_size: Sequence[int] | None = None,
) -> tuple[dict, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Warp each garment part with its own flow and assemble the result.

    Flows coarser than ``out_size`` are upsampled first.
    """
    garment = as_image(garment)
    garment_parsing = np.asarray(garment_parsing)
    same_size(garment, garment_parsing)
    parts = {}
    for part in GARMENT_PARTS:
        flow = as_flow(flows[part])
        if out_size is not None and tuple(out_size) != (flow.shape[1], flow.shape[0]):
            flow = upsample_flow(flow, out_size[0], out_size[1])
        parts[part] = apply_flow(garment, garment_parsing == part, flow, part_id=part)
    return parts, assemble_parts(parts, global_parsing)
