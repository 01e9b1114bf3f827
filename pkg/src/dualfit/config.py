"""Pipeline configuration: JSON file, DUALFIT_* environment, CLI flags.

Precedence is flags > environment > file > defaults. Keys use the flag names
with underscores (``band_n``, ``inpaint_tol``, ...).
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ValidationError
from .inpaint import SolverSpec
from .preprocess import BandSpec

ENV_PREFIX = "DUALFIT_"

DEFAULTS = {
    "flow_res": (384, 512),
    "out_res": (768, 1024),
    "band_n": 5,
    "kernel": 3,
    "inpaint_tol": 1e-5,
    "inpaint_max_iters": 10000,
    "dgt_threshold": 0.1,
}

PATH_KEYS = (
    "person",
    "parsing",
    "garment",
    "garment_parsing",
    "global_parsing",
    "ground_truth",
    "pose",
    "densepose",
    "warped",
    "garment_alpha",
    "hole_mask",
    "preserved",
    "mask",
    "output_dir",
    "report",
)

_CASTS = {
    "band_n": int,
    "kernel": int,
    "inpaint_tol": float,
    "inpaint_max_iters": int,
    "dgt_threshold": float,
}


def parse_resolution(value) -> tuple[int, int]:
    """``"WxH"`` or a two-element sequence -> ``(W, H)``."""
    if isinstance(value, str):
        parts = value.lower().split("x")
    else:
        parts = list(value)
    try:
        w, h = (int(p) for p in parts)
    except (TypeError, ValueError):
        raise ValidationError(f"bad resolution {value!r}, expected WxH") from None
    if w < 1 or h < 1:
        raise ValidationError(f"resolution must be positive, got {w}x{h}")
    return w, h


@dataclass
class PipelineConfig:
    flow_res: tuple = DEFAULTS["flow_res"]
    out_res: tuple = DEFAULTS["out_res"]
    band: BandSpec = field(default_factory=BandSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    dgt_threshold: float = DEFAULTS["dgt_threshold"]
    paths: dict = field(default_factory=dict)
    flows: dict = field(default_factory=dict)
    synth_flow: object = None

    def __post_init__(self):
        fw, fh = self.flow_res
        ow, oh = self.out_res
        if ow < fw or oh < fh:
            raise ValidationError(
                f"output resolution {ow}x{oh} is smaller than flow resolution {fw}x{fh}"
            )

    def path(self, key: str, required: bool = True):
        value = self.paths.get(key)
        if value is None and required:
            raise ValidationError(f"missing required path {key!r}")
        return None if value is None else Path(value)

    def echo(self) -> dict:
        return {
            "flow_res": list(self.flow_res),
            "out_res": list(self.out_res),
            "band_n": self.band.iterations,
            "kernel": self.band.kernel_size,
            "tol": self.solver.tolerance,
            "max_iters": self.solver.max_iterations,
            "dgt_threshold": self.dgt_threshold,
            "paths": {k: str(v) for k, v in sorted(self.paths.items())},
            "flows": {k: str(v) for k, v in sorted(self.flows.items())},
            "synth_flow": self.synth_flow,
        }

    def with_band(self, iterations: int) -> "PipelineConfig":
        data = asdict(self)
        data["band"] = BandSpec(self.band.kernel_size, iterations)
        data["solver"] = self.solver
        return PipelineConfig(**data)


def _read_file(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return data, path.parent


def _env_values(environ) -> dict:
    out = {}
    for key in (*DEFAULTS, *PATH_KEYS, "synth_flow"):
        name = ENV_PREFIX + key.upper()
        if name in environ:
            out[key] = environ[name]
    return out


def resolve(config_file=None, overrides: dict | None = None, environ=None) -> PipelineConfig:
    """Merge defaults, config file, environment and explicit overrides."""
    environ = os.environ if environ is None else environ
    merged: dict = dict(DEFAULTS)
    base = Path.cwd()
    file_values: dict = {}
    if config_file is not None:
        file_values, base = _read_file(config_file)
        # paths in the file are relative to the file
        for key in PATH_KEYS:
            if file_values.get(key) is not None:
                file_values[key] = str(base / file_values[key])
        flows = file_values.get("flows")
        if isinstance(flows, dict):
            file_values["flows"] = {k: str(base / v) for k, v in flows.items()}
    layers = [file_values, _env_values(environ),
              {k: v for k, v in (overrides or {}).items() if v is not None}]
    # flow files and a synthetic flow are alternatives: the later layer wins
    flow_source = None
    for layer in layers:
        prior_flows = merged.get("flows")
        merged.update(layer)
        if isinstance(prior_flows, dict) and isinstance(layer.get("flows"), dict):
            merged["flows"] = {**prior_flows, **layer["flows"]}
        if "synth_flow" in layer and "flows" not in layer:
            flow_source = "synth_flow"
        elif "flows" in layer and "synth_flow" not in layer:
            flow_source = "flows"
    if flow_source == "synth_flow":
        merged["flows"] = {}
    elif flow_source == "flows":
        merged["synth_flow"] = None

    try:
        for key, cast in _CASTS.items():
            merged[key] = cast(merged[key])
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad config value: {exc}") from exc

    flows = merged.get("flows") or {}
    if not isinstance(flows, dict):
        raise ValidationError("'flows' must map left/right/torso to .flo paths")
    return PipelineConfig(
        flow_res=parse_resolution(merged["flow_res"]),
        out_res=parse_resolution(merged["out_res"]),
        band=BandSpec(merged["kernel"], merged["band_n"]),
        solver=SolverSpec(merged["inpaint_tol"], merged["inpaint_max_iters"]),
        dgt_threshold=merged["dgt_threshold"],
        paths={k: merged[k] for k in PATH_KEYS if merged.get(k) is not None},
        flows=dict(flows),
        synth_flow=merged.get("synth_flow"),
    )
