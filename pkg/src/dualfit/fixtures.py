"""Deterministic synthetic try-on scene used by the tests and the CLI demo.

The flat garment is drawn exactly where the person wears it, so identity
flows warp it onto the worn garment.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .flow import synth_flow, write_flow
from .imaging import GARMENT_PARTS, Label, save_image, save_parsing_map

# (label, x0, x1, y0, y1) as fractions of width / height
_BOXES = (
    (Label.NECK, 0.44, 0.56, 0.24, 0.30),
    (Label.TORSO_GARMENT, 0.30, 0.70, 0.30, 0.68),
    (Label.LEFT_GARMENT, 0.14, 0.30, 0.30, 0.50),
    (Label.RIGHT_GARMENT, 0.70, 0.86, 0.30, 0.50),
    (Label.LEFT_HAND, 0.15, 0.27, 0.50, 0.58),
    (Label.RIGHT_HAND, 0.73, 0.85, 0.50, 0.58),
    (Label.LOWER_BODY, 0.32, 0.68, 0.68, 1.00),
)

_PART_KEYS = {Label.LEFT_GARMENT: "left", Label.RIGHT_GARMENT: "right", Label.TORSO_GARMENT: "torso"}


def scene(width: int = 48, height: int = 64, seed: int = 0) -> dict:
    """Arrays for person, parsing, garment and garment parsing."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width]
    parsing = np.zeros((height, width), dtype=np.uint8)
    head = ((xs - 0.5 * width) / (0.12 * width)) ** 2 + ((ys - 0.14 * height) / (0.1 * height)) ** 2
    parsing[head <= 1.0] = Label.HEAD_HAIR
    for label, x0, x1, y0, y1 in _BOXES:
        box = (
            (xs >= round(x0 * width)) & (xs < round(x1 * width))
            & (ys >= round(y0 * height)) & (ys < round(y1 * height))
        )
        parsing[box] = label

    u = xs / max(width - 1, 1)
    v = ys / max(height - 1, 1)
    person = np.stack([0.85 - 0.1 * v, 0.88 - 0.1 * v, 0.9 - 0.05 * u], axis=-1)
    skin = np.array([0.87, 0.70, 0.58])
    stripes = ((ys // max(height // 32, 1)) % 2).astype(np.float64)[..., None]
    garment_tex = stripes * np.array([0.75, 0.15, 0.20]) + (1 - stripes) * np.array([0.95, 0.92, 0.85])
    colours = {
        Label.HEAD_HAIR: np.array([0.20, 0.13, 0.08]),
        Label.NECK: skin,
        Label.LEFT_HAND: skin,
        Label.RIGHT_HAND: skin,
        Label.LOWER_BODY: np.array([0.15, 0.22, 0.45]),
    }
    for label, colour in colours.items():
        person[parsing == label] = colour
    garment_mask = np.isin(parsing, GARMENT_PARTS)
    person[garment_mask] = garment_tex[garment_mask]
    person = np.clip(person + rng.normal(0.0, 0.01, person.shape), 0.0, 1.0)

    garment = np.ones_like(person)
    garment[garment_mask] = person[garment_mask]
    garment_parsing = np.where(garment_mask, parsing, 0).astype(np.uint8)
    return {
        "person": person,
        "parsing": parsing,
        "garment": garment,
        "garment_parsing": garment_parsing,
    }


def make_fixture(
    out_dir,
    width: int = 48,
    height: int = 64,
    flow_width: int | None = None,
    flow_height: int | None = None,
    synth: str | None = None,
    seed: int = 0,
) -> Path:
    """Write the scene, identity part flows and a ready-to-run config.json.

    Returns the path of the config file. With ``synth`` set, the config
    requests synthetic flows instead of the written .flo files.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flow_width = flow_width or width // 2
    flow_height = flow_height or height // 2
    data = scene(width, height, seed)
    save_image(out_dir / "person.png", data["person"])
    save_parsing_map(out_dir / "parsing.png", data["parsing"])
    save_image(out_dir / "garment.png", data["garment"])
    save_parsing_map(out_dir / "garment_parsing.png", data["garment_parsing"])
    pose = np.zeros((height, width))
    save_image(out_dir / "pose.png", pose)

    flows = {}
    for part in GARMENT_PARTS:
        name = f"flow_{_PART_KEYS[part]}.flo"
        write_flow(out_dir / name, synth_flow("identity", flow_width, flow_height))
        flows[_PART_KEYS[part]] = name

    config = {
        "person": "person.png",
        "parsing": "parsing.png",
        "garment": "garment.png",
        "garment_parsing": "garment_parsing.png",
        "ground_truth": "person.png",
        "pose": "pose.png",
        "flow_res": f"{flow_width}x{flow_height}",
        "out_res": f"{width}x{height}",
        "output_dir": "out",
    }
    if synth:
        config["synth_flow"] = synth
    else:
        config["flows"] = flows
    path = out_dir / "config.json"
    path.write_text(json.dumps(config, indent=2) + "\n")
    return path
