"""Stage runners: warp -> preprocess -> try-on, plus the band-width sweep.

Every runner loads all of its inputs before writing anything, writes its
intermediates as PNGs and returns a JSON-serialisable manifest.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from contextlib import contextmanager
from pathlib import Path

from .config import PipelineConfig
from .errors import DimensionMismatchError, ValidationError
from .flow import (
    Style,
    as_flow,
    dgt_classify,
    parse_synth_spec,
    read_flow,
    synth_flow,
    truncation_mask,
    warp_garment,
)
from .imaging import (
    GARMENT_PARTS,
    Label,
    load_image,
    load_mask,
    load_parsing_map,
    save_image,
    save_mask,
)
from .inpaint import compose_tryon
from .metrics import UNAVAILABLE, evaluate_pair, evaluate_pairs
from .preprocess import band_width, part_masks, preprocess

log = logging.getLogger(__name__)

PART_KEYS = {Label.LEFT_GARMENT: "left", Label.RIGHT_GARMENT: "right", Label.TORSO_GARMENT: "torso"}

OUTPUT_NAMES = {
    "warped": "warped_garment.png",
    "garment_alpha": "garment_alpha.png",
    "hole_mask": "hole_mask.png",
    "preserved": "preserved.png",
    "inpaint_mask": "inpaint_mask.png",
    "tryon": "tryon.png",
}


class _Timer:
    def __init__(self):
        self.timings = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = time.perf_counter() - start


def _check_size(name: str, array, size) -> None:
    w, h = size
    if array.shape[:2] != (h, w):
        raise DimensionMismatchError(
            f"{name} is {array.shape[1]}x{array.shape[0]}, expected {w}x{h}"
        )


def load_flows(cfg: PipelineConfig) -> dict:
    """Part flows at the flow resolution, from .flo files or a synth spec."""
    fw, fh = cfg.flow_res
    flows = {}
    if cfg.flows:
        for part in GARMENT_PARTS:
            key = PART_KEYS[part]
            if key not in cfg.flows:
                raise ValidationError(f"missing flow for part {key!r}")
            flow = read_flow(cfg.flows[key])
            _check_size(f"{key} flow", flow, cfg.flow_res)
            flows[part] = flow
        return flows
    spec = cfg.synth_flow
    if spec is None:
        raise ValidationError("no flows given: set 'flows' or 'synth_flow'")
    specs = spec if isinstance(spec, dict) else {PART_KEYS[p]: spec for p in GARMENT_PARTS}
    for part in GARMENT_PARTS:
        key = PART_KEYS[part]
        if key not in specs:
            raise ValidationError(f"missing synthetic flow for part {key!r}")
        kind, params = parse_synth_spec(specs[key])
        flows[part] = synth_flow(kind, fw, fh, out_size=cfg.out_res, **params)
    return flows


def _global_masks(cfg: PipelineConfig) -> dict:
    key = "global_parsing" if cfg.paths.get("global_parsing") else "parsing"
    labels = load_parsing_map(cfg.path(key))
    _check_size(key, labels, cfg.out_res)
    return {part: labels == part for part in GARMENT_PARTS}


def _unused_inputs(cfg: PipelineConfig) -> list:
    return [k for k in ("pose", "densepose") if cfg.paths.get(k)]


def warp_arrays(cfg: PipelineConfig) -> dict:
    garment = load_image(cfg.path("garment"))
    garment_parsing = load_parsing_map(cfg.path("garment_parsing"))
    _check_size("garment", garment, cfg.out_res)
    _check_size("garment parsing", garment_parsing, cfg.out_res)
    global_masks = _global_masks(cfg)
    flows = {part: as_flow(f) for part, f in load_flows(cfg).items()}

    _, (warped, alpha, holes) = warp_garment(
        garment, garment_parsing, flows, global_masks, out_size=cfg.out_res
    )
    flat_torso = garment_parsing == Label.TORSO_GARMENT
    warped_torso = alpha & global_masks[Label.TORSO_GARMENT]
    if flat_torso.any() and warped_torso.any():
        style = dgt_classify(flat_torso, warped_torso, cfg.dgt_threshold)
        dgt = {
            "style": style.style.value,
            "ratio_flat": style.ratio_flat,
            "ratio_warped": style.ratio_warped,
            "disparity": style.disparity,
            "truncate_gradients": style.style is Style.TUCKED_IN,
            "truncated_pixels": int(truncation_mask(style, warped_torso).sum()),
        }
    else:
        dgt = {"style": None, "error": "empty torso mask, no bounding box"}
    return {"warped": warped, "garment_alpha": alpha, "hole_mask": holes, "dgt": dgt}


def preprocess_arrays(cfg: PipelineConfig, person, parsing, warped, alpha, holes) -> dict:
    result = preprocess(person, parsing, warped, alpha, holes, cfg.band)
    parts = part_masks(parsing, alpha)
    widths = {PART_KEYS[p]: band_width(parts[p], result.bands[p]) for p in GARMENT_PARTS}
    return {
        "preserved": result.preserved,
        "inpaint_mask": result.inpaint_mask,
        "bands": result.bands,
        "band_widths": widths,
    }


def _write_outputs(out_dir: Path, arrays: dict) -> dict:
    written = {}
    for key, array in arrays.items():
        path = out_dir / OUTPUT_NAMES[key]
        if array.dtype == bool:
            save_mask(path, array)
        else:
            save_image(path, array)
        written[key] = str(path)
    return written


def _write_manifest(out_dir: Path, name: str, manifest: dict) -> Path:
    path = out_dir / name
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _manifest(command: str, cfg: PipelineConfig, timer: _Timer) -> dict:
    return {
        "command": command,
        "config": cfg.echo(),
        "timings": timer.timings,
        "warnings": [],
        "unused_inputs": _unused_inputs(cfg),
    }


def cmd_warp(cfg: PipelineConfig) -> dict:
    timer = _Timer()
    out_dir = cfg.path("output_dir")
    with timer.stage("warp"):
        res = warp_arrays(cfg)
    outputs = _write_outputs(
        out_dir, {k: res[k] for k in ("warped", "garment_alpha", "hole_mask")}
    )
    manifest = _manifest("warp", cfg, timer)
    manifest.update(outputs=outputs, dgt=res["dgt"])
    _write_manifest(out_dir, "manifest_warp.json", manifest)
    return manifest


def _stage_inputs(cfg: PipelineConfig) -> tuple:
    out_dir = cfg.path("output_dir")

    def locate(key, default_name):
        path = cfg.path(key, required=False)
        return path if path is not None else out_dir / default_name

    person = load_image(cfg.path("person"))
    parsing = load_parsing_map(cfg.path("parsing"))
    warped = load_image(locate("warped", OUTPUT_NAMES["warped"]))
    alpha = load_mask(locate("garment_alpha", OUTPUT_NAMES["garment_alpha"]))
    holes = load_mask(locate("hole_mask", OUTPUT_NAMES["hole_mask"]))
    return person, parsing, warped, alpha, holes


def cmd_preprocess(cfg: PipelineConfig) -> dict:
    timer = _Timer()
    out_dir = cfg.path("output_dir")
    person, parsing, warped, alpha, holes = _stage_inputs(cfg)
    with timer.stage("preprocess"):
        res = preprocess_arrays(cfg, person, parsing, warped, alpha, holes)
    outputs = _write_outputs(
        out_dir, {"preserved": res["preserved"], "inpaint_mask": res["inpaint_mask"]}
    )
    manifest = _manifest("preprocess", cfg, timer)
    manifest.update(
        outputs=outputs,
        band_widths=res["band_widths"],
        mask_area=int(res["inpaint_mask"].sum()),
    )
    _write_manifest(out_dir, "manifest_preprocess.json", manifest)
    return manifest


def _convergence(result) -> dict:
    return {
        "status": "converged" if result.converged else "max_iterations",
        "converged": result.converged,
        "iterations": result.iterations,
        "residual": result.residual,
    }


def cmd_inpaint(cfg: PipelineConfig) -> dict:
    timer = _Timer()
    out_dir = cfg.path("output_dir")

    preserved_path = cfg.path("preserved", required=False) or out_dir / OUTPUT_NAMES["preserved"]
    mask_path = cfg.path("mask", required=False) or out_dir / OUTPUT_NAMES["inpaint_mask"]
    preserved = load_image(preserved_path)
    mask = load_mask(mask_path)
    with timer.stage("tryon"):
        result = compose_tryon(preserved, mask, cfg.solver)
    outputs = _write_outputs(out_dir, {"tryon": result.image})
    manifest = _manifest("inpaint", cfg, timer)
    manifest.update(outputs=outputs, convergence=_convergence(result))
    if not result.converged:
        manifest["warnings"].append("harmonic fill did not converge")
    _write_manifest(out_dir, "manifest_inpaint.json", manifest)
    return manifest


def run_pipeline_arrays(cfg: PipelineConfig, inputs=None, warp=None) -> dict:
    """Full pipeline in memory; returns every intermediate."""
    timer = _Timer()
    if inputs is None:
        person = load_image(cfg.path("person"))
        parsing = load_parsing_map(cfg.path("parsing"))
        _check_size("person", person, cfg.out_res)
        _check_size("parsing", parsing, cfg.out_res)
    else:
        person, parsing = inputs
    if warp is None:
        with timer.stage("warp"):
            warp = warp_arrays(cfg)
    with timer.stage("preprocess"):
        pre = preprocess_arrays(
            cfg, person, parsing, warp["warped"], warp["garment_alpha"], warp["hole_mask"]
        )
    with timer.stage("tryon"):
        result = compose_tryon(pre["preserved"], pre["inpaint_mask"], cfg.solver)
    return {"warp": warp, "pre": pre, "tryon": result, "timings": timer.timings}


def _pipeline_outputs(run: dict) -> dict:
    return {
        "warped": run["warp"]["warped"],
        "garment_alpha": run["warp"]["garment_alpha"],
        "hole_mask": run["warp"]["hole_mask"],
        "preserved": run["pre"]["preserved"],
        "inpaint_mask": run["pre"]["inpaint_mask"],
        "tryon": run["tryon"].image,
    }


def cmd_pipeline(cfg: PipelineConfig) -> dict:
    out_dir = cfg.path("output_dir")
    run = run_pipeline_arrays(cfg)
    outputs = _write_outputs(out_dir, _pipeline_outputs(run))
    timer = _Timer()
    timer.timings = run["timings"]
    manifest = _manifest("pipeline", cfg, timer)
    manifest.update(
        outputs=outputs,
        dgt=run["warp"]["dgt"],
        band_widths=run["pre"]["band_widths"],
        mask_area=int(run["pre"]["inpaint_mask"].sum()),
        convergence=_convergence(run["tryon"]),
    )
    if not run["tryon"].converged:
        manifest["warnings"].append("harmonic fill did not converge")
    _write_manifest(out_dir, "manifest.json", manifest)
    return manifest


ABLATION_COLUMNS = (
    "n", "band_width", "mask_area", "ssim", "psnr_db", "l1", "mse",
    *UNAVAILABLE, "converged", "iterations",
)


def dedupe(values) -> tuple[list, list]:
    seen, out, dupes = set(), [], []
    for v in values:
        v = int(v)
        if v in seen:
            dupes.append(v)
            continue
        seen.add(v)
        out.append(v)
    return out, dupes


def cmd_ablate_band(cfg: PipelineConfig, n_values=(2, 5, 10)) -> dict:
    """Run the try-on stage once per band thickness and tabulate metrics."""
    timer = _Timer()
    out_dir = cfg.path("output_dir")
    n_list, dupes = dedupe(n_values)
    if not n_list:
        raise ValidationError("no band iteration counts given")
    gt_key = "ground_truth" if cfg.paths.get("ground_truth") else "person"
    ground_truth = load_image(cfg.path(gt_key))
    person = load_image(cfg.path("person"))
    parsing = load_parsing_map(cfg.path("parsing"))
    _check_size("person", person, cfg.out_res)
    _check_size("parsing", parsing, cfg.out_res)
    _check_size(gt_key, ground_truth, cfg.out_res)

    with timer.stage("warp"):
        warp = warp_arrays(cfg)
    rows = []
    runs = {}
    with timer.stage("sweep"):
        for n in n_list:
            run = run_pipeline_arrays(cfg.with_band(n), inputs=(person, parsing), warp=warp)
            m = evaluate_pair(ground_truth, run["tryon"].image, f"n={n}")
            row = m.to_dict()
            rows.append(
                {
                    "n": n,
                    "band_width": max(run["pre"]["band_widths"].values()),
                    "band_widths": run["pre"]["band_widths"],
                    "mask_area": int(run["pre"]["inpaint_mask"].sum()),
                    "ssim": row["ssim"],
                    "psnr_db": row["psnr_db"],
                    "l1": row["l1"],
                    "mse": row["mse"],
                    **{name: None for name in UNAVAILABLE},
                    "converged": run["tryon"].converged,
                    "iterations": run["tryon"].iterations,
                }
            )
            runs[n] = run

    manifest = _manifest("ablate-band", cfg, timer)
    if dupes:
        msg = f"duplicate band iteration counts ignored: {sorted(set(dupes))}"
        log.warning(msg)
        manifest["warnings"].append(msg)
    for n, run in runs.items():
        outputs = _write_outputs(
            out_dir / f"n{n}",
            {"preserved": run["pre"]["preserved"], "inpaint_mask": run["pre"]["inpaint_mask"],
             "tryon": run["tryon"].image},
        )
        next(r for r in rows if r["n"] == n)["outputs"] = outputs
    report_json = cfg.path("report", required=False) or out_dir / "ablation.json"
    report_csv = report_json.with_suffix(".csv")
    _write_manifest(report_json.parent, report_json.name, {"rows": rows, "config": cfg.echo()})
    with open(report_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=ABLATION_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in ABLATION_COLUMNS})
    manifest.update(
        rows=rows,
        outputs={"report": str(report_json), "csv": str(report_csv)},
        ground_truth=gt_key,
    )
    _write_manifest(out_dir, "manifest_ablation.json", manifest)
    return manifest


def pair_directories(gt_dir, out_dir) -> list:
    gt_dir, out_dir = Path(gt_dir), Path(out_dir)
    for d in (gt_dir, out_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"no such directory: {d}")
    gt = {p.stem: p for p in sorted(gt_dir.glob("*.png"))}
    out = {p.stem: p for p in sorted(out_dir.glob("*.png"))}
    unmatched = sorted(set(gt) ^ set(out))
    if unmatched:
        raise ValidationError(f"images without a counterpart: {unmatched}")
    return [(gt[k], out[k], k) for k in sorted(gt)]


def cmd_metrics(gt_dir, out_dir, report, config_echo=None) -> dict:
    pairs = [(load_image(g), load_image(o), k) for g, o, k in pair_directories(gt_dir, out_dir)]
    report_data = evaluate_pairs(pairs, config_echo).to_dict()
    if report is not None:
        _write_manifest(Path(report).parent, Path(report).name, report_data)
    return report_data
