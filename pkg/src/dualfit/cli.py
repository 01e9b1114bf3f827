"""Command-line front end.

Exit codes: 0 success (warnings go to the manifest), 2 validation error,
3 I/O error, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import resolve
from .errors import FormatError, ValidationError
from .fixtures import make_fixture

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INTERNAL = 4

log = logging.getLogger("dualfit")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON pipeline config")
    p.add_argument("--band-n", type=int, help="erosion iterations for the narrow band")
    p.add_argument("--kernel", type=int, help="square structuring element size (odd)")
    p.add_argument("--dgt-threshold", type=float)
    p.add_argument("--inpaint-tol", type=float)
    p.add_argument("--inpaint-max-iters", type=int)
    p.add_argument("--flow-res", help="flow resolution WxH")
    p.add_argument("--out-res", help="output resolution WxH")
    p.add_argument("--synth-flow", help="identity | translate:DX,DY | affine:a,b,c,d,e,f | tps:...")
    p.add_argument("--report", help="report file")
    p.add_argument("--out-dir", dest="output_dir")
    for key in ("person", "parsing", "garment", "garment-parsing", "global-parsing",
                "ground-truth", "pose", "densepose", "warped", "garment-alpha",
                "hole-mask", "preserved", "mask"):
        p.add_argument(f"--{key}", dest=key.replace("-", "_"))
    for part in ("left", "right", "torso"):
        p.add_argument(f"--flow-{part}", help=f".flo file for the {part} part")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualfit", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("warp", "warp the garment per part and assemble it"),
        ("preprocess", "build the preserved-region input and inpainting mask"),
        ("inpaint", "fill the inpainting mask harmonically"),
        ("pipeline", "run warp, preprocess and try-on end to end"),
        ("ablate-band", "sweep the narrow-band thickness"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "ablate-band":
            p.add_argument("--n-values", default="2,5,10", help="comma-separated iteration counts")

    m = sub.add_parser("metrics", help="score output images against ground truth")
    m.add_argument("--gt", required=True, help="directory of ground-truth PNGs")
    m.add_argument("--out", required=True, help="directory of output PNGs (matched by name)")
    m.add_argument("--report", help="JSON report path")
    m.add_argument("--config", help="JSON pipeline config echoed in the report")

    f = sub.add_parser("fixture", help="write the synthetic test scene and config")
    f.add_argument("out_dir")
    f.add_argument("--size", default="48x64", help="WxH")
    f.add_argument("--synth-flow")
    return parser


def _overrides(args) -> dict:
    keys = ("band_n", "kernel", "dgt_threshold", "inpaint_tol", "inpaint_max_iters",
            "flow_res", "out_res", "synth_flow", "report", "output_dir", "person", "parsing",
            "garment", "garment_parsing", "global_parsing", "ground_truth", "pose",
            "densepose", "warped", "garment_alpha", "hole_mask", "preserved", "mask")
    out = {k: getattr(args, k, None) for k in keys}
    flows = {part: getattr(args, f"flow_{part}", None) for part in ("left", "right", "torso")}
    if any(flows.values()):
        out["flows"] = {k: v for k, v in flows.items() if v}
    return out


def run(args) -> dict:
    if args.command == "fixture":
        from .config import parse_resolution

        w, h = parse_resolution(args.size)
        path = make_fixture(args.out_dir, w, h, synth=args.synth_flow)
        return {"config": str(path)}
    if args.command == "metrics":
        echo = {}
        if args.config:
            cfg = resolve(args.config)
            echo = {"band_n": cfg.band.iterations, "kernel": cfg.band.kernel_size,
                    "tol": cfg.solver.tolerance}
        return pipeline.cmd_metrics(args.gt, args.out, args.report, echo)

    cfg = resolve(args.config, _overrides(args))
    if args.command == "warp":
        return pipeline.cmd_warp(cfg)
    if args.command == "preprocess":
        return pipeline.cmd_preprocess(cfg)
    if args.command == "inpaint":
        return pipeline.cmd_inpaint(cfg)
    if args.command == "pipeline":
        return pipeline.cmd_pipeline(cfg)
    if args.command == "ablate-band":
        try:
            n_values = [int(v) for v in args.n_values.split(",") if v.strip()]
        except ValueError:
            raise ValidationError(f"bad --n-values {args.n_values!r}") from None
        return pipeline.cmd_ablate_band(cfg, n_values)
    raise ValidationError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        result = run(args)
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (OSError, FormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except Exception:  # noqa: BLE001
        log.exception("internal error")
        return EXIT_INTERNAL
    json.dump(result, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
