import json
import shutil

import numpy as np
import pytest

from dualfit.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from dualfit.config import resolve
from dualfit.fixtures import make_fixture
from dualfit.imaging import (
    GARMENT_PARTS,
    Label,
    load_image,
    load_mask,
    load_parsing_map,
    quantize,
    save_parsing_map,
)
from dualfit.preprocess import chebyshev_depth


@pytest.fixture
def scene(tmp_path):
    cfg = make_fixture(tmp_path / "scene", 48, 64)
    return cfg, tmp_path / "scene"


def _run(*argv):
    return main([str(a) for a in argv])


def _manifest(path):
    return json.loads(path.read_text())


def test_warp_identity_restricts_garment_to_parsing(scene):
    cfg, root = scene
    assert _run("warp", "--config", cfg) == EXIT_OK
    out = root / "out"
    warped = quantize(load_image(out / "warped_garment.png"))
    garment = quantize(load_image(root / "garment.png"))
    parsing = load_parsing_map(root / "parsing.png")
    footprint = np.isin(parsing, GARMENT_PARTS)
    assert np.array_equal(warped[footprint], garment[footprint])
    assert not warped[~footprint].any()
    assert np.array_equal(load_mask(out / "garment_alpha.png"), footprint)
    assert not load_mask(out / "hole_mask.png").any()
    dgt = _manifest(out / "manifest_warp.json")["dgt"]
    assert dgt["style"] == "tucked_out" and dgt["disparity"] == 0.0


def test_warp_translate_matches_shift_oracle(scene):
    cfg, root = scene
    assert _run("warp", "--config", cfg, "--synth-flow", "translate:8,0") == EXIT_OK
    out = root / "out"
    warped = quantize(load_image(out / "warped_garment.png"))
    alpha = load_mask(out / "garment_alpha.png")
    holes = load_mask(out / "hole_mask.png")
    garment = quantize(load_image(root / "garment.png"))
    gparse = load_parsing_map(root / "garment_parsing.png")
    parsing = load_parsing_map(root / "parsing.png")
    h, w = parsing.shape
    for y in range(h):
        for x in range(w):
            k = parsing[y, x]
            if k not in GARMENT_PARTS:
                assert not alpha[y, x] and not holes[y, x] and not warped[y, x].any()
                continue
            covered = x + 8 < w and gparse[y, x + 8] == k
            assert alpha[y, x] == covered and holes[y, x] == (not covered)
            if covered:
                assert np.array_equal(warped[y, x], garment[y, x + 8])
    assert holes.any()


def test_warp_missing_flow_file_writes_nothing(scene):
    cfg, root = scene
    (root / "flow_torso.flo").unlink()
    assert _run("warp", "--config", cfg) == EXIT_IO
    assert not (root / "out").exists()


def test_validation_errors_exit_2(scene):
    cfg, root = scene
    assert _run("warp", "--config", cfg, "--kernel", "4") == EXIT_VALIDATION
    assert _run("warp", "--config", cfg, "--out-res", "40x64") == EXIT_VALIDATION
    assert _run("warp", "--config", cfg, "--flow-res", "20x30") == EXIT_VALIDATION
    assert _run("pipeline", "--config", cfg, "--synth-flow", "bogus") == EXIT_VALIDATION
    assert not (root / "out").exists()


def _oracle_mask(parsing, alpha, holes, n):
    mask = holes | np.isin(parsing, [Label.LEFT_HAND, Label.RIGHT_HAND, Label.NECK])
    for part in GARMENT_PARTS:
        region = (parsing == part) & alpha
        mask |= region & (chebyshev_depth(region) <= n)
    return mask


def test_preprocess_mask_matches_oracle(scene):
    cfg, root = scene
    assert _run("warp", "--config", cfg) == EXIT_OK
    assert _run("preprocess", "--config", cfg, "--band-n", 2) == EXIT_OK
    out = root / "out"
    parsing = load_parsing_map(root / "parsing.png")
    alpha = load_mask(out / "garment_alpha.png")
    holes = load_mask(out / "hole_mask.png")
    mask = load_mask(out / "inpaint_mask.png")
    assert np.array_equal(mask, _oracle_mask(parsing, alpha, holes, 2))
    man = _manifest(out / "manifest_preprocess.json")
    assert man["band_widths"] == {"left": 2, "right": 2, "torso": 2}
    assert man["mask_area"] == int(mask.sum())


def test_preprocess_zero_band(scene):
    cfg, root = scene
    _run("warp", "--config", cfg)
    assert _run("preprocess", "--config", cfg, "--band-n", 0) == EXIT_OK
    parsing = load_parsing_map(root / "parsing.png")
    mask = load_mask(root / "out" / "inpaint_mask.png")
    assert np.array_equal(mask, np.isin(parsing, [2, 3, 4]))


def test_preprocess_empty_parsing_keeps_person(scene, tmp_path):
    cfg, root = scene
    _run("warp", "--config", cfg)
    blank = tmp_path / "blank.png"
    save_parsing_map(blank, np.zeros((64, 48), np.uint8))
    empty_alpha = tmp_path / "alpha.png"
    from dualfit.imaging import save_mask

    save_mask(empty_alpha, np.zeros((64, 48), bool))
    assert _run("preprocess", "--config", cfg, "--parsing", blank,
                "--garment-alpha", empty_alpha, "--hole-mask", empty_alpha) == EXIT_OK
    preserved = quantize(load_image(root / "out" / "preserved.png"))
    person = quantize(load_image(root / "person.png"))
    assert np.array_equal(preserved, person)


def test_stagewise_equals_pipeline(scene):
    cfg, root = scene
    assert _run("warp", "--config", cfg) == EXIT_OK
    assert _run("preprocess", "--config", cfg) == EXIT_OK
    assert _run("inpaint", "--config", cfg) == EXIT_OK
    staged = (root / "out" / "tryon.png").read_bytes()
    shutil.rmtree(root / "out")
    assert _run("pipeline", "--config", cfg) == EXIT_OK
    assert (root / "out" / "tryon.png").read_bytes() == staged


def test_pipeline_changes_only_masked_pixels(scene):
    cfg, root = scene
    assert _run("pipeline", "--config", cfg) == EXIT_OK
    out = root / "out"
    tryon = quantize(load_image(out / "tryon.png"))
    person = quantize(load_image(root / "person.png"))
    mask = load_mask(out / "inpaint_mask.png")
    diff = (tryon != person).any(axis=2)
    assert diff.any()
    assert not (diff & ~mask).any()
    man = _manifest(out / "manifest.json")
    assert man["convergence"]["status"] == "converged"
    assert man["unused_inputs"] == ["pose"]
    for path in man["outputs"].values():
        assert (root / "out").joinpath(path.split("/")[-1]).exists()


def test_pipeline_rerun_is_bit_identical(scene):
    cfg, root = scene
    _run("pipeline", "--config", cfg)
    first = (root / "out" / "tryon.png").read_bytes()
    man1 = _manifest(root / "out" / "manifest.json")
    _run("pipeline", "--config", cfg)
    assert (root / "out" / "tryon.png").read_bytes() == first
    man2 = _manifest(root / "out" / "manifest.json")
    man1.pop("timings"), man2.pop("timings")
    assert man1 == man2


def test_pipeline_non_convergence_is_a_warning(scene):
    cfg, root = scene
    assert _run("pipeline", "--config", cfg, "--inpaint-max-iters", 1) == EXIT_OK
    man = _manifest(root / "out" / "manifest.json")
    assert man["convergence"]["status"] == "max_iterations"
    assert man["warnings"]


def test_ablate_band_rows(scene):
    cfg, root = scene
    assert _run("ablate-band", "--config", cfg, "--n-values", "1,2,3") == EXIT_OK
    report = _manifest(root / "out" / "ablation.json")
    assert [r["n"] for r in report["rows"]] == [1, 2, 3]
    assert [r["band_width"] for r in report["rows"]] == [1, 2, 3]
    areas = [r["mask_area"] for r in report["rows"]]
    assert areas == sorted(areas)
    assert all(r["fid"] is None for r in report["rows"])
    csv_lines = (root / "out" / "ablation.csv").read_text().splitlines()
    assert len(csv_lines) == 4 and csv_lines[0].startswith("n,band_width")


def test_ablate_zero_band_touches_only_hands_neck_holes(scene):
    cfg, root = scene
    assert _run("ablate-band", "--config", cfg, "--n-values", "0") == EXIT_OK
    parsing = load_parsing_map(root / "parsing.png")
    mask = load_mask(root / "out" / "n0" / "inpaint_mask.png")
    assert np.array_equal(mask, np.isin(parsing, [2, 3, 4]))


def test_ablate_duplicates_warned(scene):
    cfg, root = scene
    assert _run("ablate-band", "--config", cfg, "--n-values", "2,2,1") == EXIT_OK
    man = _manifest(root / "out" / "manifest_ablation.json")
    assert [r["n"] for r in man["rows"]] == [2, 1]
    assert any("duplicate" in w for w in man["warnings"])


def test_metrics_command(scene, tmp_path):
    cfg, root = scene
    gt, out = tmp_path / "gt", tmp_path / "res"
    gt.mkdir(), out.mkdir()
    shutil.copy(root / "person.png", gt / "a.png")
    shutil.copy(root / "person.png", out / "a.png")
    shutil.copy(root / "person.png", gt / "b.png")
    shutil.copy(root / "garment.png", out / "b.png")
    report = tmp_path / "report.json"
    assert _run("metrics", "--gt", gt, "--out", out, "--report", report, "--config", cfg) == EXIT_OK
    data = _manifest(report)
    assert [p["id"] for p in data["pairs"]] == ["a", "b"]
    assert data["pairs"][0]["psnr_db"] is None and data["pairs"][0]["psnr_inf"]
    assert data["aggregate"]["psnr_inf_count"] == 1
    assert data["config"] == {"band_n": 5, "kernel": 3, "tol": 1e-5}
    (out / "b.png").unlink()
    assert _run("metrics", "--gt", gt, "--out", out) == EXIT_VALIDATION


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.json"
    cfg_file.write_text(json.dumps({"band_n": 3, "kernel": 5, "inpaint_tol": 1e-4,
                                    "person": "p.png"}))
    env = {"DUALFIT_BAND_N": "7", "DUALFIT_KERNEL": "7"}
    cfg = resolve(cfg_file, {"band_n": 9}, environ=env)
    assert cfg.band.iterations == 9  # flag beats env
    assert cfg.band.kernel_size == 7  # env beats file
    assert cfg.solver.tolerance == 1e-4  # file beats default
    assert cfg.solver.max_iterations == 10000
    assert cfg.paths["person"] == str(tmp_path / "p.png")
    defaults = resolve(environ={})
    assert defaults.flow_res == (384, 512) and defaults.out_res == (768, 1024)


def test_env_override_through_cli(scene, monkeypatch):
    cfg, root = scene
    monkeypatch.setenv("DUALFIT_BAND_N", "1")
    assert _run("pipeline", "--config", cfg) == EXIT_OK
    assert _manifest(root / "out" / "manifest.json")["band_widths"]["torso"] == 1
    assert _run("pipeline", "--config", cfg, "--band-n", 3) == EXIT_OK
    assert _manifest(root / "out" / "manifest.json")["band_widths"]["torso"] == 3


def test_fixture_command(tmp_path):
    assert _run("fixture", tmp_path / "fx", "--size", "32x40") == EXIT_OK
    assert load_image(tmp_path / "fx" / "person.png").shape == (40, 32, 3)
    assert json.loads((tmp_path / "fx" / "config.json").read_text())["out_res"] == "32x40"


def test_single_flow_flag_overrides_one_part(scene, tmp_path):
    cfg, root = scene
    from dualfit.flow import synth_flow, write_flow

    write_flow(tmp_path / "shift.flo", synth_flow("translate", 24, 32, dx=2, dy=0))
    resolved = resolve(cfg, {"flows": {"left": str(tmp_path / "shift.flo")}}, environ={})
    assert resolved.flows["left"] == str(tmp_path / "shift.flo")
    assert resolved.flows["torso"].endswith("flow_torso.flo")
    synth = resolve(cfg, {"synth_flow": "identity"}, environ={})
    assert synth.flows == {} and synth.synth_flow == "identity"
