"""Two-stage virtual try-on core: per-part flow warping, narrow-band
inpainting masks, harmonic seam filling and reconstruction metrics."""

from .errors import DualFitError, ValidationError
from .flow import apply_flow, assemble_parts, dgt_classify, read_flow, synth_flow, upsample_flow, write_flow
from .imaging import Label, load_image, load_parsing_map, mask_from_labels, overlay, save_image
from .inpaint import SolverSpec, compose_tryon, harmonic_inpaint
from .metrics import evaluate_pairs, l1, mse, psnr, ssim
from .preprocess import BandSpec, build_inpaint_mask, build_preserved_input, erode, narrow_band, preprocess

__version__ = "0.1.0"
