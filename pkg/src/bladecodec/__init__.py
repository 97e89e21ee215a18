"""Dual-mode region-of-interest image codec toolkit."""

from .bitsback import bitswap_decode, bitswap_encode, chi_bound, recursive_encode
from .discretize import BinGrid, TabulatedCdf, discretize_logistic_on_grid, discretize_unit_bins, tail_quantiles
from .hierarchy import HierarchicalModel, HyperpriorModel, forward, negative_elbo, toy_hyperprior, toy_model
from .lossy import lossy_decode, lossy_encode, psnr, relaxed_rd_loss
from .rans import AnsState, CodingTable, rans_decode, rans_encode, table_from_pmf
from .roi import build_layout, encode_mask, plan_parallel, roi_compress, roi_decompress
from .segpost import acceptance_curve, ensemble_predict, estimate_orientation, fill_holes, forest_fit
from .weights import load_model, save_model

__version__ = "0.1.0"
