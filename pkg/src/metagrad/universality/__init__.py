"""One-gradient-step universality: an explicit deep-network construction
whose single inner-loop update realizes arbitrary target functions.

Layout:

- ``construction``: bin discretizer, feature switch, selector/amplifier
  blocks, the telescoping layer chain, error gradients.
- ``update``: hand-derived layer gradients, the closed-form post-update
  signal, decoding, K-shot aggregation, the branching output head.
- ``losses``: which loss functions leave enough information in their
  gradient at the zero prediction (and explicit counterexamples).
- ``certificates``: every structural claim measured and thresholded.
"""

from .construction import (
    Construction, build_Ajl, build_Bjl, build_chain, build_construction,
    discr, error_gradient, pair_index, phi_feature, phi_full,
)
from .losses import (
    gradient_at_zero, loss_counterexample, loss_gradient_matrix,
    restricted_determinant,
)
from .update import (
    AmbiguousBranchError, DecodeMarginError, DegenerateSignalError,
    DuplicateSupportError, TargetTable, chain_gradients, closed_form_zbar,
    decode_v, end_to_end_prediction, f_out_multiplexer, g_pre,
    gradient_step_zbar, h_post, kernel_value, kshot_v, random_target_table,
    theta_b_after, updated_chain, v_vector,
)
from .certificates import (
    Certificate, default_construction, off_by_one_construction, read_report,
    run_all_certificates, write_report,
)

__all__ = [
    "AmbiguousBranchError", "Certificate", "Construction", "DecodeMarginError",
    "DegenerateSignalError", "DuplicateSupportError", "TargetTable",
    "build_Ajl", "build_Bjl", "build_chain", "build_construction",
    "chain_gradients", "closed_form_zbar", "decode_v", "default_construction",
    "discr", "end_to_end_prediction", "error_gradient", "f_out_multiplexer",
    "g_pre", "gradient_at_zero", "gradient_step_zbar", "h_post",
    "kernel_value", "kshot_v", "loss_counterexample", "loss_gradient_matrix",
    "off_by_one_construction", "pair_index", "phi_feature", "phi_full",
    "random_target_table",
    "read_report", "restricted_determinant", "run_all_certificates",
    "theta_b_after", "updated_chain", "v_vector", "write_report",
]
