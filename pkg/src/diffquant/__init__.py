"""Functional quantization of diffusion processes.

Simulate a diffusion, split it into drift plus a time-changed Wiener process,
code each part under a rate budget and measure the achieved distortion.
"""

from diffquant.paths import SampledPath, TimeChange, lq_norm, sup_norm
from diffquant.sde_engine import (
    DiffusionSpec,
    Ensemble,
    PathBundle,
    check_assumption_C,
    holder_seminorm,
    simulate_ensemble,
    time_change_inverse,
)
from diffquant.wiener_quant import (
    Codebook,
    ScalarQuantizer,
    VectorCodebook,
    finite_dim_codebook,
    kl_basis,
    lloyd_scalar,
    nearest,
    product_codebook,
    rescale_lq,
    rescale_sup,
)
from diffquant.holder_codec import (
    HolderNetCodebook,
    LayeredNetPlan,
    build_layered_codebook,
    cross_term,
    modulus_tail_estimate,
    monotone_regularize,
    quantize_time_change,
)
from diffquant.diffusion_codec import (
    AdaptedCodebook,
    CodebookSet,
    DriftCodebook,
    EncodingBudget,
    Reconstruction,
    adapt_codebook_to_measure,
    build_codebook_set,
    allocate_rates,
    drift_quantizer,
    encode_lp,
    encode_sup,
    generalized_entropy,
)
from diffquant.distortion_lab import (
    CurveConfig,
    CurveFit,
    DistortionReport,
    empirical_distortion,
    fit_sqrt_constant,
    holder_moment_check,
    rate_distortion_curve,
    sigma_norm_moment,
)

__version__ = "0.1.0"

__all__ = [
    "SampledPath",
    "TimeChange",
    "lq_norm",
    "sup_norm",
    "DiffusionSpec",
    "Ensemble",
    "PathBundle",
    "check_assumption_C",
    "holder_seminorm",
    "simulate_ensemble",
    "time_change_inverse",
    "Codebook",
    "ScalarQuantizer",
    "VectorCodebook",
    "finite_dim_codebook",
    "kl_basis",
    "lloyd_scalar",
    "nearest",
    "product_codebook",
    "rescale_lq",
    "rescale_sup",
    "HolderNetCodebook",
    "LayeredNetPlan",
    "build_layered_codebook",
    "cross_term",
    "modulus_tail_estimate",
    "monotone_regularize",
    "quantize_time_change",
    "AdaptedCodebook",
    "CodebookSet",
    "DriftCodebook",
    "EncodingBudget",
    "Reconstruction",
    "adapt_codebook_to_measure",
    "build_codebook_set",
    "allocate_rates",
    "drift_quantizer",
    "encode_lp",
    "encode_sup",
    "generalized_entropy",
    "CurveConfig",
    "CurveFit",
    "DistortionReport",
    "empirical_distortion",
    "fit_sqrt_constant",
    "holder_moment_check",
    "rate_distortion_curve",
    "sigma_norm_moment",
]
