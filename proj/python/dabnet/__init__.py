"""Distribution-aware weight binarization.

Thin wrapper over the compiled core: optimal two-value splits, packed
popcount kernels, surrogate gradients, and the synthetic sketch generator.
"""

from dabnet._core import (
    BinarizedFilter,
    Direction,
    KSearchResult,
    PackedBits,
    Scheme,
    SteKind,
    approx_error,
    binarize_bnn,
    binarize_dab,
    binarize_dab_fixed_k,
    binarize_layer,
    binarize_xnor,
    binary_conv2d,
    brute_force_binarize,
    dab_backward_paper,
    dab_backward_projection,
    dab_dot,
    dab_gemm,
    find_optimal_k,
    generate_sketches,
    pack_signs,
    reconstruct,
    sketch_class_names,
)

try:
    from dabnet._core import __version__
except ImportError:  # pragma: no cover - version baked in at build time
    __version__ = "unknown"

__all__ = [
    "BinarizedFilter",
    "Direction",
    "KSearchResult",
    "PackedBits",
    "Scheme",
    "SteKind",
    "approx_error",
    "binarize_bnn",
    "binarize_dab",
    "binarize_dab_fixed_k",
    "binarize_layer",
    "binarize_xnor",
    "binary_conv2d",
    "brute_force_binarize",
    "dab_backward_paper",
    "dab_backward_projection",
    "dab_dot",
    "dab_gemm",
    "find_optimal_k",
    "generate_sketches",
    "pack_signs",
    "reconstruct",
    "sketch_class_names",
    "__version__",
]
