"""compkern: exact compositional kernels for image classification.

The package computes architecture-defined kernels exactly (no sampling), in
kernel space: each network layer — convolution, pooling, rectifier or
Gaussian embedding, global pooling — becomes a deterministic operator on a
kernel tensor.  A tiled engine turns those operators into Gram matrices with
caching and multiprocess scheduling; a ridge solver with closed-form
leave-one-out and tilting turns Gram matrices into classifiers; metrics and
oracle modules make the results auditable.

Typical flow::

    from compkern import load_arch, compose_kernel, ridge_fit, predict

    arch = load_arch("archs/myrtle5.arch")
    gram = compose_kernel(train_images, None, arch)
    model = ridge_fit(gram, onehot_labels, lam=0.01)
    cross = compose_kernel(test_images, train_images, arch)
    labels, scores = predict(model, cross)
"""

from .arch import (
    ArchError,
    ArchSpec,
    ArchSyntaxError,
    LayerDesc,
    LayerKind,
    PoolIndivisibleError,
    ValidationReport,
    load_arch,
    parse_arch,
    render_arch,
    validate_arch,
)
from .config import ConfigError, DatasetConfig, ExperimentConfig, derive_seed, load_config
from .data import (
    DataFormatError,
    ImageDataset,
    TabularDataset,
    ZcaTransform,
    flatten_spatial,
    flip_augment,
    load_cifar10,
    load_csv_tabular,
    load_dataset_npz,
    load_mnist_idx,
    pad_to,
    save_dataset_npz,
    standardize,
    subsample_balanced,
    zca_apply,
    zca_fit,
)
from .engine import (GramMatrix, TileCache, compose_kernel, content_hash,
                     default_tile, schedule_tiles)
from .estimators import (
    ChannelStandardizer,
    CompositionalKernel,
    GaussianKernel,
    KernelRidgeClassifier,
    ZCAWhitener,
)
from .formats import (
    ChecksumError,
    FormatError,
    read_gram,
    read_model,
    read_tile,
    write_gram,
    write_model,
    write_tile,
)
from .kernel_ops import (
    DiagCache,
    KernelBlock,
    NegativeDiagonalError,
    conv,
    gauss_dual,
    gauss_embed,
    global_pool,
    input_kernel,
    pool,
    relu_dual,
    relu_embed,
    stage_norms,
    update_diag,
)
from .metrics import (
    PROFILE_TAUS,
    EvalReport,
    accuracy,
    build_report,
    clopper_pearson,
    friedman_rank,
    p_at,
    performance_profile,
    pma,
    report_to_csv,
    report_to_json,
    stratified_folds,
    uci_protocol,
)
from .oracles import (
    McEstimate,
    brute_loo,
    mc_relu_conv,
    naive_compose,
    quad_dual_gauss,
    quad_dual_relu,
    random_valid_arch,
)
from .ridge import (
    DEFAULT_LAMBDA_GRID,
    FactorizationError,
    LooPrediction,
    RidgeModel,
    SweepResult,
    bandwidth_grid,
    gaussian_gram,
    lambda_sweep,
    loo_predict,
    median_heuristic,
    predict,
    ridge_fit,
    tilted_fit,
)

__version__ = "0.1.0"

__all__ = [
    "ArchError", "ArchSpec", "ArchSyntaxError", "LayerDesc", "LayerKind",
    "PoolIndivisibleError", "ValidationReport", "load_arch", "parse_arch",
    "render_arch", "validate_arch",
    "ConfigError", "DatasetConfig", "ExperimentConfig", "derive_seed",
    "load_config",
    "DataFormatError", "ImageDataset", "TabularDataset", "ZcaTransform",
    "flatten_spatial", "flip_augment", "load_cifar10", "load_csv_tabular",
    "load_dataset_npz", "load_mnist_idx", "pad_to", "save_dataset_npz",
    "standardize", "subsample_balanced", "zca_apply", "zca_fit",
    "GramMatrix", "TileCache", "compose_kernel", "content_hash", "default_tile",
    "schedule_tiles",
    "ChannelStandardizer", "CompositionalKernel", "GaussianKernel",
    "KernelRidgeClassifier", "ZCAWhitener",
    "ChecksumError", "FormatError", "read_gram", "read_model", "read_tile",
    "write_gram", "write_model", "write_tile",
    "DiagCache", "KernelBlock", "NegativeDiagonalError", "conv",
    "gauss_dual", "gauss_embed", "global_pool", "input_kernel", "pool",
    "relu_dual", "relu_embed", "stage_norms", "update_diag",
    "EvalReport", "accuracy", "build_report", "clopper_pearson",
    "friedman_rank", "p_at", "performance_profile", "pma", "report_to_csv",
    "report_to_json", "stratified_folds", "uci_protocol", "PROFILE_TAUS",
    "McEstimate", "brute_loo", "mc_relu_conv", "naive_compose",
    "quad_dual_gauss", "quad_dual_relu", "random_valid_arch",
    "DEFAULT_LAMBDA_GRID", "FactorizationError", "LooPrediction",
    "RidgeModel", "SweepResult", "bandwidth_grid", "gaussian_gram",
    "lambda_sweep", "loo_predict", "median_heuristic", "predict",
    "ridge_fit", "tilted_fit",
    "__version__",
]
