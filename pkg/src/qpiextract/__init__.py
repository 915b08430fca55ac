"""QPI kernel extraction: simulation, learned extractors, and a classical solver."""

from .dataset import Dataset, GenerationConfig, generate_dataset, load_dataset
from .deconv import (
    ForwardOperator,
    SolveResult,
    TikhonovConfig,
    apply_adjoint,
    apply_forward,
    solve_tikhonov_cg,
)
from .estimators import (
    KernelAutoencoder,
    OneStepKernelExtractor,
    TikhonovDeconvolver,
    TwoStepKernelExtractor,
    stack_inputs,
)
from .evaluation import MetricsRecord, compute_metrics, evaluate_model, export_latents
from .losses import Step1Config, loss_align, loss_mse, loss_step1, loss_sym
from .simulate import (
    FOLD_COUNTS,
    IMAGE_SIZE,
    KernelParams,
    evaluate_kernel,
    rasterize_kernel,
    sample_kernel_params,
    synthesize_observation,
)
from .training import (
    TrainResult,
    TrainRunConfig,
    infer_batch,
    infer_kernel,
    train_onestep,
    train_step1,
    train_step2,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GenerationConfig",
    "generate_dataset",
    "load_dataset",
    "ForwardOperator",
    "SolveResult",
    "TikhonovConfig",
    "apply_adjoint",
    "apply_forward",
    "solve_tikhonov_cg",
    "KernelAutoencoder",
    "OneStepKernelExtractor",
    "TikhonovDeconvolver",
    "TwoStepKernelExtractor",
    "stack_inputs",
    "MetricsRecord",
    "compute_metrics",
    "evaluate_model",
    "export_latents",
    "Step1Config",
    "loss_align",
    "loss_mse",
    "loss_step1",
    "loss_sym",
    "FOLD_COUNTS",
    "IMAGE_SIZE",
    "KernelParams",
    "evaluate_kernel",
    "rasterize_kernel",
    "sample_kernel_params",
    "synthesize_observation",
    "TrainResult",
    "TrainRunConfig",
    "infer_batch",
    "infer_kernel",
    "train_onestep",
    "train_step1",
    "train_step2",
    "__version__",
]
