"""Desk-scale private federated learning toolkit.

A group-level differential-privacy accountant for subsampled Gaussian
mechanisms, a deterministic federated-learning simulator over
provider-grouped data, four training protocols (FedAvg, FedShampoo,
FL-GROUP-DP, DP-CLGECL), LoRA adapters, NF4 update quantization, and a
byte-exact communication ledger, driven by a TOML-configured CLI.
"""

from .accountant import (
    AlphaGrid,
    PrivacySpend,
    SgmParams,
    calibrate_sigma,
    compose_and_convert,
    group_sampling_rate,
    xi,
    xi_fractional,
    xi_integer,
)
from .config import ExperimentConfig, load_config
from .errors import (
    CalibrationError,
    ConfigError,
    ConvergenceError,
    DomainError,
    EncodeError,
    NotPSDError,
    PflsimError,
    ShapeError,
)
from .fed_data import (
    ClientDataset,
    FederatedDataset,
    ProviderGroup,
    Record,
    generate_synthetic,
    min_group_count,
    without_provider,
)
from .metrics import EvalResult, anls, evaluate_answers, levenshtein
from .models import (
    LayeredModel,
    LoraAdapter,
    build_mlp,
    load_checkpoint,
    lora_attach,
    lora_merge,
    per_group_gradient,
    save_checkpoint,
)
from .optim import (
    AdamWState,
    GradClip,
    MomentumState,
    OptimizerConfig,
    ShampooConfig,
    ShampooState,
    adamw_step,
    clip,
    momentum_step,
    sgd_step,
    shampoo_step,
)
from .protocols import (
    DpConfig,
    RoundMetrics,
    RunResult,
    evaluate_model,
    plan_round,
    run_dp_clgecl,
    run_fedavg,
    run_fedshampoo,
    run_fl_group_dp,
)
from .wire import (
    CommLedger,
    Nf4Block,
    UpdateMessage,
    ledger_total,
    message_bytes,
    nf4_codebook,
    nf4_dequantize,
    nf4_quantize,
)

__version__ = "0.1.0"
