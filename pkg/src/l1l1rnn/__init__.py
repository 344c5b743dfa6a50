"""Sequential sparse recovery with an l1-l1 proximal solver and its unfolded RNN."""

from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    NumericError,
    ParameterError,
)
from .prox import (
    ProxDerivative,
    ProxParams,
    boundary_margin,
    l1l1_prox,
    l1l1_prox_grad,
    l1l1_prox_vec,
    prox_oracle,
    soft_threshold,
)
from .solvers import (
    Operators,
    SolverConfig,
    StepSizeWarning,
    ista,
    l1l1_solve_sequence,
    objective_l1,
    objective_l1l1,
    objective_sista,
    power_iteration_bound,
    sista_solve_sequence,
)
from .network import (
    HiddenStates,
    ModelParams,
    StackedRNNWeights,
    UnfoldedWeights,
    build_weights,
    forward_batch,
    forward_sequence,
    sense,
    stacked_forward_batch,
    stacked_rnn_forward,
)
from .training import (
    AdamState,
    GradCheckReport,
    TrainConfig,
    TrainData,
    TrainResult,
    adam_step,
    backward,
    clip_gradients,
    cosine_frame,
    gradient_check,
    init_params,
    init_stacked_params,
    loss,
    model_from_raw,
    overcomplete_dct,
    raw_from_model,
    stacked_backward,
    train,
)
from .data import (
    Splits,
    SyntheticSpec,
    VideoDataset,
    bilinear_downscale,
    generate_synthetic,
    load_video_tensor,
    make_splits,
    read_npy,
    read_raw,
    synthetic_batch,
    unvectorize,
    vectorize,
    write_raw,
)
from .metrics import EvalReport, evaluate, format_report, psnr, report_to_csv, zero_fraction
from .checkpoint import read_checkpoint, write_checkpoint

__version__ = "0.1.0"
