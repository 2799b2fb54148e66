"""Guided mixture of experts for joint human action and motion forecasting.

A windowed sequence model that predicts, from N past samples of joint
kinematics and contact wrenches, both the action label distribution and the
full motion/wrench horizon for T future steps in one pass. The gate network
is supervised as the action classifier, so each expert specializes in one
action's motion policy; a stacked-LSTM baseline, a synthetic data generator,
and a streaming inference CLI round out the package.
"""

from .data import (
    ActionRegime,
    Dataset,
    MotionRecord,
    WindowSet,
    WindowedExample,
    desk_regimes,
    generate_synthetic,
    read_csv,
    window_dataset,
    write_csv,
)
from .layers import DenseParams, LstmParams, Standardizer
from .losses import (
    LossConfig,
    accuracy,
    action_loss,
    competitive_motion_loss,
    mae,
    motion_loss,
    total_loss,
)
from .model import (
    BaselineModel,
    FeatureLayout,
    GMoEConfig,
    GMoEModel,
    ModelOutput,
    forward,
    forward_baseline,
    init_baseline,
    init_gmoe,
    load_checkpoint,
    full_body_config,
    param_count,
    save_checkpoint,
    unstandardize_motion,
)
from .tensor import SeededRng, matmul, rng_gaussian, softmax_rows
from .train import (
    AdamState,
    TrainConfig,
    adam_step,
    evaluate,
    fit,
    make_splits,
    persistence_mae,
    run_comparison,
    split_chronological,
)

__version__ = "0.1.0"
