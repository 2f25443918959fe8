from .tensor import (
    ConfigurationError,
    Tensor,
    concat,
    gaussian_reparameterize,
    log_softmax,
    no_grad,
    use_dtype,
)
from .layers import (
    GRUCell,
    Linear,
    dropout,
    fanin_uniform,
    gru_step,
    gru_weight_init,
    linear,
    orthogonal,
)
from .losses import InputError, bce_with_logits, kl_diag_gaussians, mse_loss
from .optim import Adam, RMSprop, TrainingError, clip_global_norm
from .store import (
    CheckpointError,
    ParameterStore,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "Adam",
    "RMSprop",
    "CheckpointError",
    "ConfigurationError",
    "GRUCell",
    "InputError",
    "Linear",
    "ParameterStore",
    "Tensor",
    "TrainingError",
    "bce_with_logits",
    "clip_global_norm",
    "concat",
    "dropout",
    "fanin_uniform",
    "gaussian_reparameterize",
    "gru_step",
    "gru_weight_init",
    "kl_diag_gaussians",
    "linear",
    "load_checkpoint",
    "log_softmax",
    "mse_loss",
    "no_grad",
    "orthogonal",
    "save_checkpoint",
    "use_dtype",
]
