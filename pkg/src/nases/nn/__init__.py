"""Small numpy kernels with explicit backward passes."""
from .params import CheckpointError, NumericError, ParamSet, ShapeError, check_finite
from .optim import LrSchedule, adam_step, cosine_lr, he_init, nesterov_step
from .gradcheck import finite_diff_grad, max_rel_error
