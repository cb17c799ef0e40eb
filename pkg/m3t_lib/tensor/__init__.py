from .tensor import (Tensor, Parameter, Tape, backward, no_grad, precision,
                     get_default_dtype, set_default_dtype, active_tape)
from .optim import AdamState, adam_step
from .gradcheck import finite_diff_check, check_parameters, numeric_gradient
from . import ops
