from .tape import Tape, backward, ShapeError, PRIMITIVE_KINDS
from .params import ParamStore
from .optim import AdamState, adam_step
from .gradcheck import grad_check

__all__ = ["Tape", "backward", "ShapeError", "PRIMITIVE_KINDS",
           "ParamStore", "AdamState", "adam_step", "grad_check"]
