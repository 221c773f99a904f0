"""Learning by forward integration of state and costate dynamics."""

from .hl_core import (Costate, ConstantPhi, ExponentialPhi, HLConfig, HLLearner, LossSpec, ReciprocalPhi,
                      WarmStartPhi, hl_step, reset_costate)
from .kernels import BACKEND
from .netspec import ModelState, NetSpec, init_state, make_state
from .stream import StreamItem, StreamSource, from_dataset, reverse_replay, tokenize_sequences

__all__ = [
    "BACKEND", "ConstantPhi", "Costate", "ExponentialPhi", "HLConfig", "HLLearner", "LossSpec", "ModelState",
    "NetSpec", "ReciprocalPhi", "StreamItem", "StreamSource", "WarmStartPhi", "from_dataset", "hl_step",
    "init_state", "make_state", "reset_costate", "reverse_replay", "tokenize_sequences",
]
__version__ = "0.1.0"
