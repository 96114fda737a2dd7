"""Communication-constrained distributed estimation in the Gaussian sequence model."""
from .channel import (BitMessage, BudgetExceeded, BudgetLedger, EncoderConfig, decode_value,
                      encode_value)
from .coeffs import CoeffSeq, flat_index
from .model import LocalSample, ModelConfig, SplitSample, rng_stream, simulate, split

__all__ = [
    "BitMessage", "BudgetExceeded", "BudgetLedger", "CoeffSeq", "EncoderConfig", "LocalSample",
    "ModelConfig", "SplitSample", "decode_value", "encode_value", "flat_index", "rng_stream",
    "simulate", "split",
]
__version__ = "0.1.0"
