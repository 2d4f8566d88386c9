"""Multi-timescale replay buffers and a continual-RL experiment harness."""

__version__ = "0.1.0"

from mtreplay.replay import (
    Experience,
    FifoBuffer,
    HalfHalfBuffer,
    MtrBuffer,
    ReservoirBuffer,
    SampledBatch,
)

__all__ = [
    "Experience",
    "SampledBatch",
    "FifoBuffer",
    "ReservoirBuffer",
    "HalfHalfBuffer",
    "MtrBuffer",
    "__version__",
]
