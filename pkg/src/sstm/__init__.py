"""Multi-frame recurrent optical flow on a small numpy autodiff core."""

from .model import ConfigError, ForwardResult, ModelConfig, ModelWeights, forward, init_weights, param_shapes, run

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ForwardResult",
    "ModelConfig",
    "ModelWeights",
    "forward",
    "init_weights",
    "param_shapes",
    "run",
]
