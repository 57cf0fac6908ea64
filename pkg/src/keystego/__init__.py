"""Key-conditioned invertible image hiding.

A secret image is folded into a host image by a stack of invertible coupling
blocks operating on Haar coefficients; each block shuffles and sign-flips the
secret stream with key material derived from a passphrase, so extraction only
works with the same passphrase.
"""

from .errors import ConfigError, ContractError, GeometryError, KeystegoError, ShapeError
from .inn import Model, ModelConfig, load_checkpoint, save_checkpoint
from .pipeline import diff_visualize, embed, extract

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "ContractError", "GeometryError", "KeystegoError", "ShapeError",
    "Model", "ModelConfig", "load_checkpoint", "save_checkpoint",
    "embed", "extract", "diff_visualize",
]
