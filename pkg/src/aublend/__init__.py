"""Action-unit blendshape engine.

Subpackage map:
  autodiff / nn   reverse-mode tensors, layers, Adam
  kernels         compiled-or-numpy hot loops (compose, codebook scan)
  mesh / formats  geometry types, composition, binary + OBJ formats
  facs            AU registry and emotion presets
  synth           deterministic synthetic identity generator
  model           codebook autoencoder + style predictor
  train / metrics two-stage training and evaluation metrics
  cli / service   command line and HTTP JSON API
"""

__version__ = "0.1.0"

from .errors import (AublendError, ConfigError, ContractError, FormatError,
                     NonFiniteError, ShapeError, TrainingDiverged, ValidationError)
from .mesh import (AUActivation, BlendDelta, FaceMesh, IdentityBundle,
                   OffsetSequence, basis_mse, compose, compose_animated, vertex_mse)

__all__ = [
    "AublendError", "ConfigError", "ContractError", "FormatError",
    "NonFiniteError", "ShapeError", "TrainingDiverged", "ValidationError",
    "AUActivation", "BlendDelta", "FaceMesh", "IdentityBundle",
    "OffsetSequence", "basis_mse", "compose", "compose_animated", "vertex_mse",
    "__version__",
]
