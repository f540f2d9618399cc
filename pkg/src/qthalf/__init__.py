"""Numerical companion for the Beris-Edwards Q-tensor model in a half-space."""
from .grid import Grid, apply_boundary, load_snapshot, save_snapshot
from .tensor_ops import InvalidInput, ModelParams

__all__ = ["Grid", "ModelParams", "InvalidInput", "apply_boundary", "save_snapshot", "load_snapshot"]
__version__ = "0.1.0"
