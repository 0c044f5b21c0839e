from .base import LaplaceBase, NormalBase
from .conditioner import MaskedConditioner, MaskedLinear, made_masks
from .model import DTYPE, DesignChoice, FlowLayer, FlowModel, build_flow
from .oracle import OracleFlow
from .transforms import AffineTransformer, SplineTransformer

__all__ = [
    "AffineTransformer",
    "DTYPE",
    "DesignChoice",
    "FlowLayer",
    "FlowModel",
    "LaplaceBase",
    "MaskedConditioner",
    "MaskedLinear",
    "NormalBase",
    "OracleFlow",
    "SplineTransformer",
    "build_flow",
    "made_masks",
]
