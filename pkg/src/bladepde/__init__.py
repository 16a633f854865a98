"""Image PDE solving with classical reference schemes and trained filter banks."""

from .features import SelectionConfig
from .grid import ColorImage, FrameSequence, ImageGrid, InstabilityError
from .net import FilterBank, Footprint
from .refsolve import SchemeConfig
from .integrate import SequenceModel

__all__ = [
    "ColorImage", "FilterBank", "Footprint", "FrameSequence", "ImageGrid",
    "InstabilityError", "SchemeConfig", "SelectionConfig", "SequenceModel",
]
