"""Screen-space shading effects learned by a U-shaped CNN, in numpy."""

from .unet import NetConfig, Network, build, param_count
from .loss import LossKind, dssim

__all__ = ["NetConfig", "Network", "build", "param_count", "LossKind", "dssim"]
__version__ = "0.1.0"
