"""Non-homogeneous Littlewood-Paley g_lambda^* square functions over atomic measures."""
from ._core import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
