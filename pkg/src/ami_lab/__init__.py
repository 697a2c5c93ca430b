"""Active membership inference against LDP-protected federated clients.

Two server-side adversaries (crafted fully-connected layers and a crafted
self-attention layer), five local differential privacy mechanisms, the
membership game as a Monte Carlo harness, and the theoretical bounds the
empirical success rates are compared against.
"""
from .errors import AmiLabError
from .numerics import RngStream

__version__ = "0.1.0"
__all__ = ["AmiLabError", "RngStream", "__version__"]
