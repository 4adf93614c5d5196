"""Deterministic simulator and protocol library for asynchronous Byzantine
agreement with statistical fraud detection and fractional blacklisting."""

from .params import ProtocolParams, clamp_coin_sum, sgn

__version__ = "0.1.0"

__all__ = ["ProtocolParams", "clamp_coin_sum", "sgn", "__version__"]
