"""Deterministic payment-channel-network simulator for amount-encoded covert
command channels, with timing-correlation and poisoning countermeasures."""

from .codec import (REFERENCE_CODEBOOK, AsciiScheme, Codebook, HuffmanScheme, build_codebook, decode, deframe,
                    encode, frame, verify_prefix_free)
from .network import FeePolicy, Network, NetworkConfig, formation_cost
from .payments import PaymentEngine, RouteConstraints, find_route, hop_fee
from .sim import EventLoop

__version__ = "0.1.0"

__all__ = [
    "REFERENCE_CODEBOOK", "AsciiScheme", "Codebook", "HuffmanScheme", "build_codebook", "decode", "deframe",
    "encode", "frame", "verify_prefix_free", "FeePolicy", "Network", "NetworkConfig",
    "formation_cost", "PaymentEngine", "RouteConstraints", "find_route", "hop_fee", "EventLoop",
]
