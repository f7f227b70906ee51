"""Cobalt: democratic atomic broadcast over essential-subset trust graphs."""

from .common import ConfigurationError, Message, ProtocolViolation
from .topology import EssentialSubset, FaultAssignment, Status, TrustConfig

__all__ = [
    "ConfigurationError",
    "EssentialSubset",
    "FaultAssignment",
    "Message",
    "ProtocolViolation",
    "Status",
    "TrustConfig",
]
__version__ = "0.1.0"
