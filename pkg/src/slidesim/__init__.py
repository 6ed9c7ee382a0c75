"""Gradient-routing simulator with accountable transfer bookkeeping."""

from .coding import CodingParams, decode, derive_parcel_count, encode
from .core import MemoryCaps, MemoryLedger, Outcome, audit_memory
from .crypto import derive_seed, make_he_context, signature_scheme
from .endpoints import (
    NoImbalanceFound,
    NoViolatorFound,
    ReceiverNode,
    SenderNode,
    TestimonyTable,
    detect_f2,
    detect_f3,
)
from .node import ProtocolNode, ProtocolParams
from .sim import (
    RunResult,
    Scenario,
    ScenarioInvalid,
    build_system,
    load_scenario,
    make_scenario,
    replay,
    run,
    save_run,
)

__version__ = "0.1.0"

__all__ = [
    "CodingParams",
    "MemoryCaps",
    "MemoryLedger",
    "NoImbalanceFound",
    "NoViolatorFound",
    "Outcome",
    "ProtocolNode",
    "ProtocolParams",
    "ReceiverNode",
    "RunResult",
    "Scenario",
    "ScenarioInvalid",
    "SenderNode",
    "TestimonyTable",
    "audit_memory",
    "build_system",
    "decode",
    "derive_parcel_count",
    "derive_seed",
    "detect_f2",
    "detect_f3",
    "encode",
    "load_scenario",
    "make_he_context",
    "make_scenario",
    "replay",
    "run",
    "save_run",
    "signature_scheme",
]
