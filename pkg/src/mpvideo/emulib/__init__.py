"""Trace-driven multi-link emulator with per-cycle propagation delay."""
from .fidelity import FidelityResult, FidelityScenario, run_fidelity
from .link import FORWARD, REVERSE, Delivery, EmulatedLink, RealtimePump, Replay, send, step
from .record import DrainTimeout, RecordConfig, record_session
from .trace import (CellNemTrace, Cycle, LinkTrace, TraceFormatError, fold_propagation,
                    read_any_trace, read_cellnem_trace, read_link_trace, write_cellnem_trace,
                    write_link_trace)

__all__ = [
    "FORWARD", "REVERSE", "CellNemTrace", "Cycle", "Delivery", "DrainTimeout", "EmulatedLink",
    "FidelityResult", "FidelityScenario", "LinkTrace", "RealtimePump", "RecordConfig", "Replay",
    "TraceFormatError", "fold_propagation", "read_any_trace", "read_cellnem_trace",
    "read_link_trace", "record_session", "run_fidelity", "send", "step", "write_cellnem_trace",
    "write_link_trace",
]
