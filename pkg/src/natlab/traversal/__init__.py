"""Connectivity strategies, the session state machine and the ICE ladder."""

from natlab.traversal.ice import (Carrier, IceResult, Keepalive, MatrixResult, Policy, applicable,
                                  ice_connect, keepalive, parse_ladder, run_interop_matrix)
from natlab.traversal.session import (LADDER, FailReason, IllegalTransition, PathKind, PunchStats,
                                      SessionState, Strategy, TraversalSession, close_session,
                                      send_app)
from natlab.traversal.strategies import (MappingResult, MappingUnsupported, PreconditionError,
                                         RelayServer, birthday_punch, brute_force_punch,
                                         default_chunk, hairpin_connect, port_mapping_connect,
                                         relay_connect, request_mapping, simple_punch)

__all__ = [
    "Carrier", "IceResult", "Keepalive", "MatrixResult", "Policy", "applicable", "ice_connect",
    "keepalive", "parse_ladder", "run_interop_matrix", "LADDER", "FailReason", "IllegalTransition",
    "PathKind", "PunchStats", "SessionState", "Strategy", "TraversalSession", "close_session",
    "send_app", "MappingResult", "MappingUnsupported", "PreconditionError", "RelayServer",
    "birthday_punch", "brute_force_punch", "default_chunk", "hairpin_connect",
    "port_mapping_connect", "relay_connect", "request_mapping", "simple_punch",
]
