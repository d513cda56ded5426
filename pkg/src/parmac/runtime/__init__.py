"""Distributed training over a ring of simulated machines."""

from .cluster import (COUNTER, LOCKSTEP, THREADED, VISIT_LIST, Cluster, CommLog, FaultEvent,
                      MembershipEvent, ParMACConfig, TraceEvent, Worker, visit_decision)
from .driver import ParMACRun, Scenario, lockstep_simulate, run_parmac, run_parmac_detailed
from .messages import DECODER_ROW, ENCODER_BIT, SubmodelMsg, decode_msg, encode_msg
from .topology import Topology, reshuffle_topology

__all__ = [
    "COUNTER", "LOCKSTEP", "THREADED", "VISIT_LIST", "Cluster", "CommLog", "FaultEvent",
    "MembershipEvent", "ParMACConfig", "TraceEvent", "Worker", "visit_decision", "ParMACRun",
    "Scenario", "lockstep_simulate", "run_parmac", "run_parmac_detailed", "DECODER_ROW",
    "ENCODER_BIT", "SubmodelMsg", "decode_msg", "encode_msg", "Topology", "reshuffle_topology",
]
