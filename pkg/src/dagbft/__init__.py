"""Leaderless asynchronous BFT atomic broadcast over a DAG of signed units."""

from .coin import CoinShare, DealingPayload, ShamirCoin
from .committee import Committee, ProcessKeys, make_committee
from .consensus import ConsensusState, break_ties, validation_status
from .dag import LocalView
from .factory import ProcessCore, create_unit
from .gossip import sync_session
from .runner import RunReport, SimConfig, run_simulation, stats, verify_logs
from .units import Unit, canonical_decode, canonical_encode

__all__ = [
    "CoinShare",
    "Committee",
    "ConsensusState",
    "DealingPayload",
    "LocalView",
    "ProcessCore",
    "ProcessKeys",
    "RunReport",
    "ShamirCoin",
    "SimConfig",
    "Unit",
    "break_ties",
    "canonical_decode",
    "canonical_encode",
    "create_unit",
    "make_committee",
    "run_simulation",
    "stats",
    "sync_session",
    "validation_status",
    "verify_logs",
]
