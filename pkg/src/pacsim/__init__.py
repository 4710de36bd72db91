"""Simulator for hybrid bit-serial / sparsity-domain compute-in-memory MACs."""

__version__ = "0.1.0"

from pacsim.bitplane import BitPlanes, QuantTensor, SparsityVector, count_sparsity, decompose, recompose
from pacsim.costmodel import EnergyParams, compare_schemes, count_cycles, energy_estimate, memory_traffic
from pacsim.encoder import EncoderState, compression_stats, encode_chunked, encode_conv, encode_linear
from pacsim.errors import PacsimError
from pacsim.pac import CycleMap, Thresholds, configure_cycles, exact_mac, hybrid_mac, pac_estimate, pac_mac

__all__ = [
    "BitPlanes", "CycleMap", "EncoderState", "EnergyParams", "PacsimError", "QuantTensor", "SparsityVector",
    "Thresholds", "compare_schemes", "compression_stats", "configure_cycles", "count_cycles", "count_sparsity",
    "decompose", "encode_chunked", "encode_conv", "encode_linear", "energy_estimate", "exact_mac", "hybrid_mac",
    "memory_traffic", "pac_estimate", "pac_mac", "recompose",
]
