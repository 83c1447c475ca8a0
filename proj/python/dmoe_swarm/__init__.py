"""Decentralized mixture-of-experts swarm: experiments and building blocks."""

from ._core import (
    Config,
    ConfigError,
    ParseError,
    DimensionError,
    aggregate,
    parity_hidden,
    run_convergence,
    run_throughput,
    select_experts,
    synthetic_blobs,
)

__all__ = [
    "Config",
    "ConfigError",
    "ParseError",
    "DimensionError",
    "aggregate",
    "parity_hidden",
    "run_convergence",
    "run_throughput",
    "select_experts",
    "synthetic_blobs",
]
