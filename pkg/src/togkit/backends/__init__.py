"""Perception backends: interfaces, ground-truth oracles and an external-process client."""

from togkit.backends.base import (
    REQUIRED_KINDS,
    AffordancePrediction,
    AffordanceQuery,
    BackendDescriptor,
    BackendSet,
    Concurrency,
    Frame,
    Kind,
    Mode,
    Serialized,
    Transport,
)
from togkit.backends.config import ENV_VAR, build_backends, load_config, oracle_backends
from togkit.backends.external import ExternalBackend
from togkit.backends.oracle import GroundTruth, NoiseConfig, OracleBackend

__all__ = [
    "AffordancePrediction",
    "AffordanceQuery",
    "BackendDescriptor",
    "BackendSet",
    "Concurrency",
    "ENV_VAR",
    "ExternalBackend",
    "Frame",
    "GroundTruth",
    "Kind",
    "Mode",
    "NoiseConfig",
    "OracleBackend",
    "REQUIRED_KINDS",
    "Serialized",
    "Transport",
    "build_backends",
    "load_config",
    "oracle_backends",
]
