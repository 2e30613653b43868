"""Perception ports used by the pipeline.

Every backend kind is a small protocol; a :class:`BackendSet` bundles one
implementation per kind and knows which kinds each framework mode needs.
"""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, runtime_checkable

import numpy as np

from togkit.errors import ConfigError
from togkit.geometry import CropTransform, GraspRect


class Kind(str, enum.Enum):
    SEGMENTER = "segmenter"
    IMAGE_EMBEDDER = "image_embedder"
    TEXT_EMBEDDER = "text_embedder"
    PAIR_EMBEDDER = "pair_embedder"
    CLASSIFIER = "classifier"
    AFFORDANCE_ONESHOT = "affordance_oneshot"
    AFFORDANCE_SEGMENTER = "affordance_segmenter"
    GRASP_PROPOSER = "grasp_proposer"


class Transport(str, enum.Enum):
    ORACLE = "oracle"
    EXTERNAL = "external"


class Concurrency(str, enum.Enum):
    CONCURRENT_SAFE = "concurrent"
    SERIALIZE_CALLS = "serialize"


class Mode(str, enum.Enum):
    BINARY = "binary"
    OS = "os"
    STANDARD = "standard"


REQUIRED_KINDS: dict[Mode, tuple[Kind, ...]] = {
    Mode.BINARY: (Kind.SEGMENTER, Kind.IMAGE_EMBEDDER, Kind.TEXT_EMBEDDER, Kind.AFFORDANCE_ONESHOT, Kind.GRASP_PROPOSER),
    Mode.OS: (Kind.SEGMENTER, Kind.PAIR_EMBEDDER, Kind.AFFORDANCE_ONESHOT, Kind.GRASP_PROPOSER),
    Mode.STANDARD: (Kind.SEGMENTER, Kind.CLASSIFIER, Kind.AFFORDANCE_SEGMENTER, Kind.GRASP_PROPOSER),
}


@dataclass(frozen=True)
class BackendDescriptor:
    kind: Kind
    transport: Transport = Transport.ORACLE
    concurrency: Concurrency = Concurrency.CONCURRENT_SAFE
    seed: int = 0


@dataclass(frozen=True)
class Frame:
    """An image plus the identity backends may use to look it up.

    ``key`` is ``scene:<image id>`` for scenes and ``ref:<object id>`` for
    reference images. ``path`` lets external backends read the file.
    """

    image: np.ndarray
    key: str
    path: Path | None = None


@dataclass(frozen=True)
class AffordanceQuery:
    """Context handed to a one-shot affordance model with the three crops."""

    frame: Frame
    mask: np.ndarray
    transform: CropTransform
    affordance: str
    polarity: str
    ref_key: str = ""


@dataclass(frozen=True)
class AffordancePrediction:
    mask: np.ndarray
    label: str
    confidence: float


@runtime_checkable
class Segmenter(Protocol):
    def segment(self, frame: Frame) -> list[np.ndarray]: ...


@runtime_checkable
class ImageEmbedder(Protocol):
    def embed_image(self, image: np.ndarray, frame: Frame, mask: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class TextEmbedder(Protocol):
    def embed_text(self, text: str) -> np.ndarray: ...


@runtime_checkable
class PairEmbedder(Protocol):
    def embed_pair(self, crop: np.ndarray, frame: Frame, mask: np.ndarray) -> np.ndarray: ...


@runtime_checkable
class Classifier(Protocol):
    labels: tuple[str, ...]

    def classify(self, crops: list[np.ndarray], frame: Frame, masks: list[np.ndarray]) -> np.ndarray: ...


@runtime_checkable
class AffordanceOneShot(Protocol):
    def predict_oneshot(self, scene_crop: np.ndarray, ref_crop: np.ndarray, ref_region: np.ndarray, query: AffordanceQuery) -> np.ndarray: ...


@runtime_checkable
class AffordanceSegmenter(Protocol):
    def segment_affordances(self, frame: Frame) -> list[AffordancePrediction]: ...


@runtime_checkable
class GraspProposer(Protocol):
    def propose(self, frame: Frame) -> list[GraspRect]: ...


KIND_PROTOCOLS = {
    Kind.SEGMENTER: Segmenter,
    Kind.IMAGE_EMBEDDER: ImageEmbedder,
    Kind.TEXT_EMBEDDER: TextEmbedder,
    Kind.PAIR_EMBEDDER: PairEmbedder,
    Kind.CLASSIFIER: Classifier,
    Kind.AFFORDANCE_ONESHOT: AffordanceOneShot,
    Kind.AFFORDANCE_SEGMENTER: AffordanceSegmenter,
    Kind.GRASP_PROPOSER: GraspProposer,
}


class Serialized:
    """Proxy that runs every method call of ``inner`` under one lock."""

    def __init__(self, inner):
        self._inner = inner
        self._lock = threading.Lock()

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if not callable(attr):
            return attr

        def call(*args, **kwargs):
            with self._lock:
                return attr(*args, **kwargs)

        return call


@dataclass
class BackendSet:
    """One implementation per kind, with its declared concurrency."""

    impls: dict[Kind, Any] = field(default_factory=dict)
    concurrency: dict[Kind, Concurrency] = field(default_factory=dict)

    def __post_init__(self):
        wrapped = {}
        for k, impl in self.impls.items():
            k = Kind(k)
            if self.concurrency.get(k, Concurrency.CONCURRENT_SAFE) is Concurrency.SERIALIZE_CALLS and not isinstance(impl, Serialized):
                impl = Serialized(impl)
            wrapped[k] = impl
        self.impls = wrapped

    def get(self, kind: Kind):
        try:
            return self.impls[Kind(kind)]
        except KeyError:
            raise ConfigError(f"no backend configured for {Kind(kind).value}") from None

    def has(self, kind: Kind) -> bool:
        return Kind(kind) in self.impls

    def check_mode(self, mode) -> None:
        missing = [k.value for k in REQUIRED_KINDS[Mode(mode)] if k not in self.impls]
        if missing:
            raise ConfigError(f"mode {Mode(mode).value} needs backend(s): {', '.join(missing)}")

    def close(self) -> None:
        seen = set()
        for impl in self.impls.values():
            inner = getattr(impl, "_inner", impl)
            if id(inner) in seen:
                continue
            seen.add(id(inner))
            close = getattr(inner, "close", None)
            if callable(close):
                close()
