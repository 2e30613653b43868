"""Ground-truth oracle backends with injectable, seeded noise.

Each oracle looks the frame up by ``Frame.key`` in a :class:`GroundTruth`
table and answers from the annotations. Randomness is drawn from a generator
seeded by ``(seed, key, call)``, so every output is a pure function of its
inputs and the seed, and the oracles are safe to call concurrently.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from togkit.backends.base import AffordancePrediction, AffordanceQuery, Frame, Kind
from togkit.errors import ConfigError, MissingAffordance, UnmappableCrop
from togkit.geometry import GraspRect, wrap_angle

EMBED_DIM = 64
LOGIT_GAIN = 10.0
AFFORDANCE_CONFIDENCE = 0.9
JITTER_FLIP_P = 0.25  # chance that a pixel inside the jitter band flips


@dataclass(frozen=True)
class NoiseConfig:
    dropout: float = 0.0
    fragments: int = 0
    blobs: int = 0
    mask_jitter: int = 0
    embed_sigma: float = 0.0
    grasp_jitter_px: float = 0.0
    grasp_jitter_deg: float = 0.0
    confidence_sigma: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 1.0:
            raise ConfigError(f"dropout must be in [0, 1], got {self.dropout}")
        for name in ("fragments", "blobs", "mask_jitter", "embed_sigma", "grasp_jitter_px", "grasp_jitter_deg", "confidence_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    @property
    def is_zero(self) -> bool:
        return self == NoiseConfig()

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict | None) -> NoiseConfig:
        d = dict(d or {})
        unknown = d.keys() - cls.__dataclass_fields__.keys()
        if unknown:
            raise ConfigError(f"unknown noise field(s) {sorted(unknown)}")
        return cls(**d)


def stable_hash(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little")


def mask_digest(m: np.ndarray) -> str:
    return hashlib.blake2b(np.packbits(m.ravel()).tobytes(), digest_size=8).hexdigest()


def _rng(seed: int, *parts) -> np.random.Generator:
    return np.random.default_rng([seed, stable_hash(*parts)])


def _dilate(m: np.ndarray, steps: int) -> np.ndarray:
    out = m.copy()
    for _ in range(steps):
        grown = out.copy()
        grown[1:] |= out[:-1]
        grown[:-1] |= out[1:]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        out = grown
    return out


def jitter_mask(m: np.ndarray, px: int, rng: np.random.Generator) -> np.ndarray:
    """Flip pixels within ``px`` of the boundary with probability 1/4."""
    if px <= 0 or not m.any():
        return m.copy()
    band = _dilate(m, px) & _dilate(~m, px)
    flip = band & (rng.random(m.shape) < JITTER_FLIP_P)
    return m ^ flip


@dataclass
class GTObject:
    object_id: str
    category: str
    mask: np.ndarray
    affordances: dict[str, np.ndarray]
    grasps: list[GraspRect]
    description: str = ""


@dataclass
class GroundTruth:
    """Annotations by frame key, plus description -> subcategory lookup."""

    frames: dict[str, list[GTObject]] = field(default_factory=dict)
    descriptions: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_dataset(cls, d) -> GroundTruth:
        gt = cls()
        for s in d.scenes:
            gt.frames[f"scene:{s.image_id}"] = [
                GTObject(o.object_id, o.category, o.mask, o.affordances, o.grasps, o.description) for o in s.objects
            ]
        for e in d.entries:
            gt.frames[e.key] = [GTObject(e.object_id, e.category, e.mask, e.affordances, e.grasps, e.description)]
            if e.description:
                gt.descriptions[e.description] = e.object_id
        return gt

    @property
    def object_ids(self) -> list[str]:
        return sorted({o.object_id for objs in self.frames.values() for o in objs})

    def objects(self, key: str) -> list[GTObject]:
        try:
            return self.frames[key]
        except KeyError:
            raise UnmappableCrop(f"no ground truth for frame {key!r}") from None

    def dominant(self, key: str, mask: np.ndarray) -> GTObject:
        """The GT object sharing the most pixels with ``mask`` (first on ties)."""
        best, votes = None, 0
        for o in self.objects(key):
            n = int(np.count_nonzero(o.mask & mask))
            if n > votes:
                best, votes = o, n
        if best is None:
            raise UnmappableCrop(f"mask overlaps no object in {key!r}")
        return best


class AnchorBook:
    """Unit anchors per id; known ids are mutually orthogonal.

    Known ids (sorted) take the columns of a seeded random orthonormal basis;
    any other id falls back to a hashed random direction.
    """

    def __init__(self, ids, dim: int = EMBED_DIM, salt: str = "clip"):
        self.dim = dim
        self.salt = salt
        ids = sorted(set(ids))
        self._anchors: dict[str, np.ndarray] = {}
        if ids:
            rng = _rng(0, "anchors", salt, dim)
            for start in range(0, len(ids), dim):
                chunk = ids[start:start + dim]
                q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
                for j, i in enumerate(chunk):
                    self._anchors[i] = q[:, j].copy()

    def __call__(self, object_id: str) -> np.ndarray:
        a = self._anchors.get(object_id)
        if a is None:
            v = _rng(0, "anchor", self.salt, object_id).standard_normal(self.dim)
            a = v / np.linalg.norm(v)
        return a


def _noisy_unit(anchor: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0:
        return anchor.copy()
    v = anchor + rng.standard_normal(anchor.size) * (sigma / math.sqrt(anchor.size))
    n = np.linalg.norm(v)
    return v / n if n > 0 else anchor.copy()


class OracleBackend:
    """Every backend kind, answered from ground truth.

    ``labels`` is the classifier's label set (all known subcategories unless
    given).
    """

    concurrent = True
    kinds = tuple(Kind)

    def __init__(self, gt: GroundTruth, noise: NoiseConfig | None = None, seed: int = 0, labels=None):
        self.gt = gt
        self.noise = noise or NoiseConfig()
        self.seed = int(seed)
        self.labels: tuple[str, ...] = tuple(labels) if labels is not None else tuple(gt.object_ids)
        self._clip = AnchorBook(gt.object_ids, salt="clip")
        self._pair = AnchorBook(gt.object_ids, salt="pair")

    @classmethod
    def from_dataset(cls, d, noise=None, seed=0, labels=None) -> OracleBackend:
        return cls(GroundTruth.from_dataset(d), noise, seed, labels)

    # segmentation
    def segment(self, frame: Frame) -> list[np.ndarray]:
        objs = self.gt.objects(frame.key)
        nz = self.noise
        rng = _rng(self.seed, "segment", frame.key)
        out = []
        for o in objs:
            drop = rng.random() < nz.dropout
            m = jitter_mask(o.mask, nz.mask_jitter, rng)
            if not drop:
                out.append(m)
            for _ in range(nz.fragments):
                out.append(self._fragment(o.mask, rng))
        if nz.blobs:
            occupied = np.zeros_like(objs[0].mask) if objs else np.zeros(frame.image.shape[:2], bool)
            for o in objs:
                occupied |= o.mask
            for i in range(nz.blobs):
                out.append(self._blob(occupied, rng, large=bool(i % 2)))
        return out

    @staticmethod
    def _fragment(mask: np.ndarray, rng) -> np.ndarray:
        """A sub-rectangle of the mask's box intersected with the mask."""
        ys, xs = np.nonzero(mask)
        x0, x1, y0, y1 = xs.min(), xs.max() + 1, ys.min(), ys.max() + 1
        for _ in range(50):
            fw = max(1, int(rng.integers(max(1, (x1 - x0) // 5), max(2, (x1 - x0) * 3 // 5) + 1)))
            fh = max(1, int(rng.integers(max(1, (y1 - y0) // 5), max(2, (y1 - y0) * 3 // 5) + 1)))
            fx = int(rng.integers(x0, max(x0 + 1, x1 - fw + 1)))
            fy = int(rng.integers(y0, max(y0 + 1, y1 - fh + 1)))
            frag = np.zeros_like(mask)
            frag[fy:fy + fh, fx:fx + fw] = True
            frag &= mask
            if frag.any() and np.count_nonzero(frag) < np.count_nonzero(mask):
                return frag
        frag = np.zeros_like(mask)
        frag[ys[0], xs[0]] = True
        return frag

    @staticmethod
    def _blob(occupied: np.ndarray, rng, large: bool) -> np.ndarray:
        h, w = occupied.shape
        if large:
            # most of the free table surface: far above any object size
            return ~_dilate(occupied, 2)
        for _ in range(100):
            bw, bh = int(rng.integers(6, 19)), int(rng.integers(6, 19))
            x, y = int(rng.integers(0, w - bw)), int(rng.integers(0, h - bh))
            b = np.zeros_like(occupied)
            b[y:y + bh, x:x + bw] = True
            if not (b & occupied).any():
                return b
        b = np.zeros_like(occupied)
        b[:8, :8] = True
        return b & ~occupied

    # recognition
    def _embed(self, book: AnchorBook, tag: str, frame: Frame, mask: np.ndarray) -> np.ndarray:
        o = self.gt.dominant(frame.key, np.asarray(mask, bool))
        rng = _rng(self.seed, tag, frame.key, mask_digest(np.asarray(mask, bool)))
        return _noisy_unit(book(o.object_id), self.noise.embed_sigma, rng)

    def embed_image(self, image, frame: Frame, mask) -> np.ndarray:
        return self._embed(self._clip, "embed_image", frame, mask)

    def embed_text(self, text: str) -> np.ndarray:
        oid = self.gt.descriptions.get(text)
        return self._clip(oid) if oid is not None else self._clip("text:" + text)

    def embed_pair(self, crop, frame: Frame, mask) -> np.ndarray:
        return self._embed(self._pair, "embed_pair", frame, mask)

    def classify(self, crops, frame: Frame, masks) -> np.ndarray:
        col = {lab: j for j, lab in enumerate(self.labels)}
        out = np.zeros((len(masks), len(self.labels)))
        for i, m in enumerate(masks):
            m = np.asarray(m, bool)
            try:
                o = self.gt.dominant(frame.key, m)
            except UnmappableCrop:
                continue
            if o.object_id in col:
                out[i, col[o.object_id]] = LOGIT_GAIN
            if self.noise.embed_sigma > 0:
                rng = _rng(self.seed, "classify", frame.key, mask_digest(m))
                out[i] += rng.standard_normal(len(self.labels)) * self.noise.embed_sigma * LOGIT_GAIN
        return out

    # affordances
    def predict_oneshot(self, scene_crop, ref_crop, ref_region, query: AffordanceQuery) -> np.ndarray:
        o = self.gt.dominant(query.frame.key, np.asarray(query.mask, bool))
        f = o.affordances.get(query.affordance)
        if f is None:
            raise MissingAffordance(f"{o.object_id} has no {query.affordance!r} affordance")
        region = o.mask & f if query.polarity == "require" else o.mask & ~f
        rng = _rng(self.seed, "oneshot", query.frame.key, query.affordance, query.polarity)
        region = jitter_mask(region, self.noise.mask_jitter, rng)
        return query.transform.crop(region)

    def segment_affordances(self, frame: Frame) -> list[AffordancePrediction]:
        rng = _rng(self.seed, "affordances", frame.key)
        out = []
        for o in self.gt.objects(frame.key):
            for name in sorted(o.affordances):
                m = jitter_mask(o.affordances[name], self.noise.mask_jitter, rng)
                conf = AFFORDANCE_CONFIDENCE
                if self.noise.confidence_sigma > 0:
                    conf = float(np.clip(conf + rng.normal(0, self.noise.confidence_sigma), 0.0, 1.0))
                out.append(AffordancePrediction(m, name, conf))
        return out

    # grasps
    def propose(self, frame: Frame) -> list[GraspRect]:
        nz = self.noise
        rng = _rng(self.seed, "grasps", frame.key)
        out = []
        for o in self.gt.objects(frame.key):
            for g in o.grasps:
                conf = float(rng.uniform(0.5, 1.0))
                if nz.confidence_sigma > 0:
                    conf = float(np.clip(conf + rng.normal(0, nz.confidence_sigma), 0.0, 1.0))
                x, y, theta = g.x, g.y, g.theta
                if nz.grasp_jitter_px > 0:
                    x += float(rng.uniform(-nz.grasp_jitter_px, nz.grasp_jitter_px))
                    y += float(rng.uniform(-nz.grasp_jitter_px, nz.grasp_jitter_px))
                if nz.grasp_jitter_deg > 0:
                    theta = wrap_angle(theta + float(rng.uniform(-nz.grasp_jitter_deg, nz.grasp_jitter_deg)))
                out.append(GraspRect(x, y, g.w, g.h, theta, conf))
        return out
