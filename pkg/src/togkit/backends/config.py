"""Backend configuration files.

A configuration is a JSON object::

    {"transport": "oracle" | "external",
     "seed": 0, "noise": {...}, "labels": [...],          # oracle
     "command": ["python", "-m", "server"], "timeout": 30,  # external
     "concurrent": false,
     "kinds": {"segmenter": {...overrides...}, ...}}

Top-level settings apply to every kind; ``kinds`` overrides them per kind
(kinds absent from ``kinds`` use the top-level transport). When no file is
given, ``$TOGKIT_BACKEND`` names the default; failing that every kind is a
noiseless oracle.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from togkit.backends.base import BackendSet, Concurrency, Kind, Transport
from togkit.backends.external import DEFAULT_TIMEOUT, ExternalBackend
from togkit.backends.oracle import GroundTruth, NoiseConfig, OracleBackend
from togkit.errors import ConfigError

ENV_VAR = "TOGKIT_BACKEND"
_KEYS = {"transport", "seed", "noise", "labels", "command", "timeout", "concurrent", "kinds", "cwd"}


def load_config(path=None) -> dict:
    """Read a config file, falling back to ``$TOGKIT_BACKEND`` then ``{}``."""
    if path is None:
        path = os.environ.get(ENV_VAR) or None
    if path is None:
        return {}
    p = Path(path)
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"backend config not found: {p}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"backend config {p} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("backend config must be a JSON object")
    cfg.setdefault("cwd", str(p.parent))
    return cfg


def _check(cfg: dict, where: str):
    unknown = cfg.keys() - _KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}")


def build_backends(cfg: dict, dataset=None, gt: GroundTruth | None = None) -> BackendSet:
    """Instantiate one backend per kind; identical settings share an instance."""
    cfg = dict(cfg or {})
    _check(cfg, "backend config")
    per_kind = cfg.pop("kinds", {}) or {}
    for k in per_kind:
        try:
            Kind(k)
        except ValueError:
            raise ConfigError(f"unknown backend kind {k!r}") from None
    shared: dict[str, object] = {}
    impls, conc = {}, {}
    for kind in Kind:
        if kind.value in per_kind and per_kind[kind.value] is None:
            continue
        spec = {**cfg, **(per_kind.get(kind.value) or {})}
        _check(spec, f"kinds.{kind.value}")
        transport = Transport(spec.get("transport", "oracle"))
        ident = json.dumps({k: v for k, v in spec.items()}, sort_keys=True, default=str)
        if transport is Transport.ORACLE:
            if ident not in shared:
                if gt is None:
                    if dataset is None:
                        raise ConfigError("oracle backends need a dataset")
                    gt = GroundTruth.from_dataset(dataset)
                shared[ident] = OracleBackend(gt, NoiseConfig.from_json(spec.get("noise")), int(spec.get("seed", 0)), spec.get("labels"))
            impl = shared[ident]
            conc[kind] = Concurrency.CONCURRENT_SAFE
        else:
            if not spec.get("command"):
                raise ConfigError(f"external backend for {kind.value} needs a 'command'")
            if ident not in shared:
                shared[ident] = ExternalBackend(
                    spec["command"],
                    timeout=float(spec.get("timeout", DEFAULT_TIMEOUT)),
                    concurrent=spec.get("concurrent"),
                    cwd=spec.get("cwd"),
                )
            impl = shared[ident]
            if impl.kinds and kind.value not in impl.kinds:
                continue
            conc[kind] = Concurrency.CONCURRENT_SAFE if impl.concurrent else Concurrency.SERIALIZE_CALLS
        impls[kind] = impl
    return BackendSet(impls, conc)


def oracle_backends(dataset, noise: NoiseConfig | None = None, seed: int = 0, labels=None) -> BackendSet:
    """Every kind served by one in-process oracle."""
    o = OracleBackend.from_dataset(dataset, noise, seed, labels)
    return BackendSet({k: o for k in Kind}, {k: Concurrency.CONCURRENT_SAFE for k in Kind})
