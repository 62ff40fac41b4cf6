"""Run configuration: JSON schema, validation, and (de)serialization.

Thresholds are stored as decimal strings (shortest round-tripping repr)
so configs are byte-stable across platforms. File paths in the layer
manifest are resolved relative to the config file's directory. Unknown
keys are rejected everywhere.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .assignment import CLIP_MODES, POLICIES, SCOPES
from .costmodel import EnergyCoefficients

__all__ = ["ConfigError", "LayerEntry", "RunConfig"]


class ConfigError(ValueError):
    pass


def _require_keys(doc: dict, allowed: set, required: set, where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise ConfigError(f"{where}: missing keys {sorted(missing)}")


def _parse_threshold(value, where: str) -> float | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise ConfigError(f"{where}: thresholds are stored as decimal strings")
    try:
        out = float(value)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad threshold {value!r}") from exc
    if out < 0:
        raise ConfigError(f"{where}: thresholds are nonnegative")
    return out


def _format_threshold(value: float | None) -> str | None:
    return None if value is None else repr(float(value))


def _parse_threshold_pair(doc, where: str) -> dict:
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: thresholds must be an object")
    _require_keys(doc, {"weights", "activations"}, set(), where)
    return {
        "weights": _parse_threshold(doc.get("weights"), where),
        "activations": _parse_threshold(doc.get("activations"), where),
    }


@dataclass
class LayerEntry:
    name: str
    weights: str
    weight_fisher: str | None = None
    activations: str | None = None
    activation_fisher: str | None = None
    channel_magnitudes: str | None = None
    thresholds: dict = field(default_factory=lambda: {"weights": None, "activations": None})

    _ALLOWED = {
        "name",
        "weights",
        "weight_fisher",
        "activations",
        "activation_fisher",
        "channel_magnitudes",
        "thresholds",
    }

    @classmethod
    def from_dict(cls, doc: dict, index: int) -> "LayerEntry":
        where = f"layers[{index}]"
        if not isinstance(doc, dict):
            raise ConfigError(f"{where}: must be an object")
        _require_keys(doc, cls._ALLOWED, {"name", "weights"}, where)
        thresholds = {"weights": None, "activations": None}
        if "thresholds" in doc:
            thresholds = _parse_threshold_pair(doc["thresholds"], f"{where}.thresholds")
        return cls(
            name=doc["name"],
            weights=doc["weights"],
            weight_fisher=doc.get("weight_fisher"),
            activations=doc.get("activations"),
            activation_fisher=doc.get("activation_fisher"),
            channel_magnitudes=doc.get("channel_magnitudes"),
            thresholds=thresholds,
        )

    def to_dict(self) -> dict:
        out = {"name": self.name, "weights": self.weights}
        for key in ("weight_fisher", "activations", "activation_fisher", "channel_magnitudes"):
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        if any(v is not None for v in self.thresholds.values()):
            out["thresholds"] = {
                k: _format_threshold(v) for k, v in self.thresholds.items() if v is not None
            }
        return out


@dataclass
class RunConfig:
    policy: str = "fisher"
    ratio: float = 0.9
    scope: str = "global"
    clip: str = "sw"
    weight_threshold: float | None = None
    activation_threshold: float | None = None
    energy: EnergyCoefficients = field(default_factory=EnergyCoefficients)
    layers: list = field(default_factory=list)
    base_dir: str = "."

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.scope not in SCOPES:
            raise ConfigError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.clip not in CLIP_MODES:
            raise ConfigError(f"clip must be one of {CLIP_MODES}, got {self.clip!r}")
        if not isinstance(self.ratio, (int, float)) or not 0.0 <= self.ratio <= 1.0:
            raise ConfigError(f"ratio must lie in [0, 1], got {self.ratio!r}")

    _ALLOWED = {"policy", "ratio", "scope", "clip", "thresholds", "energy", "layers"}

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str = ".") -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config root must be an object")
        _require_keys(doc, cls._ALLOWED, set(), "config")
        thresholds = {"weights": None, "activations": None}
        if "thresholds" in doc:
            thresholds = _parse_threshold_pair(doc["thresholds"], "config.thresholds")
        energy = EnergyCoefficients()
        if "energy" in doc:
            edoc = doc["energy"]
            if not isinstance(edoc, dict):
                raise ConfigError("config.energy must be an object")
            defaults = energy.to_dict()
            _require_keys(edoc, set(defaults), set(), "config.energy")
            defaults.update(edoc)
            try:
                energy = EnergyCoefficients(**defaults)
            except ValueError as exc:
                raise ConfigError(f"config.energy: {exc}") from exc
        layers_doc = doc.get("layers", [])
        if not isinstance(layers_doc, list):
            raise ConfigError("config.layers must be a list")
        layers = [LayerEntry.from_dict(e, i) for i, e in enumerate(layers_doc)]
        names = [l.name for l in layers]
        if len(set(names)) != len(names):
            raise ConfigError("layer names must be unique")
        return cls(
            policy=doc.get("policy", "fisher"),
            ratio=doc.get("ratio", 0.9),
            scope=doc.get("scope", "global"),
            clip=doc.get("clip", "sw"),
            weight_threshold=thresholds["weights"],
            activation_threshold=thresholds["activations"],
            energy=energy,
            layers=layers,
            base_dir=base_dir,
        )

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "ratio": self.ratio,
            "scope": self.scope,
            "clip": self.clip,
            "thresholds": {
                "weights": _format_threshold(self.weight_threshold),
                "activations": _format_threshold(self.activation_threshold),
            },
            "energy": self.energy.to_dict(),
            "layers": [l.to_dict() for l in self.layers],
        }

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_dict(doc, base_dir=os.path.dirname(os.path.abspath(path)))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")

    def resolve(self, rel_path: str) -> str:
        return os.path.normpath(os.path.join(self.base_dir, rel_path))

    def layer(self, name: str) -> LayerEntry:
        for entry in self.layers:
            if entry.name == name:
                return entry
        raise ConfigError(f"config lists no layer named {name!r}")
