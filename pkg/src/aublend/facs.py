"""Action-unit registry and emotion presets.

The registry is a checked-in JSON data file (see data/facs_registry.json for
the schema) loaded once and validated fail-fast: exactly 32 unique AU ids,
every emotion preset referencing only registered AUs with intensities in
(0, 1].
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import ValidationError
from .mesh import AU_COUNT, AUActivation

VALID_REGIONS = ("upper", "lower")
EMOTION_NAMES = ("happiness", "sadness", "surprise", "fear", "anger", "disgust", "contempt")


@dataclass(frozen=True)
class AUDescriptor:
    au_id: int
    name: str
    region: str
    notes: str = ""


@dataclass(frozen=True)
class EmotionPreset:
    emotion: str
    activation: AUActivation


class FacsRegistry:
    """Validated registry of 32 AU descriptors plus 7 emotion presets."""

    def __init__(self, descriptors: list[AUDescriptor], presets: dict[str, EmotionPreset]):
        problems: list[str] = []
        ids = [d.au_id for d in descriptors]
        if len(descriptors) != AU_COUNT:
            problems.append(f"expected {AU_COUNT} AU descriptors, found {len(descriptors)}")
        if len(set(ids)) != len(ids):
            problems.append("duplicate AU ids")
        for d in descriptors:
            if d.au_id < 1:
                problems.append(f"AU id must be positive: {d.au_id}")
            if not d.name:
                problems.append(f"AU{d.au_id}: empty name")
            if d.region not in VALID_REGIONS:
                problems.append(f"AU{d.au_id}: region must be one of {VALID_REGIONS}, got {d.region!r}")
        id_set = set(ids)
        if set(presets) != set(EMOTION_NAMES):
            problems.append(f"emotion presets must be exactly {sorted(EMOTION_NAMES)}, got {sorted(presets)}")
        for name, preset in presets.items():
            if not preset.activation.weights:
                problems.append(f"emotion {name!r}: empty activation")
            for au, w in preset.activation.weights.items():
                if au not in id_set:
                    problems.append(f"emotion {name!r}: references unregistered AU{au}")
                if w <= 0.0:
                    problems.append(f"emotion {name!r}: AU{au} intensity must be in (0, 1]")
        if problems:
            raise ValidationError("registry invalid: " + "; ".join(problems))
        self.descriptors = sorted(descriptors, key=lambda d: d.au_id)
        self.presets = dict(presets)
        self.au_ids: tuple[int, ...] = tuple(d.au_id for d in self.descriptors)
        self._by_id = {d.au_id: d for d in self.descriptors}

    def descriptor(self, au_id: int) -> AUDescriptor:
        if au_id not in self._by_id:
            raise ValidationError(f"unknown AU id {au_id}; registered: {list(self.au_ids)}")
        return self._by_id[au_id]

    def validate_activation(self, activation: AUActivation) -> None:
        """Raise ValidationError listing every violation, or return silently."""
        problems = [f"AU{au} is not registered" for au in sorted(activation.weights)
                    if au not in self._by_id]
        if problems:
            raise ValidationError("invalid activation: " + "; ".join(problems))

    def emotion_to_activation(self, emotion: str, intensity: float = 1.0) -> AUActivation:
        """Scale the preset's per-AU intensities by a global factor in (0, 1]."""
        if emotion not in self.presets:
            raise ValidationError(
                f"unknown emotion {emotion!r}; valid names: {', '.join(sorted(self.presets))}")
        if not 0.0 < intensity <= 1.0:
            raise ValidationError(f"emotion intensity must be in (0, 1], got {intensity}")
        base = self.presets[emotion].activation.weights
        return AUActivation({au: w * intensity for au, w in base.items()})


def _parse_registry(payload: dict, origin: str) -> FacsRegistry:
    try:
        descriptors = [AUDescriptor(int(e["id"]), str(e["name"]), str(e["region"]),
                                    str(e.get("notes", "")))
                       for e in payload["aus"]]
        presets = {}
        for name, weights in payload["emotions"].items():
            act = AUActivation({int(au): float(w) for au, w in weights.items()})
            presets[name] = EmotionPreset(name, act)
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{origin}: malformed registry data: {exc}") from exc
    return FacsRegistry(descriptors, presets)


def load_registry(path: str | Path | None = None) -> FacsRegistry:
    if path is None:
        text = resources.files("aublend.data").joinpath("facs_registry.json").read_text()
        origin = "packaged facs_registry.json"
    else:
        text = Path(path).read_text()
        origin = str(path)
    return _parse_registry(json.loads(text), origin)


_default: FacsRegistry | None = None


def get_registry() -> FacsRegistry:
    """The packaged registry, loaded once per process."""
    global _default
    if _default is None:
        _default = load_registry()
    return _default
