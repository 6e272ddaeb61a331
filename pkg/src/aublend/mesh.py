"""Face meshes, AU delta bases, activations, and blend composition.

Composition is strictly linear: posed = template + sum_i w_i * delta_i over
the active AUs in ascending AU-id order. Zero weights are skipped so an empty
or all-zero activation reproduces the template bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .errors import ShapeError, ValidationError

AU_COUNT = 32


def _as_positions(arr, name: str) -> np.ndarray:
    a = np.ascontiguousarray(arr, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ShapeError(f"{name}: expected (V, 3) array, got {a.shape}")
    if not np.isfinite(a).all():
        raise ValidationError(f"{name}: contains non-finite coordinates")
    return a


@dataclass(frozen=True)
class FaceMesh:
    """V vertices with optional triangle topology (indices into vertices)."""

    positions: np.ndarray                 # (V, 3) float64
    topology: np.ndarray | None = None    # (F, 3) int32

    def __post_init__(self):
        object.__setattr__(self, "positions", _as_positions(self.positions, "FaceMesh.positions"))
        if self.topology is not None:
            topo = np.ascontiguousarray(self.topology, dtype=np.int32)
            if topo.ndim != 2 or topo.shape[1] != 3:
                raise ShapeError(f"FaceMesh.topology: expected (F, 3), got {topo.shape}")
            if topo.size and (topo.min() < 0 or topo.max() >= self.positions.shape[0]):
                raise ValidationError("FaceMesh.topology: vertex index out of range")
            object.__setattr__(self, "topology", topo)

    @property
    def vertex_count(self) -> int:
        return self.positions.shape[0]

    def flat(self) -> np.ndarray:
        """Vertex-major interleaved coordinates [x0, y0, z0, x1, ...]."""
        return self.positions.reshape(-1)


@dataclass(frozen=True)
class BlendDelta:
    """Per-vertex displacement field for one action unit at full intensity."""

    au_id: int
    deltas: np.ndarray  # (V, 3) float64

    def __post_init__(self):
        if not isinstance(self.au_id, (int, np.integer)) or self.au_id < 1:
            raise ValidationError(f"BlendDelta.au_id must be a positive integer, got {self.au_id!r}")
        object.__setattr__(self, "au_id", int(self.au_id))
        object.__setattr__(self, "deltas", _as_positions(self.deltas, "BlendDelta.deltas"))


@dataclass(frozen=True)
class AUActivation:
    """Sparse AU weight map; absent key means 0. Weights live in [0, 1]."""

    weights: Mapping[int, float] = field(default_factory=dict)

    def __post_init__(self):
        clean: dict[int, float] = {}
        for au, w in self.weights.items():
            if not isinstance(au, (int, np.integer)) or int(au) < 1:
                raise ValidationError(f"activation: AU id must be a positive integer, got {au!r}")
            w = float(w)
            if not np.isfinite(w) or w < 0.0 or w > 1.0:
                raise ValidationError(f"activation: weight for AU{int(au)} outside [0, 1]: {w}")
            clean[int(au)] = w
        object.__setattr__(self, "weights", clean)

    def dense(self, au_ids: Sequence[int]) -> np.ndarray:
        return np.array([self.weights.get(au, 0.0) for au in au_ids], dtype=np.float64)


@dataclass(frozen=True)
class IdentityBundle:
    """One identity: template, exactly 32 AU delta bases, annotated poses."""

    identity_id: str
    template: FaceMesh
    bases: Mapping[int, BlendDelta]
    annotated_poses: Sequence[tuple[AUActivation, FaceMesh]] = ()
    style_tags: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.identity_id:
            raise ValidationError("IdentityBundle: identity_id must be non-empty")
        if len(self.bases) != AU_COUNT:
            raise ValidationError(f"IdentityBundle: expected {AU_COUNT} AU bases, found {len(self.bases)}")
        v = self.template.vertex_count
        ordered: dict[int, BlendDelta] = {}
        for au in sorted(self.bases):
            d = self.bases[au]
            if d.au_id != au:
                raise ValidationError(f"IdentityBundle: basis keyed {au} carries au_id {d.au_id}")
            if d.deltas.shape[0] != v:
                raise ShapeError(f"IdentityBundle: basis AU{au} has {d.deltas.shape[0]} vertices, template has {v}")
            ordered[au] = d
        object.__setattr__(self, "bases", ordered)
        for act, posed in self.annotated_poses:
            if posed.vertex_count != v:
                raise ShapeError("IdentityBundle: annotated pose vertex count mismatch")
            _ = act  # validated by its own constructor

    @property
    def vertex_count(self) -> int:
        return self.template.vertex_count

    @property
    def au_ids(self) -> tuple[int, ...]:
        return tuple(self.bases)

    @cached_property
    def basis_stack(self) -> np.ndarray:
        """(32, V, 3) float64, rows in ascending AU id order."""
        return np.ascontiguousarray(
            np.stack([self.bases[au].deltas for au in self.bases]))

    def basis_matrix(self) -> np.ndarray:
        """(32, 3V) rows of vertex-major interleaved deltas."""
        return self.basis_stack.reshape(AU_COUNT, -1)

    def with_poses(self, poses) -> "IdentityBundle":
        return replace(self, annotated_poses=tuple(poses))


@dataclass(frozen=True)
class OffsetSequence:
    """T frames of per-vertex displacement at a fixed frame rate."""

    offsets: np.ndarray  # (T, V, 3) float64
    frame_rate: float = 30.0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.offsets, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1:
            raise ShapeError(f"OffsetSequence: expected (T>=1, V, 3), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ValidationError("OffsetSequence: contains non-finite values")
        if not (np.isfinite(self.frame_rate) and self.frame_rate > 0):
            raise ValidationError(f"OffsetSequence: frame_rate must be positive, got {self.frame_rate}")
        object.__setattr__(self, "offsets", arr)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    @property
    def frame_count(self) -> int:
        return self.offsets.shape[0]

    @property
    def vertex_count(self) -> int:
        return self.offsets.shape[1]


def compose(bundle: IdentityBundle, activation: AUActivation) -> FaceMesh:
    """Blend the bundle's template with weighted AU deltas.

    Unknown AU ids (no basis in the bundle) raise ValidationError; weights are
    already range-checked by AUActivation. Deltas accumulate in ascending AU
    id order, one multiply-add pass per active AU.
    """
    unknown = sorted(set(activation.weights) - set(bundle.bases))
    if unknown:
        raise ValidationError(f"activation references AUs without bases: {unknown}")
    active = [(au, w) for au, w in sorted(activation.weights.items()) if w != 0.0]
    au_order = {au: i for i, au in enumerate(bundle.bases)}
    indices = np.array([au_order[au] for au, _ in active], dtype=np.int64)
    weights = np.array([w for _, w in active], dtype=np.float64)
    out = kernels.compose_core(bundle.template.positions, bundle.basis_stack,
                               indices, weights)
    return FaceMesh(out, bundle.template.topology)


def compose_animated(bundle: IdentityBundle, speech: OffsetSequence,
                     expression: OffsetSequence) -> list[FaceMesh]:
    """Per-frame composition: template + speech offset + expression offset.

    An expression sequence with T=1 broadcasts over the speech frames. Both
    sequences must share the vertex count and frame rate.
    """
    v = bundle.vertex_count
    if speech.vertex_count != v or expression.vertex_count != v:
        raise ShapeError(
            f"compose_animated: vertex counts differ (bundle {v}, speech "
            f"{speech.vertex_count}, expression {expression.vertex_count})")
    if speech.frame_rate != expression.frame_rate:
        raise ValidationError(
            f"compose_animated: frame rates differ ({speech.frame_rate} vs {expression.frame_rate})")
    t = speech.frame_count
    if expression.frame_count not in (1, t):
        raise ShapeError(
            f"compose_animated: expression frames {expression.frame_count} incompatible with speech frames {t}")
    frames = []
    for i in range(t):
        e = expression.offsets[0] if expression.frame_count == 1 else expression.offsets[i]
        frames.append(FaceMesh(bundle.template.positions + speech.offsets[i] + e,
                               bundle.template.topology))
    return frames


def vertex_mse(a: FaceMesh, b: FaceMesh) -> float:
    """Mean squared coordinate difference over all 3V scalars."""
    if a.positions.shape != b.positions.shape:
        raise ShapeError(f"vertex_mse: shapes {a.positions.shape} vs {b.positions.shape}")
    d = a.positions - b.positions
    return float(np.mean(d * d))


def basis_mse(a: Mapping[int, BlendDelta], b: Mapping[int, BlendDelta]) -> float:
    """vertex_mse of the delta fields, additionally averaged over the AUs."""
    if sorted(a) != sorted(b):
        raise ValidationError(f"basis_mse: AU id sets differ: {sorted(a)} vs {sorted(b)}")
    total = 0.0
    for au in sorted(a):
        if a[au].deltas.shape != b[au].deltas.shape:
            raise ShapeError(f"basis_mse: AU{au} shapes {a[au].deltas.shape} vs {b[au].deltas.shape}")
        d = a[au].deltas - b[au].deltas
        total += float(np.mean(d * d))
    return total / len(a)
