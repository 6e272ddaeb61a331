"""Deterministic synthetic face identities with AU blendshape bases.

Geometry is a parametric height-field grid: vertex k sits at lattice cell
(row, col) with parameters u = col/(C-1) (left to right) and v = row/(R-1)
(top of head to chin). Any V >= 64 works; the last row may be partial.

Each AU's displacement field is authored once as Gaussian lobes sampled onto
a 9x9 control lattice over the AU's support rectangle, then bilinearly
upsampled to the vertex grid. Upper-face AUs keep their support above the
v = 0.55 band and lower-face AUs below it, so upper AUs can never move jaw
vertices and jaw/mouth AUs can never move upper-face vertices.

Style enters multiplicatively: exaggeration scales every delta globally
(exactly, so halving exaggeration halves each delta bit for bit), region
gains scale per face half, asymmetry tilts left versus right smoothly. All
emitted values are snapped to the float32 grid so bundles survive file
round-trips unchanged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, ValidationError
from .facs import get_registry
from .mesh import AUActivation, BlendDelta, FaceMesh, IdentityBundle, compose

LATTICE = 9
UPPER_BAND = (0.0, 0.548)    # support band for upper-face AUs
LOWER_BAND = (0.552, 1.0)    # support band for lower-face AUs
REGION_SPLIT_V = 0.55

# Named region rectangles (u_min, u_max, v_min, v_max) in face parameters.
REGION_RECTS = {
    "brows": (0.12, 0.88, 0.20, 0.40),
    "eyes": (0.18, 0.82, 0.28, 0.48),
    "nose": (0.32, 0.68, 0.33, 0.62),
    "mouth": (0.22, 0.78, 0.58, 0.84),
    "lips": (0.30, 0.70, 0.62, 0.80),
    "jaw": (0.12, 0.88, 0.78, 1.0),
}


@dataclass(frozen=True)
class StyleParams:
    """Identity-defining style knobs. seed drives the per-identity texture."""

    seed: int
    face_scale: tuple[float, float, float] = (1.0, 1.0, 1.0)
    asymmetry: float = 0.0          # [0, 0.3]
    exaggeration: float = 1.0       # [0.5, 1.5], global AU delta amplitude
    region_gains: Mapping[str, float] = None  # type: ignore[assignment]
    age_factor: float = 0.5         # [0, 1]
    gender_factor: float = 0.5      # [0, 1]

    def __post_init__(self):
        gains = dict(self.region_gains or {"upper": 1.0, "lower": 1.0})
        if set(gains) != {"upper", "lower"}:
            raise ValidationError(f"region_gains must have keys upper/lower, got {sorted(gains)}")
        if not 0.0 <= self.asymmetry <= 0.3:
            raise ValidationError(f"asymmetry must be in [0, 0.3], got {self.asymmetry}")
        if not 0.5 <= self.exaggeration <= 1.5:
            raise ValidationError(f"exaggeration must be in [0.5, 1.5], got {self.exaggeration}")
        for name in ("age_factor", "gender_factor"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {val}")
        object.__setattr__(self, "region_gains", gains)
        object.__setattr__(self, "face_scale", tuple(float(s) for s in self.face_scale))


def sample_style(rng: np.random.Generator) -> StyleParams:
    return StyleParams(
        seed=int(rng.integers(0, 2**31 - 1)),
        face_scale=tuple(rng.uniform(0.9, 1.1, size=3)),
        asymmetry=float(rng.uniform(0.0, 0.3)),
        exaggeration=float(rng.uniform(0.5, 1.5)),
        region_gains={"upper": float(rng.uniform(0.9, 1.1)),
                      "lower": float(rng.uniform(0.9, 1.1))},
        age_factor=float(rng.uniform(0.0, 1.0)),
        gender_factor=float(rng.uniform(0.0, 1.0)),
    )


def lerp_style(a: StyleParams, b: StyleParams, t: float, seed: int | None = None) -> StyleParams:
    """Linear interpolation of the continuous fields; the seed is not
    interpolable and defaults to a's."""
    if not 0.0 <= t <= 1.0:
        raise ValidationError(f"interpolation parameter must be in [0, 1], got {t}")

    def mix(x: float, y: float) -> float:
        return (1.0 - t) * x + t * y

    return StyleParams(
        seed=a.seed if seed is None else seed,
        face_scale=tuple(mix(x, y) for x, y in zip(a.face_scale, b.face_scale)),
        asymmetry=mix(a.asymmetry, b.asymmetry),
        exaggeration=mix(a.exaggeration, b.exaggeration),
        region_gains={k: mix(a.region_gains[k], b.region_gains[k]) for k in ("upper", "lower")},
        age_factor=mix(a.age_factor, b.age_factor),
        gender_factor=mix(a.gender_factor, b.gender_factor),
    )


# ---------------------------------------------------------------------------
# Grid parametrization
# ---------------------------------------------------------------------------

def grid_shape(vertex_count: int) -> tuple[int, int]:
    if vertex_count < 64:
        raise ValidationError(f"vertex count must be >= 64, got {vertex_count}")
    cols = math.ceil(math.sqrt(vertex_count))
    rows = math.ceil(vertex_count / cols)
    return rows, cols


def grid_uv(vertex_count: int) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = grid_shape(vertex_count)
    k = np.arange(vertex_count)
    u = (k % cols) / (cols - 1)
    v = (k // cols) / (rows - 1)
    return u, v


def grid_topology(vertex_count: int) -> np.ndarray:
    """Two triangles per complete grid cell."""
    rows, cols = grid_shape(vertex_count)
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = r * cols + c
            b = a + 1
            d = a + cols
            e = d + 1
            if e < vertex_count:
                faces.append((a, b, d))
                faces.append((b, e, d))
    return np.array(faces, dtype=np.int32)


def with_grid_topology(bundle: IdentityBundle) -> IdentityBundle:
    """Attach the canonical grid connectivity when the template carries none.

    Bundle files store geometry only, so anything loaded from disk needs this
    before it can be rendered or exported as a surface.
    """
    if bundle.template.topology is not None:
        return bundle
    mesh = FaceMesh(bundle.template.positions, grid_topology(bundle.vertex_count))
    return replace(bundle, template=mesh)


# ---------------------------------------------------------------------------
# AU field authoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Lobe:
    cu: float
    cv: float
    su: float
    sv: float
    d: tuple[float, float, float]
    mirror: bool = False  # add a twin at (1-cu, cv) with dx negated


# One entry per registered AU: Gaussian lobes in face parameters.
# dx follows the vertex +x axis (toward the face's right, u -> 1).
_AU_LOBES: dict[int, tuple[_Lobe, ...]] = {
    1:  (_Lobe(0.42, 0.28, 0.060, 0.035, (0.000, 0.050, 0.010), True),),
    2:  (_Lobe(0.27, 0.29, 0.060, 0.035, (0.000, 0.050, 0.005), True),),
    4:  (_Lobe(0.40, 0.30, 0.070, 0.040, (0.020, -0.045, 0.000), True),),
    5:  (_Lobe(0.36, 0.37, 0.050, 0.025, (0.000, 0.035, 0.005), True),),
    6:  (_Lobe(0.28, 0.48, 0.070, 0.035, (0.000, 0.045, 0.020), True),),
    7:  (_Lobe(0.36, 0.40, 0.050, 0.022, (0.000, -0.020, 0.010), True),),
    9:  (_Lobe(0.46, 0.44, 0.045, 0.040, (0.010, 0.040, 0.020), True),),
    10: (_Lobe(0.45, 0.655, 0.040, 0.022, (0.000, 0.040, 0.010), True),),
    11: (_Lobe(0.40, 0.62, 0.045, 0.030, (0.005, 0.030, 0.015), True),),
    12: (_Lobe(0.37, 0.70, 0.045, 0.035, (-0.035, 0.050, 0.010), True),),
    13: (_Lobe(0.39, 0.69, 0.035, 0.030, (-0.010, 0.045, 0.000), True),),
    14: (_Lobe(0.37, 0.71, 0.035, 0.025, (0.030, 0.000, -0.015), True),),
    15: (_Lobe(0.37, 0.72, 0.040, 0.030, (-0.010, -0.045, 0.000), True),),
    16: (_Lobe(0.50, 0.76, 0.070, 0.025, (0.000, -0.040, 0.005), False),),
    17: (_Lobe(0.50, 0.85, 0.080, 0.045, (0.000, 0.045, 0.020), False),),
    18: (_Lobe(0.44, 0.70, 0.035, 0.030, (0.035, 0.000, 0.025), True),),
    20: (_Lobe(0.35, 0.71, 0.045, 0.028, (-0.050, 0.000, -0.005), True),),
    22: (_Lobe(0.46, 0.70, 0.035, 0.030, (0.010, 0.000, 0.040), True),),
    23: (_Lobe(0.45, 0.70, 0.040, 0.025, (0.015, 0.000, -0.020), True),),
    24: (_Lobe(0.50, 0.675, 0.050, 0.018, (0.000, -0.020, -0.010), False),
         _Lobe(0.50, 0.725, 0.050, 0.018, (0.000, 0.020, -0.010), False)),
    25: (_Lobe(0.50, 0.665, 0.050, 0.018, (0.000, 0.020, 0.000), False),
         _Lobe(0.50, 0.735, 0.050, 0.018, (0.000, -0.020, 0.000), False)),
    26: (_Lobe(0.50, 0.86, 0.090, 0.060, (0.000, -0.070, -0.010), False),),
    27: (_Lobe(0.50, 0.86, 0.090, 0.060, (0.000, -0.100, -0.015), False),
         _Lobe(0.38, 0.71, 0.040, 0.030, (0.020, -0.020, 0.000), True)),
    28: (_Lobe(0.50, 0.70, 0.070, 0.035, (0.000, 0.000, -0.035), False),),
    29: (_Lobe(0.50, 0.87, 0.080, 0.050, (0.000, 0.000, 0.050), False),),
    30: (_Lobe(0.50, 0.87, 0.080, 0.050, (0.050, 0.000, 0.000), False),),
    33: (_Lobe(0.28, 0.63, 0.050, 0.045, (-0.010, 0.000, 0.035), True),),
    34: (_Lobe(0.28, 0.64, 0.050, 0.045, (-0.025, 0.000, 0.050), True),),
    35: (_Lobe(0.28, 0.63, 0.050, 0.045, (0.020, 0.000, -0.035), True),),
    38: (_Lobe(0.45, 0.575, 0.022, 0.018, (-0.020, 0.000, 0.005), True),),
    39: (_Lobe(0.45, 0.575, 0.022, 0.018, (0.018, 0.000, -0.005), True),),
    43: (_Lobe(0.36, 0.37, 0.055, 0.028, (0.000, -0.045, 0.000), True),),
}


def _expand_lobes(au_id: int) -> list[_Lobe]:
    lobes = []
    for lobe in _AU_LOBES[au_id]:
        lobes.append(lobe)
        if lobe.mirror:
            dx, dy, dz = lobe.d
            lobes.append(_Lobe(1.0 - lobe.cu, lobe.cv, lobe.su, lobe.sv, (-dx, dy, dz)))
    return lobes


def au_support_rect(au_id: int) -> tuple[float, float, float, float]:
    """Bounding box of the AU's lobes (2.5 sigma), clipped to its face band."""
    registry = get_registry()
    region = registry.descriptor(au_id).region
    band = UPPER_BAND if region == "upper" else LOWER_BAND
    lobes = _expand_lobes(au_id)
    u0 = min(l.cu - 2.5 * l.su for l in lobes)
    u1 = max(l.cu + 2.5 * l.su for l in lobes)
    v0 = min(l.cv - 2.5 * l.sv for l in lobes)
    v1 = max(l.cv + 2.5 * l.sv for l in lobes)
    return (max(u0, 0.0), min(u1, 1.0), max(v0, band[0]), min(v1, band[1]))


_lattice_cache: dict[int, tuple[np.ndarray, tuple[float, float, float, float]]] = {}


def au_lattice(au_id: int) -> tuple[np.ndarray, tuple[float, float, float, float]]:
    """(9, 9, 3) control lattice over the AU's support rect."""
    if au_id not in _lattice_cache:
        if au_id not in _AU_LOBES:
            raise ValidationError(f"no authored field for AU{au_id}")
        rect = au_support_rect(au_id)
        u = np.linspace(rect[0], rect[1], LATTICE)
        v = np.linspace(rect[2], rect[3], LATTICE)
        uu, vv = np.meshgrid(u, v)  # row-major: index [iv, iu]
        field = np.zeros((LATTICE, LATTICE, 3))
        for lobe in _expand_lobes(au_id):
            w = np.exp(-0.5 * (((uu - lobe.cu) / lobe.su) ** 2 + ((vv - lobe.cv) / lobe.sv) ** 2))
            field += w[:, :, None] * np.asarray(lobe.d)
        _lattice_cache[au_id] = (field, rect)
    return _lattice_cache[au_id]


def _sample_lattice(field: np.ndarray, rect, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear upsample; zero outside the support rect."""
    u0, u1, v0, v1 = rect
    out = np.zeros((u.size, 3))
    inside = (u >= u0) & (u <= u1) & (v >= v0) & (v <= v1)
    if not inside.any():
        return out
    gu = (u[inside] - u0) / (u1 - u0) * (LATTICE - 1)
    gv = (v[inside] - v0) / (v1 - v0) * (LATTICE - 1)
    iu = np.clip(gu.astype(np.int64), 0, LATTICE - 2)
    iv = np.clip(gv.astype(np.int64), 0, LATTICE - 2)
    fu = (gu - iu)[:, None]
    fv = (gv - iv)[:, None]
    out[inside] = ((1 - fv) * (1 - fu) * field[iv, iu]
                   + (1 - fv) * fu * field[iv, iu + 1]
                   + fv * (1 - fu) * field[iv + 1, iu]
                   + fv * fu * field[iv + 1, iu + 1])
    return out


def au_vertex_mask(au_id: int, vertex_count: int) -> np.ndarray:
    """Indices of vertices inside the AU's support rect (superset of nonzero)."""
    u, v = grid_uv(vertex_count)
    u0, u1, v0, v1 = au_support_rect(au_id)
    return np.nonzero((u >= u0) & (u <= u1) & (v >= v0) & (v <= v1))[0]


def region_masks(vertex_count: int) -> dict[str, np.ndarray]:
    """Vertex index arrays for the named regions plus upper/lower halves."""
    u, v = grid_uv(vertex_count)
    masks = {}
    for name, (u0, u1, v0, v1) in REGION_RECTS.items():
        masks[name] = np.nonzero((u >= u0) & (u <= u1) & (v >= v0) & (v <= v1))[0]
    masks["upper_face"] = np.nonzero(v < REGION_SPLIT_V)[0]
    masks["lower_face"] = np.nonzero(v >= REGION_SPLIT_V)[0]
    return masks


# ---------------------------------------------------------------------------
# Template surface
# ---------------------------------------------------------------------------

def _gauss(u, v, cu, cv, su, sv):
    return np.exp(-0.5 * (((u - cu) / su) ** 2 + ((v - cv) / sv) ** 2))


def _base_surface(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    x = (u - 0.5) * 1.6
    y = (0.5 - v) * 2.0
    z = (0.55 * _gauss(u, v, 0.5, 0.5, 0.42, 0.52)
         + 0.18 * _gauss(u, v, 0.5, 0.52, 0.06, 0.16)      # nose ridge
         + 0.05 * _gauss(u, v, 0.35, 0.30, 0.10, 0.04)     # brow ridges
         + 0.05 * _gauss(u, v, 0.65, 0.30, 0.10, 0.04)
         - 0.06 * _gauss(u, v, 0.35, 0.37, 0.07, 0.035)    # eye sockets
         - 0.06 * _gauss(u, v, 0.65, 0.37, 0.07, 0.035)
         + 0.06 * _gauss(u, v, 0.5, 0.70, 0.11, 0.05)      # lips
         + 0.05 * _gauss(u, v, 0.5, 0.88, 0.10, 0.07))     # chin
    return np.stack([x, y, z], axis=1)


def _age_field(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Sagging cheeks and drooping brows as age_factor grows."""
    sag = _gauss(u, v, 0.30, 0.62, 0.09, 0.08) + _gauss(u, v, 0.70, 0.62, 0.09, 0.08)
    brow = _gauss(u, v, 0.5, 0.29, 0.22, 0.05)
    out = np.zeros((u.size, 3))
    out[:, 1] = -0.05 * sag - 0.02 * brow
    out[:, 2] = -0.03 * sag
    return out


def _gender_field(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Wider jaw and heavier brow ridge toward gender_factor 1."""
    jaw = _gauss(u, v, 0.28, 0.82, 0.10, 0.08) + _gauss(u, v, 0.72, 0.82, 0.10, 0.08)
    brow = _gauss(u, v, 0.5, 0.30, 0.22, 0.05)
    out = np.zeros((u.size, 3))
    out[:, 0] = 0.05 * jaw * np.sign(u - 0.5)
    out[:, 2] = 0.04 * brow + 0.02 * jaw
    return out


def _seed_jitter(u: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
    """Smooth per-identity surface noise from a 6x6 control lattice."""
    rng = np.random.default_rng(seed)
    lattice = rng.normal(0.0, 0.008, size=(6, 6, 3))
    gu = np.clip(u, 0.0, 1.0) * 5.0
    gv = np.clip(v, 0.0, 1.0) * 5.0
    iu = np.clip(gu.astype(np.int64), 0, 4)
    iv = np.clip(gv.astype(np.int64), 0, 4)
    fu = (gu - iu)[:, None]
    fv = (gv - iv)[:, None]
    return ((1 - fv) * (1 - fu) * lattice[iv, iu]
            + (1 - fv) * fu * lattice[iv, iu + 1]
            + fv * (1 - fu) * lattice[iv + 1, iu]
            + fv * fu * lattice[iv + 1, iu + 1])


def _f32_snap(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def generate_identity(style: StyleParams, vertex_count: int = 529) -> IdentityBundle:
    """Deterministic bundle for the given style; no annotated poses attached."""
    registry = get_registry()
    u, v = grid_uv(vertex_count)
    scale = np.asarray(style.face_scale)

    surface = _base_surface(u, v)
    surface = surface + style.age_factor * _age_field(u, v)
    surface = surface + style.gender_factor * _gender_field(u, v)
    surface = surface + _seed_jitter(u, v, style.seed)
    template = FaceMesh(_f32_snap(surface * scale), grid_topology(vertex_count))

    # Per-AU amplitude jitter comes from the style seed, after the template
    # noise draw, in ascending AU order; exaggeration multiplies last so that
    # halving it halves every delta exactly.
    jitter_rng = np.random.default_rng(style.seed)
    jitter_rng.normal(size=(6, 6, 3))  # consume the template noise draw
    side = np.tanh(4.0 * (u - 0.5))
    bases: dict[int, BlendDelta] = {}
    for descriptor in registry.descriptors:
        au = descriptor.au_id
        field, rect = au_lattice(au)
        raw = _sample_lattice(field, rect, u, v)
        gain = style.region_gains[descriptor.region]
        au_jitter = float(jitter_rng.uniform(0.95, 1.05))
        modulation = gain * au_jitter * (1.0 + 0.5 * style.asymmetry * side)
        base = raw * modulation[:, None] * scale
        bases[au] = BlendDelta(au, _f32_snap(style.exaggeration * base))

    tags = {
        "asymmetry": f"{style.asymmetry:.3f}",
        "exaggeration": f"{style.exaggeration:.3f}",
        "age": f"{style.age_factor:.3f}",
        "gender": f"{style.gender_factor:.3f}",
    }
    return IdentityBundle("style_" + str(style.seed), template, bases, (), tags)


_F32_LO = float(np.float32(0.3))


def _random_activation(rng: np.random.Generator, au_ids: Sequence[int]) -> AUActivation:
    """Single AU half the time, else a 2-4 AU combination; intensities in
    [0.3, 1.0] snapped to float32."""
    if rng.uniform() < 0.5:
        chosen = [au_ids[rng.integers(0, len(au_ids))]]
    else:
        k = int(rng.integers(2, 5))
        chosen = list(rng.choice(np.asarray(au_ids), size=k, replace=False))
    weights = {}
    for au in chosen:
        w = float(np.float32(rng.uniform(0.3, 1.0)))
        weights[int(au)] = min(max(w, _F32_LO), 1.0)
    return AUActivation(weights)


def generate_annotated_poses(bundle: IdentityBundle, count: int,
                             seed: int) -> list[tuple[AUActivation, FaceMesh]]:
    """Seeded (activation, posed mesh) pairs; each mesh is exactly the
    composition of the bundle under its activation."""
    rng = np.random.default_rng(seed)
    poses = []
    for _ in range(count):
        act = _random_activation(rng, bundle.au_ids)
        poses.append((act, compose(bundle, act)))
    return poses


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def counts(self) -> tuple[int, int, int]:
        return len(self.train), len(self.val), len(self.test)


def split_counts(count: int) -> tuple[int, int, int]:
    """8:1:1 with largest-remainder rounding; ties resolve train, val, test."""
    ratios = (0.8, 0.1, 0.1)
    exact = [count * r for r in ratios]
    floors = [int(math.floor(x)) for x in exact]
    remainder = count - sum(floors)
    order = sorted(range(3), key=lambda i: (-(exact[i] - floors[i]), i))
    for i in range(remainder):
        floors[order[i]] += 1
    return tuple(floors)  # type: ignore[return-value]


@dataclass(frozen=True)
class SynthDataset:
    bundles: Mapping[str, IdentityBundle]
    split: DatasetSplit
    styles: Mapping[str, StyleParams]

    def ordered_ids(self) -> list[str]:
        return sorted(self.bundles)


def generate_dataset(count: int, seed: int, vertex_count: int = 529,
                     poses_per_identity: int = 4) -> SynthDataset:
    if count < 10:
        raise ValidationError(f"dataset needs at least 10 identities, got {count}")
    rng = np.random.default_rng(seed)
    bundles: dict[str, IdentityBundle] = {}
    styles: dict[str, StyleParams] = {}
    for i in range(count):
        style = sample_style(rng)
        ident = f"identity_{i:04d}"
        bundle = generate_identity(style, vertex_count)
        poses = generate_annotated_poses(bundle, poses_per_identity,
                                         seed=int(rng.integers(0, 2**31 - 1)))
        bundle = replace(bundle, identity_id=ident, annotated_poses=tuple(poses))
        bundles[ident] = bundle
        styles[ident] = style
    ids = sorted(bundles)
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_val, n_test = split_counts(count)
    split = DatasetSplit(tuple(shuffled[:n_train]),
                         tuple(shuffled[n_train:n_train + n_val]),
                         tuple(shuffled[n_train + n_val:]))
    return SynthDataset(bundles, split, styles)


def export_augmentation(bundles: Mapping[str, IdentityBundle], per_identity: int,
                        seed: int, out_dir) -> list:
    """Seeded (posed mesh, AU label vector) pairs for detector training.

    One OBJ per sample plus a tab-separated manifest with one row per sample:
    identity id, mesh file name, and the activation binarized at 0.5 as a
    bit string in ascending AU id order. Reruns with the same seed write the
    same bytes.
    """
    from .formats import save_obj

    if per_identity < 1:
        raise ContractError(f"per_identity must be >= 1, got {per_identity}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    rows = []
    for idx, ident in enumerate(sorted(bundles)):
        bundle = bundles[ident]
        poses = generate_annotated_poses(bundle, per_identity,
                                         seed=int(np.random.default_rng((seed, idx)).integers(0, 2**31 - 1)))
        for k, (act, mesh) in enumerate(poses):
            name = f"{ident}_aug{k:03d}.obj"
            save_obj(mesh, out / name)
            written.append(out / name)
            bits = "".join("1" if act.weights.get(au, 0.0) > 0.5 else "0"
                           for au in bundle.au_ids)
            rows.append(f"{ident}\t{name}\t{bits}")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(rows) + "\n", encoding="utf-8")
    written.append(manifest)
    return written
