"""File formats: identity bundles (AUBD), offset sequences (AUOS), OBJ meshes.

All binary formats are little-endian with float32 payloads. The bundle
carries a trailing CRC32 over everything between the magic and the checksum.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .mesh import AU_COUNT, AUActivation, BlendDelta, FaceMesh, IdentityBundle, OffsetSequence

BUNDLE_MAGIC = b"AUBD"
BUNDLE_VERSION = 1
OFFSETS_MAGIC = b"AUOS"


class _Reader:
    """Bounds-checked little-endian reader over a bytes object."""

    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated (needed {n} bytes at offset {self.pos})")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def f32_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64)

    def done(self) -> bool:
        return self.pos == len(self.data)


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_bundle(bundle: IdentityBundle, path: str | Path) -> None:
    v = bundle.vertex_count
    au_ids = list(bundle.bases)
    parts = [struct.pack("<IIII", BUNDLE_VERSION, v, AU_COUNT, len(bundle.annotated_poses))]
    ident = bundle.identity_id.encode("utf-8")
    parts.append(struct.pack("<I", len(ident)))
    parts.append(ident)
    parts.append(_f32_bytes(bundle.template.positions))
    for au in au_ids:
        parts.append(struct.pack("<H", au))
        parts.append(_f32_bytes(bundle.bases[au].deltas))
    for act, posed in bundle.annotated_poses:
        parts.append(_f32_bytes(act.dense(au_ids)))
        parts.append(_f32_bytes(posed.positions))
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(BUNDLE_MAGIC + payload + struct.pack("<I", crc))


def load_bundle(path: str | Path, expected_au_ids=None) -> IdentityBundle:
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != BUNDLE_MAGIC:
        raise FormatError(f"{path}: not an identity bundle (bad magic)")
    payload, stored = data[4:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != stored:
        raise FormatError(f"{path}: checksum mismatch")
    r = _Reader(payload, str(path))
    version = r.u32()
    if version != BUNDLE_VERSION:
        raise FormatError(f"{path}: unsupported bundle version {version}")
    v, n, pose_count = r.u32(), r.u32(), r.u32()
    if n != AU_COUNT:
        raise FormatError(f"{path}: expected {AU_COUNT} AU bases, found {n}")
    ident = r.take(r.u32()).decode("utf-8")
    template = FaceMesh(r.f32_array(3 * v).reshape(v, 3))
    bases: dict[int, BlendDelta] = {}
    for _ in range(n):
        au = r.u16()
        if au in bases:
            raise FormatError(f"{path}: duplicate basis for AU{au}")
        bases[au] = BlendDelta(au, r.f32_array(3 * v).reshape(v, 3))
    if expected_au_ids is not None and sorted(bases) != sorted(expected_au_ids):
        raise FormatError(f"{path}: basis AU ids do not match the registry")
    au_order = sorted(bases)
    poses = []
    for _ in range(pose_count):
        dense = r.f32_array(n)
        act = AUActivation({au: float(w) for au, w in zip(au_order, dense) if w != 0.0})
        poses.append((act, FaceMesh(r.f32_array(3 * v).reshape(v, 3))))
    if not r.done():
        raise FormatError(f"{path}: {len(payload) - r.pos} trailing bytes after last pose")
    return IdentityBundle(ident, template, bases, tuple(poses))


def save_offsets(seq: OffsetSequence, path: str | Path) -> None:
    header = struct.pack("<IIf", seq.frame_count, seq.vertex_count, seq.frame_rate)
    Path(path).write_bytes(OFFSETS_MAGIC + header + _f32_bytes(seq.offsets))


def load_offsets(path: str | Path) -> OffsetSequence:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != OFFSETS_MAGIC:
        raise FormatError(f"{path}: not an offset sequence (bad magic)")
    t, v, rate = struct.unpack("<IIf", data[4:16])
    expected = 16 + 12 * t * v
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for {t}x{v} frames, found {len(data)}")
    offsets = np.frombuffer(data[16:], dtype="<f4").astype(np.float64).reshape(t, v, 3)
    return OffsetSequence(offsets, float(rate))


def save_obj(mesh: FaceMesh, path: str | Path) -> None:
    """Writes v/f lines; coordinates keep 9 significant digits."""
    lines = []
    for x, y, z in mesh.positions:
        lines.append(f"v {x:.9g} {y:.9g} {z:.9g}")
    if mesh.topology is not None:
        for a, b, c in mesh.topology:
            lines.append(f"f {a + 1} {b + 1} {c + 1}")
    Path(path).write_text("\n".join(lines) + "\n")


def _face_index(token: str, line_no: int, path) -> int:
    head = token.split("/")[0]
    try:
        idx = int(head)
    except ValueError:
        raise FormatError(f"{path}:{line_no}: bad face index {token!r}") from None
    if idx < 1:
        raise FormatError(f"{path}:{line_no}: face indices must be positive and 1-based")
    return idx - 1


def load_obj(path: str | Path) -> FaceMesh:
    positions: list[list[float]] = []
    faces: list[list[int]] = []
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise FormatError(f"{path}:{line_no}: vertex line needs 3 coordinates")
            try:
                positions.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError:
                raise FormatError(f"{path}:{line_no}: bad vertex coordinate") from None
        elif parts[0] == "f":
            if len(parts) != 4:
                raise FormatError(f"{path}:{line_no}: only triangle faces are supported")
            faces.append([_face_index(p, line_no, path) for p in parts[1:]])
        # other OBJ statements (vn, vt, usemtl, ...) are ignored
    if not positions:
        raise FormatError(f"{path}: no vertices found")
    pos = np.array(positions, dtype=np.float64)
    topo = np.array(faces, dtype=np.int32) if faces else None
    if topo is not None and topo.max() >= len(positions):
        raise FormatError(f"{path}: face references vertex {topo.max() + 1} of {len(positions)}")
    return FaceMesh(pos, topo)
