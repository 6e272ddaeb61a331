"""Model checkpoints (AUBM): architecture header plus named float64 tensors,
little-endian, CRC32-trailed like the other binary formats.

Parameters keep full precision on disk: the style readout is solved in closed
form and can carry large, delicately cancelling weights, so rounding them
would visibly change predictions.
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError
from .formats import _Reader
from .model import CodebookAutoencoder, HyperParams, StylePredictor

CHECKPOINT_MAGIC = b"AUBM"
CHECKPOINT_VERSION = 1
KIND_CODEBOOK = 1
KIND_STYLE = 2

_HP_FIELDS = ("vertex_count", "token_dim", "codebook_size", "layers", "heads",
              "mlp_ratio", "tcn_channels", "tcn_kernel", "style_dim")


def _kind_of(model) -> int:
    if isinstance(model, CodebookAutoencoder):
        return KIND_CODEBOOK
    if isinstance(model, StylePredictor):
        return KIND_STYLE
    raise TypeError(f"not a checkpointable model: {type(model).__name__}")


def save_checkpoint(model, path: str | Path) -> None:
    hp = model.hp
    parts = [struct.pack("<III", CHECKPOINT_VERSION, _kind_of(model),
                         1 if model.trained else 0)]
    parts.append(struct.pack("<9I", *(getattr(hp, f) for f in _HP_FIELDS)))
    parts.append(struct.pack("<I", len(hp.dilations)))
    parts.append(struct.pack(f"<{len(hp.dilations)}I", *hp.dilations))
    parts.append(struct.pack("<d", hp.beta))
    parts.append(struct.pack("<I", len(model.params)))
    for name, tensor in model.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        shape = tensor.values.shape
        parts.append(struct.pack("<B", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(np.ascontiguousarray(tensor.values, dtype="<f8").tobytes())
    payload = b"".join(parts)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(CHECKPOINT_MAGIC + payload + struct.pack("<I", crc))


def load_checkpoint(path: str | Path, expected_kind: int | None = None):
    """Rebuild a model from disk. Returns a CodebookAutoencoder or a
    StylePredictor according to the stored kind."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (bad magic)")
    payload, stored = data[4:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(payload) & 0xFFFFFFFF != stored:
        raise FormatError(f"{path}: checksum mismatch")
    r = _Reader(payload, str(path))
    version, kind, trained = r.u32(), r.u32(), r.u32()
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if kind not in (KIND_CODEBOOK, KIND_STYLE):
        raise FormatError(f"{path}: unknown model kind {kind}")
    if expected_kind is not None and kind != expected_kind:
        want = "codebook" if expected_kind == KIND_CODEBOOK else "style"
        raise FormatError(f"{path}: checkpoint holds the wrong model kind "
                          f"(wanted {want})")
    fields = {f: r.u32() for f in _HP_FIELDS}
    dilations = tuple(r.u32() for _ in range(r.u32()))
    beta = struct.unpack("<d", r.take(8))[0]
    hp = HyperParams(dilations=dilations, beta=beta, **fields)
    model = (CodebookAutoencoder if kind == KIND_CODEBOOK else StylePredictor)(hp, seed=0)
    count = r.u32()
    seen = set()
    for _ in range(count):
        name = r.take(r.u16()).decode("utf-8")
        ndim = struct.unpack("<B", r.take(1))[0]
        shape = tuple(r.u32() for _ in range(ndim))
        items = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(r.take(8 * items), dtype="<f8").astype(np.float64)
        if name not in model.params:
            raise FormatError(f"{path}: unknown parameter {name!r}")
        tensor = model.params[name]
        if tensor.values.shape != shape:
            raise FormatError(f"{path}: parameter {name!r} has shape {shape}, "
                              f"expected {tensor.values.shape}")
        tensor.values[...] = flat.reshape(shape)
        seen.add(name)
    if not r.done():
        raise FormatError(f"{path}: trailing bytes after last parameter")
    missing = set(model.params) - seen
    if missing:
        raise FormatError(f"{path}: missing parameters: {sorted(missing)[:3]}")
    model.trained = bool(trained)
    return model
