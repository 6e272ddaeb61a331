"""HTTP service: templates, prediction, composition and animation over JSON.

Responses are rendered through one canonical encoder so identical requests
produce byte-identical bodies; anything request-dependent but non-semantic
(compute timing) travels in headers instead. The state snapshot is immutable
while serving apart from the predicted-basis cache and request counters.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response

from .checkpoint import KIND_CODEBOOK, KIND_STYLE, load_checkpoint
from .errors import FormatError, ValidationError
from .facs import FacsRegistry, get_registry
from .formats import load_bundle, load_offsets
from .mesh import AUActivation, IdentityBundle, OffsetSequence, compose, compose_animated
from .model import CodebookAutoencoder, PredictedBasis, StylePredictor, predict_basis
from .synth import with_grid_topology

PORT_ENV = "AUBLEND_PORT"
DEFAULT_PORT = 8471


def default_port() -> int:
    raw = os.environ.get(PORT_ENV)
    if raw is None:
        return DEFAULT_PORT
    try:
        port = int(raw)
    except ValueError:
        raise ValidationError(f"{PORT_ENV} must be an integer, got {raw!r}") from None
    if not 1 <= port <= 65535:
        raise ValidationError(f"{PORT_ENV} out of range: {port}")
    return port


@dataclass
class ServiceState:
    bundles: dict[str, IdentityBundle]
    registry: FacsRegistry
    codebook: CodebookAutoencoder | None = None
    style: StylePredictor | None = None
    speech: dict[str, OffsetSequence] = field(default_factory=dict)
    predicted: dict[str, PredictedBasis] = field(default_factory=dict)
    counters: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        au_ids = self.registry.au_ids
        for ident, bundle in self.bundles.items():
            if bundle.au_ids != au_ids:
                raise ValidationError(f"identity {ident!r}: AU ids do not match the registry")

    def count(self, endpoint: str) -> None:
        self.counters[endpoint] = self.counters.get(endpoint, 0) + 1

    @property
    def models_loaded(self) -> bool:
        return self.codebook is not None and self.style is not None


def load_state(data_dir: str | Path, models_dir: str | Path | None = None) -> ServiceState:
    """Bundle every *.aubd under data_dir (plus *.auos speech offsets) and,
    when a models directory is given, the trained checkpoint pair."""
    data = Path(data_dir)
    bundles: dict[str, IdentityBundle] = {}
    for path in sorted(data.glob("*.aubd")):
        bundle = with_grid_topology(load_bundle(path))
        bundles[bundle.identity_id] = bundle
    if not bundles:
        raise FormatError(f"{data}: no identity bundles (*.aubd) found")
    speech = {p.stem: load_offsets(p) for p in sorted(data.glob("*.auos"))}
    codebook = style = None
    if models_dir is not None:
        models = Path(models_dir)
        codebook = load_checkpoint(models / "codebook.aubm", expected_kind=KIND_CODEBOOK)
        style = load_checkpoint(models / "styleblend.aubm", expected_kind=KIND_STYLE)
    return ServiceState(bundles=bundles, registry=get_registry(),
                        codebook=codebook, style=style, speech=speech)


def _json_bytes(payload) -> bytes:
    return json.dumps(payload, separators=(",", ":"), sort_keys=True).encode("utf-8")


def _reply(payload, status: int = 200, headers: dict[str, str] | None = None) -> Response:
    return Response(content=_json_bytes(payload), status_code=status,
                    media_type="application/json", headers=headers)


def _error(status: int, message: str) -> Response:
    return _reply({"error": message}, status=status)


def _activation_violations(registry: FacsRegistry, raw) -> list[str]:
    problems = []
    if not isinstance(raw, dict):
        return [f"activations must be an object of AU id to weight, got {type(raw).__name__}"]
    for key, value in raw.items():
        try:
            au = int(key)
        except (TypeError, ValueError):
            problems.append(f"AU id {key!r} is not an integer")
            continue
        if au not in registry.au_ids:
            problems.append(f"AU{au} is not registered")
        try:
            w = float(value)
        except (TypeError, ValueError):
            problems.append(f"AU{au}: weight {value!r} is not a number")
            continue
        if not np.isfinite(w) or w < 0.0 or w > 1.0:
            problems.append(f"AU{au}: weight {w} outside [0, 1]")
    return problems


def _parse_activation(registry: FacsRegistry, raw) -> AUActivation | Response:
    violations = _activation_violations(registry, raw)
    if violations:
        return _reply({"violations": violations}, status=422)
    return AUActivation({int(k): float(v) for k, v in raw.items()})


def _flat(positions: np.ndarray) -> list[float]:
    return positions.reshape(-1).tolist()


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="aublend", docs_url=None, redoc_url=None)
    app.state.service = state

    @app.get("/api/aus")
    def list_aus():
        state.count("aus")
        return _reply({"aus": [{"id": d.au_id, "name": d.name, "region": d.region}
                               for d in state.registry.descriptors]})

    @app.get("/api/emotions")
    def list_emotions():
        state.count("emotions")
        presets = {name: {str(au): w for au, w in preset.activation.weights.items()}
                   for name, preset in state.registry.presets.items()}
        return _reply({"emotions": presets})

    @app.get("/api/identities")
    def list_identities():
        state.count("identities")
        rows = [{"id": ident,
                 "vertex_count": bundle.vertex_count,
                 "pose_count": len(bundle.annotated_poses),
                 "tags": dict(bundle.style_tags)}
                for ident, bundle in sorted(state.bundles.items())]
        return _reply({"identities": rows, "models_loaded": state.models_loaded})

    @app.get("/api/identity/{identity_id}/template")
    def get_template(identity_id: str):
        state.count("template")
        bundle = state.bundles.get(identity_id)
        if bundle is None:
            return _error(404, f"unknown identity {identity_id!r}")
        mesh = bundle.template
        return _reply({"identity_id": identity_id,
                       "vertex_count": mesh.vertex_count,
                       "vertices": _flat(mesh.positions),
                       "topology": mesh.topology.reshape(-1).tolist()})

    @app.post("/api/identity/{identity_id}/predict")
    def predict_identity(identity_id: str):
        state.count("predict")
        bundle = state.bundles.get(identity_id)
        if bundle is None:
            return _error(404, f"unknown identity {identity_id!r}")
        if not state.models_loaded:
            return _error(503, "model not loaded")
        cached = identity_id in state.predicted
        if not cached:
            state.predicted[identity_id] = predict_basis(
                state.style, state.codebook, bundle.template.flat(),
                list(state.registry.au_ids))
        result = state.predicted[identity_id]
        summary = []
        for au in state.registry.au_ids:
            deltas = result.bases[au].deltas
            norms = np.linalg.norm(deltas, axis=1)
            summary.append({"au": au,
                            "mean_delta": float(norms.mean()),
                            "max_delta": float(norms.max())})
        return _reply({"identity_id": identity_id, "cached": cached,
                       "bases": summary})

    @app.post("/api/compose")
    async def compose_pose(request: Request):
        state.count("compose")
        body = await request.json()
        identity_id = body.get("identity_id")
        bundle = state.bundles.get(identity_id)
        if bundle is None:
            return _error(404, f"unknown identity {identity_id!r}")
        act = _parse_activation(state.registry, body.get("activations", {}))
        if isinstance(act, Response):
            return act
        started = time.perf_counter()
        mesh = compose(bundle, act)
        elapsed_ms = (time.perf_counter() - started) * 1e3
        payload = {"identity_id": identity_id,
                   "vertex_count": mesh.vertex_count,
                   "vertices": _flat(mesh.positions)}
        if body.get("include_topology"):
            payload["topology"] = mesh.topology.reshape(-1).tolist()
        return _reply(payload, headers={"Cache-Control": "no-store",
                                        "X-Compute-Ms": f"{elapsed_ms:.3f}"})

    @app.post("/api/animate")
    async def animate(request: Request):
        state.count("animate")
        body = await request.json()
        identity_id = body.get("identity_id")
        bundle = state.bundles.get(identity_id)
        if bundle is None:
            return _error(404, f"unknown identity {identity_id!r}")
        speech_id = body.get("speech_offsets_id")
        speech = state.speech.get(speech_id)
        if speech is None:
            return _error(404, f"unknown speech offsets {speech_id!r}")
        emotion = body.get("emotion")
        intensity = float(body.get("intensity", 1.0))
        try:
            offset = emotion_offset(bundle, state.registry, emotion, intensity)
        except ValidationError as err:
            return _reply({"violations": [str(err)]}, status=422)
        expression = OffsetSequence(offset[None, :, :], speech.frame_rate)
        frames = compose_animated(bundle, speech, expression)
        handle = f"{identity_id}:{emotion}:{intensity:g}:{speech_id}"
        return _reply({"handle": handle,
                       "identity_id": identity_id,
                       "frame_count": len(frames),
                       "frame_rate": speech.frame_rate,
                       "vertex_count": bundle.vertex_count,
                       "frames": [_flat(f.positions) for f in frames]})

    return app


def emotion_offset(bundle: IdentityBundle, registry: FacsRegistry,
                   emotion: str, intensity: float) -> np.ndarray:
    """Expression offset (V, 3) for an emotion preset scaled by intensity.

    Intensity zero short-circuits to no offset; the preset scaler itself
    treats zero as out of range because a zero-weight activation is not a
    valid preset application.
    """
    if intensity == 0.0:
        return np.zeros((bundle.vertex_count, 3))
    act = registry.emotion_to_activation(emotion, intensity)
    offset = np.zeros((bundle.vertex_count, 3))
    for au, w in sorted(act.weights.items()):
        offset += w * bundle.bases[au].deltas
    return offset


def serve(data_dir, models_dir=None, port: int | None = None) -> None:
    """Blocking uvicorn loop over a freshly loaded state snapshot."""
    import uvicorn

    state = load_state(data_dir, models_dir)
    app = create_app(state)
    uvicorn.run(app, host="127.0.0.1", port=port if port is not None else default_port(),
                log_level="warning")
