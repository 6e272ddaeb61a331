"""Evaluation metrics: composed-pose MSE for predicted bases, plus the
sequence metrics used for animated output (lip error, velocity error,
upper-face dynamics, cross-style diversity).

Pose-error evaluation goes through a prediction callback so the same harness
scores trained models and the ground-truth oracle; the oracle must come out
at exactly zero, anything else is error introduced by the harness itself.
"""
from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ContractError, ShapeError, ValidationError
from .mesh import AUActivation, BlendDelta, IdentityBundle, compose, vertex_mse
from .model import predict_basis
from .synth import SynthDataset

PredictFn = Callable[[IdentityBundle], Mapping[int, BlendDelta]]

MULTI_COMBOS_PER_IDENTITY = 20
MULTI_AU_COUNT = (2, 4)          # inclusive bounds on AUs per combination
MULTI_INTENSITY = (0.3, 1.0)


# ---------------------------------------------------------------------------
# Pose-error evaluation
# ---------------------------------------------------------------------------

def model_predictor(style_model, codebook_model) -> PredictFn:
    """Callback backed by the trained pair: template in, 32 bases out."""
    def predict(bundle: IdentityBundle) -> Mapping[int, BlendDelta]:
        result = predict_basis(style_model, codebook_model,
                               bundle.template.flat(), list(bundle.au_ids))
        return result.bases
    return predict


def oracle_predictor() -> PredictFn:
    """Upper bound: hand back the ground-truth bases unchanged."""
    def predict(bundle: IdentityBundle) -> Mapping[int, BlendDelta]:
        return bundle.bases
    return predict


def sample_multi_activations(au_ids: Sequence[int], rng: np.random.Generator,
                             count: int = MULTI_COMBOS_PER_IDENTITY
                             ) -> list[AUActivation]:
    """Seeded combinations of 2-4 AUs with intensities in [0.3, 1.0]."""
    ids = np.asarray(sorted(au_ids), dtype=np.int64)
    lo, hi = MULTI_AU_COUNT
    combos = []
    for _ in range(count):
        k = int(rng.integers(lo, hi + 1))
        chosen = rng.choice(ids, size=k, replace=False)
        weights = rng.uniform(MULTI_INTENSITY[0], MULTI_INTENSITY[1], size=k)
        combos.append(AUActivation({int(a): float(w)
                                    for a, w in zip(chosen, weights)}))
    return combos


def eval_mse(predict_fn: PredictFn, dataset: SynthDataset, mode: str,
             seed: int = 0, identities: Sequence[str] | None = None) -> float:
    """Mean vertex MSE between poses composed from predicted vs true bases.

    mode "single" activates each AU alone at full intensity; "multi" draws
    seeded 2-4 AU combinations per identity. Defaults to the test split.
    """
    if mode not in ("single", "multi"):
        raise ValidationError(f"eval_mse mode must be single or multi, got {mode!r}")
    ids = sorted(identities) if identities is not None else sorted(dataset.split.test)
    if not ids:
        raise ContractError("eval_mse needs at least one identity")
    rng = np.random.default_rng(seed)
    errs = []
    for ident in ids:
        bundle = dataset.bundles[ident]
        predicted = replace(bundle, bases=dict(predict_fn(bundle)))
        if mode == "single":
            activations = [AUActivation({au: 1.0}) for au in bundle.au_ids]
        else:
            activations = sample_multi_activations(bundle.au_ids, rng)
        for act in activations:
            errs.append(vertex_mse(compose(predicted, act), compose(bundle, act)))
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# Sequence metrics
# ---------------------------------------------------------------------------

def _as_sequence(seq, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(seq, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ShapeError(f"{name} must be (T, V, 3), got {arr.shape}")
    return arr


def _sequence_pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = _as_sequence(pred, "pred_seq")
    g = _as_sequence(gt, "gt_seq")
    if p.shape != g.shape:
        raise ShapeError(f"sequence shapes differ: {p.shape} vs {g.shape}")
    return p, g


def _vertex_mask(mask, vertex_count: int, name: str) -> np.ndarray:
    m = np.asarray(mask, dtype=np.int64).reshape(-1)
    if m.size == 0:
        raise ValidationError(f"{name} is empty")
    if m.min() < 0 or m.max() >= vertex_count:
        raise ValidationError(f"{name} indices out of range for V={vertex_count}")
    return m


def load_mask(path: str | Path) -> np.ndarray:
    """Vertex index list, one integer per line; '#' starts a comment."""
    indices = []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            indices.append(int(line))
        except ValueError:
            raise ValidationError(f"mask file {path}: bad index line {raw!r}") from None
    if not indices:
        raise ValidationError(f"mask file {path} holds no indices")
    return np.asarray(indices, dtype=np.int64)


def lve(pred_seq, gt_seq, lip_mask) -> float:
    """Mean over frames of the worst squared lip-vertex error."""
    p, g = _sequence_pair(pred_seq, gt_seq)
    m = _vertex_mask(lip_mask, p.shape[1], "lip_mask")
    sq = ((p[:, m, :] - g[:, m, :]) ** 2).sum(axis=2)     # (T, |mask|)
    return float(np.mean(sq.max(axis=1)))


def vlve(pred_seq, gt_seq, lip_mask) -> float:
    """lve on frame-difference velocities."""
    p, g = _sequence_pair(pred_seq, gt_seq)
    if p.shape[0] < 2:
        raise ContractError(f"vlve needs at least 2 frames, got {p.shape[0]}")
    return lve(np.diff(p, axis=0), np.diff(g, axis=0), lip_mask)


def fdd(pred_seq, gt_seq, upper_mask) -> float:
    """Upper-face dynamics deviation.

    Per vertex, motion magnitude is the L2 norm of the frame-to-frame
    velocity; the statistic is its standard deviation over frames. FDD is
    the signed mean over upper-face vertices of (pred - gt), so overly
    static prediction shows up negative.
    """
    p, g = _sequence_pair(pred_seq, gt_seq)
    if p.shape[0] < 2:
        raise ContractError(f"fdd needs at least 2 frames, got {p.shape[0]}")
    m = _vertex_mask(upper_mask, p.shape[1], "upper_mask")
    mag_p = np.linalg.norm(np.diff(p[:, m, :], axis=0), axis=2)   # (T-1, |mask|)
    mag_g = np.linalg.norm(np.diff(g[:, m, :], axis=0), axis=2)
    return float(np.mean(mag_p.std(axis=0) - mag_g.std(axis=0)))


def diversity(sequences) -> float:
    """Mean pairwise per-vertex L2 distance across style-distinct outputs."""
    seqs = [_as_sequence(s, f"sequences[{i}]") for i, s in enumerate(sequences)]
    if len(seqs) < 2:
        raise ContractError(f"diversity needs at least 2 sequences, got {len(seqs)}")
    shape = seqs[0].shape
    for i, s in enumerate(seqs[1:], start=1):
        if s.shape != shape:
            raise ShapeError(f"sequences[{i}] shape {s.shape} != {shape}")
    dists = []
    for i in range(len(seqs)):
        for j in range(i + 1, len(seqs)):
            per_vertex = np.linalg.norm(seqs[i] - seqs[j], axis=2)  # (T, V)
            dists.append(float(np.mean(per_vertex)))
    return float(np.mean(dists))


def dataset_delta_variance(dataset: SynthDataset,
                           identities: Sequence[str] | None = None) -> float:
    """Variance of all basis-delta scalars over the chosen identities
    (training split by default); the denominator for relative basis error."""
    ids = sorted(identities) if identities is not None else sorted(dataset.split.train)
    if not ids:
        raise ContractError("delta variance needs at least one identity")
    stacked = np.stack([dataset.bundles[i].basis_matrix() for i in ids])
    return float(np.var(stacked))
