"""Two-stage trainer: fit the codebook autoencoder on ground-truth bases,
then fit the style predictor against the frozen codebook.

Everything is seeded; two runs with the same config produce bit-identical
checkpoints. Reports carry the full loss curve; wall clock lives only on the
in-memory report so written artifacts stay reproducible.
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .errors import ConfigError, ContractError, NonFiniteError, TrainingDiverged
from .model import (CodebookAutoencoder, HyperParams, StylePredictor,
                    styleblend_loss)
from .synth import SynthDataset

STAGES = ("codebook", "styleblend")
_STAGE_EPOCHS = {"codebook": 200, "styleblend": 400}
_STAGE_LR = {"codebook": 1e-4, "styleblend": 1e-5}


@dataclass(frozen=True)
class TrainConfig:
    stage: str
    epochs: int | None = None       # stage default when unset
    lr: float | None = None
    batch_size: int = 1
    seed: int = 0
    snapshot_every: int = 0         # 0 disables periodic snapshots
    precision: str = "float64"      # float32 rounds params after each step
    init_from_data: bool = True     # calibrate scales/codebook from the data

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.batch_size != 1:
            raise ConfigError(f"only batch_size 1 is supported, got {self.batch_size}")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.epochs is None:
            object.__setattr__(self, "epochs", _STAGE_EPOCHS[self.stage])
        if self.lr is None:
            object.__setattr__(self, "lr", _STAGE_LR[self.stage])
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.snapshot_every < 0:
            raise ConfigError("snapshot_every must be >= 0")


@dataclass
class TrainReport:
    stage: str
    epochs_run: int
    best_epoch: int
    loss_curve: list[float] = field(default_factory=list)
    val_curve: list[float] = field(default_factory=list)
    final_metrics: dict[str, float] = field(default_factory=dict)
    codebook_utilization: float = 0.0
    wall_clock_seconds: float = 0.0


def save_report(report: TrainReport, path: str | Path) -> None:
    """Structured text, one epoch per row. Wall clock is deliberately
    omitted so reruns write identical bytes."""
    lines = [f"stage\t{report.stage}",
             f"epochs_run\t{report.epochs_run}",
             f"best_epoch\t{report.best_epoch}",
             f"codebook_utilization\t{report.codebook_utilization:.6f}"]
    for key in sorted(report.final_metrics):
        lines.append(f"final.{key}\t{report.final_metrics[key]:.12g}")
    lines.append("epoch\ttrain_loss\tval_basis_mse")
    for i, (tl, vl) in enumerate(zip(report.loss_curve, report.val_curve), start=1):
        lines.append(f"{i}\t{tl:.12g}\t{vl:.12g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _snap_precision(params, precision: str) -> None:
    if precision == "float32":
        for t in params.values():
            t.values[...] = t.values.astype(np.float32)


def _check_finite(value: float, what: str, epoch: int):
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became non-finite at epoch {epoch}", epoch)


class _divergence_guard:
    """Rethrow engine-level non-finite failures with the epoch attached."""

    def __init__(self, epoch: int):
        self.epoch = epoch

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None and issubclass(exc_type, NonFiniteError):
            raise TrainingDiverged(
                f"training step produced a non-finite value at epoch {self.epoch}: {exc}",
                self.epoch) from exc
        return False


def _params_digest(model) -> str:
    h = hashlib.sha256()
    for name in sorted(model.params):
        h.update(name.encode())
        h.update(model.params[name].values.tobytes())
    return h.hexdigest()


def _take_values(model) -> dict[str, np.ndarray]:
    return {k: t.values.copy() for k, t in model.params.items()}


def _put_values(model, snapshot: dict[str, np.ndarray]) -> None:
    for k, t in model.params.items():
        t.values[...] = snapshot[k]


def _basis_matrices(dataset: SynthDataset, ids) -> dict[str, np.ndarray]:
    return {i: dataset.bundles[i].basis_matrix() for i in ids}


def codebook_utilization(model: CodebookAutoencoder, token_sets) -> float:
    """Fraction of codebook entries selected at least once. Dead entries
    are left in the table; this is the health number reported alongside."""
    used: set[int] = set()
    for z in token_sets:
        q = model.quantize(Tensor(np.ascontiguousarray(z)))
        used.update(int(i) for i in q.indices)
    return len(used) / model.hp.codebook_size


def _init_codebook_from_data(model: CodebookAutoencoder,
                             train_b: dict[str, np.ndarray], seed: int) -> None:
    """Data-dependent initialization for the first stage.

    Basis deltas are millimetre-scale while the positional embeddings are
    O(1); an uncalibrated input projection buries the identity signal three
    orders of magnitude below position and quantization then collapses
    identities. Rescale the projection so raw input tokens have unit spread,
    then seed the table with encoder outputs of the training bases.
    """
    stacked = np.concatenate([b for _, b in sorted(train_b.items())], axis=0)
    w = model.params["enc.in.w"]
    spread = float(np.std(stacked @ w.values))
    if spread > 0.0:
        w.values[...] = w.values / spread
    rows = [model.encode(b).values for _, b in sorted(train_b.items())]
    pool = np.concatenate(rows, axis=0)
    model.codebook.values[...] = _kmeans(pool, model.hp.codebook_size, seed)


def _kmeans(points: np.ndarray, k: int, seed: int, iterations: int = 15) -> np.ndarray:
    """Plain Lloyd iterations, seeded and deterministic. Empty clusters are
    re-seeded from the points currently worst-served."""
    rng = np.random.default_rng(seed)
    n = points.shape[0]
    if n <= k:
        pick = rng.choice(n, size=k, replace=True)
        return points[np.sort(pick)].copy()
    centers = points[np.sort(rng.choice(n, size=k, replace=False))].copy()
    for _ in range(iterations):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assign = np.argmin(d2, axis=1)
        worst = np.argsort(-d2[np.arange(n), assign], kind="stable")
        spare = 0
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
            else:
                centers[j] = points[worst[spare]]
                spare += 1
    return centers


def _calibrate_style_head(sp: StylePredictor, codebook_model: CodebookAutoencoder,
                          dataset: SynthDataset,
                          train_b: dict[str, np.ndarray]) -> None:
    """Fit the per-token readout to the continuous encoder tokens.

    The projection stack starts O(1) away from the latent targets; at the
    mandated learning rate that gap dominates the whole budget.  Each token's
    affine readout is solved in closed form (minimum-norm least squares over
    mean-centered features, the intercept absorbing the means exactly) so the
    predictor starts on the encoder's token manifold and fine-tuning only has
    to learn deviations.  Targets are the pre-quantization encodings: the
    quantizer then snaps predictions to the same entries it picks for the
    ground-truth bases, including off the training set.
    """
    order = sorted(train_b)
    feats = np.stack([sp.projection_output(dataset.bundles[i].template.flat())
                      for i in order])                        # (I, N, D)
    targets = np.stack([codebook_model.encode(train_b[i]).values
                        for i in order])                      # (I, N, D)
    n_tok = feats.shape[1]
    w = sp.params["head.w"].values
    tb = sp.params["head.token_bias"].values
    for n in range(n_tok):
        f_mean = feats[:, n, :].mean(axis=0)
        t_mean = targets[:, n, :].mean(axis=0)
        sol = np.linalg.lstsq(feats[:, n, :] - f_mean,
                              targets[:, n, :] - t_mean, rcond=None)[0]
        w[n::n_tok, :] = sol
        tb[n, :] = t_mean - f_mean @ sol


def train_codebook(dataset: SynthDataset, hp: HyperParams, config: TrainConfig,
                   out_dir: str | Path | None = None
                   ) -> tuple[CodebookAutoencoder, TrainReport]:
    """Fit the autoencoder + codebook on the training identities' bases.

    Returns the model restored to the epoch with the lowest validation
    reconstruction error, plus the per-epoch report.
    """
    if config.stage != "codebook":
        raise ConfigError(f"train_codebook got a {config.stage!r} config")
    started = time.perf_counter()
    model = CodebookAutoencoder(hp, seed=config.seed)
    train_b = _basis_matrices(dataset, dataset.split.train)
    val_b = _basis_matrices(dataset, dataset.split.val)
    if not train_b:
        raise ConfigError("dataset has no training identities")
    if config.init_from_data:
        _init_codebook_from_data(model, train_b, config.seed)

    order_rng = np.random.default_rng(config.seed)
    adam = ad.AdamState(lr=config.lr)
    train_ids = sorted(train_b)
    report = TrainReport(stage="codebook", epochs_run=0, best_epoch=0)
    best_val = np.inf
    best_params = _take_values(model)

    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        with _divergence_guard(epoch):
            for i in order_rng.permutation(len(train_ids)):
                loss, _, _ = model.loss_on(train_b[train_ids[i]])
                value = float(loss.values)
                _check_finite(value, "training loss", epoch)
                epoch_losses.append(value)
                ad.backward(loss)
                ad.adam_step(adam, model.params)
                _snap_precision(model.params, config.precision)
            val = _validation_recon_mse(model, val_b if val_b else train_b)
        report.loss_curve.append(float(np.mean(epoch_losses)))
        _check_finite(val, "validation reconstruction", epoch)
        report.val_curve.append(val)
        if val < best_val:
            best_val = val
            report.best_epoch = epoch
            best_params = _take_values(model)
        if out_dir is not None and config.snapshot_every > 0 \
                and epoch % config.snapshot_every == 0:
            save_checkpoint(model, Path(out_dir) / f"snapshot_{epoch:04d}.aubm")

    _put_values(model, best_params)
    model.trained = True
    report.epochs_run = config.epochs
    report.codebook_utilization = codebook_utilization(
        model, (model.encode(b).values for b in train_b.values()))
    report.final_metrics = {
        "val_basis_mse": _validation_recon_mse(model, val_b if val_b else train_b),
        "train_basis_mse": _validation_recon_mse(model, train_b),
    }
    report.wall_clock_seconds = time.perf_counter() - started
    return model, report


def _validation_recon_mse(model: CodebookAutoencoder,
                          matrices: dict[str, np.ndarray]) -> float:
    errs = [float(np.mean((model.reconstruct(b) - b) ** 2))
            for _, b in sorted(matrices.items())]
    return float(np.mean(errs))


def teacher_latents(codebook_model: CodebookAutoencoder,
                    matrices: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Quantized encodings of the ground-truth bases under the frozen
    autoencoder; the latent targets for the second stage."""
    out = {}
    for ident, b in matrices.items():
        z = codebook_model.encode(b)
        out[ident] = codebook_model.quantize(z).embedded.values.copy()
    return out


def _style_prediction(sp: StylePredictor, cb: CodebookAutoencoder,
                      template_flat: np.ndarray) -> np.ndarray:
    z_hat = sp.tokens(template_flat)
    q = cb.quantize(z_hat)
    return cb.decode(q.straight_through).values


def _style_val_mse(sp, cb, dataset, ids, matrices) -> float:
    errs = []
    for ident in sorted(ids):
        pred = _style_prediction(sp, cb, dataset.bundles[ident].template.flat())
        errs.append(float(np.mean((pred - matrices[ident]) ** 2)))
    return float(np.mean(errs))


def train_styleblend(dataset: SynthDataset, codebook_model: CodebookAutoencoder,
                     config: TrainConfig, out_dir: str | Path | None = None
                     ) -> tuple[StylePredictor, TrainReport]:
    """Fit the template-conditioned predictor against the frozen first-stage
    model. The codebook and decoder take no gradient and are verified
    bit-identical before and after."""
    if config.stage != "styleblend":
        raise ConfigError(f"train_styleblend got a {config.stage!r} config")
    if not codebook_model.trained:
        raise ContractError("train_styleblend needs a trained codebook model")
    started = time.perf_counter()
    codebook_model.freeze()
    frozen_digest = _params_digest(codebook_model)

    sp = StylePredictor(codebook_model.hp, seed=config.seed)
    train_b = _basis_matrices(dataset, dataset.split.train)
    val_b = _basis_matrices(dataset, dataset.split.val)
    if not train_b:
        raise ConfigError("dataset has no training identities")
    teachers = teacher_latents(codebook_model, train_b)
    if config.init_from_data:
        _calibrate_style_head(sp, codebook_model, dataset, train_b)

    order_rng = np.random.default_rng(config.seed)
    adam = ad.AdamState(lr=config.lr)
    train_ids = sorted(train_b)
    report = TrainReport(stage="styleblend", epochs_run=0, best_epoch=0)
    best_val = np.inf
    best_params = _take_values(sp)

    for epoch in range(1, config.epochs + 1):
        epoch_losses = []
        with _divergence_guard(epoch):
            for i in order_rng.permutation(len(train_ids)):
                ident = train_ids[i]
                z_hat = sp.tokens(dataset.bundles[ident].template.flat())
                q = codebook_model.quantize(z_hat)
                b_pred = codebook_model.decode(q.straight_through)
                loss, _ = styleblend_loss(Tensor(train_b[ident]), b_pred, z_hat,
                                          Tensor(teachers[ident]))
                value = float(loss.values)
                _check_finite(value, "training loss", epoch)
                epoch_losses.append(value)
                ad.backward(loss)
                ad.adam_step(adam, sp.params)
                _snap_precision(sp.params, config.precision)
            val_ids = dataset.split.val if val_b else dataset.split.train
            val = _style_val_mse(sp, codebook_model, dataset, val_ids,
                                 val_b if val_b else train_b)
        report.loss_curve.append(float(np.mean(epoch_losses)))
        _check_finite(val, "validation prediction", epoch)
        report.val_curve.append(val)
        if val < best_val:
            best_val = val
            report.best_epoch = epoch
            best_params = _take_values(sp)
        if out_dir is not None and config.snapshot_every > 0 \
                and epoch % config.snapshot_every == 0:
            save_checkpoint(sp, Path(out_dir) / f"snapshot_{epoch:04d}.aubm")

    _put_values(sp, best_params)
    if config.init_from_data:
        # the readout is closed-form given every other parameter, and its
        # calibrated weights can be large enough that backbone drift over the
        # epochs swamps the fit; refitting it against the restored backbone
        # costs one solve and cannot be undone by further steps
        _calibrate_style_head(sp, codebook_model, dataset, train_b)
    sp.trained = True
    report.epochs_run = config.epochs
    report.codebook_utilization = codebook_utilization(
        codebook_model,
        (sp.tokens(dataset.bundles[i].template.flat()).values for i in train_ids))
    report.final_metrics = {
        "val_basis_mse": _style_val_mse(sp, codebook_model, dataset,
                                        dataset.split.val if val_b else dataset.split.train,
                                        val_b if val_b else train_b),
        "train_basis_mse": _style_val_mse(sp, codebook_model, dataset,
                                          dataset.split.train, train_b),
    }
    report.wall_clock_seconds = time.perf_counter() - started
    if _params_digest(codebook_model) != frozen_digest:
        raise ContractError("frozen codebook model changed during training")
    return sp, report


def mean_basis_matrix(dataset: SynthDataset, ids=None) -> np.ndarray:
    """Per-AU mean of the training bases: the baseline any style-aware
    predictor has to beat on held-out identities."""
    use = list(ids) if ids is not None else list(dataset.split.train)
    if not use:
        raise ConfigError("mean basis needs at least one identity")
    return np.mean([dataset.bundles[i].basis_matrix() for i in sorted(use)], axis=0)
