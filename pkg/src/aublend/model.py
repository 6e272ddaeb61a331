"""The two networks: a vector-quantized autoencoder over the 32 AU basis
tokens, and a template-conditioned predictor that emits latent tokens which
index the learned codebook.

Token convention everywhere: row t of a (32, W) matrix is the flattened
delta basis of the t-th registered AU (ascending AU id), W = 3V.

Both training losses are mean-reduced per term so the commitment weight keeps
its meaning across vertex counts and latent sizes.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError
from .kernels import nearest_entries
from .mesh import AU_COUNT, BlendDelta

TOKENS = AU_COUNT  # one latent token per registered AU


@dataclass(frozen=True)
class HyperParams:
    """Architecture knobs. Defaults are the desk scale; the published scale
    (token_dim 1024, 8 layers, 8 heads) plugs in unchanged."""

    vertex_count: int
    token_dim: int = 64
    codebook_size: int = 256
    layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    tcn_channels: int = 48
    tcn_kernel: int = 3
    dilations: tuple[int, ...] = (1, 2, 4)
    style_dim: int | None = None
    beta: float = 0.1

    def __post_init__(self):
        if self.vertex_count < 1:
            raise ConfigError(f"vertex_count must be positive, got {self.vertex_count}")
        if self.token_dim < 1 or self.token_dim % self.heads != 0:
            raise ConfigError(
                f"token_dim {self.token_dim} must be positive and divisible by heads {self.heads}")
        if self.codebook_size < 2:
            raise ConfigError(f"codebook_size must be >= 2, got {self.codebook_size}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if self.beta <= 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if self.tcn_kernel < 1 or not self.dilations:
            raise ConfigError("tcn_kernel must be >= 1 and dilations non-empty")
        object.__setattr__(self, "dilations", tuple(int(d) for d in self.dilations))
        if self.style_dim is None:
            object.__setattr__(self, "style_dim", self.token_dim)

    @property
    def width(self) -> int:
        return 3 * self.vertex_count


@dataclass
class QuantizedTokens:
    """Result of a codebook lookup.

    straight_through carries the quantized values forward while routing
    gradients back to the encoder tokens; embedded is the same values wired
    to the codebook rows so the table itself can learn.
    """

    straight_through: Tensor
    embedded: Tensor
    indices: np.ndarray


def _as_token_matrix(b, width: int, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(b, dtype=np.float64)
    if arr.shape != (TOKENS, width):
        raise ShapeError(f"{what}: expected ({TOKENS}, {width}), got {arr.shape}")
    return arr


class CodebookAutoencoder:
    """Encoder (W -> D per token), P x D codebook, decoder (D -> W)."""

    def __init__(self, hp: HyperParams, seed: int):
        self.hp = hp
        self.trained = False
        rng = np.random.default_rng(seed)
        w, d = hp.width, hp.token_dim
        p: dict[str, Tensor] = {}
        # no positional embedding on the encoder side: the decoder re-injects
        # position, so the codeing budget stays on identity content
        p["enc.in.w"], p["enc.in.b"] = nn.linear_params(rng, w, d)
        self.enc_blocks = []
        for i in range(hp.layers):
            blk = nn.TransformerBlockParams.init(rng, d, hp.mlp_ratio)
            self.enc_blocks.append(blk)
            p.update(blk.named(f"enc.block{i}"))
        p["codebook"] = Tensor(nn.uniform_init(rng, d, (hp.codebook_size, d)),
                               requires_grad=True)
        p["dec.pos"] = Tensor(nn.uniform_init(rng, d, (TOKENS, d)), requires_grad=True)
        self.dec_blocks = []
        for i in range(hp.layers):
            blk = nn.TransformerBlockParams.init(rng, d, hp.mlp_ratio)
            self.dec_blocks.append(blk)
            p.update(blk.named(f"dec.block{i}"))
        # zero-init output projection: reconstruction starts at the bias
        # (data scale) rather than at random O(1) values
        p["dec.out.w"] = Tensor(np.zeros((d, w)), requires_grad=True)
        p["dec.out.b"] = Tensor(np.zeros(w), requires_grad=True)
        self.params = p

    def freeze(self) -> None:
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None

    @property
    def codebook(self) -> Tensor:
        return self.params["codebook"]

    def encode(self, b_matrix) -> Tensor:
        b = _as_token_matrix(b_matrix, self.hp.width, "encode input")
        x = nn.apply_linear(Tensor(b), self.params["enc.in.w"], self.params["enc.in.b"])
        # no output normalization: token magnitude carries identity strength,
        # which the quantizer must be able to separate
        for blk in self.enc_blocks:
            x = nn.apply_transformer_block(x, blk, self.hp.heads)
        return x

    def quantize(self, z: Tensor, fixed_indices: np.ndarray | None = None) -> QuantizedTokens:
        """Nearest codebook entry per token (lowest index on ties).

        fixed_indices bypasses the scan; gradient checks hold the argmin
        constant while parameters move.
        """
        entries = self.codebook
        if entries.values.shape[0] < 1:
            raise ConfigError("quantize: empty codebook")
        if fixed_indices is None:
            indices = nearest_entries(z.values, entries.values)
        else:
            indices = np.ascontiguousarray(fixed_indices, dtype=np.int64)
            if indices.shape != (z.values.shape[0],):
                raise ShapeError(f"quantize: fixed indices shape {indices.shape} "
                                 f"does not match {z.values.shape[0]} tokens")
        embedded = ad.gather_rows(entries, indices)
        st = ad.straight_through(z, embedded.values)
        return QuantizedTokens(st, embedded, indices)

    def decode(self, zq: Tensor) -> Tensor:
        if zq.values.shape != (TOKENS, self.hp.token_dim):
            raise ShapeError(f"decode: expected ({TOKENS}, {self.hp.token_dim}), "
                             f"got {zq.values.shape}")
        x = ad.add(zq, self.params["dec.pos"])
        for blk in self.dec_blocks:
            x = nn.apply_transformer_block(x, blk, self.hp.heads)
        return nn.apply_linear(x, self.params["dec.out.w"], self.params["dec.out.b"])

    def reconstruct(self, b_matrix) -> np.ndarray:
        z = self.encode(b_matrix)
        q = self.quantize(z)
        return self.decode(q.straight_through).values

    def loss_on(self, b_matrix, fixed_indices: np.ndarray | None = None):
        """Full training objective on one identity's basis matrix.

        Returns (loss tensor, parts dict, indices).
        """
        b = _as_token_matrix(b_matrix, self.hp.width, "loss input")
        z = self.encode(b)
        q = self.quantize(z, fixed_indices)
        b_hat = self.decode(q.straight_through)
        loss, parts = codebook_loss(Tensor(b), b_hat, z, q.embedded, self.hp.beta)
        return loss, parts, q.indices


def codebook_loss(b: Tensor, b_hat: Tensor, z: Tensor, zq_embed: Tensor,
                  beta: float):
    """Reconstruction + codebook pull + commitment, each mean-reduced.

    The middle term stops gradients into the encoder (it trains the table);
    the commitment term stops gradients into the table (it trains the
    encoder). Returns (loss, parts).
    """
    recon = ad.mean(ad.abs_(ad.sub(b, b_hat)))
    pull = ad.mean(ad.square(ad.sub(ad.stop_gradient(z), zq_embed)))
    commit = ad.mean(ad.square(ad.sub(z, ad.stop_gradient(zq_embed))))
    loss = ad.add(ad.add(recon, pull), ad.scale(commit, beta))
    parts = {"recon_l1": float(recon.values), "codebook": float(pull.values),
             "commit": float(commit.values)}
    return loss, parts


def styleblend_loss(b: Tensor, b_pred: Tensor, z_hat: Tensor, zq_teacher: Tensor):
    """Mesh reconstruction plus latent-matching to the frozen teacher tokens."""
    mesh = ad.mean(ad.square(ad.sub(b, b_pred)))
    latent = ad.mean(ad.square(ad.sub(z_hat, ad.stop_gradient(zq_teacher))))
    loss = ad.add(mesh, latent)
    parts = {"mesh_mse": float(mesh.values), "latent_mse": float(latent.values)}
    return loss, parts


@dataclass
class AdaLNBlockParams:
    """One conditioned block: plain-LN MHSA and MLP branches, each modulated
    by (scale, shift) and gated by a zero-initialized factor."""

    attn: nn.AttentionParams
    mlp: nn.MLPParams
    cond_w: Tensor  # (style_dim, 6*D), zero at init
    cond_b: Tensor  # (6*D,), zero at init


class StylePredictor:
    """Template -> 32 latent tokens.

    Pipeline: tile the flattened template over the 32 token slots, add a
    learned per-token embedding, run the dilated conv stack across the token
    axis, project to token_dim, then apply the conditioned blocks whose
    modulation comes from the template's style embedding. The output head is
    identity
    at init so the blocks' zero gates make the whole stack equal the
    projection output exactly.
    """

    def __init__(self, hp: HyperParams, seed: int):
        self.hp = hp
        self.trained = False
        rng = np.random.default_rng(seed)
        w, d, s = hp.width, hp.token_dim, hp.style_dim
        c = hp.tcn_channels
        p: dict[str, Tensor] = {}
        p["pos"] = Tensor(nn.uniform_init(rng, w, (TOKENS, w)), requires_grad=True)
        self.tcn = []
        for i, _ in enumerate(hp.dilations):
            conv = nn.Conv1dParams.init(rng, hp.tcn_kernel, w if i == 0 else c, c)
            self.tcn.append(conv)
            p.update(conv.named(f"tcn{i}"))
        self.mlp_f = nn.MLPParams.init(rng, c, 2 * d, d)
        p.update(self.mlp_f.named("mlp_f"))
        self.mlp_s = nn.MLPParams.init(rng, w, s, s)
        p.update(self.mlp_s.named("mlp_s"))
        self.blocks: list[AdaLNBlockParams] = []
        for i in range(hp.layers):
            blk = AdaLNBlockParams(
                nn.AttentionParams.init(rng, d),
                nn.MLPParams.init(rng, d, d * hp.mlp_ratio, d),
                Tensor(np.zeros((s, 6 * d)), requires_grad=True),
                Tensor(np.zeros(6 * d), requires_grad=True),
            )
            self.blocks.append(blk)
            p.update(blk.attn.named(f"block{i}.attn"))
            p.update(blk.mlp.named(f"block{i}.mlp"))
            p[f"block{i}.cond.w"] = blk.cond_w
            p[f"block{i}.cond.b"] = blk.cond_b
        # per-token affine readout, stacked input-dim-major: rows
        # [k*TOKENS:(k+1)*TOKENS] hold, for every token, the output row fed by
        # input coordinate k.  The repeat-eye layout makes it exactly the
        # identity map at construction, so the zero-gate property still holds
        # bit for bit.  The trainer calibrates it from teacher statistics.
        p["head.w"] = Tensor(np.repeat(np.eye(d), TOKENS, axis=0), requires_grad=True)
        p["head.b"] = Tensor(np.zeros(d), requires_grad=True)
        p["head.token_bias"] = Tensor(np.zeros((TOKENS, d)), requires_grad=True)
        self.params = p
        self._ln_one = Tensor(np.ones(d))
        self._ln_zero = Tensor(np.zeros(d))

    def freeze(self) -> None:
        for t in self.params.values():
            t.requires_grad = False
            t.grad = None

    def _template_row(self, template_flat) -> np.ndarray:
        t = np.ascontiguousarray(template_flat, dtype=np.float64).reshape(-1)
        if t.shape[0] != self.hp.width:
            raise ShapeError(f"template width {t.shape[0]} does not match model "
                             f"width {self.hp.width}")
        return t.reshape(1, -1)

    def conditioning(self, template_flat) -> list[dict[str, np.ndarray]]:
        """Per-block modulation parameters for a template (diagnostics)."""
        row = self._template_row(template_flat)
        style = nn.apply_mlp(Tensor(row), self.mlp_s)
        out = []
        d = self.hp.token_dim
        names = ("gamma1", "beta1", "alpha1", "gamma2", "beta2", "alpha2")
        for blk in self.blocks:
            six = nn.apply_linear(style, blk.cond_w, blk.cond_b).values.reshape(-1)
            out.append({name: six[i * d:(i + 1) * d].copy()
                        for i, name in enumerate(names)})
        return out

    def tokens(self, template_flat) -> Tensor:
        row = self._template_row(template_flat)
        tiled = np.repeat(row, TOKENS, axis=0)
        x = ad.add(Tensor(tiled), self.params["pos"])
        for conv, dilation in zip(self.tcn, self.hp.dilations):
            x = nn.gelu(nn.dilated_conv1d(x, conv, dilation))
        x = nn.apply_mlp(x, self.mlp_f)

        style = nn.apply_mlp(Tensor(row), self.mlp_s)
        d = self.hp.token_dim
        for blk in self.blocks:
            six = nn.apply_linear(style, blk.cond_w, blk.cond_b)  # (1, 6D)
            g1 = ad.slice_axis(six, 1, 0, d)
            b1 = ad.slice_axis(six, 1, d, 2 * d)
            a1 = ad.slice_axis(six, 1, 2 * d, 3 * d)
            g2 = ad.slice_axis(six, 1, 3 * d, 4 * d)
            b2 = ad.slice_axis(six, 1, 4 * d, 5 * d)
            a2 = ad.slice_axis(six, 1, 5 * d, 6 * d)
            h = nn.layer_norm(x, self._ln_one, self._ln_zero)
            h = ad.add(ad.hadamard(h, g1), b1)
            h = nn.mhsa(h, blk.attn, self.hp.heads)
            x = ad.add(x, ad.hadamard(h, a1))
            h = nn.layer_norm(x, self._ln_one, self._ln_zero)
            h = ad.add(ad.hadamard(h, g2), b2)
            h = nn.apply_mlp(h, blk.mlp)
            x = ad.add(x, ad.hadamard(h, a2))
        return self._readout(x)

    def _readout(self, x: Tensor) -> Tensor:
        d = self.hp.token_dim
        w = self.params["head.w"]
        out = ad.add(self.params["head.token_bias"], self.params["head.b"])
        for k in range(d):
            col = ad.slice_axis(x, 1, k, k + 1)                    # (N, 1)
            rows = ad.slice_axis(w, 0, k * TOKENS, (k + 1) * TOKENS)  # (N, D)
            out = ad.add(out, ad.hadamard(col, rows))
        return out

    def projection_output(self, template_flat) -> np.ndarray:
        """Value of the pre-block pipeline (tile + conv stack + projection)."""
        row = self._template_row(template_flat)
        tiled = np.repeat(row, TOKENS, axis=0)
        x = ad.add(Tensor(tiled), self.params["pos"])
        for conv, dilation in zip(self.tcn, self.hp.dilations):
            x = nn.gelu(nn.dilated_conv1d(x, conv, dilation))
        return nn.apply_mlp(x, self.mlp_f).values


@dataclass
class PredictedBasis:
    bases: Mapping[int, BlendDelta]
    indices: np.ndarray      # codebook entry per token
    b_matrix: np.ndarray     # (32, W)


def predict_basis(style_model: StylePredictor, codebook_model: CodebookAutoencoder,
                  template_flat, au_ids, allow_untrained: bool = False) -> PredictedBasis:
    """One-shot stylized basis prediction: all 32 tokens in parallel, then a
    codebook lookup and a single decode."""
    if style_model.hp.vertex_count != codebook_model.hp.vertex_count or \
            style_model.hp.token_dim != codebook_model.hp.token_dim:
        raise ShapeError(
            "predict_basis: style and codebook models disagree on geometry "
            f"(V {style_model.hp.vertex_count}/{codebook_model.hp.vertex_count}, "
            f"D {style_model.hp.token_dim}/{codebook_model.hp.token_dim})")
    if not allow_untrained and not (style_model.trained and codebook_model.trained):
        raise ContractError("predict_basis: models are untrained; pass "
                            "allow_untrained=True to override")
    ids = tuple(au_ids)
    if len(ids) != TOKENS:
        raise ShapeError(f"predict_basis: expected {TOKENS} AU ids, got {len(ids)}")
    z_hat = style_model.tokens(template_flat)
    q = codebook_model.quantize(z_hat)
    b = codebook_model.decode(q.straight_through).values
    v = codebook_model.hp.vertex_count
    bases = {au: BlendDelta(au, b[row].reshape(v, 3)) for row, au in enumerate(ids)}
    return PredictedBasis(bases, q.indices, b)
