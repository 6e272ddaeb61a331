import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aublend import autodiff as ad
from aublend.autodiff import Tensor
from aublend.errors import ConfigError, ContractError, ShapeError
from aublend.facs import get_registry
from aublend.model import (CodebookAutoencoder, HyperParams, PredictedBasis,
                           StylePredictor, TOKENS, codebook_loss, predict_basis,
                           styleblend_loss)
from gradcheck import check_param_gradients, codebook_fd_pair, styleblend_fd_pair

# small enough that exhaustive finite differences stay cheap
MICRO = dict(vertex_count=4, token_dim=4, codebook_size=3, layers=1, heads=2,
             mlp_ratio=2, tcn_channels=4, style_dim=4)


def micro_hp(**over):
    return HyperParams(**{**MICRO, **over})


def random_basis_matrix(hp, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(TOKENS, hp.width))


# ---------------------------------------------------------------- hyperparams

def test_hyperparams_defaults_and_width():
    hp = HyperParams(vertex_count=529)
    assert hp.width == 1587
    assert hp.token_dim == 64 and hp.codebook_size == 256
    assert hp.layers == 2 and hp.heads == 4
    assert hp.dilations == (1, 2, 4)
    assert hp.style_dim == 64  # follows token_dim when unset
    assert hp.beta == 0.1


@pytest.mark.parametrize("over", [
    dict(token_dim=10, heads=4),       # not divisible
    dict(codebook_size=1),
    dict(beta=0.0),
    dict(beta=-0.1),
    dict(layers=0),
    dict(vertex_count=0),
    dict(dilations=()),
    dict(tcn_kernel=0),
])
def test_hyperparams_rejects_bad_config(over):
    with pytest.raises(ConfigError):
        micro_hp(**over)


# --------------------------------------------------------------------- losses

def test_codebook_loss_hand_value():
    # one token, one channel: perfect reconstruction, z=1 vs entry 0
    b = Tensor(np.zeros((1, 1)))
    b_hat = Tensor(np.zeros((1, 1)))
    z = Tensor(np.ones((1, 1)), requires_grad=True)
    zq = Tensor(np.zeros((1, 1)), requires_grad=True)
    loss, parts = codebook_loss(b, b_hat, z, zq, beta=0.1)
    assert float(loss.values) == pytest.approx(1.1, abs=0)
    assert parts == {"recon_l1": 0.0, "codebook": 1.0, "commit": 1.0}


def test_codebook_loss_gradient_routing():
    # recon term vanishes; the pull term trains only the table, the
    # commitment term trains only the encoder side
    z = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    zq = Tensor(np.array([[0.5, 0.0]]), requires_grad=True)
    b = Tensor(np.zeros((1, 3)))
    loss, _ = codebook_loss(b, b, z, zq, beta=0.1)
    ad.backward(loss)
    diff = z.values - zq.values
    n = diff.size
    assert np.allclose(zq.grad, -2.0 * diff / n, atol=0, rtol=0)
    assert np.allclose(z.grad, 0.1 * 2.0 * diff / n, atol=0, rtol=0)


def test_styleblend_loss_hand_value():
    b = Tensor(np.full((1, 1), 2.0))
    b_pred = Tensor(np.zeros((1, 1)))
    z_hat = Tensor(np.ones((1, 1)))
    zq = Tensor(np.zeros((1, 1)))
    loss, parts = styleblend_loss(b, b_pred, z_hat, zq)
    assert float(loss.values) == pytest.approx(5.0, abs=0)
    assert parts == {"mesh_mse": 4.0, "latent_mse": 1.0}


def test_styleblend_loss_teacher_gets_no_gradient():
    zq = Tensor(np.array([[1.0, -1.0]]), requires_grad=True)
    z_hat = Tensor(np.array([[0.25, 0.75]]), requires_grad=True)
    loss, _ = styleblend_loss(Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 2))),
                              z_hat, zq)
    ad.backward(loss)
    assert zq.grad is None
    assert z_hat.grad is not None


# ------------------------------------------------------------------ quantizer

def test_quantize_exact_hit_returns_entry_bits():
    cb = CodebookAutoencoder(micro_hp(), seed=3)
    entries = cb.codebook.values
    z = np.repeat(entries[2:3], TOKENS, axis=0)
    q = cb.quantize(Tensor(z))
    assert np.all(q.indices == 2)
    assert np.array_equal(q.straight_through.values, np.repeat(entries[2:3], TOKENS, axis=0))


def test_quantize_tie_prefers_lowest_index():
    cb = CodebookAutoencoder(micro_hp(), seed=4)
    cb.codebook.values[1] = cb.codebook.values[2]
    z = np.repeat(cb.codebook.values[2:3], TOKENS, axis=0)
    q = cb.quantize(Tensor(z))
    assert np.all(q.indices == 1)


def test_quantize_idempotent():
    cb = CodebookAutoencoder(micro_hp(), seed=5)
    z = Tensor(np.random.default_rng(7).normal(size=(TOKENS, 4)))
    q = cb.quantize(z)
    q2 = cb.quantize(Tensor(q.embedded.values.copy()))
    assert np.array_equal(q2.indices, q.indices)


def test_quantize_matches_brute_force_scan():
    hp = micro_hp(codebook_size=17)
    cb = CodebookAutoencoder(hp, seed=6)
    rng = np.random.default_rng(8)
    entries = cb.codebook.values
    for _ in range(10):
        z = rng.normal(size=(TOKENS, hp.token_dim))
        d2 = ((z[:, None, :] - entries[None, :, :]) ** 2).sum(axis=2)
        expect = np.argmin(d2, axis=1)
        q = cb.quantize(Tensor(z))
        assert np.array_equal(q.indices, expect)


def test_quantize_empty_codebook_is_config_error():
    cb = CodebookAutoencoder(micro_hp(), seed=9)
    cb.params["codebook"] = Tensor(np.zeros((0, 4)), requires_grad=True)
    with pytest.raises(ConfigError):
        cb.quantize(Tensor(np.zeros((TOKENS, 4))))


def test_quantize_fixed_indices():
    cb = CodebookAutoencoder(micro_hp(), seed=10)
    z = Tensor(np.random.default_rng(11).normal(size=(TOKENS, 4)))
    forced = np.zeros(TOKENS, dtype=np.int64)
    q = cb.quantize(z, fixed_indices=forced)
    assert np.array_equal(q.embedded.values, np.repeat(cb.codebook.values[0:1], TOKENS, axis=0))
    with pytest.raises(ShapeError):
        cb.quantize(z, fixed_indices=np.zeros(TOKENS + 1, dtype=np.int64))


def test_straight_through_grad_copies_to_tokens():
    cb = CodebookAutoencoder(micro_hp(), seed=12)
    z = Tensor(np.random.default_rng(13).normal(size=(TOKENS, 4)), requires_grad=True)
    q = cb.quantize(z)
    loss = ad.mean(ad.square(q.straight_through))
    ad.backward(loss)
    expect = 2.0 * q.straight_through.values / q.straight_through.values.size
    assert np.array_equal(z.grad, expect)


# ------------------------------------------------------- degenerate data paths

def test_zeroed_encoder_emits_bias_tokens():
    cb = CodebookAutoencoder(micro_hp(), seed=14)
    for name, t in cb.params.items():
        if name.startswith("enc."):
            t.values[...] = 0.0
    pattern = np.array([0.5, -1.0, 2.0, 0.25])
    cb.params["enc.in.b"].values[...] = pattern
    z = cb.encode(random_basis_matrix(cb.hp, seed=15))
    assert np.array_equal(z.values, np.repeat(pattern[None, :], TOKENS, axis=0))


def test_zeroed_decoder_emits_bias_rows():
    cb = CodebookAutoencoder(micro_hp(), seed=16)
    for name, t in cb.params.items():
        if name.startswith("dec."):
            t.values[...] = 0.0
    pattern = np.arange(cb.hp.width, dtype=np.float64) * 0.125
    cb.params["dec.out.b"].values[...] = pattern
    out = cb.decode(Tensor(np.random.default_rng(17).normal(size=(TOKENS, 4))))
    assert np.array_equal(out.values, np.repeat(pattern[None, :], TOKENS, axis=0))


def test_encode_rejects_wrong_shape():
    cb = CodebookAutoencoder(micro_hp(), seed=18)
    with pytest.raises(ShapeError):
        cb.encode(np.zeros((TOKENS, cb.hp.width + 3)))
    with pytest.raises(ShapeError):
        cb.decode(Tensor(np.zeros((TOKENS, 5))))


def test_loss_on_assembles_the_three_terms():
    cb = CodebookAutoencoder(micro_hp(), seed=19)
    b = random_basis_matrix(cb.hp, seed=20)
    loss, parts, idx = cb.loss_on(b)
    expect = parts["recon_l1"] + parts["codebook"] + cb.hp.beta * parts["commit"]
    assert float(loss.values) == pytest.approx(expect, rel=1e-15)
    assert idx.shape == (TOKENS,)
    # mean reduction: doubling beta only scales the commitment share
    cb2 = CodebookAutoencoder(micro_hp(beta=0.2), seed=19)
    loss2, parts2, _ = cb2.loss_on(b)
    assert parts2["commit"] == parts["commit"]
    assert float(loss2.values) == pytest.approx(expect + 0.1 * parts["commit"], rel=1e-12)


# -------------------------------------------------------------- style predictor

def test_blocks_are_identity_at_init():
    sp = StylePredictor(micro_hp(layers=3), seed=21)
    tmpl = np.random.default_rng(22).normal(size=sp.hp.width)
    out = sp.tokens(tmpl)
    assert np.array_equal(out.values, sp.projection_output(tmpl))


def test_conditioning_zero_at_init():
    sp = StylePredictor(micro_hp(layers=2), seed=23)
    tmpl = np.random.default_rng(24).normal(size=sp.hp.width)
    for block in sp.conditioning(tmpl):
        for arr in block.values():
            assert np.all(arr == 0.0)
    d = sp.hp.token_dim
    assert np.array_equal(sp.params["head.w"].values, np.repeat(np.eye(d), TOKENS, axis=0))


def test_active_gates_change_the_output():
    sp = StylePredictor(micro_hp(), seed=25)
    rng = np.random.default_rng(26)
    sp.params["block0.cond.w"].values[...] = rng.normal(size=(4, 24)) * 0.5
    tmpl = rng.normal(size=sp.hp.width)
    out = sp.tokens(tmpl)
    assert not np.array_equal(out.values, sp.projection_output(tmpl))


def test_gamma1_sensitive_to_single_vertex_change():
    sp = StylePredictor(micro_hp(), seed=27)
    rng = np.random.default_rng(28)
    # generic weights: style trunk and conditioning head both non-degenerate
    for name in ("mlp_s.w1", "mlp_s.w2", "block0.cond.w"):
        t = sp.params[name]
        t.values[...] = rng.normal(size=t.values.shape) * 0.3
    tmpl = rng.normal(size=sp.hp.width)
    bumped = tmpl.copy()
    bumped[5] += 1e-2
    g1 = sp.conditioning(tmpl)[0]["gamma1"]
    g1b = sp.conditioning(bumped)[0]["gamma1"]
    assert not np.array_equal(g1, g1b)


def test_style_rejects_wrong_template_width():
    sp = StylePredictor(micro_hp(), seed=29)
    with pytest.raises(ShapeError):
        sp.tokens(np.zeros(sp.hp.width + 1))


# --------------------------------------------------------------- predict_basis

def test_predict_basis_requires_training_flags():
    hp = micro_hp()
    cb = CodebookAutoencoder(hp, seed=30)
    sp = StylePredictor(hp, seed=31)
    ids = get_registry().au_ids
    tmpl = np.zeros(hp.width)
    with pytest.raises(ContractError):
        predict_basis(sp, cb, tmpl, ids)
    cb.trained = True
    with pytest.raises(ContractError):
        predict_basis(sp, cb, tmpl, ids)
    sp.trained = True
    predict_basis(sp, cb, tmpl, ids)
    sp.trained = False
    predict_basis(sp, cb, tmpl, ids, allow_untrained=True)


def test_predict_basis_decode_image_invariant():
    hp = micro_hp()
    cb = CodebookAutoencoder(hp, seed=32)
    sp = StylePredictor(hp, seed=33)
    ids = get_registry().au_ids
    tmpl = np.random.default_rng(34).normal(size=hp.width)
    res = predict_basis(sp, cb, tmpl, ids, allow_untrained=True)
    assert isinstance(res, PredictedBasis)
    assert tuple(res.bases) == ids
    redecoded = cb.decode(ad.gather_rows(cb.codebook, res.indices)).values
    assert np.array_equal(redecoded, res.b_matrix)
    for row, au in enumerate(ids):
        assert res.bases[au].deltas.shape == (hp.vertex_count, 3)
        assert np.array_equal(res.bases[au].deltas.reshape(-1), res.b_matrix[row])


def test_predict_basis_rejects_geometry_mismatch():
    cb = CodebookAutoencoder(micro_hp(), seed=35)
    sp = StylePredictor(micro_hp(vertex_count=5), seed=36)
    with pytest.raises(ShapeError):
        predict_basis(sp, cb, np.zeros(15), get_registry().au_ids, allow_untrained=True)


def test_predict_basis_rejects_wrong_au_count():
    hp = micro_hp()
    cb = CodebookAutoencoder(hp, seed=37)
    sp = StylePredictor(hp, seed=38)
    with pytest.raises(ShapeError):
        predict_basis(sp, cb, np.zeros(hp.width), (1, 2, 3), allow_untrained=True)


# ------------------------------------------------------------ finite differences

def test_codebook_loss_matches_finite_differences():
    hp = micro_hp()
    cb = CodebookAutoencoder(hp, seed=40)
    b = random_basis_matrix(hp, seed=41)
    loss_fn, analytic_fn = codebook_fd_pair(cb, b)
    worst = check_param_gradients(loss_fn, cb.params, rel_tol=1e-4, h=1e-6,
                                  max_per_tensor=4, seed=42,
                                  analytic_fn=analytic_fn)
    assert worst < 1e-4


def test_styleblend_loss_matches_finite_differences():
    hp = micro_hp()
    cb = CodebookAutoencoder(hp, seed=43)
    sp = StylePredictor(hp, seed=44)
    rng = np.random.default_rng(45)
    # activate the gates so block parameters carry signal
    for i in range(hp.layers):
        for part in ("w", "b"):
            t = sp.params[f"block{i}.cond.{part}"]
            t.values[...] = rng.normal(size=t.values.shape) * 0.6
    b = random_basis_matrix(hp, seed=46)
    tmpl = rng.normal(size=hp.width)
    teacher = cb.quantize(cb.encode(b)).embedded.values.copy()
    cb.freeze()
    loss_fn, analytic_fn = styleblend_fd_pair(sp, cb, tmpl, b, teacher)
    worst = check_param_gradients(loss_fn, sp.params, rel_tol=2e-4, h=1e-5,
                                  max_per_tensor=4, seed=47,
                                  analytic_fn=analytic_fn, floor=1e-5)
    assert worst < 2e-4
    assert all(t.grad is None for t in cb.params.values())


def test_styleblend_training_leaves_codebook_untouched():
    hp = micro_hp()
    cb = CodebookAutoencoder(hp, seed=48)
    sp = StylePredictor(hp, seed=49)
    b = random_basis_matrix(hp, seed=50)
    teacher = cb.quantize(cb.encode(b)).embedded.values.copy()
    cb.freeze()
    before = {k: t.values.copy() for k, t in cb.params.items()}
    z_hat = sp.tokens(np.random.default_rng(51).normal(size=hp.width))
    q = cb.quantize(z_hat)
    loss, _ = styleblend_loss(Tensor(b), cb.decode(q.straight_through), z_hat,
                              Tensor(teacher))
    ad.backward(loss)
    state = ad.AdamState(lr=1e-3)
    ad.adam_step(state, sp.params)
    for k, t in cb.params.items():
        assert np.array_equal(t.values, before[k]), k
        assert t.grad is None


# ----------------------------------------------------------------- properties

@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_property_straight_through_values_equal_embedded(seed):
    cb = CodebookAutoencoder(micro_hp(), seed=52)
    z = Tensor(np.random.default_rng(seed).normal(size=(TOKENS, 4)))
    q = cb.quantize(z)
    assert np.array_equal(q.straight_through.values, q.embedded.values)
    assert np.array_equal(q.straight_through.values, cb.codebook.values[q.indices])


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_property_quantize_idempotent(seed):
    cb = CodebookAutoencoder(micro_hp(codebook_size=9), seed=53)
    z = Tensor(np.random.default_rng(seed).normal(size=(TOKENS, 4)) * 2.0)
    q = cb.quantize(z)
    assert np.array_equal(cb.quantize(Tensor(q.embedded.values.copy())).indices,
                          q.indices)
