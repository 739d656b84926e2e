import numpy as np
import pytest

from alrgan import alr, checkpoint, gan, lvr, ssm, synth
from alrgan import tensor as T
from alrgan.errors import ConfigError
from alrgan.gan import GanConfig, GanModel, StageState
from alrgan.tensor import Tensor
from alrgan.train import Trainer, step_rng

TINY = dict(m=2, d=16, d_s=12, d_z=8, t=6, d_disc=8, batch=2)


def tiny_cfg(**kw):
    return GanConfig(**{**TINY, **kw})


def tiny_trainer(**kw):
    return Trainer(tiny_cfg(**kw), dataset_size=8, eval_size=36)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigError):
        GanConfig(m=0)
    with pytest.raises(ConfigError):
        GanConfig(g_lr=0.0)
    with pytest.raises(ConfigError):
        GanConfig(gamma=1.5)
    with pytest.raises(ConfigError):
        GanConfig(batch=1)


def test_config_sides():
    assert GanConfig().sides() == [8, 16, 32]
    assert tiny_cfg().sides() == [8, 16]


def test_identity_hash_ignores_schedule_knobs():
    a, b = GanConfig(), GanConfig(steps=77, g_lr=1e-3, batch=8)
    assert a.identity_hash() == b.identity_hash()
    assert GanConfig(m=2).identity_hash() != a.identity_hash()


# ---------------------------------------------------------------- text path


def test_encode_text_deterministic():
    tokens = synth.scene_tokens(synth.sample_scene(3, 2), 6)
    w1, s1 = GanModel(tiny_cfg(seed=5), len(synth.VOCAB)).text.encode(tokens)
    w2, s2 = GanModel(tiny_cfg(seed=5), len(synth.VOCAB)).text.encode(tokens)
    assert np.array_equal(w1.data, w2.data)
    assert np.array_equal(s1.data, s2.data)


def test_encode_text_single_token():
    model = GanModel(tiny_cfg(), len(synth.VOCAB))
    w, s_raw = model.text.encode(np.array([4]))
    assert w.data.shape == (16, 1)
    expect = w.data[:, 0] @ model.text.proj_w.data + model.text.proj_b.data
    assert np.allclose(s_raw.data, expect)


def test_encode_text_permutation():
    model = GanModel(tiny_cfg(), len(synth.VOCAB))
    toks = np.array([1, 5, 8, 0, 0, 0])
    perm = np.array([8, 0, 1, 5, 0, 0])
    w1, s1 = model.text.encode(toks)
    w2, s2 = model.text.encode(perm)
    assert np.allclose(s1.data, s2.data)  # mean pooling is order-free
    assert np.allclose(w1.data[:, 1], w2.data[:, 3])  # token 5 moved


def test_encode_text_unknown_token_rejected():
    trainer = tiny_trainer()
    with pytest.raises(IndexError):
        trainer.model.text.encode(np.array([999]))


# ---------------------------------------------------------------- f_ca


def test_cond_augment_kl_zero_for_standard_normal():
    cfg = tiny_cfg()
    model = GanModel(cfg, len(synth.VOCAB))
    fca = model.f_ca
    for p in fca.params():
        p.data[:] = 0.0  # mu = 0, logvar = 0 -> sigma = 1
    s, kl = fca.forward(Tensor(np.zeros(cfg.d_s)), np.zeros(cfg.d_s))
    assert kl.item() == pytest.approx(0.0, abs=1e-15)


def test_cond_augment_sigma_zero_returns_mu():
    cfg = tiny_cfg()
    fca = GanModel(cfg, len(synth.VOCAB)).f_ca
    fca.w_mu.data[:] = 0.0
    fca.b_mu.data[:] = 0.7
    fca.w_lv.data[:] = 0.0
    fca.b_lv.data[:] = -200.0  # sigma ~ e^-100
    s, _ = fca.forward(Tensor(np.zeros(cfg.d_s)), np.ones(cfg.d_s))
    assert np.allclose(s.data, 0.7, atol=1e-40)


def test_cond_augment_hand_kl():
    # mu = [1], sigma = [1]: kl = (mu^2 + sigma^2 - logvar - 1) / 2 = 0.5
    cfg = tiny_cfg(d_s=1)
    fca = gan.CondAugment(cfg, np.random.default_rng(0))
    fca.w_mu.data[:] = 0.0
    fca.b_mu.data[:] = 1.0
    fca.w_lv.data[:] = 0.0
    fca.b_lv.data[:] = 0.0
    _, kl = fca.forward(Tensor(np.zeros(1)), np.zeros(1))
    assert kl.item() == pytest.approx(0.5, abs=1e-12)


# ---------------------------------------------------------------- iftm / encoders


def test_iftm_deterministic_and_shaped():
    cfg = tiny_cfg()
    model = GanModel(cfg, len(synth.VOCAB))
    s = Tensor(np.linspace(-1, 1, cfg.d_s))
    z = Tensor(np.linspace(1, -1, cfg.d_z))
    h1 = model.iftm.forward(s, z)
    h2 = model.iftm.forward(s, z)
    assert h1.data.shape == (cfg.d, cfg.base, cfg.base)
    assert np.array_equal(h1.data, h2.data)


def test_iftm_zero_params_zero_output():
    cfg = tiny_cfg()
    iftm = gan.Iftm(cfg, np.random.default_rng(0))
    for p in iftm.params():
        p.data[:] = 0.0
    h = iftm.forward(Tensor(np.ones(cfg.d_s)), Tensor(np.ones(cfg.d_z)))
    assert np.all(h.data == 0.0)


def test_real_encoder_shape_contract():
    cfg = tiny_cfg()
    model = GanModel(cfg, len(synth.VOCAB))
    img = Tensor(np.random.default_rng(1).uniform(-1, 1, size=(3, 16, 16)))
    h = model.encoders[0].forward(img)
    assert h.data.shape == (cfg.d, 8, 8)


def test_real_encoder_deterministic_on_equal_pixels():
    cfg = tiny_cfg()
    enc = GanModel(cfg, len(synth.VOCAB)).encoders[0]
    img = np.random.default_rng(2).uniform(-1, 1, size=(3, 16, 16))
    a = enc.forward(Tensor(img))
    b = enc.forward(Tensor(img.copy()))
    assert np.array_equal(a.data, b.data)


# ---------------------------------------------------------------- losses


def test_rec_loss_values():
    rng = np.random.default_rng(3)
    img = Tensor(rng.uniform(-1, 1, size=(3, 8, 8)))
    assert gan.rec_loss(img, Tensor(img.data.copy())).item() == 0.0
    offset = Tensor(img.data + 0.5)
    assert gan.rec_loss(img, offset).item() == pytest.approx(0.5)
    single = img.data.copy()
    single[0, 0, 0] += 0.25
    assert gan.rec_loss(img, Tensor(single)).item() == pytest.approx(0.25 / img.data.size)


def test_g_adv_loss_values():
    half = Tensor(np.asarray(0.5))
    one = Tensor(np.asarray(1.0))
    assert gan.g_adv_loss(half, half).item() == pytest.approx(np.log(2.0), abs=1e-6)
    assert gan.g_adv_loss(one, one).item() == pytest.approx(0.0, abs=1e-5)
    assert gan.g_adv_loss(half, one).item() == pytest.approx(0.5 * np.log(2.0), abs=1e-6)


def test_d_adv_loss_values():
    half = Tensor(np.asarray(0.5))
    one = Tensor(np.asarray(1.0))
    zero = Tensor(np.asarray(0.0))
    assert gan.d_adv_loss(half, half, half, half).item() == pytest.approx(2 * np.log(2.0), abs=1e-6)
    assert gan.d_adv_loss(one, zero, one, zero).item() == pytest.approx(0.0, abs=1e-5)
    swapped = gan.d_adv_loss(zero, one, zero, one).item()
    assert np.isfinite(swapped)


def test_matching_loss_perfect_pairs_low():
    b, d = 3, 3
    feats = [Tensor(np.tile(np.eye(d)[i][:, None], (1, 4))) for i in range(b)]
    words = [Tensor(np.eye(d)) for _ in range(b)]
    sents = [Tensor(np.eye(d)[i]) for i in range(b)]
    eye = Tensor(np.eye(d))
    loss = gan.matching_loss(feats, words, sents, eye, tau=0.01)
    assert loss.item() == pytest.approx(0.0, abs=1e-6)


def test_matching_loss_uniform_is_log_batch():
    b, d = 4, 3
    feat = np.tile(np.ones(d)[:, None], (1, 5))
    feats = [Tensor(feat.copy()) for _ in range(b)]
    words = [Tensor(np.ones((d, 2))) for _ in range(b)]
    sents = [Tensor(np.ones(d)) for _ in range(b)]
    loss = gan.matching_loss(feats, words, sents, Tensor(np.eye(d)), tau=0.1)
    assert loss.item() == pytest.approx(np.log(b), abs=1e-12)


def test_matching_loss_batch_permutation_invariant():
    rng = np.random.default_rng(4)
    b, d = 3, 4
    feats = [Tensor(rng.normal(size=(d, 5))) for _ in range(b)]
    words = [Tensor(rng.normal(size=(d, 2))) for _ in range(b)]
    sents = [Tensor(rng.normal(size=d)) for _ in range(b)]
    proj = Tensor(rng.normal(size=(d, d)))
    base = gan.matching_loss(feats, words, sents, proj, 0.1).item()
    perm = [2, 0, 1]
    permed = gan.matching_loss(
        [feats[i] for i in perm], [words[i] for i in perm], [sents[i] for i in perm], proj, 0.1
    ).item()
    assert permed == pytest.approx(base, abs=1e-12)


def test_matching_loss_needs_batch_of_two():
    with pytest.raises(ConfigError):
        gan.matching_loss([Tensor(np.ones((2, 2)))], [None], [None], None, 0.1)


def scalar(v):
    return Tensor(np.asarray(v))


def test_total_g_loss_reduces_to_adv():
    cfg = tiny_cfg(m=1, lambda1=0.0, lambda2=0.0)
    adv = scalar(0.77)
    total = gan.total_g_loss(cfg, [StageState(0, None, None)], [adv], None, None)
    assert total.item() == pytest.approx(0.77)


def test_total_g_loss_zero_components():
    cfg = tiny_cfg()
    st = StageState(1, None, None)
    st.alr, st.rec, st.lvr = scalar(0.0), scalar(0.0), scalar(0.0)
    total = gan.total_g_loss(
        cfg, [StageState(0, None, None), st], [scalar(0.0), scalar(0.0)], scalar(0.0), scalar(0.0)
    )
    assert total.item() == 0.0


def test_total_g_loss_hand_sum():
    cfg = tiny_cfg(lambda1=0.1, lambda2=0.0)
    st = StageState(1, None, None)
    st.alr, st.rec, st.lvr = scalar(0.34), scalar(1.0), scalar(0.75)
    total = gan.total_g_loss(cfg, [StageState(0, None, None), st], [scalar(0.69), scalar(0.69)], None, None)
    assert total.item() == pytest.approx(2.57)


def test_total_d_loss_values():
    v = 2 * np.log(2.0)
    stages = [scalar(v)] * 3
    assert gan.total_d_loss(stages).item() == pytest.approx(3 * v)
    assert gan.total_d_loss(stages).item() == pytest.approx(4.1589, abs=1e-4)
    assert gan.total_d_loss([scalar(0.0)]).item() == 0.0
    assert gan.total_d_loss([scalar(1.23)]).item() == pytest.approx(1.23)


# ---------------------------------------------------------------- forward passes


def test_forward_shapes_double_per_stage():
    cfg = GanConfig(m=3, d=16, d_s=12, d_z=8, t=6, d_disc=8, batch=2)
    trainer = Trainer(cfg, dataset_size=4, eval_size=36)
    pair = trainer.data.pairs[0]
    out = trainer.model.forward_sample(
        pair.tokens, step_rng(0, 0), real_images=pair.images, train=True
    )
    sides = [st.h.data.shape[1] for st in out.stages]
    assert sides == [8, 16, 32]
    for st in out.stages:
        assert st.image.data.shape == (3, st.h.data.shape[1], st.h.data.shape[2])
        assert st.image.data.min() >= -1.0 and st.image.data.max() <= 1.0
    n_prev = [st.theta.subregions for st in out.stages[1:]]
    assert n_prev == [64, 256]  # theta lives on the pre-refinement grid


def test_forward_train_requires_real_images():
    trainer = tiny_trainer()
    with pytest.raises(ConfigError):
        trainer.model.forward_sample(trainer.data.pairs[0].tokens, step_rng(0, 0), train=True)


def test_forward_identical_features_zero_refinement_losses():
    # theta == theta* makes both ALR frobenius terms and PR/SR vanish
    rng = np.random.default_rng(5)
    w = Tensor(rng.normal(size=(8, 4)))
    h = Tensor(rng.normal(size=(8, 16)))
    theta = ssm.compute_ssm(w, h)
    theta_star = ssm.compute_ssm(w, Tensor(h.data.copy()))
    split = alr.split_residual(theta, theta_star, 0.2)
    assert np.all(split.r.data == 0.0)
    mask, mask_star = ssm.layout_mask(theta), ssm.layout_mask(theta_star)
    assert lvr.pr_loss(mask, h, mask_star, h).item() == 0.0
    assert lvr.sr_loss(mask, h, mask_star, h).item() == 0.0


def test_forward_gamma_one_empty_hard():
    trainer = tiny_trainer(gamma=1.0)
    pair = trainer.data.pairs[0]
    out = trainer.model.forward_sample(
        pair.tokens, step_rng(0, 0), real_images=pair.images, train=True
    )
    theta, theta_star = out.stages[1].theta, out.stages[1].theta_star
    split = alr.split_residual(theta, theta_star, 1.0)
    assert np.all(split.hard.data == 0.0)


def test_test_mode_matches_train_shapes_and_is_deterministic():
    trainer = tiny_trainer()
    pair = trainer.data.pairs[1]
    imgs1 = trainer.model.generate(pair.tokens, step_rng(7, 0))
    imgs2 = trainer.model.generate(pair.tokens, step_rng(7, 0))
    out = trainer.model.forward_sample(
        pair.tokens, step_rng(7, 0), real_images=pair.images, train=True
    )
    for a, b, st in zip(imgs1, imgs2, out.stages):
        assert np.array_equal(a, b)
        assert a.shape == st.image.data.shape


def test_test_mode_touches_no_real_image_encoder():
    trainer = tiny_trainer()
    pair = trainer.data.pairs[0]
    out = trainer.model.forward_sample(pair.tokens, step_rng(1, 1), train=False)
    loss = T.mean_(out.stages[-1].image)
    T.backward(loss)
    for enc in trainer.model.encoders:
        for p in enc.params():
            assert p.grad is None
    assert trainer.model.iftm.w.grad is not None  # generator path did get gradient


# ---------------------------------------------------------------- training


def test_train_step_deterministic_records():
    a = tiny_trainer(seed=21)
    b = tiny_trainer(seed=21)
    for step in range(3):
        ra = a.train_step(step)
        rb = b.train_step(step)
        assert ra == rb


def test_train_step_zero_lr_keeps_params():
    trainer = tiny_trainer(seed=2)
    trainer.g_opt.lr = 0.0
    trainer.d_opt.lr = 0.0
    before = [p.data.copy() for p in trainer.model.g_params() + trainer.model.d_params()]
    trainer.train_step(0)
    after = trainer.model.g_params() + trainer.model.d_params()
    for x, p in zip(before, after):
        assert np.array_equal(x, p.data)


def test_train_step_finite_components():
    trainer = tiny_trainer(seed=3)
    rec = trainer.train_step(0)
    assert set(rec) == {"g_total", "d_total", "g_adv", "alr", "rec", "lvr", "match", "kl"}
    assert all(np.isfinite(v) for v in rec.values())


def test_baseline_flags_reduce_to_baseline_objective():
    trainer = tiny_trainer(seed=4, alr=False, pr=False, sr=False, rec=False)
    rec = trainer.train_step(0)
    assert rec["alr"] == 0.0 and rec["rec"] == 0.0 and rec["lvr"] == 0.0
    cfg = trainer.cfg
    expect = rec["g_adv"] + cfg.lambda2 * rec["match"] + cfg.kl_weight * rec["kl"]
    assert rec["g_total"] == pytest.approx(expect, rel=1e-12)


def test_fixed_weight_alr_variant_runs():
    trainer = tiny_trainer(seed=5, adaptive_weights=False)
    rec = trainer.train_step(0)
    assert rec["alr"] > 0.0


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip(tmp_path):
    trainer = tiny_trainer(seed=6)
    trainer.train_step(0)
    path = tmp_path / "ck.npz"
    checkpoint.save(path, trainer.model, step=1)
    fresh = tiny_trainer(seed=6)
    assert not np.array_equal(
        fresh.model.iftm.w.data, trainer.model.iftm.w.data
    )  # training moved params
    step = checkpoint.load(path, fresh.model)
    assert step == 1
    for (na, pa), (nb, pb) in zip(
        trainer.model.g_param_items(), fresh.model.g_param_items()
    ):
        assert na == nb and np.array_equal(pa.data, pb.data)


def test_checkpoint_refuses_config_mismatch(tmp_path):
    trainer = tiny_trainer(seed=7)
    path = tmp_path / "ck.npz"
    checkpoint.save(path, trainer.model, step=0)
    other = Trainer(tiny_cfg(seed=7, gamma=0.3), dataset_size=4, eval_size=36)
    with pytest.raises(ConfigError):
        checkpoint.load(path, other.model)


def test_checkpoint_generation_bit_reproducible(tmp_path):
    trainer = tiny_trainer(seed=8)
    trainer.train_step(0)
    path = tmp_path / "ck.npz"
    checkpoint.save(path, trainer.model, step=1)
    imgs_a = trainer.generate(0)
    fresh = tiny_trainer(seed=8)
    checkpoint.load(path, fresh.model)
    imgs_b = fresh.generate(0)
    for a, b in zip(imgs_a, imgs_b):
        assert np.array_equal(a, b)
