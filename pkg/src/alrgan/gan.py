"""Multi-stage conditional GAN with adaptive layout refinement.

Stage 0 turns the augmented sentence and a noise vector into a base feature
grid; every later stage attends words onto the previous feature map, refines
it against the real image's similarity matrix (training only), and doubles
the spatial side. Images come out of per-stage tanh RGB heads.

Training alternates one discriminator update and one generator update per
step; everything is driven by per-(seed, step) random streams so runs are
bit-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import alr as alr_mod
from . import lvr as lvr_mod
from . import ssm as ssm_mod
from . import tensor as T
from .errors import ConfigError, TrainingFault
from .lvr import LvrWeights
from .tensor import Tensor

_CLAMP = 1e-7


@dataclass
class GanConfig:
    m: int = 3
    gamma: float = 0.2
    eta1: float = 1.0
    eta2: float = 1.0
    lambda1: float = 0.1
    lambda2: float = 5.0
    kl_weight: float = 1.0
    tau: float = 0.1
    base: int = 8
    d: int = 32
    d_s: int = 32
    d_z: int = 16
    d_disc: int = 16
    t: int = 6
    g_lr: float = 2e-4
    d_lr: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    d_clip: float = 5.0
    batch: int = 4
    steps: int = 5000
    seed: int = 0
    # ablation flags
    alr: bool = True
    pr: bool = True
    sr: bool = True
    rec: bool = True
    adaptive_weights: bool = True
    kl: bool = True
    stop_theta_star_grad: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError(f"need at least one stage, got m={self.m}")
        for name in ("g_lr", "d_lr"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in [0, 1], got {self.gamma}")
        if self.eta1 < 0 or self.eta2 < 0:
            raise ConfigError("eta weights must be non-negative")
        if self.batch < 2:
            raise ConfigError("contrastive matching needs batch >= 2")

    def sides(self) -> list[int]:
        return [self.base * 2**i for i in range(self.m)]

    def identity_hash(self) -> str:
        """Hash of everything that pins the parameter set and objective."""
        skip = {"steps", "batch", "g_lr", "d_lr", "adam_beta1", "adam_beta2", "d_clip"}
        payload = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in skip}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class StageState:
    index: int
    h: Tensor  # refined feature (D, side_i, side_i)
    image: Tensor  # synthesized image (3, side_i, side_i)
    theta: ssm_mod.SemMatrix | None = None
    theta_star: ssm_mod.SemMatrix | None = None
    h_star: Tensor | None = None
    alr: Tensor | None = None
    rec: Tensor | None = None
    lvr: Tensor | None = None


def _mat(h: Tensor) -> Tensor:
    d, a, b = h.data.shape
    return T.reshape(h, (d, a * b))


def _spatial(h: Tensor, side: int) -> Tensor:
    return T.reshape(h, (h.data.shape[0], side, side))


def _conv_w(rng, f, c):
    bound = 1.0 / np.sqrt(c * 9)
    return T.param(rng.uniform(-bound, bound, size=(f, c, 3, 3)))


class TextEncoder:
    def __init__(self, cfg: GanConfig, vocab: int, rng):
        self.table = T.param(rng.uniform(-0.1, 0.1, size=(vocab, cfg.d)))
        self.proj_w = T.param(None, rng, (cfg.d, cfg.d_s))
        self.proj_b = T.param(np.zeros(cfg.d_s))
        self.t = cfg.t

    def params(self):
        return [self.table, self.proj_w, self.proj_b]

    def encode(self, tokens: np.ndarray):
        """Token ids -> word matrix (D, T) and raw sentence embedding (D_s,)."""
        emb = T.take_rows(self.table, tokens)  # (T, D)
        w = T.transpose(emb)
        mean = T.matmul(Tensor(np.full((1, len(tokens)), 1.0 / len(tokens))), emb)
        s_raw = T.reshape(T.affine(mean, self.proj_w, self.proj_b), (self.proj_b.data.size,))
        return w, s_raw


class CondAugment:
    """Gaussian resampling of the sentence embedding with a KL penalty."""

    def __init__(self, cfg: GanConfig, rng):
        ds = cfg.d_s
        self.w_mu = T.param(None, rng, (ds, ds))
        self.b_mu = T.param(np.zeros(ds))
        self.w_lv = T.param(None, rng, (ds, ds))
        self.b_lv = T.param(np.zeros(ds))

    def params(self):
        return [self.w_mu, self.b_mu, self.w_lv, self.b_lv]

    def forward(self, s_raw: Tensor, eps: np.ndarray):
        row = T.reshape(s_raw, (1, s_raw.data.size))
        mu = T.reshape(T.affine(row, self.w_mu, self.b_mu), s_raw.data.shape)
        logvar = T.reshape(T.affine(row, self.w_lv, self.b_lv), s_raw.data.shape)
        sigma = T.exp(T.scale(logvar, 0.5))
        s = T.add(mu, T.mul(sigma, Tensor(eps)))
        kl_terms = T.sub(T.add(T.mul(mu, mu), T.exp(logvar)), logvar)
        kl = T.scale(T.sum_(T.add_const(kl_terms, -1.0)), 0.5)
        return s, kl


class ResBlock:
    def __init__(self, cfg: GanConfig, rng, channels: int):
        self.w1 = _conv_w(rng, channels, channels)
        self.b1 = T.param(np.zeros(channels))
        self.w2 = _conv_w(rng, channels, channels)
        self.b2 = T.param(np.zeros(channels))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, x: Tensor) -> Tensor:
        y = T.leaky_relu(T.conv3x3(x, self.w1, self.b1))
        return T.add(x, T.conv3x3(y, self.w2, self.b2))


class Iftm:
    """Initial feature transition: (sentence, noise) -> base feature grid."""

    def __init__(self, cfg: GanConfig, rng):
        d, base = cfg.d, cfg.base
        self.base = base
        self.d = d
        self.w = T.param(None, rng, (cfg.d_s + cfg.d_z, d * base * base))
        self.b = T.param(np.zeros(d * base * base))
        self.res1 = ResBlock(cfg, rng, d)
        self.res2 = ResBlock(cfg, rng, d)

    def params(self):
        return [self.w, self.b] + self.res1.params() + self.res2.params()

    def forward(self, s: Tensor, z: Tensor) -> Tensor:
        sz = T.reshape(T.concat([s, z], axis=0), (1, s.data.size + z.data.size))
        h = T.reshape(T.affine(sz, self.w, self.b), (self.d, self.base, self.base))
        return self.res2.forward(self.res1.forward(h))


class StageBlock:
    """Fuse attended words with the previous features, refine, upsample 2x."""

    def __init__(self, cfg: GanConfig, rng):
        d = cfg.d
        self.fuse_w = _conv_w(rng, d, 2 * d)
        self.fuse_b = T.param(np.zeros(d))
        self.res = ResBlock(cfg, rng, d)
        self.out_w = _conv_w(rng, d, d)
        self.out_b = T.param(np.zeros(d))

    def params(self):
        return [self.fuse_w, self.fuse_b, self.out_w, self.out_b] + self.res.params()

    def forward(self, q: Tensor, h: Tensor) -> Tensor:
        x = T.concat([q, h], axis=0)
        x = T.leaky_relu(T.conv3x3(x, self.fuse_w, self.fuse_b))
        x = self.res.forward(x)
        x = T.upsample2(x)
        return T.leaky_relu(T.conv3x3(x, self.out_w, self.out_b))


class ToRgb:
    def __init__(self, cfg: GanConfig, rng):
        self.w = _conv_w(rng, 3, cfg.d)
        self.b = T.param(np.zeros(3))

    def params(self):
        return [self.w, self.b]

    def forward(self, h: Tensor) -> Tensor:
        return T.tanh(T.conv3x3(h, self.w, self.b))


class RealEncoder:
    """Conv stack taking the stage-i image down to the stage's working grid."""

    def __init__(self, cfg: GanConfig, rng):
        d = cfg.d
        self.w1 = _conv_w(rng, d, 3)
        self.b1 = T.param(np.zeros(d))
        self.w2 = _conv_w(rng, d, d)
        self.b2 = T.param(np.zeros(d))

    def params(self):
        return [self.w1, self.b1, self.w2, self.b2]

    def forward(self, img: Tensor) -> Tensor:
        h = T.leaky_relu(T.conv3x3(img, self.w1, self.b1))
        h = T.meanpool2(h)
        return T.leaky_relu(T.conv3x3(h, self.w2, self.b2))


class Discriminator:
    """Conv stack to a 4x4 grid with sigmoid unconditional and
    sentence-conditioned heads."""

    def __init__(self, cfg: GanConfig, rng, side: int):
        c = cfg.d_disc
        self.convs = []
        in_ch = 3
        s = side
        while s > 4:
            w = _conv_w(rng, c, in_ch)
            b = T.param(np.zeros(c))
            self.convs.append((w, b))
            in_ch = c
            s //= 2
        flat = in_ch * s * s
        self.head_u_w = T.param(None, rng, (flat, 1))
        self.head_u_b = T.param(np.zeros(1))
        self.head_c_w = T.param(None, rng, (flat + cfg.d_s, 1))
        self.head_c_b = T.param(np.zeros(1))

    def params(self):
        out = [self.head_u_w, self.head_u_b, self.head_c_w, self.head_c_b]
        for w, b in self.convs:
            out += [w, b]
        return out

    def forward(self, img: Tensor, s: Tensor):
        h = img
        for w, b in self.convs:
            h = T.meanpool2(T.leaky_relu(T.conv3x3(h, w, b)))
        flat = T.reshape(h, (1, h.data.size))
        p_u = T.sigmoid(T.reshape(T.affine(flat, self.head_u_w, self.head_u_b), ()))
        cond = T.concat([flat, T.reshape(s, (1, s.data.size))], axis=1)
        p_c = T.sigmoid(T.reshape(T.affine(cond, self.head_c_w, self.head_c_b), ()))
        return p_u, p_c


# ------------------------------------------------------------ loss formulas


def _clamped_log(p: Tensor) -> Tensor:
    return T.log(T.clamp(p, _CLAMP, 1.0 - _CLAMP))


def g_adv_loss(p_uncond: Tensor, p_cond: Tensor) -> Tensor:
    """-1/2 log D(fake) - 1/2 log D(fake, s)."""
    return T.scale(T.add(_clamped_log(p_uncond), _clamped_log(p_cond)), -0.5)


def d_adv_loss(p_real_u: Tensor, p_fake_u: Tensor, p_real_c: Tensor, p_fake_c: Tensor) -> Tensor:
    """Real/fake cross-entropy over both heads."""
    one = Tensor(np.asarray(1.0))
    term_u = T.add(_clamped_log(p_real_u), _clamped_log(T.sub(one, p_fake_u)))
    term_c = T.add(_clamped_log(p_real_c), _clamped_log(T.sub(one, p_fake_c)))
    return T.scale(T.add(term_u, term_c), -0.5)


def _cosine(a: Tensor, b: Tensor) -> Tensor:
    dot = T.sum_(T.mul(a, b))
    denom = T.add_const(T.mul(T.frobenius_norm(a), T.frobenius_norm(b)), 1e-12)
    return T.div(dot, denom)


ATT_SHARPEN = 5.0  # focuses per-word attention; cosine scores alone are too flat


def _unit_columns(x: Tensor) -> Tensor:
    d = x.data.shape[0]
    sq = T.matmul(Tensor(np.ones((1, d))), T.mul(x, x))  # (1, N)
    inv = T.div(Tensor(np.ones(x.data.shape[1])),
                T.sqrt(T.add_const(T.reshape(sq, (x.data.shape[1],)), 1e-12)))
    return T.mul_rowvec(x, inv)


def _pair_similarity(img_feat: Tensor, words: Tensor, sent: Tensor, w_proj: Tensor) -> Tensor:
    """Word-level attention match plus a sentence-level term.

    Every word attends over the image subregions (sharpened cosine scores);
    the word's pooled region feature is compared back to the word embedding.
    The per-word cosines average into the pair score together with the cosine
    between the mean pooled feature and the projected sentence embedding.
    """
    t_words = words.data.shape[1]
    scores = T.matmul(T.transpose(_unit_columns(words)), _unit_columns(img_feat))  # (T, N)
    att = T.softmax_axis(T.scale(scores, ATT_SHARPEN), 1)
    pooled = T.matmul(img_feat, T.transpose(att))  # (D, T), column t attends word t
    word_cos = []
    for t in range(t_words):
        pick = Tensor(np.eye(t_words)[:, t : t + 1])
        c_t = T.reshape(T.matmul(pooled, pick), (pooled.data.shape[0],))
        w_t = T.reshape(T.matmul(words, pick), (words.data.shape[0],))
        word_cos.append(T.reshape(_cosine(c_t, w_t), (1,)))
    word_term = T.mean_(T.concat(word_cos, axis=0))
    mean_pool = T.reshape(
        T.matmul(pooled, Tensor(np.full((t_words, 1), 1.0 / t_words))),
        (pooled.data.shape[0],),
    )
    s_proj = T.reshape(
        T.matmul(T.reshape(sent, (1, sent.data.size)), w_proj), (mean_pool.data.size,)
    )
    return T.add(word_term, _cosine(mean_pool, s_proj))


def matching_loss(img_feats, word_embs, sent_embs, w_proj: Tensor, tau: float) -> Tensor:
    """Symmetric cross-batch contrastive loss over attention-pooled image
    features, word embeddings, and sentence embeddings, both softmax
    directions at temperature tau."""
    b = len(img_feats)
    if b < 2:
        raise ConfigError("matching_loss needs a batch of at least 2")
    rows = []
    for i in range(b):
        sims = [
            T.reshape(_pair_similarity(img_feats[i], word_embs[j], sent_embs[j], w_proj), (1, 1))
            for j in range(b)
        ]
        rows.append(T.concat(sims, axis=1))
    sim = T.scale(T.concat(rows, axis=0), 1.0 / tau)  # (B, B)
    eye = Tensor(np.eye(b))
    loss_i2t = T.scale(T.sum_(T.mul(T.log(T.softmax_axis(sim, 1)), eye)), -1.0 / b)
    loss_t2i = T.scale(T.sum_(T.mul(T.log(T.softmax_axis(sim, 0)), eye)), -1.0 / b)
    return T.scale(T.add(loss_i2t, loss_t2i), 0.5)


def total_g_loss(cfg: GanConfig, stages: list[StageState], adv_terms, matching, kl) -> Tensor:
    """Sum of per-stage adversarial terms, refinement terms for stages >= 1,
    weighted matching, and the conditioning KL."""
    total = adv_terms[0]
    for term in adv_terms[1:]:
        total = T.add(total, term)
    for st in stages[1:]:
        if st.alr is not None:
            total = T.add(total, st.alr)
        if st.rec is not None:
            total = T.add(total, T.scale(st.rec, cfg.lambda1))
        if st.lvr is not None:
            total = T.add(total, st.lvr)
    if matching is not None:
        total = T.add(total, T.scale(matching, cfg.lambda2))
    if kl is not None:
        total = T.add(total, T.scale(kl, cfg.kl_weight))
    return total


def total_d_loss(per_stage_losses) -> Tensor:
    total = per_stage_losses[0]
    for term in per_stage_losses[1:]:
        total = T.add(total, term)
    return total


def rec_loss(img_star: Tensor, img_rec: Tensor) -> Tensor:
    """Mean absolute reconstruction error."""
    if img_star.data.shape != img_rec.data.shape:
        raise T.ShapeError(f"rec_loss: {img_star.data.shape} vs {img_rec.data.shape}")
    return T.mean_(T.abs_(T.sub(img_star, img_rec)))


# ------------------------------------------------------------ the model


@dataclass
class SampleOutput:
    stages: list[StageState]
    w: Tensor
    s: Tensor
    s_raw: Tensor
    kl: Tensor


class GanModel:
    def __init__(self, cfg: GanConfig, vocab_size: int):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xA11]))
        self.text = TextEncoder(cfg, vocab_size, rng)
        self.f_ca = CondAugment(cfg, rng)
        self.iftm = Iftm(cfg, rng)
        self.stage_blocks = [StageBlock(cfg, rng) for _ in range(1, cfg.m)]
        self.to_rgb = [ToRgb(cfg, rng) for _ in range(cfg.m)]
        self.encoders = [RealEncoder(cfg, rng) for _ in range(1, cfg.m)]
        self.phi_a = [alr_mod.WeightNet(cfg.d, cfg.t, rng) for _ in range(1, cfg.m)]
        self.phi_b = [alr_mod.WeightNet(cfg.d, cfg.t, rng) for _ in range(1, cfg.m)]
        self.match_enc = self.encoders[-1] if cfg.m > 1 else RealEncoder(cfg, rng)
        self.match_proj = T.param(None, rng, (cfg.d_s, cfg.d))
        self.discs = [Discriminator(cfg, rng, side) for side in cfg.sides()]

    # -- parameter registry

    def g_param_items(self) -> list[tuple[str, Tensor]]:
        items = []

        def addgrp(prefix, params):
            for i, pt in enumerate(params):
                items.append((f"{prefix}.{i}", pt))

        addgrp("text", self.text.params())
        addgrp("f_ca", self.f_ca.params())
        addgrp("iftm", self.iftm.params())
        for i, blk in enumerate(self.stage_blocks):
            addgrp(f"stage{i + 1}", blk.params())
        for i, rgb in enumerate(self.to_rgb):
            addgrp(f"rgb{i}", rgb.params())
        for i, enc in enumerate(self.encoders):
            addgrp(f"enc{i + 1}", enc.params())
        if self.cfg.m == 1:
            addgrp("enc_match", self.match_enc.params())
        for i, (na, nb) in enumerate(zip(self.phi_a, self.phi_b)):
            addgrp(f"phi_a{i + 1}", na.params())
            addgrp(f"phi_b{i + 1}", nb.params())
        items.append(("match_proj", self.match_proj))
        return items

    def d_param_items(self) -> list[tuple[str, Tensor]]:
        items = []
        for i, disc in enumerate(self.discs):
            for j, pt in enumerate(disc.params()):
                items.append((f"disc{i}.{j}", pt))
        return items

    def g_params(self):
        return [p for _, p in self.g_param_items()]

    def d_params(self):
        return [p for _, p in self.d_param_items()]

    # -- forward passes

    def forward_sample(self, tokens: np.ndarray, rng, real_images=None, train=False) -> SampleOutput:
        """One caption through all stages; with ``train`` the real images feed
        the refinement losses.

        The ALR/LVR comparison of stage i runs on the stage's working grid:
        the pre-refinement feature H_{i-1} against the encoded real image
        H*_i, both at side_{i-1}.
        """
        cfg = self.cfg
        if train and real_images is None:
            raise ConfigError("training forward requires real images per scale")
        w, s_raw = self.text.encode(tokens)
        s, kl = self.f_ca.forward(s_raw, rng.standard_normal(cfg.d_s))
        z = Tensor(rng.standard_normal(cfg.d_z))
        h = self.iftm.forward(s, z)
        stages = [StageState(0, h, self.to_rgb[0].forward(h))]
        for i in range(1, cfg.m):
            side_prev = cfg.base * 2 ** (i - 1)
            h_mat = _mat(h)
            theta = ssm_mod.compute_ssm(w, h_mat)
            q = _spatial(ssm_mod.compute_tvm(theta, w), side_prev)
            h_next = self.stage_blocks[i - 1].forward(q, h)
            st = StageState(i, h_next, self.to_rgb[i].forward(h_next), theta=theta)
            if train:
                real = Tensor(real_images[i])
                h_star = self.encoders[i - 1].forward(real)
                h_star_mat = _mat(h_star)
                st.h_star = h_star
                st.theta_star = ssm_mod.compute_ssm(w, h_star_mat)
                if cfg.rec:
                    q_star = _spatial(ssm_mod.compute_tvm(st.theta_star, w), side_prev)
                    img_rec = self.to_rgb[i].forward(
                        self.stage_blocks[i - 1].forward(q_star, h_star)
                    )
                    st.rec = rec_loss(real, img_rec)
                if cfg.alr:
                    if cfg.adaptive_weights:
                        split = alr_mod.split_residual(theta, st.theta_star, cfg.gamma)
                        alpha = self.phi_a[i - 1].forward(split.easy, h_star_mat)
                        beta = self.phi_b[i - 1].forward(split.hard, h_star_mat)
                        st.alr = alr_mod.alr_loss(split, alpha, beta, cfg.d)
                    else:
                        st.alr = alr_mod.fixed_alr_loss(
                            theta, st.theta_star, theta.subregions, cfg.d
                        )
                if cfg.pr or cfg.sr:
                    star_src = st.theta_star
                    if cfg.stop_theta_star_grad:
                        star_src = ssm_mod.SemMatrix(st.theta_star.theta.detach(), st.theta_star.grid)
                    mask = ssm_mod.layout_mask(theta)
                    mask_star = ssm_mod.layout_mask(star_src)
                    weights = LvrWeights(cfg.eta1 if cfg.pr else 0.0, cfg.eta2 if cfg.sr else 0.0)
                    pr = lvr_mod.pr_loss(mask, h_mat, mask_star, h_star_mat)
                    sr = lvr_mod.sr_loss(mask, h_mat, mask_star, h_star_mat)
                    st.lvr = lvr_mod.lvr_loss(weights, pr, sr)
            stages.append(st)
            h = h_next
        return SampleOutput(stages, w, s, s_raw, kl)

    def generate(self, tokens: np.ndarray, rng) -> list[np.ndarray]:
        """Test-mode image synthesis: no real images, no loss bookkeeping."""
        with T.no_grad():
            out = self.forward_sample(tokens, rng, train=False)
            return [st.image.data.copy() for st in out.stages]
