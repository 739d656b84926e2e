"""Alternating-optimization training loop over the synthetic scene dataset.

Every stochastic choice in a step (batch indices, noise, conditioning
samples) comes from a fresh generator seeded by (config seed, purpose tag,
step index), so a (seed, step) pair always replays identically, regardless of
history. Loss evaluation inside a step is single-threaded; parallelism
belongs at the process level (sweeps/ablations).
"""

from __future__ import annotations

import numpy as np

from . import gan as gan_mod
from . import synth
from . import tensor as T
from .errors import TrainingFault
from .gan import GanConfig, GanModel, StageState
from .optim import Adam, clip_grad_norm
from .tensor import Tensor

_TAG_DATA = 0xDA7A
_TAG_EVAL = 0xE7A1
_TAG_STEP = 0x57E9
_TAG_GEN = 0x6E4

LOSS_FIELDS = ("g_total", "d_total", "g_adv", "alr", "rec", "lvr", "match", "kl")


def _scene_seed(cfg_seed: int, tag: int, index: int) -> int:
    return int(np.random.SeedSequence([cfg_seed, tag, index]).generate_state(1)[0])


def step_rng(cfg_seed: int, step: int, tag: int = _TAG_STEP) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg_seed, tag, step]))


def _mean(tensors):
    total = tensors[0]
    for t in tensors[1:]:
        total = T.add(total, t)
    return T.scale(total, 1.0 / len(tensors))


class Dataset:
    """Pre-rendered scene pairs, seed-indexed and immutable."""

    def __init__(self, cfg: GanConfig, size: int, tag: int = _TAG_DATA):
        self.max_objects = synth.max_objects_for(cfg.t)
        self.seeds = [_scene_seed(cfg.seed, tag, i) for i in range(size)]
        self.pairs = [
            synth.render(synth.sample_scene(s, self.max_objects), cfg.m, cfg.t, cfg.base)
            for s in self.seeds
        ]

    def __len__(self):
        return len(self.pairs)


class Trainer:
    def __init__(self, cfg: GanConfig, dataset_size: int = 256, eval_size: int = 64):
        self.cfg = cfg
        self.model = GanModel(cfg, vocab_size=len(synth.VOCAB))
        self.data = Dataset(cfg, dataset_size)
        self.eval_data = Dataset(cfg, eval_size, tag=_TAG_EVAL)
        self.g_opt = Adam(
            self.model.g_params(), lr=cfg.g_lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2
        )
        self.d_opt = Adam(
            self.model.d_params(), lr=cfg.d_lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2
        )
        self.step_count = 0

    # -- one optimization step

    def train_step(self, step: int) -> dict[str, float]:
        cfg = self.cfg
        model = self.model
        rng = step_rng(cfg.seed, step)
        idx = rng.integers(0, len(self.data), size=cfg.batch)
        batch = [self.data.pairs[i] for i in idx]

        outs = [
            model.forward_sample(pair.tokens, rng, real_images=pair.images, train=True)
            for pair in batch
        ]

        # discriminator update on detached fakes and detached sentences
        d_stage_losses = []
        for i in range(cfg.m):
            per_sample = []
            for out, pair in zip(outs, batch):
                fake = out.stages[i].image.detach()
                s_det = out.s.detach()
                real = Tensor(pair.images[i])
                p_fake_u, p_fake_c = model.discs[i].forward(fake, s_det)
                p_real_u, p_real_c = model.discs[i].forward(real, s_det)
                per_sample.append(gan_mod.d_adv_loss(p_real_u, p_fake_u, p_real_c, p_fake_c))
            d_stage_losses.append(_mean(per_sample))
        d_loss = gan_mod.total_d_loss(d_stage_losses)
        self.d_opt.zero_grad()
        T.backward(d_loss)
        clip_grad_norm(self.model.d_params(), cfg.d_clip)
        self.d_opt.step()

        # generator update against the refreshed discriminators
        adv_means = []
        for i in range(cfg.m):
            per_sample = []
            for out in outs:
                p_u, p_c = model.discs[i].forward(out.stages[i].image, out.s)
                per_sample.append(gan_mod.g_adv_loss(p_u, p_c))
            adv_means.append(_mean(per_sample))

        fake_feats, real_feats, words, sents = [], [], [], []
        for out, pair in zip(outs, batch):
            fake_feats.append(gan_mod._mat(model.match_enc.forward(out.stages[-1].image)))
            real_feats.append(gan_mod._mat(model.match_enc.forward(Tensor(pair.images[-1]))))
            words.append(out.w)
            sents.append(out.s_raw)
        match = T.add(
            gan_mod.matching_loss(fake_feats, words, sents, model.match_proj, cfg.tau),
            gan_mod.matching_loss(real_feats, words, sents, model.match_proj, cfg.tau),
        )

        mean_stages = [StageState(0, None, None)]
        for i in range(1, cfg.m):
            st = StageState(i, None, None)
            if cfg.alr:
                st.alr = _mean([out.stages[i].alr for out in outs])
            if cfg.rec:
                st.rec = _mean([out.stages[i].rec for out in outs])
            if cfg.pr or cfg.sr:
                st.lvr = _mean([out.stages[i].lvr for out in outs])
            mean_stages.append(st)
        kl = _mean([out.kl for out in outs]) if cfg.kl else None
        g_loss = gan_mod.total_g_loss(cfg, mean_stages, adv_means, match, kl)
        self.g_opt.zero_grad()
        T.backward(g_loss)
        self.g_opt.step()

        def val(t):
            return 0.0 if t is None else float(t.data)

        record = {
            "g_total": float(g_loss.data),
            "d_total": float(d_loss.data),
            "g_adv": float(sum(a.data for a in adv_means)),
            "alr": sum(val(st.alr) for st in mean_stages[1:]),
            "rec": sum(val(st.rec) for st in mean_stages[1:]),
            "lvr": sum(val(st.lvr) for st in mean_stages[1:]),
            "match": float(match.data),
            "kl": val(kl),
        }
        if not all(np.isfinite(v) for v in record.values()):
            raise TrainingFault(f"non-finite loss at step {step}: {record}")
        self.step_count = step + 1
        return record

    def run(self, steps: int, on_record=None) -> list[dict[str, float]]:
        history = []
        for step in range(self.step_count, self.step_count + steps):
            rec = self.train_step(step)
            history.append(rec)
            if on_record is not None:
                on_record(step, rec)
        return history

    # -- test-mode generation

    def generate(self, index: int) -> list[np.ndarray]:
        """Deterministic test-mode synthesis for an eval-set caption."""
        pair = self.eval_data.pairs[index]
        rng = step_rng(self.cfg.seed, index, tag=_TAG_GEN)
        return self.model.generate(pair.tokens, rng)
