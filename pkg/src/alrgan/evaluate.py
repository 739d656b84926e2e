"""Evaluation harness: runs test-mode generation over the held-out scene set
and reports toy-FID, inception-style score, R-precision, and layout agreement.

All metric names with a "toy" prefix come from the fixed random-weight
feature extractor and are only comparable within this artifact.
"""

from __future__ import annotations

import numpy as np

from . import metrics, ssm, synth
from . import tensor as T
from .train import _TAG_GEN, Trainer, step_rng

EVAL_R = 20

METRIC_FIELDS = ("toy_fid", "is", "r_precision", "layout_agreement")


def _sentence_projections(trainer: Trainer) -> np.ndarray:
    """(n, D) projected sentence embeddings of the eval captions."""
    model = trainer.model
    out = []
    with T.no_grad():
        for pair in trainer.eval_data.pairs:
            _, s_raw = model.text.encode(pair.tokens)
            out.append(s_raw.data @ model.match_proj.data)
    return np.asarray(out)


def evaluate(trainer: Trainer) -> dict[str, float]:
    cfg = trainer.cfg
    model = trainer.model
    extractor = metrics.ToyFeatureExtractor()
    pairs = trainer.eval_data.pairs
    n = len(pairs)

    fake_imgs = []
    thetas = []
    with T.no_grad():
        for i, pair in enumerate(pairs):
            rng = step_rng(cfg.seed, i, tag=_TAG_GEN)
            out = model.forward_sample(pair.tokens, rng, train=False)
            fake_imgs.append(out.stages[-1].image.data)
            if cfg.m > 1:
                thetas.append(out.stages[-1].theta.theta.data)
            else:
                h0 = out.stages[0].h
                theta = ssm.compute_ssm(out.w, T.reshape(h0, (cfg.d, cfg.base**2)))
                thetas.append(theta.theta.data)

    # distribution distance and diversity over toy features
    real_feats = [extractor.features(p.images[-1]) for p in pairs]
    fake_feats = [extractor.features(img) for img in fake_imgs]
    toy_fid = metrics.fid(metrics.gaussian_stats(real_feats), metrics.gaussian_stats(fake_feats))
    probs = np.stack([extractor.class_probs(img) for img in fake_imgs])
    is_score = metrics.inception_score(probs)

    # retrieval: generated image embedding against its caption + mismatched ones
    sent = _sentence_projections(trainer)
    queries = []
    with T.no_grad():
        for img in fake_imgs:
            feats = model.match_enc.forward(T.Tensor(img)).data
            queries.append(feats.mean(axis=(1, 2)))
    queries = np.asarray(queries)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x9E7]))
    r = min(EVAL_R, n)
    cands = np.zeros((n, r, sent.shape[1]))
    true_idx = np.zeros(n, dtype=np.int64)
    for i in range(n):
        others = [j for j in range(n) if j != i]
        picks = rng.choice(others, size=r - 1, replace=False)
        slot = int(rng.integers(0, r))
        true_idx[i] = slot
        row = list(picks[:slot]) + [i] + list(picks[slot:])
        cands[i] = sent[np.asarray(row)]
    r_prec = metrics.r_precision(queries, cands, true_idx, r)

    # layout agreement against the occupancy oracle at the working grid
    scale_idx = max(cfg.m - 2, 0)
    agreements = []
    for theta, pair in zip(thetas, pairs):
        occ = synth.occupancy_matrix(pair, scale_idx)
        oracle = ssm.oracle_ssm(occ, None)
        agreements.append(metrics.layout_agreement(theta, oracle.theta.data))
    return {
        "toy_fid": float(toy_fid),
        "is": float(is_score),
        "r_precision": float(r_prec),
        "layout_agreement": float(np.mean(agreements)),
    }
