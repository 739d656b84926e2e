"""Release-gate gradient verification: every differentiable operation and the
composite losses, checked against central finite differences at seeded random
points.

Supports deliberate fault injection (ALR_GRADCHECK_FAULT env var or the
``fault`` argument) so the harness can prove it catches a broken backward.
"""

from __future__ import annotations

import numpy as np

from . import alr as alr_mod
from . import gan as gan_mod
from . import lvr as lvr_mod
from . import ssm as ssm_mod
from . import synth
from . import tensor as T
from .gan import GanConfig, GanModel
from .tensor import Tensor

OP_TOL = 1e-4
COMPOSITE_TOL = 1e-3
POINTS = 10


def _sabotage_softplus():
    """Sign-flipped softplus backward; restores on context exit."""
    orig = T.softplus

    def broken(a):
        y = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))

        def bwd(g):
            T._acc(a, -g * 0.5 * (1.0 + np.tanh(0.5 * a.data)))

        return T._node(y, (a,), bwd, "softplus")

    T.softplus = broken
    return orig


def _op_cases(rng):
    """(name, point-factory, function) triples for the primitive operation set."""
    def pt(shape=(4, 5), scale=1.3):
        return lambda: T.param(rng.normal(size=shape) * scale)

    cs = rng.normal(size=(4, 5))
    cm = rng.normal(size=(5, 3))
    cv = rng.normal(size=5)
    pos = rng.uniform(0.5, 2.0, size=(4, 5))
    return [
        ("add", pt(), lambda v: T.add(v, Tensor(cs))),
        ("sub", pt(), lambda v: T.sub(v, Tensor(cs))),
        ("mul", pt(), lambda v: T.mul(v, Tensor(cs))),
        ("div", pt(), lambda v: T.div(v, Tensor(pos))),
        ("scale", pt(), lambda v: T.scale(v, -1.7)),
        ("matmul", pt(), lambda v: T.matmul(v, Tensor(cm))),
        ("transpose", pt(), lambda v: T.transpose(v)),
        ("reshape", pt(), lambda v: T.reshape(v, (20,))),
        ("concat", pt(), lambda v: T.concat([v, Tensor(cs)], 1)),
        ("mul_rowvec", pt(), lambda v: T.mul_rowvec(v, Tensor(cv))),
        ("add_bias", pt(), lambda v: T.add_bias(v, Tensor(cv))),
        ("abs", pt(), lambda v: T.abs_(v)),
        ("l1_norm", pt(), lambda v: T.l1_norm(v)),
        ("sum", pt(), lambda v: T.sum_(v)),
        ("mean", pt(), lambda v: T.mean_(v)),
        ("max", pt(), lambda v: T.max_(v)),
        ("min", pt(), lambda v: T.min_(v)),
        ("max_axis0", pt(), lambda v: T.max_axis0(v)),
        ("frobenius_norm", pt(), lambda v: T.frobenius_norm(v)),
        ("leaky_relu", pt(), lambda v: T.leaky_relu(v)),
        ("sigmoid", pt(), lambda v: T.sigmoid(v)),
        ("tanh", pt(), lambda v: T.tanh(v)),
        ("softplus", pt(), lambda v: T.softplus(v)),
        ("exp", pt(scale=0.8), lambda v: T.exp(v)),
        ("log", lambda: T.param(rng.uniform(0.4, 2.0, size=(4, 5))), lambda v: T.log(v)),
        ("sqrt", lambda: T.param(rng.uniform(0.3, 2.0, size=(4, 5))), lambda v: T.sqrt(v)),
        ("clamp", pt(), lambda v: T.clamp(v, -0.9, 0.9)),
        ("softmax_axis", pt(), lambda v: T.softmax_axis(v, 0)),
        ("conv3x3", lambda: T.param(rng.normal(size=(2, 4, 4))),
         lambda v: T.conv3x3(v, Tensor(rng.normal(size=(3, 2, 3, 3)) * 0 + _CW), Tensor(np.zeros(3)))),
        ("meanpool2", lambda: T.param(rng.normal(size=(2, 4, 4))), lambda v: T.meanpool2(v)),
        ("upsample2", lambda: T.param(rng.normal(size=(2, 3, 3))), lambda v: T.upsample2(v)),
        ("affine", pt(), lambda v: T.affine(v, Tensor(cm), Tensor(np.zeros(3)))),
        ("take_rows", lambda: T.param(rng.normal(size=(6, 4))),
         lambda v: T.take_rows(v, np.array([0, 2, 2, 5]))),
    ]


_CW = None  # fixed conv weight, set once per suite run


def _scalarize(y):
    if y.data.shape == ():
        return y
    return T.frobenius_norm(T.mul(y, y)) if y.data.ndim else y


def _check(fn, x, tol):
    err = T.grad_check(lambda v: _scalarize(fn(v)), x)
    return err


def _composite_cases(rng):
    """SSM -> ALR, PR, SR, and the adversarial assembly on small instances."""
    t_words, n_sub, d = 3, 4, 8
    sm = lambda z: np.exp(z - z.max(0)) / np.exp(z - z.max(0)).sum(0)

    def alr_case():
        w = Tensor(rng.normal(size=(d, t_words)))
        ts = sm(rng.normal(scale=2.0, size=(t_words, n_sub)))
        h_star = Tensor(rng.normal(size=(d, n_sub)))
        net_a = alr_mod.WeightNet(d, t_words, rng)
        net_b = alr_mod.WeightNet(d, t_words, rng)
        for net in (net_a, net_b):
            net.w2.data[:] = 0.2 * rng.normal(size=net.w2.data.shape)
            net.b2.data[:] = 0.2 * rng.normal(size=net.b2.data.shape)
        x = T.param(rng.normal(size=(d, n_sub)))

        def f(v):
            theta = ssm_mod.compute_ssm(w, v, grid=(2, 2))
            split = alr_mod.split_residual(theta, Tensor(ts), 0.2)
            a = net_a.forward(split.easy, h_star)
            b = net_b.forward(split.hard, h_star)
            return alr_mod.alr_loss(split, a, b, d)

        return x, f

    def lvr_case(kind):
        w = Tensor(rng.normal(size=(d, t_words)))
        hs = Tensor(rng.normal(size=(d, n_sub)))
        ts = sm(rng.normal(scale=2.0, size=(t_words, n_sub)))
        x = T.param(rng.normal(size=(d, n_sub)))

        def f(v):
            mask = ssm_mod.layout_mask(ssm_mod.compute_ssm(w, v, grid=(2, 2)))
            mask_star = ssm_mod.layout_mask(ssm_mod.SemMatrix(Tensor(ts), (2, 2)))
            loss = lvr_mod.pr_loss if kind == "pr" else lvr_mod.sr_loss
            return loss(mask, v, mask_star, hs)

        return x, f

    def adv_case():
        x = T.param(rng.uniform(-2.0, 2.0, size=(4,)))

        def f(v):
            probs = T.sigmoid(v)
            g = gan_mod.g_adv_loss(
                T.reshape(T.take_rows(T.reshape(probs, (4, 1)), [0]), ()),
                T.reshape(T.take_rows(T.reshape(probs, (4, 1)), [1]), ()),
            )
            p = [T.reshape(T.take_rows(T.reshape(probs, (4, 1)), [i]), ()) for i in range(4)]
            d_l = gan_mod.d_adv_loss(p[0], p[1], p[2], p[3])
            return T.add(g, d_l)

        return x, f

    return [
        ("ssm_to_alr", alr_case),
        ("pr_loss", lambda: lvr_case("pr")),
        ("sr_loss", lambda: lvr_case("sr")),
        ("adversarial_assembly", adv_case),
    ]


def end_to_end_case(seed: int = 0, coords: int = 50):
    """Total generator loss on a tiny two-stage config; checks a random subset
    of parameter coordinates against finite differences."""
    from .train import Trainer

    cfg = GanConfig(m=2, d=16, d_s=12, d_z=8, t=4, batch=2, seed=seed, d_disc=8)
    trainer = Trainer(cfg, dataset_size=4, eval_size=4)
    model = trainer.model
    rng_data = np.random.default_rng(seed + 99)
    batch = trainer.data.pairs[:2]

    def loss_value():
        rng = np.random.default_rng(seed + 7)
        outs = [
            model.forward_sample(p.tokens, rng, real_images=p.images, train=True)
            for p in batch
        ]
        adv = []
        for i in range(cfg.m):
            per = []
            for out in outs:
                p_u, p_c = model.discs[i].forward(out.stages[i].image, out.s)
                per.append(gan_mod.g_adv_loss(p_u, p_c))
            adv.append(T.scale(T.add(per[0], per[1]), 0.5))
        feats = [gan_mod._mat(model.match_enc.forward(out.stages[-1].image)) for out in outs]
        match = gan_mod.matching_loss(
            feats, [o.w for o in outs], [o.s_raw for o in outs], model.match_proj, cfg.tau
        )
        from .gan import StageState

        mean_stages = [StageState(0, None, None)]
        for i in range(1, cfg.m):
            st = StageState(i, None, None)
            st.alr = T.scale(T.add(outs[0].stages[i].alr, outs[1].stages[i].alr), 0.5)
            st.rec = T.scale(T.add(outs[0].stages[i].rec, outs[1].stages[i].rec), 0.5)
            st.lvr = T.scale(T.add(outs[0].stages[i].lvr, outs[1].stages[i].lvr), 0.5)
            mean_stages.append(st)
        kl = T.scale(T.add(outs[0].kl, outs[1].kl), 0.5)
        return gan_mod.total_g_loss(cfg, mean_stages, adv, match, kl)

    params = model.g_params()
    loss = loss_value()
    for p in params:
        p.grad = None
    T.backward(loss)

    flat_index = []
    for pi, p in enumerate(params):
        for ci in range(p.data.size):
            flat_index.append((pi, ci))
    picks = rng_data.choice(len(flat_index), size=min(coords, len(flat_index)), replace=False)

    eps = 1e-5
    worst = 0.0
    for k in picks:
        pi, ci = flat_index[k]
        p = params[pi]
        ad = 0.0 if p.grad is None else float(p.grad.ravel()[ci])
        orig = float(p.data.ravel()[ci])
        p.data.ravel()[ci] = orig + eps
        with T.no_grad():
            fp = float(loss_value().data)
        p.data.ravel()[ci] = orig - eps
        with T.no_grad():
            fm = float(loss_value().data)
        p.data.ravel()[ci] = orig
        fd = (fp - fm) / (2 * eps)
        worst = max(worst, abs(ad - fd) / max(1.0, abs(ad), abs(fd)))
    return worst


def run_suite(tol_ops: float = OP_TOL, tol_composite: float = COMPOSITE_TOL,
              points: int = POINTS, seed: int = 2024, fault: str | None = None,
              end_to_end: bool = True):
    """Returns (results, failures): per-case worst errors over seeded points."""
    global _CW
    restore = None
    if fault == "softplus":
        restore = _sabotage_softplus()
    try:
        results = []
        rng = np.random.default_rng(seed)
        _CW = rng.normal(size=(3, 2, 3, 3))
        for name, point, fn in _op_cases(rng):
            worst = 0.0
            for _ in range(points):
                worst = max(worst, _check(fn, point(), tol_ops))
            results.append((name, worst, tol_ops))
        for name, case in _composite_cases(rng):
            worst = 0.0
            for _ in range(points):
                x, f = case()
                worst = max(worst, T.grad_check(f, x))
            results.append((name, worst, tol_composite))
        if end_to_end:
            results.append(("total_g_loss_end_to_end", end_to_end_case(), tol_composite))
    finally:
        if restore is not None:
            T.softplus = restore
    failures = [(n, e, t) for n, e, t in results if not e <= t]
    return results, failures
