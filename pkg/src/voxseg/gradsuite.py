"""Canned finite-difference verification of every differentiable piece.

Builds small float64 problems for each operator, each loss, and one tiny
end-to-end network-plus-composite-loss case, and compares reverse-mode
gradients against central finite differences.  Everything is seeded, so
a passing suite stays passing.

The evaluation-mode focal-positive gate is intentionally absent: its
hard comparison is piecewise constant, so finite differences do not
apply.  Training mode (the soft gate) is what gradients flow through,
and that is what gets checked.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import losses
from .autodiff import GradCheckReport, Tensor, grad_check
from .net3d import NetworkOutputs, UNetConfig, build_unet


def _leaf(rng, shape, name, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape).astype(np.float64),
                  requires_grad=True, name=name)


def _operator_cases(rng):
    cases = []

    a = _leaf(rng, (2, 3), "a")
    b = _leaf(rng, (2, 3), "b", lo=0.5, hi=1.5)
    s = Tensor(np.float64(0.7), requires_grad=True, name="s")
    cases.append(("elementwise", [a, b, s],
                  lambda ts: ad.sum(ts[0] * ts[1] + ts[0] / ts[1] - 3.0 * ts[0] + ts[2] * ts[1])))

    x = _leaf(rng, (3, 4), "x", lo=-2.0, hi=2.0)
    cases.append(("relu", [x], lambda ts: ad.sum(ad.relu(ts[0]))))

    x = _leaf(rng, (3, 3), "x", lo=-3.0, hi=3.0)
    cases.append(("sigmoid_log", [x],
                  lambda ts: ad.sum(ad.log(ad.sigmoid(ts[0]) + 0.1))))

    x = _leaf(rng, (2, 4), "x")
    cases.append(("mean", [x], lambda ts: ad.mean(ts[0] * ts[0])))

    # distinct values so a perturbation of h cannot flip the pool argmax;
    # captured arrays are bound as defaults so later cases cannot rebind them
    base = rng.permutation(2 * 2 * 4 * 4 * 4).astype(np.float64).reshape(2, 2, 4, 4, 4)
    x = Tensor(base / 10.0, requires_grad=True, name="x")
    w = rng.uniform(-1, 1, size=(2, 2, 2, 2, 2))
    cases.append(("max_pool2", [x],
                  lambda ts, w=w: ad.sum(ad.mul(ad.max_pool2(ts[0]), Tensor(w)))))

    x = _leaf(rng, (1, 2, 2, 3, 2), "x")
    w = rng.uniform(-1, 1, size=(1, 2, 4, 6, 4))
    cases.append(("upsample2x", [x],
                  lambda ts, w=w: ad.sum(ad.mul(ad.upsample2x(ts[0]), Tensor(w)))))

    x = _leaf(rng, (1, 2, 4, 4, 4), "x")
    w = _leaf(rng, (3, 2, 3, 3, 3), "w", lo=-0.5, hi=0.5)
    b = _leaf(rng, (3,), "b", lo=-0.2, hi=0.2)
    mix = rng.uniform(-1, 1, size=(1, 3, 4, 4, 4))
    cases.append(("conv3d_k3", [x, w, b],
                  lambda ts, mix=mix: ad.sum(ad.mul(ad.conv3d(ts[0], ts[1], ts[2]),
                                                    Tensor(mix)))))

    x = _leaf(rng, (2, 3, 4, 4, 4), "x")
    w = _leaf(rng, (2, 3, 1, 1, 1), "w")
    b = _leaf(rng, (2,), "b")
    mix = rng.uniform(-1, 1, size=(2, 2, 2, 2, 2))
    cases.append(("conv3d_k1_stride2", [x, w, b],
                  lambda ts, mix=mix: ad.sum(ad.mul(ad.conv3d(ts[0], ts[1], ts[2], stride=2),
                                                    Tensor(mix)))))
    return cases


def _loss_cases(rng):
    cases = []
    shape = (4, 4, 4)
    y = (rng.random(shape) < 0.4).astype(np.float64)

    logits = _leaf(rng, shape, "logits", lo=-2.0, hi=2.0)
    cases.append(("cel", [logits],
                  lambda ts: losses.cel(ad.sigmoid(ts[0]), Tensor(y))))

    logits = _leaf(rng, shape, "logits", lo=-2.0, hi=2.0)
    cases.append(("dice_loss", [logits],
                  lambda ts: losses.dice_loss(ad.sigmoid(ts[0]), Tensor(y))))

    logits = _leaf(rng, shape, "logits", lo=-2.0, hi=2.0)
    cases.append(("overlap_mean", [logits],
                  lambda ts: losses.overlap_loss(ad.sigmoid(ts[0]))))
    logits = _leaf(rng, shape, "logits", lo=-2.0, hi=2.0)
    cases.append(("overlap_sum", [logits],
                  lambda ts: losses.overlap_loss(ad.sigmoid(ts[0]), reduction="sum")))

    logits = _leaf(rng, shape, "logits", lo=-2.0, hi=2.0)
    tml = _leaf(rng, shape, "tm_logits", lo=-1.0, hi=1.0)
    cases.append(("focal_positive_soft", [logits, tml],
                  lambda ts: losses.focal_positive_loss(ts[0], ad.sigmoid(ts[1]), Tensor(y),
                                                        training=True)))
    logits = _leaf(rng, shape, "logits", lo=-2.0, hi=2.0)
    tml = _leaf(rng, shape, "tm_logits", lo=-1.0, hi=1.0)
    cases.append(("focal_positive_literal", [logits, tml],
                  lambda ts: losses.focal_positive_loss(ts[0], ad.sigmoid(ts[1]), Tensor(y),
                                                        training=True, literal_gate=True)))

    # Full composite on hand-assembled outputs (no network, so every term is
    # smooth and the standard step applies).
    y5 = y[None, None]
    leaves = [_leaf(rng, (1, 1) + shape, "main_logit", lo=-2.0, hi=2.0),
              _leaf(rng, (1, 1) + shape, "tm_logit", lo=-1.0, hi=1.0),
              _leaf(rng, (1, 1) + shape, "side1_logit", lo=-2.0, hi=2.0),
              _leaf(rng, (1, 1) + shape, "side2_logit", lo=-2.0, hi=2.0),
              _leaf(rng, (3, 2), "weights", lo=-0.5, hi=0.5)]
    cw = losses.LossWeights(beta=(0.2, 0.2))

    def build_composite(ts, y5=y5, cw=cw):
        out = NetworkOutputs(main_logit=ts[0], main_prob=ad.sigmoid(ts[0]),
                             tm=ad.sigmoid(ts[1]),
                             side_probs=[ad.sigmoid(ts[2]), ad.sigmoid(ts[3])])
        total, _ = losses.composite_loss(out, Tensor(y5), {"w": ts[4]}, cw)
        return total

    cases.append(("composite", leaves, build_composite))
    return cases


def _network_case(rng):
    # The composed check must run at a generic point: a freshly built net has
    # zero biases, which parks relu inputs of dead corner voxels *exactly* on
    # the kink (conv over an all-zero receptive field returns the bias), and
    # central differences straddle the kink no matter how small the step.
    # Nudging every bias off zero makes the loss locally smooth; the step is
    # also smaller than the operator cases' so parameter perturbations cannot
    # push borderline activations across zero.
    cfg = UNetConfig(levels=2, base_channels=2, crop_dims=(8, 8, 8))
    net = build_unet(cfg, seed=7)
    for name, t in net.params.items():
        t.data = t.data.astype(np.float64)
        if name.endswith(".b"):
            t.data = t.data + rng.uniform(0.02, 0.1, size=t.data.shape) \
                * rng.choice([-1.0, 1.0], size=t.data.shape)
    x = rng.uniform(-1.0, 1.0, size=(1, 1, 8, 8, 8))
    y = (rng.random((8, 8, 8)) < 0.3).astype(np.float64)[None, None]
    weights = losses.LossWeights(beta=(0.2, 0.2, 0.2))
    inputs = list(net.params.values())

    def build(_ts):
        out = net.forward(Tensor(x))
        total, _ = losses.composite_loss(out, Tensor(y), net.params, weights)
        return total

    return ("tinynet", inputs, build)


def run_gradient_suite(tol: float = 1e-3, seed: int = 0,
                       include_network: bool = True) -> GradCheckReport:
    """Gradient-check operators, losses, and (optionally) a tiny network.

    Returns one merged report with entries named ``case.input``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    cases = [(n, i, b, 1e-4) for n, i, b in _operator_cases(rng) + _loss_cases(rng)]
    if include_network:
        name, inputs, builder = _network_case(rng)
        cases.append((name, inputs, builder, 1e-6))

    merged = GradCheckReport(tolerance=tol)
    for name, inputs, builder, h in cases:
        rep = grad_check(builder, inputs, tol=tol, h=h)
        for e in rep.entries:
            e.name = f"{name}.{e.name}"
            merged.entries.append(e)
    return merged
