"""End-to-end gradient checks of the full networks.

Networks run and backpropagate in 32-bit.  The finite-difference reference is
taken on a 64-bit copy of the same weights and inputs: single-precision
central differences are only good to about 1e-2 through batch norm, which is
too coarse to test a 1e-3 tolerance.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .nets import (
    Discriminator,
    Evaluator,
    FeatureNet,
    NetworkConfig,
    Restorator,
    critic_loss,
    evaluator_loss_imagewise,
    evaluator_loss_patchwise,
    generator_loss,
    perceptual_loss,
)
from .tensor import ParamStore, Tensor, backward, ops
from .tensor.gradcheck import CheckResult, rel_error


def tiny_config(seed: int = 0) -> NetworkConfig:
    return NetworkConfig(patch_size=8, n_blocks=1, channels=4, disc_channels=(4, 4, 8, 8), disc_fc=8,
                         eval_head=8, feat_channels=(4, 4, 4, 4, 4), init_seed=seed, feat_seed=100 + seed)


def param_gradcheck(loss_fn: Callable[[], Tensor], params: ParamStore, reference: Callable[[], None],
                    h: float = 1e-6, coords: int = 3, rng: np.random.Generator | None = None) -> float:
    """Relative error (norm-wise) between backprop through ``loss_fn`` and central
    differences over ``coords`` sampled entries of every trainable parameter.

    ``reference()`` is called between the two and must switch every array the
    loss depends on to 64-bit.
    """
    rng = rng or np.random.default_rng(0)
    report = backward(loss_fn(), params)
    picks = {name: rng.choice(params[name].data.size, size=min(coords, params[name].data.size), replace=False)
             for name in params.trainable()}
    reference()
    analytic, numeric = [], []
    for name, idx in picks.items():
        flat = params[name].data.reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = float(loss_fn().data)
            flat[i] = old - h
            fm = float(loss_fn().data)
            flat[i] = old
            numeric.append((fp - fm) / (2 * h))
            analytic.append(float(report.grads[name].reshape(-1)[i]))
    return rel_error(np.array(analytic), np.array(numeric))


def network_suite(seeds=range(5), tol: float = 1e-3, h: float = 1e-6, coords: int = 3) -> list[CheckResult]:
    """Restorator (perceptual + adversarial), critic and evaluator (both losses)."""
    results = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        cfg = tiny_config(seed)
        xa = rng.uniform(0, 1, (4, 3, 8, 8)).astype(np.float32)
        refa = np.clip(xa + rng.normal(0, 0.1, xa.shape), 0, 1).astype(np.float32)
        data = {"x": Tensor(xa), "ref": Tensor(refa)}
        r, d, e = Restorator(cfg), Discriminator(cfg), Evaluator(cfg)
        featnet = FeatureNet.from_config(cfg)
        s0 = rng.uniform(0, 1, 4)
        w0 = rng.uniform(0, 1, 4)

        def restorator_loss():
            out = r(data["x"], train=True)
            return ops.add(perceptual_loss(featnet, data["ref"], out), generator_loss(d(out, train=True), "wgan"))

        def critic():
            return critic_loss(d(data["ref"], train=True), d(data["x"], train=True), "wgan")

        def evaluator_losses():
            s, w = e(data["x"], data["ref"], train=True)
            patch = evaluator_loss_patchwise((s, w), (s0, w0))
            image = evaluator_loss_imagewise((ops.reshape(s, (2, 2)), ops.reshape(w, (2, 2))), s0[:2])
            return ops.add(patch, image)

        def to64():
            for store in (r.params, d.params, e.params, featnet.params):
                store.astype(np.float64)
            data["x"] = Tensor(xa.astype(np.float64))
            data["ref"] = Tensor(refa.astype(np.float64))

        def to32():
            for store in (r.params, d.params, e.params, featnet.params):
                store.astype(np.float32)
            data["x"], data["ref"] = Tensor(xa), Tensor(refa)

        for name, fn, params in (("restorator", restorator_loss, r.params),
                                 ("discriminator", critic, d.params),
                                 ("evaluator", evaluator_losses, e.params)):
            err = param_gradcheck(fn, params, to64, h, coords, np.random.default_rng([seed, 7]))
            results.append(CheckResult(name, seed, err, tol))
            to32()
    return results
