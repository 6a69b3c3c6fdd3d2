"""Central finite-difference checks for the differentiable ops and networks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .core import Tensor, grad


def numerical_grad(f: Callable[[], float], arr: np.ndarray, h: float, coords=None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. entries of ``arr`` (mutated and restored in place)."""
    flat = arr.reshape(-1)
    out = np.zeros(flat.size, dtype=np.float64)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[i] = (fp - fm) / (2 * h)
    return out.reshape(arr.shape)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error ||a - b|| / max(||a||, ||b||)."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
          coords: int | None = None, rng: np.random.Generator | None = None) -> list[float]:
    """Compare analytic and numerical gradients of ``sum(fn(*inputs) * probe)``.

    A fixed random probe turns any output into a scalar with a generic
    upstream gradient.  Returns one relative error per input.
    """
    rng = rng or np.random.default_rng(0)
    tensors = [Tensor(x, requires_grad=True) for x in inputs]
    out = fn(*tensors)
    probe = rng.standard_normal(out.shape).astype(out.dtype)

    def scalar_loss(ts):
        return ops.sum(ops.mul(fn(*ts), probe))

    analytic = grad(scalar_loss(tensors), tensors)

    def value():
        return float(scalar_loss([Tensor(t.data) for t in tensors]).data)

    errors = []
    for t, ga in zip(tensors, analytic):
        sel = None
        if coords is not None and t.data.size > coords:
            sel = rng.choice(t.data.size, size=coords, replace=False)
        gn = numerical_grad(value, t.data, h, sel)
        if sel is not None:
            errors.append(rel_error(ga.reshape(-1)[sel], gn.reshape(-1)[sel]))
        else:
            errors.append(rel_error(ga, gn))
    return errors


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error <= self.tol


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def op_suite(seeds=range(5), tol: float = 1e-6) -> list[CheckResult]:
    """Randomized 64-bit gradient checks of every differentiable op."""
    results = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        f64 = np.float64
        bn_buffers = lambda c: (Tensor(np.zeros(c)), Tensor(np.ones(c)), Tensor(np.zeros(1)))  # noqa: E731
        cases: list[tuple[str, Callable, list, float]] = [
            ("conv2d_same_s1", lambda x, w, b: ops.conv2d(x, w, b, 1, "same"),
             [rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)], 1e-3),
            ("conv2d_same_s2", lambda x, w, b: ops.conv2d(x, w, b, 2, "same"),
             [rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)], 1e-3),
            ("conv2d_valid", lambda x, w, b: ops.conv2d(x, w, b, 1, "valid"),
             [rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2)], 1e-3),
            ("leaky_relu", lambda x: ops.leaky_relu(x, 0.2), [_away_from_zero(rng, (3, 4, 5))], 1e-5),
            ("batch_norm_train", lambda x, g, b: ops.batch_norm(x, g, b, *bn_buffers(3), train=True),
             [rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(3), rng.standard_normal(3)], 1e-5),
            ("batch_norm_infer", lambda x, g, b: ops.batch_norm(
                x, g, b, Tensor(np.full(3, 0.1)), Tensor(np.full(3, 2.0)), Tensor(np.ones(1)), train=False),
             [rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(3), rng.standard_normal(3)], 1e-5),
            ("dense", ops.dense, [rng.standard_normal((5, 4)), rng.standard_normal((4, 3)), rng.standard_normal(3)], 1e-5),
            ("residual_add", ops.residual_add, [rng.standard_normal((2, 3)), rng.standard_normal((2, 3))], 1e-5),
            ("concat_channels", ops.concat_channels, [rng.standard_normal((2, 3)), rng.standard_normal((2, 5))], 1e-5),
            ("global_avg_pool", ops.global_avg_pool, [rng.standard_normal((2, 3, 4, 5))], 1e-5),
            ("softplus", ops.softplus, [rng.standard_normal((3, 4)) * 3], 1e-5),
            ("sigmoid", ops.sigmoid, [rng.standard_normal((3, 4)) * 3], 1e-5),
            ("abs", ops.absolute, [_away_from_zero(rng, (3, 4))], 1e-5),
            ("square", ops.square, [rng.standard_normal((3, 4))], 1e-5),
            ("mul_broadcast", ops.mul, [rng.standard_normal((3, 4)), rng.standard_normal((1, 4))], 1e-5),
            ("div", ops.div, [rng.standard_normal((3, 4)), rng.uniform(0.5, 2.0, (3, 4))], 1e-5),
            ("sum_axis", lambda x: ops.sum(x, axis=1), [rng.standard_normal((3, 4, 2))], 1e-5),
            ("mean", ops.mean, [rng.standard_normal((3, 4))], 1e-5),
            ("index", lambda x: x[1:3], [rng.standard_normal((4, 3))], 1e-5),
        ]
        for name, fn, inputs, h in cases:
            errs = check(fn, [np.asarray(x, dtype=f64) for x in inputs], h=h, rng=rng)
            results.append(CheckResult(name, seed, max(errs), tol))
    return results
