"""Restorator, critic, evaluator and the frozen feature network, with their losses.

All networks take patch batches shaped N x 3 x H x W (float32 by default) and
keep their parameters in a :class:`~ranqa.tensor.ParamStore` under the name
prefixes ``restorator/``, ``discriminator/``, ``evaluator/`` and ``featnet/``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .patches import extract_patches
from .tensor import ParamStore, Tensor, no_grad, ops
from .tensor.ops import he_normal

WEIGHT_EPS = 1e-3
AGGREGATES = ("weighted", "mean")
ADV_MODES = ("wgan", "loggan", "none")
REC_LOSSES = ("perceptual", "l2")
EXIT_INIT_SCALE = 0.01


@dataclass
class NetworkConfig:
    patch_size: int = 64
    n_blocks: int = 10
    channels: int = 64
    disc_channels: tuple[int, ...] = (64, 64, 128, 128, 256, 256, 512, 512)
    disc_fc: int = 256
    eval_head: int = 256
    shared_trunk: bool = True
    feat_channels: tuple[int, ...] = (8, 16, 32, 64, 64)
    feat_seed: int = 1234
    init_seed: int = 0
    slope: float = 0.2
    lambda_per: float = 1.0
    lambda_adv: float = 1.0
    aggregate: str = "weighted"
    adv_mode: str = "wgan"
    rec_loss: str = "perceptual"
    global_skip: bool = True

    def __post_init__(self):
        self.disc_channels = tuple(int(c) for c in self.disc_channels)
        self.feat_channels = tuple(int(c) for c in self.feat_channels)
        self.validate()

    def validate(self) -> None:
        if self.n_blocks < 1:
            raise ValueError("n_blocks must be >= 1")
        if self.channels < 3:
            raise ValueError("channels must be >= 3")
        if len(self.feat_channels) != 5:
            raise ValueError("feature net needs exactly 5 stages")
        if not self.disc_channels:
            raise ValueError("discriminator needs at least one conv stage")
        if self.lambda_per < 0 or self.lambda_adv < 0:
            raise ValueError("loss weights must be non-negative")
        if not 0 <= self.slope < 1:
            raise ValueError("slope must lie in [0, 1)")
        if self.aggregate not in AGGREGATES:
            raise ValueError(f"aggregate must be one of {AGGREGATES}")
        if self.adv_mode not in ADV_MODES:
            raise ValueError(f"adv_mode must be one of {ADV_MODES}")
        if self.rec_loss not in REC_LOSSES:
            raise ValueError(f"rec_loss must be one of {REC_LOSSES}")
        if self.patch_size < 1:
            raise ValueError("patch_size must be positive")

    @property
    def fused_width(self) -> int:
        return 2 * self.disc_channels[-1]

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# layer helpers

def _add_conv(store, name, cin, cout, rng, dtype):
    store.add(f"{name}/w", he_normal(rng, (cout, cin, 3, 3), cin * 9, dtype))
    store.add(f"{name}/b", np.zeros(cout, dtype))


def _add_bn(store, name, c, dtype):
    store.add(f"{name}/gamma", np.ones(c, dtype))
    store.add(f"{name}/beta", np.zeros(c, dtype))
    store.add(f"{name}/running_mean", np.zeros(c, dtype), trainable=False)
    store.add(f"{name}/running_var", np.ones(c, dtype), trainable=False)
    store.add(f"{name}/count", np.zeros(1, dtype), trainable=False)


def _add_dense(store, name, nin, nout, rng, dtype):
    store.add(f"{name}/w", he_normal(rng, (nin, nout), nin, dtype))
    store.add(f"{name}/b", np.zeros(nout, dtype))


def _conv(store, name, x, stride=1):
    return ops.conv2d(x, store[f"{name}/w"], store[f"{name}/b"], stride, "same")


def _bn(store, name, x, train):
    return ops.batch_norm(x, store[f"{name}/gamma"], store[f"{name}/beta"], store[f"{name}/running_mean"],
                          store[f"{name}/running_var"], store[f"{name}/count"], train)


def _dense(store, name, x):
    return ops.dense(x, store[f"{name}/w"], store[f"{name}/b"])


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, salt])


def as_batch(patches, dtype=np.float32) -> Tensor:
    """Accept N x 3 x H x W, N x H x W x 3 or a single H x W x 3 patch."""
    if isinstance(patches, Tensor):
        return patches
    arr = np.asarray(patches)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.shape[-1] == 3 and arr.shape[1] != 3:
        arr = arr.transpose(0, 3, 1, 2)
    return Tensor(np.ascontiguousarray(arr, dtype=dtype))


# ---------------------------------------------------------------------------
# networks

class Restorator:
    """Entry conv, residual blocks (conv-BN-LReLU-conv-BN + skip), exit conv to RGB.

    With ``cfg.global_skip`` the exit conv predicts a correction added to the input.
    """

    prefix = "restorator"

    def __init__(self, cfg: NetworkConfig, params: ParamStore | None = None, dtype=np.float32):
        self.cfg = cfg
        if params is None:
            params = ParamStore()
            rng = _rng(cfg.init_seed, 1)
            p = self.prefix
            _add_conv(params, f"{p}/entry", 3, cfg.channels, rng, dtype)
            for i in range(cfg.n_blocks):
                _add_conv(params, f"{p}/block{i}/conv1", cfg.channels, cfg.channels, rng, dtype)
                _add_bn(params, f"{p}/block{i}/bn1", cfg.channels, dtype)
                _add_conv(params, f"{p}/block{i}/conv2", cfg.channels, cfg.channels, rng, dtype)
                _add_bn(params, f"{p}/block{i}/bn2", cfg.channels, dtype)
            _add_conv(params, f"{p}/exit", cfg.channels, 3, rng, dtype)
            if cfg.global_skip:
                # start close to a pass-through so training refines small corrections
                params[f"{p}/exit/w"].data *= dtype(EXIT_INIT_SCALE)
        self.params = params

    def __call__(self, x, train: bool = False) -> Tensor:
        s, p, a = self.params, self.prefix, self.cfg.slope
        xb = as_batch(x)
        h = ops.leaky_relu(_conv(s, f"{p}/entry", xb), a)
        for i in range(self.cfg.n_blocks):
            r = _bn(s, f"{p}/block{i}/bn1", _conv(s, f"{p}/block{i}/conv1", h), train)
            r = ops.leaky_relu(r, a)
            r = _bn(s, f"{p}/block{i}/bn2", _conv(s, f"{p}/block{i}/conv2", r), train)
            h = ops.residual_add(h, r)
        out = _conv(s, f"{p}/exit", h)
        if self.cfg.global_skip:
            out = ops.residual_add(xb, out)
        return out

    def restore(self, patches) -> np.ndarray:
        """Inference: running batch-norm statistics, output clamped to [0, 1]."""
        with no_grad():
            return np.clip(self(patches, train=False).data, 0.0, 1.0)

    def set_identity(self) -> None:
        """Make the network an exact pass-through for inputs in [0, 1]."""
        s, p, c = self.params, self.prefix, self.cfg.channels
        s[f"{p}/exit/w"].data[...] = 0
        s[f"{p}/exit/b"].data[...] = 0
        for i in range(self.cfg.n_blocks):
            for bn in ("bn1", "bn2"):
                s[f"{p}/block{i}/{bn}/count"].data[...] = max(1, s[f"{p}/block{i}/{bn}/count"].data[0])
        if self.cfg.global_skip:
            return
        s[f"{p}/entry/w"].data[...] = 0
        s[f"{p}/entry/b"].data[...] = 0
        for ch in range(3):
            s[f"{p}/entry/w"].data[ch, ch, 1, 1] = 1
            s[f"{p}/exit/w"].data[ch, ch, 1, 1] = 1
        for i in range(self.cfg.n_blocks):
            for bn in ("bn1", "bn2"):
                s[f"{p}/block{i}/{bn}/running_mean"].data[...] = 0
                s[f"{p}/block{i}/{bn}/running_var"].data[...] = 1
            s[f"{p}/block{i}/bn2/gamma"].data[...] = 0
            s[f"{p}/block{i}/bn2/beta"].data[...] = 0


def _add_trunk(store, prefix, channels, rng, dtype):
    cin = 3
    for i, c in enumerate(channels):
        _add_conv(store, f"{prefix}/conv{i}", cin, c, rng, dtype)
        _add_bn(store, f"{prefix}/bn{i}", c, dtype)
        cin = c


def _trunk(store, prefix, x, n_stages, slope, train):
    h = x
    for i in range(n_stages):
        stride = 1 if i % 2 == 0 else 2
        h = ops.leaky_relu(_conv(store, f"{prefix}/conv{i}", h, stride), slope)
        h = _bn(store, f"{prefix}/bn{i}", h, train)
    return ops.global_avg_pool(h)


class Discriminator:
    """Strided-conv critic: conv-LReLU-BN stages, global pool, two dense layers, no squashing."""

    prefix = "discriminator"

    def __init__(self, cfg: NetworkConfig, params: ParamStore | None = None, dtype=np.float32):
        self.cfg = cfg
        if params is None:
            params = ParamStore()
            rng = _rng(cfg.init_seed, 2)
            _add_trunk(params, f"{self.prefix}/trunk", cfg.disc_channels, rng, dtype)
            _add_dense(params, f"{self.prefix}/fc1", cfg.disc_channels[-1], cfg.disc_fc, rng, dtype)
            _add_dense(params, f"{self.prefix}/fc2", cfg.disc_fc, 1, rng, dtype)
        self.params = params

    def features(self, x, train: bool = False) -> Tensor:
        return _trunk(self.params, f"{self.prefix}/trunk", as_batch(x), len(self.cfg.disc_channels),
                      self.cfg.slope, train)

    def __call__(self, x, train: bool = False) -> Tensor:
        h = ops.leaky_relu(_dense(self.params, f"{self.prefix}/fc1", self.features(x, train)), self.cfg.slope)
        out = _dense(self.params, f"{self.prefix}/fc2", h)
        return ops.reshape(out, (out.shape[0],))


@dataclass(frozen=True)
class PatchScore:
    s: float
    w: float


class Evaluator:
    """Critic-style trunk on the distorted and restored patch, fused into one
    vector that feeds a score head and a positive weight head."""

    prefix = "evaluator"

    def __init__(self, cfg: NetworkConfig, params: ParamStore | None = None, dtype=np.float32):
        self.cfg = cfg
        if params is None:
            params = ParamStore()
            rng = _rng(cfg.init_seed, 3)
            p = self.prefix
            if cfg.shared_trunk:
                _add_trunk(params, f"{p}/trunk", cfg.disc_channels, rng, dtype)
            else:
                _add_trunk(params, f"{p}/trunk_distorted", cfg.disc_channels, rng, dtype)
                _add_trunk(params, f"{p}/trunk_restored", cfg.disc_channels, rng, dtype)
            for head in ("score", "weight"):
                _add_dense(params, f"{p}/{head}/fc1", cfg.fused_width, cfg.eval_head, rng, dtype)
                _add_dense(params, f"{p}/{head}/fc2", cfg.eval_head, 1, rng, dtype)
        self.params = params

    def fused(self, distorted, restored, train: bool = False) -> Tensor:
        s, p, cfg = self.params, self.prefix, self.cfg
        d, r = as_batch(distorted), as_batch(restored)
        n = len(cfg.disc_channels)
        if cfg.shared_trunk:
            both = _trunk(s, f"{p}/trunk", ops.concat([d, r], axis=0), n, cfg.slope, train)
            k = d.shape[0]
            fd, fr = both[:k], both[k:]
        else:
            fd = _trunk(s, f"{p}/trunk_distorted", d, n, cfg.slope, train)
            fr = _trunk(s, f"{p}/trunk_restored", r, n, cfg.slope, train)
        return ops.concat_channels(fd, fr)

    def _head(self, name, f):
        s, p = self.params, self.prefix
        h = ops.leaky_relu(_dense(s, f"{p}/{name}/fc1", f), self.cfg.slope)
        out = _dense(s, f"{p}/{name}/fc2", h)
        return ops.reshape(out, (out.shape[0],))

    def __call__(self, distorted, restored, train: bool = False) -> tuple[Tensor, Tensor]:
        f = self.fused(distorted, restored, train)
        score = self._head("score", f)
        weight = ops.add(ops.softplus(self._head("weight", f)), WEIGHT_EPS)
        return score, weight

    def predict(self, distorted, restored) -> list[PatchScore]:
        with no_grad():
            s, w = self(distorted, restored, train=False)
        return [PatchScore(float(a), float(b)) for a, b in zip(s.data, w.data)]


class FeatureNet:
    """Frozen random multi-scale feature extractor.

    Stage i is conv(3x3) -> LReLU (tap point) -> conv(3x3, stride 2); the
    downsampling conv after the last tap is omitted since nothing reads it.
    """

    prefix = "featnet"

    def __init__(self, channels=(8, 16, 32, 64, 64), seed: int = 1234, slope: float = 0.2,
                 params: ParamStore | None = None, dtype=np.float32):
        self.channels = tuple(channels)
        self.slope = slope
        if params is None:
            params = ParamStore()
            rng = np.random.default_rng(seed)
            cin = 3
            for i, c in enumerate(self.channels):
                _add_conv(params, f"{self.prefix}/stage{i}/conv", cin, c, rng, dtype)
                if i < len(self.channels) - 1:
                    _add_conv(params, f"{self.prefix}/stage{i}/down", c, c, rng, dtype)
                cin = c
        params.freeze()
        self.params = params

    @classmethod
    def from_config(cls, cfg: NetworkConfig, params: ParamStore | None = None):
        return cls(cfg.feat_channels, cfg.feat_seed, cfg.slope, params)

    def __call__(self, x) -> list[Tensor]:
        h = as_batch(x)
        taps = []
        for i in range(len(self.channels)):
            h = ops.leaky_relu(_conv(self.params, f"{self.prefix}/stage{i}/conv", h), self.slope)
            taps.append(h)
            if i < len(self.channels) - 1:
                h = _conv(self.params, f"{self.prefix}/stage{i}/down", h, 2)
        return taps


# ---------------------------------------------------------------------------
# losses

def perceptual_loss(featnet: FeatureNet, pristine, restored) -> Tensor:
    """Sum over tap points of the mean squared feature difference (batch-averaged)."""
    with no_grad():
        target = featnet(as_batch(pristine))
    feats = featnet(restored)
    loss = None
    for t, f in zip(target, feats):
        term = ops.mean(ops.square(ops.sub(f, t.data)))
        loss = term if loss is None else ops.add(loss, term)
    return loss


def l2_loss(pristine, restored) -> Tensor:
    return ops.mean(ops.square(ops.sub(as_batch(restored), as_batch(pristine).data)))


def critic_loss(d_real: Tensor, d_fake: Tensor, mode: str) -> Tensor:
    """Loss minimized by the critic."""
    if mode == "wgan":
        return ops.sub(ops.mean(d_fake), ops.mean(d_real))
    if mode == "loggan":
        # -log sigmoid(real) - log(1 - sigmoid(fake))
        return ops.add(ops.mean(ops.softplus(ops.mul(d_real, -1.0))), ops.mean(ops.softplus(d_fake)))
    if mode == "none":
        return Tensor(np.zeros((), d_real.dtype))
    raise ValueError(f"unknown adversarial mode {mode!r}")


def generator_loss(d_fake: Tensor, mode: str) -> Tensor:
    """Adversarial term minimized by the restorator."""
    if mode == "wgan":
        return ops.mul(ops.mean(d_fake), -1.0)
    if mode == "loggan":
        return ops.mean(ops.softplus(ops.mul(d_fake, -1.0)))
    if mode == "none":
        return Tensor(np.zeros((), d_fake.dtype))
    raise ValueError(f"unknown adversarial mode {mode!r}")


def adversarial_losses(disc: Discriminator, real, fake, mode: str = "wgan",
                       train: bool = False) -> tuple[Tensor, Tensor]:
    """(critic_loss, restorator_adv_loss) for a real and a restored batch."""
    real, fake = as_batch(real), as_batch(fake)
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("empty batch")
    if real.shape[0] != fake.shape[0]:
        raise ValueError("real and fake batches must have equal size")
    if mode == "none":
        zero = Tensor(np.zeros((), real.dtype))
        return zero, zero
    d_real, d_fake = disc(real, train), disc(fake, train)
    return critic_loss(d_real, d_fake, mode), generator_loss(d_fake, mode)


def _unpack_preds(preds):
    if isinstance(preds, tuple) and len(preds) == 2 and not isinstance(preds[0], PatchScore):
        return preds
    return (Tensor(np.array([p.s for p in preds], np.float64)),
            Tensor(np.array([p.w for p in preds], np.float64)))


def evaluator_loss_patchwise(preds, labels) -> Tensor:
    """sum_k |s_k - s0_k| + sum_k |w_k - w0_k|.

    ``preds`` is a list of PatchScore or an (s, w) pair of tensors; ``labels``
    a list of PatchLabel or an (s0, w0) pair of arrays.
    """
    s, w = _unpack_preds(preds)
    if isinstance(labels, tuple) and len(labels) == 2 and not hasattr(labels[0], "s0"):
        s0, w0 = (np.asarray(v) for v in labels)
    else:
        s0 = np.array([lb.s0 for lb in labels])
        w0 = np.array([lb.w0 for lb in labels])
    if s.shape != s0.shape or w.shape != w0.shape:
        raise ValueError(f"length mismatch: {s.shape[0]} predictions vs {s0.shape[0]} labels")
    return ops.add(ops.sum(ops.absolute(ops.sub(s, s0.astype(s.dtype)))),
                   ops.sum(ops.absolute(ops.sub(w, w0.astype(w.dtype)))))


def weighted_quality(s, w) -> Tensor:
    """sum(s*w)/sum(w) over the last axis."""
    return ops.div(ops.sum(ops.mul(s, w), axis=-1), ops.sum(w, axis=-1))


def evaluator_loss_imagewise(preds, target) -> Tensor:
    """|sum_k s_k w_k / sum_k w_k - s|.

    Also accepts batched (B x n) score and weight tensors with B targets, in
    which case the mean over images is returned.
    """
    s, w = _unpack_preds(preds)
    if s.data.size == 0:
        raise ValueError("no patch predictions")
    target = np.asarray(target, dtype=s.dtype)
    q = weighted_quality(s, w)
    return ops.mean(ops.absolute(ops.sub(q, target)))


def aggregate(scores, weights, mode: str = "weighted") -> float:
    s = np.asarray(scores, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if s.size == 0:
        raise ValueError("no patches to aggregate")
    if mode == "mean":
        return float(s.mean())
    if mode != "weighted":
        raise ValueError(f"unknown aggregate {mode!r}")
    return float((s * w).sum() / w.sum())


@dataclass
class QualityReport:
    image_id: str
    patches: list[PatchScore]
    q: float
    grid: tuple[int, int]
    patch_size: int
    aggregate: str = "weighted"
    extra: dict = field(default_factory=dict)

    def recompute(self) -> float:
        return aggregate([p.s for p in self.patches], [p.w for p in self.patches], self.aggregate)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "aggregate": self.aggregate,
            "Q": self.q,
            "grid": {"rows": self.grid[0], "cols": self.grid[1], "patch_size": self.patch_size},
            "patches": [{"row": i // self.grid[1], "col": i % self.grid[1], "s": p.s, "w": p.w}
                        for i, p in enumerate(self.patches)],
        }


def score_image(evaluator: Evaluator, restorator: Restorator, img, mode: str | None = None,
                image_id: str = "") -> QualityReport:
    """Restore every non-overlapping patch, score the pairs and pool them."""
    mode = mode or evaluator.cfg.aggregate
    size = evaluator.cfg.patch_size
    patches, grid = extract_patches(img, size)
    batch = np.stack(patches).transpose(0, 3, 1, 2).astype(np.float32)
    restored = restorator.restore(batch)
    preds = evaluator.predict(batch, restored)
    q = aggregate([p.s for p in preds], [p.w for p in preds], mode)
    return QualityReport(image_id, preds, q, grid, size, mode)
