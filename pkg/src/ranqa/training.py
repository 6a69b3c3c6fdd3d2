"""Four-phase training schedule, dataset splits, the restoration-gain experiment
and benchmark evaluation.

Phases:
  1. restorator pretraining against pristine patches (Adam);
  2. adversarial training, ``critic_steps`` critic updates per restorator
     update (RMSProp, critic weights clipped after every update);
  3. evaluator pretraining on FSIM patch labels with both other nets frozen;
  4. evaluator finetuning on image-level scores.
"""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import stats
from .dataset import ManifestDataset
from .distortions import FAMILIES, DistortionSpec, apply
from .metrics import patch_pseudo_labels, psnr, ssim
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
    l2_loss,
    perceptual_loss,
    score_image,
)
from .patches import assemble_patches, extract_patches, patch_array
from .tensor import StateError, Tensor, backward, clip_weights, no_grad, ops, optimizer_step, save_checkpoint

log = logging.getLogger(__name__)

# Iteration counts of the full-scale schedule (large-corpus pretraining).
FULL_SCALE = {
    "phase1_iters": 300_000,
    "phase2_iters": 300_000,
    "phase2_low_iters": 300_000,
    "phase3_iters": 300_000,
    "phase4_iters": 20_000,  # 15_000 for the smaller LIVE-style corpus
}

# NetworkConfig switches for the ablated variants.
ABLATIONS = {
    "full": {},
    "no_perceptual": {"rec_loss": "l2"},
    "no_wasserstein": {"adv_mode": "loggan"},
    "no_discriminator": {"adv_mode": "none"},
    "no_weighting": {"aggregate": "mean"},
}

# Desk-scale recipe: networks and schedules sized for one CPU core.  Phase 1
# runs at ten times the full-scale learning rate to make up for the short
# schedule.  The evaluator corpus extends the restorator corpus with more
# references, since evaluator ranking quality is limited by content variety.
DESK_CORPUS = {"n": 40, "size": 128, "seed": 0}
DESK_EVAL_CORPUS = {"n": 100, "size": 128, "seed": 0}


def desk_network_config(**overrides) -> NetworkConfig:
    return NetworkConfig(**{"patch_size": 32, "n_blocks": 2, "channels": 16,
                            "disc_channels": (16, 16, 32, 32, 64, 64, 128, 128), "disc_fc": 64,
                            "eval_head": 64, **overrides})


def desk_train_config(**overrides) -> TrainConfig:
    return TrainConfig(**{"phase1_iters": 2000, "phase1_lr": 1e-3, "phase2_iters": 100,
                          "phase2_low_iters": 100, "phase3_iters": 3000, "phase3_lr": 1e-3,
                          "phase4_iters": 300, "phase4_lr": 3e-4, **overrides})


# (SROCC, PLCC) reported for full-scale training on the real MOS datasets.
# They need FULL_SCALE iteration counts and real data; nothing here reproduces them.
REPORTED_RESULTS = {
    ("TID2013", "full"): (0.948, 0.937),
    ("LIVE", "full"): (0.972, 0.968),
    ("TID2013", "no_perceptual"): (0.893, 0.879),
    ("TID2013", "no_wasserstein"): (0.936, 0.906),
    ("TID2013", "no_discriminator"): (0.854, 0.856),
    ("TID2013", "no_weighting"): (0.857, 0.884),
}


@dataclass
class TrainConfig:
    phase1_iters: int = 3000
    phase2_iters: int = 3000
    phase2_low_iters: int = 3000
    phase3_iters: int = 3000
    phase4_iters: int = 1000
    batch_size: int = 16
    image_batch: int = 4
    phase1_lr: float = 1e-4
    phase2_lr: float = 1e-4
    phase2_low_lr: float = 1e-5
    phase3_lr: float = 1e-4
    phase4_lr: float = 1e-4
    critic_steps: int = 5
    clip: float = 0.05
    seed: int = 0
    val_every: int = 100
    split_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("phase1_iters", "phase2_iters", "phase2_low_iters", "phase3_iters", "phase4_iters",
                     "batch_size", "image_batch", "critic_steps", "val_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("phase1_lr", "phase2_lr", "phase2_low_lr", "phase3_lr", "phase4_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.clip <= 0:
            raise ValueError("clip must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def _write_curve(path, curve, header=("iteration", "value")) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(curve)


# ---------------------------------------------------------------------------
# splits and patch corpora

@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.6
    val: float = 0.2
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or not math.isclose(self.train + self.val + self.test, 1.0):
            raise ValueError("split fractions must be non-negative and sum to 1")


def split_by_reference(rows, spec: SplitSpec) -> dict[str, list[int]]:
    """Assign whole reference images to train/val/test so no content crosses splits."""
    refs = sorted({r.reference_path for r in rows})
    order = np.random.default_rng(spec.seed).permutation(len(refs))
    n_train = int(round(spec.train * len(refs)))
    n_val = int(round(spec.val * len(refs)))
    tag = {}
    for rank, k in enumerate(order):
        tag[refs[k]] = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
    out = {"train": [], "val": [], "test": []}
    for i, r in enumerate(rows):
        out[tag[r.reference_path]].append(i)
    return out


def patch_pairs(dataset: ManifestDataset, indices, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Aligned (distorted, pristine) patch batches from the listed rows."""
    dist, ref = [], []
    for i in indices:
        d, _ = patch_array(dataset.distorted(i), size)
        p, _ = patch_array(dataset.reference(i), size)
        dist.append(d)
        ref.append(p)
    if not dist:
        raise ValueError("empty corpus")
    return np.concatenate(dist), np.concatenate(ref)


def _restore_all(restorator: Restorator, patches: np.ndarray, chunk: int = 64) -> np.ndarray:
    return np.concatenate([restorator.restore(patches[i:i + chunk]) for i in range(0, len(patches), chunk)])


def reconstruction_loss(cfg: NetworkConfig, featnet: FeatureNet, pristine, restored):
    if cfg.rec_loss == "perceptual":
        return perceptual_loss(featnet, pristine, restored)
    return l2_loss(pristine, restored)


# ---------------------------------------------------------------------------
# phases

@dataclass
class PhaseResult:
    curve: list[tuple[int, float]] = field(default_factory=list)
    counters: dict = field(default_factory=dict)


def phase1_pretrain_restorator(cfg: NetworkConfig, tcfg: TrainConfig, distorted: np.ndarray,
                               pristine: np.ndarray, restorator: Restorator | None = None,
                               featnet: FeatureNet | None = None) -> tuple[Restorator, PhaseResult]:
    if len(distorted) == 0:
        raise ValueError("empty corpus")
    restorator = restorator or Restorator(cfg)
    featnet = featnet or FeatureNet.from_config(cfg)
    rng = np.random.default_rng([tcfg.seed, 1])
    result = PhaseResult()
    for it in range(1, tcfg.phase1_iters + 1):
        idx = rng.integers(0, len(distorted), tcfg.batch_size)
        out = restorator(distorted[idx], train=True)
        loss = reconstruction_loss(cfg, featnet, pristine[idx], out)
        optimizer_step("adam", restorator.params, backward(loss, restorator.params), tcfg.phase1_lr)
        result.curve.append((it, float(loss.data)))
    return restorator, result


def phase2_adversarial(cfg: NetworkConfig, tcfg: TrainConfig, distorted: np.ndarray, pristine: np.ndarray,
                       restorator: Restorator | None, discriminator: Discriminator | None = None,
                       featnet: FeatureNet | None = None,
                       on_critic_update: Callable[[Discriminator], None] | None = None,
                       ) -> tuple[Restorator, Discriminator, PhaseResult]:
    """Alternate critic and restorator updates; lr drops to ``phase2_low_lr`` after ``phase2_iters``."""
    if restorator is None:
        raise StateError("phase 2 needs the phase-1 restorator")
    discriminator = discriminator or Discriminator(cfg)
    featnet = featnet or FeatureNet.from_config(cfg)
    rng = np.random.default_rng([tcfg.seed, 2])
    result = PhaseResult(counters={"critic_updates": 0, "restorator_updates": 0, "lr": [], "critic_per_step": []})
    total = tcfg.phase2_iters + tcfg.phase2_low_iters
    use_critic = cfg.adv_mode != "none"
    n = len(distorted)
    for it in range(1, total + 1):
        lr = tcfg.phase2_lr if it <= tcfg.phase2_iters else tcfg.phase2_low_lr
        result.counters["lr"].append(lr)
        critic_here = 0
        if use_critic:
            for _ in range(tcfg.critic_steps):
                idx = rng.integers(0, n, tcfg.batch_size)
                with no_grad():
                    fake = restorator(distorted[idx], train=True).data
                c_loss = critic_loss(discriminator(pristine[idx], train=True),
                                     discriminator(fake, train=True), cfg.adv_mode)
                optimizer_step("rmsprop", discriminator.params, backward(c_loss, discriminator.params), lr)
                if cfg.adv_mode == "wgan":
                    clip_weights(discriminator.params, tcfg.clip)
                critic_here += 1
                result.counters["critic_updates"] += 1
                if on_critic_update is not None:
                    on_critic_update(discriminator)
        idx = rng.integers(0, n, tcfg.batch_size)
        out = restorator(distorted[idx], train=True)
        loss = ops.mul(reconstruction_loss(cfg, featnet, pristine[idx], out), cfg.lambda_per)
        if use_critic:
            discriminator.params.freeze()
            adv = generator_loss(discriminator(out, train=True), cfg.adv_mode)
            discriminator.params.unfreeze()
            loss = ops.add(loss, ops.mul(adv, cfg.lambda_adv))
        optimizer_step("rmsprop", restorator.params, backward(loss, restorator.params), lr)
        result.counters["restorator_updates"] += 1
        result.counters["critic_per_step"].append(critic_here)
        result.curve.append((it, float(loss.data)))
    return restorator, discriminator, result


def patch_labels(distorted: np.ndarray, pristine: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """FSIM pseudo-labels (s0, w0) for N x 3 x P x P patch batches."""
    s0, w0 = np.empty(len(distorted)), np.empty(len(distorted))
    for k, (d, p) in enumerate(zip(distorted, pristine)):
        lab = patch_pseudo_labels(d.transpose(1, 2, 0), p.transpose(1, 2, 0))
        s0[k], w0[k] = lab.s0, lab.w0
    return s0, w0


def phase3_pretrain_evaluator(cfg: NetworkConfig, tcfg: TrainConfig, distorted: np.ndarray,
                              labels: tuple[np.ndarray, np.ndarray], restorator: Restorator,
                              evaluator: Evaluator | None = None,
                              restored: np.ndarray | None = None) -> tuple[Evaluator, PhaseResult]:
    """Fit patch scores and weights to FSIM labels; the restorator only runs in inference."""
    if labels is None or len(labels[0]) != len(distorted):
        raise ValueError("phase 3 needs one label per distorted patch")
    evaluator = evaluator or Evaluator(cfg)
    if restored is None:
        restored = _restore_all(restorator, distorted)
    s0, w0 = labels
    rng = np.random.default_rng([tcfg.seed, 3])
    result = PhaseResult()
    bs = min(tcfg.batch_size, len(distorted))
    for it in range(1, tcfg.phase3_iters + 1):
        idx = rng.choice(len(distorted), bs, replace=False) if bs < len(distorted) else np.arange(bs)
        s, w = evaluator(distorted[idx], restored[idx], train=True)
        loss = evaluator_loss_patchwise((s, w), (s0[idx], w0[idx]))
        optimizer_step("adam", evaluator.params, backward(loss, evaluator.params), tcfg.phase3_lr)
        result.curve.append((it, float(loss.data)))
    return evaluator, result


@dataclass
class ImageSet:
    """Per-image patch batches (distorted + restored) for a list of manifest rows."""
    rows: list[int]
    distorted: list[np.ndarray]
    restored: list[np.ndarray]
    targets: np.ndarray


def build_image_set(dataset: ManifestDataset, indices, restorator: Restorator, size: int,
                    need_scores: bool = True) -> ImageSet:
    dist, rest, targets = [], [], []
    for i in indices:
        row = dataset.rows[i]
        if need_scores and row.score is None:
            raise ValueError(f"manifest row {i} has no score")
        d, _ = patch_array(dataset.distorted(i), size)
        dist.append(d)
        rest.append(_restore_all(restorator, d))
        targets.append(np.nan if row.score is None else row.score)
    return ImageSet(list(indices), dist, rest, np.asarray(targets))


def predict_image_set(evaluator: Evaluator, images: ImageSet, mode: str | None = None) -> np.ndarray:
    from .nets import aggregate

    mode = mode or evaluator.cfg.aggregate
    out = []
    for d, r in zip(images.distorted, images.restored):
        preds = evaluator.predict(d, r)
        out.append(aggregate([p.s for p in preds], [p.w for p in preds], mode))
    return np.asarray(out)


def phase4_finetune_evaluator(cfg: NetworkConfig, tcfg: TrainConfig, dataset: ManifestDataset,
                              splits: dict[str, list[int]], restorator: Restorator, evaluator: Evaluator,
                              ) -> tuple[Evaluator, PhaseResult]:
    """Minimize the image-level error of the pooled score on the train split and
    keep the parameters with the best validation SROCC.  Test rows are never read.

    Batch-norm layers run on their phase-3 running statistics when present: a batch holds
    the patches of only a few images, so its moments are far from the
    population ones and would drift the running estimates.
    """
    if any(dataset.rows[i].score is None for i in splits["train"] + splits["val"]):
        raise ValueError("phase 4 needs image-level scores on train and validation rows")
    train = build_image_set(dataset, splits["train"], restorator, cfg.patch_size)
    val = build_image_set(dataset, splits["val"], restorator, cfg.patch_size) if splits["val"] else None
    rng = np.random.default_rng([tcfg.seed, 4])
    result = PhaseResult(counters={"val_curve": []})
    best = (-math.inf, None)
    nb = min(tcfg.image_batch, len(train.rows))
    weighted = cfg.aggregate == "weighted"
    # an evaluator that skipped phase 3 has no statistics to freeze
    frozen_bn = all(evaluator.params[n].data.reshape(-1)[0] >= 1
                    for n in evaluator.params.names() if n.endswith("/count"))
    for it in range(1, tcfg.phase4_iters + 1):
        pick = rng.choice(len(train.rows), nb, replace=False)
        d = np.concatenate([train.distorted[k] for k in pick])
        r = np.concatenate([train.restored[k] for k in pick])
        s, w = evaluator(d, r, train=not frozen_bn)
        per = train.distorted[pick[0]].shape[0]
        s2 = ops.reshape(s, (nb, per))
        if s.shape[0] != nb * per:
            raise ValueError("phase 4 batches need images with equal patch counts")
        w2 = ops.reshape(w, (nb, per)) if weighted else Tensor(np.ones((nb, per), dtype=s.dtype))
        loss = evaluator_loss_imagewise((s2, w2), train.targets[pick])
        optimizer_step("adam", evaluator.params, backward(loss, evaluator.params), tcfg.phase4_lr)
        result.curve.append((it, float(loss.data)))
        if val is not None and (it % tcfg.val_every == 0 or it == tcfg.phase4_iters):
            pred = predict_image_set(evaluator, val)
            try:
                rho = stats.srocc(pred, val.targets)
            except stats.UndefinedStatisticError:
                rho = -math.inf
            result.counters["val_curve"].append((it, rho))
            if rho > best[0]:
                best = (rho, copy.deepcopy(evaluator.params))
    if best[1] is not None:
        evaluator.params.copy_from(best[1])
    return evaluator, result


# ---------------------------------------------------------------------------
# evaluation

def eval_benchmark(evaluator: Evaluator | None, restorator: Restorator | None, dataset: ManifestDataset,
                   indices, mode: str | None = None,
                   predict: Callable[[int], float] | None = None) -> dict:
    """SROCC and fitted PLCC of image scores against manifest targets.

    ``predict`` replaces the networks with an arbitrary per-row predictor.
    """
    indices = list(indices)
    if not indices:
        raise ValueError("empty evaluation split")
    targets = np.array([dataset.rows[i].score for i in indices], dtype=np.float64)
    if predict is not None:
        preds = np.array([predict(i) for i in indices], dtype=np.float64)
    else:
        preds = np.array([score_image(evaluator, restorator, dataset.distorted(i), mode).q for i in indices])
    out = {"n": len(indices), "srocc": stats.srocc(preds, targets)}
    out["plcc"] = stats.plcc(preds, targets, fitted=len(indices) >= 5)
    return out


def repeated_splits_ttest(results_a: list[dict], results_b: list[dict]) -> dict:
    """Two-sided Welch tests on per-split SROCC and PLCC of two models."""
    if len(results_a) < 2 or len(results_b) < 2:
        raise ValueError("need at least two splits per model")
    report = {"k_a": len(results_a), "k_b": len(results_b)}
    for metric in ("srocc", "plcc"):
        a = [r[metric] for r in results_a]
        b = [r[metric] for r in results_b]
        if a == b:
            res = stats.TTestResult(0.0, 1.0, float(len(a) + len(b) - 2))
        else:
            res = stats.ttest_two_sided(a, b)
        report[metric] = {"t": res.t, "p": res.p, "df": res.df,
                          "mean_a": float(np.mean(a)), "mean_b": float(np.mean(b))}
    return report


# ---------------------------------------------------------------------------
# restoration gain

GOR_LEVELS = (1, 3, 5)


GOR_METRICS = ("psnr", "ssim")


def _summary(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        return math.inf, math.nan  # an exact pass-through yields infinite PSNR
    return float(arr.mean()), float(arr.std())


@dataclass
class GorReport:
    """Per-image similarity between distorted and restored images, per (family, level).

    Lower similarity means a larger restoration gain.
    """
    cells: dict[tuple[str, int], dict[str, list[float]]]
    verdicts: dict[tuple[str, str], bool]

    @property
    def rows(self) -> list[dict]:
        out = []
        for (fam, level), vals in self.cells.items():
            row = {"family": fam, "level": level, "n": len(vals["psnr"])}
            for metric in GOR_METRICS:
                row[f"{metric}_mean"], row[f"{metric}_std"] = _summary(vals[metric])
            out.append(row)
        return out

    def mean(self, family: str, level: int, metric: str) -> float:
        return _summary(self.cells[(family, level)][metric])[0]

    def families_passing(self, metric: str) -> int:
        return sum(v for (fam, m), v in self.verdicts.items() if m == metric)

    def write_csv(self, path) -> None:
        cols = ["family", "level"] + [f"{m}_{s}" for m in GOR_METRICS for s in ("mean", "std")] + ["n"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])


def restore_image(restorator: Restorator, img: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Restore the patch-covered region; returns (covered distorted region, restored region).

    The distorted side is the single-precision input the network actually saw,
    so an exact pass-through compares equal.
    """
    batch, grid = patch_array(img, size)
    seen = batch.transpose(0, 2, 3, 1).astype(np.float64)
    restored = restorator.restore(batch).transpose(0, 2, 3, 1).astype(np.float64)
    return assemble_patches(list(seen), grid), assemble_patches(list(restored), grid)


def gor_experiment(restorator: Restorator, pristine: list[np.ndarray], size: int,
                   levels=GOR_LEVELS, seed: int = 0) -> GorReport:
    """PSNR and SSIM between each distorted image and its restoration, per family and level.

    A family passes for a metric when the mean similarity strictly falls as the
    level rises, i.e. the restoration changes severely distorted images more.
    """
    cells, verdicts = {}, {}
    for fam in FAMILIES:
        for level in levels:
            vals = {m: [] for m in GOR_METRICS}
            for i, ref in enumerate(pristine):
                noise_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
                d, r = restore_image(restorator, apply(DistortionSpec(fam, level, noise_seed), ref), size)
                vals["psnr"].append(psnr(d, r))
                vals["ssim"].append(ssim(d, r))
            cells[(fam.value, level)] = vals
        for metric in GOR_METRICS:
            m = [_summary(cells[(fam.value, level)][metric])[0] for level in levels]
            verdicts[(fam.value, metric)] = all(a > b for a, b in zip(m, m[1:]))
    return GorReport(cells, verdicts)


# ---------------------------------------------------------------------------
# full pipeline

@dataclass
class Models:
    restorator: Restorator
    discriminator: Discriminator | None
    evaluator: Evaluator | None
    featnet: FeatureNet


def save_models(models: Models, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(models.restorator.params, out / "restorator.ckpt")
    save_checkpoint(models.featnet.params, out / "featnet.ckpt")
    if models.discriminator is not None:
        save_checkpoint(models.discriminator.params, out / "discriminator.ckpt")
    if models.evaluator is not None:
        save_checkpoint(models.evaluator.params, out / "evaluator.ckpt")


def run_pipeline(cfg: NetworkConfig, tcfg: TrainConfig, dataset: ManifestDataset, out_dir=None,
                 phases=(1, 2, 3, 4), models: Models | None = None) -> tuple[Models, dict]:
    """Run the requested phases in order; phases 1-3 read only training-split rows."""
    splits = split_by_reference(dataset.rows, SplitSpec(seed=tcfg.split_seed))
    featnet = models.featnet if models else FeatureNet.from_config(cfg)
    models = models or Models(Restorator(cfg), None, None, featnet)
    results: dict = {"splits": splits}
    need_pairs = any(p in phases for p in (1, 2, 3))
    if need_pairs:
        dist, ref = patch_pairs(dataset, splits["train"], cfg.patch_size)
    if 1 in phases:
        log.info("phase 1: %d iterations on %d patch pairs", tcfg.phase1_iters, len(dist))
        models.restorator, results["phase1"] = phase1_pretrain_restorator(
            cfg, tcfg, dist, ref, models.restorator, featnet)
    if 2 in phases:
        log.info("phase 2: %d + %d iterations", tcfg.phase2_iters, tcfg.phase2_low_iters)
        models.restorator, models.discriminator, results["phase2"] = phase2_adversarial(
            cfg, tcfg, dist, ref, models.restorator, models.discriminator, featnet)
    if 3 in phases:
        log.info("phase 3: %d iterations", tcfg.phase3_iters)
        labels = patch_labels(dist, ref)
        models.evaluator, results["phase3"] = phase3_pretrain_evaluator(
            cfg, tcfg, dist, labels, models.restorator, models.evaluator)
    if 4 in phases:
        log.info("phase 4: %d iterations", tcfg.phase4_iters)
        models.evaluator = models.evaluator or Evaluator(cfg)
        models.evaluator, results["phase4"] = phase4_finetune_evaluator(
            cfg, tcfg, dataset, splits, models.restorator, models.evaluator)
    if out_dir is not None:
        out = Path(out_dir)
        save_models(models, out)
        for name in ("phase1", "phase2", "phase3", "phase4"):
            if name in results:
                _write_curve(out / f"{name}_loss.csv", results[name].curve)
        if "phase4" in results:
            _write_curve(out / "phase4_val_srocc.csv", results["phase4"].counters["val_curve"])
    return models, results
