"""Image files, corpus manifests and the synthetic pristine-image generator."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .distortions import FAMILIES, DistortionSpec, Family, apply, as_image
from .metrics import fsim


class ImageFormatError(ValueError):
    pass


# ---------------------------------------------------------------------------
# PPM / PNG

def to_uint8(img) -> np.ndarray:
    return np.clip(np.round(as_image(img) * 255.0), 0, 255).astype(np.uint8)


def encode_ppm(img) -> bytes:
    px = to_uint8(img)
    h, w = px.shape[:2]
    return f"P6\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def _ppm_tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PPM header")
        tokens.append(blob[start:pos])
    return tokens, pos + 1  # single whitespace byte ends the header


def decode_ppm(blob: bytes) -> np.ndarray:
    if blob[:2] != b"P6":
        raise ImageFormatError("not a binary PPM (missing P6 magic)")
    tokens, pos = _ppm_tokens(blob, 4)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("malformed PPM header") from None
    if maxval != 255:
        raise ImageFormatError(f"unsupported PPM maxval {maxval} (only 255)")
    if w < 1 or h < 1:
        raise ImageFormatError("PPM dimensions must be positive")
    need = w * h * 3
    data = blob[pos:pos + need]
    if len(data) != need:
        raise ImageFormatError(f"truncated PPM payload: expected {need} bytes, got {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def png_supported() -> bool:
    try:
        import PIL  # noqa: F401
    except ImportError:
        return False
    return True


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        if not png_supported():
            raise ImageFormatError("PNG support requires Pillow")
        from PIL import Image

        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return decode_ppm(path.read_bytes())


def save_image(img, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(img))


# ---------------------------------------------------------------------------
# manifests

MANIFEST_COLUMNS = ("distorted_path", "reference_path", "family", "level", "score", "split")


@dataclass
class ManifestRow:
    distorted_path: str
    reference_path: str
    family: str = ""
    level: int | None = None
    score: float | None = None
    split: str = ""

    def __post_init__(self):
        if self.family and self.level is not None and not 1 <= self.level <= 5:
            raise ValueError(f"level must be in 1..5, got {self.level}")
        if self.score is not None and not math.isfinite(self.score):
            raise ValueError("score must be finite")


def write_manifest(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        for r in rows:
            w.writerow([r.distorted_path, r.reference_path, r.family,
                        "" if r.level is None else r.level,
                        "" if r.score is None else repr(float(r.score)), r.split])


def read_manifest(path) -> list[ManifestRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in ("distorted_path", "reference_path") if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"manifest {path} lacks mandatory columns {missing}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            try:
                level = rec.get("level") or ""
                score = rec.get("score") or ""
                rows.append(ManifestRow(
                    distorted_path=rec["distorted_path"],
                    reference_path=rec["reference_path"],
                    family=rec.get("family") or "",
                    level=int(level) if level.strip() else None,
                    score=float(score) if score.strip() else None,
                    split=rec.get("split") or "",
                ))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return rows


# ---------------------------------------------------------------------------
# synthetic pristine images

def _midpoint_field(rng: np.random.Generator, size: int, roughness: float) -> np.ndarray:
    n = 1 << max(1, math.ceil(math.log2(size - 1)))
    grid = np.zeros((n + 1, n + 1))
    grid[::n, ::n] = rng.uniform(-1, 1, (2, 2))
    step, amp = n, 1.0
    while step > 1:
        half = step // 2
        # diamond
        centers = (grid[0:-1:step, 0:-1:step] + grid[step::step, 0:-1:step]
                   + grid[0:-1:step, step::step] + grid[step::step, step::step]) / 4
        grid[half::step, half::step] = centers + rng.uniform(-amp, amp, centers.shape)
        # square
        for y0, x0 in ((0, half), (half, 0)):
            ys = np.arange(y0, n + 1, step)
            xs = np.arange(x0, n + 1, step)
            yy, xx = np.meshgrid(ys, xs, indexing="ij")
            acc = np.zeros(yy.shape)
            cnt = np.zeros(yy.shape)
            for dy, dx in ((-half, 0), (half, 0), (0, -half), (0, half)):
                ny, nx = yy + dy, xx + dx
                ok = (ny >= 0) & (ny <= n) & (nx >= 0) & (nx <= n)
                acc[ok] += grid[ny[ok], nx[ok]]
                cnt += ok
            grid[yy, xx] = acc / cnt + rng.uniform(-amp, amp, yy.shape)
        step = half
        amp *= roughness
    f = grid[:size, :size]
    return (f - f.min()) / (np.ptp(f) + 1e-12)


def _sinusoid(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / size
    theta = rng.uniform(0, math.pi)
    freq = rng.uniform(2, 12)
    phase = rng.uniform(0, 2 * math.pi)
    return 0.5 + 0.5 * np.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)) + phase)


def _shapes(rng, size):
    img = np.full((size, size), rng.uniform(0, 1))
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(rng.integers(3, 9)):
        v = rng.uniform(0, 1)
        if rng.random() < 0.5:
            cy, cx, r = rng.uniform(0, size, 2).tolist() + [rng.uniform(size / 10, size / 3)]
            img[(yy - cy) ** 2 + (xx - cx) ** 2 < r ** 2] = v
        else:
            y0, x0 = rng.integers(0, size - 4, 2)
            h, w = rng.integers(4, size // 2 + 4, 2)
            img[y0:y0 + h, x0:x0 + w] = v
    return img


def _gradient(rng, size):
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    a, b = rng.uniform(-1, 1, 2)
    g = a * xx + b * yy
    return (g - g.min()) / (np.ptp(g) + 1e-12)


def _colorize(rng, plane):
    lo, hi = rng.uniform(0, 0.5, 3), rng.uniform(0.5, 1.0, 3)
    return lo + plane[..., None] * (hi - lo)


def synth_pristine(rng: np.random.Generator, size: int) -> np.ndarray:
    """One procedurally generated RGB image with texture, edges and smooth regions."""
    layers = {
        "field": lambda: _midpoint_field(rng, size, rng.uniform(0.45, 0.7)),
        "sinusoid": lambda: _sinusoid(rng, size),
        "shapes": lambda: _shapes(rng, size),
        "gradient": lambda: _gradient(rng, size),
    }
    kinds = list(layers)
    for _ in range(16):
        picked = rng.choice(kinds, size=rng.integers(1, 4), replace=False)
        weights = rng.dirichlet(np.ones(len(picked)))
        img = np.zeros((size, size, 3))
        for kind, wgt in zip(picked, weights):
            img += wgt * _colorize(rng, layers[kind]())
        img = np.clip(img, 0, 1)
        if img.std() > 0.05:
            return img
    # practically unreachable; fall back to a guaranteed-textured field
    return _colorize(rng, _midpoint_field(rng, size, 0.6))


@dataclass
class Corpus:
    pristine: list[np.ndarray]
    distorted: dict[tuple[int, Family, int], np.ndarray]
    rows: list[ManifestRow] = field(default_factory=list)

    def head(self, k: int) -> "Corpus":
        """The first ``k`` references and their variants.  Image ``i`` depends only
        on (seed, i), so this equals a corpus generated with ``n = k``."""
        keep = {f"pristine/img_{i:04d}.ppm" for i in range(k)}
        return Corpus(self.pristine[:k], {key: v for key, v in self.distorted.items() if key[0] < k},
                      [r for r in self.rows if r.reference_path in keep])


def image_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, index])


def generate_corpus(n: int, size: int, seed: int, with_scores: bool = True) -> Corpus:
    """``n`` pristine images of ``size`` x ``size`` and all 4 x 5 distorted variants.

    Each manifest row is scored with the full-image FSIM against its source.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if size < 64:
        raise ValueError("size must be >= 64")
    pristine, distorted, rows = [], {}, []
    for i in range(n):
        ss = image_seed(seed, i)
        img_rng = np.random.default_rng(ss)
        ref = np.round(synth_pristine(img_rng, size) * 255) / 255
        pristine.append(ref)
        noise_seed = int(ss.generate_state(1, dtype=np.uint64)[0])
        for fam in FAMILIES:
            for level in range(1, 6):
                img = np.round(apply(DistortionSpec(fam, level, noise_seed + level), ref) * 255) / 255
                distorted[(i, fam, level)] = img
                score = fsim(img, ref)[0] if with_scores else None
                rows.append(ManifestRow(
                    distorted_path=f"distorted/{fam.value}/{level}/img_{i:04d}.ppm",
                    reference_path=f"pristine/img_{i:04d}.ppm",
                    family=fam.value, level=level, score=score))
    return Corpus(pristine, distorted, rows)


def write_corpus(corpus: Corpus, root) -> Path:
    root = Path(root)
    for i, img in enumerate(corpus.pristine):
        save_image(img, root / "pristine" / f"img_{i:04d}.ppm")
    for (i, fam, level), img in corpus.distorted.items():
        save_image(img, root / "distorted" / fam.value / str(level) / f"img_{i:04d}.ppm")
    write_manifest(corpus.rows, root / "manifest.csv")
    return root / "manifest.csv"


def resolve(manifest_path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(os.path.dirname(os.fspath(manifest_path))) / p


class ManifestDataset:
    """Rows of a manifest plus cached image loading with an access log."""

    def __init__(self, rows, base_dir=None, images: dict | None = None):
        self.rows = list(rows)
        self.base_dir = Path(base_dir) if base_dir is not None else None
        self._cache: dict[str, np.ndarray] = dict(images or {})
        self.access_log: list[int] = []

    @classmethod
    def from_manifest(cls, path) -> "ManifestDataset":
        return cls(read_manifest(path), Path(path).parent)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "ManifestDataset":
        images = {f"pristine/img_{i:04d}.ppm": img for i, img in enumerate(corpus.pristine)}
        for (i, fam, level), img in corpus.distorted.items():
            images[f"distorted/{fam.value}/{level}/img_{i:04d}.ppm"] = img
        return cls(corpus.rows, None, images)

    def _get(self, rel: str) -> np.ndarray:
        if rel not in self._cache:
            p = Path(rel)
            if not p.is_absolute() and self.base_dir is not None:
                p = self.base_dir / p
            self._cache[rel] = load_image(p)
        return self._cache[rel]

    def distorted(self, i: int) -> np.ndarray:
        self.access_log.append(i)
        return self._get(self.rows[i].distorted_path)

    def reference(self, i: int) -> np.ndarray:
        self.access_log.append(i)
        return self._get(self.rows[i].reference_path)

    def __len__(self):
        return len(self.rows)
