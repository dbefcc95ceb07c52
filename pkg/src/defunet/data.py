"""Dataset ingestion and preparation.

Covers PNG decoding (8/16-bit grayscale, RGB reduced to luma), paired
image/mask resizing (bilinear for images, nearest for masks so binarity
survives), OR-merging of per-lung mask files, morphological mask
dilation, seeded train/val/test splitting including the
cross-manufacturer protocol, affine augmentation, and a synthetic
two-ellipse dataset that stands in for the X-ray corpus at desk scale.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

log = logging.getLogger(__name__)

__all__ = [
    "Sample",
    "AugmentConfig",
    "DatasetManifest",
    "ManifestEntry",
    "DataError",
    "load_image",
    "load_mask",
    "load_sample",
    "dilate_mask",
    "split_dataset",
    "augment",
    "synth_dataset",
    "discover_dataset",
    "batches",
]

SPLITS = ("train", "val", "test")


class DataError(RuntimeError):
    """Missing, unreadable, or structurally impossible input data."""


@dataclass
class Sample:
    """One image/mask pair as (1, 1, H, W) float32 tensors.

    ``image`` lives in [0, 1]; ``mask`` is strictly {0, 1}.
    """

    image: np.ndarray
    mask: np.ndarray
    source: str = "synthetic"
    id: str = ""

    def __post_init__(self):
        if self.image.shape != self.mask.shape:
            raise DataError(
                f"sample {self.id!r}: image {self.image.shape} vs mask {self.mask.shape}"
            )


@dataclass(frozen=True)
class AugmentConfig:
    """Affine jitter ranges; angles in degrees, shift/zoom as fractions."""

    rotation: float = 10.0
    shift: float = 0.05
    shear: float = 5.0
    zoom: float = 0.10
    hflip: float = 0.5

    def __post_init__(self):
        for name in ("rotation", "shift", "shear", "zoom"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} range must be non-negative")
        if not 0.0 <= self.hflip <= 1.0:
            raise ValueError(f"hflip must be a probability, got {self.hflip}")

    def is_identity(self) -> bool:
        return self.rotation == self.shift == self.shear == self.zoom == 0.0


# --------------------------------------------------------------------------
# loading


def _decode_png(path) -> np.ndarray:
    """PNG file -> 2-D float array in [0, 1]."""
    try:
        with Image.open(path) as im:
            if im.mode in ("I", "I;16", "I;16B", "I;16L"):
                arr = np.asarray(im, dtype=np.float64)
                peak = 65535.0 if "16" in im.mode or arr.max() > 255 else 255.0
                return np.clip(arr / peak, 0.0, 1.0)
            if im.mode != "L":
                im = im.convert("L")
            return np.asarray(im, dtype=np.float64) / 255.0
    except FileNotFoundError:
        raise DataError(f"no such image file: {path}")
    except Exception as e:
        raise DataError(f"cannot decode {path}: {e}") from e


def _resize(arr: np.ndarray, size: int, kind: str) -> np.ndarray:
    if arr.shape == (size, size):
        return arr
    im = Image.fromarray(arr.astype(np.float32), mode="F")
    resample = Image.BILINEAR if kind == "bilinear" else Image.NEAREST
    return np.asarray(im.resize((size, size), resample=resample), dtype=np.float64)


def load_image(path, size: int) -> np.ndarray:
    """Decode and bilinearly resize one grayscale image to (size, size)."""
    return np.clip(_resize(_decode_png(path), size, "bilinear"), 0.0, 1.0)


def load_mask(paths, size: int) -> np.ndarray:
    """Decode mask file(s), OR-merge them at native resolution, resize nearest."""
    paths = [paths] if isinstance(paths, (str, Path)) else list(paths)
    if not paths:
        raise DataError("load_mask needs at least one path")
    merged = None
    for p in paths:
        m = _decode_png(p) > 0.5
        if merged is None:
            merged = m
        else:
            if m.shape != merged.shape:
                raise DataError(f"mask parts disagree on size: {m.shape} vs {merged.shape}")
            merged = np.logical_or(merged, m)
    resized = _resize(merged.astype(np.float64), size, "nearest")
    return (resized > 0.5).astype(np.float64)


def _to_nchw(arr2d: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr2d, dtype=np.float32)[None, None]


def load_sample(image_path, mask_paths, size: int, source: str = "unknown",
                sample_id: str = "") -> Sample:
    image2d = _decode_png(image_path)
    mask2d_paths = [mask_paths] if isinstance(mask_paths, (str, Path)) else list(mask_paths)
    with Image.open(mask2d_paths[0]) as probe:
        mask_size = probe.size
    if mask_size != (image2d.shape[1], image2d.shape[0]):
        log.warning("sample %s: mask size %s != image size %s; resize will normalize",
                    sample_id or image_path, mask_size, image2d.shape[::-1])
    image = np.clip(_resize(image2d, size, "bilinear"), 0.0, 1.0)
    mask = load_mask(mask_paths, size)
    return Sample(
        image=_to_nchw(image),
        mask=_to_nchw(mask),
        source=source,
        id=sample_id or Path(image_path).stem,
    )


# --------------------------------------------------------------------------
# mask dilation


def dilate_mask(mask: np.ndarray, radius: int = 1, iterations: int = 1) -> np.ndarray:
    """Grow a binary mask with a square (2r+1)^2 structuring element."""
    if radius < 0 or iterations < 0:
        raise ValueError("radius and iterations must be >= 0")
    mask = np.asarray(mask)
    if radius == 0 or iterations == 0:
        return mask.copy()
    element = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)

    def _one(plane):
        return ndimage.binary_dilation(plane > 0.5, structure=element, iterations=iterations)

    if mask.ndim == 2:
        return _one(mask).astype(mask.dtype)
    if mask.ndim == 4:
        out = np.empty_like(mask)
        for n in range(mask.shape[0]):
            for c in range(mask.shape[1]):
                out[n, c] = _one(mask[n, c]).astype(mask.dtype)
        return out
    raise ValueError(f"dilate_mask expects a 2-D or 4-D mask, got {mask.ndim}-D")


# --------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    source: str
    split: str


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    seed: int = 0

    def ids(self, split: str) -> list:
        return [e.id for e in self.entries if e.split == split]

    def source_counts(self) -> dict:
        counts: dict = {}
        for e in self.entries:
            counts[e.source] = counts.get(e.source, 0) + 1
        return counts

    def write(self, path) -> None:
        lines = [f"# seed={self.seed}"]
        counts = self.source_counts()
        lines.append("# sources=" + ",".join(f"{k}:{v}" for k, v in sorted(counts.items())))
        lines += [f"{e.id}\t{e.source}\t{e.split}" for e in self.entries]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @staticmethod
    def read(path) -> "DatasetManifest":
        manifest = DatasetManifest()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# seed="):
                    manifest.seed = int(line.split("=", 1)[1])
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"malformed manifest line: {line!r}")
            manifest.entries.append(ManifestEntry(*parts))
        return manifest


def split_dataset(samples, counts=(528, 76, 100), seed: int = 0,
                  cross: str = "", val_fraction: float = 0.1) -> DatasetManifest:
    """Assign every sample to train/val/test, deterministically for a seed.

    Default mode shuffles once and cuts contiguously by ``counts`` (any
    remainder is marked "unused").  Cross-manufacturer mode ("m2s" or
    "s2m") sends one source entirely to the test split and carves a
    validation fraction out of the other source's shuffled pool.
    """
    samples = list(samples)
    rng = np.random.default_rng(seed)
    entries = []
    if cross:
        if cross not in ("m2s", "s2m"):
            raise DataError(f"cross mode must be 'm2s' or 's2m', got {cross!r}")
        train_source = "montgomery" if cross == "m2s" else "shenzhen"
        test_source = "shenzhen" if cross == "m2s" else "montgomery"
        pool = [s for s in samples if s.source == train_source]
        test = [s for s in samples if s.source == test_source]
        if not pool or not test:
            raise DataError(
                f"cross mode {cross!r} needs samples from both sources, got "
                f"{ {s.source for s in samples} }"
            )
        order = rng.permutation(len(pool))
        n_val = max(1, int(round(val_fraction * len(pool))))
        val_idx = set(order[len(pool) - n_val:].tolist())
        for i, s in enumerate(pool):
            entries.append(ManifestEntry(s.id, s.source, "val" if i in val_idx else "train"))
        entries += [ManifestEntry(s.id, s.source, "test") for s in test]
        return DatasetManifest(entries=entries, seed=seed)
    n_train, n_val, n_test = counts
    need = n_train + n_val + n_test
    if need > len(samples):
        raise DataError(f"split needs {need} samples, only {len(samples)} available")
    order = rng.permutation(len(samples))
    split_of = {}
    for rank, idx in enumerate(order):
        if rank < n_train:
            split_of[idx] = "train"
        elif rank < n_train + n_val:
            split_of[idx] = "val"
        elif rank < need:
            split_of[idx] = "test"
        else:
            split_of[idx] = "unused"
    entries = [ManifestEntry(s.id, s.source, split_of[i]) for i, s in enumerate(samples)]
    return DatasetManifest(entries=entries, seed=seed)


# --------------------------------------------------------------------------
# augmentation


def _affine_matrix(rot_deg, shear_deg, zoom, shift_rc, shape):
    theta = np.deg2rad(rot_deg)
    lam = np.deg2rad(shear_deg)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    shear = np.array([[1.0, np.tan(lam)], [0.0, 1.0]])
    scale = np.array([[1.0 / zoom, 0.0], [0.0, 1.0 / zoom]])
    a = rot @ shear @ scale
    center = (np.asarray(shape, dtype=np.float64) - 1.0) / 2.0
    offset = center + np.asarray(shift_rc) - a @ center
    return a, offset


def _apply_affine(plane, a, offset, order):
    return ndimage.affine_transform(plane, a, offset=offset, order=order,
                                    mode="constant", cval=0.0, prefilter=False)


def _hflip(arr: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(arr[..., ::-1])


def augment(sample: Sample, rng, cfg: AugmentConfig) -> Sample:
    """One random affine + optional horizontal flip, identical on image and mask.

    The image resamples bilinearly, the mask with nearest neighbor and a
    re-binarization, so masks stay strictly {0, 1}.  A zero-range config
    skips resampling entirely, which keeps the identity case bit-exact.
    """
    image, mask = sample.image, sample.mask
    if not cfg.is_identity():
        h, w = image.shape[2], image.shape[3]
        rot = rng.uniform(-cfg.rotation, cfg.rotation)
        shear = rng.uniform(-cfg.shear, cfg.shear)
        zoom = rng.uniform(1.0 - cfg.zoom, 1.0 + cfg.zoom)
        shift = (rng.uniform(-cfg.shift, cfg.shift) * h, rng.uniform(-cfg.shift, cfg.shift) * w)
        a, offset = _affine_matrix(rot, shear, zoom, shift, (h, w))
        image = _apply_affine(image[0, 0].astype(np.float64), a, offset, order=1)
        mask = _apply_affine(mask[0, 0], a, offset, order=0)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)[None, None]
        mask = (mask > 0.5).astype(np.float32)[None, None]
    if cfg.hflip > 0 and rng.random() < cfg.hflip:
        image = _hflip(image)
        mask = _hflip(mask)
    if image is sample.image:
        return sample
    return Sample(image=image, mask=mask, source=sample.source, id=sample.id)


# --------------------------------------------------------------------------
# synthetic corpus


def synth_dataset(n: int, size: int = 64, seed: int = 0) -> list:
    """Deterministic stand-in data: two soft ellipses on a noisy background."""
    rng = np.random.default_rng(seed)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    for i in range(n):
        mask = np.zeros((size, size), dtype=bool)
        for cx_frac in (0.32, 0.68):
            cx = (cx_frac + rng.uniform(-0.04, 0.04)) * size
            cy = (0.52 + rng.uniform(-0.06, 0.06)) * size
            rx = rng.uniform(0.10, 0.15) * size
            ry = rng.uniform(0.22, 0.32) * size
            mask |= ((cols - cx) / rx) ** 2 + ((rows - cy) / ry) ** 2 <= 1.0
        soft = ndimage.gaussian_filter(mask.astype(np.float64), sigma=max(size * 0.02, 0.5))
        image = 0.2 + 0.5 * soft + 0.06 * rng.standard_normal((size, size))
        samples.append(Sample(
            image=_to_nchw(np.clip(image, 0.0, 1.0)),
            mask=_to_nchw(mask.astype(np.float64)),
            source="synthetic",
            id=f"synth-{i:04d}",
        ))
    return samples


# --------------------------------------------------------------------------
# directory discovery and batching


def discover_dataset(root, size: int, dilate_radius: int = 1,
                     dilate_iterations: int = 1) -> list:
    """Load every image/mask pair found under ``root``.

    Three layouts are recognized: the Montgomery tree (CXR_png plus
    ManualMask/leftMask + rightMask, merged by OR), the Shenzhen tree
    (CXR_png plus mask/<stem>_mask.png), and a generic images/ + masks/
    pair of directories with matching file names.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data directory not found: {root}")
    samples = []
    mont = _first_dir(root, ("MontgomerySet", "montgomery"))
    if mont is not None:
        left = mont / "ManualMask" / "leftMask"
        right = mont / "ManualMask" / "rightMask"
        for img in sorted((mont / "CXR_png").glob("*.png")):
            lm, rm = left / img.name, right / img.name
            if not (lm.exists() and rm.exists()):
                log.warning("skipping %s: missing left/right mask", img.name)
                continue
            s = load_sample(img, [lm, rm], size, source="montgomery", sample_id=img.stem)
            samples.append(_dilated(s, dilate_radius, dilate_iterations))
    shen = _first_dir(root, ("ChinaSet_AllFiles", "shenzhen"))
    if shen is not None:
        maskdir = shen / "mask"
        for img in sorted((shen / "CXR_png").glob("*.png")):
            m = maskdir / f"{img.stem}_mask.png"
            if not m.exists():
                continue
            s = load_sample(img, m, size, source="shenzhen", sample_id=img.stem)
            samples.append(_dilated(s, dilate_radius, dilate_iterations))
    if not samples and (root / "images").is_dir() and (root / "masks").is_dir():
        for img in sorted((root / "images").glob("*.png")):
            m = root / "masks" / img.name
            if not m.exists():
                log.warning("skipping %s: no matching mask", img.name)
                continue
            s = load_sample(img, m, size, source="generic", sample_id=img.stem)
            samples.append(_dilated(s, dilate_radius, dilate_iterations))
    if not samples:
        raise DataError(f"no image/mask pairs found under {root}")
    return samples


def _first_dir(root: Path, names) -> Path | None:
    for name in names:
        cand = root / name
        if cand.is_dir():
            return cand
    if root.name in names or (root / "CXR_png").is_dir():
        return root if (root / "CXR_png").is_dir() else None
    return None


def _dilated(sample: Sample, radius: int, iterations: int) -> Sample:
    if radius == 0 or iterations == 0:
        return sample
    return Sample(
        image=sample.image,
        mask=dilate_mask(sample.mask, radius, iterations),
        source=sample.source,
        id=sample.id,
    )


def stack(samples) -> tuple:
    """Samples -> (images, masks) batch tensors."""
    images = np.concatenate([s.image for s in samples], axis=0)
    masks = np.concatenate([s.mask for s in samples], axis=0)
    return images, masks


def batches(samples, batch_size: int, rng=None, aug_cfg: AugmentConfig | None = None):
    """Yield (images, masks) batches; shuffles and augments when given an rng."""
    samples = list(samples)
    order = rng.permutation(len(samples)) if rng is not None else np.arange(len(samples))
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        if aug_cfg is not None and rng is not None:
            chunk = [augment(s, rng, aug_cfg) for s in chunk]
        yield stack(chunk)
