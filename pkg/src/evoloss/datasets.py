"""Dataset ingestion, deterministic splits and synthetic generators.

Loaders produce ``(features, labels)`` with features as float64 rows in
[0, 1] and labels as int64 class indices. ``split`` partitions one pool into
train/validation/test deterministically; ``subsample_portion`` shrinks the
training split for dataset-size sensitivity runs.
"""

from __future__ import annotations

import csv as _csv
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class DatasetSplit:
    """Immutable train/validation/test partition of one labelled dataset."""

    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    provenance: str = ""

    def __post_init__(self) -> None:
        for name in ("train", "val", "test"):
            x = getattr(self, f"{name}_x")
            y = getattr(self, f"{name}_y")
            if x.ndim != 2:
                raise ValueError(f"{name} features must be a 2-D matrix")
            if len(x) != len(y):
                raise ValueError(f"{name} features/labels row counts differ")
            if not np.all(np.isfinite(x)):
                raise ValueError(f"{name} features contain non-finite values")
            if len(y) and (y.min() < 0 or y.max() >= self.num_classes):
                raise ValueError(f"{name} labels outside [0, {self.num_classes})")

    @property
    def input_dim(self) -> int:
        return self.train_x.shape[1]


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    """Read a big-endian IDX image/label file pair.

    Images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, then
    count*rows*cols pixel bytes. Labels: u32 magic 0x00000801, u32 count,
    then count label bytes. Pixels are scaled to [0, 1] and flattened
    row-major.
    """
    with open(images_path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16:
            raise ValueError(f"truncated IDX image header in {images_path}")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(
                f"bad IDX image magic 0x{magic:08x} in {images_path}; "
                f"expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        data = fh.read()
    if len(data) != count * rows * cols:
        raise ValueError(
            f"truncated IDX image data in {images_path}: "
            f"expected {count * rows * cols} bytes, found {len(data)}"
        )
    features = np.frombuffer(data, dtype=np.uint8).astype(np.float64) / 255.0
    features = features.reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        header = fh.read(8)
        if len(header) < 8:
            raise ValueError(f"truncated IDX label header in {labels_path}")
        magic, label_count = struct.unpack(">II", header)
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(
                f"bad IDX label magic 0x{magic:08x} in {labels_path}; "
                f"expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        label_data = fh.read()
    if len(label_data) != label_count:
        raise ValueError(
            f"truncated IDX label data in {labels_path}: "
            f"expected {label_count} bytes, found {len(label_data)}"
        )
    if label_count != count:
        raise ValueError(
            f"IDX count mismatch: {count} images vs {label_count} labels"
        )
    labels = np.frombuffer(label_data, dtype=np.uint8).astype(np.int64)
    return features, labels


def load_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Load a CSV with feature columns and an integer label as the last
    column; a single non-numeric header row is skipped."""
    rows = []
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        for i, row in enumerate(reader):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if i == 0:
                    continue  # header
                raise ValueError(f"non-numeric value in {path} at row {i + 1}")
    if not rows:
        raise ValueError(f"no data rows in {path}")
    data = np.asarray(rows, dtype=np.float64)
    if data.shape[1] < 2:
        raise ValueError(f"{path} needs at least one feature column plus a label column")
    labels = data[:, -1]
    if not np.all(labels == np.round(labels)):
        raise ValueError(f"last column of {path} must hold integer labels")
    return data[:, :-1], labels.astype(np.int64)


def _check_class_coverage(name: str, labels: np.ndarray, num_classes: int) -> None:
    present = np.unique(labels)
    missing = sorted(set(range(num_classes)) - set(present.tolist()))
    if missing:
        raise ValueError(f"{name} split is missing classes {missing}")


def split(
    features: np.ndarray,
    labels: np.ndarray,
    train_n: int,
    val_n: int,
    test_n: int,
    seed: int,
) -> DatasetSplit:
    """Deterministic shuffled partition. Train and validation must be
    non-empty (the fitness oracle scores on validation data) and every
    non-empty split must contain every class."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(features) != len(labels):
        raise ValueError("features/labels row counts differ")
    if train_n <= 0:
        raise ValueError("train_n must be positive")
    if val_n <= 0:
        raise ValueError("validation split required for fitness: val_n must be positive")
    if test_n < 0:
        raise ValueError("test_n must be nonnegative")
    total = train_n + val_n + test_n
    if total > len(features):
        raise ValueError(
            f"requested {total} rows but only {len(features)} are available"
        )
    num_classes = int(labels.max()) + 1
    perm = np.random.default_rng(seed).permutation(len(features))
    idx_train = perm[:train_n]
    idx_val = perm[train_n : train_n + val_n]
    idx_test = perm[train_n + val_n : total]
    out = DatasetSplit(
        train_x=features[idx_train],
        train_y=labels[idx_train],
        val_x=features[idx_val],
        val_y=labels[idx_val],
        test_x=features[idx_test],
        test_y=labels[idx_test],
        num_classes=num_classes,
        provenance=f"split(train={train_n}, val={val_n}, test={test_n}, seed={seed})",
    )
    _check_class_coverage("train", out.train_y, num_classes)
    _check_class_coverage("validation", out.val_y, num_classes)
    if test_n:
        _check_class_coverage("test", out.test_y, num_classes)
    return out


def subsample_portion(ds: DatasetSplit, portion: float, seed: int) -> DatasetSplit:
    """Shrink the training split to round(portion * rows) via stratified
    per-class sampling; validation and test are untouched."""
    if not 0.0 < portion <= 1.0:
        raise ValueError("portion must be in (0, 1]")
    if portion == 1.0:
        return ds
    rows = len(ds.train_y)
    target = int(round(portion * rows))
    if target < ds.num_classes:
        raise ValueError(
            f"portion {portion} keeps {target} rows, fewer than {ds.num_classes} classes"
        )
    rng = np.random.default_rng(seed)
    class_indices = [np.flatnonzero(ds.train_y == c) for c in range(ds.num_classes)]
    if any(len(ci) == 0 for ci in class_indices):
        raise ValueError("training split does not cover every class")

    # Largest-remainder apportionment of the target across classes, at least
    # one row per class, so proportions are preserved within +-1 sample.
    exact = np.array([len(ci) for ci in class_indices], dtype=float) * portion
    counts = np.maximum(np.floor(exact).astype(int), 1)
    remainders = exact - np.floor(exact)
    shortfall = target - int(counts.sum())
    if shortfall > 0:
        for c in np.argsort(-remainders, kind="stable")[:shortfall]:
            counts[c] += 1
    elif shortfall < 0:
        for c in np.argsort(remainders, kind="stable"):
            if counts[c] > 1 and shortfall < 0:
                counts[c] -= 1
                shortfall += 1
    counts = np.minimum(counts, [len(ci) for ci in class_indices])

    keep = np.concatenate(
        [
            rng.choice(ci, size=k, replace=False)
            for ci, k in zip(class_indices, counts)
        ]
    )
    keep.sort()
    return DatasetSplit(
        train_x=ds.train_x[keep],
        train_y=ds.train_y[keep],
        val_x=ds.val_x,
        val_y=ds.val_y,
        test_x=ds.test_x,
        test_y=ds.test_y,
        num_classes=ds.num_classes,
        provenance=f"{ds.provenance} | portion={portion}, seed={seed}",
    )


def synth_blobs(
    n_classes: int,
    samples_per_class: int,
    dim: int,
    separation: float,
    noise_sigma: float,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian clusters at deterministic centers inside [0, 1]^dim.

    Centers sit at 0.5 + (separation/2) * u_k for unit directions u_k drawn
    from the seeded generator; direction sets with centers closer than
    separation/2 are redrawn so classes stay distinguishable.
    """
    if min(n_classes, samples_per_class, dim) < 1:
        raise ValueError("n_classes, samples_per_class and dim must be positive")
    if separation < 0 or noise_sigma < 0:
        raise ValueError("separation and noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)

    centers = None
    for _ in range(100):
        dirs = rng.standard_normal((n_classes, dim))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        cand = 0.5 + 0.5 * separation * dirs
        dists = np.linalg.norm(cand[:, None, :] - cand[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if n_classes == 1 or dists.min() >= 0.5 * separation:
            centers = cand
            break
    if centers is None:
        centers = cand  # accept the last draw for crowded configurations

    features = np.repeat(centers, samples_per_class, axis=0)
    if noise_sigma > 0:
        features = features + noise_sigma * rng.standard_normal(features.shape)
    features = np.clip(features, 0.0, 1.0)
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), samples_per_class)
    return features, labels


# 5x7 bitmap glyphs for the procedural digit task ("1" marks an ink pixel).
_DIGIT_GLYPHS = (
    "01110 10001 10011 10101 11001 10001 01110",  # 0
    "00100 01100 00100 00100 00100 00100 01110",  # 1
    "01110 10001 00001 00110 01000 10000 11111",  # 2
    "11111 00010 00100 00010 00001 10001 01110",  # 3
    "00010 00110 01010 10010 11111 00010 00010",  # 4
    "11111 10000 11110 00001 00001 10001 01110",  # 5
    "00110 01000 10000 11110 10001 10001 01110",  # 6
    "11111 00001 00010 00100 01000 01000 01000",  # 7
    "01110 10001 10001 01110 10001 10001 01110",  # 8
    "01110 10001 10001 01111 00001 00010 01100",  # 9
)


def _glyph_array(spec: str) -> np.ndarray:
    rows = spec.split()
    return np.array([[int(c) for c in row] for row in rows], dtype=np.float64)


def synth_digits(
    n_samples: int,
    seed: int,
    image_size: int = 28,
    glyph_scale: int = 3,
    noise_sigma: float = 0.25,
    pixel_dropout: float = 0.2,
    min_intensity: float = 0.6,
) -> tuple[np.ndarray, np.ndarray]:
    """Procedural handwritten-digit stand-in: bitmap digit glyphs rendered
    at random offsets with intensity jitter, stroke dropout and pixel noise.

    Useful as a deterministic desk-scale image-classification task with
    difficulty tunable through ``noise_sigma`` and ``pixel_dropout``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    glyphs = [np.kron(_glyph_array(g), np.ones((glyph_scale, glyph_scale))) for g in _DIGIT_GLYPHS]
    gh, gw = glyphs[0].shape
    if gh > image_size or gw > image_size:
        raise ValueError("glyph_scale too large for image_size")
    rng = np.random.default_rng(seed)

    labels = rng.integers(0, 10, size=n_samples).astype(np.int64)
    images = np.zeros((n_samples, image_size, image_size))
    offs_r = rng.integers(0, image_size - gh + 1, size=n_samples)
    offs_c = rng.integers(0, image_size - gw + 1, size=n_samples)
    intensity = rng.uniform(min_intensity, 1.0, size=n_samples)
    for i in range(n_samples):
        glyph = glyphs[labels[i]] * intensity[i]
        if pixel_dropout > 0:
            glyph = glyph * (rng.random(glyph.shape) >= pixel_dropout)
        r, c = offs_r[i], offs_c[i]
        images[i, r : r + gh, c : c + gw] = glyph
    if noise_sigma > 0:
        images = images + noise_sigma * rng.standard_normal(images.shape)
    features = np.clip(images, 0.0, 1.0).reshape(n_samples, image_size * image_size)
    return features, labels


def save_idx(images_path, labels_path, features: np.ndarray, labels: np.ndarray) -> None:
    """Write features in [0, 1] (square images, flattened) and labels as an
    IDX pair readable by :func:`load_idx`."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    side = int(round(features.shape[1] ** 0.5))
    if side * side != features.shape[1]:
        raise ValueError("features must be flattened square images")
    pixels = np.clip(np.round(features * 255.0), 0, 255).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(features), side, side))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, len(labels)))
        fh.write(labels.astype(np.uint8).tobytes())
