"""IDX image/label loading, synthetic decoder data and PGM image grids."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field

import numpy as np

from .likelihood import cb_sample

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class FormatError(ValueError):
    pass


class TruncatedError(FormatError):
    pass


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 2:
            raise ValueError("images must be an (N, D) matrix")
        if self.labels is not None and len(self.labels) != self.images.shape[0]:
            raise ValueError("images and labels disagree on N")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixels must lie in [0, 1]")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, index):
        labels = None if self.labels is None else self.labels[index]
        return Dataset(self.images[index], labels, dict(self.meta))

    def filter_digits(self, digits):
        if self.labels is None:
            raise ValueError("digit filtering needs labels")
        return self.subset(np.flatnonzero(np.isin(self.labels, list(digits))))


def _read(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse(raw, path, magic, ndims):
    if len(raw) < 4:
        raise TruncatedError(f"{path}: file shorter than the IDX magic")
    (seen,) = struct.unpack(">I", raw[:4])
    if seen != magic:
        raise FormatError(f"{path}: expected magic 0x{magic:08x}, found 0x{seen:08x}")
    head = 4 + 4 * ndims
    if len(raw) < head:
        raise TruncatedError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndims}I", raw[4:head])
    need = int(np.prod(dims))
    if len(raw) - head < need:
        raise TruncatedError(f"{path}: expected {need} payload bytes, found {len(raw) - head}")
    return np.frombuffer(raw, dtype=np.uint8, count=need, offset=head).reshape(dims)


def read_idx_images(path):
    """Raw ``uint8`` array of shape ``(N, H, W)``."""
    return _parse(_read(path), path, IMAGES_MAGIC, 3)


def read_idx_labels(path):
    return _parse(_read(path), path, LABELS_MAGIC, 1)


def load_idx(images_path, labels_path=None, digits=None) -> Dataset:
    """Images scaled by 1/255 into ``(N, H*W)``; optional digit filter."""
    raw = read_idx_images(images_path)
    n, h, w = raw.shape
    labels = None if labels_path is None else read_idx_labels(labels_path).astype(np.int64)
    if labels is not None and labels.size != n:
        raise FormatError(f"{labels_path}: {labels.size} labels for {n} images")
    data = Dataset(raw.reshape(n, h * w) / 255.0, labels,
                   {"source": str(images_path), "height": h, "width": w})
    return data.filter_digits(digits) if digits is not None else data


def write_idx_images(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3:
        raise ValueError("expected (N, H, W) uint8 pixels")
    payload = struct.pack(">I3I", IMAGES_MAGIC, *pixels.shape) + pixels.tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(payload)


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(struct.pack(">II", LABELS_MAGIC, labels.size) + labels.tobytes())


def synth_decoder_dataset(seed, n, d=16, k=2):
    """``z ~ N(0, I)``, ``lam = sigmoid(W z + b)``, pixels drawn from CB(lam).

    Returns ``(Dataset, {"W", "b", "z", "lam"})``.
    """
    rng = np.random.default_rng(seed)
    W = rng.normal(0.5, 0.1, (d, k))
    b = rng.normal(0.5, 0.1, d)
    z = rng.standard_normal((n, k))
    lam = np.clip(1.0 / (1.0 + np.exp(-(z @ W.T + b))), 1e-6, 1 - 1e-6)
    x, _ = cb_sample(lam, rng.uniform(size=lam.shape))
    x = np.clip(x, 0.0, 1.0)
    return Dataset(x, None, {"source": f"synthetic seed={seed}"}), {"W": W, "b": b, "z": z, "lam": lam}


def to_bytes(values):
    """Map [0, 1] to 0..255, rounding half away from zero."""
    scaled = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(scaled + 0.5).astype(np.uint8)


def image_grid(images, height, width, cols):
    """Tile rows into a ``uint8`` canvas with 1-pixel black separators."""
    images = np.atleast_2d(np.asarray(images, dtype=np.float64))
    n, d = images.shape
    if d != height * width:
        raise ValueError(f"image length {d} != {height}x{width}")
    cols = max(1, min(cols, n))
    rows = -(-n // cols)
    canvas = np.zeros((rows * (height + 1) - 1, cols * (width + 1) - 1), dtype=np.uint8)
    tiles = to_bytes(images).reshape(n, height, width)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * (height + 1): r * (height + 1) + height,
               c * (width + 1): c * (width + 1) + width] = tiles[i]
    return canvas


def write_image_grid(images, height, width, cols, path, comment=None):
    """Binary PGM (P5, maxval 255) of the tiled images."""
    canvas = image_grid(images, height, width, cols)
    header = b"P5\n"
    if comment:
        header += b"".join(b"# " + line.encode("ascii") + b"\n" for line in comment.splitlines())
    header += f"{canvas.shape[1]} {canvas.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + canvas.tobytes())
    return canvas.shape
