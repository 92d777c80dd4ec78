"""IDX dataset files (MNIST / Fashion-MNIST) and input-plane encoding."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from vd2nn.errors import ConfigError, CountMismatchError, DataError, TruncatedFileError, WrongMagicError
from vd2nn.optics import ComplexField, GridSpec

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
CHANNELS = ("amplitude", "phase")
RESAMPLERS = ("nearest", "bilinear")


@dataclass(eq=False)
class LabeledImageSet:
    images: np.ndarray  # (N, h, w) uint8
    labels: np.ndarray  # (N,) int
    split: str = ""
    num_classes: int = 10

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or len(self.images) != len(self.labels):
            raise DataError(
                f"{len(self.images)} images vs {len(self.labels)} labels (images shape "
                f"{self.images.shape})"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices, split: str | None = None) -> "LabeledImageSet":
        idx = np.asarray(indices)
        return LabeledImageSet(
            self.images[idx], self.labels[idx], self.split if split is None else split, self.num_classes
        )

    def head(self, count: int | None) -> "LabeledImageSet":
        if count is None or count >= len(self):
            return self
        return self.subset(np.arange(count))

    def split_tail(self, holdout: int) -> tuple["LabeledImageSet", "LabeledImageSet"]:
        """Split off the last ``holdout`` samples, e.g. as a validation set."""
        if not 0 <= holdout < len(self):
            raise DataError(f"cannot hold out {holdout} of {len(self)} samples")
        cut = len(self) - holdout
        return (
            self.subset(np.arange(cut), f"{self.split}-train"),
            self.subset(np.arange(cut, len(self)), f"{self.split}-val"),
        )


def _read(path) -> bytes:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as fh:
                return fh.read()
        return path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _parse(raw: bytes, path, magic: int, ndim: int) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: file too short for an IDX header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise WrongMagicError(f"{path}: wrong magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < header:
        raise TruncatedFileError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise TruncatedFileError(f"{path}: expected {size} data bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "", num_classes: int = 10) -> LabeledImageSet:
    """Read an IDX image file and its label file (optionally gzip-compressed)."""
    images = _parse(_read(images_path), images_path, IMAGES_MAGIC, 3)
    labels = _parse(_read(labels_path), labels_path, LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise CountMismatchError(
            f"{images_path} has {len(images)} images but {labels_path} has {len(labels)} labels"
        )
    return LabeledImageSet(images.copy(), labels.astype(np.int64), split, num_classes)


def write_idx(dataset: LabeledImageSet, images_path, labels_path) -> None:
    n, h, w = dataset.images.shape
    Path(images_path).write_bytes(
        struct.pack(">IIII", IMAGES_MAGIC, n, h, w) + dataset.images.astype(np.uint8).tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">II", LABELS_MAGIC, n) + dataset.labels.astype(np.uint8).tobytes()
    )


def _resample_matrix(src: int, dst: int, method: str) -> np.ndarray:
    """``(dst, src)`` matrix mapping a 1-D signal onto ``dst`` equal cells."""
    centres = (np.arange(dst) + 0.5) * src / dst
    out = np.zeros((dst, src))
    if method == "nearest":
        out[np.arange(dst), np.minimum(centres.astype(int), src - 1)] = 1.0
    elif method == "bilinear":
        pos = np.clip(centres - 0.5, 0, src - 1)
        lo = np.floor(pos).astype(int)
        hi = np.minimum(lo + 1, src - 1)
        frac = pos - lo
        np.add.at(out, (np.arange(dst), lo), 1 - frac)
        np.add.at(out, (np.arange(dst), hi), frac)
    else:
        raise ConfigError(f"unknown resampler {method!r}; expected one of {RESAMPLERS}")
    return out


@dataclass(frozen=True)
class Encoder:
    """Maps 8-bit images onto a centred square object region of the input plane."""

    grid: GridSpec
    channel: str = "amplitude"
    object_span: float = 80.0
    resample: str = "nearest"

    def __post_init__(self) -> None:
        if self.channel not in CHANNELS:
            raise ConfigError(f"unknown channel {self.channel!r}; expected one of {CHANNELS}")
        if self.resample not in RESAMPLERS:
            raise ConfigError(f"unknown resampler {self.resample!r}")
        if not 0 < self.object_span <= self.grid.aperture:
            raise ConfigError(
                f"object span {self.object_span} must be positive and fit the "
                f"{self.grid.aperture:.4g} aperture"
            )
        if self.object_pixels < 1:
            raise ConfigError("object span is smaller than one pixel")

    @property
    def object_pixels(self) -> int:
        return min(int(round(self.object_span / self.grid.pitch)), self.grid.n)

    def encode_batch(self, images: np.ndarray) -> np.ndarray:
        """``(B, h, w)`` uint8 images -> ``(B, n, n)`` complex input fields."""
        images = np.asarray(images)
        if images.ndim == 2:
            return self.encode_batch(images[None])[0]
        if images.size == 0:
            raise DataError("cannot encode an empty image")
        _, h, w = images.shape
        m, n = self.object_pixels, self.grid.n
        ry = _resample_matrix(h, m, self.resample)
        rx = _resample_matrix(w, m, self.resample)
        p = ry @ (images.astype(np.float64) / 255.0) @ rx.T
        out = np.zeros((len(images), n, n), dtype=np.complex128)
        s = (n - m) // 2
        if self.channel == "amplitude":
            out[:, s : s + m, s : s + m] = p
        else:
            out[:, s : s + m, s : s + m] = np.exp(1j * np.pi * p)
        return out


def encode_input(
    image: np.ndarray,
    grid: GridSpec,
    channel: str = "amplitude",
    object_span: float = 80.0,
    resample: str = "nearest",
) -> ComplexField:
    """Encode one image as an input-plane field (amplitude ``p`` or phase ``pi * p``)."""
    return ComplexField(grid, Encoder(grid, channel, object_span, resample).encode_batch(image))
