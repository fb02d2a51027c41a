"""Shared data model: images, latents, keyed random streams and PNG I/O."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image


class ShapeError(ValueError):
    """Raised when image or latent dimensions violate a contract."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ImageBuffer:
    """H x W x 3 sRGB image with float values in [0, 1]."""

    values: np.ndarray
    source_id: str = "anon"
    color_space: str = "sRGB"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ShapeError(f"image must be HxWx3, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError(f"image {self.source_id!r} has non-finite values")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ValueError(f"image {self.source_id!r} has values outside [0,1]")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def from_array(cls, a: np.ndarray, source_id: str = "anon") -> "ImageBuffer":
        """Build an image from any float array, clipping into [0, 1]."""
        a = np.nan_to_num(np.asarray(a, dtype=np.float64), nan=0.0)
        return cls(np.clip(a, 0.0, 1.0), source_id=source_id)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def with_values(self, a: np.ndarray) -> "ImageBuffer":
        return ImageBuffer.from_array(a, self.source_id)

    def to_uint8(self) -> np.ndarray:
        return np.round(self.values * 255.0).astype(np.uint8)

    def digest(self) -> str:
        return hashlib.sha256(self.to_uint8().tobytes()).hexdigest()[:16]


def check_divisible(img: ImageBuffer, factor: int) -> None:
    if img.height < 8 or img.width < 8:
        raise ShapeError(f"image {img.source_id!r} is smaller than 8x8")
    if img.height % factor or img.width % factor:
        raise ShapeError(
            f"image {img.source_id!r} of size {img.height}x{img.width} is not "
            f"divisible by the backend downsampling factor {factor}"
        )


@dataclass(frozen=True)
class Latent:
    """C x h x w latent grid; ``timestep`` is the t for which it is a valid z_t."""

    values: np.ndarray
    timestep: Optional[int] = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeError(f"latent must be C x h x w, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("latent has non-finite values")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def tagged(self, timestep: Optional[int]) -> "Latent":
        return Latent(self.values, timestep)

    def digest(self) -> str:
        return hashlib.sha256(self.values.tobytes()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Keyed random streams. Philox is counter based; the 128-bit key is the
# SHA-256 of "root_seed:stream_key", so a stream depends only on that pair.


@dataclass
class RngStream:
    root_seed: int
    stream_key: str
    algorithm: str = "philox4x64-sha256key"
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        h = hashlib.sha256(f"{int(self.root_seed)}:{self.stream_key}".encode()).digest()
        key = int.from_bytes(h[:16], "little")
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def child(self, suffix: str) -> "RngStream":
        return RngStream(self.root_seed, f"{self.stream_key}/{suffix}")

    # thin pass-throughs used across the package
    def normal(self, shape) -> np.ndarray:
        return self.generator.standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def bits(self, n: int) -> np.ndarray:
        return self.generator.integers(0, 2, n).astype(np.uint8)


def derive_stream(root_seed: int, stream_key: str) -> RngStream:
    if not stream_key:
        raise ValueError("stream_key must be nonempty")
    return RngStream(int(root_seed), stream_key)


def image_stream(root_seed: int, image_id: str, stage: str) -> RngStream:
    return derive_stream(root_seed, f"image:{image_id}:stage:{stage}")


def gaussian_like(shape: Sequence[int], rng: RngStream) -> Latent:
    """I.i.d. standard normal latent of the given (C, h, w) shape."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) <= 0:
        raise ValueError(f"shape must be three positive dims, got {shape}")
    return Latent(rng.normal(shape))


# --------------------------------------------------------------------------
# PNG boundary: the only place images are quantized.


def save_png(img: ImageBuffer, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.to_uint8(), mode="RGB").save(path, format="PNG")
    return path


def load_png(path, source_id: Optional[str] = None) -> ImageBuffer:
    path = Path(path)
    with Image.open(path) as im:
        a = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return ImageBuffer(a, source_id=source_id or path.stem)


def stage_filename(source_id: str, stage: str) -> str:
    return f"{source_id}__{stage}.png"


def psnr(a: ImageBuffer | np.ndarray, b: ImageBuffer | np.ndarray) -> float:
    a = a.values if isinstance(a, ImageBuffer) else np.asarray(a, dtype=np.float64)
    b = b.values if isinstance(b, ImageBuffer) else np.asarray(b, dtype=np.float64)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)
