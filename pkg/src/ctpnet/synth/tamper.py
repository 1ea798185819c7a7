"""Tampering primitives: donor cropping, splicing, copy-move and post-processing."""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
from PIL import Image


@dataclass(frozen=True)
class Rect:
    top: int
    left: int
    height: int
    width: int

    @property
    def size(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def area(self) -> int:
        return self.height * self.width

    def slices(self) -> Tuple[slice, slice]:
        return slice(self.top, self.top + self.height), slice(self.left, self.left + self.width)

    def inside(self, height: int, width: int) -> bool:
        return (
            self.height > 0
            and self.width > 0
            and self.top >= 0
            and self.left >= 0
            and self.top + self.height <= height
            and self.left + self.width <= width
        )

    def overlaps(self, other: "Rect") -> bool:
        return not (
            self.top + self.height <= other.top
            or other.top + other.height <= self.top
            or self.left + self.width <= other.left
            or other.left + other.width <= self.left
        )

    def to_list(self) -> list:
        return [self.top, self.left, self.height, self.width]

    @classmethod
    def from_list(cls, v) -> "Rect":
        return cls(*(int(x) for x in v))


@dataclass(frozen=True)
class ForgeryRecipe:
    """One tampering event, enough to replay it."""

    kind: str  # "splice" or "copy_move"
    donor_source: str  # donor document id, or "self" for copy-move
    donor_region: Rect
    target_region: Rect
    noise_sigma: float
    jpeg_quality: Optional[int]
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in ("splice", "copy_move"):
            raise ValueError(f"unknown tamper kind {self.kind!r}")
        if self.donor_region.size != self.target_region.size:
            raise ValueError("donor and target regions must have the same size")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.jpeg_quality is not None and not 1 <= self.jpeg_quality <= 100:
            raise ValueError("JPEG quality must be in 1..100")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["donor_region"] = self.donor_region.to_list()
        d["target_region"] = self.target_region.to_list()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ForgeryRecipe":
        return cls(
            kind=d["kind"],
            donor_source=d["donor_source"],
            donor_region=Rect.from_list(d["donor_region"]),
            target_region=Rect.from_list(d["target_region"]),
            noise_sigma=float(d["noise_sigma"]),
            jpeg_quality=None if d["jpeg_quality"] is None else int(d["jpeg_quality"]),
            seed=int(d["seed"]),
        )


def _check_region(image: np.ndarray, region: Rect, what: str) -> None:
    if not region.inside(image.shape[0], image.shape[1]):
        raise ValueError(f"{what} {region} is outside the {image.shape[0]}x{image.shape[1]} image")


def crop_donor(image: np.ndarray, region: Rect) -> np.ndarray:
    _check_region(image, region, "donor region")
    rows, cols = region.slices()
    return image[rows, cols].copy()


def splice(donee: np.ndarray, patch: np.ndarray, target: Rect) -> Tuple[np.ndarray, np.ndarray]:
    """Paste ``patch`` over ``target``. The mask marks the whole target region,
    including pixels the patch happens not to change."""
    _check_region(donee, target, "target region")
    if patch.shape[:2] != target.size:
        raise ValueError(f"patch {patch.shape[:2]} does not fit target {target.size}")
    out = donee.copy()
    rows, cols = target.slices()
    out[rows, cols] = patch
    mask = np.zeros(donee.shape[:2], dtype=np.uint8)
    mask[rows, cols] = 1
    return out, mask


def copy_move(image: np.ndarray, src: Rect, dst: Rect) -> Tuple[np.ndarray, np.ndarray]:
    if src.size != dst.size:
        raise ValueError("copy-move regions must have the same size")
    if src == dst:
        raise ValueError("copy-move source and destination are identical")
    return splice(image, crop_donor(image, src), dst)


def add_gaussian_noise(image: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Per-pixel N(0, sigma) noise, clipped to [0, 255] and rounded to uint8."""
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    if sigma == 0:
        return image.copy()
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma, image.shape)
    return np.clip(np.rint(noisy), 0, 255).astype(np.uint8)


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Baseline JPEG encode/decode; 4:2:0 chroma below quality 95, 4:4:4 from 95."""
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"JPEG quality must be in 1..100, got {quality}")
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(
        buf, format="JPEG", quality=int(quality), subsampling=0 if quality >= 95 else 2,
        optimize=False, progressive=False,
    )
    buf.seek(0)
    with Image.open(buf) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8).copy()


def post_process(
    image: np.ndarray, noise_sigma: float, jpeg_quality: Optional[int], seed: int
) -> np.ndarray:
    """Gaussian noise then (optionally) a JPEG round trip. Masks are never touched."""
    noisy = add_gaussian_noise(image, noise_sigma, np.random.default_rng(seed))
    if jpeg_quality is None:
        return noisy
    return jpeg_roundtrip(noisy, jpeg_quality)
