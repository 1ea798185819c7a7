"""Samples, resizing and batch assembly."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from .metrics import categorize, ratio_fake


@dataclass
class DocumentSample:
    """An RGB document image (H, W, 3) with its binary forged-pixel mask (H, W).

    ``image`` is uint8, or float in [0, 255] after a perturbation.
    """

    id: str
    image: np.ndarray
    mask: np.ndarray
    recipe: Optional[Any] = None
    ratio_fake: float = 0.0
    category: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"sample {self.id}: image must be (H, W, 3), got {self.image.shape}")
        if self.mask.shape != self.image.shape[:2]:
            raise ValueError(f"sample {self.id}: mask {self.mask.shape} does not match image {self.image.shape}")

    def with_arrays(self, image: np.ndarray, mask: np.ndarray) -> "DocumentSample":
        """Copy with new arrays and ratio/category recomputed from the new mask."""
        r = mask_ratio(mask)
        return replace(self, image=image, mask=mask, ratio_fake=r, category=categorize(r))


def mask_ratio(mask: np.ndarray) -> float:
    if np.count_nonzero(mask) == mask.size:
        return float("inf")
    return ratio_fake(mask)


def _bilinear_axis(n_in: int, n_out: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres; identity when n_in == n_out
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize an (H, W[, C]) array; returns float64."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (out_h, out_w):
        return img.copy()
    lo, hi, t = _bilinear_axis(h, out_h)
    t = t.reshape((-1,) + (1,) * (img.ndim - 1))
    rows = img[lo] * (1 - t) + img[hi] * t
    lo, hi, t = _bilinear_axis(w, out_w)
    t = t.reshape((1, -1) + (1,) * (img.ndim - 2))
    return rows[:, lo] * (1 - t) + rows[:, hi] * t


def resize_nearest(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = arr.shape[:2]
    rows = np.minimum(((np.arange(out_h) + 0.5) * h / out_h).astype(np.intp), h - 1)
    cols = np.minimum(((np.arange(out_w) + 0.5) * w / out_w).astype(np.intp), w - 1)
    return arr[rows][:, cols]


def prepare_batch(samples: Sequence[DocumentSample], input_size) -> Tuple[np.ndarray, np.ndarray]:
    """Images (N, 3, h, w) scaled to [0, 1] and masks (N, h, w) in {0, 1}.

    Images are resized bilinearly, masks with nearest neighbour.
    """
    if isinstance(input_size, (int, np.integer)):
        out_h = out_w = int(input_size)
    else:
        out_h, out_w = input_size
    images = np.empty((len(samples), 3, out_h, out_w), dtype=np.float32)
    masks = np.empty((len(samples), out_h, out_w), dtype=np.int64)
    for i, s in enumerate(samples):
        img = resize_bilinear(s.image, out_h, out_w)
        images[i] = np.clip(img, 0, 255).transpose(2, 0, 1) / 255.0
        masks[i] = resize_nearest(np.asarray(s.mask) != 0, out_h, out_w)
    return images, masks
