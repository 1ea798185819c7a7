"""Post-processing robustness: perturb test samples, realign masks, re-evaluate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .data import DocumentSample, resize_bilinear, resize_nearest
from .metrics import evaluate

KINDS = ("resize", "crop", "gauss_noise")
MIN_SIDE = 8
DEFAULT_GRID: Dict[str, tuple] = {
    "resize": (0.5, 0.75, 1.0, 1.25, 1.5),
    "crop": (0.6, 0.8, 1.0),
    "gauss_noise": (0.0, 5.0, 10.0, 25.0),
}


@dataclass(frozen=True)
class Perturbation:
    """``factor`` is the resize scale, the kept fraction of each side, or the noise sigma."""

    kind: str
    factor: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown perturbation {self.kind!r}; expected one of {KINDS}")
        if self.kind == "resize" and not self.factor > 0:
            raise ValueError("resize factor must be positive")
        if self.kind == "crop" and not 0 < self.factor <= 1:
            raise ValueError("crop factor must lie in (0, 1]")
        if self.kind == "gauss_noise" and not self.factor >= 0:
            raise ValueError("noise sigma must be non-negative")


def _check_size(h: int, w: int, p: Perturbation) -> None:
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"{p.kind} {p.factor} leaves a {h}x{w} image (minimum {MIN_SIDE} per side)")


def perturb(sample: DocumentSample, p: Perturbation) -> DocumentSample:
    h, w = sample.mask.shape
    if p.kind == "resize":
        oh, ow = int(round(h * p.factor)), int(round(w * p.factor))
        _check_size(oh, ow, p)
        image = resize_bilinear(sample.image, oh, ow)
        mask = resize_nearest(sample.mask, oh, ow)
    elif p.kind == "crop":
        ch, cw = int(round(h * p.factor)), int(round(w * p.factor))
        _check_size(ch, cw, p)
        top, left = (h - ch) // 2, (w - cw) // 2
        image = sample.image[top : top + ch, left : left + cw].copy()
        mask = sample.mask[top : top + ch, left : left + cw].copy()
    else:
        if p.factor == 0:
            image = sample.image.copy()
        else:
            noise = np.random.default_rng(p.seed).normal(0.0, p.factor, sample.image.shape)
            image = np.clip(sample.image.astype(np.float64) + noise, 0.0, 255.0)
        mask = sample.mask.copy()
    return sample.with_arrays(image, mask)


@dataclass
class SweepRow:
    kind: str
    factor: float
    auc: Optional[float]
    f1: float
    iou: float
    mcc: float
    n_samples: int


def parse_grid(text: str) -> Dict[str, tuple]:
    """``"resize=0.5,1.0;gauss_noise=0,25"`` -> {"resize": (0.5, 1.0), ...}."""
    grid: Dict[str, tuple] = {}
    for part in filter(None, (s.strip() for s in text.split(";"))):
        kind, sep, values = part.partition("=")
        kind = kind.strip()
        if not sep or kind not in KINDS:
            raise ValueError(f"bad grid entry {part!r}")
        factors = tuple(float(v) for v in values.split(",") if v.strip())
        if not factors:
            raise ValueError(f"grid entry {kind!r} has no factors")
        grid[kind] = factors
    if not grid:
        raise ValueError("empty perturbation grid")
    return grid


def _point_seed(seed: int, kind: str, factor: float, index: int) -> int:
    key = [seed, KINDS.index(kind), int(round(factor * 1000)), index]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def robustness_sweep(
    model,
    samples: Sequence[DocumentSample],
    grid: Optional[Dict[str, Sequence[float]]] = None,
    seed: int = 0,
    input_size: Optional[int] = None,
    pooled_auc: bool = False,
) -> List[SweepRow]:
    """Evaluate the model once per (kind, factor) grid point."""
    samples = list(samples)
    grid = DEFAULT_GRID if grid is None else grid
    if not samples:
        raise ValueError("robustness sweep needs at least one sample")
    if not grid or not all(grid.values()):
        raise ValueError("robustness sweep needs a non-empty grid")
    rows = []
    for kind, factors in grid.items():
        for factor in factors:
            perturbed = [
                perturb(s, Perturbation(kind, float(factor), _point_seed(seed, kind, float(factor), i)))
                for i, s in enumerate(samples)
            ]
            rep = evaluate(model, perturbed, input_size, pooled_auc=pooled_auc)
            rows.append(SweepRow(kind, float(factor), rep.auc, rep.f1, rep.iou, rep.mcc, rep.n_samples))
    return rows


def rows_to_jsonl(rows: Sequence[SweepRow]) -> str:
    return "".join(json.dumps(asdict(r)) + "\n" for r in rows)
