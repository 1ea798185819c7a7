"""Forged-document dataset generation: render, tamper, post-process, record."""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from ..data import DocumentSample
from ..metrics import categorize, ratio_fake
from .render import DocumentTemplate, random_template, render_document
from .tamper import ForgeryRecipe, Rect, add_gaussian_noise, copy_move, crop_donor, jpeg_roundtrip, splice

logger = logging.getLogger(__name__)

# ratio_fake ranges the region sampler aims for, per category
RATIO_RANGES = {1: (0.03, 0.10), 2: (0.10, 0.20), 3: (0.20, 0.50), 4: (0.50, 1.00)}
MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True)
class GenerationConfig:
    height: int = 128
    width: int = 128
    splice_fraction: float = 0.5
    category_mix: Tuple[float, ...] = (0.38, 0.35, 0.24, 0.03)
    noise_sigma_range: Tuple[float, ...] = (0.0, 8.0)
    jpeg_quality_range: Tuple[int, ...] = (70, 95)
    jpeg_probability: float = 1.0
    # max colour cast of donor documents (recaptured under other conditions)
    donor_tint: float = 24.0
    grain: float = 1.5

    def __post_init__(self) -> None:
        if self.height < 16 or self.width < 16:
            raise ValueError("canvas must be at least 16x16")
        if len(self.category_mix) != 4 or min(self.category_mix) < 0 or sum(self.category_mix) <= 0:
            raise ValueError("category_mix needs four non-negative weights")
        lo, hi = self.noise_sigma_range
        if not 0 <= lo <= hi:
            raise ValueError("noise_sigma_range must satisfy 0 <= lo <= hi")
        qlo, qhi = self.jpeg_quality_range
        if not 1 <= qlo <= qhi <= 100:
            raise ValueError("jpeg_quality_range must lie in 1..100")
        if not 0 <= self.splice_fraction <= 1 or not 0 <= self.jpeg_probability <= 1:
            raise ValueError("fractions must lie in [0, 1]")


@dataclass
class GeneratedSample:
    sample: DocumentSample
    pristine: np.ndarray
    tampered: np.ndarray  # before post-processing
    noisy: np.ndarray  # after noise, before JPEG


def sample_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _region_size(rng: np.random.Generator, height: int, width: int, category: int) -> Tuple[int, int]:
    """Rectangle size whose ratio_fake lands in ``category``."""
    lo, hi = RATIO_RANGES[category]
    total = height * width
    r = rng.uniform(lo, hi)
    area = r / (1 + r) * total
    aspect = rng.uniform(1.0, 3.5)
    w = int(min(width - 2, max(2, round(np.sqrt(area * aspect)))))
    h = int(min(height - 2, max(2, round(area / w))))
    if h == height - 2:
        w = int(min(width - 2, max(2, round(area / h))))

    def cat(hh: int, ww: int) -> int:
        return categorize(hh * ww / (total - hh * ww))

    for _ in range(4 * (height + width)):
        c = cat(h, w)
        if c == category:
            return h, w
        grow = c < category
        # adjust the side with room to move, alternating to keep the aspect
        if grow:
            if w < width - 2 and (w <= h * aspect or h >= height - 2):
                w += 1
            elif h < height - 2:
                h += 1
            else:
                break
        else:
            if w > 2 and (w >= h * aspect or h <= 2):
                w -= 1
            elif h > 2:
                h -= 1
            else:
                break
    raise ValueError(f"cannot fit a category-{category} region on a {height}x{width} canvas")


def _place_on_text(rng: np.random.Generator, tmpl: DocumentTemplate, h: int, w: int) -> Rect:
    """Region of size (h, w) centred vertically on a random text line."""
    H, W = tmpl.height, tmpl.width
    if tmpl.lines:
        t, l, lh, lw = tmpl.lines[int(rng.integers(len(tmpl.lines)))].box()
        top = t + lh // 2 - h // 2
        left = l + int(rng.integers(0, max(1, lw - min(w, lw) + 1)))
    else:
        top = int(rng.integers(0, H - h + 1))
        left = int(rng.integers(0, W - w + 1))
    return Rect(int(np.clip(top, 0, H - h)), int(np.clip(left, 0, W - w)), h, w)


def _copy_source(rng: np.random.Generator, tmpl: DocumentTemplate, dst: Rect) -> Rect:
    H, W = tmpl.height, tmpl.width
    fallback: Optional[Rect] = None
    for _ in range(64):
        cand = _place_on_text(rng, tmpl, dst.height, dst.width)
        if cand == dst:
            cand = Rect(
                int(rng.integers(0, H - dst.height + 1)), int(rng.integers(0, W - dst.width + 1)), dst.height, dst.width
            )
        if cand == dst:
            continue
        if not cand.overlaps(dst):
            return cand
        fallback = fallback or cand
    if fallback is None:
        # shift by one pixel: always possible since regions are at most (H-2)x(W-2)
        fallback = Rect(dst.top + 1 if dst.top + dst.height < H else dst.top - 1, dst.left, dst.height, dst.width)
    return fallback


def _donor_colours(rng: np.random.Generator, tone: int, tint: float):
    t = rng.uniform(0.5, 1.0) * tint
    cast = np.array([0.1, 0.45, 1.0]) * t
    bg = tuple(int(v) for v in np.clip(np.rint(tone - cast), 0, 255))
    ink = tuple(int(v) for v in np.clip(np.rint(np.array([45.0, 38.0, 30.0]) + cast * [0.2, 0.1, 0.0]), 0, 255))
    return bg, ink


def generate_sample(config: GenerationConfig, index: int, seed: int) -> GeneratedSample:
    """Pure function of (config, index, seed)."""
    s_seed = sample_seed(seed, index)
    rng = np.random.default_rng(s_seed)
    sid = f"{index:06d}"
    H, W = config.height, config.width

    tone = int(rng.integers(240, 256))
    ink = int(rng.integers(15, 50))
    donee = random_template(rng, H, W, (tone, tone, tone), (ink, ink, ink), config.grain)
    pristine = render_document(donee, int(rng.integers(2**31)))

    mix = np.asarray(config.category_mix, dtype=np.float64)
    category = int(rng.choice(4, p=mix / mix.sum())) + 1
    h, w = _region_size(rng, H, W, category)
    target = _place_on_text(rng, donee, h, w)

    if rng.random() < config.splice_fraction:
        bg, dink = _donor_colours(rng, int(rng.integers(235, 256)), config.donor_tint)
        donor_tmpl = random_template(rng, H, W, bg, dink, config.grain)
        donor_img = render_document(donor_tmpl, int(rng.integers(2**31)))
        donor_region = _place_on_text(rng, donor_tmpl, h, w)
        tampered, mask = splice(pristine, crop_donor(donor_img, donor_region), target)
        kind, source = "splice", f"{sid}-donor"
    else:
        donor_region = _copy_source(rng, donee, target)
        tampered, mask = copy_move(pristine, donor_region, target)
        kind, source = "copy_move", "self"

    slo, shi = config.noise_sigma_range
    sigma = float(round(rng.uniform(slo, shi), 3))
    qlo, qhi = config.jpeg_quality_range
    quality = int(rng.integers(qlo, qhi + 1)) if rng.random() < config.jpeg_probability else None
    noise_seed = int(rng.integers(2**31))
    noisy = add_gaussian_noise(tampered, sigma, np.random.default_rng(noise_seed))
    final = jpeg_roundtrip(noisy, quality) if quality is not None else noisy

    recipe = ForgeryRecipe(kind, source, donor_region, target, sigma, quality, noise_seed)
    r = ratio_fake(mask)
    sample = DocumentSample(sid, final, mask, recipe, r, categorize(r), {"seed": s_seed})
    return GeneratedSample(sample, pristine, tampered, noisy)


def iter_samples(config: GenerationConfig, count: int, seed: int, workers: Optional[int] = None) -> Iterator[GeneratedSample]:
    """Samples in id order; generation may run on ``workers`` threads."""
    if count < 1:
        raise ValueError("count must be at least 1")
    workers = workers or int(os.environ.get("CTPN_THREADS", "1") or 1)
    if workers <= 1:
        for i in range(count):
            yield generate_sample(config, i, seed)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda i: generate_sample(config, i, seed), range(count))


def manifest_record(sample: DocumentSample, image_path: str, mask_path: str) -> dict:
    rec = sample.recipe
    return {
        "id": sample.id,
        "image_path": image_path,
        "mask_path": mask_path,
        "kind": rec.kind,
        "noise_sigma": rec.noise_sigma,
        "jpeg_quality": rec.jpeg_quality,
        "ratio_fake": sample.ratio_fake,
        "category": sample.category,
        "seed": sample.meta["seed"],
        "donor_source": rec.donor_source,
        "donor_region": rec.donor_region.to_list(),
        "target_region": rec.target_region.to_list(),
        "noise_seed": rec.seed,
    }


def write_png_rgb(path: Path, image: np.ndarray) -> None:
    Image.fromarray(np.asarray(image, dtype=np.uint8), "RGB").save(path)


def write_png_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray((np.asarray(mask) != 0).astype(np.uint8) * 255, "L").save(path)


def generate_dataset(
    config: GenerationConfig, count: int, seed: int, out_dir, workers: Optional[int] = None
) -> List[dict]:
    """Write images/, masks/ and manifest.jsonl under ``out_dir``; returns the manifest records."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    with open(out / MANIFEST_NAME, "w") as fh:
        for g in iter_samples(config, count, seed, workers):
            s = g.sample
            img_rel, mask_rel = f"images/{s.id}.png", f"masks/{s.id}.png"
            write_png_rgb(out / img_rel, s.image)
            write_png_mask(out / mask_rel, s.mask)
            rec = manifest_record(s, img_rel, mask_rel)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            records.append(rec)
    logger.info("wrote %d samples to %s", len(records), out)
    return records


def read_manifest(path) -> List[dict]:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    with open(p) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_samples(path) -> List[DocumentSample]:
    """Read a generated dataset (directory or manifest path) back into samples."""
    p = Path(path)
    root = p if p.is_dir() else p.parent
    samples = []
    for rec in read_manifest(p):
        with Image.open(root / rec["image_path"]) as im:
            image = np.asarray(im.convert("RGB"), dtype=np.uint8).copy()
        with Image.open(root / rec["mask_path"]) as im:
            mask = (np.asarray(im.convert("L")) > 127).astype(np.uint8)
        recipe = ForgeryRecipe.from_dict(
            {
                "kind": rec["kind"],
                "donor_source": rec["donor_source"],
                "donor_region": rec["donor_region"],
                "target_region": rec["target_region"],
                "noise_sigma": rec["noise_sigma"],
                "jpeg_quality": rec["jpeg_quality"],
                "seed": rec["noise_seed"],
            }
        )
        samples.append(
            DocumentSample(rec["id"], image, mask, recipe, float(rec["ratio_fake"]), int(rec["category"]), {"seed": rec["seed"]})
        )
    return samples
