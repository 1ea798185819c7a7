"""Synthetic document templates and their rasterization."""
from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .glyphs import GLYPH_H, text_bitmap, text_size

RGB = Tuple[int, int, int]


@dataclass(frozen=True)
class TextLine:
    text: str
    top: int
    left: int
    scale: int = 1

    def box(self) -> Tuple[int, int, int, int]:
        """(top, left, height, width)."""
        h, w = text_size(self.text, self.scale)
        return self.top, self.left, h, w


@dataclass(frozen=True)
class Icon:
    """Filled shape standing in for a brand mark or stamp."""

    kind: str  # "rect", "disc" or "ring"
    top: int
    left: int
    height: int
    width: int
    color: RGB


@dataclass
class DocumentTemplate:
    height: int = 128
    width: int = 128
    background: RGB = (250, 250, 250)
    ink: RGB = (30, 30, 30)
    lines: List[TextLine] = field(default_factory=list)
    icons: List[Icon] = field(default_factory=list)
    # std of per-pixel paper grain; 0 gives a perfectly flat background
    grain: float = 0.0

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("canvas must be non-empty")
        for ln in self.lines:
            t, l, h, w = ln.box()
            if t < 0 or l < 0 or t + h > self.height or l + w > self.width:
                raise ValueError(f"text line {ln.text!r} at ({t}, {l}) leaves the {self.height}x{self.width} canvas")
        for ic in self.icons:
            if ic.kind not in ("rect", "disc", "ring"):
                raise ValueError(f"unknown icon kind {ic.kind!r}")
            if ic.top < 0 or ic.left < 0 or ic.top + ic.height > self.height or ic.left + ic.width > self.width:
                raise ValueError(f"icon at ({ic.top}, {ic.left}) leaves the canvas")


def _icon_mask(ic: Icon) -> np.ndarray:
    if ic.kind == "rect":
        return np.ones((ic.height, ic.width), dtype=bool)
    yy, xx = np.mgrid[0 : ic.height, 0 : ic.width]
    cy, cx = (ic.height - 1) / 2, (ic.width - 1) / 2
    ry, rx = max(ic.height / 2, 0.5), max(ic.width / 2, 0.5)
    d = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2
    if ic.kind == "disc":
        return d <= 1.0
    return (d <= 1.0) & (d >= 0.55)


def render_document(template: DocumentTemplate, seed: int = 0) -> np.ndarray:
    """Rasterize to uint8 (H, W, 3): background (+grain), icons, then text."""
    template.validate()
    h, w = template.height, template.width
    img = np.empty((h, w, 3), dtype=np.float64)
    img[...] = template.background
    if template.grain > 0:
        rng = np.random.default_rng(seed)
        img += rng.normal(0.0, template.grain, (h, w, 1))
    for ic in template.icons:
        region = img[ic.top : ic.top + ic.height, ic.left : ic.left + ic.width]
        region[_icon_mask(ic)] = ic.color
    for ln in template.lines:
        bmp = text_bitmap(ln.text, ln.scale)
        region = img[ln.top : ln.top + bmp.shape[0], ln.left : ln.left + bmp.shape[1]]
        region[bmp] = template.ink
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


_WORDS = ("NO.", "DATE", "ADDR", "REG", "CLASS", "NOTARY", "VALID", "ISSUED", "CODE", "TEL")
_STREETS = ("WEST RD", "NORTH ST", "HILL AVE", "PARK LN", "EAST RD", "RIVER ST")


def _random_text(rng: np.random.Generator, max_chars: int) -> str:
    kind = int(rng.integers(0, 5))
    if kind == 0:
        text = f"NO. {int(rng.integers(10**6, 10**8))}"
    elif kind == 1:
        text = f"DATE {int(rng.integers(1990, 2030))}-{int(rng.integers(1, 13)):02d}-{int(rng.integers(1, 29)):02d}"
    elif kind == 2:
        text = f"ADDR {int(rng.integers(1, 999))} {_STREETS[int(rng.integers(len(_STREETS)))]}"
    elif kind == 3:
        word = _WORDS[int(rng.integers(len(_WORDS)))]
        text = f"{word}: {int(rng.integers(1, 99999))}"
    else:
        letters = string.ascii_uppercase
        n = int(rng.integers(3, 9))
        text = "".join(letters[int(i)] for i in rng.integers(0, 26, n))
        text += " " + "".join(letters[int(i)] for i in rng.integers(0, 26, int(rng.integers(3, 8))))
    return text[:max_chars].rstrip()


def random_template(
    rng: np.random.Generator,
    height: int = 128,
    width: int = 128,
    background: RGB = (250, 250, 250),
    ink: RGB = (30, 30, 30),
    grain: float = 0.0,
) -> DocumentTemplate:
    """Trademark-registration-like page: a brand block, a stamp ring and rows of text."""
    scale = max(1, min(height, width) // 160 + 1)
    margin = max(2, width // 24)
    line_h = GLYPH_H * scale
    gap = max(2, line_h // 2 + int(rng.integers(0, 3)))
    lines: List[TextLine] = []
    icons: List[Icon] = []

    brand = max(8, min(height, width) // 5)
    icons.append(
        Icon(
            "rect" if rng.random() < 0.5 else "disc",
            margin,
            width - margin - brand,
            brand,
            brand,
            tuple(int(v) for v in rng.integers(40, 200, 3)),  # type: ignore[arg-type]
        )
    )
    stamp = max(10, min(height, width) // 4)
    icons.append(
        Icon(
            "ring",
            height - margin - stamp,
            width - margin - stamp - int(rng.integers(0, max(1, width // 4))),
            stamp,
            stamp,
            (200, 40, 40),
        )
    )

    char_w = 6 * scale
    top = margin
    while top + line_h <= height - margin:
        right_limit = width - margin
        if top < margin + brand + 1:
            right_limit = width - 2 * margin - brand
        max_chars = (right_limit - margin + scale) // char_w
        if max_chars >= 3:
            text = _random_text(rng, max_chars)
            if text:
                lines.append(TextLine(text, top, margin + int(rng.integers(0, 2 * scale + 1)), scale))
        top += line_h + gap
    tmpl = DocumentTemplate(height, width, background, ink, lines, icons, grain)
    # drop any line that ended up past the right edge after the jitter
    tmpl.lines = [ln for ln in tmpl.lines if ln.box()[1] + ln.box()[3] <= width]
    tmpl.validate()
    return tmpl
