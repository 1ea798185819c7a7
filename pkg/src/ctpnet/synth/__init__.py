"""Synthetic forged-document generation with pixel-exact masks."""
from .generate import GenerationConfig, generate_dataset, generate_sample, load_samples, read_manifest
from .render import DocumentTemplate, Icon, TextLine, random_template, render_document
from .tamper import ForgeryRecipe, Rect, copy_move, crop_donor, jpeg_roundtrip, post_process, splice

__all__ = [
    "DocumentTemplate",
    "ForgeryRecipe",
    "GenerationConfig",
    "Icon",
    "Rect",
    "TextLine",
    "copy_move",
    "crop_donor",
    "generate_dataset",
    "generate_sample",
    "jpeg_roundtrip",
    "load_samples",
    "post_process",
    "random_template",
    "read_manifest",
    "render_document",
    "splice",
]
