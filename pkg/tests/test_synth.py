import json
from collections import Counter

import numpy as np
import pytest

from ctpnet.metrics import categorize, ratio_fake
from ctpnet.synth import (
    DocumentTemplate,
    ForgeryRecipe,
    GenerationConfig,
    Icon,
    Rect,
    TextLine,
    copy_move,
    crop_donor,
    generate_dataset,
    generate_sample,
    load_samples,
    post_process,
    random_template,
    read_manifest,
    render_document,
    splice,
)
from ctpnet.synth.glyphs import CHARSET, GLYPH_H, GLYPH_W, glyph, text_bitmap, text_size
from ctpnet.synth.tamper import add_gaussian_noise, jpeg_roundtrip


def test_glyph_table_shapes():
    assert "A" in CHARSET and "0" in CHARSET
    for ch in CHARSET:
        assert glyph(ch).shape == (GLYPH_H, GLYPH_W)
    assert glyph("a").tobytes() == glyph("A").tobytes()
    assert not glyph(" ").any()


def test_text_bitmap_scaling():
    bmp = text_bitmap("AB", scale=2)
    assert bmp.shape == text_size("AB", 2) == (14, 22)
    np.testing.assert_array_equal(bmp[::2, ::2][:, :5], glyph("A"))


def test_empty_template_is_uniform():
    img = render_document(DocumentTemplate(20, 30, background=(240, 241, 242)))
    assert img.shape == (20, 30, 3)
    assert (img == np.array([240, 241, 242], np.uint8)).all()


def test_single_glyph_exact_pattern():
    tmpl = DocumentTemplate(30, 30, (255, 255, 255), (0, 0, 0), [TextLine("A", 5, 7, 2)])
    img = render_document(tmpl)
    dark = (img[..., 0] == 0)
    expect = np.zeros((30, 30), bool)
    expect[5:19, 7:17] = np.kron(glyph("A"), np.ones((2, 2), bool))
    np.testing.assert_array_equal(dark, expect)


def test_render_deterministic_and_bounds():
    rng = np.random.default_rng(0)
    tmpl = random_template(rng, grain=2.0)
    assert render_document(tmpl, 5).tobytes() == render_document(tmpl, 5).tobytes()
    with pytest.raises(ValueError):
        render_document(DocumentTemplate(10, 10, lines=[TextLine("ABC", 0, 0)]))
    with pytest.raises(ValueError):
        render_document(DocumentTemplate(10, 10, icons=[Icon("rect", 5, 5, 8, 8, (0, 0, 0))]))


def test_random_template_scales_to_large_canvas():
    tmpl = random_template(np.random.default_rng(1), 750, 820)
    img = render_document(tmpl)
    assert img.shape == (750, 820, 3)
    assert tmpl.lines and tmpl.lines[0].scale > 1


@pytest.fixture
def canvas():
    return np.random.default_rng(3).integers(0, 256, (100, 100, 3), dtype=np.uint8)


def test_crop_donor(canvas):
    full = Rect(0, 0, 100, 100)
    np.testing.assert_array_equal(crop_donor(canvas, full), canvas)
    np.testing.assert_array_equal(crop_donor(canvas, Rect(4, 9, 1, 1))[0, 0], canvas[4, 9])
    r = Rect(10, 20, 30, 15)
    out, _ = splice(canvas, crop_donor(canvas, r), r)
    np.testing.assert_array_equal(out, canvas)
    with pytest.raises(ValueError):
        crop_donor(canvas, Rect(90, 90, 20, 5))


def test_splice_contract(canvas):
    r = Rect(10, 10, 10, 10)
    out, mask = splice(canvas, crop_donor(canvas, r), r)
    assert mask.sum() == 100 and (out == canvas).all()
    donor = np.zeros((10, 10, 3), np.uint8)
    out, mask = splice(canvas, donor, Rect(50, 60, 10, 10))
    outside = mask == 0
    np.testing.assert_array_equal(out[outside], canvas[outside])
    assert (out[50:60, 60:70] == 0).all()
    with pytest.raises(ValueError):
        splice(canvas, donor, Rect(0, 0, 5, 10))


def test_copy_move_contract(canvas):
    src, dst = Rect(0, 0, 20, 30), Rect(50, 40, 20, 30)
    out, mask = copy_move(canvas, src, dst)
    np.testing.assert_array_equal(out[0:20, 0:30], canvas[0:20, 0:30])
    np.testing.assert_array_equal(out[50:70, 40:70], canvas[0:20, 0:30])
    assert mask.sum() == dst.area
    with pytest.raises(ValueError):
        copy_move(canvas, src, src)
    with pytest.raises(ValueError):
        copy_move(canvas, src, Rect(0, 0, 10, 10))


def test_post_process_identity_and_determinism(canvas):
    assert post_process(canvas, 0.0, None, 1).tobytes() == canvas.tobytes()
    a = add_gaussian_noise(canvas, 3.0, np.random.default_rng(9))
    b = add_gaussian_noise(canvas, 3.0, np.random.default_rng(9))
    assert a.tobytes() == b.tobytes()
    with pytest.raises(ValueError):
        post_process(canvas, 1.0, 0, 1)
    with pytest.raises(ValueError):
        post_process(canvas, -1.0, None, 1)


def test_post_process_noise_moments_on_flat_image():
    flat = np.full((128, 128, 3), 128, np.uint8)
    out = post_process(flat, 5.0, 90, 4).astype(float)
    assert out.shape == flat.shape
    dev = out - 128
    # 4:2:0 JPEG at q90 smooths chroma, so the residual std sits a little below sigma
    assert abs(dev.mean()) < 0.5
    assert 3.0 < dev.std() < 5.6
    pre = post_process(flat, 5.0, None, 4).astype(float) - 128
    # rounding adds 1/12 variance: expected std ~ sqrt(25 + 1/12)
    assert abs(pre.std() - np.sqrt(25 + 1 / 12)) < 0.15


def test_jpeg_subsampling_switch():
    img = np.random.default_rng(0).integers(0, 256, (32, 32, 3), dtype=np.uint8)
    low, high = jpeg_roundtrip(img, 80), jpeg_roundtrip(img, 98)
    assert low.shape == high.shape == img.shape
    assert np.abs(high.astype(int) - img).mean() < np.abs(low.astype(int) - img).mean()


def test_recipe_validation():
    with pytest.raises(ValueError):
        ForgeryRecipe("splice", "x", Rect(0, 0, 2, 2), Rect(0, 0, 3, 2), 0.0, None, 0)
    with pytest.raises(ValueError):
        ForgeryRecipe("erase", "x", Rect(0, 0, 2, 2), Rect(0, 0, 2, 2), 0.0, None, 0)
    r = ForgeryRecipe("copy_move", "self", Rect(0, 0, 2, 2), Rect(4, 4, 2, 2), 1.5, 80, 3)
    assert ForgeryRecipe.from_dict(r.to_dict()) == r


def test_generated_mask_is_exactly_the_target_region():
    cfg = GenerationConfig()
    for i in range(40):
        g = generate_sample(cfg, i, 11)
        s = g.sample
        expect = np.zeros(s.mask.shape, np.uint8)
        rows, cols = s.recipe.target_region.slices()
        expect[rows, cols] = 1
        np.testing.assert_array_equal(s.mask, expect)
        changed = (g.tampered != g.pristine).any(axis=2)
        assert not (changed & (s.mask == 0)).any()
        assert s.recipe.donor_region.size == s.recipe.target_region.size
        assert s.image.shape[:2] == s.mask.shape
        assert s.ratio_fake == ratio_fake(s.mask) and s.category == categorize(s.ratio_fake)


def test_generation_is_pure():
    cfg = GenerationConfig(splice_fraction=0.5)
    a, b = generate_sample(cfg, 5, 2), generate_sample(cfg, 5, 2)
    assert a.noisy.tobytes() == b.noisy.tobytes()
    assert a.sample.recipe == b.sample.recipe
    assert generate_sample(cfg, 6, 2).noisy.tobytes() != a.noisy.tobytes()


def test_both_tamper_kinds_occur():
    kinds = Counter(generate_sample(GenerationConfig(), i, 0).sample.recipe.kind for i in range(30))
    assert kinds["splice"] > 0 and kinds["copy_move"] > 0


def test_category_mix_is_tracked():
    mix = (0.25, 0.25, 0.25, 0.25)
    cfg = GenerationConfig(category_mix=mix)
    counts = Counter(generate_sample(cfg, i, 21).sample.category for i in range(200))
    for cat, target in zip((1, 2, 3, 4), mix):
        assert abs(counts[cat] / 200 - target) <= 0.10


def test_generate_dataset_files_and_manifest(tmp_path):
    records = generate_dataset(GenerationConfig(), 10, 3, tmp_path)
    assert len(list((tmp_path / "images").glob("*.png"))) == 10
    assert len(list((tmp_path / "masks").glob("*.png"))) == 10
    lines = (tmp_path / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 10
    assert read_manifest(tmp_path) == records
    required = {"id", "image_path", "mask_path", "kind", "noise_sigma", "jpeg_quality", "ratio_fake", "category", "seed"}
    assert required <= set(json.loads(lines[0]))
    samples = load_samples(tmp_path)
    for rec, s in zip(records, samples):
        assert ratio_fake(s.mask) == rec["ratio_fake"]
        assert categorize(ratio_fake(s.mask)) == rec["category"]


def test_threaded_generation_matches_serial(tmp_path):
    a = generate_dataset(GenerationConfig(), 6, 4, tmp_path / "a", workers=1)
    b = generate_dataset(GenerationConfig(), 6, 4, tmp_path / "b", workers=3)
    assert a == b
    assert (tmp_path / "a/images/000005.png").read_bytes() == (tmp_path / "b/images/000005.png").read_bytes()


def test_config_validation():
    with pytest.raises(ValueError):
        GenerationConfig(category_mix=(1, 0, 0))
    with pytest.raises(ValueError):
        GenerationConfig(jpeg_quality_range=(0, 90))
    with pytest.raises(ValueError):
        generate_dataset(GenerationConfig(), 0, 0, "/tmp/never")
