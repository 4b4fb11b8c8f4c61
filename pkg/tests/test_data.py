"""Tests for image I/O, bicubic resampling, manifests, and the corpus."""

import math
import os

import numpy as np
import pytest
from PIL import Image

from pdsr import data
from pdsr.exceptions import ContractError, DimensionError, FormatError


# ---------------------------------------------------------------------------
# PNG round trips
# ---------------------------------------------------------------------------


def test_png_round_trip_identity(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(3, 12, 10)).astype(np.float64) / 255.0
    path = tmp_path / "a.png"
    data.save_png(path, img)
    again = data.load_png(path)
    assert np.array_equal(again, img)


def test_png_half_rounds_away_from_zero(tmp_path):
    img = np.full((3, 2, 2), 0.5)
    path = tmp_path / "h.png"
    data.save_png(path, img)
    with Image.open(path) as im:
        assert np.asarray(im)[0, 0, 0] == 128  # round(127.5) away from zero


def test_png_save_clamps(tmp_path):
    img = np.zeros((3, 2, 2))
    img[0] = 1.7
    img[1] = -0.3
    path = tmp_path / "c.png"
    data.save_png(path, img)
    arr = np.asarray(Image.open(path))
    assert arr[..., 0].max() == 255
    assert arr[..., 1].max() == 0


def test_load_png_rejects_palette_and_16bit(tmp_path):
    pal = Image.new("P", (4, 4))
    pal_path = tmp_path / "p.png"
    pal.save(pal_path)
    with pytest.raises(FormatError):
        data.load_png(pal_path)

    gray16 = Image.new("I;16", (4, 4))
    g_path = tmp_path / "g.png"
    gray16.save(g_path)
    with pytest.raises(FormatError):
        data.load_png(g_path)

    rgba = Image.new("RGBA", (4, 4))
    a_path = tmp_path / "a.png"
    rgba.save(a_path)
    with pytest.raises(FormatError):
        data.load_png(a_path)


def test_load_png_rejects_non_png(tmp_path):
    bad = tmp_path / "x.png"
    bad.write_bytes(b"definitely not a png")
    with pytest.raises(FormatError):
        data.load_png(bad)


def test_save_png_shape_check(tmp_path):
    with pytest.raises(DimensionError):
        data.save_png(tmp_path / "bad.png", np.zeros((1, 4, 4)))


# ---------------------------------------------------------------------------
# bicubic resize
# ---------------------------------------------------------------------------


def test_resize_identity():
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(3, 9, 7))
    out = data.bicubic_resize(img, 9, 7)
    assert np.max(np.abs(out - img)) <= 1e-12


def test_resize_constant_preserved_any_size():
    img = np.full((3, 8, 8), 0.37)
    for oh, ow in [(2, 2), (3, 5), (8, 8), (16, 16), (13, 4), (1, 1)]:
        out = data.bicubic_resize(img, oh, ow)
        assert out.shape == (3, oh, ow)
        assert np.max(np.abs(out - 0.37)) <= 1e-12


def _cubic(t):
    t = abs(t)
    if t <= 1.0:
        return 1.5 * t**3 - 2.5 * t**2 + 1.0
    if t < 2.0:
        return -0.5 * t**3 + 2.5 * t**2 - 4.0 * t + 2.0
    return 0.0


def _reflect(j, n):
    while j < 0 or j >= n:
        j = -j if j < 0 else 2 * n - 2 - j
    return j


def test_resize_downscale_matches_loop_oracle():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(3, 8, 8))
    out = data.bicubic_resize(img, 2, 2)

    def axis_weights(n_in, n_out, i):
        s = n_in / n_out
        sup = max(1.0, s)
        src = (i + 0.5) * s - 0.5
        taps = range(int(math.ceil(src - 2 * sup)), int(math.floor(src + 2 * sup)) + 1)
        pairs = [(j, _cubic((j - src) / sup)) for j in taps]
        total = sum(w for _, w in pairs)
        return [(_reflect(j, n_in), w / total) for j, w in pairs]

    expected = np.zeros((3, 2, 2))
    for c in range(3):
        for oy in range(2):
            for ox in range(2):
                acc = 0.0
                for jy, wy in axis_weights(8, 2, oy):
                    for jx, wx in axis_weights(8, 2, ox):
                        acc += wy * wx * img[c, jy, jx]
                expected[c, oy, ox] = acc
    assert np.max(np.abs(out - expected)) <= 1e-10


def test_resize_upscale_then_shape():
    rng = np.random.default_rng(3)
    img = rng.uniform(size=(3, 4, 6))
    out = data.bicubic_resize(img, 16, 24)
    assert out.shape == (3, 16, 24)
    assert np.all(np.isfinite(out))


def test_resize_contract_errors():
    with pytest.raises(ContractError):
        data.bicubic_resize(np.zeros((3, 4, 4)), 0, 4)
    with pytest.raises(DimensionError):
        data.bicubic_resize(np.zeros((4, 4)), 2, 2)


def test_resize_linear_ramp_downscale_reasonable():
    # Downscaling an axis-aligned linear ramp keeps it (approximately) a ramp.
    img = np.tile(np.linspace(0.0, 1.0, 16)[None, None, :], (3, 16, 1))
    out = data.bicubic_resize(img, 4, 4)
    row = out[0, 0]
    diffs = np.diff(row)
    assert np.all(diffs > 0)
    assert abs(row.mean() - 0.5) <= 0.02


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def _write_corpus(tmp_path, n=3, size=16):
    hr_dir = tmp_path / "hr_src"
    data.generate_synthetic_corpus(hr_dir, n, size, seed=0)
    return hr_dir


def test_prepare_dataset_basic(tmp_path):
    hr_dir = _write_corpus(tmp_path, n=3, size=16)
    out_dir = tmp_path / "out"
    manifest = data.prepare_dataset(hr_dir, out_dir, scale=4)
    assert len(manifest.entries) == 3
    assert (out_dir / "manifest.tsv").exists()
    lr = data.load_png(out_dir / "lr" / "0000.png")
    hr = data.load_png(out_dir / "hr" / "0000.png")
    assert hr.shape == (3, 16, 16)
    assert lr.shape == (3, 4, 4)


def test_prepare_dataset_idempotent(tmp_path):
    hr_dir = _write_corpus(tmp_path, n=2, size=16)
    out_dir = tmp_path / "out"
    data.prepare_dataset(hr_dir, out_dir, scale=2)
    first = {
        p: (out_dir / p).read_bytes()
        for p in ["manifest.tsv", "hr/0000.png", "lr/0000.png", "hr/0001.png", "lr/0001.png"]
    }
    data.prepare_dataset(hr_dir, out_dir, scale=2)
    for p, blob in first.items():
        assert (out_dir / p).read_bytes() == blob, f"{p} changed on re-run"


def test_prepare_dataset_crops_to_multiple(tmp_path):
    hr_dir = tmp_path / "odd"
    os.makedirs(hr_dir)
    rng = np.random.default_rng(5)
    data.save_png(hr_dir / "img.png", rng.uniform(size=(3, 65, 65)))
    out_dir = tmp_path / "out"
    data.prepare_dataset(hr_dir, out_dir, scale=4)
    hr = data.load_png(out_dir / "hr" / "0000.png")
    assert hr.shape == (3, 64, 64)


def test_prepare_dataset_empty_dir_errors(tmp_path):
    empty = tmp_path / "empty"
    os.makedirs(empty)
    with pytest.raises(ContractError):
        data.prepare_dataset(empty, tmp_path / "out", scale=4)


def test_manifest_round_trip_and_validation(tmp_path):
    hr_dir = _write_corpus(tmp_path, n=3, size=16)
    out_dir = tmp_path / "out"
    manifest = data.prepare_dataset(hr_dir, out_dir, scale=4)
    loaded = data.load_manifest(out_dir / "manifest.tsv", scale=4)
    assert loaded.entries == manifest.entries

    samples = data.load_samples(loaded, str(out_dir))
    assert [s.sample_id for s in samples] == ["0000", "0001", "0002"]
    assert samples[0].hr.shape == (3, 16, 16)
    assert samples[0].lr.shape == (3, 4, 4)


def test_manifest_rejects_bad_rows(tmp_path):
    bad = tmp_path / "m.tsv"
    bad.write_text("0000\tonly_two_fields\n", encoding="utf-8")
    with pytest.raises(FormatError):
        data.load_manifest(bad, scale=4)

    bad.write_text("0000\tmissing.png\talso_missing.png\n", encoding="utf-8")
    with pytest.raises(FormatError):
        data.load_manifest(bad, scale=4)


def test_manifest_dense_id_invariant():
    with pytest.raises(FormatError):
        data.DatasetManifest(
            entries=(("0000", "a", "b"), ("0002", "c", "d")),
            scale=4, patch_size_lr=16, split="train",
        )
    with pytest.raises(FormatError):
        data.DatasetManifest(
            entries=(("0000", "a", "b"), ("0000", "c", "d")),
            scale=4, patch_size_lr=16, split="train",
        )


def test_split_manifest_tail():
    entries = tuple((f"{i:04d}", f"hr/{i}.png", f"lr/{i}.png") for i in range(5))
    manifest = data.DatasetManifest(entries=entries, scale=4, patch_size_lr=16, split="all")
    train, val = data.split_manifest(manifest, 2)
    assert len(train.entries) == 3 and len(val.entries) == 2
    assert [e[0] for e in val.entries] == ["0000", "0001"]  # re-numbered dense
    assert val.entries[0][1] == "hr/3.png"
    with pytest.raises(ContractError):
        data.split_manifest(manifest, 5)


# ---------------------------------------------------------------------------
# patch sampling
# ---------------------------------------------------------------------------


def _coord_encoded_sample(lr_size=19, patch=16, scale=2):
    # Pixel values encode LR coordinates so patch origins can be recovered.
    lr = np.zeros((3, lr_size, lr_size))
    lr[0] = np.arange(lr_size * lr_size).reshape(lr_size, lr_size) / (lr_size * lr_size)
    hr = np.zeros((3, scale * lr_size, scale * lr_size))
    return data.Sample(sample_id="0000", lr=lr, hr=hr)


def test_patch_pairs_shapes_and_determinism():
    rng = np.random.default_rng(8)
    samples = [
        data.Sample("0000", rng.uniform(size=(3, 8, 8)), rng.uniform(size=(3, 16, 16))),
        data.Sample("0001", rng.uniform(size=(3, 10, 9)), rng.uniform(size=(3, 20, 18))),
    ]
    a = data.extract_patch_pairs(samples, 4, 12, seed=5)
    b = data.extract_patch_pairs(samples, 4, 12, seed=5)
    assert len(a) == 12
    for (lr1, hr1), (lr2, hr2) in zip(a, b):
        assert lr1.shape == (3, 4, 4)
        assert hr1.shape == (3, 8, 8)
        assert np.array_equal(lr1, lr2)
        assert np.array_equal(hr1, hr2)
    c = data.extract_patch_pairs(samples, 4, 12, seed=6)
    assert any(not np.array_equal(x[0], y[0]) for x, y in zip(a, c))


def test_patch_pairs_count_zero():
    assert data.extract_patch_pairs([], 4, 0, seed=0) == []


def test_patch_pairs_alignment():
    sample = _coord_encoded_sample(lr_size=12, patch=4, scale=2)
    sample.hr[0] = np.repeat(np.repeat(sample.lr[0], 2, axis=0), 2, axis=1)
    pairs = data.extract_patch_pairs([sample], 4, 20, seed=3)
    for lr_patch, hr_patch in pairs:
        # HR patch is the pixel-replicated LR patch under this construction.
        assert np.array_equal(
            hr_patch[0], np.repeat(np.repeat(lr_patch[0], 2, axis=0), 2, axis=1)
        )


def test_patch_pairs_skip_small_images(caplog):
    rng = np.random.default_rng(9)
    samples = [
        data.Sample("0000", rng.uniform(size=(3, 2, 2)), rng.uniform(size=(3, 4, 4))),
        data.Sample("0001", rng.uniform(size=(3, 8, 8)), rng.uniform(size=(3, 16, 16))),
    ]
    with caplog.at_level("WARNING", logger="pdsr.data"):
        pairs = data.extract_patch_pairs(samples, 8, 5, seed=0)
    assert len(pairs) == 5
    assert any("skipped" in rec.message for rec in caplog.records)

    with pytest.raises(ContractError):
        data.extract_patch_pairs(samples[:1], 8, 5, seed=0)


def test_patch_coordinates_uniform_chi_square():
    # LR 19x19 with patch 16 -> 4x4 possible origins; recover each draw's
    # origin from the encoded corner pixel and test uniformity over 10k
    # draws. Critical value: chi-square, 15 dof, upper 0.001 tail.
    lr_size, patch = 19, 16
    sample = _coord_encoded_sample(lr_size=lr_size, patch=patch, scale=2)
    pairs = data.extract_patch_pairs([sample], patch, 10_000, seed=11)
    counts = np.zeros((4, 4))
    for lr_patch, _hr in pairs:
        code = round(lr_patch[0, 0, 0] * (lr_size * lr_size))
        y0, x0 = divmod(code, lr_size)
        counts[y0, x0] += 1
    expected = 10_000 / 16.0
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 <= 37.697, f"chi-square {chi2} exceeds the 0.001 critical value"


# ---------------------------------------------------------------------------
# synthetic corpus
# ---------------------------------------------------------------------------


def test_corpus_deterministic_and_count_independent(tmp_path):
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    data.generate_synthetic_corpus(a_dir, 3, 16, seed=42)
    data.generate_synthetic_corpus(b_dir, 5, 16, seed=42)
    for i in range(3):
        a = (a_dir / f"{i:04d}.png").read_bytes()
        b = (b_dir / f"{i:04d}.png").read_bytes()
        assert a == b  # image i depends only on (seed, i)


def test_corpus_images_are_valid_and_textured(tmp_path):
    paths = data.generate_synthetic_corpus(tmp_path / "c", 4, 32, seed=7)
    for p in paths:
        img = data.load_png(p)
        assert img.shape == (3, 32, 32)
        assert img.min() >= 0.0 and img.max() <= 1.0
        assert img.std() > 0.02  # non-degenerate texture


def test_corpus_different_seeds_differ(tmp_path):
    data.generate_synthetic_corpus(tmp_path / "s1", 1, 16, seed=1)
    data.generate_synthetic_corpus(tmp_path / "s2", 1, 16, seed=2)
    a = (tmp_path / "s1" / "0000.png").read_bytes()
    b = (tmp_path / "s2" / "0000.png").read_bytes()
    assert a != b


def test_corpus_contract_errors(tmp_path):
    with pytest.raises(ContractError):
        data.generate_synthetic_corpus(tmp_path / "x", 0, 16, seed=0)
    with pytest.raises(ContractError):
        data.generate_synthetic_corpus(tmp_path / "x", 1, 4, seed=0)
