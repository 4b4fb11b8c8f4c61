"""End-to-end tests for the command-line pipeline."""

import json
import math
import os

import numpy as np
import pytest

from pdsr import cli, data
from pdsr import models as md
from pdsr import training as tr


def _run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    """A prepared 4-image synthetic dataset at scale 2 (16x16 HR, 8x8 LR)."""
    root = tmp_path_factory.mktemp("dataset")
    hr_dir = root / "hr_src"
    out_dir = root / "data"
    rc = _run(
        "prepare", hr_dir, out_dir, "--scale", 2, "--synthetic", 4, "--synthetic-size", 16
    )
    assert rc == 0
    return out_dir


def _write_config(path, data_dir, out_dir, **admm_extra):
    admm = {
        "rho": 0.01,
        "pretrain_epochs": 1,
        "admm_rounds": 1,
        "batch_size": 2,
        "lr_schedule": [[0, 0.001]],
        "pretrain_lr": 0.001,
        "seed": 0,
    }
    admm.update(admm_extra)
    cfg = {
        "model": {
            "go_blocks": 1,
            "gp_blocks": 1,
            "channels": 4,
            "scale": 2,
            "disc_channels": 4,
            "seed": 0,
        },
        "admm": admm,
        "cx": {"feature_dim": 8, "patch_size": 3, "patch_stride": 4},
        "run": {"data_dir": str(data_dir), "out_dir": str(out_dir), "val_count": 1},
    }
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def _data_rows(csv_path):
    lines = csv_path.read_text(encoding="utf-8").splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    return body[0], body[1:]  # header, rows


def _fresh_checkpoint(path, seed=0, scale=2):
    cfg = md.ModelConfig(
        go_blocks=1, gp_blocks=1, channels=4, scale=scale, disc_channels=4, seed=seed
    )
    bundle = tr.ModelBundle.create(cfg)
    md.save_checkpoint(path, md.Checkpoint(model_config=cfg, params=bundle.flat_params()))
    return path


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------


def test_prepare_outputs(dataset_dir):
    manifest = (dataset_dir / "manifest.tsv").read_text(encoding="utf-8")
    assert len(manifest.splitlines()) == 4
    lr = data.load_png(dataset_dir / "lr" / "0000.png")
    hr = data.load_png(dataset_dir / "hr" / "0000.png")
    assert lr.shape == (3, 8, 8)
    assert hr.shape == (3, 16, 16)


def test_prepare_missing_dir_exits_2(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    rc = _run("prepare", missing, tmp_path / "out", "--scale", 2)
    assert rc == 2
    assert "nowhere" in capsys.readouterr().err


def test_prepare_rerun_is_idempotent(tmp_path):
    hr_dir = tmp_path / "hr"
    out_dir = tmp_path / "out"
    assert _run("prepare", hr_dir, out_dir, "--scale", 2, "--synthetic", 2,
                "--synthetic-size", 16) == 0
    names = ["manifest.tsv", "hr/0000.png", "lr/0000.png", "hr/0001.png", "lr/0001.png"]
    first = {n: (out_dir / n).read_bytes() for n in names}
    assert _run("prepare", hr_dir, out_dir, "--scale", 2, "--synthetic", 2,
                "--synthetic-size", 16) == 0
    for n in names:
        assert (out_dir / n).read_bytes() == first[n]


def test_prepare_val_split(tmp_path):
    hr_dir = tmp_path / "hr"
    out_dir = tmp_path / "out"
    rc = _run("prepare", hr_dir, out_dir, "--scale", 2, "--synthetic", 4,
              "--synthetic-size", 16, "--val-count", 1)
    assert rc == 0
    assert len((out_dir / "manifest.tsv").read_text().splitlines()) == 3
    assert len((out_dir / "manifest_val.tsv").read_text().splitlines()) == 1


# ---------------------------------------------------------------------------
# train / ablate-lf
# ---------------------------------------------------------------------------


def test_train_pdadmm_writes_report_and_checkpoints(dataset_dir, tmp_path):
    out_dir = tmp_path / "run"
    cfg_path = _write_config(tmp_path / "cfg.json", dataset_dir, out_dir)
    assert _run("train", cfg_path, "--mode", "pdadmm") == 0

    report = out_dir / "report_pdadmm.csv"
    text = report.read_text(encoding="utf-8")
    assert text.startswith("# config: {")
    assert "# mode: pdadmm" in text
    assert "# extractor: dwt" in text
    header, rows = _data_rows(report)
    assert header.startswith("round,loss_o,")
    assert len(rows) == 1

    for name in ("pretrain.ckpt", "round_0001.ckpt", "final.ckpt"):
        assert (out_dir / "ckpt_pdadmm" / name).exists()
    ckpt = md.load_checkpoint(out_dir / "ckpt_pdadmm" / "final.ckpt")
    bundle = tr.bundle_from_checkpoint(ckpt)
    y_prime, y = tr.super_resolve_pair(bundle, np.zeros((1, 3, 8, 8)))
    assert y.shape == (1, 3, 16, 16) and np.all(np.isfinite(y))


def test_ablate_dwt_matches_train_pdadmm_bytes(dataset_dir, tmp_path):
    out_dir = tmp_path / "run"
    cfg_path = _write_config(tmp_path / "cfg.json", dataset_dir, out_dir)
    assert _run("train", cfg_path, "--mode", "pdadmm") == 0
    report_a = (out_dir / "report_pdadmm.csv").read_bytes()
    final_a = (out_dir / "ckpt_pdadmm" / "final.ckpt").read_bytes()

    assert _run("ablate-lf", cfg_path, "--extractor", "dwt") == 0
    assert (out_dir / "report_pdadmm.csv").read_bytes() == report_a
    assert (out_dir / "ckpt_pdadmm" / "final.ckpt").read_bytes() == final_a


def test_ablate_gaussian_completes(dataset_dir, tmp_path):
    out_dir = tmp_path / "run"
    cfg_path = _write_config(tmp_path / "cfg.json", dataset_dir, out_dir)
    assert _run("ablate-lf", cfg_path, "--extractor", "gaussian",
                "--set", "run.gaussian_ksize=5") == 0
    text = (out_dir / "report_pdadmm.csv").read_text(encoding="utf-8")
    assert "# extractor: gaussian" in text
    _header, rows = _data_rows(out_dir / "report_pdadmm.csv")
    cells = rows[0].split(",")
    assert all(math.isfinite(float(c)) for c in cells[:8])  # losses and residuals


def test_train_zero_rounds_emits_pretrain_only(dataset_dir, tmp_path):
    out_dir = tmp_path / "run"
    cfg_path = _write_config(tmp_path / "cfg.json", dataset_dir, out_dir)
    assert _run("train", cfg_path, "--set", "admm.admm_rounds=0") == 0
    _header, rows = _data_rows(out_dir / "report_pdadmm.csv")
    assert rows == []
    assert (out_dir / "ckpt_pdadmm" / "pretrain.ckpt").exists()
    assert (out_dir / "ckpt_pdadmm" / "final.ckpt").exists()


def test_train_other_modes_run(dataset_dir, tmp_path):
    out_dir = tmp_path / "run"
    cfg_path = _write_config(tmp_path / "cfg.json", dataset_dir, out_dir)
    assert _run("train", cfg_path, "--mode", "baseline") == 0
    _h, rows = _data_rows(out_dir / "report_baseline.csv")
    assert len(rows) == 1
    assert _run("train", cfg_path, "--mode", "po-swap") == 0
    _h, rows = _data_rows(out_dir / "report_po-swap.csv")
    assert len(rows) == 1


def test_train_resume_from_pretrain(dataset_dir, tmp_path):
    out_dir = tmp_path / "run"
    cfg_path = _write_config(tmp_path / "cfg.json", dataset_dir, out_dir)
    assert _run("train", cfg_path, "--set", "admm.admm_rounds=0") == 0
    pretrain = out_dir / "ckpt_pdadmm" / "pretrain.ckpt"
    out2 = tmp_path / "resumed"
    cfg2 = _write_config(tmp_path / "cfg2.json", dataset_dir, out2)
    assert _run("train", cfg2, "--resume", pretrain) == 0
    _h, rows = _data_rows(out2 / "report_pdadmm.csv")
    assert len(rows) == 1


def test_train_unknown_config_key_exits_2(dataset_dir, tmp_path, capsys):
    cfg_path = tmp_path / "bad.json"
    cfg_path.write_text(json.dumps({"admm": {"bogus": 1}}))
    assert _run("train", cfg_path) == 2
    assert "bogus" in capsys.readouterr().err


def test_train_divergence_exits_1(dataset_dir, tmp_path, capsys):
    out_dir = tmp_path / "run"
    cfg_path = _write_config(tmp_path / "cfg.json", dataset_dir, out_dir)
    rc = _run("train", cfg_path, "--set", "admm.pretrain_lr=1e12",
              "--set", "admm.admm_rounds=0")
    assert rc == 1
    err = capsys.readouterr().err
    assert "snapshot" in err
    snapshot = out_dir / "ckpt_pdadmm" / "divergence.ckpt"
    assert snapshot.exists()
    md.load_checkpoint(snapshot)  # parses cleanly


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def test_eval_csv_rows_and_determinism(dataset_dir, tmp_path):
    ckpt = _fresh_checkpoint(tmp_path / "m.ckpt")
    out = tmp_path / "eval.csv"
    assert _run("eval", ckpt, dataset_dir / "manifest.tsv", "--out", out) == 0
    header, rows = _data_rows(out)
    assert header == "sample_id,psnr_y,ssim_y,lf_mae,perceptual_proxy"
    assert len(rows) == 5  # 4 images + mean
    assert rows[-1].startswith("mean,")
    for row in rows:
        cells = row.split(",")
        assert len(cells) == 5
        for cell in cells[1:]:
            float(cell)  # parseable, 'inf' included

    first = out.read_bytes()
    assert _run("eval", ckpt, dataset_dir / "manifest.tsv", "--out", out) == 0
    assert out.read_bytes() == first


def test_eval_reference_against_itself_hits_limits():
    rng = np.random.default_rng(0)
    hr = rng.uniform(0.1, 0.9, size=(3, 16, 16))
    psnr_v, ssim_v, gap_v, proxy_v = cli._metric_row(hr, hr, hr, 0)
    assert math.isinf(psnr_v)
    assert repr(psnr_v) == "inf"  # CSV marker
    assert ssim_v == 1.0
    assert gap_v == 0.0
    assert proxy_v == 1.0


def test_eval_crop_border_flag(dataset_dir, tmp_path):
    ckpt = _fresh_checkpoint(tmp_path / "m.ckpt")
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    assert _run("eval", ckpt, dataset_dir / "manifest.tsv", "--out", out_a) == 0
    assert _run("eval", ckpt, dataset_dir / "manifest.tsv", "--out", out_b,
                "--crop-border", 2) == 0
    assert out_a.read_bytes() != out_b.read_bytes()
    assert '"crop_border": 2' in out_b.read_text(encoding="utf-8")


def test_eval_saves_images(dataset_dir, tmp_path):
    ckpt = _fresh_checkpoint(tmp_path / "m.ckpt")
    img_dir = tmp_path / "imgs"
    assert _run("eval", ckpt, dataset_dir / "manifest.tsv", "--out", tmp_path / "e.csv",
                "--image-dir", img_dir) == 0
    for sid in ("0000", "0003"):
        for suffix in ("stage1", "final", "lfdiff"):
            path = img_dir / f"{sid}_{suffix}.png"
            img = data.load_png(path)
            assert img.shape[0] == 3
    lfdiff = data.load_png(img_dir / "0000_lfdiff.png")
    assert lfdiff.min() >= 0.0 and lfdiff.max() <= 1.0


def test_eval_scale_mismatch_exits_2(dataset_dir, tmp_path, capsys):
    ckpt = _fresh_checkpoint(tmp_path / "m4.ckpt", scale=4)
    rc = _run("eval", ckpt, dataset_dir / "manifest.tsv", "--out", tmp_path / "e.csv")
    assert rc == 2
    assert "not 4x" in capsys.readouterr().err


def test_eval_missing_checkpoint_exits_3(dataset_dir, tmp_path):
    rc = _run("eval", tmp_path / "missing.ckpt", dataset_dir / "manifest.tsv",
              "--out", tmp_path / "e.csv")
    assert rc == 3


# ---------------------------------------------------------------------------
# curve
# ---------------------------------------------------------------------------


def test_curve_endpoints_match_eval_bitwise(dataset_dir, tmp_path):
    ckpt_o = _fresh_checkpoint(tmp_path / "o.ckpt", seed=0)
    ckpt_p = _fresh_checkpoint(tmp_path / "p.ckpt", seed=1)
    manifest = dataset_dir / "manifest.tsv"

    eval_o = tmp_path / "eval_o.csv"
    eval_p = tmp_path / "eval_p.csv"
    assert _run("eval", ckpt_o, manifest, "--out", eval_o) == 0
    assert _run("eval", ckpt_p, manifest, "--out", eval_p) == 0
    mean_o = _data_rows(eval_o)[1][-1].split(",")
    mean_p = _data_rows(eval_p)[1][-1].split(",")

    curve = tmp_path / "curve.csv"
    assert _run("curve", ckpt_o, ckpt_p, manifest, "--alphas", "0.0,0.5,1.0",
                "--out", curve) == 0
    header, rows = _data_rows(curve)
    assert header == "label,alpha,psnr_db,perceptual_proxy"
    assert len(rows) == 3

    cells_a0 = rows[0].split(",")
    cells_a1 = rows[2].split(",")
    assert cells_a0[1] == "0.0" and cells_a1[1] == "1.0"
    # alpha=1 reproduces the fidelity model's eval fields, bitwise.
    assert cells_a1[2] == mean_o[1]  # psnr
    assert cells_a1[3] == mean_o[4]  # proxy
    # alpha=0 reproduces the perception model's eval fields, bitwise.
    assert cells_a0[2] == mean_p[1]
    assert cells_a0[3] == mean_p[4]

    first = curve.read_bytes()
    assert _run("curve", ckpt_o, ckpt_p, manifest, "--alphas", "0.0,0.5,1.0",
                "--out", curve) == 0
    assert curve.read_bytes() == first


def test_curve_scale_mismatch_exits_2(dataset_dir, tmp_path, capsys):
    ckpt_o = _fresh_checkpoint(tmp_path / "o.ckpt", scale=2)
    ckpt_p = _fresh_checkpoint(tmp_path / "p.ckpt", scale=4)
    rc = _run("curve", ckpt_o, ckpt_p, dataset_dir / "manifest.tsv",
              "--out", tmp_path / "c.csv")
    assert rc == 2
    assert "scale" in capsys.readouterr().err


def test_curve_bad_alphas_exit_2(dataset_dir, tmp_path):
    ckpt_o = _fresh_checkpoint(tmp_path / "o.ckpt")
    ckpt_p = _fresh_checkpoint(tmp_path / "p.ckpt", seed=1)
    manifest = dataset_dir / "manifest.tsv"
    assert _run("curve", ckpt_o, ckpt_p, manifest, "--alphas", "1.0,0.0",
                "--out", tmp_path / "c.csv") == 2
    assert _run("curve", ckpt_o, ckpt_p, manifest, "--alphas", "abc",
                "--out", tmp_path / "c.csv") == 2


# ---------------------------------------------------------------------------
# usage
# ---------------------------------------------------------------------------


def test_missing_subcommand_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 2
    capsys.readouterr()


def test_env_seed_changes_training(dataset_dir, tmp_path, monkeypatch):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    cfg_a = _write_config(tmp_path / "ca.json", dataset_dir, out_a, admm_rounds=0)
    cfg_b = _write_config(tmp_path / "cb.json", dataset_dir, out_b, admm_rounds=0)
    monkeypatch.delenv("PDSR_SEED", raising=False)
    assert _run("train", cfg_a) == 0
    monkeypatch.setenv("PDSR_SEED", "7")
    assert _run("train", cfg_b) == 0
    a = (out_a / "ckpt_pdadmm" / "final.ckpt").read_bytes()
    b = (out_b / "ckpt_pdadmm" / "final.ckpt").read_bytes()
    assert a != b
