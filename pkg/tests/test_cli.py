import json
import os

import numpy as np
import pytest

from bladepde import apps, formats
from bladepde.cli import main
from bladepde.features import SelectionConfig
from bladepde.grid import ImageGrid
from bladepde.imgio import read_gray, read_sequence, write_gray
from bladepde.net import FilterBank, Footprint
from bladepde.synth import add_noise, smooth_blob_image, synth_image, two_level_image


@pytest.fixture
def input_dir(tmp_path):
    d = tmp_path / "inputs"
    d.mkdir()
    for i in range(2):
        write_gray(synth_image(500 + i, 64), str(d / f"img_{i}.png"), bits=8)
    return d


def zero_bank_path(tmp_path, name="zero.bfb"):
    cfg = SelectionConfig(4, (0.5,), (), rho=1.0)
    p = tmp_path / name
    formats.write_filter_bank(str(p), FilterBank.zeros(cfg))
    return p


def tree_bytes(root):
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            p = os.path.join(base, f)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_gen_data_counts_and_idempotence(tmp_path, input_dir):
    out1 = tmp_path / "seq1"
    args = ["gen-data", "--pde", "tv_flow", "--input-dir", str(input_dir),
            "--scale", "4", "--dt-hr", "0.1", "--steps", "100",
            "--subsample-m", "10", "--out"]
    assert main(args + [str(out1)]) == 0
    seq, meta = read_sequence(str(out1 / "img_0"))
    assert len(seq) == 11
    assert seq[0].shape == (16, 16)
    assert meta["pde"] == "tv_flow"
    assert (out1 / "manifest.json").exists()
    out2 = tmp_path / "seq2"
    assert main(args + [str(out2)]) == 0
    t1, t2 = tree_bytes(out1), tree_bytes(out2)
    assert t1.keys() == t2.keys()
    # manifests embed their own output path; all data artifacts are identical
    assert all(t1[k] == t2[k] for k in t1 if not k.endswith("manifest.json"))
    before = tree_bytes(out1)
    assert main(args + [str(out1)]) == 0
    after = tree_bytes(out1)
    assert before.keys() == after.keys()
    assert all(before[k] == after[k] for k in before)


def test_gen_data_missing_dir_exits_2(tmp_path, capsys):
    rc = main(["gen-data", "--pde", "tv_flow", "--input-dir",
               str(tmp_path / "nope"), "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "nope" in capsys.readouterr().err


def test_gen_data_divisibility_exits_2(tmp_path, input_dir):
    rc = main(["gen-data", "--pde", "tv_flow", "--input-dir", str(input_dir),
               "--scale", "3", "--steps", "100", "--subsample-m", "10",
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_usage_error_exits_2():
    assert main(["gen-data", "--bogus"]) == 2


def test_train_smoke_and_reproducibility(tmp_path, input_dir):
    data = tmp_path / "data"
    assert main(["gen-data", "--pde", "perona_malik", "--input-dir", str(input_dir),
                 "--scale", "4", "--steps", "60", "--subsample-m", "6",
                 "--out", str(data)]) == 0
    bank1 = tmp_path / "b1.bfb"
    bank2 = tmp_path / "b2.bfb"
    common = ["train", "--data", str(data), "--unroll", "10", "--seed", "7",
              "--iters", "5", "--orientation-bins", "4", "--strength-bins", "2",
              "--coherence-bins", "1"]
    assert main(common + ["--out", str(bank1)]) == 0
    assert main(common + ["--out", str(bank2)]) == 0
    assert bank1.read_bytes() == bank2.read_bytes()
    assert (tmp_path / "b1.bfb.loss.csv").exists()
    bank = formats.read_filter_bank(str(bank1))
    assert bank.num_filters == 8
    manifest = json.loads((tmp_path / "b1.bfb.manifest.json").read_text())
    assert manifest["command"] == "train"


def test_train_missing_data_exits_2(tmp_path):
    rc = main(["train", "--data", str(tmp_path / "nothing"), "--out",
               str(tmp_path / "b.bfb")])
    assert rc == 2


def test_train_dataset_manifest(tmp_path, input_dir):
    data = tmp_path / "data"
    assert main(["gen-data", "--pde", "tv_flow", "--input-dir", str(input_dir),
                 "--scale", "4", "--steps", "40", "--subsample-m", "10",
                 "--out", str(data)]) == 0
    manifest = tmp_path / "dataset.json"
    manifest.write_text(json.dumps([str(data / "img_0")]))
    rc = main(["train", "--data", str(manifest), "--unroll", "4", "--iters", "2",
               "--orientation-bins", "4", "--strength-bins", "1",
               "--coherence-bins", "1", "--out", str(tmp_path / "bm.bfb")])
    assert rc == 0


def test_train_corrupt_manifest_exits_2(tmp_path):
    bad = tmp_path / "dataset.json"
    bad.write_text("{ not json")
    rc = main(["train", "--data", str(bad), "--out", str(tmp_path / "b.bfb")])
    assert rc == 2


def test_evolve_zero_bank_and_zero_steps(tmp_path):
    img = tmp_path / "in.png"
    write_gray(synth_image(3, 32), str(img), bits=8)
    bank = zero_bank_path(tmp_path)
    out = tmp_path / "ev"
    assert main(["evolve", "--bank", str(bank), "--input", str(img),
                 "--steps", "3", "--dt", "1.0", "--out", str(out)]) == 0
    seq, _ = read_sequence(str(out))
    assert len(seq) == 4
    assert np.array_equal(seq[0].data, seq[3].data)
    out0 = tmp_path / "ev0"
    assert main(["evolve", "--bank", str(bank), "--input", str(img),
                 "--steps", "0", "--out", str(out0)]) == 0
    seq0, _ = read_sequence(str(out0))
    assert len(seq0) == 1


def test_evolve_flux_manifest_records_drift(tmp_path, rng):
    img = tmp_path / "in.png"
    write_gray(synth_image(4, 32), str(img), bits=8)
    cfg = SelectionConfig(4, (0.5,), (), rho=1.0)
    bx = tmp_path / "bx.bfb"
    by = tmp_path / "by.bfb"
    formats.write_filter_bank(str(bx), FilterBank(
        rng.normal(0, 1e-3, (cfg.num_filters, 25)), Footprint(), cfg))
    formats.write_filter_bank(str(by), FilterBank(
        rng.normal(0, 1e-3, (cfg.num_filters, 25)), Footprint(), cfg))
    out = tmp_path / "flux"
    assert main(["evolve", "--bank", str(bx), "--bank-y", str(by), "--input", str(img),
                 "--steps", "20", "--dt", "0.05", "--integrator", "flux",
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["metrics"]["mean_drift_rel"] < 1e-12


def test_evolve_instability_exits_1(tmp_path, capsys):
    img = tmp_path / "in.png"
    write_gray(add_noise(smooth_blob_image(32), 30.0, seed=1, clip=(0, 255)),
               str(img), bits=8)
    cfg = SelectionConfig(1, (), ())
    taps = np.zeros((1, 25))
    taps[0, 12] = 9.0  # u -> 10 u each step
    bank = tmp_path / "explode.bfb"
    formats.write_filter_bank(str(bank), FilterBank(taps, Footprint(), cfg))
    rc = main(["evolve", "--bank", str(bank), "--input", str(img),
               "--steps", "100", "--out", str(tmp_path / "boom")])
    assert rc == 1
    assert "step" in capsys.readouterr().err


def test_eval_identical_sequences(tmp_path, input_dir):
    data = tmp_path / "data"
    assert main(["gen-data", "--pde", "tv_flow", "--input-dir", str(input_dir),
                 "--scale", "4", "--steps", "40", "--subsample-m", "10",
                 "--out", str(data)]) == 0
    csv = tmp_path / "m.csv"
    rc = main(["eval", "--reference-seq", str(data / "img_0"),
               "--test-seq", str(data / "img_0"), "--out", str(csv)])
    assert rc == 0
    rows = csv.read_text().strip().splitlines()
    assert rows[0] == "frame,psnr,ssim"
    for line in rows[1:]:
        _, p, s = line.split(",")
        assert p == "inf"
        assert float(s) == pytest.approx(1.0, abs=1e-9)


def test_eval_frame_count_mismatch_exits_2(tmp_path, input_dir):
    d1 = tmp_path / "d1"
    d2 = tmp_path / "d2"
    for out, steps in ((d1, 40), (d2, 30)):
        assert main(["gen-data", "--pde", "tv_flow", "--input-dir", str(input_dir),
                     "--scale", "4", "--steps", str(steps), "--subsample-m", "10",
                     "--out", str(out)]) == 0
    rc = main(["eval", "--reference-seq", str(d1 / "img_0"),
               "--test-seq", str(d2 / "img_0"), "--out", str(tmp_path / "m.csv")])
    assert rc == 2


def test_eval_bank_mode(tmp_path, input_dir):
    data = tmp_path / "data"
    assert main(["gen-data", "--pde", "tv_flow", "--input-dir", str(input_dir),
                 "--scale", "4", "--steps", "40", "--subsample-m", "10",
                 "--out", str(data)]) == 0
    bank = zero_bank_path(tmp_path)
    frame0 = tmp_path / "f0.png"
    seq, meta = read_sequence(str(data / "img_0"))
    write_gray(seq[0], str(frame0), bits=16)
    csv = tmp_path / "m.csv"
    rc = main(["eval", "--reference-seq", str(data / "img_0"), "--bank", str(bank),
               "--input", str(frame0), "--out", str(csv)])
    assert rc == 0


def test_apply_deconv_smoke(tmp_path):
    truth = synth_image(9, 64)
    from bladepde.grid import convolve_replicate

    psf = apps.gaussian_psf(1.0, radius=2)
    obs = add_noise(ImageGrid(convolve_replicate(truth.data, psf)), 5.0, seed=2,
                    clip=(0, 255))
    inp = tmp_path / "obs.png"
    tru = tmp_path / "truth.png"
    write_gray(obs, str(inp), bits=8)
    write_gray(truth, str(tru), bits=8)
    bank = zero_bank_path(tmp_path)
    out = tmp_path / "deconv.png"
    rc = main(["apply", "deconv", "--bank", str(bank), "--input", str(inp),
               "--truth", str(tru), "--sigma-blur", "1.0", "--lam", "2.0",
               "--steps", "10", "--dt", "0.4", "--out", str(out)])
    assert rc == 0
    manifest = json.loads((tmp_path / "deconv.png.manifest.json").read_text())
    assert "psnr_out" in manifest["metrics"]


def test_apply_upscale_smoke(tmp_path):
    lr = synth_image(11, 32)
    inp = tmp_path / "lr.png"
    write_gray(lr, str(inp), bits=8)
    bank = zero_bank_path(tmp_path)
    out = tmp_path / "up.png"
    rc = main(["apply", "upscale", "--bank", str(bank), "--input", str(inp),
               "--factor", "2", "--steps", "3", "--out", str(out)])
    assert rc == 0
    assert read_gray(str(out)).shape == (64, 64)
    out2 = tmp_path / "up_proj.png"
    rc = main(["apply", "upscale", "--bank", str(bank), "--input", str(inp),
               "--factor", "2", "--steps", "3", "--projected", "--out", str(out2)])
    assert rc == 0


def test_apply_segment_smoke(tmp_path):
    img = two_level_image(48, 0.2, 0.8)
    inp = tmp_path / "seg_in.png"
    write_gray(img, str(inp), bits=8, scale=1.0)
    out = tmp_path / "mask.png"
    rc = main(["apply", "segment", "--input", str(inp), "--mu", "0.2",
               "--iters", "120", "--out", str(out)])
    assert rc == 0
    mask = read_gray(str(out), scale=1.0)
    assert set(np.unique(mask.data)) <= {0.0, 1.0}
    manifest = json.loads((tmp_path / "mask.png.manifest.json").read_text())
    assert "c1" in manifest["metrics"]


def test_apply_resample_blade_and_bicubic(tmp_path, rng):
    img = synth_image(21, 32)
    inp = tmp_path / "r_in.png"
    write_gray(img, str(inp), bits=8)
    flow = tmp_path / "f.blflow"
    formats.write_flow(str(flow), apps.FlowField.constant((32, 32), 2.0, -1.0))
    bank = zero_bank_path(tmp_path)
    out1 = tmp_path / "blade.png"
    rc = main(["apply", "resample", "--bank-x", str(bank), "--bank-y", str(bank),
               "--input", str(inp), "--flow", str(flow), "--out", str(out1)])
    assert rc == 0
    out2 = tmp_path / "bic.png"
    rc = main(["apply", "resample", "--method", "bicubic", "--input", str(inp),
               "--flow", str(flow), "--out", str(out2)])
    assert rc == 0
    # integer shift: both methods give the same translate
    assert read_gray(str(out1)).data == pytest.approx(read_gray(str(out2)).data, abs=1.0)


def test_manifest_hashes_inputs(tmp_path, input_dir):
    out = tmp_path / "seq"
    assert main(["gen-data", "--pde", "tv_flow", "--input-dir", str(input_dir),
                 "--scale", "4", "--steps", "20", "--subsample-m", "10",
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["inputs"]) == 2
    for digest in manifest["inputs"].values():
        assert len(digest) == 64
