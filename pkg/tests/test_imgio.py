import numpy as np

from bladepde.grid import ColorImage, FrameSequence, ImageGrid
from bladepde.imgio import (
    read_color,
    read_gray,
    read_sequence,
    write_color,
    write_gray,
    write_sequence,
)


def test_gray_8bit_round_trip(tmp_path, rng):
    img = ImageGrid(np.round(rng.uniform(0, 255, (9, 7))))
    p = tmp_path / "g.png"
    write_gray(img, p, bits=8)
    assert np.array_equal(read_gray(p).data, img.data)


def test_gray_16bit_quantization_error(tmp_path, rng):
    img = ImageGrid(rng.uniform(0, 255, (9, 7)))
    p = tmp_path / "g16.png"
    write_gray(img, p, bits=16)
    back = read_gray(p)
    assert np.abs(back.data - img.data).max() <= 255.0 / 65535 / 2 + 1e-12


def test_gray_unit_scale(tmp_path, rng):
    img = ImageGrid(rng.uniform(0, 1, (8, 8)))
    p = tmp_path / "ph.png"
    write_gray(img, p, bits=16, scale=1.0)
    assert np.abs(read_gray(p, scale=1.0).data - img.data).max() < 1e-4


def test_pgm_and_ppm(tmp_path, rng):
    img = ImageGrid(np.round(rng.uniform(0, 255, (6, 6))))
    p = tmp_path / "g.pgm"
    write_gray(img, p, bits=8)
    assert np.array_equal(read_gray(p).data, img.data)
    p16 = tmp_path / "g16.pgm"
    write_gray(img, p16, bits=16)
    assert np.abs(read_gray(p16).data - img.data).max() <= 255.0 / 65535 / 2 + 1e-12
    c = ColorImage(*[ImageGrid(np.round(rng.uniform(0, 255, (6, 6)))) for _ in range(3)])
    pc = tmp_path / "c.ppm"
    write_color(c, pc, bits=8)
    back = read_color(pc)
    for a, b in zip(back.channels(), c.channels()):
        assert np.array_equal(a.data, b.data)


def test_color_png_round_trip(tmp_path, rng):
    c = ColorImage(*[ImageGrid(np.round(rng.uniform(0, 255, (5, 4)))) for _ in range(3)])
    p = tmp_path / "c.png"
    write_color(c, p)
    back = read_color(p)
    for a, b in zip(back.channels(), c.channels()):
        assert np.array_equal(a.data, b.data)


def test_sequence_round_trip_with_metadata(tmp_path, rng):
    frames = [ImageGrid(rng.uniform(0, 255, (8, 8))) for _ in range(4)]
    seq = FrameSequence(frames, dt=0.25)
    d = tmp_path / "seq"
    write_sequence(seq, str(d), bits=16, metadata={"pde": "tv_flow", "steps_hr": 30})
    back, meta = read_sequence(str(d))
    assert len(back) == 4
    assert back.dt == 0.25
    assert meta["pde"] == "tv_flow"
    assert meta["steps_hr"] == 30
    for a, b in zip(back.frames, frames):
        assert np.abs(a.data - b.data).max() < 0.01
