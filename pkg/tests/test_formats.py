import numpy as np
from numpy.testing import assert_array_equal
from pytest import raises

from bp_layer.errors import InputError
from bp_layer.formats.pfm import read_pfm, write_pfm
from bp_layer.formats.pgm import read_pgm, write_pgm
from bp_layer.formats.volume import read_volume, write_volume


def test_pfm_stores_rows_bottom_to_top(tmp_path):
    path = tmp_path / "map.pfm"
    write_pfm(path, np.array([[1.0, 2.0], [3.0, 4.5]]))
    data = path.read_bytes()
    assert data.startswith(b"Pf\n2 2\n-1.0\n")
    pixels = np.frombuffer(data[len(b"Pf\n2 2\n-1.0\n") :], dtype="<f4")
    assert_array_equal(pixels, [3.0, 4.5, 1.0, 2.0])
    assert_array_equal(read_pfm(path), [[1.0, 2.0], [3.0, 4.5]])


def test_pfm_reads_big_endian_maps(tmp_path):
    path = tmp_path / "big.pfm"
    values = np.array([[0.25, -1.0, 7.0]], dtype=">f4")
    path.write_bytes(b"Pf\n3 1\n1.0\n" + values.tobytes())
    assert_array_equal(read_pfm(path), [[0.25, -1.0, 7.0]])


def test_pfm_keeps_nan(tmp_path):
    path = tmp_path / "gt.pfm"
    write_pfm(path, np.array([[np.nan, 1.0]]))
    assert np.isnan(read_pfm(path)[0, 0])


def test_pfm_rejects_color_and_truncated_files(tmp_path):
    color = tmp_path / "color.pfm"
    color.write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
    with raises(InputError):
        read_pfm(color)
    short = tmp_path / "short.pfm"
    short.write_bytes(b"Pf\n4 4\n-1.0\n" + bytes(8))
    with raises(InputError):
        read_pfm(short)
    with raises(InputError):
        read_pfm(tmp_path / "missing.pfm")


def test_pgm_header_comments_are_skipped(tmp_path):
    path = tmp_path / "image.pgm"
    path.write_bytes(b"P5\n# made by hand\n3 2\n255\n" + bytes([0, 10, 20, 30, 40, 255]))
    assert_array_equal(read_pgm(path), [[0, 10, 20], [30, 40, 255]])


def test_pgm_sixteen_bit(tmp_path):
    path = tmp_path / "deep.pgm"
    write_pgm(path, np.array([[0, 1000], [65535, 256]]), maxval=65535)
    assert path.read_bytes().startswith(b"P5\n2 2\n65535\n")
    assert_array_equal(read_pgm(path), [[0, 1000], [65535, 256]])


def test_pgm_write_clips_and_rounds(tmp_path):
    path = tmp_path / "labels.pgm"
    write_pgm(path, np.array([[-3.0, 2.6, 300.0]]))
    assert_array_equal(read_pgm(path), [[0, 3, 255]])


def test_pgm_rejects_other_formats(tmp_path):
    path = tmp_path / "ascii.pgm"
    path.write_bytes(b"P2\n1 1\n255\n0\n")
    with raises(InputError):
        read_pgm(path)
    truncated = tmp_path / "truncated.pgm"
    truncated.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with raises(InputError):
        read_pgm(truncated)


def test_volume_round_trip_is_exact(tmp_path):
    path = tmp_path / "probs.csv"
    volume = np.random.default_rng(0).dirichlet(np.ones(3), size=(2, 4))
    write_volume(path, volume)
    assert path.read_text().splitlines()[0] == "2,4,3"
    assert_array_equal(read_volume(path), volume)


def test_volume_names_the_missing_row(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("2,2,2\n0.5,0.5\n0.5,0.5\n0.5,0.5\n")
    with raises(InputError, match="missing row 3 of 4"):
        read_volume(path)


def test_volume_rejects_bad_rows(tmp_path):
    header = tmp_path / "header.csv"
    header.write_text("2,two,2\n")
    with raises(InputError):
        read_volume(header)
    wide = tmp_path / "wide.csv"
    wide.write_text("1,1,2\n0.2,0.3,0.5\n")
    with raises(InputError):
        read_volume(wide)
