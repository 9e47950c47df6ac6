import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quantile_ipp.errors import DimensionError, DomainError, FieldFormatError, RangeError
from quantile_ipp.field import (Field, GridSpec, footprint, footprint_indices, load_field, sample, save_field,
                                synth_field)


def test_default_geometry():
    g = GridSpec()
    assert (g.cell_width, g.cell_height) == (3.2, 2.4)
    assert g.lattice_shape == (125, 125)
    assert g.measurements_per_image == 25


def test_footprint_default_has_25_points():
    assert footprint((3, 7), GridSpec()).shape == (25, 2)


def test_footprint_single_pixel_cell():
    g = GridSpec(1, 1, 10.0, 10.0, pixels_per_cell_side=1)
    np.testing.assert_array_equal(footprint((0, 0), g), [[5.0, 5.0]])


def test_footprint_inside_cell_and_disjoint():
    g = GridSpec()
    seen = set()
    for cell in g.cells():
        pts = footprint(cell, g)
        x0, y0 = cell[0] * g.cell_width, cell[1] * g.cell_height
        assert np.all((pts[:, 0] > x0) & (pts[:, 0] < x0 + g.cell_width))
        assert np.all((pts[:, 1] > y0) & (pts[:, 1] < y0 + g.cell_height))
        keys = {tuple(np.round(p, 9)) for p in pts}
        assert not keys & seen
        seen |= keys
    assert len(seen) == 125 * 125


def test_footprint_out_of_bounds():
    with pytest.raises(IndexError):
        footprint((25, 0), GridSpec())
    with pytest.raises(IndexError):
        footprint((-1, 3), GridSpec())


def test_footprint_indices_match_lattice():
    g = GridSpec()
    lat = g.lattice_points()
    for cell in [(0, 0), (24, 24), (5, 17)]:
        np.testing.assert_allclose(lat[footprint_indices(cell, g)], footprint(cell, g))
        np.testing.assert_array_equal(g.lattice_indices(footprint(cell, g)), footprint_indices(cell, g))


def test_lattice_indices_off_lattice():
    assert GridSpec().lattice_indices(np.array([[0.1, 0.1]])) is None


def test_gradient_edges():
    f = synth_field("gradient", GridSpec())
    assert np.all(f.values[:, 0] == 0.0) and np.all(f.values[:, -1] == 1.0)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=15, deadline=None)
def test_blobs_range_and_determinism(seed):
    g = GridSpec(6, 5)
    a, b = synth_field("blobs", g, seed), synth_field("blobs", g, seed)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.min() >= 0.0 and a.values.max() <= 1.0


def test_checker_alternates_cells():
    g = GridSpec(4, 3)
    f = synth_field("checker", g)
    p = g.pixels_per_cell_side
    for cx, cy in g.cells():
        block = f.values[cy * p:(cy + 1) * p, cx * p:(cx + 1) * p]
        assert np.all(block == (cx + cy) % 2)


def test_unknown_kind():
    with pytest.raises(DomainError):
        synth_field("waves", GridSpec())


def test_field_validation():
    g = GridSpec(2, 2)
    with pytest.raises(DimensionError):
        Field(g, np.zeros((3, 3)))
    with pytest.raises(RangeError):
        Field(g, np.full(g.lattice_shape, 1.5))
    f = Field(g, np.zeros(g.lattice_shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_truth_at_nearest_node_and_domain():
    g = GridSpec(2, 2, 10.0, 10.0)
    vals = np.arange(100, dtype=float).reshape(10, 10) / 99
    f = Field(g, vals)
    assert f.truth_at(np.array([[0.5, 0.5]]))[0] == vals[0, 0]
    assert f.truth_at(np.array([[9.9, 0.2]]))[0] == vals[0, 9]
    assert f.truth_at(np.array([[0.2, 9.9]]))[0] == vals[9, 0]
    with pytest.raises(DomainError):
        f.truth_at(np.array([[10.5, 1.0]]))


def test_sample_zero_noise_is_exact(rng):
    f = synth_field("blobs", GridSpec(), 3)
    pts = footprint((4, 4), f.grid)
    np.testing.assert_array_equal(sample(f, pts, 0.0, rng), f.truth_at(pts))


def test_sample_noise_statistics():
    g = GridSpec(1, 1, 10.0, 10.0, pixels_per_cell_side=1)
    f = Field(g, np.full((1, 1), 0.5))
    v = sample(f, np.tile([[5.0, 5.0]], (10_000, 1)), 0.05, np.random.default_rng(0))
    assert abs(v.mean() - 0.5) < 0.002
    assert abs(v.std(ddof=1) - 0.05) < 0.005


def test_sample_not_clamped():
    g = GridSpec(1, 1, 10.0, 10.0, pixels_per_cell_side=1)
    f = Field(g, np.ones((1, 1)))
    v = sample(f, np.tile([[5.0, 5.0]], (1000, 1)), 0.05, np.random.default_rng(0))
    assert v.max() > 1.0


def test_sample_deterministic():
    f = synth_field("blobs", GridSpec(), 3)
    pts = footprint((1, 2), f.grid)
    a = sample(f, pts, 0.05, np.random.default_rng(9))
    b = sample(f, pts, 0.05, np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_csv_constant_round_trip(tmp_path):
    p = tmp_path / "half.csv"
    np.savetxt(p, np.full((125, 125), 0.5), delimiter=",")
    f = load_field(p)
    assert f.grid == GridSpec()
    assert np.all(f.values == 0.5)


def test_csv_save_load_identity(tmp_path):
    f = synth_field("blobs", GridSpec(), 4)
    save_field(f, tmp_path / "f.csv")
    g = load_field(tmp_path / "f.csv")
    np.testing.assert_array_equal(f.values, g.values)


def test_csv_errors(tmp_path):
    ragged = tmp_path / "r.csv"
    ragged.write_text("0,0\n0\n")
    with pytest.raises(FieldFormatError):
        load_field(ragged)
    odd = tmp_path / "o.csv"
    np.savetxt(odd, np.zeros((7, 10)), delimiter=",")
    with pytest.raises(DimensionError):
        load_field(odd)
    big = tmp_path / "b.csv"
    np.savetxt(big, np.full((5, 5), 2.0), delimiter=",")
    with pytest.raises(RangeError):
        load_field(big)
    with pytest.raises(DimensionError):
        load_field(big, grid=GridSpec(), maxval=2.0)


def _pgm(path, pixels, maxval=255, binary=False):
    h, w = pixels.shape
    if binary:
        dtype = ">u2" if maxval > 255 else "u1"
        path.write_bytes(f"P5\n# comment\n{w} {h}\n{maxval}\n".encode() + pixels.astype(dtype).tobytes())
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in pixels)
        path.write_text(f"P2\n{w} {h}\n# c\n{maxval}\n{body}\n")


@pytest.mark.parametrize("binary", [False, True])
def test_pgm_normalization(tmp_path, binary):
    px = np.zeros((5, 10), dtype=int)
    px[0, 0] = 255
    p = tmp_path / "f.pgm"
    _pgm(p, px, binary=binary)
    f = load_field(p)
    assert f.grid.cells_x == 2 and f.grid.cells_y == 1
    assert f.values[0, 0] == 1.0 and f.values[1, 1] == 0.0


def test_pgm_16bit(tmp_path):
    px = np.full((5, 5), 65535)
    p = tmp_path / "f.pgm"
    _pgm(p, px, maxval=65535, binary=True)
    assert np.all(load_field(p).values == 1.0)


def test_pgm_bad_header(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P7\n5 5\n255\n" + bytes(25))
    with pytest.raises(FieldFormatError):
        load_field(p)
    p.write_bytes(b"P5\n5 5\n255\n" + bytes(3))
    with pytest.raises(FieldFormatError):
        load_field(p)
