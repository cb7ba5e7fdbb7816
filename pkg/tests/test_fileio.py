import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dso.fileio import (
    FormatError,
    dumps_field,
    dumps_mask,
    field_to_ppm,
    load_palette,
    loads_field,
    loads_mask,
    read_field,
    write_csv,
    write_field,
)
from dso.grid import Mask, make_grid

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(4, 9),
    st.integers(4, 9),
    st.floats(-10, 10),
    st.floats(1e-3, 10),
    st.data(),
)
def test_field_round_trip_is_exact(nx, ny, ox, hx, data):
    g = make_grid((nx, ny), (nx * hx, ny * hx * 0.7), (ox, -ox))
    values = data.draw(arrays(np.float64, g.node_shape, elements=finite))
    g2, back = loads_field(dumps_field(g, values))
    assert g2 == g
    np.testing.assert_array_equal(back, values)


@settings(max_examples=50, deadline=None)
@given(st.integers(4, 10), st.integers(4, 10), st.data())
def test_mask_round_trip_is_exact(nx, ny, data):
    g = make_grid((nx, ny), (1.0, 2.0), (0.1, 0.3))
    inside = data.draw(arrays(np.bool_, g.cell_shape))
    m = Mask(g, inside)
    assert loads_mask(dumps_mask(m)) == m


def test_field_header_layout():
    g = make_grid((4, 5), (1.0, 1.25))
    text = dumps_field(g, np.zeros(g.node_shape))
    lines = text.splitlines()
    assert lines[0] == "FLD1 d=2 nx=4 ny=5 ox=0 oy=0 hx=0.25 hy=0.25"
    assert len(lines) == 1 + 6
    assert len(lines[1].split()) == 5


def test_field_rows_are_x_fastest():
    g = make_grid((4, 4), (1, 1))
    x, _ = g.node_coords()
    row = dumps_field(g, x).splitlines()[1].split()
    assert [float(t) for t in row] == [0.0, 0.25, 0.5, 0.75, 1.0]


def test_mask_header_and_rows():
    g = make_grid((4, 4), (1, 1))
    inside = np.zeros((4, 4), bool)
    inside[1, 0] = True
    lines = dumps_mask(Mask(g, inside)).splitlines()
    assert lines[0].startswith("MSK1 d=2 nx=4 ny=4")
    assert lines[1] == "0 1 0 0"


def test_seventeen_digits(tmp_path):
    g = make_grid((4, 4), (1, 1))
    v = np.full(g.node_shape, 0.1)
    write_field(tmp_path / "f.fld", g, v)
    assert "0.10000000000000001" in (tmp_path / "f.fld").read_text()
    np.testing.assert_array_equal(read_field(tmp_path / "f.fld")[1], v)


@pytest.mark.parametrize(
    "text",
    [
        "FLD2 d=2 nx=4 ny=4 ox=0 oy=0 hx=1 hy=1\n",
        "FLD1 d=2 nx=4 ny=4 ox=0 oy=0 hx=1\n" + "0 0 0 0 0\n" * 5,
        "FLD1 d=2 nx=4 ny=4 ox=0 oy=0 hx=1 hy=1\n" + "0 0 0 0 0\n" * 4,
        "FLD1 d=2 nx=4 ny=4 ox=0 oy=0 hx=1 hy=1\n" + "0 0 0 0\n" * 5,
        "FLD1 d=2 nx=4 ny=4 ox=0 oy=0 hx=1 hy=1\n" + "0 0 0 0 nan\n" * 5,
    ],
)
def test_malformed_fields(text):
    with pytest.raises(FormatError):
        loads_field(text)


def test_malformed_mask():
    with pytest.raises(FormatError):
        loads_mask("MSK1 d=2 nx=4 ny=4 ox=0 oy=0 hx=1 hy=1\n" + "0 2 0 0\n" * 4)


def test_csv_float_format(tmp_path):
    write_csv(tmp_path / "a.csv", ("a", "b"), [(1.0 / 3.0, 7)])
    assert (tmp_path / "a.csv").read_text() == "a,b\n0.33333333333333331,7\n"


def test_palette_shape_and_endpoints():
    pal = load_palette()
    assert pal.shape == (256, 3)
    # dark purple to yellow
    assert pal[0, 2] > pal[0, 1] and pal[-1, 0] > 200 and pal[-1, 1] > 200


def test_ppm_header_and_size():
    g = make_grid((6, 4), (1.5, 1.0))
    x, y = g.node_coords()
    data = field_to_ppm(x + y)
    header = b"P6\n7 5\n255\n"
    assert data.startswith(header)
    body = data[len(header):]
    assert len(body) == 7 * 5 * 3
    pal = load_palette()
    # top-left pixel is the lowest x on the highest y row
    top_left = np.frombuffer(body[:3], np.uint8)
    bottom_left = np.frombuffer(body[-21:-18], np.uint8)
    assert not np.array_equal(top_left, bottom_left)
    np.testing.assert_array_equal(np.frombuffer(body[-3 * 7:-3 * 6], np.uint8), pal[0])


def test_ppm_constant_field():
    data = field_to_ppm(np.ones((5, 5)))
    assert len(data) == len(b"P6\n5 5\n255\n") + 75
