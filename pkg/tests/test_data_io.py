import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qfacedet.data_io import (
    EllipseBoxCoeffs,
    FddbEllipse,
    Image,
    decode_pnm,
    ellipse_to_box,
    encode_pnm,
    format_fddb,
    load_image,
    parse_fddb,
    read_fold,
    resize_bilinear,
    save_image,
)
from qfacedet.detection import BBox
from qfacedet.nn import upsample2x_bilinear

ellipses = st.builds(FddbEllipse, st.floats(1, 300), st.floats(1, 300), st.floats(-3.2, 3.2),
                     st.floats(-1000, 1000), st.floats(-1000, 1000))

SAMPLE = """2002/08/11/big/img_591
1
123.583300 85.549500 1.265839 269.693400 161.781200  1
2002/08/26/big/img_265
3
67.363819 44.511485 -1.476417 105.249970 87.209036  1
41.936870 27.064477 1.471906 184.070915 129.345601  1
70.993052 43.355200 1.370217 340.894300 117.498951  1
"""


def tokens(text):
    """Whitespace-insensitive view; numeric fields compared by value."""
    out = []
    for line in text.splitlines():
        parts = line.split()
        out.append([float(v) for v in parts] if len(parts) > 1 else parts)
    return out


class TestEllipseToBox:
    def test_reference_case(self):
        b = ellipse_to_box(FddbEllipse(70.0, 50.0, 0.3, 200.0, 300.0))
        assert b == BBox(200.0, 326.0, 130.0, 130.0)

    def test_identity_coefficients(self):
        b = ellipse_to_box(FddbEllipse(70.0, 50.0, 0.3, 200.0, 300.0), EllipseBoxCoeffs(1.0, 0.0))
        assert b == BBox(200.0, 300.0, 100.0, 100.0)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            FddbEllipse(0.0, 1.0, 0.0, 0.0, 0.0)
        with pytest.raises(ValueError):
            EllipseBoxCoeffs(0.0, 0.1)

    @settings(max_examples=300, deadline=None)
    @given(ellipses, st.floats(-500, 500), st.floats(-500, 500))
    def test_square_and_translation_equivariant(self, e, dx, dy):
        b = ellipse_to_box(e)
        assert b.w == b.h
        moved = ellipse_to_box(FddbEllipse(e.major_axis_radius, e.minor_axis_radius, e.angle,
                                           e.center_x + dx, e.center_y + dy))
        assert moved.w == b.w
        assert moved.cx == pytest.approx(b.cx + dx, abs=1e-9)
        assert moved.cy == pytest.approx(b.cy + dy, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(ellipses, st.floats(0.1, 5))
    def test_area_quadratic_in_alpha(self, e, alpha):
        base = ellipse_to_box(e, EllipseBoxCoeffs(1.0, 0.26))
        b = ellipse_to_box(e, EllipseBoxCoeffs(alpha, 0.26))
        assert b.w * b.h == pytest.approx(alpha ** 2 * base.w * base.h, rel=1e-12)

    def test_angle_ignored(self):
        a = ellipse_to_box(FddbEllipse(70, 50, 0.0, 10, 10))
        assert a == ellipse_to_box(FddbEllipse(70, 50, 1.2, 10, 10))


class TestFddb:
    def test_parse(self):
        records = parse_fddb(SAMPLE)
        assert [k for k, _ in records] == ["2002/08/11/big/img_591", "2002/08/26/big/img_265"]
        assert [len(f) for _, f in records] == [1, 3]
        assert records[1][1][2].center_x == 340.8943

    def test_one_image_two_faces(self):
        text = "im\n2\n10 5 0 1 2  1\n11 6 0 3 4  1\n"
        ((image_id, faces),) = parse_fddb(text)
        assert image_id == "im" and len(faces) == 2

    def test_count_mismatch_names_image(self):
        with pytest.raises(ValueError, match="'short'"):
            parse_fddb("short\n3\n10 5 0 1 2  1\n11 6 0 3 4  1\n")

    def test_malformed_line_number(self):
        with pytest.raises(ValueError, match="line 3"):
            parse_fddb("im\n1\n10 five 0 1 2 1\n")
        with pytest.raises(ValueError, match="line 2"):
            parse_fddb("im\nmany\n")

    def test_fold_restricts_and_orders(self, tmp_path):
        fold = tmp_path / "fold.txt"
        fold.write_text("2002/08/26/big/img_265\n2002/08/11/big/img_591\n")
        records = parse_fddb(SAMPLE, read_fold(fold))
        assert [k for k, _ in records] == read_fold(fold)
        with pytest.raises(ValueError):
            parse_fddb(SAMPLE, ["missing"])

    def test_round_trip_modulo_whitespace(self):
        again = format_fddb(parse_fddb(SAMPLE))
        assert parse_fddb(again) == parse_fddb(SAMPLE)
        assert tokens(again) == tokens(SAMPLE)


class TestImages:
    def test_p6_decode(self):
        data = b"P6\n2 2\n255\n" + bytes(range(12))
        img = decode_pnm(data)
        assert img.pixels.shape == (2, 2, 3)
        assert img.pixels[1, 0].tolist() == [6, 7, 8]
        assert img.normalized()[0, 0, 2] == 2 / 255

    def test_p5_with_comment(self):
        img = decode_pnm(b"P5\n# made by hand\n3 1\n255\n\x00\x80\xff")
        assert img.channels == 1 and img.pixels[0, :, 0].tolist() == [0, 128, 255]
        assert img.rgb().shape == (1, 3, 3)

    @pytest.mark.parametrize("data,msg", [
        (b"P3\n1 1\n255\n0 0 0", "magic"),
        (b"P6\n0 2\n255\n", "dimensions"),
        (b"P6\n1 1\n65535\n\x00\x00", "8-bit"),
        (b"P6\n2 2\n255\n\x00\x00", "truncated"),
        (b"P6\n2", "header"),
    ])
    def test_errors(self, data, msg):
        with pytest.raises(ValueError, match=msg):
            decode_pnm(data)

    @pytest.mark.parametrize("channels", [1, 3])
    def test_save_load_round_trip(self, tmp_path, channels):
        px = np.random.default_rng(channels).integers(0, 256, (7, 5, channels), dtype=np.uint8)
        save_image(Image(px), tmp_path / "x.pnm")
        assert np.array_equal(load_image(tmp_path / "x.pnm").pixels, px)
        assert decode_pnm(encode_pnm(Image(px))).pixels.tobytes() == px.tobytes()

    def test_png_through_pillow(self, tmp_path):
        pil = pytest.importorskip("PIL.Image")
        px = np.random.default_rng(0).integers(0, 256, (4, 6, 3), dtype=np.uint8)
        pil.fromarray(px).save(tmp_path / "x.png")
        assert np.array_equal(load_image(tmp_path / "x.png").pixels, px)

    def test_garbage_file(self, tmp_path):
        (tmp_path / "x.bin").write_bytes(b"not an image")
        with pytest.raises(ValueError):
            load_image(tmp_path / "x.bin")


class TestResize:
    def test_factor_one_is_identity(self):
        x = np.random.default_rng(0).uniform(0, 1, (5, 7, 3))
        assert np.array_equal(resize_bilinear(x, 1.0), x)

    @pytest.mark.parametrize("factor", [0.5, 0.37, 1.5, 2.0, 3.3])
    def test_constant_stays_constant(self, factor):
        y = resize_bilinear(np.full((9, 6, 3), 0.25), factor)
        assert np.all(y == 0.25)
        assert y.shape == (max(1, round(9 * factor)), max(1, round(6 * factor)), 3)

    def test_factor_two_equals_upsample(self):
        x = np.random.default_rng(1).uniform(0, 1, (1, 5, 6, 3))
        assert np.array_equal(resize_bilinear(x, 2.0), upsample2x_bilinear(x))

    def test_tiny_factor_keeps_one_pixel(self):
        assert resize_bilinear(np.ones((3, 3, 1)), 0.01).shape == (1, 1, 1)

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            resize_bilinear(np.ones((3, 3, 1)), 0.0)
