"""FDDB annotations, ellipse-to-box conversion, pixmap images and resizing."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .detection import BBox
from .nn import bilinear_resize


@dataclass(frozen=True)
class FddbEllipse:
    major_axis_radius: float
    minor_axis_radius: float
    angle: float
    center_x: float
    center_y: float

    def __post_init__(self):
        if not (self.major_axis_radius > 0 and self.minor_axis_radius > 0):
            raise ValueError("ellipse radii must be positive")


@dataclass(frozen=True)
class EllipseBoxCoeffs:
    alpha: float = 1.3
    beta: float = 0.26

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta >= 0):
            raise ValueError("ellipse-to-box coefficients must be positive")


def ellipse_to_box(e: FddbEllipse, c: EllipseBoxCoeffs = EllipseBoxCoeffs()) -> BBox:
    """Square box of side ``alpha * w_e`` shifted down by ``beta * w_e``.

    ``w_e`` is the full minor axis; the ellipse angle is ignored.
    """
    w_e = 2.0 * e.minor_axis_radius
    side = c.alpha * w_e
    return BBox(e.center_x, e.center_y + c.beta * w_e, side, side)


# ----------------------------------------------------------------------- FDDB


def parse_fddb(annotations: str, fold_ids: Sequence[str] | None = None) -> list[tuple[str, list[FddbEllipse]]]:
    """Parse an FDDB ellipse list (``image id``, ``count``, ``count`` ellipse rows).

    ``annotations`` is the file text. With ``fold_ids`` the records are
    restricted to, and ordered like, that fold listing.
    """
    lines = annotations.splitlines()
    records, i = [], 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        image_id = lines[i].strip()
        if i + 1 >= len(lines):
            raise ValueError(f"line {i + 2}: missing face count for image {image_id!r}")
        try:
            count = int(lines[i + 1].strip())
        except ValueError:
            raise ValueError(f"line {i + 2}: malformed face count for image {image_id!r}") from None
        faces = []
        for k in range(count):
            lineno = i + 2 + k
            if lineno >= len(lines) or not lines[lineno].strip():
                raise ValueError(
                    f"image {image_id!r}: count says {count} faces but only {k} ellipse lines follow"
                )
            parts = lines[lineno].split()
            try:
                values = [float(v) for v in parts[:5]]
                if len(values) != 5:
                    raise ValueError
                faces.append(FddbEllipse(*values))
            except ValueError:
                raise ValueError(f"line {lineno + 1}: malformed ellipse for image {image_id!r}") from None
        records.append((image_id, faces))
        i += 2 + count
    if fold_ids is not None:
        by_id = dict(records)
        missing = [f for f in fold_ids if f not in by_id]
        if missing:
            raise ValueError(f"fold lists images without annotations: {missing[:5]}")
        records = [(f, by_id[f]) for f in fold_ids]
    return records


def read_fold(path) -> list[str]:
    return [line.strip() for line in Path(path).read_text().splitlines() if line.strip()]


def format_fddb(records: Sequence[tuple[str, Sequence[FddbEllipse]]]) -> str:
    out = []
    for image_id, faces in records:
        out.append(image_id)
        out.append(str(len(faces)))
        out.extend(f"{e.major_axis_radius!r} {e.minor_axis_radius!r} {e.angle!r} "
                   f"{e.center_x!r} {e.center_y!r}  1" for e in faces)
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------- images


@dataclass(frozen=True)
class Image:
    """8-bit image, ``pixels`` shaped ``(height, width, channels)``."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[..., None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"image must be HxWx1 or HxWx3, got {px.shape}")
        object.__setattr__(self, "pixels", px.astype(np.uint8))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def normalized(self) -> np.ndarray:
        return self.pixels.astype(np.float64) / 255.0

    def rgb(self) -> np.ndarray:
        """Normalized ``(H, W, 3)`` view; gray images are replicated."""
        x = self.normalized()
        return np.repeat(x, 3, axis=2) if x.shape[2] == 1 else x


def decode_pnm(data: bytes) -> Image:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ValueError("not a binary PNM (P5/P6) file: bad magic")
    channels = 3 if magic == b"P6" else 1
    pos, fields = 2, []
    while len(fields) < 3:
        if pos >= len(data):
            raise ValueError(f"truncated PNM header at byte {pos}")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            tok = re.match(rb"\d+", data[pos:pos + 16])
            if not tok:
                raise ValueError(f"malformed PNM header at byte {pos}")
            fields.append(int(tok.group()))
            pos += tok.end()
    if not data[pos:pos + 1].isspace():
        raise ValueError(f"malformed PNM header at byte {pos}")
    pos += 1
    width, height, maxval = fields
    if width <= 0 or height <= 0:
        raise ValueError(f"bad PNM dimensions {width}x{height}")
    if maxval != 255:
        raise ValueError(f"only 8-bit PNM (maxval 255) is supported, got {maxval}")
    n = width * height * channels
    body = data[pos:pos + n]
    if len(body) != n:
        raise ValueError(f"PNM pixel data truncated: expected {n} bytes, found {len(body)}")
    return Image(np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels))


def encode_pnm(img: Image) -> bytes:
    magic = b"P6" if img.channels == 3 else b"P5"
    return magic + f"\n{img.width} {img.height}\n255\n".encode() + img.pixels.tobytes()


def load_image(path) -> Image:
    """Load a P5/P6 pixmap; other formats go through Pillow when it is installed."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] in (b"P5", b"P6"):
        return decode_pnm(data)
    try:
        from PIL import Image as PILImage
    except ImportError:
        raise ValueError(f"{path}: not a binary PNM file and Pillow is unavailable") from None
    try:
        with PILImage.open(path) as im:
            im = im.convert("L" if im.mode in ("L", "1", "I;16") else "RGB")
            return Image(np.asarray(im))
    except OSError as exc:
        raise ValueError(f"{path}: cannot decode image ({exc})") from None


def save_image(img: Image, path) -> None:
    Path(path).write_bytes(encode_pnm(img))


def resize_bilinear(x, factor: float) -> np.ndarray:
    """Resize an ``(H, W, C)`` or ``(N, H, W, C)`` float array by ``factor``.

    Output extents are rounded to the nearest integer (at least 1) and
    sampled with the same half-pixel rule as the network's 2x upsample.
    """
    if not factor > 0:
        raise ValueError(f"resize factor must be positive, got {factor}")
    if isinstance(x, Image):
        x = x.normalized()
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 3
    if squeeze:
        x = x[None]
    if factor == 1.0:
        out = x.copy()
    else:
        out_h = max(1, int(round(x.shape[1] * factor)))
        out_w = max(1, int(round(x.shape[2] * factor)))
        out = bilinear_resize(x, out_h, out_w)
    return out[0] if squeeze else out
