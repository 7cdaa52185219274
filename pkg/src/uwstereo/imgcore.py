"""Image representation, file I/O and raster utilities.

Samples are float64 in a nominal [0, 1] range. 8-bit conversion only
happens at the file boundary.
"""

from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass

import numpy as np
from PIL import Image


class ImageError(ValueError):
    pass


class ColorSpace(str, enum.Enum):
    RGB = "RGB"
    YCBCR = "YCbCr"
    GRAY = "Gray"


@dataclass(frozen=True)
class RasterImage:
    """Planar float image stored as an (height, width, channels) array."""

    data: np.ndarray
    colorspace: ColorSpace = ColorSpace.GRAY

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ImageError(f"expected HxW or HxWx{{1,3}} array, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ImageError("zero-dimension image")
        cs = ColorSpace(self.colorspace)
        if (data.shape[2] == 1) != (cs is ColorSpace.GRAY):
            raise ImageError(f"{data.shape[2]} channel(s) incompatible with colorspace {cs.value}")
        if not np.all(np.isfinite(data)):
            raise ImageError("image contains NaN or Inf samples")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "colorspace", cs)

    @classmethod
    def gray(cls, array) -> "RasterImage":
        return cls(np.asarray(array, dtype=np.float64), ColorSpace.GRAY)

    @classmethod
    def rgb(cls, array) -> "RasterImage":
        return cls(np.asarray(array, dtype=np.float64), ColorSpace.RGB)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def plane(self) -> np.ndarray:
        """The single channel of a gray image as a 2-D array."""
        if self.channels != 1:
            raise ImageError("plane is only defined for single-channel images")
        return self.data[:, :, 0]

    def channel(self, k: int) -> np.ndarray:
        return self.data[:, :, k]

    def to_gray(self) -> "RasterImage":
        if self.colorspace is ColorSpace.GRAY:
            return self
        if self.colorspace is ColorSpace.YCBCR:
            return RasterImage.gray(self.data[:, :, 0])
        return RasterImage.gray(rgb_to_ycbcr(self).data[:, :, 0])


@dataclass(frozen=True)
class ExtensionRecord:
    original_width: int
    original_height: int
    padded_size: int

    def __post_init__(self):
        n = self.padded_size
        if n < 1 or n & (n - 1):
            raise ImageError(f"padded size {n} is not a power of two")
        if n < max(self.original_width, self.original_height):
            raise ImageError("padded size smaller than the original image")


# ---------------------------------------------------------------------------
# file I/O


def load_image(path: str | os.PathLike) -> RasterImage:
    """Read a PNG or binary PPM/PGM file into a [0, 1] float image."""
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise ImageError(f"no such file: {path}")
    try:
        with Image.open(path) as im:
            if im.format not in ("PNG", "PPM"):
                raise ImageError(f"unsupported format {im.format!r} for {path}")
            if im.mode in ("L", "P", "1", "LA"):
                arr = np.asarray(im.convert("L"))
            else:
                arr = np.asarray(im.convert("RGB"))
    except ImageError:
        raise
    except Exception as exc:
        raise ImageError(f"cannot read {path}: {exc}") from exc
    if arr.size == 0:
        raise ImageError(f"zero-dimension image in {path}")
    data = arr.astype(np.float64) / 255.0
    if data.ndim == 2:
        return RasterImage.gray(data)
    return RasterImage.rgb(data)


def to_uint8(img: RasterImage) -> np.ndarray:
    return np.round(np.clip(img.data, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(img: RasterImage, path: str | os.PathLike) -> None:
    """Write an 8-bit PNG/PPM/PGM (format from the extension). YCbCr is converted to RGB."""
    path = os.fspath(path)
    if img.colorspace is ColorSpace.YCBCR:
        img = ycbcr_to_rgb(img)
    arr = to_uint8(img)
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".png", ".ppm", ".pgm", ".pnm"):
        raise ImageError(f"unsupported output extension {ext!r}")
    if ext == ".pgm" and img.channels != 1:
        raise ImageError("PGM output requires a gray image")
    if ext == ".ppm" and img.channels != 3:
        raise ImageError("PPM output requires an RGB image")
    mode = "L" if img.channels == 1 else "RGB"
    Image.fromarray(arr[:, :, 0] if img.channels == 1 else arr, mode=mode).save(
        path, format="PNG" if ext == ".png" else "PPM"
    )


def write_pfm(array: np.ndarray, path: str | os.PathLike) -> None:
    """Little-endian PFM (scale -1.0), rows stored bottom to top.

    A 2-D array is written as gray ("Pf"), an (H, W, 3) array as colour ("PF").
    """
    a = np.asarray(array, dtype="<f4")
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    if a.ndim == 2:
        magic = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"PF"
    else:
        raise ImageError("PFM writer expects an (H, W) or (H, W, 3) array")
    h, w = a.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n-1.0\n" % (w, h))
        fh.write(np.ascontiguousarray(a[::-1]).tobytes())


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise ImageError(f"{path}: not a PFM file")
        dims = fh.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(fh.readline().strip())
        nch = 1 if magic == b"Pf" else 3
        dtype = "<f4" if scale < 0 else ">f4"
        a = np.frombuffer(fh.read(w * h * nch * 4), dtype=dtype)
    shape = (h, w) if nch == 1 else (h, w, 3)
    return a.reshape(shape)[::-1].astype(np.float64)


def write_pgm16(array: np.ndarray, path: str | os.PathLike) -> None:
    """Binary 16-bit PGM (big-endian samples, maxval 65535)."""
    a = np.asarray(array)
    if a.ndim != 2 or a.min(initial=0) < 0 or a.max(initial=0) > 65535:
        raise ImageError("PGM16 writer expects a 2-D array of values in [0, 65535]")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n65535\n" % (w, h))
        fh.write(a.astype(">u2").tobytes())


def read_pgm16(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1
    if tokens[0] != b"P5":
        raise ImageError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw[pos:], dtype=dtype, count=w * h).reshape(h, w).astype(np.int64)


# ---------------------------------------------------------------------------
# color conversion (full-range BT.601, chroma centred on 0.5)

_KR, _KB = 0.299, 0.114
_KG = 1.0 - _KR - _KB
_RGB2YCC = np.array(
    [
        [_KR, _KG, _KB],
        [-0.5 * _KR / (1 - _KB), -0.5 * _KG / (1 - _KB), 0.5],
        [0.5, -0.5 * _KG / (1 - _KR), -0.5 * _KB / (1 - _KR)],
    ]
)
_YCC2RGB = np.linalg.inv(_RGB2YCC)
_CHROMA_OFFSET = np.array([0.0, 0.5, 0.5])


def rgb_to_ycbcr(img: RasterImage) -> RasterImage:
    if img.colorspace is not ColorSpace.RGB:
        raise ImageError(f"rgb_to_ycbcr needs an RGB image, got {img.colorspace.value}")
    out = img.data @ _RGB2YCC.T + _CHROMA_OFFSET
    return RasterImage(out, ColorSpace.YCBCR)


def ycbcr_to_rgb(img: RasterImage) -> RasterImage:
    if img.colorspace is not ColorSpace.YCBCR:
        raise ImageError(f"ycbcr_to_rgb needs a YCbCr image, got {img.colorspace.value}")
    out = (img.data - _CHROMA_OFFSET) @ _YCC2RGB.T
    return RasterImage(out, ColorSpace.RGB)


# ---------------------------------------------------------------------------
# symmetric extension


def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def _half_sample_index(n_out: int, n_in: int) -> np.ndarray:
    # Half-sample symmetric reflection: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    idx = np.arange(n_out) % (2 * n_in)
    return np.where(idx < n_in, idx, 2 * n_in - 1 - idx)


def symmetric_extend(img: RasterImage) -> tuple[RasterImage, ExtensionRecord]:
    """Mirror-pad to a power-of-two square anchored at the origin."""
    h, w = img.height, img.width
    n = _next_pow2(max(h, w))
    rows = _half_sample_index(n, h)
    cols = _half_sample_index(n, w)
    out = img.data[np.ix_(rows, cols)]
    return RasterImage(out, img.colorspace), ExtensionRecord(w, h, n)


def crop_extension(img: RasterImage, rec: ExtensionRecord) -> RasterImage:
    if img.height != rec.padded_size or img.width != rec.padded_size:
        raise ImageError(
            f"image is {img.width}x{img.height}, extension record expects "
            f"{rec.padded_size}x{rec.padded_size}"
        )
    out = img.data[: rec.original_height, : rec.original_width].copy()
    return RasterImage(out, img.colorspace)
