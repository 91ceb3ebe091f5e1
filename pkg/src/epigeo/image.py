"""Grayscale frames: decoding, Gaussian filtering, SSIM and motion level.

Pixel values are float64 luminance in [0, 1]. RGB inputs are reduced with
BT.601 weights (Y = 0.299 R + 0.587 G + 0.114 B). All convolutions use
reflect padding (edge sample not repeated), the single border policy of
this package.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# 11x11 Gaussian window, sigma 1.5, C1/C2 from L = 1.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01 * 1.0) ** 2
SSIM_C2 = (0.03 * 1.0) ** 2


class DecodeError(ValueError):
    """Malformed image stream. Carries the byte offset where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class Frame:
    """Single grayscale image; `pixels` is a (height, width) float64 array in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"frame pixels must be a 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("frame contains non-finite pixel values")
        if px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("frame pixel values must lie in [0, 1]")
        self.pixels = px

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def diagonal(self):
        return float(np.hypot(self.width, self.height))


# ---------------------------------------------------------------------------
# decoding


def decode_frame(data: bytes, format: str | None = None) -> Frame:
    """Decode PGM (binary P5) or PNG bytes into a Frame.

    `format` may be "PGM" or "PNG"; when omitted it is sniffed from the
    magic bytes. RGB PNGs are converted to luminance with BT.601 weights;
    sample values are scaled by the format's maximum (maxval for PGM,
    255/65535 for 8/16-bit PNG).
    """
    if format is None:
        if data[:2] == b"P5":
            format = "PGM"
        elif data[:8] == PNG_SIGNATURE:
            format = "PNG"
        else:
            raise DecodeError("unrecognized image magic", 0)
    fmt = format.upper()
    if fmt == "PGM":
        return _decode_pgm(data)
    if fmt == "PNG":
        return _decode_png(data)
    raise ValueError(f"unsupported format {format!r} (expected PGM or PNG)")


def _decode_pgm(data: bytes) -> Frame:
    if data[:2] != b"P5":
        raise DecodeError("not a binary PGM (missing P5 magic)", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(data):
            raise DecodeError("truncated PGM header", pos)
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif c.isdigit():
            start = pos
            while pos < len(data) and data[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(data[start:pos]))
        else:
            raise DecodeError(f"unexpected byte {c!r} in PGM header", pos)
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise DecodeError("missing whitespace after PGM maxval", pos)
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DecodeError(f"invalid PGM dimensions {width}x{height}", 2)
    if not 0 < maxval < 65536:
        raise DecodeError(f"invalid PGM maxval {maxval}", 2)
    bytes_per_sample = 1 if maxval < 256 else 2
    need = width * height * bytes_per_sample
    body = data[pos : pos + need]
    if len(body) < need:
        raise DecodeError(
            f"truncated PGM body: expected {need} bytes, found {len(body)}",
            pos + len(body),
        )
    dtype = np.uint8 if bytes_per_sample == 1 else np.dtype(">u2")
    raw = np.frombuffer(body, dtype=dtype).astype(np.float64).reshape(height, width)
    return Frame(raw / maxval)


PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_PNG_FILTER_NAMES = {0: "None", 1: "Sub", 2: "Up", 3: "Average", 4: "Paeth"}


def _decode_png(data: bytes) -> Frame:
    if data[:8] != PNG_SIGNATURE:
        raise DecodeError("not a PNG (bad signature)", 0)
    pos = 8
    header = None
    idat = bytearray()
    ended = False
    while not ended:
        if pos + 8 > len(data):
            raise DecodeError("truncated PNG chunk header", pos)
        length, ctype = struct.unpack(">I4s", data[pos : pos + 8])
        chunk_start = pos
        pos += 8
        if pos + length + 4 > len(data):
            raise DecodeError(f"truncated PNG chunk {ctype!r}", pos)
        payload = data[pos : pos + length]
        pos += length
        (crc,) = struct.unpack(">I", data[pos : pos + 4])
        if zlib.crc32(ctype + payload) & 0xFFFFFFFF != crc:
            raise DecodeError(f"PNG chunk {ctype!r} CRC mismatch", pos)
        pos += 4
        if ctype == b"IHDR":
            if length != 13:
                raise DecodeError("PNG IHDR has wrong length", chunk_start)
            header = struct.unpack(">IIBBBBB", payload)
        elif ctype == b"IDAT":
            if header is None:
                raise DecodeError("PNG IDAT before IHDR", chunk_start)
            idat.extend(payload)
        elif ctype == b"IEND":
            ended = True
        # ancillary chunks are skipped
    if header is None:
        raise DecodeError("PNG missing IHDR", 8)
    width, height, bit_depth, color_type, compression, filter_method, interlace = header
    if width < 1 or height < 1:
        raise DecodeError(f"invalid PNG dimensions {width}x{height}", 16)
    if bit_depth not in (8, 16):
        raise DecodeError(f"unsupported PNG bit depth {bit_depth}", 24)
    if color_type not in (0, 2):
        raise DecodeError(
            f"unsupported PNG color type {color_type} (grayscale or RGB only)", 25
        )
    if compression != 0 or filter_method != 0:
        raise DecodeError("unsupported PNG compression/filter method", 26)
    if interlace != 0:
        raise DecodeError("interlaced PNG not supported", 28)
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise DecodeError(f"corrupt PNG pixel stream: {exc}", 8) from exc
    channels = 1 if color_type == 0 else 3
    sample_bytes = bit_depth // 8
    stride = width * channels * sample_bytes
    if len(raw) != height * (stride + 1):
        raise DecodeError(
            f"PNG pixel stream has {len(raw)} bytes, expected {height * (stride + 1)}", 8
        )
    unfiltered = _png_unfilter(raw, height, stride, channels * sample_bytes)
    if bit_depth == 8:
        samples = unfiltered.astype(np.float64) / 255.0
    else:
        flat = unfiltered.reshape(height, width * channels, 2).astype(np.float64)
        samples = (flat[..., 0] * 256.0 + flat[..., 1]) / 65535.0
        samples = samples.reshape(height, -1)
    samples = samples.reshape(height, width, channels)
    if channels == 1:
        luma = samples[:, :, 0]
    else:
        luma = (
            LUMA_WEIGHTS[0] * samples[:, :, 0]
            + LUMA_WEIGHTS[1] * samples[:, :, 1]
            + LUMA_WEIGHTS[2] * samples[:, :, 2]
        )
    return Frame(np.clip(luma, 0.0, 1.0))


def _png_unfilter(raw: bytes, height: int, stride: int, bpp: int) -> np.ndarray:
    """Undo per-scanline PNG filters. Returns a (height, stride) uint8 array."""
    out = np.zeros((height, stride), dtype=np.uint8)
    prev = np.zeros(stride, dtype=np.int32)
    for row in range(height):
        offset = row * (stride + 1)
        ftype = raw[offset]
        line = np.frombuffer(raw, np.uint8, stride, offset + 1).astype(np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = np.zeros(stride, dtype=np.int32)
            for i in range(stride):
                a = cur[i - bpp] if i >= bpp else 0
                b = prev[i]
                if ftype == 1:
                    pred = a
                elif ftype == 3:
                    pred = (a + b) >> 1
                else:
                    c = prev[i - bpp] if i >= bpp else 0
                    p = a + b - c
                    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                    pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
                cur[i] = (line[i] + pred) & 0xFF
        else:
            raise DecodeError(f"invalid PNG filter type {ftype}", offset)
        out[row] = cur
        prev = cur
    return out


# ---------------------------------------------------------------------------
# filtering


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian kernel with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / sigma) ** 2)
    return k / k.sum()


def _convolve_axis_reflect(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    radius = len(kernel) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(img, pad, mode="reflect")
    windows = sliding_window_view(padded, len(kernel), axis=axis)
    return windows @ kernel[::-1]


def gaussian_blur_array(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a 2-D array, reflect padding."""
    kernel = gaussian_kernel_1d(sigma)
    out = _convolve_axis_reflect(np.asarray(img, dtype=np.float64), kernel, axis=0)
    return _convolve_axis_reflect(out, kernel, axis=1)


def gaussian_blur(frame: Frame, sigma: float) -> Frame:
    """Gaussian-blur a frame; output has the same dimensions."""
    blurred = gaussian_blur_array(frame.pixels, sigma)
    # clip FP dust so the [0, 1] frame invariant survives round-trips
    return Frame(np.clip(blurred, 0.0, 1.0))


def resize_max_dim(frame: Frame, max_dim: int):
    """Downscale so the longer side equals max_dim; returns (frame, scale).

    Bilinear sampling after an anti-alias blur. Frames already small enough
    come back unchanged with scale 1.
    """
    if max_dim < 16:
        raise ValueError("max_dim must be >= 16")
    longest = max(frame.width, frame.height)
    if longest <= max_dim:
        return frame, 1.0
    scale = max_dim / longest
    out_w = max(int(round(frame.width * scale)), 1)
    out_h = max(int(round(frame.height * scale)), 1)
    sigma = 0.5 * np.sqrt(max(1.0 / scale**2 - 1.0, 1e-6))
    src = gaussian_blur_array(frame.pixels, sigma)
    xs = (np.arange(out_w) + 0.5) / scale - 0.5
    ys = (np.arange(out_h) + 0.5) / scale - 0.5
    x0 = np.clip(np.floor(xs).astype(int), 0, frame.width - 2)
    y0 = np.clip(np.floor(ys).astype(int), 0, frame.height - 2)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x0 + 1] * fx
    bot = src[y0 + 1][:, x0] * (1 - fx) + src[y0 + 1][:, x0 + 1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return Frame(np.clip(out, 0.0, 1.0)), scale


# ---------------------------------------------------------------------------
# SSIM / motion level


def _conv_valid_axis(img, kernel, axis):
    windows = sliding_window_view(img, len(kernel), axis=axis)
    return windows @ kernel


def _ssim_window_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return _conv_valid_axis(_conv_valid_axis(img, kernel, 0), kernel, 1)


def ssim(a: Frame, b: Frame) -> float:
    """Structural similarity between two equally sized frames.

    Gaussian-weighted 11x11 windows (sigma 1.5), dynamic range 1.0, mean
    over all fully valid window positions. Returns a value in [-1, 1].
    """
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"ssim requires identical dimensions, got {a.width}x{a.height} "
            f"vs {b.width}x{b.height}"
        )
    if min(a.height, a.width) < SSIM_WINDOW:
        raise ValueError(f"ssim requires min dimension >= {SSIM_WINDOW}")
    x = a.pixels
    y = b.pixels
    radius = (SSIM_WINDOW - 1) // 2
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (xs / SSIM_SIGMA) ** 2)
    k /= k.sum()

    mu_x = _ssim_window_filter(x, k)
    mu_y = _ssim_window_filter(y, k)
    var_x = _ssim_window_filter(x * x, k) - mu_x * mu_x
    var_y = _ssim_window_filter(y * y, k) - mu_y * mu_y
    cov_xy = _ssim_window_filter(x * y, k) - mu_x * mu_y

    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov_xy + SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
    return float(np.mean(num / den))


def motion_level(frames: list[Frame]) -> float:
    """Mean SSIM between the first frame and each later frame.

    Lower values mean more motion; a static sequence scores 1.0.
    """
    if len(frames) < 2:
        raise ValueError(f"motion_level needs at least 2 frames, got {len(frames)}")
    first = frames[0]
    return float(np.mean([ssim(first, f) for f in frames[1:]]))
