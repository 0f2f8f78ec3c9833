"""Bit-exact PGM/PPM reading and writing.

Binary P5/P6 and ASCII P2 are supported.  Images travel through the engine as
float64 arrays in [0, 1]; files store ``floor(255*v + 0.5)`` (a documented
lossy 8-bit step).  Label maps reuse PGM with superpixel ids as pixel values,
two bytes big-endian per sample when the max id exceeds 255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class NetpbmError(Exception):
    """Malformed or unsupported netpbm file."""


def _tokens(data: bytes):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    i = 0
    n = len(data)
    while i < n:
        c = data[i : i + 1]
        if c in b" \t\r\n":
            i += 1
        elif c == b"#":
            j = data.find(b"\n", i)
            i = n if j < 0 else j + 1
        else:
            j = i
            while j < n and data[j : j + 1] not in b" \t\r\n":
                j += 1
            yield i, data[i:j]
            i = j


def _read_header(data: bytes, expect: tuple[bytes, ...]):
    it = _tokens(data)
    try:
        _, magic = next(it)
        if magic not in expect:
            raise NetpbmError(f"unsupported magic {magic!r}")
        fields = []
        for _ in range(3):
            pos, tok = next(it)
            fields.append((pos, tok, int(tok)))
    except StopIteration:
        raise NetpbmError("truncated header") from None
    except ValueError:
        raise NetpbmError("non-numeric header field") from None
    width, height, maxval = (v for _, _, v in fields)
    if width < 1 or height < 1 or not (1 <= maxval <= 65535):
        raise NetpbmError(f"bad header values {width}x{height} maxval={maxval}")
    # binary raster starts exactly one whitespace byte after the maxval token
    raster_at = fields[-1][0] + len(fields[-1][1]) + 1
    return magic, width, height, maxval, raster_at, it


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a P2 or P5 PGM; returns ((H, W) int array, maxval)."""
    data = Path(path).read_bytes()
    magic, width, height, maxval, raster_at, it = _read_header(data, (b"P2", b"P5"))
    count = width * height
    if magic == b"P2":
        try:
            flat = np.array([int(tok) for _, tok in it], dtype=np.int64)
        except ValueError:
            raise NetpbmError("non-numeric sample in P2 raster") from None
        if flat.size != count:
            raise NetpbmError(f"expected {count} samples, got {flat.size}")
    else:
        bytes_per = 1 if maxval < 256 else 2
        raster = data[raster_at : raster_at + count * bytes_per]
        if len(raster) != count * bytes_per:
            raise NetpbmError("truncated P5 raster")
        dtype = np.uint8 if bytes_per == 1 else ">u2"
        flat = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    if flat.size and flat.max() > maxval:
        raise NetpbmError("sample exceeds maxval")
    return flat.reshape(height, width), maxval


def read_ppm(path) -> tuple[np.ndarray, int]:
    """Read a P6 PPM; returns ((H, W, 3) int array, maxval)."""
    data = Path(path).read_bytes()
    _, width, height, maxval, raster_at, _ = _read_header(data, (b"P6",))
    bytes_per = 1 if maxval < 256 else 2
    count = width * height * 3
    raster = data[raster_at : raster_at + count * bytes_per]
    if len(raster) != count * bytes_per:
        raise NetpbmError("truncated P6 raster")
    dtype = np.uint8 if bytes_per == 1 else ">u2"
    flat = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    return flat.reshape(height, width, 3), maxval


def write_pgm(path, samples: np.ndarray, maxval: int, ascii_format: bool = False) -> None:
    """Write a (H, W) integer array as P5 (or P2 when ``ascii_format``)."""
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise NetpbmError(f"PGM wants a 2-D array, got shape {samples.shape}")
    if not (1 <= maxval <= 65535):
        raise NetpbmError(f"maxval out of range: {maxval}")
    if samples.min() < 0 or samples.max() > maxval:
        raise NetpbmError("samples out of [0, maxval]")
    h, w = samples.shape
    if ascii_format:
        body = "\n".join(" ".join(str(int(v)) for v in row) for row in samples)
        payload = f"P2\n{w} {h}\n{maxval}\n{body}\n".encode("ascii")
    else:
        dtype = np.uint8 if maxval < 256 else ">u2"
        payload = f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + samples.astype(dtype).tobytes()
    Path(path).write_bytes(payload)


def write_ppm(path, samples: np.ndarray, maxval: int) -> None:
    """Write a (H, W, 3) integer array as binary P6."""
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[2] != 3:
        raise NetpbmError(f"PPM wants a (H, W, 3) array, got shape {samples.shape}")
    if not (1 <= maxval <= 65535):
        raise NetpbmError(f"maxval out of range: {maxval}")
    if samples.min() < 0 or samples.max() > maxval:
        raise NetpbmError("samples out of [0, maxval]")
    h, w, _ = samples.shape
    dtype = np.uint8 if maxval < 256 else ">u2"
    payload = f"P6\n{w} {h}\n{maxval}\n".encode("ascii") + samples.astype(dtype).tobytes()
    Path(path).write_bytes(payload)


def quantize(image: np.ndarray) -> np.ndarray:
    """Unit-interval floats to 8-bit samples: floor(255*v + 0.5)."""
    image = np.asarray(image, dtype=np.float64)
    if image.size and (image.min() < 0.0 or image.max() > 1.0):
        raise NetpbmError("image values must lie in [0, 1]")
    return np.floor(255.0 * image + 0.5).astype(np.int64)


def read_image(path) -> np.ndarray:
    """Read a PGM/PPM file as a (H, W, C) float64 image in [0, 1]."""
    path = Path(path)
    head = path.read_bytes()[:2]
    if head in (b"P2", b"P5"):
        arr, maxval = read_pgm(path)
        arr = arr[:, :, None]
    elif head == b"P6":
        arr, maxval = read_ppm(path)
    else:
        raise NetpbmError(f"unsupported image magic {head!r}")
    return arr.astype(np.float64) / float(maxval)


def write_image(path, image: np.ndarray) -> None:
    """Write a (H, W, 1) image as PGM or a (H, W, 3) image as PPM (8-bit)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise NetpbmError(f"expected (H, W, 1) or (H, W, 3), got shape {image.shape}")
    q = quantize(image)
    if image.shape[2] == 1:
        write_pgm(path, q[:, :, 0], 255)
    else:
        write_ppm(path, q, 255)
