"""
Binary netpbm images: P6 (colour) for scene images and P5 (gray) for mask
and density dumps. Only maxval 255 is written; reading accepts any 8-bit
maxval.
"""

import numpy as np

from maskcount.errors import SceneFormatError


def to_bytes(values):
    """
    Quantize values in [0, 1] to uint8.
    """
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(image, filename):
    """
    Write a channels-first (3, h, w) image with values in [0, 1] as P6.
    """
    pixels = to_bytes(np.transpose(image, (1, 2, 0)))
    height, width = pixels.shape[:2]
    with open(filename, "wb") as fd:
        fd.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fd.write(np.ascontiguousarray(pixels).tobytes())


def write_pgm(grid, filename, low=0.0, high=1.0):
    """
    Write a grid as P5, mapping [low, high] onto [0, 255].
    """
    grid = np.asarray(grid, dtype=np.float64)
    scaled = (grid - low) / (high - low) if high > low else np.zeros_like(grid)
    pixels = to_bytes(scaled)
    height, width = pixels.shape
    with open(filename, "wb") as fd:
        fd.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fd.write(np.ascontiguousarray(pixels).tobytes())


def _read_header(data, filename):
    """
    Parse the magic, width, height and maxval tokens (comments allowed).

    Returns the tokens and the offset of the first raster byte.
    """
    tokens = []
    offset = 0
    fields = ["magic", "width", "height", "maxval"]
    while len(tokens) < 4:
        while offset < len(data) and data[offset : offset + 1].isspace():
            offset += 1
        if offset >= len(data):
            raise SceneFormatError(filename, fields[len(tokens)], offset, "truncated header")
        if data[offset : offset + 1] == b"#":
            end = data.find(b"\n", offset)
            offset = len(data) if end < 0 else end + 1
            continue
        start = offset
        while offset < len(data) and not data[offset : offset + 1].isspace():
            offset += 1
        tokens.append((data[start:offset], start))

    # exactly one whitespace byte separates the header from the raster
    return tokens, offset + 1


def read_netpbm(filename):
    """
    Read a P5 or P6 file as uint8 pixels, (h, w) or (h, w, 3).
    """
    with open(filename, "rb") as fd:
        data = fd.read()

    tokens, offset = _read_header(data, filename)
    (magic, _), (width, wpos), (height, hpos), (maxval, mpos) = tokens
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise SceneFormatError(filename, "magic", 0, f"unsupported format {magic!r}")

    parsed = []
    for name, raw, pos in [
        ("width", width, wpos),
        ("height", height, hpos),
        ("maxval", maxval, mpos),
    ]:
        try:
            value = int(raw)
        except ValueError:
            raise SceneFormatError(filename, name, pos, f"not an integer: {raw!r}")
        if value < 1:
            raise SceneFormatError(filename, name, pos, "must be positive")
        parsed.append(value)
    width, height, maxval = parsed
    if maxval > 255:
        raise SceneFormatError(filename, "maxval", mpos, "only 8-bit images are supported")

    length = width * height * channels
    if len(data) - offset < length:
        raise SceneFormatError(
            filename,
            "raster",
            len(data),
            f"expected {length} bytes, found {max(0, len(data) - offset)}",
        )
    pixels = np.frombuffer(data, dtype=np.uint8, count=length, offset=offset)
    if channels == 1:
        pixels = pixels.reshape(height, width)
    else:
        pixels = pixels.reshape(height, width, 3)
    if maxval != 255:
        pixels = np.rint(pixels.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    return pixels


def read_ppm(filename):
    """
    Read a P6 file as a channels-first float image in [0, 1].
    """
    pixels = read_netpbm(filename)
    if pixels.ndim != 3:
        raise SceneFormatError(filename, "magic", 0, "expected a colour (P6) image")
    return np.transpose(pixels, (2, 0, 1)).astype(np.float64) / 255.0
