"""Binary portable graymap (P5) codec, 8-bit or 16-bit big-endian."""

from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from bp_layer import log
from bp_layer.errors import ERROR_BAD_FILE, InputError

PathLike = Union[str, Path]


def _header_tokens(data: bytes, count: int) -> Tuple[List[bytes], int]:
    """First ``count`` whitespace separated header tokens, skipping comments."""
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            break
        tokens.append(data[start:pos])
    # exactly one whitespace byte ends the header
    return tokens, pos + 1


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a P5 graymap as a float64 ``(H, W)`` array of raw gray levels.

    Raises:
        InputError: Missing file, bad header or truncated pixel data.
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="no such file")) from None
    tokens, offset = _header_tokens(data, 4)
    if len(tokens) != 4 or tokens[0] != b"P5":
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="not a binary PGM (P5)"))
    try:
        width, height, maxval = (int(token) for token in tokens[1:])
    except ValueError:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="bad header numbers")) from None
    if not 0 < maxval < 65536 or width < 1 or height < 1:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="bad header numbers"))
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    size = width * height * dtype.itemsize
    if len(data) - offset < size:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="truncated pixel data"))
    pixels = np.frombuffer(data[offset : offset + size], dtype=dtype).reshape(height, width)
    log.debug(f"Read {width}x{height} graymap (maxval {maxval}) from {path}")
    return pixels.astype(np.float64)


def write_pgm(path: PathLike, values: np.ndarray, maxval: int = 255) -> None:
    """Write integer gray levels in ``[0, maxval]``; 16-bit when maxval > 255."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise InputError(f"PGM images must be 2-D, got shape {values.shape}")
    if not 0 < maxval < 65536:
        raise InputError(f"PGM maxval must be in [1, 65535], got {maxval}")
    height, width = values.shape
    dtype = ">u2" if maxval > 255 else "u1"
    pixels = np.clip(np.rint(values), 0, maxval).astype(dtype)
    with open(path, "wb") as pgm_file:
        pgm_file.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        pgm_file.write(pixels.tobytes())
    log.debug(f"Wrote {width}x{height} graymap to {path}")
