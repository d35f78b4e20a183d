"""Portable float map codec.

Single-channel ("Pf") maps only; rows are stored bottom to top and the
scale line's sign gives the byte order (negative = little-endian).
"""

from pathlib import Path
from typing import Union

import numpy as np

from bp_layer import log
from bp_layer.errors import ERROR_BAD_FILE, InputError

PathLike = Union[str, Path]


def read_pfm(path: PathLike) -> np.ndarray:
    """Read a grayscale PFM into a float32 ``(H, W)`` array.

    Raises:
        InputError: Not a grayscale PFM, or truncated pixel data.
    """
    path = Path(path)
    try:
        with open(path, "rb") as pfm_file:
            tag = pfm_file.readline().decode("ascii").strip()
            dims = pfm_file.readline().decode("ascii").split()
            scale = float(pfm_file.readline().decode("ascii").strip())
            buf = pfm_file.read()
    except FileNotFoundError:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="no such file")) from None
    except (UnicodeDecodeError, ValueError) as error:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason=f"bad header ({error})")) from None

    if tag != "Pf":
        raise InputError(ERROR_BAD_FILE.format(path=path, reason=f"unsupported tag {tag!r}"))
    if len(dims) != 2 or not all(dim.isdigit() for dim in dims):
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="bad size line"))
    width, height = int(dims[0]), int(dims[1])
    dtype = "<f4" if scale < 0 else ">f4"
    if len(buf) < width * height * 4:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="truncated pixel data"))
    values = np.frombuffer(buf[: width * height * 4], dtype=dtype).reshape(height, width)
    log.debug(f"Read {width}x{height} float map from {path}")
    return np.flipud(values).astype(np.float32)


def write_pfm(path: PathLike, values: np.ndarray) -> None:
    """Write a ``(H, W)`` array as a little-endian grayscale PFM."""
    values = np.asarray(values)
    if values.ndim != 2:
        raise InputError(f"PFM maps must be 2-D, got shape {values.shape}")
    height, width = values.shape
    data = np.ascontiguousarray(np.flipud(values), dtype="<f4")
    with open(path, "wb") as pfm_file:
        pfm_file.write(f"Pf\n{width} {height}\n-1.0\n".encode("ascii"))
        pfm_file.write(data.tobytes())
    log.debug(f"Wrote {width}x{height} float map to {path}")
