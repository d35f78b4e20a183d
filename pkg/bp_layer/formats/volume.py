"""CSV probability volumes.

Layout: a header row ``H,W,L`` followed by ``H * W`` rows (row-major pixel
order) of ``L`` comma separated reals.
"""

import csv
from pathlib import Path
from typing import Union

import numpy as np

from bp_layer import log
from bp_layer.errors import ERROR_BAD_FILE, ERROR_MISSING_ROW, InputError

PathLike = Union[str, Path]


def read_volume(path: PathLike) -> np.ndarray:
    """Read a CSV volume as float64 ``(H, W, L)`` without renormalizing.

    Raises:
        InputError: Missing file, malformed header or row, or too few rows.
    """
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as volume_file:
            rows = list(csv.reader(volume_file))
    except FileNotFoundError:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="no such file")) from None
    if not rows:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="empty file"))
    try:
        height, width, labels = (int(value) for value in rows[0])
    except ValueError:
        raise InputError(
            ERROR_BAD_FILE.format(path=path, reason=f"bad header {rows[0]!r}, expected H,W,L")
        ) from None
    if min(height, width, labels) < 1:
        raise InputError(ERROR_BAD_FILE.format(path=path, reason="non-positive dimensions"))

    count = height * width
    body = [row for row in rows[1:] if row]
    if len(body) < count:
        raise InputError(ERROR_MISSING_ROW.format(path=path, row=len(body), rows=count))
    volume = np.empty((count, labels))
    for index, row in enumerate(body[:count]):
        if len(row) != labels:
            raise InputError(
                ERROR_BAD_FILE.format(
                    path=path, reason=f"row {index} has {len(row)} values, expected {labels}"
                )
            )
        try:
            volume[index] = [float(value) for value in row]
        except ValueError:
            raise InputError(
                ERROR_BAD_FILE.format(path=path, reason=f"row {index} is not numeric")
            ) from None
    log.debug(f"Read {height}x{width}x{labels} volume from {path}")
    return volume.reshape(height, width, labels)


def write_volume(path: PathLike, volume: np.ndarray) -> None:
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise InputError(f"Volumes must be 3-D, got shape {volume.shape}")
    height, width, labels = volume.shape
    with open(path, "w", newline="", encoding="utf-8") as volume_file:
        writer = csv.writer(volume_file)
        writer.writerow([height, width, labels])
        for row in volume.reshape(-1, labels):
            writer.writerow([repr(float(value)) for value in row])
    log.debug(f"Wrote {height}x{width}x{labels} volume to {path}")
