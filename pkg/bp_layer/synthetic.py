"""Seeded synthetic scenes with known ground truth."""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

GRAY_LEVELS: float = 255.0


@dataclass
class StereoScene:
    left: np.ndarray
    right: np.ndarray
    disparity: np.ndarray  # NaN where the match falls outside the right image


@dataclass
class FlowScene:
    image0: np.ndarray
    image1: np.ndarray
    flow: np.ndarray  # (H, W, 2): rows then columns


@dataclass
class SegmentationScene:
    probs: np.ndarray
    truth: np.ndarray
    noisy: np.ndarray


def _texture(rng: np.random.Generator, height: int, width: int, blur: float = 0.0) -> np.ndarray:
    """White-noise gray levels, optionally low-passed and stretched back to full range."""
    texture = rng.integers(0, 256, size=(height, width)).astype(np.float64)
    if blur <= 0:
        return texture
    smooth = gaussian_filter(texture, sigma=blur, mode="reflect")
    low, high = float(smooth.min()), float(smooth.max())
    return np.rint((smooth - low) / max(high - low, 1e-12) * GRAY_LEVELS)


def _add_noise(image: np.ndarray, rng: np.random.Generator, noise: float) -> np.ndarray:
    if noise <= 0:
        return image
    return np.clip(np.rint(image + rng.normal(0.0, noise, size=image.shape)), 0, GRAY_LEVELS)


def piecewise_constant(
    rng: np.random.Generator, height: int, width: int, values: int, patches: int = 3
) -> np.ndarray:
    """A background value with a few axis-aligned rectangles of other values."""
    field = np.full((height, width), int(rng.integers(0, values)), dtype=np.int64)
    for _ in range(patches):
        top = int(rng.integers(0, max(height // 2, 1)))
        left = int(rng.integers(0, max(width // 2, 1)))
        bottom = int(rng.integers(top + max(height // 4, 1), height + 1))
        right = int(rng.integers(left + max(width // 4, 1), width + 1))
        field[top:bottom, left:right] = int(rng.integers(0, values))
    return field


def stereo_scene(
    height: int,
    width: int,
    max_disp: int,
    seed: int = 0,
    noise: float = 0.0,
    blur: float = 0.0,
) -> StereoScene:
    """Random-texture stereo pair over a piecewise-constant disparity map.

    The left image at ``(y, x)`` shows the right image at ``(y, x - d)``;
    left pixels whose match leaves the image get fresh texture and NaN
    ground truth. ``noise`` is the standard deviation of additive gray
    level noise applied to both images. ``blur`` is the Gaussian width of
    the texture in pixels; smooth texture keeps its contrast under 2x2
    pooling while the noise shrinks, so coarse levels match more reliably.
    """
    rng = np.random.default_rng(seed)
    disparity = piecewise_constant(rng, height, width, max_disp + 1)
    right = _texture(rng, height, width, blur)
    left = _texture(rng, height, width, blur)
    ys, xs = np.indices((height, width))
    source = xs - disparity
    inside = source >= 0
    left[inside] = right[ys[inside], source[inside]]
    truth = np.where(inside, disparity.astype(np.float64), np.nan)
    return StereoScene(_add_noise(left, rng, noise), _add_noise(right, rng, noise), truth)


def flow_scene(
    height: int,
    width: int,
    flow: Tuple[int, int],
    seed: int = 0,
    noise: float = 0.0,
) -> FlowScene:
    """A pair related by one constant integer displacement.

    ``image0`` at ``(y, x)`` shows ``image1`` at ``(y + u1, x + u2)``.
    """
    rng = np.random.default_rng(seed)
    u1, u2 = flow
    image1 = _texture(rng, height, width)
    image0 = _texture(rng, height, width)
    ys, xs = np.indices((height, width))
    sy, sx = ys + u1, xs + u2
    inside = (sy >= 0) & (sy < height) & (sx >= 0) & (sx < width)
    image0[inside] = image1[sy[inside], sx[inside]]
    truth = np.zeros((height, width, 2))
    truth[..., 0] = u1
    truth[..., 1] = u2
    truth[~inside] = np.nan
    return FlowScene(_add_noise(image0, rng, noise), _add_noise(image1, rng, noise), truth)


def segmentation_scene(
    height: int, width: int, labels: int, seed: int = 0, noise: float = 0.1
) -> SegmentationScene:
    """One-hot probabilities of a blocky labeling with uniform label noise.

    Each pixel is relabelled uniformly at random with probability ``noise``.
    """
    rng = np.random.default_rng(seed)
    truth = piecewise_constant(rng, height, width, labels, patches=4)
    flip = rng.random((height, width)) < noise
    noisy = np.where(flip, rng.integers(0, labels, size=(height, width)), truth)
    probs = np.eye(labels)[noisy]
    return SegmentationScene(probs, truth, noisy)
