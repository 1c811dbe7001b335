"""Edge-map preprocessing and the configurable view-synthesis proxy.

The Canny detector runs the classic five stages: Gaussian blur (5x5),
Sobel gradients, non-maximum suppression with the gradient direction
quantized to four bins, double thresholding relative to the maximum
gradient magnitude, and 8-connected hysteresis. Border pixels are never
edges.

The proxy stands in for a learned cross-view generator: it blends the
true paired target image with seeded noise at a fidelity set by ``rho``
and can route selected channels from the source view instead, so the
quality and information content of "synthesized" inputs are tunable.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import DataError, DimensionError, ParameterError

GRAY_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class ProxyConfig:
    rho: float = 1.0            # 1: perfect copy of the paired target, 0: pure noise
    noise_std: float = 0.3
    complement_channels: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ParameterError(f"rho must lie in [0, 1], got {self.rho}")
        if self.noise_std < 0:
            raise ParameterError(f"noise_std must be non-negative, got {self.noise_std}")


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """Luma-weighted grayscale of a (3, H, W) image in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise DimensionError(f"expected (3, H, W) image, got shape {rgb.shape}")
    if rgb.min() < 0.0 or rgb.max() > 1.0:
        raise DataError("pixel values must lie in [0, 1]")
    r, g, b = GRAY_WEIGHTS
    return r * rgb[0] + g * rgb[1] + b * rgb[2]


def _gaussian_kernel5(sigma: float) -> np.ndarray:
    ax = np.arange(-2, 3, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx * xx + yy * yy) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter2(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate with reflect padding so output matches the input size."""
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((ph, ph), (pw, pw)), mode="reflect")
    out = np.zeros_like(img)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i:i + img.shape[0], j:j + img.shape[1]]
    return out


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def _nms_quantized(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Keep pixels that are local maxima along the gradient direction,
    with the direction snapped to 0/45/90/135 degrees. The comparison is
    strict against one neighbor and non-strict against the other so a
    two-pixel plateau keeps exactly one ridge line. The one-pixel border
    is always suppressed."""
    h, w = mag.shape
    angle = np.rad2deg(np.arctan2(gy, gx)) % 180.0
    out = np.zeros((h, w), dtype=bool)
    m = mag[1:-1, 1:-1]

    bins = [
        ((angle < 22.5) | (angle >= 157.5), (0, 1)),    # horizontal gradient: left/right
        ((angle >= 22.5) & (angle < 67.5), (1, 1)),     # diagonal
        ((angle >= 67.5) & (angle < 112.5), (1, 0)),    # vertical gradient: up/down
        ((angle >= 112.5) & (angle < 157.5), (1, -1)),  # anti-diagonal
    ]
    for sel, (dy, dx) in bins:
        nxt = mag[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        prv = mag[1 - dy:h - 1 - dy, 1 - dx:w - 1 - dx]
        keep = sel[1:-1, 1:-1] & (m > prv) & (m >= nxt) & (m > 0)
        out[1:-1, 1:-1] |= keep
    return out


def double_threshold(mag: np.ndarray, nms: np.ndarray, low: float,
                     high: float) -> tuple[np.ndarray, np.ndarray]:
    """Split suppressed magnitudes into strong and weak sets using
    thresholds relative to the maximum gradient magnitude."""
    peak = mag.max()
    strong = nms & (mag >= high * peak)
    weak = nms & (mag >= low * peak) & ~strong
    return strong, weak


def hysteresis(strong: np.ndarray, weak: np.ndarray) -> np.ndarray:
    """Strong edges plus weak edges 8-connected to a strong one."""
    h, w = strong.shape
    keep = strong.copy()
    stack = list(zip(*np.nonzero(strong)))
    while stack:
        y, x = stack.pop()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if 0 <= ny < h and 0 <= nx < w and weak[ny, nx] and not keep[ny, nx]:
                    keep[ny, nx] = True
                    stack.append((ny, nx))
    return keep


def canny(img: np.ndarray, sigma: float = 1.4, low: float = 0.1,
          high: float = 0.3) -> np.ndarray:
    """Binary edge map of a grayscale image in [0, 1].

    ``low`` and ``high`` are fractions of the maximum gradient magnitude,
    so the defaults transfer across image scales.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise DimensionError(f"expected a (H, W) grayscale image, got shape {img.shape}")
    if img.shape[0] < 5 or img.shape[1] < 5:
        raise DimensionError(f"image {img.shape} smaller than the 5x5 blur kernel")
    if img.min() < 0.0 or img.max() > 1.0:
        raise DataError("pixel values must lie in [0, 1]")
    if not (0.0 < low < high <= 1.0):
        raise ParameterError(f"thresholds must satisfy 0 < low < high <= 1, "
                             f"got low={low}, high={high}")
    blurred = _filter2(img, _gaussian_kernel5(sigma))
    gx = _filter2(blurred, _SOBEL_X)
    gy = _filter2(blurred, _SOBEL_Y)
    mag = np.hypot(gx, gy)
    if mag.max() == 0.0:
        return np.zeros_like(img, dtype=bool)
    nms = _nms_quantized(mag, gx, gy)
    strong, weak = double_threshold(mag, nms, low, high)
    return hysteresis(strong, weak)


def stack_4channel(rgb: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Stack an edge map under an RGB image: channels R, G, B, edge."""
    rgb = np.asarray(rgb, dtype=np.float64)
    edges = np.asarray(edges)
    if rgb.ndim != 3 or rgb.shape[0] != 3:
        raise DimensionError(f"expected (3, H, W) rgb, got shape {rgb.shape}")
    if edges.shape != rgb.shape[1:]:
        raise DimensionError(
            f"edge map {edges.shape} does not match image {rgb.shape[1:]}")
    edge_channel = (edges != 0).astype(np.float64)
    return np.concatenate([rgb, edge_channel[None]], axis=0)


def _content_seed(cfg_seed: int, *arrays: np.ndarray) -> np.random.SeedSequence:
    crcs = tuple(zlib.crc32(np.ascontiguousarray(a).tobytes()) for a in arrays)
    return np.random.SeedSequence((int(cfg_seed),) + crcs)


def _ground_map_values(ground: np.ndarray, out_hw: tuple[int, int],
                       channel: int, seed: int) -> np.ndarray:
    """Fixed seeded linear read-out of the source view for one output
    channel, centered on mid-gray so clipping keeps most of the signal."""
    g = ground.reshape(-1)
    rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence((int(seed), 0xC0, channel))))
    m = rng.normal(0.0, 1.0 / np.sqrt(g.size), size=(out_hw[0] * out_hw[1], g.size))
    return (0.5 + 0.25 * (m @ g)).reshape(out_hw)


def proxy_synthesize(ground: np.ndarray, paired_aerial: np.ndarray,
                     cfg: ProxyConfig) -> np.ndarray:
    """Synthesized target-view image of tunable fidelity.

    Blends the true paired image with seeded Gaussian noise at weight
    ``rho``, overwrites any ``complement_channels`` with a fixed seeded
    linear map of the source view, and clips to [0, 1]. Deterministic in
    (inputs, seed); the noise stream is keyed on the input contents so
    distinct samples get distinct noise.
    """
    ground = np.asarray(ground, dtype=np.float64)
    aerial = np.asarray(paired_aerial, dtype=np.float64)
    if aerial.ndim != 3:
        raise DimensionError(f"expected (C, H, W) paired image, got shape {aerial.shape}")
    bad = [c for c in cfg.complement_channels if not 0 <= c < aerial.shape[0]]
    if bad:
        raise ParameterError(
            f"complement channels {bad} out of range for {aerial.shape[0]} channels")
    rng = np.random.Generator(np.random.PCG64(_content_seed(cfg.seed, ground, aerial)))
    noise = rng.normal(0.0, cfg.noise_std, size=aerial.shape)
    out = cfg.rho * aerial + (1.0 - cfg.rho) * noise
    for c in cfg.complement_channels:
        out[c] = _ground_map_values(ground, aerial.shape[1:], c, cfg.seed)
    return np.clip(out, 0.0, 1.0)
