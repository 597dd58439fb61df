"""Raster mask algebra.

Binary masks are plain ``(h, w)`` boolean numpy arrays, images are
``(h, w, 3)`` uint8 RGB arrays and alpha mattes are float64 arrays in
``[0, 1]``. Run-length encoding follows the COCO convention: column-major
scan, alternating background/foreground run lengths, background first.
The compressed ASCII form of the counts only exists at the JSON boundary;
everything in memory works on plain integer run lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CodecError, ConfigError, ValidationError


@dataclass
class RleMask:
    """Column-major run-length encoded binary mask."""

    size: tuple[int, int]  # (height, width)
    counts: list[int]
    # True when the source document stored the counts as a compressed string;
    # serialization preserves that form. Not part of value equality.
    compressed: bool = field(default=False, compare=False)

    @property
    def area(self) -> int:
        """Foreground pixel count, straight from the odd runs."""
        return int(sum(self.counts[1::2]))


# ---------------------------------------------------------------- RLE codec

def rle_encode(mask: np.ndarray) -> RleMask:
    """Encode a binary mask as column-major alternating run lengths.

    The first run counts background pixels and is 0 when the mask starts
    with foreground at pixel (0, 0).
    """
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-d mask, got shape {m.shape}")
    h, w = m.shape
    flat = m.ravel(order="F")
    if flat.size == 0:
        return RleMask(size=(h, w), counts=[])
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    counts = [0, *runs] if flat[0] else runs
    return RleMask(size=(h, w), counts=[int(c) for c in counts])


def rle_decode(rle: RleMask) -> np.ndarray:
    """Decode run lengths back to an ``(h, w)`` boolean mask."""
    h, w = rle.size
    counts = rle.counts
    if any(c < 0 for c in counts):
        raise CodecError(f"negative run length in counts: {counts}")
    total = sum(counts)
    if total != h * w:
        raise CodecError(
            f"run lengths sum to {total} but mask size {h}x{w} has {h * w} pixels"
        )
    vals = np.zeros(len(counts), dtype=bool)
    vals[1::2] = True
    flat = np.repeat(vals, counts)
    return flat.reshape((h, w), order="F")


def counts_to_string(counts: list[int]) -> str:
    """Pack run lengths into the compressed ASCII form used in JSON.

    Five payload bits per character plus a continuation bit, characters
    offset by 48; from the fourth run on, values are deltas against the
    run two places back.
    """
    out: list[str] = []
    for i, c in enumerate(counts):
        x = c - counts[i - 2] if i > 2 else c
        more = True
        while more:
            ch = x & 0x1F
            x >>= 5
            more = (x != -1) if (ch & 0x10) else (x != 0)
            if more:
                ch |= 0x20
            out.append(chr(ch + 48))
    return "".join(out)


def string_to_counts(s: str) -> list[int]:
    """Inverse of :func:`counts_to_string`."""
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise CodecError("truncated compressed counts string")
            c = ord(s[p]) - 48
            if c < 0 or c > 63:
                raise CodecError(f"invalid character {s[p]!r} in counts string")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


# ------------------------------------------------------------ polygon fill

def polygons_to_mask(polygons: list[list[float]], height: int, width: int) -> np.ndarray:
    """Rasterize a set of polygons onto an ``(height, width)`` grid.

    Each polygon is a flat [x0, y0, x1, y1, ...] list in pixel coordinates.
    A pixel is foreground when its center lies inside the polygon under the
    even-odd rule; spans are half-open so shared edges never double-fill.
    The set is rasterized polygon by polygon and unioned.
    """
    if height < 1 or width < 1:
        raise ValueError(f"mask dimensions must be positive, got {height}x{width}")
    out = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        pts = np.asarray(poly, dtype=np.float64)
        if pts.size % 2 != 0:
            raise ValidationError(f"polygon has odd coordinate count {pts.size}")
        pts = pts.reshape(-1, 2)
        if pts.shape[0] < 3:
            raise ValidationError(
                f"polygon needs at least 3 vertices, got {pts.shape[0]}"
            )
        _fill_polygon(pts, out)
    return out


def _fill_polygon(pts: np.ndarray, out: np.ndarray) -> None:
    height, width = out.shape
    x0s = pts[:, 0]
    y0s = pts[:, 1]
    x1s = np.roll(x0s, -1)
    y1s = np.roll(y0s, -1)
    row_lo = max(0, int(math.floor(y0s.min() - 0.5)))
    row_hi = min(height - 1, int(math.ceil(y0s.max())))
    for row in range(row_lo, row_hi + 1):
        yc = row + 0.5
        hit = (y0s <= yc) != (y1s <= yc)
        if not hit.any():
            continue
        t = (yc - y0s[hit]) / (y1s[hit] - y0s[hit])
        xs = np.sort(x0s[hit] + t * (x1s[hit] - x0s[hit]))
        for a, b in zip(xs[0::2], xs[1::2]):
            lo = max(0, math.ceil(a - 0.5))
            hi = min(width, math.ceil(b - 0.5))
            if hi > lo:
                out[row, lo:hi] = True


# ---------------------------------------------------------- set operations

def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")


def mask_subtract(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pixels of ``a`` not covered by ``b``."""
    _check_same_shape(a, b)
    return a & ~b


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection-over-union; defined as 0.0 when both masks are empty."""
    _check_same_shape(a, b)
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return inter / union


def mask_bbox(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    """Tight (x, y, w, h) box around the foreground, None for empty masks."""
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    return (x0, y0, x1 - x0 + 1, y1 - y0 + 1)


# ------------------------------------------------------ geometric transform

def _exact_cos_sin(rotation: float) -> tuple[float, float]:
    # Right-angle rotations get exact coefficients so that e.g. a 180 degree
    # turn is a pure pixel permutation instead of picking up sin(pi) noise.
    r = rotation % 360.0
    if r == 0.0:
        return 1.0, 0.0
    if r == 90.0:
        return 0.0, 1.0
    if r == 180.0:
        return -1.0, 0.0
    if r == 270.0:
        return 0.0, -1.0
    theta = math.radians(rotation)
    return math.cos(theta), math.sin(theta)


def affine_patch(
    img: np.ndarray,
    mask: np.ndarray,
    scale: float,
    rotation: float,
) -> tuple[np.ndarray, np.ndarray] | None:
    """Scale and rotate a patch/mask pair about the patch center.

    The image is resampled bilinearly, the mask with nearest neighbor, and
    the result is tightly cropped to the transformed mask. Returns None when
    the transformed mask has no foreground left (degenerate transform).
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    if img.shape[:2] != (h, w):
        raise ValueError(f"image {img.shape[:2]} does not match mask {(h, w)}")
    if not m.any():
        return None

    cos_t, sin_t = _exact_cos_sin(rotation)
    a, b = cos_t * scale, sin_t * scale  # forward map: [a -b; b a]

    # Transformed extent of the patch rectangle [0,w]x[0,h] about its center.
    cx, cy = w / 2.0, h / 2.0
    corner_x = np.array([0.0, w, 0.0, w]) - cx
    corner_y = np.array([0.0, 0.0, h, h]) - cy
    fx = a * corner_x - b * corner_y
    fy = b * corner_x + a * corner_y
    out_w = max(1, int(math.ceil(fx.max() - fx.min() - 1e-7)))
    out_h = max(1, int(math.ceil(fy.max() - fy.min() - 1e-7)))

    # Inverse map of output pixel centers into source coordinates.
    qx = np.arange(out_w, dtype=np.float64) + 0.5 - out_w / 2.0
    qy = np.arange(out_h, dtype=np.float64) + 0.5 - out_h / 2.0
    gx, gy = np.meshgrid(qx, qy)
    inv = 1.0 / (scale * scale)
    px = (a * gx + b * gy) * inv + cx
    py = (-b * gx + a * gy) * inv + cy

    # Mask: nearest source pixel, background outside the patch.
    ix = np.floor(px).astype(np.int64)
    iy = np.floor(py).astype(np.int64)
    inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    out_mask = np.zeros((out_h, out_w), dtype=bool)
    out_mask[inside] = m[iy[inside], ix[inside]]
    if not out_mask.any():
        return None

    # Image: bilinear between the four surrounding pixel centers, clamped
    # at the patch border.
    sx = px - 0.5
    sy = py - 0.5
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    wx = sx - x0
    wy = sy - y0
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    src = img.astype(np.float64)
    top = src[y0c, x0c] * (1.0 - wx)[..., None] + src[y0c, x1c] * wx[..., None]
    bot = src[y1c, x0c] * (1.0 - wx)[..., None] + src[y1c, x1c] * wx[..., None]
    vals = top * (1.0 - wy)[..., None] + bot * wy[..., None]
    out_img = np.clip(np.floor(vals + 0.5), 0, 255).astype(np.uint8)

    x, y, bw, bh = mask_bbox(out_mask)
    return out_img[y : y + bh, x : x + bw], out_mask[y : y + bh, x : x + bw]


# ------------------------------------------------------------ alpha matting

def _gaussian_kernel(kernel_size: int, sigma: float) -> np.ndarray:
    x = np.arange(kernel_size, dtype=np.float64) - (kernel_size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur_axis0(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = kernel.size // 2
    padded = np.pad(arr, ((r, r), (0, 0)))
    out = np.zeros_like(arr)
    for t in range(kernel.size):
        out += kernel[t] * padded[t : t + arr.shape[0], :]
    return out


def gaussian_alpha(mask: np.ndarray, kernel_size: int, sigma: float) -> np.ndarray:
    """Blur a binary mask into an alpha matte with a separable Gaussian.

    Pixels beyond the mask canvas count as background (zero padding), so
    alpha rolls off symmetrically at the patch border. ``kernel_size`` 1
    returns the mask unchanged as floats.
    """
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigError(f"blend kernel size must be odd and >= 1, got {kernel_size}")
    m = np.asarray(mask, dtype=np.float64)
    if kernel_size == 1:
        return m
    if sigma <= 0:
        raise ConfigError(f"blend sigma must be positive, got {sigma}")
    k = _gaussian_kernel(kernel_size, sigma)
    out = _blur_axis0(m, k)
    out = _blur_axis0(out.T, k).T
    return np.clip(out, 0.0, 1.0)


# -------------------------------------------------------------- compositing

def composite(
    dest: np.ndarray,
    patch: np.ndarray,
    alpha: np.ndarray,
    position: tuple[int, int],
) -> np.ndarray:
    """Alpha-blend ``patch`` over ``dest`` with its top-left at ``position``.

    ``position`` is (x, y) and may push the patch partly or fully outside
    the destination; only the overlap is written. Blending is
    ``alpha * patch + (1 - alpha) * dest`` per channel, rounded half away
    from zero, so alpha 1 copies patch bytes and alpha 0 keeps dest bytes.
    """
    ph, pw = alpha.shape
    if patch.shape[:2] != (ph, pw):
        raise ValueError(f"patch {patch.shape[:2]} does not match alpha {(ph, pw)}")
    hh, ww = dest.shape[:2]
    x, y = position
    dx0, dy0 = max(x, 0), max(y, 0)
    dx1, dy1 = min(x + pw, ww), min(y + ph, hh)
    out = dest.copy()
    if dx1 <= dx0 or dy1 <= dy0:
        return out
    px0, py0 = dx0 - x, dy0 - y
    a = alpha[py0 : py0 + (dy1 - dy0), px0 : px0 + (dx1 - dx0), None]
    p = patch[py0 : py0 + (dy1 - dy0), px0 : px0 + (dx1 - dx0)].astype(np.float64)
    d = out[dy0:dy1, dx0:dx1].astype(np.float64)
    blended = a * p + (1.0 - a) * d
    out[dy0:dy1, dx0:dx1] = np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    return out
