"""ROI extraction: down-sampling, Canny edges, convex direction coding,
local coordinate axes and the final 220x110 crop.

Images are 2-D float arrays indexed ``[row, col]`` with intensities in
[0, 1].  Coordinates follow the raster convention: ``x`` is the column,
``y`` the row (growing downwards).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (DegenerateOutput, EmptyCodeMap, InsufficientBoundary,
                     InvalidThresholds, RoiOutOfBounds, ValidationError)

ROI_WIDTH = 220
ROI_HEIGHT = 110
ROI_SHAPE = (ROI_HEIGHT, ROI_WIDTH)

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


def check_gray_image(img, name="img"):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 1:
        raise ValidationError(f"{name} must be a non-empty 2-D array, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ValidationError(f"{name} contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError(f"{name} intensities must lie in [0, 1]")
    return img


def gaussian_kernel(sigma):
    """Sampled Gaussian truncated at 4 sigma, normalized to unit sum."""
    radius = max(1, int(math.ceil(4.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img, sigma):
    """Separable Gaussian blur with mirror (whole-sample symmetric) borders."""
    k = gaussian_kernel(sigma)
    out = ndimage.convolve1d(img, k, axis=0, mode="mirror")
    return ndimage.convolve1d(out, k, axis=1, mode="mirror")


def downsample(img, factor):
    """Blur with sigma = factor / 2 then keep every ``factor``-th pixel."""
    img = check_gray_image(img)
    factor = int(factor)
    if factor < 1:
        raise ValidationError("factor must be >= 1")
    h, w = img.shape
    if h // factor == 0 or w // factor == 0:
        raise DegenerateOutput(f"factor {factor} collapses a {w}x{h} image")
    blurred = gaussian_blur(img, 0.5 * factor)
    out = blurred[: (h // factor) * factor: factor, : (w // factor) * factor: factor]
    return np.clip(out, 0.0, 1.0)


def sobel(img):
    """Return (gx, gy) Sobel derivatives along columns and rows."""
    gx = ndimage.correlate(img, SOBEL_X, mode="mirror")
    gy = ndimage.correlate(img, SOBEL_Y, mode="mirror")
    return gx, gy


def direction_sector(gx, gy):
    """Quantize gradient direction into 4 sectors.

    0: horizontal gradient, 1: along +x/+y diagonal, 2: vertical,
    3: along +x/-y diagonal.
    """
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    sector = np.zeros(angle.shape, dtype=np.int8)
    sector[(angle >= 22.5) & (angle < 67.5)] = 1
    sector[(angle >= 67.5) & (angle < 112.5)] = 2
    sector[(angle >= 112.5) & (angle < 157.5)] = 3
    return sector


# (drow, dcol) of the "forward" neighbour for each sector; the backward one
# is the negation
SECTOR_OFFSETS = ((0, 1), (1, 1), (1, 0), (-1, 1))


def non_maximum_suppression(mag, sector):
    """Thin ridges of ``mag`` along the gradient direction.

    A pixel survives when strictly greater than its backward neighbour and
    not smaller than its forward neighbour, which keeps exactly one pixel on
    plateaus of width two.  The outer one-pixel frame is always suppressed.
    """
    h, w = mag.shape
    out = np.zeros_like(mag)
    if h < 3 or w < 3:
        return out
    centre = mag[1:-1, 1:-1]
    keep = np.zeros(centre.shape, dtype=bool)
    for s, (dr, dc) in enumerate(SECTOR_OFFSETS):
        fwd = mag[1 + dr: h - 1 + dr, 1 + dc: w - 1 + dc]
        bwd = mag[1 - dr: h - 1 - dr, 1 - dc: w - 1 - dc]
        sel = sector[1:-1, 1:-1] == s
        keep |= sel & (centre > bwd) & (centre >= fwd)
    out[1:-1, 1:-1] = np.where(keep, centre, 0.0)
    return out


def hysteresis(nms, low, high):
    """Weak pixels (>= low) survive when 8-connected to a strong one (>= high)."""
    weak = nms >= low
    weak &= nms > 0
    strong = weak & (nms >= high)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return np.zeros(nms.shape, dtype=bool)
    has_strong = np.zeros(n + 1, dtype=bool)
    has_strong[np.unique(labels[strong])] = True
    has_strong[0] = False
    return has_strong[labels]


def canny(img, sigma=1.4, low=0.1, high=0.3, relative=False):
    """Canny edge detector returning a boolean edge map.

    With ``relative=True`` the thresholds are fractions of the maximum
    gradient magnitude, which makes the result invariant to affine intensity
    changes of the input.
    """
    img = check_gray_image(img)
    if sigma <= 0:
        raise ValidationError("sigma must be positive")
    if low < 0 or low > high:
        raise InvalidThresholds(f"need 0 <= low <= high, got low={low}, high={high}")
    smooth = gaussian_blur(img, sigma)
    gx, gy = sobel(smooth)
    mag = np.hypot(gx, gy)
    if relative:
        peak = mag.max()
        if peak <= 0:
            return np.zeros(img.shape, dtype=bool)
        low, high = low * peak, high * peak
    nms = non_maximum_suppression(mag, direction_sector(gx, gy))
    return hysteresis(nms, low, high)


def convex_direction_code(edges, window=9, curvature_eps=1e-3):
    """Code each edge pixel by the bending direction of its local edge curve.

    For an edge pixel at ``(y, x)`` the support is gathered column by column
    over ``[x - window // 2, x + window // 2]``: in each column, the edge
    row of the same 8-connected component nearest to ``y`` (the mean of the
    two when equidistant above and below, searched within ``window`` rows).  A quadratic
    ``y = a*u**2 + b*u + c`` in the column offset ``u`` is fitted by least
    squares; the code is ``+1`` if ``a > eps``, ``-1`` if ``a < -eps`` and 0
    otherwise, or when fewer than 3 columns support the fit.
    """
    edges = np.asarray(edges, dtype=bool)
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise ValidationError("window must be an odd integer >= 3")
    if curvature_eps <= 0:
        raise ValidationError("curvature_eps must be positive")
    codes = np.zeros(edges.shape, dtype=np.int8)
    labels, n = ndimage.label(edges, structure=np.ones((3, 3), dtype=bool))
    if n == 0:
        return codes
    half = window // 2
    reach = window
    padded = np.pad(labels, ((reach, reach), (half, half)))
    rows, cols = np.nonzero(edges)
    own = labels[rows, cols]
    pr, pc = rows + reach, cols + half

    us = np.arange(-half, half + 1, dtype=np.float64)
    ys = np.zeros((rows.size, us.size))
    found = np.zeros((rows.size, us.size), dtype=bool)
    for j, du in enumerate(range(-half, half + 1)):
        col = pc + du
        for d in range(reach + 1):
            up = ~found[:, j] & (padded[pr - d, col] == own)
            down = ~found[:, j] & (padded[pr + d, col] == own)
            # equidistant hits above and below average out
            ys[:, j] += np.where(up & down, 0.0, np.where(up, -d, np.where(down, d, 0.0)))
            found[:, j] |= up | down

    # weighted least squares on the design [1, u, u^2]
    m = found.astype(np.float64)
    s = [m @ us ** p for p in range(5)]
    t = [(m * ys) @ us ** p for p in range(3)]
    mat = np.stack([
        np.stack([s[0], s[1], s[2]], axis=-1),
        np.stack([s[1], s[2], s[3]], axis=-1),
        np.stack([s[2], s[3], s[4]], axis=-1),
    ], axis=-2)
    rhs = np.stack(t, axis=-1)
    ok = s[0] >= 3
    a = np.zeros(rows.size)
    if np.any(ok):
        a[ok] = np.linalg.solve(mat[ok], rhs[ok][..., None])[:, 2, 0]
    code = np.zeros(rows.size, dtype=np.int8)
    code[ok & (a > curvature_eps)] = 1
    code[ok & (a < -curvature_eps)] = -1
    codes[rows, cols] = code
    return codes


def find_x_axis(edges):
    """Fit the lower finger boundary: returns ``(slope, intercept)``.

    Uses the bottom-most edge pixel of every column within the bottom third
    of the image and fits ``y = slope * x + intercept`` by least squares.
    """
    edges = np.asarray(edges, dtype=bool)
    h, w = edges.shape
    start = (2 * h) // 3
    band = edges[start:]
    cols = np.nonzero(band.any(axis=0))[0]
    if cols.size < 2:
        raise InsufficientBoundary(
            f"need >= 2 boundary columns in the bottom third, found {cols.size}")
    last = band.shape[0] - 1 - np.argmax(band[::-1, cols], axis=0)
    ys = start + last.astype(np.float64)
    xs = cols.astype(np.float64)
    slope, intercept = np.polyfit(xs, ys, 1)
    return float(slope), float(intercept)


def find_y_axis(codes, window_cols=20, candidates=None):
    """Column where the windowed sum of convexity codes is closest to zero.

    The window spans columns ``[x - window_cols, x + window_cols]`` clipped to
    the image; ties go to the smallest column.  ``candidates`` optionally
    limits the search to columns ``range(lo, hi)``; window sums still use the
    whole map.
    """
    codes = np.asarray(codes)
    if codes.ndim != 2:
        raise ValidationError("codes must be a 2-D array")
    if window_cols < 1:
        raise ValidationError("window_cols must be >= 1")
    if not np.any(codes):
        raise EmptyCodeMap("convexity code map has no nonzero codes")
    colsum = codes.sum(axis=0, dtype=np.int64)
    csum = np.concatenate([[0], np.cumsum(colsum)])
    x = np.arange(colsum.size)
    hi = np.minimum(x + int(window_cols), colsum.size - 1) + 1
    lo = np.maximum(x - int(window_cols), 0)
    windowed = np.abs(csum[hi] - csum[lo])
    first = 0
    if candidates is not None:
        first, last = max(int(candidates[0]), 0), min(int(candidates[1]), colsum.size)
        if first >= last:
            raise ValidationError(f"empty candidate column range {tuple(candidates)}")
        windowed = windowed[first:last]
    return first + int(np.argmin(windowed))


@dataclass(frozen=True)
class RoiParams:
    factor: int = 2
    sigma: float = 1.4
    low: float = 0.1
    high: float = 0.3
    window: int = 9
    eps: float = 1e-3
    ycols: int = 20
    bypass: bool = False

    def as_dict(self):
        return asdict(self)


def stretch(img):
    """Min-max stretch to [0, 1]; a constant image maps to zeros."""
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


@dataclass(frozen=True)
class RoiGeometry:
    """Local coordinate system found on the down-sampled image."""
    slope: float
    intercept: float
    center_x: int

    @property
    def origin(self):
        return self.center_x, self.slope * self.center_x + self.intercept

    @property
    def angle(self):
        return math.atan(self.slope)


def roi_columns(width):
    """Columns that can host the ROI center with the full crop inside.

    Border columns are also where the Y-axis window is clipped, which pulls
    the windowed sum toward zero for reasons unrelated to the knuckle.  An
    image too narrow for any center falls back to every column so the crop
    check reports the failure.
    """
    lo, hi = ROI_WIDTH // 2, width - ROI_WIDTH // 2
    return (lo, hi) if lo < hi else (0, width)


def locate_roi(img, params=RoiParams()):
    """Run the detection steps and return ``(downsampled, geometry)``."""
    small = downsample(img, params.factor)
    edges = canny(small, params.sigma, params.low, params.high, relative=True)
    slope, intercept = find_x_axis(edges)
    codes = convex_direction_code(edges, params.window, params.eps)
    center = find_y_axis(codes, params.ycols, roi_columns(small.shape[1]))
    return small, RoiGeometry(slope, intercept, center)


def roi_sample_grid(geom):
    """Source coordinates (rows, cols) of every ROI pixel.

    The ROI is 220 px along the X-axis centred on the Y-axis and 110 px tall,
    its bottom row one pixel above the X-axis.
    """
    ox, oy = geom.origin
    c, s = math.cos(geom.angle), math.sin(geom.angle)
    v, u = np.mgrid[0:ROI_HEIGHT, 0:ROI_WIDTH].astype(np.float64)
    along = u - ROI_WIDTH / 2.0
    up = ROI_HEIGHT - v
    xs = ox + along * c + up * s
    ys = oy + along * s - up * c
    return ys, xs


def extract_roi(img, params=RoiParams()):
    """Return the aligned 110x220 (rows x cols) ROI, stretched to [0, 1]."""
    img = check_gray_image(img)
    if params.bypass:
        if img.shape != ROI_SHAPE:
            raise RoiOutOfBounds(
                f"bypass mode expects a {ROI_WIDTH}x{ROI_HEIGHT} image, got "
                f"{img.shape[1]}x{img.shape[0]}")
        return stretch(img)
    small, geom = locate_roi(img, params)
    ys, xs = roi_sample_grid(geom)
    h, w = small.shape
    if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
        raise RoiOutOfBounds(
            f"ROI around column {geom.center_x} leaves the {w}x{h} down-sampled image")
    roi = ndimage.map_coordinates(small, [ys, xs], order=1, mode="nearest")
    return stretch(roi)


class RoiExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping raw images to stacked ROIs.

    ``transform`` accepts a sequence of 2-D images (shapes may differ) and
    returns an array of shape ``(n, 110, 220)``.
    """

    def __init__(self, factor=2, sigma=1.4, low=0.1, high=0.3, window=9,
                 eps=1e-3, ycols=20, bypass=False):
        self.factor = factor
        self.sigma = sigma
        self.low = low
        self.high = high
        self.window = window
        self.eps = eps
        self.ycols = ycols
        self.bypass = bypass

    def _params(self):
        return RoiParams(**self.get_params())

    def fit(self, X=None, y=None):
        params = self._params()
        if params.low > params.high:
            raise InvalidThresholds("low must not exceed high")
        return self

    def transform(self, X):
        params = self._params()
        return np.stack([extract_roi(img, params) for img in X])

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
