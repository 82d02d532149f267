"""Log-Gabor filter bank and block-sampled orientation features.

Filters are built directly in the frequency domain on the FFT grid of the
ROI.  The radial part is a Gaussian on a log-frequency axis,

    G(f) = exp(-(log(f / f0))**2 / (2 * log(sigma_ratio)**2)),

which is exactly zero at f = 0, and the angular part is a Gaussian in the
angular distance to the filter orientation.  Only one half-plane of the
spectrum is passed, so responses are complex (even/odd quadrature pair).

Feature layout: for each scale, for each orientation, the block means of
the real part (row-major grid) followed by those of the imaginary part.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import FingerInstance
from .errors import (DimensionMismatch, FormatError, GridTooFine, IoFailure,
                     NyquistViolation, ValidationError)
from .preprocess import ROI_SHAPE

DEFAULT_F0 = 1.0 / 12.0
DEFAULT_ANGULAR_SIGMA = (math.pi / 6.0) / 1.2
DEFAULT_GRID = (16, 32)


def radial_profile(f, f0, sigma_ratio):
    f = np.asarray(f, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = np.exp(-np.log(f / f0) ** 2 / (2.0 * math.log(sigma_ratio) ** 2))
    return np.where(f > 0, out, 0.0)


def angular_profile(theta, theta0, angular_sigma):
    theta = np.asarray(theta, dtype=np.float64)
    d = np.arctan2(np.sin(theta - theta0), np.cos(theta - theta0))
    return np.exp(-d ** 2 / (2.0 * angular_sigma ** 2))


@dataclass(frozen=True)
class LogGaborBank:
    num_orientations: int
    num_scales: int
    center_frequencies: tuple
    orientations: tuple
    sigma_ratio: float
    angular_sigma: float
    width: int
    height: int
    transfer: np.ndarray = field(repr=False, compare=False)

    @property
    def shape(self):
        return (self.height, self.width)

    def transfer_at(self, fx, fy, scale, orientation):
        """Evaluate the continuous transfer function at frequency (fx, fy)."""
        f = np.hypot(fx, fy)
        theta = np.arctan2(fy, fx)
        return (radial_profile(f, self.center_frequencies[scale], self.sigma_ratio)
                * angular_profile(theta, self.orientations[orientation], self.angular_sigma))

    def kernel(self, scale, orientation):
        """Spatial kernel of one filter, shifted so its origin is centred."""
        k = np.fft.ifft2(self.transfer[scale, orientation])
        return np.fft.fftshift(k)


def build_bank(num_orientations=6, num_scales=1, f0=DEFAULT_F0, mult=2.0,
               sigma_ratio=0.65, angular_sigma=DEFAULT_ANGULAR_SIGMA,
               width=ROI_SHAPE[1], height=ROI_SHAPE[0]):
    if int(num_orientations) < 1 or int(num_scales) < 1:
        raise ValidationError("need at least one orientation and one scale")
    if f0 <= 0 or mult <= 0 or angular_sigma <= 0:
        raise ValidationError("f0, mult and angular_sigma must be positive")
    if not 0 < sigma_ratio < 1:
        raise ValidationError("sigma_ratio must lie in (0, 1)")
    if width < 1 or height < 1:
        raise ValidationError("filter raster must be non-empty")
    freqs = tuple(float(f0) * float(mult) ** s for s in range(int(num_scales)))
    if max(freqs) >= 0.5:
        raise NyquistViolation(
            f"highest centre frequency {max(freqs):.4g} cycles/px is not below 0.5")
    thetas = tuple(math.pi * o / num_orientations for o in range(int(num_orientations)))

    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.hypot(fx, fy)
    angle = np.arctan2(fy, fx)
    transfer = np.empty((len(freqs), len(thetas), height, width))
    for s, fs in enumerate(freqs):
        radial = radial_profile(radius, fs, sigma_ratio)
        for o, th in enumerate(thetas):
            transfer[s, o] = radial * angular_profile(angle, th, angular_sigma)
    transfer[:, :, 0, 0] = 0.0
    transfer.setflags(write=False)
    return LogGaborBank(int(num_orientations), int(num_scales), freqs, thetas,
                        float(sigma_ratio), float(angular_sigma), int(width),
                        int(height), transfer)


def raised_cosine_window(height, width, border):
    def ramp(n):
        w = np.ones(n)
        b = min(border, n // 2)
        if b > 0:
            edge = 0.5 * (1.0 - np.cos(np.pi * (np.arange(b) + 0.5) / b))
            w[:b] = edge
            w[n - b:] = edge[::-1]
        return w
    return np.outer(ramp(height), ramp(width))


def filter_image(roi, bank, border=8):
    """Complex responses of every filter, shape ``(S, O, H, W)``.

    The ROI mean is removed and a raised-cosine taper of ``border`` pixels
    applied before the transform to suppress wrap-around edges.
    """
    roi = np.asarray(roi, dtype=np.float64)
    if roi.shape != bank.shape:
        raise DimensionMismatch(f"ROI shape {roi.shape} does not match bank {bank.shape}")
    x = roi - roi.mean()
    if border:
        x = x * raised_cosine_window(*roi.shape, border)
    spectrum = np.fft.fft2(x)
    return np.fft.ifft2(spectrum[None, None] * bank.transfer, axes=(-2, -1))


def _block_edges(n, parts):
    return np.round(np.linspace(0, n, parts + 1)).astype(int)


def encode_features(responses, grid=DEFAULT_GRID):
    """Block-average each response over a ``rows x cols`` grid.

    Returns a 1-D vector of length ``2 * S * O * rows * cols``.
    """
    responses = np.asarray(responses)
    rows, cols = (int(g) for g in grid)
    h, w = responses.shape[-2:]
    if rows < 1 or cols < 1 or rows > h or cols > w:
        raise GridTooFine(f"grid {rows}x{cols} does not fit a {h}x{w} raster")
    re = _block_edges(h, rows)
    ce = _block_edges(w, cols)
    flat = responses.reshape(-1, h, w)
    sums = np.add.reduceat(np.add.reduceat(flat, re[:-1], axis=1), ce[:-1], axis=2)
    area = np.outer(np.diff(re), np.diff(ce))
    means = sums / area
    parts = np.stack([means.real, means.imag], axis=1)  # (filters, 2, rows, cols)
    return parts.reshape(-1)


def feature_dimension(num_orientations, num_scales, grid):
    return 2 * num_orientations * num_scales * grid[0] * grid[1]


class LogGaborEncoder(TransformerMixin, BaseEstimator):
    """Turn ROIs of shape ``(n, H, W)`` into feature rows ``(n, D)``.

    ``fit`` only builds the bank for the ROI raster size.
    """

    def __init__(self, n_orientations=6, n_scales=1, f0=DEFAULT_F0, mult=2.0,
                 sigma_ratio=0.65, angular_sigma=DEFAULT_ANGULAR_SIGMA,
                 grid=DEFAULT_GRID, border=8):
        self.n_orientations = n_orientations
        self.n_scales = n_scales
        self.f0 = f0
        self.mult = mult
        self.sigma_ratio = sigma_ratio
        self.angular_sigma = angular_sigma
        self.grid = grid
        self.border = border

    def fit(self, X=None, y=None):
        shape = ROI_SHAPE if X is None else np.asarray(X[0]).shape
        self.bank_ = build_bank(self.n_orientations, self.n_scales, self.f0,
                                self.mult, self.sigma_ratio, self.angular_sigma,
                                width=shape[1], height=shape[0])
        rows, cols = self.grid
        if rows > shape[0] or cols > shape[1] or rows < 1 or cols < 1:
            raise GridTooFine(f"grid {rows}x{cols} does not fit a {shape[0]}x{shape[1]} ROI")
        self.n_features_out_ = feature_dimension(self.n_orientations, self.n_scales, self.grid)
        return self

    def transform(self, X):
        check_is_fitted(self, "bank_")
        out = np.empty((len(X), self.n_features_out_))
        for i, roi in enumerate(X):
            out[i] = encode_features(filter_image(roi, self.bank_, self.border), self.grid)
        return out


# ---------------------------------------------------------------------------
# FKPF1 feature files

FKPF_MAGIC = b"FKPF1"
_HEADER = struct.Struct("<6I")
_RECORD = struct.Struct("<IBBH")


@dataclass
class FeatureSet:
    """Feature rows with their sample keys and the encoder layout."""

    values: np.ndarray
    keys: list
    num_orientations: int = 6
    num_scales: int = 1
    grid: tuple = DEFAULT_GRID

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.keys):
            raise DimensionMismatch("values must be (n_records, D) matching keys")
        self.keys = [(int(s), FingerInstance.parse(i), int(se), int(sa))
                     for s, i, se, sa in self.keys]

    @property
    def dimension(self):
        return self.values.shape[1]

    def __len__(self):
        return len(self.keys)

    def index(self):
        return {k: i for i, k in enumerate(self.keys)}


def write_features(path, fs):
    """Write ``fs`` as an FKPF1 file (values stored as float32)."""
    rows, cols = fs.grid
    out = bytearray(FKPF_MAGIC)
    out += _HEADER.pack(fs.dimension, len(fs), fs.num_orientations, fs.num_scales,
                        cols, rows)
    values = np.ascontiguousarray(fs.values, dtype="<f4")
    for (subject, instance, session, sample), row in zip(fs.keys, values):
        out += _RECORD.pack(subject, instance.code, session, sample)
        out += row.tobytes()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(bytes(out))
    except OSError as exc:
        raise IoFailure(str(path), exc.strerror or str(exc)) from exc
    return path


def read_features(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(path), exc.strerror or str(exc)) from exc
    if not data.startswith(FKPF_MAGIC):
        raise FormatError(f"{path}: not an FKPF1 feature file")
    pos = len(FKPF_MAGIC)
    if len(data) < pos + _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    dim, count, n_orient, n_scales, gx, gy = _HEADER.unpack_from(data, pos)
    pos += _HEADER.size
    if dim != feature_dimension(n_orient, n_scales, (gy, gx)):
        raise FormatError(f"{path}: D={dim} inconsistent with the filter/grid header")
    rec_size = _RECORD.size + 4 * dim
    if len(data) != pos + count * rec_size:
        raise FormatError(f"{path}: expected {count} records of {rec_size} bytes")
    keys = []
    values = np.empty((count, dim), dtype=np.float32)
    for i in range(count):
        subject, code, session, sample = _RECORD.unpack_from(data, pos)
        pos += _RECORD.size
        try:
            instance = FingerInstance.from_code(code)
        except ValueError:
            raise FormatError(f"{path}: record {i} has instance code {code}") from None
        keys.append((subject, instance, session, sample))
        values[i] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos)
        pos += 4 * dim
    return FeatureSet(values, keys, n_orient, n_scales, (gy, gx))
