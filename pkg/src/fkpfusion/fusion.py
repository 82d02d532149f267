"""Per-dimension feature normalization and feature-level instance fusion.

Statistics are fitted per feature dimension on a training matrix of shape
``(N, D)``; each dimension plays the role of one "matcher" whose outputs
are mapped into a common domain:

    minmax   (s - min) / (max - min)
    zscore   (s - mean) / std            (population std, divide by N)
    mad      (s - median) / MAD,         MAD = median |s - median|
    tanh     0.5 * (tanh(0.01 * (s - mean) / std) + 1)

Dimensions with zero scale are "degenerate" and always map to 0.  No
clamping is applied, so min-max outputs leave [0, 1] for test values
outside the training range.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import FingerInstance, canonical_instances
from .errors import (DimensionMismatch, DuplicateInstance, EmptyTrainingSet,
                     FormatError, IoFailure, KeyMismatch, MixedSchemes,
                     ValidationError)

TANH_SCALE = 0.01


class NormScheme(enum.Enum):
    MINMAX = "minmax"
    ZSCORE = "zscore"
    MEDIAN_MAD = "mad"
    TANH = "tanh"

    @property
    def code(self):
        return list(NormScheme).index(self)

    @classmethod
    def from_code(cls, code):
        return list(cls)[code]

    @classmethod
    def parse(cls, text):
        if isinstance(text, cls):
            return text
        key = str(text).strip().lower().replace("-", "").replace("_", "")
        aliases = {"minmax": cls.MINMAX, "zscore": cls.ZSCORE, "z": cls.ZSCORE,
                   "mad": cls.MEDIAN_MAD, "median": cls.MEDIAN_MAD,
                   "medianmad": cls.MEDIAN_MAD, "tanh": cls.TANH}
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(
                f"unknown normalization scheme {text!r}; valid schemes: "
                + ", ".join(s.value for s in cls)) from None

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class NormalizationStats:
    """Fitted per-dimension parameters.

    ``first``/``second`` hold (min, max) for min-max, (mean, std) for z-score
    and tanh, (median, MAD) for median/MAD.
    """

    scheme: NormScheme
    first: np.ndarray = field(repr=False)
    second: np.ndarray = field(repr=False)
    n_train: int | None = None
    degenerate_dims: tuple = ()

    @property
    def dimension(self):
        return self.first.shape[0]

    def scale(self):
        if self.scheme is NormScheme.MINMAX:
            return self.second - self.first
        return self.second

    def __eq__(self, other):
        if not isinstance(other, NormalizationStats):
            return NotImplemented
        return (self.scheme is other.scheme
                and np.array_equal(self.first, other.first)
                and np.array_equal(self.second, other.second)
                and tuple(self.degenerate_dims) == tuple(other.degenerate_dims))


def _as_matrix(training):
    try:
        rows = [np.asarray(getattr(v, "values", v), dtype=np.float64) for v in training]
    except TypeError:
        raise EmptyTrainingSet("training set must be a sequence of vectors") from None
    if len(rows) < 2:
        raise EmptyTrainingSet(f"need at least 2 training vectors, got {len(rows)}")
    dims = {r.shape for r in rows}
    if len(dims) != 1 or rows[0].ndim != 1:
        raise DimensionMismatch(f"training vectors have differing shapes: {sorted(dims)}")
    return np.stack(rows)


def fit_stats(training, scheme):
    """Fit per-dimension statistics on ``training`` (``(N, D)`` or rows)."""
    scheme = NormScheme.parse(scheme)
    if isinstance(training, np.ndarray) and training.ndim == 2:
        X = training.astype(np.float64, copy=False)
        if X.shape[0] < 2:
            raise EmptyTrainingSet(f"need at least 2 training vectors, got {X.shape[0]}")
    else:
        X = _as_matrix(training)
    if scheme is NormScheme.MINMAX:
        first, second = X.min(axis=0), X.max(axis=0)
        scale = second - first
    elif scheme is NormScheme.MEDIAN_MAD:
        first = np.median(X, axis=0)
        second = np.median(np.abs(X - first), axis=0)
        scale = second
    else:
        first = X.mean(axis=0)
        second = X.std(axis=0)
        # rounding in the mean leaves a tiny spread on constant columns
        const = X.max(axis=0) == X.min(axis=0)
        first[const] = X[0, const]
        second[const] = 0.0
        scale = second
    degenerate = tuple(int(i) for i in np.nonzero(~(scale > 0))[0])
    return NormalizationStats(scheme, first, second, X.shape[0], degenerate)


def normalize(v, stats):
    """Apply ``stats`` element-wise to a vector or to the rows of a matrix."""
    s = np.asarray(getattr(v, "values", v), dtype=np.float64)
    if s.shape[-1] != stats.dimension:
        raise DimensionMismatch(
            f"vector dimension {s.shape[-1]} does not match stats dimension {stats.dimension}")
    scale = stats.scale()
    ok = scale > 0
    safe = np.where(ok, scale, 1.0)
    if stats.scheme is NormScheme.MINMAX:
        out = (s - stats.first) / safe
    elif stats.scheme is NormScheme.TANH:
        out = 0.5 * (np.tanh(TANH_SCALE * ((s - stats.first) / safe)) + 1.0)
    else:
        out = (s - stats.first) / safe
    return np.where(ok, out, 0.0)


# ---------------------------------------------------------------------------
# fusion

@dataclass(frozen=True)
class FeatureVector:
    """One instance sample; ``key`` is ``(subject, session, sample)``."""

    values: np.ndarray = field(repr=False)
    instance: FingerInstance
    key: tuple
    scheme: NormScheme | None = None


@dataclass(frozen=True)
class FusedTemplate:
    values: np.ndarray = field(repr=False)
    instance_set: tuple
    scheme: NormScheme | None
    key: tuple
    boundaries: tuple = ()

    @property
    def label(self):
        return combination_label(self.instance_set)


def combination_label(instances):
    return "+".join(i.name for i in canonical_instances(instances))


def fuse(components):
    """Concatenate normalized instance vectors in RI, RM, LI, LM order."""
    components = list(components)
    if not 1 <= len(components) <= 4:
        raise ValidationError(f"fusion takes 1 to 4 components, got {len(components)}")
    schemes = {c.scheme for c in components}
    if len(schemes) != 1:
        raise MixedSchemes("components were normalized with different schemes")
    instances = [c.instance for c in components]
    if len(set(instances)) != len(instances):
        raise DuplicateInstance("each finger instance may appear once")
    keys = {tuple(c.key) for c in components}
    if len(keys) != 1:
        raise KeyMismatch(f"components come from different samples: {sorted(keys)}")
    ordered = sorted(components, key=lambda c: c.instance.value)
    if len(ordered) == 1:
        values = np.asarray(ordered[0].values)
    else:
        values = np.concatenate([np.asarray(c.values) for c in ordered])
    bounds = tuple(np.cumsum([len(c.values) for c in ordered])[:-1].tolist())
    return FusedTemplate(values, tuple(c.instance for c in ordered),
                         schemes.pop(), keys.pop(), bounds)


def split(template):
    """Inverse of :func:`fuse`."""
    parts = np.split(template.values, list(template.boundaries))
    return [FeatureVector(p, inst, template.key, template.scheme)
            for p, inst in zip(parts, template.instance_set)]


class FeatureNormalizer(TransformerMixin, BaseEstimator):
    """Fit per-dimension statistics of one scheme and apply them."""

    def __init__(self, scheme="zscore"):
        self.scheme = scheme

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        self.stats_ = fit_stats(X, self.scheme)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "stats_")
        X = check_array(X, dtype=np.float64)
        return normalize(X, self.stats_)


class InstanceFusion(TransformerMixin, BaseEstimator):
    """Feature-level fusion of several finger instances.

    ``X`` is a mapping from instance (or its code string) to a ``(n, D_k)``
    matrix whose rows are aligned across instances.  One normalizer is fitted
    per instance; ``transform`` returns the concatenated ``(n, sum D_k)``
    matrix in canonical instance order.
    """

    def __init__(self, instances=("RI",), scheme="zscore"):
        self.instances = instances
        self.scheme = scheme

    def _inputs(self, X):
        order = canonical_instances(self.instances)
        if len(set(order)) != len(order):
            raise DuplicateInstance("instances must be distinct")
        data = {FingerInstance.parse(k): v for k, v in X.items()}
        missing = [i.name for i in order if i not in data]
        if missing:
            raise KeyError(f"no features for instance(s) {', '.join(missing)}")
        return order, data

    def fit(self, X, y=None):
        order, data = self._inputs(X)
        self.instances_ = order
        self.normalizers_ = {i: FeatureNormalizer(self.scheme).fit(data[i]) for i in order}
        return self

    def transform(self, X):
        check_is_fitted(self, "normalizers_")
        order, data = self._inputs(X)
        parts = [self.normalizers_[i].transform(data[i]) for i in order]
        if len({p.shape[0] for p in parts}) != 1:
            raise KeyMismatch("instance matrices have different row counts")
        return parts[0] if len(parts) == 1 else np.concatenate(parts, axis=1)


# ---------------------------------------------------------------------------
# FKN1 stats sidecar

FKN_MAGIC = b"FKN1"


def write_stats(path, stats):
    pairs = np.empty((stats.dimension, 2), dtype="<f8")
    pairs[:, 0] = stats.first
    pairs[:, 1] = stats.second
    out = bytearray(FKN_MAGIC)
    out += struct.pack("<BI", stats.scheme.code, stats.dimension)
    out += pairs.tobytes()
    out += struct.pack("<I", len(stats.degenerate_dims))
    out += np.asarray(stats.degenerate_dims, dtype="<u4").tobytes()
    path = Path(path)
    try:
        path.write_bytes(bytes(out))
    except OSError as exc:
        raise IoFailure(str(path), exc.strerror or str(exc)) from exc
    return path


def read_stats(path):
    """Read an FKN1 file; ``n_train`` is not stored and comes back as None."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(str(path), exc.strerror or str(exc)) from exc
    if not data.startswith(FKN_MAGIC) or len(data) < 9:
        raise FormatError(f"{path}: not an FKN1 stats file")
    code, dim = struct.unpack_from("<BI", data, 4)
    pos = 9
    if code > 3 or len(data) < pos + 16 * dim + 4:
        raise FormatError(f"{path}: truncated or bad scheme code {code}")
    pairs = np.frombuffer(data, dtype="<f8", count=2 * dim, offset=pos).reshape(dim, 2)
    pos += 16 * dim
    (n_deg,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) != pos + 4 * n_deg:
        raise FormatError(f"{path}: degenerate index list has the wrong length")
    deg = np.frombuffer(data, dtype="<u4", count=n_deg, offset=pos)
    return NormalizationStats(NormScheme.from_code(code), pairs[:, 0].copy(),
                              pairs[:, 1].copy(), None, tuple(int(i) for i in deg))
