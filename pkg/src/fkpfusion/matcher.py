"""Template similarity.

Cosine similarity is the default score.  The negated Euclidean distance is
kept for ablations; larger is more similar for both.
"""
import numpy as np

from .errors import ShapeMismatch, ZeroVector
from .fusion import FusedTemplate

METRICS = ("cosine", "euclidean")


def _unwrap(a, b):
    if isinstance(a, FusedTemplate) and isinstance(b, FusedTemplate):
        if a.instance_set != b.instance_set:
            raise ShapeMismatch(f"instance sets differ: {a.label} vs {b.label}")
        if a.scheme != b.scheme:
            raise ShapeMismatch(f"normalization schemes differ: {a.scheme} vs {b.scheme}")
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeMismatch(f"cannot compare shapes {a.shape} and {b.shape}")
    return a, b


def similarity(a, b, metric="cosine"):
    a, b = _unwrap(a, b)
    if metric == "euclidean":
        return -float(np.linalg.norm(a - b))
    if metric != "cosine":
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for an all-zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def pairwise_rows(A, B, metric="cosine"):
    """Scores of row ``i`` of ``A`` against row ``i`` of ``B``."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2:
        raise ShapeMismatch(f"cannot compare shapes {A.shape} and {B.shape}")
    if metric == "euclidean":
        return -np.linalg.norm(A - B, axis=1)
    if metric != "cosine":
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ZeroVector("cosine similarity is undefined for an all-zero vector")
    return np.clip(np.einsum("ij,ij->i", A, B) / (na * nb), -1.0, 1.0)
