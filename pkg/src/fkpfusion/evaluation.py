"""Verification experiments: pairing protocol, scoring and FAR/GAR reporting.

Protocol (fixed, see ``PairingProtocol``):

* session 1 is enrollment and the training split for normalization stats,
  session 2 holds the probes;
* genuine pairs: every session-1 sample of a subject against every session-2
  sample of the same subject;
* impostor pairs: the first session-1 sample of each subject against the
  first session-2 sample of every other subject (ordered pairs).

A decision threshold ``t`` accepts a comparison when ``score >= t``.
"""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .dataset import FingerInstance, canonical_instances
from .errors import EmptyScoreSet, InconsistentOperatingPoints, MissingInstance
from .fusion import InstanceFusion, NormScheme, combination_label
from .matcher import pairwise_rows

FAR_POINTS_PCT = (0.01, 0.1, 1.0)

# column order of the single, two- and three-instance result tables
TABLE_ORDER = {
    1: ("RI", "RM", "LI", "LM"),
    2: ("RI+RM", "RI+LI", "RI+LM", "LI+LM", "RM+LM", "RM+LI"),
    3: ("RI+RM+LI", "RI+RM+LM", "RI+LI+LM", "RM+LI+LM"),
}


@dataclass(frozen=True)
class PairingProtocol:
    enroll_session: int = 1
    probe_session: int = 2

    def describe(self):
        return (f"genuine=all session-{self.enroll_session} x session-{self.probe_session} "
                f"same-subject pairs; impostor=first session-{self.enroll_session} sample vs "
                f"first session-{self.probe_session} sample of every other subject; "
                f"stats fitted on session {self.enroll_session}")


def combinations(instances, k):
    """Size-``k`` instance combinations, ordered like the result tables."""
    instances = canonical_instances(instances)
    combos = list(itertools.combinations(instances, k))
    order = {label: n for n, label in enumerate(TABLE_ORDER.get(k, ()))}
    return sorted(combos, key=lambda c: (order.get(combination_label(c), len(order)),
                                         [i.value for i in c]))


def sample_tuples(keys, instances, protocol=PairingProtocol()):
    """Map ``subject -> session -> sorted sample indices`` present for all instances."""
    instances = canonical_instances(instances)
    have = defaultdict(set)
    subjects = set()
    for subject, instance, session, sample in keys:
        have[(subject, FingerInstance.parse(instance), session)].add(sample)
        subjects.add(subject)
    table = {}
    for subject in sorted(subjects):
        table[subject] = {}
        for session in (protocol.enroll_session, protocol.probe_session):
            common = None
            for inst in instances:
                got = have.get((subject, inst, session))
                if not got:
                    raise MissingInstance(subject, inst.name)
                common = set(got) if common is None else common & got
            if not common:
                raise MissingInstance(subject, instances[0].name)
            table[subject][session] = sorted(common)
    return table


def make_pairs(keys, instances, protocol=PairingProtocol()):
    """Genuine and impostor pair lists of ``((subj, sess, sample), ...)`` keys."""
    table = sample_tuples(keys, instances, protocol)
    e, p = protocol.enroll_session, protocol.probe_session
    genuine, impostor = [], []
    for subject, sessions in table.items():
        for a in sessions[e]:
            for b in sessions[p]:
                genuine.append(((subject, e, a), (subject, p, b)))
    for si, ai in table.items():
        for sj, aj in table.items():
            if si != sj:
                impostor.append(((si, e, ai[e][0]), (sj, p, aj[p][0])))
    return genuine, impostor


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64)
        self.impostor = np.asarray(self.impostor, dtype=np.float64)

    def check(self):
        if self.genuine.size == 0 or self.impostor.size == 0:
            raise EmptyScoreSet(
                f"need genuine and impostor scores (got {self.genuine.size} genuine, "
                f"{self.impostor.size} impostor)")
        return self


def fused_matrix(features, instances, scheme, protocol=PairingProtocol()):
    """Normalize and fuse features; returns ``(tuple_keys, matrix, model)``."""
    instances = canonical_instances(instances)
    table = sample_tuples(features.keys, instances, protocol)
    index = features.index()
    tuples = [(s, sess, smp) for s, by_sess in table.items()
              for sess in sorted(by_sess) for smp in by_sess[sess]]
    data = {}
    for inst in instances:
        rows = [index[(s, inst, sess, smp)] for s, sess, smp in tuples]
        data[inst] = np.asarray(features.values[rows], dtype=np.float64)
    train = [n for n, t in enumerate(tuples) if t[1] == protocol.enroll_session]
    model = InstanceFusion(instances, NormScheme.parse(scheme))
    model.fit({i: m[train] for i, m in data.items()})
    return tuples, model.transform(data), model


def run_verification(features, instances, scheme, metric="cosine",
                     protocol=PairingProtocol()):
    """Score every protocol pair for one instance combination and scheme."""
    instances = canonical_instances(instances)
    scheme = NormScheme.parse(scheme)
    genuine, impostor = make_pairs(features.keys, instances, protocol)
    tuples, fused, model = fused_matrix(features, instances, scheme, protocol)
    row = {t: n for n, t in enumerate(tuples)}

    def score(pairs):
        if not pairs:
            return np.empty(0)
        a = fused[[row[x] for x, _ in pairs]]
        b = fused[[row[y] for _, y in pairs]]
        return pairwise_rows(a, b, metric)

    degenerate = sum(len(n.stats_.degenerate_dims) for n in model.normalizers_.values())
    meta = {
        "instances": combination_label(instances),
        "scheme": scheme.value,
        "metric": metric,
        "protocol": protocol.describe(),
        "genuine_pairs": len(genuine),
        "impostor_pairs": len(impostor),
        "degenerate_dims": degenerate,
        "dimension": fused.shape[1],
        "stats": {i.name: n.stats_ for i, n in model.normalizers_.items()},
    }
    return ScoreSet(score(genuine), score(impostor), meta)


# ---------------------------------------------------------------------------
# metrics

def far_gar_at(scores, threshold):
    scores.check()
    far = np.count_nonzero(scores.impostor >= threshold) / scores.impostor.size
    gar = np.count_nonzero(scores.genuine >= threshold) / scores.genuine.size
    return far, gar


@dataclass(frozen=True)
class RocCurve:
    """Points sorted by descending threshold; FAR and GAR are fractions."""

    thresholds: np.ndarray
    far: np.ndarray
    gar: np.ndarray

    def __len__(self):
        return self.thresholds.size

    def points(self):
        return list(zip(self.thresholds.tolist(), self.far.tolist(), self.gar.tolist()))


def _accept_fraction(sorted_scores, thresholds):
    # count of scores >= t for each t
    return (sorted_scores.size - np.searchsorted(sorted_scores, thresholds, side="left")) \
        / sorted_scores.size


def roc(scores):
    """ROC over every distinct observed score plus a sentinel above the max."""
    scores.check()
    allv = np.concatenate([scores.genuine, scores.impostor])
    distinct = np.unique(allv)[::-1]
    thresholds = np.concatenate([[distinct[0] + 1.0], distinct])
    far = _accept_fraction(np.sort(scores.impostor), thresholds)
    gar = _accept_fraction(np.sort(scores.genuine), thresholds)
    return RocCurve(thresholds, far, gar)


def gar_at_far(curve, far_target):
    """GAR of the point with the largest FAR not above ``far_target``."""
    ok = curve.far <= far_target + 1e-12
    if not np.any(ok):
        return 0.0
    best = curve.far[ok].max()
    return float(curve.gar[ok & (curve.far == best)].max())


def eer(curve):
    """Equal error rate by linear interpolation where FAR - FRR changes sign."""
    if len(curve) == 0:
        raise EmptyScoreSet("empty ROC curve")
    d = curve.far - (1.0 - curve.gar)
    idx = np.nonzero(d >= 0)[0]
    if idx.size == 0:
        return float(curve.far[-1])
    i = int(idx[0])
    if d[i] == 0 or i == 0:
        return float(curve.far[i])
    t = -d[i - 1] / (d[i] - d[i - 1])
    return float(curve.far[i - 1] + t * (curve.far[i] - curve.far[i - 1]))


def evaluate(scores, far_points_pct=FAR_POINTS_PCT):
    """``({far_pct: gar}, eer, curve)`` for one score set."""
    curve = roc(scores)
    gars = {p: gar_at_far(curve, p / 100.0) for p in far_points_pct}
    return gars, eer(curve), curve


# ---------------------------------------------------------------------------
# CSV emitters

def emit_table(results, scheme=None):
    """Render ``{label: {far_pct: gar_fraction}}`` in the result-table layout.

    ``scheme`` is accepted for labelling by callers and does not change the
    block itself.
    """
    labels = list(results)
    if not labels:
        return "FAR%\n"
    points = sorted(results[labels[0]])
    for label in labels[1:]:
        if sorted(results[label]) != points:
            raise InconsistentOperatingPoints(
                f"{label} was evaluated at {sorted(results[label])}, expected {points}")
    lines = [",".join(["FAR%"] + labels)]
    for p in points:
        cells = [f"{p:.2f}"] + [f"{100.0 * results[label][p]:.2f}" for label in labels]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def emit_roc(curve):
    lines = ["threshold,far,gar"]
    for t, f, g in curve.points():
        lines.append(f"{t:.10g},{f:.10g},{g:.10g}")
    return "\n".join(lines) + "\n"
