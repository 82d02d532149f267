import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkpfusion import evaluation as ev
from fkpfusion.dataset import FingerInstance as FI
from fkpfusion.errors import EmptyScoreSet, InconsistentOperatingPoints, MissingInstance
from fkpfusion.features import FeatureSet
from fkpfusion.fusion import FeatureNormalizer, combination_label
from fkpfusion.matcher import pairwise_rows
from oracles import eer_bruteforce, far_gar_ref

scores_st = st.lists(st.floats(-1, 1, allow_nan=False), min_size=1, max_size=40)


def keys_for(subjects, instances, per_session=3):
    keys = []
    for s in subjects:
        for i in instances:
            for n in range(1, 2 * per_session + 1):
                keys.append((s, FI.parse(i), 1 if n <= per_session else 2, n))
    return keys


def feature_set(subjects=4, instances=("RI", "RM", "LI", "LM"), per_session=3, d=6, seed=0):
    rng = np.random.default_rng(seed)
    keys = keys_for(range(1, subjects + 1), instances, per_session)
    base = {(s, i): rng.standard_normal(d) for s, i, _, _ in keys}
    values = np.stack([base[(s, i)] + 0.3 * rng.standard_normal(d) for s, i, _, _ in keys])
    return FeatureSet(values, keys, 1, 1, (1, 1))


class TestPairs:
    def test_counts(self):
        g, i = ev.make_pairs(keys_for([1, 2], ["RI"]), ["RI"])
        assert len(g) == 18 and len(i) == 2
        assert i == [((1, 1, 1), (2, 2, 4)), ((2, 1, 1), (1, 2, 4))]

    def test_disjoint_no_self_pairs(self):
        g, i = ev.make_pairs(keys_for([1, 2, 3], ["RI", "LM"]), ["LM", "RI"])
        assert not set(g) & set(i)
        assert all(a != b for a, b in g + i)
        assert all(a[0] == b[0] for a, b in g) and all(a[0] != b[0] for a, b in i)
        assert len(i) == 3 * 2

    def test_one_subject_has_no_impostors(self):
        g, i = ev.make_pairs(keys_for([1], ["RI"]), ["RI"])
        assert len(g) == 9 and i == []
        with pytest.raises(EmptyScoreSet):
            ev.evaluate(ev.ScoreSet([0.5] * 9, []))

    def test_missing_instance(self):
        keys = [k for k in keys_for(range(1, 7), ["RI", "RM"]) if not (k[0] == 5 and k[1] is FI.RM)]
        with pytest.raises(MissingInstance) as exc:
            ev.make_pairs(keys, ["RI", "RM"])
        assert (exc.value.subject, exc.value.instance) == (5, "RM")

    @pytest.mark.parametrize("k, labels", sorted(ev.TABLE_ORDER.items()))
    def test_combination_order(self, k, labels):
        combos = ev.combinations(list(FI), k)
        assert [combination_label(c) for c in combos] == list(labels)


class TestMetrics:
    def test_far_gar_example(self):
        s = ev.ScoreSet([0.9, 0.8, 0.4], [0.5, 0.3, 0.1])
        assert ev.far_gar_at(s, 0.45) == (1 / 3, 2 / 3)
        assert ev.far_gar_at(s, 0.91) == (0.0, 0.0)
        assert ev.far_gar_at(s, 0.1) == (1.0, 1.0)

    def test_accept_at_equality(self):
        s = ev.ScoreSet([0.5], [0.5])
        assert ev.far_gar_at(s, 0.5) == (1.0, 1.0)

    def test_roc_example(self):
        curve = ev.roc(ev.ScoreSet([0.8, 0.6], [0.4, 0.2]))
        assert len(curve) == 5
        assert curve.thresholds[0] > 0.8
        i = list(curve.thresholds).index(0.6)
        assert (curve.far[i], curve.gar[i]) == (0.0, 1.0)
        assert (curve.far[-1], curve.gar[-1]) == (1.0, 1.0)

    def test_roc_identical(self):
        curve = ev.roc(ev.ScoreSet([0.5, 0.5], [0.5, 0.5]))
        assert curve.points() == [(1.5, 0.0, 0.0), (0.5, 1.0, 1.0)]

    def test_gar_at_far_examples(self):
        c = ev.RocCurve(np.array([3.0, 2.0, 1.0]), np.array([0, 0.01, 0.1]), np.array([0.5, 0.6, 0.7]))
        assert ev.gar_at_far(c, 0.05) == 0.6
        assert ev.gar_at_far(c, 0.0) == 0.5
        c2 = ev.RocCurve(np.array([2.0, 1.0]), np.array([0.2, 0.5]), np.array([0.6, 0.9]))
        assert ev.gar_at_far(c2, 0.1) == 0.0

    def test_eer_examples(self):
        assert ev.eer(ev.roc(ev.ScoreSet([0.9, 0.8], [0.2, 0.1]))) == 0.0
        assert ev.eer(ev.roc(ev.ScoreSet([0.3, 0.5, 0.7], [0.3, 0.5, 0.7]))) == 0.5
        got = ev.eer(ev.roc(ev.ScoreSet([0.9, 0.7, 0.3], [0.6, 0.4, 0.2])))
        assert abs(got - 1 / 3) < 1e-12
        assert abs(got - eer_bruteforce([0.9, 0.7, 0.3], [0.6, 0.4, 0.2])) < 1e-12

    def test_empty(self):
        with pytest.raises(EmptyScoreSet):
            ev.roc(ev.ScoreSet([], [0.1]))
        with pytest.raises(EmptyScoreSet):
            ev.far_gar_at(ev.ScoreSet([0.1], []), 0.0)

    @given(scores_st, scores_st)
    def test_far_gar_matches_counting(self, g, i):
        s = ev.ScoreSet(g, i)
        for t in sorted(set(g) | set(i)) + [min(g + i) - 1, max(g + i) + 1]:
            assert ev.far_gar_at(s, t) == far_gar_ref(g, i, t)

    @given(scores_st, scores_st)
    def test_roc_points_match_counting_and_monotone(self, g, i):
        curve = ev.roc(ev.ScoreSet(g, i))
        assert np.all(np.diff(curve.thresholds) < 0)
        assert np.all(np.diff(curve.far) >= 0) and np.all(np.diff(curve.gar) >= 0)
        assert (curve.far[0], curve.gar[0]) == (0.0, 0.0)
        assert (curve.far[-1], curve.gar[-1]) == (1.0, 1.0)
        for t, f, a in curve.points():
            assert (f, a) == far_gar_ref(g, i, t)

    @given(scores_st, scores_st, st.lists(st.floats(0, 1), min_size=2, max_size=10))
    def test_gar_at_far_monotone(self, g, i, targets):
        curve = ev.roc(ev.ScoreSet(g, i))
        vals = [ev.gar_at_far(curve, t) for t in sorted(targets)]
        assert vals == sorted(vals)

    @given(scores_st, scores_st)
    def test_eer_bracketed(self, g, i):
        e = ev.eer(ev.roc(ev.ScoreSet(g, i)))
        assert 0.0 <= e <= 1.0
        # the interpolated crossing never beats the best attainable max(FAR, FRR)
        assert e <= eer_bruteforce(g, i) + 1e-12


class TestVerification:
    def test_single_instance_equals_unimodal(self):
        fs = feature_set()
        for scheme in ("zscore", "minmax", "mad", "tanh"):
            got = ev.run_verification(fs, ["LI"], scheme)
            # direct unimodal computation
            idx = fs.index()
            rows = lambda pairs, side: np.array([fs.values[idx[(p[side][0], FI.LI, p[side][1], p[side][2])]]
                                                 for p in pairs], dtype=np.float64)
            train = np.array([fs.values[idx[k]] for k in fs.keys if k[1] is FI.LI and k[2] == 1],
                             dtype=np.float64)
            norm = FeatureNormalizer(scheme).fit(train)
            g, i = ev.make_pairs(fs.keys, ["LI"])
            want_g = pairwise_rows(norm.transform(rows(g, 0)), norm.transform(rows(g, 1)))
            want_i = pairwise_rows(norm.transform(rows(i, 0)), norm.transform(rows(i, 1)))
            assert np.array_equal(got.genuine, want_g)
            assert np.array_equal(got.impostor, want_i)

    def test_metadata(self):
        s = ev.run_verification(feature_set(), ["RM", "RI"], "tanh")
        assert s.metadata["instances"] == "RI+RM"
        assert s.metadata["scheme"] == "tanh"
        assert s.metadata["genuine_pairs"] == 4 * 9 and s.metadata["impostor_pairs"] == 12
        assert s.metadata["dimension"] == 12
        assert "session 1" in s.metadata["protocol"]

    def test_fusion_separates_synthetic_classes(self):
        s = ev.run_verification(feature_set(subjects=6), ["RI", "LM"], "zscore")
        assert s.genuine.mean() > s.impostor.mean()

    def test_deterministic(self):
        fs = feature_set()
        a = ev.run_verification(fs, ["RI", "RM", "LI"], "mad")
        b = ev.run_verification(fs, ["RI", "RM", "LI"], "mad")
        assert a.genuine.tobytes() == b.genuine.tobytes()


class TestEmit:
    def test_reference_table_one(self):
        vals = {"RI": (54.66, 66.67, 77.11), "RM": (59.11, 70.67, 80.12),
                "LI": (53.34, 64.45, 78.00), "LM": (61.56, 70.89, 81.13)}
        results = {k: dict(zip(ev.FAR_POINTS_PCT, (x / 100 for x in v))) for k, v in vals.items()}
        text = ev.emit_table(results)
        assert text.startswith("FAR%,RI,RM,LI,LM\n")
        assert text.splitlines()[1] == "0.01,54.66,59.11,53.34,61.56"
        assert [ln.split(",")[0] for ln in text.splitlines()[1:]] == ["0.01", "0.10", "1.00"]

    def test_reference_table_two_zscore(self):
        row = (68.22, 56.67, 65.56, 58.00, 70.67, 63.78)
        results = {lab: {p: v / 100 for p in ev.FAR_POINTS_PCT}
                   for lab, v in zip(ev.TABLE_ORDER[2], row)}
        assert ev.emit_table(results).splitlines()[1] == "0.01,68.22,56.67,65.56,58.00,70.67,63.78"

    def test_empty(self):
        assert ev.emit_table({}) == "FAR%\n"

    def test_inconsistent(self):
        with pytest.raises(InconsistentOperatingPoints):
            ev.emit_table({"RI": {0.01: 0.5, 1.0: 0.6}, "RM": {0.01: 0.5}})

    def test_roc_csv(self):
        curve = ev.roc(ev.ScoreSet([0.8, 0.6], [0.4, 0.2]))
        lines = ev.emit_roc(curve).splitlines()
        assert lines[0] == "threshold,far,gar"
        assert lines[1:] == ["1.8,0,0", "0.8,0,0.5", "0.6,0,1", "0.4,0.5,1", "0.2,1,1"]
