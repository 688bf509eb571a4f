import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.distance import cdist

from rdsverify.errors import EmptyPopulationError, EmptySequenceError, InsufficientGenuineError
from rdsverify.preprocess import FeatureSequence, preprocess
from rdsverify.synth import SynthConfig, generate_dataset
from rdsverify.traceio import Label
from rdsverify.verify import (
    Protocol,
    ScoreSet,
    Scope,
    compute_eer,
    dtw_align,
    dtw_distance,
    eer,
    error_rates,
    evaluate,
    group_test_set,
    score_writers,
    select_templates,
    verify_score,
    write_outputs,
)


def all_paths(la, lb):
    """Every monotone unit-step path from (0, 0) to (la - 1, lb - 1)."""
    if (la, lb) == (1, 1):
        return [[(0, 0)]]
    out = []
    for di, dj in ((1, 1), (1, 0), (0, 1)):
        if la - di >= 1 and lb - dj >= 1:
            out += [p + [(la - 1, lb - 1)] for p in all_paths(la - di, lb - dj)]
    return out


def brute_dtw(a, b):
    # frame costs from the same metric routine, so only the path search is under test
    cost = cdist(a.T, b.T)
    best = math.inf
    for path in all_paths(a.shape[1], b.shape[1]):
        total = 0.0
        for i, j in path:
            total += float(cost[i, j])
        best = min(best, total)
    return best


def sweep_eer(genuine, impostor):
    """Midpoint-threshold sweep with counting loops; interpolate at the first FAR >= FRR."""
    values = sorted(set(genuine) | set(impostor))
    cuts = [values[0] - 1.0] + [(u + v) / 2 for u, v in zip(values, values[1:])] + [values[-1] + 1.0]
    far = [sum(1 for s in impostor if s <= c) / len(impostor) for c in cuts]
    frr = [sum(1 for s in genuine if s > c) / len(genuine) for c in cuts]
    for k, c in enumerate(cuts):
        d = far[k] - frr[k]
        if d == 0:
            return far[k]
        if d > 0:
            prev = far[k - 1] - frr[k - 1]
            t = prev / (prev - d)
            return far[k - 1] + t * (far[k] - far[k - 1])


class TestDtw:
    def test_identical(self):
        a = np.random.default_rng(0).normal(size=(12, 7))
        d, path = dtw_distance(a, a)
        assert d == 0.0
        assert path == [(i, i) for i in range(7)]

    def test_small_example(self):
        cost, path = dtw_align(np.array([[1.0, 2.0, 3.0]]), np.array([[1.0, 3.0]]))
        assert cost == 1.0
        assert path[0] == (0, 0) and path[-1] == (2, 1) and len(path) == 3

    def test_exhaustive_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            la, lb, c = rng.integers(1, 7), rng.integers(1, 7), rng.integers(1, 4)
            a, b = rng.normal(size=(c, la)), rng.normal(size=(c, lb))
            cost, path = dtw_align(a, b)
            assert cost == brute_dtw(a, b)
            assert path[0] == (0, 0) and path[-1] == (la - 1, lb - 1)
            steps = {(i2 - i1, j2 - j1) for (i1, j1), (i2, j2) in zip(path, path[1:])}
            assert steps <= {(1, 1), (1, 0), (0, 1)}
            # the returned path realizes the returned cost
            realized = sum(float(np.linalg.norm(a[:, i] - b[:, j])) for i, j in path)
            assert realized == pytest.approx(cost, rel=1e-12, abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 31))
    def test_symmetric_non_negative(self, la, lb, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(3, la)), rng.normal(size=(3, lb))
        ab, ba = dtw_align(a, b)[0], dtw_align(b, a)[0]
        assert ab >= 0
        assert ab == pytest.approx(ba, rel=1e-12, abs=1e-12)

    def test_distinct_frames_positive(self):
        assert dtw_distance(np.array([[0.0, 1.0]]), np.array([[0.0, 1.5]]))[0] > 0

    def test_length_normalized(self):
        a, b = np.array([[0.0, 0.0, 0.0, 0.0]]), np.array([[1.0, 1.0]])
        d, path = dtw_distance(a, b)
        assert len(path) == 4 and d == 1.0

    def test_feature_sequences(self):
        rng = np.random.default_rng(2)
        x, y = rng.normal(size=(12, 5)), rng.normal(size=(12, 8))
        assert dtw_distance(FeatureSequence(x), FeatureSequence(y)) == dtw_distance(x, y)

    def test_empty(self):
        with pytest.raises(EmptySequenceError):
            dtw_align(np.zeros((12, 0)), np.zeros((12, 3)))


class TestVerifyScore:
    def test_sole_template(self):
        assert verify_score(np.array([1.0, 2.0]), [np.array([1.0, 2.0])]) == 0.0

    def test_equidistant(self):
        q = np.array([0.0, math.sqrt(3)])
        assert verify_score(q, [np.array([-1.0, 0.0]), np.array([1.0, 0.0])]) == pytest.approx(1.0)

    def test_no_templates(self):
        with pytest.raises(InsufficientGenuineError):
            verify_score(np.zeros(2), [])

    def test_coincident_templates(self):
        assert verify_score(np.array([3.0, 4.0]), [np.zeros(2), np.zeros(2)]) == 5.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2 ** 31), st.floats(0.01, 100))
    def test_scale_and_rotation_invariant(self, seed, c):
        rng = np.random.default_rng(seed)
        q, ts = rng.normal(size=6), list(rng.normal(size=(4, 6)))
        base = verify_score(q, ts)
        rot, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        assert verify_score(c * q, [c * t for t in ts]) == pytest.approx(base, rel=1e-9)
        assert verify_score(rot @ q, [rot @ t for t in ts]) == pytest.approx(base, rel=1e-9)


class TestTemplates:
    def test_across_session(self):
        (trial,) = select_templates([1] * 10 + [2] * 10, Protocol.FOUR_VS_ONE)
        assert trial.templates == (0, 1, 10, 11)
        assert len(trial.queries) == 16

    def test_single_session(self):
        (trial,) = select_templates([1] * 10 + [2] * 10, Protocol.FOUR_VS_ONE, Scope.SINGLE)
        assert trial.templates == (0, 1, 2, 3)
        assert trial.queries == tuple(range(4, 10))

    def test_too_few(self):
        with pytest.raises(InsufficientGenuineError):
            select_templates([1, 2], Protocol.FOUR_VS_ONE)
        with pytest.raises(InsufficientGenuineError):
            select_templates([1], Protocol.ONE_VS_ONE)

    def test_one_vs_one(self):
        trials = select_templates([1, 1, 2], Protocol.ONE_VS_ONE)
        assert [t.templates for t in trials] == [(0,), (1,), (2,)]
        assert all(len(t.queries) == 2 and t.templates[0] not in t.queries for t in trials)


class TestEer:
    def test_perfect_separation(self):
        assert eer([0.1, 0.2], [0.8, 0.9]) == 0.0

    def test_identical_populations(self):
        pop = [0.3, 0.1, 0.7, 0.5]
        assert eer(pop, pop) == pytest.approx(0.5)

    def test_hand_example(self):
        assert eer([0.1, 0.2, 0.4], [0.3, 0.5, 0.6]) == pytest.approx(1 / 3)

    def test_fully_inverted(self):
        assert eer([0.8, 0.9], [0.1, 0.2]) == pytest.approx(1.0)

    def test_sweep_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            g = rng.normal(0, 1, size=rng.integers(1, 101))
            i = rng.normal(1, 1, size=rng.integers(1, 101))
            if rng.random() < 0.3:
                # ties across the populations
                g, i = np.round(g, 1), np.round(i, 1)
            assert eer(g, i) == sweep_eer(g.tolist(), i.tolist())

    def test_swap_with_negation(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            g, i = rng.normal(0, 1, 30), rng.normal(0.8, 1, 40)
            assert eer(-i, -g) == pytest.approx(eer(g, i), abs=1e-12)

    def test_rates_monotone(self):
        rng = np.random.default_rng(6)
        t, far, frr = error_rates(rng.normal(size=20), rng.normal(size=25))
        assert t[0] == -np.inf and far[0] == 0 and frr[0] == 1
        assert far[-1] == 1 and frr[-1] == 0
        assert np.all(np.diff(far) >= 0) and np.all(np.diff(frr) <= 0)

    def test_local_equals_global_for_identical_writers(self):
        rng = np.random.default_rng(7)
        g, s = rng.normal(0, 1, 12), rng.normal(1, 1, 9)
        scores = ScoreSet()
        for w in range(4):
            for v in g:
                scores.add(w, "genuine", v)
            for v in s:
                scores.add(w, "skilled", v)
                scores.add(w, "random", v + 1)
        r = compute_eer(scores, "skilled")
        assert r.eer_local == pytest.approx(r.eer_global, abs=1e-12)
        assert r.formatted() == f"{r.eer_global:.2f}/{r.eer_local:.2f}"

    def test_empty(self):
        with pytest.raises(EmptyPopulationError):
            eer([], [0.1])
        with pytest.raises(EmptyPopulationError):
            compute_eer(ScoreSet(), "skilled")

    def test_non_finite_score(self):
        with pytest.raises(ValueError):
            ScoreSet().add(0, "genuine", float("nan"))


@pytest.fixture(scope="module")
def test_seqs():
    recs = generate_dataset(SynthConfig(num_writers=5, per_session_count=3, seed=3))
    return [preprocess(r.trace) for r in recs]


class TestEvaluate:
    def test_grouping(self, test_seqs):
        groups = group_test_set(test_seqs)
        assert sorted(groups) == list(range(5))
        g = groups[0]
        assert [test_seqs[i].session for i in g.genuine] == [1, 1, 1, 2, 2, 2]
        assert all(test_seqs[i].label is Label.SKILLED_FORGERY for i in g.forged)

    def test_dtw_baseline(self, test_seqs, tmp_path):
        result = evaluate(test_seqs, threads=2)
        for kind in ("skilled", "random"):
            r = getattr(result, kind)
            assert 0 <= r.eer_global <= 100 and 0 <= r.eer_local <= 100
        scores = result.scores
        assert len(scores.population("genuine", 0)) == 2
        assert len(scores.population("skilled", 0)) == 6
        assert len(scores.population("random", 0)) == 24
        paths = write_outputs(result, tmp_path)
        report = paths["report"].read_text()
        assert "skilled " in report and "random " in report and "method: dtw" in report
        rows = paths["scores"].read_text().splitlines()
        assert rows[0] == "writer_id,protocol,role,score" and len(rows) == 1 + 5 * 32
        assert paths["roc"].read_text().startswith("kind,threshold,FAR,FRR\n")

    def test_threads_do_not_change_scores(self, test_seqs):
        emb = [s.data.mean(axis=1) for s in test_seqs]
        dist = lambda u, v: float(np.linalg.norm(u - v))  # noqa: E731
        one = score_writers(emb, test_seqs, dist, threads=1)
        four = score_writers(emb, test_seqs, dist, threads=4)
        assert one.scores == four.scores

    def test_random_cap(self, test_seqs):
        emb = [s.data.mean(axis=1) for s in test_seqs]
        dist = lambda u, v: float(np.linalg.norm(u - v))  # noqa: E731
        scores = score_writers(emb, test_seqs, dist, random_cap=5)
        assert all(len(scores.population("random", w)) == 5 for w in scores.writers)

    def test_one_vs_one_single(self, test_seqs):
        emb = [s.data.mean(axis=1) for s in test_seqs]
        dist = lambda u, v: float(np.linalg.norm(u - v))  # noqa: E731
        scores = score_writers(emb, test_seqs, dist, Protocol.ONE_VS_ONE, Scope.SINGLE)
        # three session-1 templates, each against the other two genuine and three session-1 forgeries
        assert len(scores.population("genuine", 0)) == 6
        assert len(scores.population("skilled", 0)) == 9
