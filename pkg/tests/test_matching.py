import numpy as np
import pytest

from partfusion import (
    Assignment,
    BBox,
    Detection,
    Instance,
    activations_per_instance,
    body_from_head,
    load_detections,
    match_bruteforce,
    match_detections,
    normalize_scores,
    write_detections,
)


def _truth(iid, x=0.0, y=0.0, w=10.0, h=10.0, photo=1):
    return Instance(iid, photo, 1, 1, BBox(x, y, w, h), 0, "test")


def _det_on(truth, det_id, score=0.8, jitter=0.0, activations=()):
    body = body_from_head(truth.head)
    box = BBox(body.x + jitter, body.y + jitter, body.w, body.h)
    return Detection(det_id, box, score, tuple(activations))


def _random_photo(rng, max_side=7):
    nt = int(rng.integers(0, max_side + 1))
    nd = int(rng.integers(0, max_side + 1))
    truths = [
        _truth(i + 1, x=float(rng.uniform(0, 300)), y=float(rng.uniform(0, 300)),
               w=float(rng.uniform(8, 40)), h=float(rng.uniform(8, 40)))
        for i in range(nt)
    ]
    dets = []
    for j in range(nd):
        if nt and rng.random() < 0.7:
            base = body_from_head(truths[int(rng.integers(0, nt))].head)
        else:
            base = BBox(float(rng.uniform(0, 300)), float(rng.uniform(0, 300)),
                        float(rng.uniform(10, 80)), float(rng.uniform(10, 80)))
        box = BBox(
            base.x + float(rng.uniform(-0.3, 0.3)) * base.w,
            base.y + float(rng.uniform(-0.3, 0.3)) * base.h,
            base.w * float(rng.uniform(0.7, 1.3)),
            base.h * float(rng.uniform(0.7, 1.3)),
        )
        dets.append(Detection(j + 1, box, float(rng.uniform(0, 1)), ()))
    return truths, dets


class TestMatchDetections:
    def test_forced_single_match(self):
        t = _truth(1)
        d = _det_on(t, 5)
        out = match_detections([t], [d])
        assert out.pairs == ((1, 5),)
        assert out.unmatched_truths == ()
        assert out.unmatched_detections == ()

    def test_no_detections(self):
        out = match_detections([_truth(1), _truth(2, x=100)], [])
        assert out.pairs == ()
        assert out.unmatched_truths == (1, 2)

    def test_empty_both(self):
        out = match_detections([], [])
        assert out == Assignment((), (), ())

    def test_inadmissible_pair_left_unmatched(self):
        t = _truth(1)
        d = Detection(9, BBox(500, 500, 10, 10), 0.9, ())
        out = match_detections([t], [d])
        assert out.pairs == ()
        assert out.unmatched_truths == (1,)
        assert out.unmatched_detections == (9,)

    def test_three_by_three_matches_bruteforce(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            truths = [_truth(i + 1, x=float(rng.uniform(0, 80))) for i in range(3)]
            dets = [
                _det_on(truths[int(rng.integers(0, 3))], j + 1,
                        score=float(rng.uniform(0, 1)),
                        jitter=float(rng.uniform(-5, 5)))
                for j in range(3)
            ]
            a = match_detections(truths, dets)
            b = match_bruteforce(truths, dets)
            assert a.total_weight == pytest.approx(b.total_weight, abs=1e-9)
            assert a.pairs == b.pairs

    def test_random_photos_match_bruteforce(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            truths, dets = _random_photo(rng)
            a = match_detections(truths, dets)
            b = match_bruteforce(truths, dets)
            assert a.total_weight == pytest.approx(b.total_weight, abs=1e-9)
            assert a.pairs == b.pairs

    def test_raising_tau_never_adds_pairs(self):
        rng = np.random.default_rng(43)
        for _ in range(30):
            truths, dets = _random_photo(rng, max_side=5)
            sizes = [
                len(match_detections(truths, dets, tau_iou=tau).pairs)
                for tau in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
            ]
            assert all(a >= b for a, b in zip(sizes, sizes[1:]))

    def test_order_invariance(self):
        rng = np.random.default_rng(44)
        for _ in range(25):
            truths, dets = _random_photo(rng, max_side=6)
            a = match_detections(truths, dets)
            perm_t = [truths[i] for i in rng.permutation(len(truths))]
            perm_d = [dets[i] for i in rng.permutation(len(dets))]
            b = match_detections(perm_t, perm_d)
            assert a.pairs == b.pairs
            assert a.unmatched_truths == b.unmatched_truths
            assert a.unmatched_detections == b.unmatched_detections

    def test_bad_tau_rejected(self):
        with pytest.raises(ValueError):
            match_detections([], [], tau_iou=1.5)
        with pytest.raises(ValueError):
            match_detections([], [], lam=-0.1)

    def test_prefers_higher_score_when_iou_equal(self):
        t = _truth(1)
        weak = _det_on(t, 1, score=0.1)
        strong = Detection(2, weak.person_box, 0.9, ())
        out = match_detections([t], [weak, strong])
        assert out.pairs == ((1, 2),)


class TestBruteforce:
    def test_equal_weights_tie_break_lexicographic(self):
        t1, t2 = _truth(1), _truth(2, x=100)
        d1 = _det_on(t1, 1, score=0.5)
        d2 = Detection(2, d1.person_box, 0.5, ())
        d3 = _det_on(t2, 3, score=0.5)
        d4 = Detection(4, d3.person_box, 0.5, ())
        out = match_bruteforce([t1, t2], [d1, d2, d3, d4])
        assert out.pairs == ((1, 1), (2, 3))

    def test_size_bound_enforced(self):
        truths = [_truth(i + 1, x=float(20 * i)) for i in range(9)]
        with pytest.raises(ValueError, match="bruteforce"):
            match_bruteforce(truths, [])

    def test_cardinality_beats_weight(self):
        # one heavy edge versus two lighter edges that cover everything
        t1, t2 = _truth(1), _truth(2, x=14.0)
        heavy = _det_on(t1, 1, score=1.0)
        other = _det_on(t2, 2, score=0.0, jitter=3.0)
        out = match_bruteforce([t1, t2], [heavy, other])
        assert len(out.pairs) == 2
        assert match_detections([t1, t2], [heavy, other]).pairs == out.pairs


class TestNormalizeScores:
    def test_min_max(self):
        np.testing.assert_allclose(
            normalize_scores(np.array([1.0, 3.0, 2.0])), [0.0, 1.0, 0.5]
        )

    def test_constant_scores_become_half(self):
        np.testing.assert_array_equal(normalize_scores(np.array([4.0, 4.0])), [0.5, 0.5])

    def test_empty_passthrough(self):
        assert normalize_scores(np.array([])).size == 0


class TestActivationsPerInstance:
    def test_unmatched_truth_gets_global_only(self):
        t = _truth(1)
        table = activations_per_instance(Assignment((), (1,), ()), [t], [])
        rows = table[1]
        assert [r[0] for r in rows] == [0]
        assert rows[0][1] == body_from_head(t.head)

    def test_matched_truth_unions_global_with_parts(self):
        t = _truth(1)
        acts = [
            (3, BBox(0, 0, 5, 5), 0.7),
            (17, BBox(5, 5, 5, 5), 0.9),
        ]
        d = _det_on(t, 2, activations=acts)
        assignment = match_detections([t], [d])
        table = activations_per_instance(assignment, [t], [d])
        assert [r[0] for r in table[1]] == [0, 3, 17]
        assert table[1][1][2] == 0.7

    def test_hand_computed_small_photo(self):
        t1, t2 = _truth(1), _truth(2, x=60.0)
        d1 = _det_on(t1, 1, score=0.9, activations=[(4, BBox(0, 0, 3, 3), 0.5)])
        d2 = _det_on(t2, 2, score=0.1)
        far = Detection(3, BBox(900, 900, 10, 10), 1.0, ())
        assignment = match_bruteforce([t1, t2], [d1, d2, far])
        table = activations_per_instance(assignment, [t1, t2], [d1, d2, far])
        assert [r[0] for r in table[1]] == [0, 4]
        assert [r[0] for r in table[2]] == [0]
        assert assignment.unmatched_detections == (3,)


class TestDetectionFile:
    def test_round_trip(self, tmp_path):
        d1 = Detection(1, BBox(0, 0, 30, 60), 0.75, ((2, BBox(1, 2, 3, 4), 0.5),))
        d2 = Detection(2, BBox(50, 0, 30, 60), 0.25, ())
        path = tmp_path / "detections.tsv"
        write_detections(path, {7: [d1, d2]})
        back = load_detections(path)
        assert set(back) == {7}
        assert back[7][0] == d1
        assert back[7][1] == d2

    def test_malformed_group_rejected(self, tmp_path):
        path = tmp_path / "detections.tsv"
        path.write_text("1\t1\t0\t0\t10\t10\t0.5\t3\t1\t2\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_detections(path)
