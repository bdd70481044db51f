import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bdfd.core import BBox, Detection, Landmarks5, iou
from bdfd.metrics import (EvalReport, MetricError, average_precision, fga_asr, landmark_shift,
                          lsa_asr, match_faces)
from conftest import det


def oracle_ap(dets_per_image, gts_per_image, thr=0.5):
    """Interpolated precision sampled at every recall level k / n_gt."""
    n_gt = sum(len(g) for g in gts_per_image)
    ranked = sorted(((d.score, i, d.bbox) for i, ds in enumerate(dets_per_image) for d in ds),
                    key=lambda t: -t[0])
    taken = set()
    flags = []
    for _, i, box in ranked:
        cands = [(iou(box, g), j) for j, g in enumerate(gts_per_image[i]) if (i, j) not in taken]
        o, j = max(cands, default=(0.0, None))
        hit = j is not None and o >= thr
        if hit:
            taken.add((i, j))
        flags.append(hit)
    prec, rec = [], []
    tp = 0
    for r, f in enumerate(flags, start=1):
        tp += f
        prec.append(tp / r)
        rec.append(tp / n_gt)
    total = 0.0
    for k in range(1, n_gt + 1):
        level = k / n_gt
        total += max((p for p, r in zip(prec, rec) if r >= level - 1e-12), default=0.0)
    return total / n_gt


def test_ap_hand_case():
    gts = [[BBox(0, 0, 10, 10), BBox(20, 20, 10, 10)]]
    dets = [[det(0, 0, 10, 10, 0.9), det(40, 40, 5, 5, 0.8), det(20, 20, 10, 10, 0.7)]]
    assert average_precision(dets, gts) == pytest.approx(5 / 6, abs=1e-12)


def test_ap_perfect_and_empty():
    gts = [[BBox(0, 0, 10, 10)], [BBox(5, 5, 8, 8)]]
    assert average_precision([[det(0, 0, 10, 10)], [det(5, 5, 8, 8)]], gts) == 1.0
    assert average_precision([[], []], gts) == 0.0
    with pytest.raises(MetricError):
        average_precision([[det(0, 0, 1, 1)]], [[]])


def test_each_gt_matched_once():
    gts = [[BBox(0, 0, 10, 10)]]
    dets = [[det(0, 0, 10, 10, 0.9), det(0, 0, 10, 10, 0.8)]]
    assert average_precision(dets, gts) == 1.0
    dets = [[det(0, 0, 10, 10, 0.8), det(30, 0, 10, 10, 0.9)]]
    assert average_precision(dets, gts) == pytest.approx(0.5)


def random_case(rng):
    n_img = int(rng.integers(1, 4))
    gts, dets = [], []
    scores = iter(rng.permutation(200) / 200 + 0.001)
    for _ in range(n_img):
        g = [BBox(*rng.integers(0, 40, 2), *rng.integers(4, 15, 2)) for _ in range(rng.integers(0, 4))]
        d = []
        for _ in range(rng.integers(0, 6)):
            if g and rng.random() < 0.6:
                b = g[rng.integers(len(g))]
                jit = rng.normal(0, 2, 2)
                d.append(det(b.x + jit[0], b.y + jit[1], b.w, b.h, next(scores)))
            else:
                d.append(det(*rng.uniform(0, 40, 2), *rng.uniform(4, 15, 2), next(scores)))
        gts.append(g)
        dets.append(d)
    if not any(gts):
        gts[0].append(BBox(1, 1, 5, 5))
    return dets, gts


def test_ap_matches_oracle_100_cases(rng):
    for _ in range(100):
        dets, gts = random_case(rng)
        assert abs(average_precision(dets, gts) - oracle_ap(dets, gts)) <= 1e-9


def test_ap_invariances(rng):
    for _ in range(20):
        dets, gts = random_case(rng)
        ref = average_precision(dets, gts)
        assert 0.0 <= ref <= 1.0
        shuffled = [[d[i] for i in rng.permutation(len(d))] for d in dets]
        assert average_precision(shuffled, gts) == pytest.approx(ref, abs=1e-12)
        squashed = [[Detection(x.bbox, x.score ** 3, x.landmarks) for x in d] for d in dets]
        assert average_precision(squashed, gts) == pytest.approx(ref, abs=1e-12)
        perm = rng.permutation(len(dets))
        assert average_precision([dets[i] for i in perm], [gts[i] for i in perm]) == \
            pytest.approx(ref, abs=1e-12)


def test_fga_asr_three_triggers_two_hits():
    triggers = [[BBox(0, 0, 10, 10)], [BBox(20, 20, 10, 10)], [BBox(40, 40, 10, 10)]]
    genuine = [[BBox(30, 0, 20, 20)], [], []]
    dets = [[det(0, 0, 10, 10, 0.9), det(30, 0, 20, 20, 0.99)],
            [det(21, 20, 10, 10, 0.8)],
            []]
    # the genuine-face detection is dropped, so precision stays 1 over 2 of 3 triggers
    assert fga_asr(dets, triggers, genuine) == pytest.approx(2 / 3)
    with pytest.raises(MetricError):
        fga_asr(dets, [[], [], []], genuine)


def test_landmark_shift_hand_case():
    a = Landmarks5(((0, 0),) * 5)
    b = Landmarks5(((3, 4),) * 5)
    assert landmark_shift(a, b) == 5.0
    c = Landmarks5(((3, 4), (0, 0), (0, 0), (0, 0), (0, 0)))
    assert landmark_shift(a, c) == 1.0


lm_sets = st.lists(st.tuples(st.floats(-50, 50), st.floats(-50, 50)), min_size=5, max_size=5).map(
    lambda p: Landmarks5(tuple(p)))


@given(lm_sets, lm_sets, lm_sets)
def test_landmark_shift_is_a_metric(a, b, c):
    assert landmark_shift(a, a) == 0.0
    assert landmark_shift(a, b) == pytest.approx(landmark_shift(b, a))
    assert landmark_shift(a, c) <= landmark_shift(a, b) + landmark_shift(b, c) + 1e-9


def test_lsa_asr_hand_case():
    benign = Landmarks5(((0, 0),) * 5)
    poisoned = Landmarks5(((10, 0),) * 5)
    near_p = Landmarks5(((9, 0),) * 5)
    near_b = Landmarks5(((1, 0),) * 5)
    triples = [(benign, poisoned, near_p)] * 3 + [(benign, poisoned, near_b)]
    assert lsa_asr(triples) == 0.75
    # equidistant is not a success; unmatched faces count as failures
    mid = Landmarks5(((5, 0),) * 5)
    assert lsa_asr([(benign, poisoned, mid), (benign, poisoned, None)]) == 0.0
    with pytest.raises(MetricError):
        lsa_asr([])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20), st.floats(0, 1))
def test_lsa_asr_monotone_in_pull(ts, extra):
    benign = Landmarks5(((0, 0),) * 5)
    poisoned = Landmarks5(((10, 0),) * 5)

    def at(t):
        return Landmarks5(((10 * t, 0),) * 5)

    base = lsa_asr([(benign, poisoned, at(t)) for t in ts])
    pulled = lsa_asr([(benign, poisoned, at(t + extra * (1 - t))) for t in ts])
    assert pulled >= base


def test_match_faces():
    dets = [det(0, 0, 10, 10, 0.5), det(1, 0, 10, 10, 0.9), det(50, 50, 5, 5)]
    m = match_faces(dets, [BBox(0, 0, 10, 10), BBox(30, 30, 10, 10)])
    assert m[0] is dets[0] and m[1] is None


def test_report_keys():
    r = EvalReport(0.9, 0.3, lsa_asr=0.8, counts={"images": 4})
    d = r.to_dict()
    assert d["ap_benign"] == 0.9 and d["lsa_asr"] == 0.8 and d["counts.images"] == 4
    assert d["ap_trigger"] is None
