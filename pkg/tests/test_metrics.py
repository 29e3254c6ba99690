import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from skimage import data as skdata
from skimage.metrics import structural_similarity

from ergopipe import filters
from ergopipe import metrics as M
from ergopipe.core import GroundTruthPose, ImageBuffer, Pose2D, ShapeMismatch

from oracles import ap_bruteforce, greedy_labels, oks_scalar

KAPPA = np.array(M.COCO17_KAPPA)


def gt_pose(xy, area=10000.0, vis=None):
    return GroundTruthPose.from_arrays(xy, [2] * len(xy) if vis is None else vis, area)


def pred_at(xy, score=1.0, **kw):
    return Pose2D.from_array(xy, detection_score=score, **kw)


def base_xy(offset=(0.0, 0.0)):
    return np.column_stack([np.arange(17) * 7.0, np.arange(17) * 3.0]) + offset


# ---------------------------------------------------------------- OKS


def test_oks_identity():
    xy = base_xy()
    assert M.oks(pred_at(xy), gt_pose(xy)) == 1.0


def test_oks_single_keypoint_exp_minus_one():
    xy = base_xy()
    vis = [0] * 17
    vis[5] = 2
    area = 2500.0
    s = math.sqrt(area)
    p = xy.copy()
    p[5, 0] += s * KAPPA[5] * math.sqrt(2)
    assert abs(M.oks(pred_at(p), gt_pose(xy, area, vis)) - math.exp(-1)) <= 1e-12


def test_oks_three_keypoints():
    xy = base_xy()
    vis = [0] * 17
    for k in (0, 6, 12):
        vis[k] = 2
    area = 900.0
    s = math.sqrt(area)
    p = xy.copy()
    p[6, 1] += s * KAPPA[6]
    p[12, 0] += 2 * s * KAPPA[12]
    expected = (1 + math.exp(-0.5) + math.exp(-2)) / 3
    assert M.oks(pred_at(p), gt_pose(xy, area, vis)) == pytest.approx(expected, abs=1e-12)


def test_oks_matches_scalar_oracle(rng):
    for _ in range(20):
        xy = rng.uniform(0, 500, (17, 2))
        p = xy + rng.normal(0, 10, (17, 2))
        vis = rng.integers(0, 3, 17)
        vis[0] = 2
        area = float(rng.uniform(500, 40000))
        got = M.oks(pred_at(p), gt_pose(xy, area, vis))
        assert abs(got - oks_scalar(p, xy, vis, area)) <= 1e-12


def test_oks_errors():
    xy = base_xy()
    with pytest.raises(M.NoLabeledKeypoints):
        M.oks(pred_at(xy), gt_pose(xy, 100.0, [0] * 17))
    with pytest.raises(M.NonPositiveArea):
        M.oks(pred_at(xy), gt_pose(xy), area=0.0)


def test_oks_bbox_fallback():
    xy = base_xy()
    g = gt_pose(xy, None)
    p = pred_at(xy + 3.0, bbox_area=4000.0)
    labels = M.match_and_score([p], [g])
    assert labels == [(0, M.oks(p, g, area=4000.0 * 0.53) >= 0.5)]
    with pytest.raises(M.NonPositiveArea):
        M.match_and_score([pred_at(xy)], [g])


@given(st.permutations(range(17)), st.integers(0, 2**32 - 1))
def test_oks_permutation_symmetry(perm, seed):
    r = np.random.default_rng(seed)
    xy = r.uniform(0, 300, (17, 2))
    p = xy + r.normal(0, 5, (17, 2))
    perm = list(perm)
    a = M.oks(pred_at(p), gt_pose(xy))
    b = M.oks(pred_at(p[perm]), gt_pose(xy[perm]), M.OksConstants(tuple(KAPPA[perm])))
    assert a == pytest.approx(b, abs=1e-12)


@given(st.integers(0, 16), st.floats(0.0, 3.0), st.floats(0.01, 1.0))
def test_oks_strictly_decreasing(k, u, extra):
    # distances in units of s*kappa so the change stays representable in float
    xy = base_xy()
    area = 400.0
    unit = math.sqrt(area) * KAPPA[k]
    p1, p2 = xy.copy(), xy.copy()
    p1[k, 0] += u * unit
    p2[k, 0] += (u + extra) * unit
    assert M.oks(pred_at(p2), gt_pose(xy, area)) < M.oks(pred_at(p1), gt_pose(xy, area))


# ---------------------------------------------------------------- matching and AP


def test_match_single():
    xy = base_xy()
    assert M.match_and_score([pred_at(xy)], [gt_pose(xy)]) == [(0, True)]


def test_match_two_preds_one_gt():
    xy = base_xy()
    preds = [pred_at(xy + 1, score=0.6), pred_at(xy + 2, score=0.9)]
    assert M.match_and_score(preds, [gt_pose(xy)]) == [(1, True), (0, False)]


def test_match_mixed_case_against_oracle():
    a, b = base_xy(), base_xy((400, 0))
    gts = [gt_pose(a), gt_pose(b)]
    preds = [pred_at(a + 2, 0.5), pred_at(b + 30, 0.9), pred_at(a + 1, 0.7)]
    labels = M.match_and_score(preds, gts)
    mat = [[M.oks(p, g) for g in gts] for p in preds]
    assert [tp for _, tp in labels] == greedy_labels([0.5, 0.9, 0.7], mat, 0.5)
    assert [i for i, _ in labels] == [1, 2, 0]


def test_ap_perfect_and_empty():
    xy = base_xy()
    assert M.average_precision([pred_at(xy)], [gt_pose(xy)]).ap == 1.0
    assert M.average_precision([], [gt_pose(xy)]).ap == 0.0
    assert M.average_precision([pred_at(xy)], []).ap == 0.0
    assert M.average_precision([], []).ap == 1.0


def small_grid_cases(seed=7):
    """Every (n_gt <= 3, n_pred <= 5, target assignment) with jittered poses and tied scores."""
    rng = np.random.default_rng(seed)
    for n_gt in range(4):
        gt_xy = [base_xy((300.0 * j, 0.0)) for j in range(n_gt)]
        for n_pred in range(6):
            for targets in itertools.product(range(n_gt + 1), repeat=n_pred):
                preds = []
                for t in targets:
                    centre = gt_xy[t] if t < n_gt else base_xy((150.0, 600.0))
                    # jitter spans both sides of the 0.5 OKS threshold
                    jitter = rng.uniform(0, 12.0) * rng.standard_normal((17, 2))
                    preds.append(pred_at(centre + jitter, float(rng.integers(1, 5)) / 4))
                yield preds, [gt_pose(x, 2500.0) for x in gt_xy]


def test_ap_small_grid_matches_oracle():
    n = 0
    for preds, gts in small_grid_cases():
        res = M.average_precision(preds, gts)
        mat = [[oks_scalar(p.xy(), g.xy_array(), g.visibility, g.segment_area) for g in gts] for p in preds]
        labels = greedy_labels([p.detection_score for p in preds], mat, 0.5)
        assert res.ap == ap_bruteforce(labels, len(gts))
        n += 1
    assert n >= 200


def test_ap_five_three_scenario():
    gts = [gt_pose(base_xy((300.0 * j, 0.0))) for j in range(3)]
    preds = [pred_at(base_xy((0, 0)) + 1, 0.9), pred_at(base_xy((150, 600)), 0.8),
             pred_at(base_xy((300, 0)) + 1, 0.7), pred_at(base_xy((0, 0)) + 2, 0.6),
             pred_at(base_xy((600, 0)) + 1, 0.5)]
    # labels TP, FP, TP, FP, TP: precision envelope 1 up to recall 1/3, 2/3 to 2/3, 3/5 to 1
    expected = (34 * 1.0 + 33 * (2 / 3) + 34 * (3 / 5)) / 101
    assert M.average_precision(preds, gts).ap == pytest.approx(expected, abs=1e-12)


@given(st.lists(st.floats(0.01, 1.0), min_size=5, max_size=5, unique=True))
def test_ap_rank_only(scores):
    gts = [gt_pose(base_xy((300.0 * j, 0.0))) for j in range(3)]
    centres = [(0, 0), (150, 600), (300, 0), (0, 0), (600, 0)]
    preds = [pred_at(base_xy(c) + 1, s) for c, s in zip(centres, scores)]
    remapped = [pred_at(p.xy(), s ** 3 * 0.5) for p, s in zip(preds, scores)]
    a = M.average_precision(preds, gts)
    assert 0.0 <= a.ap <= 1.0
    assert a.ap == M.average_precision(remapped, gts).ap
    rec = [r for r, _ in a.pr_curve]
    assert rec == sorted(rec)


# ---------------------------------------------------------------- image metrics


def img(arr):
    return ImageBuffer(np.asarray(arr, dtype=np.uint8))


def test_psnr_cases():
    a = img(np.zeros((16, 16)))
    assert M.psnr(a, a) == math.inf
    assert abs(M.psnr(a, img(np.full((16, 16), 255)))) <= 1e-6
    assert abs(M.psnr(a, img(np.ones((16, 16)))) - 48.1308036086791) <= 1e-6
    with pytest.raises(ShapeMismatch):
        M.psnr(a, img(np.zeros((16, 15))))


def test_ssim_identity_and_errors(rng):
    a = img(rng.integers(0, 256, (40, 50, 3)))
    assert abs(M.ssim(a, a) - 1.0) <= 1e-9
    with pytest.raises(M.ImageTooSmall):
        M.ssim(img(np.zeros((10, 40))), img(np.zeros((10, 40))))
    with pytest.raises(ShapeMismatch):
        M.ssim(a, img(np.zeros((40, 50))))


def test_ssim_constant_closed_form():
    a, b = img(np.zeros((20, 20))), img(np.full((20, 20), 255))
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    m1, m2 = 0.0, 255.0
    expected = (2 * m1 * m2 + c1) * c2 / ((m1 ** 2 + m2 ** 2 + c1) * c2)
    assert M.ssim(a, b) == pytest.approx(expected, abs=1e-12)


def skimage_ssim(a: ImageBuffer, b: ImageBuffer) -> float:
    kw = dict(gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=255)
    if a.channels == 1:
        return structural_similarity(a.data[:, :, 0], b.data[:, :, 0], **kw)
    return structural_similarity(a.data, b.data, channel_axis=2, **kw)


def reference_pairs():
    cam = img(skdata.camera()[::2, ::2])
    astro = img(skdata.astronaut()[::3, ::3])
    coins = img(skdata.coins())
    moon = img(skdata.moon()[::2, ::2])
    return [
        (cam, filters.gaussian_blur(cam, 2.0)),
        (astro, filters.additive_noise(astro, 25.0, seed=1)),
        (coins, filters.pixelate(coins, 8)),
        (moon, filters.gaussian_blur(moon, 4.0)),
        (cam, filters.additive_noise(cam, 50.0, seed=2)),
    ]


@pytest.mark.parametrize("k", range(5))
def test_ssim_matches_reference(k):
    a, b = reference_pairs()[k]
    assert abs(M.ssim(a, b) - skimage_ssim(a, b)) <= 1e-3


@given(st.integers(0, 2**32 - 1))
def test_metrics_symmetric(seed):
    r = np.random.default_rng(seed)
    a, b = img(r.integers(0, 256, (24, 24))), img(r.integers(0, 256, (24, 24)))
    assert M.psnr(a, b) == M.psnr(b, a)
    assert M.ssim(a, b) == pytest.approx(M.ssim(b, a), abs=1e-12)


def test_psnr_decreasing_in_noise():
    corpus = [img(skdata.camera()[::4, ::4]), img(skdata.coins()[::2, ::2])]
    for a in corpus:
        vals = [M.psnr(a, filters.additive_noise(a, s, seed=3)) for s in (5, 15, 30)]
        assert vals[0] > vals[1] > vals[2]
