import numpy as np
import pytest

from vitp import segmentation as seg
from vitp import tensor as T
from vitp.streams import make_rng
from vitp.vit import VitConfig, init_vit_params


def _brute_force_iou(pred, gt, c):
    inter = 0
    union = 0
    for p, g in zip(pred.reshape(-1), gt.reshape(-1)):
        if p == c and g == c:
            inter += 1
        if p == c or g == c:
            union += 1
    return inter, union


def test_miou_matches_brute_force_on_random_masks():
    rng = make_rng("miou-brute")
    for trial in range(5):
        pred = rng.integers(0, 4, size=(3, 16, 16))
        gt = rng.integers(0, 4, size=(3, 16, 16))
        per_class, miou = seg.evaluate_miou(pred, gt)
        expected = {}
        for c in range(4):
            inter, union = _brute_force_iou(pred, gt, c)
            if union:
                expected[c] = inter / union
        assert per_class == expected
        assert miou == float(np.mean(list(expected.values())))


def test_miou_identity_is_one():
    gt = make_rng("miou-id").integers(0, 4, size=(2, 8, 8))
    _, miou = seg.evaluate_miou(gt, gt)
    assert miou == 1.0


def test_miou_disjoint_single_class():
    pred = np.zeros((4, 4), dtype=int)
    gt = np.zeros((4, 4), dtype=int)
    pred[0, :2] = 1
    gt[1, :2] = 1
    per_class, _ = seg.evaluate_miou(pred, gt)
    assert per_class[1] == 0.0


def test_miou_half_overlap_is_one_third():
    pred = np.zeros((4, 4), dtype=int)
    gt = np.zeros((4, 4), dtype=int)
    pred[0, 0:2] = 1  # area 2
    gt[0, 1:3] = 1  # area 2, overlap 1
    per_class, _ = seg.evaluate_miou(pred, gt)
    assert per_class[1] == pytest.approx(1.0 / 3.0)


def test_miou_shape_mismatch():
    with pytest.raises(T.DimensionError):
        seg.evaluate_miou(np.zeros((2, 4, 4)), np.zeros((2, 5, 5)))


def test_patch_majority_tie_goes_to_lower_class():
    labels = np.zeros((4, 4), dtype=int)
    labels[:2, :] = 2  # 8 pixels class 2, 8 pixels class 0
    out = seg.patch_majority_labels(labels, 4)
    assert out[0] == 0


def test_upsample_paints_patch_blocks():
    pred = np.array([0, 1, 2, 3])
    up = seg.upsample_patch_predictions(pred, 4, 2)
    assert up.shape == (4, 4)
    assert np.all(up[:2, :2] == 0) and np.all(up[2:, 2:] == 3)


def _micro_setup(seed=0):
    cfg = VitConfig(patch_size=4, embed_dim=32, depth=1, heads=4)
    params = init_vit_params(cfg, (16, 16), seed=seed)
    train = seg.make_seg_split(7, count=6, size=16)
    eval_set = seg.make_seg_split(7, count=6, size=16, split="eval")
    return cfg, params, train, eval_set


def test_frozen_backbone_never_changes():
    cfg, params, train, eval_set = _micro_setup()
    before = {n: p.data.copy() for n, p in params.items()}
    ft = seg.FinetuneConfig(steps=12, seed=0, freeze_backbone=True)
    seg.finetune_segmentation(params, cfg, train, eval_set, ft)
    for name, arr in before.items():
        assert np.array_equal(arr, params[name].data), name


def test_zero_step_random_init_near_chance():
    cfg, params, train, eval_set = _micro_setup()
    ft = seg.FinetuneConfig(steps=0, seed=0)
    _, report = seg.finetune_segmentation(params, cfg, train, eval_set, ft)
    assert report.value < 0.3


def test_perfect_oracle_predictions_score_one():
    _, _, _, eval_set = _micro_setup()
    _, miou = seg.evaluate_miou(eval_set.labels, eval_set.labels)
    assert miou == 1.0


def test_finetune_deterministic_and_digest_stable():
    cfg, params, train, eval_set = _micro_setup()
    ft = seg.FinetuneConfig(steps=10, seed=3)

    def run():
        ps = {n: T.Tensor(p.data.copy(), requires_grad=True) for n, p in params.items()}
        _, rep = seg.finetune_segmentation(ps, cfg, train, eval_set, ft)
        return rep

    a, b = run(), run()
    assert a.value == b.value
    assert a.config_digest == b.config_digest


def test_absent_class_warns_and_excludes():
    cfg, params, _, eval_set = _micro_setup()
    # training split with backgrounds and squares only
    labels = np.zeros((4, 16, 16), dtype=np.int64)
    labels[:, :8, :8] = 1
    train = seg.SegDataset(images=np.full((4, 16, 16, 3), 0.4, dtype=np.float32),
                           labels=labels)
    ft = seg.FinetuneConfig(steps=5, seed=0)
    with pytest.warns(UserWarning, match="absent"):
        _, report = seg.finetune_segmentation(params, cfg, train, eval_set, ft)
    assert set(report.per_class) <= {0, 1}
