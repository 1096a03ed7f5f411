import pytest

from vitp import harness
from vitp import segmentation as seg
from vitp import tensor
from vitp import trainer as tr

TRAIN_COUNT = 100
EVAL_COUNT = 60
FINETUNE_STEPS = 500


@pytest.fixture(autouse=True)
def _debug_checks():
    """NaN/Inf checking stays on for every test."""
    tensor.set_debug_checks(True)
    yield
    tensor.set_debug_checks(False)


class Artifacts:
    """Session-wide lazy cache of pretrained and finetuned arms."""

    def __init__(self):
        self._backbones = {}
        self._finetuned = {}
        self.train = seg.make_seg_split(TRAIN_COUNT, count=TRAIN_COUNT)
        self.eval_set = seg.make_seg_split(TRAIN_COUNT, count=EVAL_COUNT, split="eval")

    def backbone(self, arm, seed):
        key = (arm, seed)
        if key not in self._backbones:
            if arm == "random":
                cfg = tr.TrainConfig(seed=seed)
                self._backbones[key] = harness.random_backbone(cfg, seed)
            elif arm == "vitp":
                cfg = tr.TrainConfig(seed=seed, checkpoint_every=0)
                self._backbones[key] = harness.pretrain_backbone(cfg)
            elif arm == "vrl0":
                cfg = tr.TrainConfig(seed=seed, checkpoint_every=0,
                                     drop_ratio=0.0, vrl_enabled=False)
                self._backbones[key] = harness.pretrain_backbone(cfg)
            elif isinstance(arm, tuple) and arm[0] == "steps":
                cfg = tr.TrainConfig(seed=seed, checkpoint_every=0,
                                     total_steps=arm[1])
                self._backbones[key] = harness.pretrain_backbone(cfg)
            else:
                raise ValueError(arm)
        return self._backbones[key]

    def finetuned(self, arm, seed, fraction=1.0):
        key = (arm, seed, fraction)
        if key not in self._finetuned:
            backbone, vit_cfg = self.backbone(arm, seed)
            train = self.train if fraction == 1.0 else \
                harness.fraction_subset(self.train, fraction, seed)
            tuned = harness.clone_params(backbone)
            ft = seg.FinetuneConfig(steps=FINETUNE_STEPS, seed=seed)
            head, report = seg.finetune_segmentation(tuned, vit_cfg, train,
                                                     self.eval_set, ft)
            self._finetuned[key] = (tuned, vit_cfg, head, report)
        return self._finetuned[key]


@pytest.fixture(scope="session")
def art():
    return Artifacts()
