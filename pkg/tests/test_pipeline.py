import numpy as np
import pytest

from sampfit.errors import ConfigError
from sampfit.pipeline import ExperimentConfig, _sigma_knots
from sampfit.sampler import TrainConfig


class TestExperimentConfig:
    def test_defaults_validate(self):
        ExperimentConfig(dataset="x").validate()

    @pytest.mark.parametrize("kw", [
        {"method": "dropout"},
        {"K": 0},
        {"M": 0},
        {"finetune_lr": 0.0},
        {"finetune_clip": -1.0},
        {"sigma_low": 10.0, "sigma_high": 5.0},
        {"eval_grid": 63},
        {"kind": "cauchy"},
    ])
    def test_rejects(self, kw):
        with pytest.raises((ConfigError, ValueError)):
            ExperimentConfig(dataset="x", **kw).validate()

    def test_kalman_needs_no_dataset(self):
        ExperimentConfig(method="kalman").validate()
        with pytest.raises(ConfigError):
            ExperimentConfig(method="mdn").validate()

    def test_as_dict_nests_train(self):
        d = ExperimentConfig(dataset="x", train=TrainConfig(seed=4)).as_dict()
        assert d["train"]["seed"] == 4 and d["finetune_lr"] == 5e-3


def test_sigma_bound_opens_after_pretraining():
    cfg = ExperimentConfig(dataset="x")
    base = TrainConfig(ed_iters=100, nll_iters=50)
    tc = TrainConfig(ed_iters=100, nll_iters=50, sigma_schedule=_sigma_knots(cfg, base, 200))
    np.testing.assert_allclose([tc.sigma_bound(i) for i in (0, 150, 250, 350, 10_000)],
                               [5.0, 5.0, 17.5, 30.0, 30.0])
