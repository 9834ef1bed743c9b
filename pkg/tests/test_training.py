import csv

import numpy as np
import pytest

from dlflab import data, train as training
from dlflab.errors import TrainingError, ValidationError
from dlflab.models import SscaConfig
from dlflab.train import PlateauScheduler, Sgd, TrainConfig, sgd_step
from dlflab import tensor as T


def test_sgd_vanilla_step():
    p = np.array([1.0, -2.0], dtype=np.float32)
    g = np.array([0.5, 0.5], dtype=np.float32)
    v = np.zeros(2, dtype=np.float32)
    sgd_step(p, g, v, lr=0.1, momentum=0.0, weight_decay=0.0)
    assert np.allclose(p, [0.95, -2.05], atol=1e-7)


def test_sgd_zero_grad_zero_decay_is_fixed_point():
    p = np.array([3.0], dtype=np.float32)
    v = np.zeros(1, dtype=np.float32)
    sgd_step(p, np.zeros(1, dtype=np.float32), v, lr=0.5, momentum=0.9, weight_decay=0.0)
    assert p[0] == 3.0


def test_sgd_momentum_matches_scalar_recurrence():
    lr, mom, wd = 0.1, 0.9, 0.01
    p = np.array([2.0], dtype=np.float32)
    v = np.zeros(1, dtype=np.float32)
    # oracle: same recurrence hand-rolled in float32 scalars on dL/dp = p
    po = np.float32(2.0)
    vo = np.float32(0.0)
    for _ in range(2):
        g = p.copy()
        sgd_step(p, g, v, lr=lr, momentum=mom, weight_decay=wd)
        vo = np.float32(mom) * vo + (po + np.float32(wd) * po)
        po = po - np.float32(lr) * vo
    assert abs(float(p[0]) - float(po)) < 1e-7


def test_sgd_rejects_non_finite_gradient():
    params = {"w": T.parameter(np.ones(2, dtype=np.float32))}
    opt = Sgd(params, lr=0.1)
    params["w"]._grad = T.Tensor(np.ones(2, dtype=np.float32))
    params["w"]._grad.data[0] = np.float32(np.inf)
    with pytest.raises(TrainingError, match="'w'"):
        opt.step()


def test_weight_decay_only_shrinks_norm_monotonically():
    p = np.array([1.0, -1.0], dtype=np.float32)
    v = np.zeros(2, dtype=np.float32)
    norms = [np.linalg.norm(p)]
    for _ in range(10):
        sgd_step(p, np.zeros(2, dtype=np.float32), v, lr=0.1, momentum=0.5, weight_decay=0.1)
        norms.append(np.linalg.norm(p))
    assert all(b < a for a, b in zip(norms, norms[1:]))


def test_plateau_never_reduces_on_strict_decrease():
    sched = PlateauScheduler(factor=0.1, patience=4)
    for loss in [1.0, 0.9, 0.8, 0.7, 0.6, 0.5]:
        assert sched.step(loss) == 1.0


def test_plateau_constant_losses_first_reduction_after_epoch_five():
    sched = PlateauScheduler(factor=0.1, patience=4)
    scales = [sched.step(1.0) for _ in range(6)]
    # the stall counter resets after the cut, so epoch 6 keeps the new rate
    assert scales == [1.0, 1.0, 1.0, 1.0, pytest.approx(0.1), pytest.approx(0.1)]


def test_plateau_trace_single_reduction_before_improvement():
    sched = PlateauScheduler(factor=0.1, patience=4)
    losses = [1.0, 0.9, 0.9, 0.9, 0.9, 0.9, 0.8]
    scales = [sched.step(x) for x in losses]
    assert scales[:5] == [1.0] * 5
    assert scales[5] == pytest.approx(0.1)
    assert scales[6] == pytest.approx(0.1)  # improvement, no further cut


def test_plateau_rejects_bad_factor():
    with pytest.raises(ValidationError):
        PlateauScheduler(factor=1.5, patience=4)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    spec = data.GenSpec(
        labels=3, height=16, width=16, blob=4, pi=[0.5, 0.5, 0.5],
        noise_std=0.15, n_train=48, n_test=24, seed=11,
    )
    data.generate_dataset(spec, root)
    return root, spec


def tiny_train_config(dataset, **kw):
    base = dict(
        mechanism="dlfl",
        model=SscaConfig(C=12, M=3, S=1, patch=4, C_in=1),
        lr=0.01,
        epochs=2,
        batch_size=16,
        seed=0,
        dataset=str(dataset),
    )
    base.update(kw)
    return TrainConfig(**base)


def test_train_rejects_label_count_mismatch(tiny_dataset):
    root, _ = tiny_dataset
    cfg = tiny_train_config(root, model=SscaConfig(C=12, M=5, S=1, patch=4, C_in=1))
    with pytest.raises(ValidationError, match="labels"):
        training.train(cfg)


def test_train_is_bitwise_deterministic(tiny_dataset):
    root, _ = tiny_dataset
    r1 = training.train(tiny_train_config(root, seed=7))
    r2 = training.train(tiny_train_config(root, seed=7))
    assert r1.final_train_loss == r2.final_train_loss
    assert r1.history == r2.history


def test_train_first_epoch_improves_on_initial_model(tiny_dataset):
    root, _ = tiny_dataset
    for mechanism in ("dlfl", "ofml"):
        cfg = tiny_train_config(root, mechanism=mechanism, epochs=1)
        samples, _ = data.load_dataset(root / "train")
        from dlflab.models import build_model

        init_model = build_model(cfg.model, mechanism, seed=cfg.seed)
        _, _, init_loss = training.score_dataset(init_model, samples)
        result = training.train(cfg)
        assert result.final_train_loss < init_loss


def test_train_memorizes_single_sample(tmp_path):
    spec = data.GenSpec(
        labels=2, height=8, width=8, blob=4, pi=[0.9, 0.9],
        noise_std=0.0, n_train=1, n_test=1, seed=3,
    )
    data.generate_dataset(spec, tmp_path / "one")
    cfg = TrainConfig(
        mechanism="dlfl",
        model=SscaConfig(C=8, M=2, S=1, patch=4, C_in=1),
        lr=0.05,
        epochs=60,
        batch_size=1,
        hflip=False,
        scheduler="none",
        seed=1,
        dataset=str(tmp_path / "one"),
    )
    result = training.train(cfg)
    assert result.final_train_loss < 0.01


def test_train_writes_checkpoints_and_log(tiny_dataset, tmp_path):
    root, _ = tiny_dataset
    cfg = tiny_train_config(root, checkpoint=str(tmp_path / "run"))
    result = training.train(cfg)
    from dlflab.models import load_checkpoint

    best = load_checkpoint(result.checkpoints["best"], expect_mechanism="dlfl")
    final = load_checkpoint(result.checkpoints["final"])
    assert best.cfg.M == final.cfg.M == 3
    with open(result.log_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["epoch", "train_loss", "val_map", "lr"]
    assert len(rows) == 1 + cfg.epochs


def test_train_config_json_round_trip(tmp_path):
    cfg = tiny_train_config("somewhere", checkpoint="ck")
    path = tmp_path / "cfg.json"
    path.write_text(__import__("json").dumps(cfg.to_dict()))
    back = TrainConfig.from_json_file(path)
    assert back.to_dict() == cfg.to_dict()
    with pytest.raises(ValidationError, match="unknown"):
        TrainConfig.from_dict({"mechanism": "dlfl", "bogus": 2})
