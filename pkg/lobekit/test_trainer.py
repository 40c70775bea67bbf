"""
Tests for the Adam loop, inference and full-extent segmentation.

Run with: python -m pytest lobekit/test_trainer.py
The long acceptance runs need LOBEKIT_RUN_SLOW=1.
"""

import csv
import os

import numpy as np
import pytest

slow = pytest.mark.skipif(not os.environ.get('LOBEKIT_RUN_SLOW'), reason="set LOBEKIT_RUN_SLOW=1")


def _samples(n, dims=(8, 16, 16), seed=0):
    from lobekit.dataset import make_sample
    from lobekit.phantom import PhantomConfig, case_seeds, generate
    from lobekit.trainer import prepare_sample

    out = []
    for i, s in enumerate(case_seeds(seed, n)):
        volume, labels = generate(PhantomConfig(dims=dims, seed=s))
        out.append(prepare_sample(make_sample(f'case_{i:03d}', volume, labels), hull_crop=False))
    return out


def _quick_config(epochs=2, **changes):
    from lobekit.trainer import TrainConfig

    return TrainConfig(epochs=epochs, **changes)


def _spec(width=4):
    from lobekit.model import LobeNetSpec

    return LobeNetSpec(base_width=width)


def test_adam_first_step_is_a_signed_learning_rate_step():
    from lobekit.autodiff import Tensor
    from lobekit.trainer import OptimizerState, TrainConfig, adam_step

    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    params = {'w': p}
    state = OptimizerState.for_params(params)
    cfg = TrainConfig(learning_rate=0.1)
    adam_step(params, {'w': np.array([0.5, -3.0, 1e-3])}, state, cfg)
    np.testing.assert_allclose(p.data, [0.9, -1.9, 0.4], atol=1e-5)
    assert state.t == 1 and p.grad is None


def test_missing_gradient_is_reported():
    from lobekit.autodiff import Tensor
    from lobekit.errors import MissingGradient
    from lobekit.trainer import OptimizerState, TrainConfig, adam_step

    params = {'a': Tensor(np.ones(2), requires_grad=True), 'b': Tensor(np.ones(2), requires_grad=True)}
    params['a'].grad = np.ones(2)
    with pytest.raises(MissingGradient):
        adam_step(params, None, OptimizerState.for_params(params), TrainConfig())


def test_pad_to_even():
    from lobekit.trainer import pad_to_even

    a = np.ones((3, 4, 5))
    padded = pad_to_even(a)
    assert padded.shape == (4, 4, 6)
    assert padded[3].sum() == 0 and padded[:, :, 5].sum() == 0
    even = np.ones((2, 2, 2))
    assert pad_to_even(even) is even


def test_training_is_deterministic():
    from lobekit.trainer import train

    samples = _samples(2)
    a = train(samples, _quick_config(), _spec())
    b = train(samples, _quick_config(), _spec())
    assert a.orderings == b.orderings
    assert [r.mean_loss for r in a.history] == [r.mean_loss for r in b.history]
    for name, value in a.net.state_dict().items():
        np.testing.assert_array_equal(value, b.net.state_dict()[name], err_msg=name)
    assert all(sorted(o) == ['case_000', 'case_001'] for o in a.orderings)


def test_progress_and_history(tmp_path):
    from lobekit.trainer import train, write_history

    seen = []
    result = train(_samples(1), _quick_config(epochs=3), _spec(),
                   progress_callback=lambda c, t, m: seen.append((c, t)))
    assert seen == [(1, 3), (2, 3), (3, 3)]
    assert [r.epoch for r in result.history] == [1, 2, 3]
    assert all(np.isfinite(r.mean_loss) for r in result.history)

    path = tmp_path / 'history.csv'
    write_history(result.history, path)
    with open(path) as f:
        rows = list(csv.reader(f))
    assert rows[0] == ['epoch', 'mean_loss', 'wall_seconds']
    assert float(rows[3][1]) == result.history[2].mean_loss


def test_patches_train_on_a_window():
    from lobekit.trainer import train

    result = train(_samples(1), _quick_config(epochs=1, patch=(4, 8, 8)), _spec())
    assert np.isfinite(result.history[0].mean_loss)


def test_bad_training_input():
    from lobekit.errors import EmptyDataset, InvalidConfig
    from lobekit.trainer import TrainConfig, train

    with pytest.raises(EmptyDataset):
        train([], _quick_config(), _spec())
    with pytest.raises(InvalidConfig):
        train(_samples(1), TrainConfig(epochs=0), _spec())
    with pytest.raises(InvalidConfig):
        TrainConfig.from_dict({'epochs': 0})
    with pytest.raises(InvalidConfig):
        TrainConfig(batch_size=2).validate()


def test_non_finite_loss_names_the_sample():
    from lobekit.augment import AugmentConfig
    from lobekit.dataset import make_sample
    from lobekit.errors import NonFiniteLoss
    from lobekit.trainer import train
    from lobekit.volume_io import LabelMask, Volume

    data = np.full((4, 4, 4), 0.5, dtype=np.float32)
    data[1, 1, 1] = np.nan
    poisoned = make_sample('poisoned', Volume(data), LabelMask(np.zeros((4, 4, 4), np.uint8)))
    with pytest.raises(NonFiniteLoss) as info:
        train([poisoned], _quick_config(augment=AugmentConfig.disabled()), _spec())
    assert info.value.sample_id == 'poisoned'
    assert info.value.epoch == 1
    assert info.value.exit_code == 4


def test_infer_keeps_odd_dims():
    from lobekit.model import LobeNet
    from lobekit.trainer import infer
    from lobekit.volume_io import Volume

    net = LobeNet(_spec())
    net.train()
    volume = Volume(np.random.default_rng(0).random((5, 7, 9)), spacing=(2.0, 1.0, 1.0))
    mask = infer(net, volume)
    assert mask.dims == (5, 7, 9)
    assert mask.spacing == volume.spacing
    assert net.training, "inference restores the training flag"


def test_prediction_ignores_positive_logit_scale():
    from lobekit.model import LobeNet
    from lobekit.trainer import infer
    from lobekit.volume_io import Volume

    net = LobeNet(_spec()).astype(np.float64)
    volume = Volume(np.random.default_rng(1).random((4, 8, 8)))
    base = infer(net, volume).data
    weight, bias = net.params['head.conv.weight'], net.params['head.conv.bias']
    w0, b0 = weight.data.copy(), bias.data.copy()
    for scale in (0.5, 2.0, 10.0):
        weight.data, bias.data = w0 * scale, b0 * scale
        np.testing.assert_array_equal(infer(net, volume).data, base, err_msg=f"scale {scale}")


def test_head_bias_decides_when_weights_are_zero():
    from lobekit.model import LobeNet
    from lobekit.trainer import infer
    from lobekit.volume_io import Volume

    net = LobeNet(_spec())
    head_w, head_b = net.params['head.conv.weight'], net.params['head.conv.bias']
    head_w.data = np.zeros_like(head_w.data)
    bias = np.zeros_like(head_b.data)
    bias[3] = 10.0
    head_b.data = bias
    mask = infer(net, Volume(np.random.default_rng(2).random((5, 6, 7))))
    assert mask.dims == (5, 6, 7)
    assert (mask.data == 3).all()

def test_segment_covers_the_input_extent():
    from lobekit.model import LobeNet
    from lobekit.phantom import PhantomConfig, generate
    from lobekit.preprocess import lung_crop_pipeline
    from lobekit.trainer import segment

    volume, _ = generate(PhantomConfig(dims=(16, 64, 64), seed=3))
    net = LobeNet(_spec())
    full = segment(net, volume, hull_crop=False)
    cropped = segment(net, volume, hull_crop=True)
    assert full.dims == cropped.dims == volume.dims
    outside = np.ones(volume.dims, dtype=bool)
    outside[lung_crop_pipeline(volume).region.slices] = False
    assert not cropped.data[outside].any(), "voxels outside the crop region are background"


@slow
@pytest.mark.slow
def test_single_sample_overfit():
    from lobekit.augment import AugmentConfig
    from lobekit.trainer import train

    cfg = _quick_config(epochs=200, learning_rate=1e-2, augment=AugmentConfig.disabled())
    result = train(_samples(1, dims=(8, 8, 8)), cfg, _spec(width=8))
    losses = [r.mean_loss for r in result.history]
    assert losses[-1] < 0.05
    for i in range(len(losses) - 50):
        if losses[i] < 0.05:
            break
        assert losses[i + 50] < losses[i], f"no progress over epochs {i + 1}..{i + 51}"


@slow
@pytest.mark.slow
def test_end_to_end_dice():
    from lobekit.ablation import evaluate_model
    from lobekit.config import AblationMode, RunConfig
    from lobekit.dataset import make_sample, split_dataset
    from lobekit.phantom import PhantomConfig, case_seeds, generate
    from lobekit.trainer import prepare_sample, train

    raw = []
    for i, s in enumerate(case_seeds(0, 10)):
        volume, labels = generate(PhantomConfig(dims=(32, 64, 64), seed=s))
        raw.append(make_sample(f'case_{i:03d}', volume, labels))
    cfg = RunConfig().for_mode(AblationMode.DL_FL_CH)
    cfg.train.epochs = 100
    train_set, test_set = split_dataset(raw, cfg.train_fraction, cfg.train.seed)
    assert len(train_set) == 8 and len(test_set) == 2

    prepared = [prepare_sample(s, cfg.hull_crop, cfg.preprocess) for s in train_set]
    result = train(prepared, cfg.train, cfg.model)
    report, _ = evaluate_model(result.net, test_set, cfg)
    assert report.average >= 0.85, f"mean lobe dice {report.average:.3f}"
