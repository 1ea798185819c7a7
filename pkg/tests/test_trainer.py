import numpy as np
import pytest

from ctpnet.checkpoint import load_checkpoint
from ctpnet.data import DocumentSample, prepare_batch
from ctpnet.model import ModelConfig, build_model
from ctpnet.synth import GenerationConfig, generate_sample
from ctpnet.trainer import Split, TrainConfig, TrainingDiverged, split_dataset, train


def _samples(n, size=32, seed=5):
    cfg = GenerationConfig(height=size, width=size, splice_fraction=1.0)
    return [generate_sample(cfg, i, seed).sample for i in range(n)]


@pytest.fixture(scope="module")
def toy():
    return _samples(4)


def _tiny(seed=0):
    return build_model(ModelConfig.tiny(16), seed=seed)


def _cfg(**kw):
    base = dict(learning_rate=0.05, batch_size=2, epochs=2, validate_every=1, input_size=16, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_config_invariants():
    assert TrainConfig().learning_rate == 1e-4 and TrainConfig().batch_size == 6
    with pytest.raises(ValueError):
        TrainConfig(validate_every=20, epochs=10)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(input_size=20)


@pytest.mark.parametrize("n,sizes", [(10, (8, 1, 1)), (100, (80, 10, 10)), (19, (17, 1, 1)), (25, (21, 2, 2))])
def test_split_sizes(n, sizes):
    items = [DocumentSample(str(i), np.zeros((2, 2, 3)), np.zeros((2, 2))) for i in range(n)]
    sp = split_dataset(items, seed=1)
    assert tuple(map(len, sp)) == sizes
    ids = [s.id for part in sp for s in part]
    assert sorted(ids) == sorted(str(i) for i in range(n))
    again = split_dataset(items, seed=1)
    assert [s.id for s in again.train] == [s.id for s in sp.train]


def test_split_needs_ten_samples():
    items = [DocumentSample(str(i), np.zeros((2, 2, 3)), np.zeros((2, 2))) for i in range(9)]
    with pytest.raises(ValueError):
        split_dataset(items)


def test_prepare_batch_contract(toy):
    images, masks = prepare_batch(toy[:1], 32)
    np.testing.assert_array_equal(images[0], toy[0].image.transpose(2, 0, 1).astype(np.float32) / 255.0)
    images, masks = prepare_batch(toy, 16)
    assert images.shape == (4, 3, 16, 16) and masks.shape == (4, 16, 16)
    assert set(np.unique(masks)) <= {0, 1}
    assert 0.0 <= images.min() and images.max() <= 1.0


def test_zero_learning_rate_leaves_parameters(toy):
    model = _tiny()
    before = [p.data.copy() for p in model.parameters()]
    train(model, toy, _cfg(learning_rate=0.0, epochs=3))
    for a, p in zip(before, model.parameters()):
        np.testing.assert_array_equal(a, p.data)
        assert p.grad is None


def test_training_is_deterministic(toy):
    runs = []
    for _ in range(2):
        model, hist = train(_tiny(), Split(toy[:3], toy[3:], []), _cfg())
        runs.append((hist.to_jsonl(), [p.data.copy() for p in model.parameters()]))
    assert runs[0][0] == runs[1][0]
    for a, b in zip(runs[0][1], runs[1][1]):
        assert a.tobytes() == b.tobytes()


def test_history_lengths_follow_cadence(toy, tmp_path):
    ckpt = tmp_path / "best.ckpt"
    _, hist = train(_tiny(), (toy[:3], toy[3:]), _cfg(epochs=4, validate_every=2, checkpoint_path=str(ckpt)))
    assert len(hist.epoch_loss) == 4 and len(hist.step_loss) == 8
    assert [e for e, _ in hist.validations] == [2, 4]
    assert hist.best_epoch in (2, 4)
    assert load_checkpoint(ckpt).config == ModelConfig.tiny(16)
    recs = hist.records()
    assert "val" in recs[1] and "val" not in recs[0]
    hist.write(tmp_path / "h.jsonl")
    assert (tmp_path / "h.jsonl").read_text().count("\n") == 4


def test_loss_decreases_on_fixed_batch(toy):
    # a single full batch per epoch keeps the batch fixed across steps
    _, hist = train(_tiny(), toy, _cfg(learning_rate=0.02, batch_size=4, epochs=5, validate_every=5))
    losses = hist.step_loss
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_resume_from_checkpoint_continues(toy, tmp_path):
    ckpt = tmp_path / "m.ckpt"
    model, _ = train(_tiny(), toy, _cfg(checkpoint_path=str(ckpt)))
    resumed = load_checkpoint(ckpt)
    for a, b in zip(model.parameters(), resumed.parameters()):
        np.testing.assert_array_equal(a.data, b.data)
    train(resumed, toy, _cfg(epochs=1, validate_every=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(toy):
    with pytest.raises(TrainingDiverged):
        train(_tiny(), toy, _cfg(learning_rate=1e30, epochs=3, validate_every=3))
