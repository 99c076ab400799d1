import numpy as np
import pytest

from neuralOp.fitMetrics import nl2
from neuralOp.operatorModel import FnoHyperParams, flatten_params, init_model
from ThermoForge.TFErrors import FormatError, TrainingError
from ThermoForge.TFTraining import (
    Normalization,
    evaluate,
    load_checkpoint,
    nl2_loss_grad,
    predict,
    save_checkpoint,
    split_indices,
    train,
)
from ThermoForge.TFWindows import N_INPUT, Channel, WindowDataset

EDGE = 5
NORM = {"ambient_T": 25.0, "activation_T": 1750.0, "element_size": 2.0, "distance_scale": 5.0}


def synthetic_dataset(n=24, identical=True, seed=0):
    """Windows whose target is 300 + 20 * dx, dx being the x offset channel."""
    rng = np.random.default_rng(seed)
    shape = (EDGE, EDGE, EDGE)
    inputs = np.zeros((n, N_INPUT) + shape, dtype=np.float32)
    targets = np.zeros((n,) + shape, dtype=np.float32)
    x = np.broadcast_to(np.arange(EDGE)[:, None, None], shape)
    for s in range(n):
        shift = 2 if identical else int(rng.integers(-3, 4))
        dx = shift - x
        inputs[s, Channel.T_in] = 400.0
        inputs[s, Channel.rho_act] = 1.0
        inputs[s, Channel.power] = 1.0
        inputs[s, Channel.dx] = dx
        inputs[s, Channel.d_conv] = 3.0
        inputs[s, Channel.d_dirichlet] = 6.0
        targets[s] = 300.0 + 20.0 * dx
    return WindowDataset(
        inputs=inputs,
        targets=targets,
        masks=np.ones((n,) + shape, dtype=bool),
        anchors=np.zeros((n, 3), dtype=np.int64),
        events=np.arange(n, dtype=np.int64),
        geometry_ids=np.zeros(n, dtype=np.int64),
        normalization=dict(NORM),
    )


def small_model(seed=0):
    return init_model(FnoHyperParams(d_a=N_INPUT, d_v=4, depth=1, modes=(2, 2, 2)), seed=seed)


def test_split_is_seeded_and_disjoint():
    train_idx, test_idx = split_indices(50, 0.1, seed=3)
    assert len(test_idx) == 5 and len(train_idx) == 45
    assert not set(train_idx) & set(test_idx)
    again = split_indices(50, 0.1, seed=3)
    np.testing.assert_array_equal(again[1], test_idx)
    with pytest.raises(TrainingError):
        split_indices(1, 0.1)


def test_normalization_round_trip():
    norm = Normalization.from_mapping(NORM)
    assert norm.span == 1725.0
    assert norm.decode_temperature(np.array([0.0, 1.0])).tolist() == [25.0, 1750.0]
    encoded = norm.encode_inputs(synthetic_dataset(2).inputs)
    assert encoded[0, Channel.T_in, 0, 0, 0] == pytest.approx(375.0 / 1725.0)
    assert encoded[0, Channel.d_conv, 0, 0, 0] == pytest.approx(0.6)
    with pytest.raises(TrainingError):
        Normalization.from_mapping({"ambient_T": 25.0})
    with pytest.raises(TrainingError):
        Normalization.from_mapping({"ambient_T": 25.0, "activation_T": 25.0, "distance_scale": 1})


def test_loss_matches_window_nl2():
    rng = np.random.default_rng(0)
    truth = rng.uniform(100.0, 900.0, size=(3, EDGE, EDGE, EDGE))
    pred = truth + rng.normal(scale=5.0, size=truth.shape)
    masks = rng.random(truth.shape) > 0.3
    loss, grad = nl2_loss_grad(pred, truth, masks, span=1725.0)
    expected = np.mean([nl2(p, t, m) for p, t, m in zip(pred, truth, masks)])
    assert loss == pytest.approx(expected, rel=1e-12)
    assert grad.shape == (3, 1, EDGE, EDGE, EDGE)
    assert np.all(grad[:, 0][~masks] == 0)
    with pytest.raises(TrainingError):
        nl2_loss_grad(pred, np.zeros_like(truth), masks, span=1725.0)


def test_training_memorises_identical_windows():
    dataset = synthetic_dataset(24, identical=True)
    result = train(small_model(), dataset, epochs=100, batch_size=4, lr=5e-3)
    history = result.history
    assert len(history) == 100
    assert all(np.isfinite(row.loss) for row in history)
    assert history[-1].test_nl2 < 0.25 * history[0].train_nl2
    assert history[-1].train_mse < history[0].train_mse
    assert result.settings["train_windows"] + result.settings["test_windows"] == 24


def test_training_is_reproducible():
    dataset = synthetic_dataset(20, identical=False, seed=1)
    first = train(small_model(4), dataset, epochs=3, batch_size=4, split_seed=2)
    second = train(small_model(4), dataset, epochs=3, batch_size=4, split_seed=2)
    assert first.history == second.history
    for name, value in first.model.params.items():
        np.testing.assert_array_equal(value, second.model.params[name])


def test_training_rejects_degenerate_input():
    with pytest.raises(TrainingError):
        train(small_model(), WindowDataset.empty(EDGE), epochs=1)
    with pytest.raises(TrainingError):
        train(small_model(), synthetic_dataset(1), epochs=1)
    bare = synthetic_dataset(4)
    bare.normalization = {}
    with pytest.raises(TrainingError):
        train(small_model(), bare, epochs=1)


def test_evaluate_reports_worst_windows():
    dataset = synthetic_dataset(12, identical=False, seed=2)
    evaluation = evaluate(small_model(1), dataset, k=4)
    assert evaluation.predictions.shape == dataset.targets.shape
    assert len(evaluation.scores) == 12
    worst = [r2 for _, r2 in evaluation.report.worst]
    assert len(worst) == 4 and worst == sorted(worst)
    assert evaluation.report.worst[0][0] in dataset.window_ids()


def test_checkpoint_round_trip(tmp_path):
    model = small_model(6)
    norm = Normalization.from_mapping(NORM)
    path = save_checkpoint(model, tmp_path / "model.fno", norm, {"epochs": 3})
    assert path.read_bytes()[:8] == b"FNOCKPT1"
    loaded = load_checkpoint(path)
    assert loaded.model.hyper == model.hyper
    assert loaded.normalization == norm
    assert loaded.training == {"epochs": 3}
    for name, value in model.params.items():
        np.testing.assert_array_equal(loaded.model.params[name], value)
    payload = np.frombuffer(path.read_bytes(), dtype="<f8", offset=36)
    np.testing.assert_array_equal(payload, flatten_params(model.params))
    spectral = loaded.model.params["layer0.R"]
    assert spectral.dtype == np.complex128 and spectral.flags.writeable
    dataset = synthetic_dataset(3)
    np.testing.assert_array_equal(
        predict(loaded.model, dataset, loaded.normalization),
        predict(model, dataset, norm),
    )


def test_corrupted_checkpoints(tmp_path):
    path = save_checkpoint(small_model(), tmp_path / "m.fno", Normalization())
    raw = path.read_bytes()
    (tmp_path / "short.fno").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "short.fno")
    (tmp_path / "magic.fno").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "magic.fno")
