import numpy as np
import pytest

from maginet import autodiff as ad
from maginet import data, training
from maginet.errors import ContractError, EmptyMaskError, NumericError
from maginet.model import MagiNet, ModelConfig


def tiny_setup(n=4, width=8, steps=64, seed=1, ratio=0.4):
    graph = data.synthetic_graph(n, extra_edges=1, seed=seed)
    series = data.generate_synthetic(n, steps, graph, seed=seed, period=16)
    windows = data.window(series, width, width, ratio=ratio, seed=seed)
    train_ws, valid_ws, test_ws = data.split(windows, (0.7, 0.2, 0.1))
    config = ModelConfig(d=4, heads=2, head_dim=2, spatial_dim=3, cheb_order=2,
                         kernel_sizes=(3,), blocks=1)
    model = MagiNet(config, graph, width=width, n_features=1, seed=seed)
    return model, train_ws, valid_ws, test_ws


# ---------------------------------------------------------------- loss


def test_loss_zero_when_exact():
    xhat = ad.constant(np.full((2, 3, 1), 4.0))
    loss = training.masked_l1_loss(xhat, np.full((2, 3, 1), 4.0), np.ones((2, 3)))
    assert loss.item() == 0.0


def test_loss_single_held_out_scalar():
    # one held-out position with |error| = 2 gives loss 2
    xhat = ad.constant(np.array([[[3.0], [9.0]]]))
    truth = np.array([[[1.0], [0.0]]])
    mask = np.array([[1.0, 0.0]])
    assert training.masked_l1_loss(xhat, truth, mask).item() == 2.0


def test_loss_two_held_out_scalars_hand_mean():
    # errors 1 and 3 average to 2
    xhat = ad.constant(np.array([[[2.0], [5.0]]]))
    truth = np.array([[[1.0], [2.0]]])
    mask = np.array([[1.0, 1.0]])
    assert training.masked_l1_loss(xhat, truth, mask).item() == 2.0


def test_loss_ignores_positions_outside_mask():
    rng = np.random.default_rng(0)
    truth = rng.uniform(0, 5, (3, 4, 2))
    mask = np.zeros((3, 4))
    mask[1, 2] = 1.0
    base = rng.uniform(0, 5, (3, 4, 2))
    a = training.masked_l1_loss(ad.constant(base), truth, mask).item()
    fuzzed = base + rng.uniform(-9, 9, base.shape) * (mask[:, :, None] == 0.0)
    b = training.masked_l1_loss(ad.constant(fuzzed), truth, mask).item()
    assert a == b


def test_loss_empty_mask_raises():
    with pytest.raises(EmptyMaskError):
        training.masked_l1_loss(ad.constant(np.zeros((1, 2, 1))), np.zeros((1, 2, 1)), np.zeros((1, 2)))


def test_loss_gradient_matches_finite_differences():
    from maginet.gradcheck import check_gradients

    rng = np.random.default_rng(5)
    xhat = ad.parameter(rng.uniform(0, 4, (2, 4, 2)))
    truth = rng.uniform(0, 4, (2, 4, 2))
    mask = (rng.random((2, 4)) < 0.6).astype(float)
    mask[0, 0] = 1.0
    errors = check_gradients(lambda: training.masked_l1_loss(xhat, truth, mask), {"xhat": xhat})
    assert max(errors.values()) < 1e-4


# ---------------------------------------------------------------- adam


def test_adam_first_step_moves_by_lr():
    theta = ad.parameter(0.0)
    theta.grad = np.array(1.0)
    opt = training.Adam({"theta": theta}, lr=0.01)
    opt.step()
    assert abs(float(theta.data) + 0.01) < 1e-9  # -lr within eps slack
    assert theta.grad is None  # zeroed afterward


def test_adam_zero_gradient_keeps_parameter():
    theta = ad.parameter(1.5)
    theta.grad = np.array(0.0)
    opt = training.Adam({"theta": theta}, lr=0.1)
    for _ in range(5):
        theta.grad = np.array(0.0)
        opt.step()
    assert float(theta.data) == 1.5


def test_adam_first_step_descends_for_any_gradient_sign():
    for g in (3.0, -0.25, 1e-6):
        theta = ad.parameter(0.0)
        theta.grad = np.array(g)
        training.Adam({"theta": theta}, lr=0.05).step()
        assert np.sign(float(theta.data)) == -np.sign(g)


def test_adam_nan_gradient_names_parameter():
    theta = ad.parameter(0.0)
    theta.grad = np.array(np.nan)
    opt = training.Adam({"bad_param": theta}, lr=0.1)
    with pytest.raises(NumericError) as err:
        opt.step()
    assert "bad_param" in str(err.value)


def test_adam_clipping_bounds_global_norm():
    a, b = ad.parameter(0.0), ad.parameter(0.0)
    a.grad, b.grad = np.array(30.0), np.array(40.0)  # norm 50
    opt = training.Adam({"a": a, "b": b}, lr=1.0, clip=5.0)
    opt.step()
    # after clipping, grads were (3, 4); adam normalizes magnitude to ~lr
    assert float(a.data) < 0 and float(b.data) < 0


# ---------------------------------------------------------------- train loop


def test_train_lr_zero_keeps_parameters():
    model, train_ws, valid_ws, _ = tiny_setup()
    before = model.params.state()
    cfg = training.TrainConfig(learning_rate=0.0, epochs=3, batch_size=4, patience=10, seed=2)
    training.train_model(model, train_ws, valid_ws, cfg)
    after = model.params.state()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_train_single_window_memorization():
    # overfit sanity: loss on one window must drop below 10% of epoch 1
    model, train_ws, valid_ws, _ = tiny_setup(seed=3)
    cfg = training.TrainConfig(learning_rate=5e-3, epochs=500, batch_size=1, patience=500, seed=3)
    result = training.train_model(model, train_ws[:1], valid_ws[:1], cfg)
    first = result.history[0]["train_loss"]
    best = min(h["train_loss"] for h in result.history)
    assert best < 0.1 * first


def test_train_seed_determinism_epoch1():
    losses = []
    for _ in range(2):
        model, train_ws, valid_ws, _ = tiny_setup(seed=4)
        cfg = training.TrainConfig(learning_rate=1e-3, epochs=1, batch_size=4, seed=4)
        result = training.train_model(model, train_ws, valid_ws, cfg)
        losses.append(result.history[0]["train_loss"])
    assert losses[0] == losses[1]


def test_train_best_checkpoint_is_minimum_of_history():
    model, train_ws, valid_ws, _ = tiny_setup(seed=5)
    cfg = training.TrainConfig(learning_rate=3e-3, epochs=12, batch_size=4, patience=12, seed=5)
    result = training.train_model(model, train_ws, valid_ws, cfg)
    column = [h["val_rmse"] for h in result.history]
    assert result.best_val_rmse == min(column)
    assert result.history[result.best_epoch - 1]["val_rmse"] == result.best_val_rmse


def test_train_early_stopping_respects_patience():
    model, train_ws, valid_ws, _ = tiny_setup(seed=6)
    cfg = training.TrainConfig(learning_rate=0.0, epochs=50, batch_size=4, patience=2, seed=6)
    result = training.train_model(model, train_ws, valid_ws, cfg)
    # lr=0 never improves after epoch 1, so the loop stops at patience+2
    assert result.epochs_run == 4


def test_train_divergence_keeps_last_good_state():
    model, train_ws, valid_ws, _ = tiny_setup(seed=7)
    cfg = training.TrainConfig(learning_rate=1e-3, epochs=10, batch_size=4, patience=10, seed=7)
    real_forward = model.forward
    calls = {"n": 0}
    epoch_calls = len(train_ws) + len(valid_ws)  # training + validation forwards

    def flaky_forward(x, m, internals=None):
        calls["n"] += 1
        out = real_forward(x, m, internals)
        if calls["n"] > epoch_calls:  # epoch 2 onward produces NaN
            out.data = np.full_like(out.data, np.nan)
        return out

    model.forward = flaky_forward
    result = training.train_model(model, train_ws, valid_ws, cfg)
    assert result.diverged
    assert len(result.history) == 1  # only epoch 1 completed
    assert all(np.isfinite(v).all() for v in result.best_state.values())


def test_train_rejects_empty_split():
    model, train_ws, _, _ = tiny_setup()
    with pytest.raises(ContractError):
        training.train_model(model, train_ws, [], training.TrainConfig(epochs=1))
