import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wgsr.dataset import PlateauSpec, make_label
from wgsr.estimators import OracleLocator
from wgsr.imaging import SearchGrid
from wgsr.nn import DivergenceError, NetworkConfig, init_params
from wgsr.physics import SourceConfig
from wgsr.pipeline import (TrainConfig, evaluate_loss, extract_sources, mean_filter,
                           min_distance_sweep, noise_sweep, recovery_rate, subset_rate,
                           train_network)

GRID = SearchGrid(0.0, 19.0, 0.0, 14.0, 20, 15)  # 1 m pixels


def on_grid(*pixels):
    return SourceConfig(tuple((float(ix), float(iy)) for ix, iy in pixels))


# mean filter

def test_mean_filter_constant_interior():
    out = mean_filter(np.full((6, 5), 0.7))
    np.testing.assert_allclose(out[1:-1, 1:-1], 0.7, rtol=1e-15)
    assert out[0, 0] == pytest.approx(0.7 * 4 / 9)


def test_mean_filter_impulse():
    img = np.zeros((7, 7))
    img[3, 3] = 1.0
    out = mean_filter(img, 3)
    assert np.count_nonzero(out) == 9
    np.testing.assert_allclose(out[2:5, 2:5], 1 / 9, rtol=1e-15)


def test_mean_filter_peak_on_plateau():
    label = make_label(on_grid((5, 5)), GRID).astype(float)
    out = mean_filter(label, 3)
    assert out[5, 5] == 1.0
    mask = np.ones_like(out, dtype=bool)
    mask[5, 5] = False
    assert out[mask].max() < 1.0


def test_mean_filter_batched_and_even_rejected():
    imgs = np.random.default_rng(0).uniform(size=(3, 6, 5))
    out = mean_filter(imgs)
    for q in range(3):
        np.testing.assert_array_equal(out[q], mean_filter(imgs[q]))
    with pytest.raises(ValueError):
        mean_filter(imgs[0], 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([1, 3, 5]))
def test_mean_filter_mass(seed, n_p):
    rng = np.random.default_rng(seed)
    img = rng.uniform(size=(9, 8))
    assert mean_filter(img, n_p).sum() <= img.sum() + 1e-12
    inner = np.zeros((9, 8))
    p = n_p // 2
    inner[p:9 - p, p:8 - p] = img[p:9 - p, p:8 - p]
    assert mean_filter(inner, n_p).sum() == pytest.approx(inner.sum(), rel=1e-12)


# peak extraction

def test_extract_single_label():
    label = make_label(on_grid((4, 9)), GRID)
    assert extract_sources(label) == {(4, 9)}


def test_extract_flat_half_image():
    assert extract_sources(np.full((6, 5), 0.5)) == set()


def test_extract_two_plateaus_five_apart():
    label = make_label(on_grid((5, 5), (10, 5)), GRID)
    assert extract_sources(label) == {(5, 5), (10, 5)}


def test_extract_misses_clipped_corner_plateau():
    label = make_label(on_grid((0, 0)), GRID)
    assert mean_filter(label)[0, 0] == pytest.approx(4 / 9)
    assert extract_sources(label) == set()


def test_extract_threshold_validated():
    with pytest.raises(ValueError):
        extract_sources(np.zeros((3, 3)), threshold=1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_extract_recovers_separated_labels(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 6))
    chosen = []
    for _ in range(200):
        # plateaus must fit inside the grid: a clipped one never averages to 1
        cand = (int(rng.integers(1, GRID.n_x - 1)), int(rng.integers(1, GRID.n_y - 1)))
        # separation > N_p pixels along at least one axis keeps plateaus apart
        if all(max(abs(cand[0] - a), abs(cand[1] - b)) > 3 for a, b in chosen):
            chosen.append(cand)
        if len(chosen) == n:
            break
    label = make_label(on_grid(*chosen), GRID)
    assert extract_sources(label, 3, 1 - 1e-9) == set(chosen)


# recovery metric

def test_recovery_examples():
    truth = [{(1, 1), (5, 5)}, {(9, 3)}]
    assert recovery_rate(truth, truth).recovery_rate == 1.0
    assert recovery_rate([set(), set()], truth).recovery_rate == 0.0
    rep = recovery_rate([{(1, 1), (5, 5)}, {(9, 4)}], truth)
    assert rep.recovery_rate == pytest.approx(2 / 3)
    assert (rep.n_recovered, rep.n_sources, rep.n_spurious) == (2, 3, 1)
    with pytest.raises(ValueError):
        recovery_rate([set()], truth)


def test_recovery_with_source_configs_and_order_invariance():
    cfgs = [on_grid((1, 1), (5, 5)), on_grid((9, 3)), on_grid((2, 2))]
    preds = [{(1, 1)}, {(9, 3), (0, 0)}, set()]
    rep = recovery_rate(preds, cfgs, GRID)
    assert rep.recovery_rate == pytest.approx(2 / 4)
    perm = [2, 0, 1]
    rep2 = recovery_rate([preds[i] for i in perm], [cfgs[i] for i in perm], GRID)
    assert rep2.recovery_rate == rep.recovery_rate and rep2.n_spurious == rep.n_spurious == 1


def test_min_distance_sweep():
    cfgs = [on_grid((0, 0), (3, 4)),          # 5 m
            on_grid((0, 0), (0, 10), (0, 13)),  # 3 m
            on_grid((7, 7)),                  # single source, skipped
            on_grid((0, 0), (10, 0))]         # 10 m
    perfect = [set(recovery_rate([set()], [c], GRID).per_sample and
                   {(int(x), int(y)) for x, y in c}) for c in cfgs]
    rows = min_distance_sweep(perfect, cfgs, GRID, (0.0, 4.0, 8.0, math.inf))
    assert [(r["lo"], r["n_samples"], r["n_sources"], r["rate"]) for r in rows] == [
        (0.0, 1, 3, 1.0), (4.0, 1, 2, 1.0), (8.0, 1, 2, 1.0)]
    # all in one bin -> overall rate over multi-source samples
    preds = [{(0, 0)}, {(0, 0), (0, 10), (0, 13)}, set(), set()]
    one = min_distance_sweep(preds, cfgs, GRID, (0.0, math.inf))
    multi = [0, 1, 3]
    overall = recovery_rate([preds[i] for i in multi], [cfgs[i] for i in multi], GRID).recovery_rate
    assert len(one) == 1 and one[0]["rate"] == pytest.approx(overall)
    # empty bins are absent
    assert [r["lo"] for r in min_distance_sweep(preds, cfgs, GRID, (0.0, 4.0, 100.0, 200.0))] == [0.0, 4.0]
    assert subset_rate(preds, cfgs, GRID, 6.0) == pytest.approx(4 / 5)
    assert subset_rate(preds, [on_grid((1, 1))] * 4, GRID, 6.0) is None


def test_noise_sweep_oracle_flat():
    cfgs = [on_grid((3, 3)), on_grid((10, 4), (15, 10))]
    labels = np.stack([make_label(c, GRID) for c in cfgs]).astype(float)
    oracle = OracleLocator(labels)
    X = np.ones((2, 4, 3), dtype=complex)
    rows = noise_sweep(oracle.predict, X, cfgs, GRID, "gaussian", [1e-4, 1e-2, 1.0, 10.0])
    assert [r["snr_db"] for r in rows] == [40.0, 20.0, 0.0, -10.0]
    assert all(r["rate"] == 1.0 for r in rows)
    rows = noise_sweep(oracle.predict, X, cfgs, GRID, "uniform", [0.0, 0.5])
    assert rows[0]["rate"] == 1.0 and rows[0]["snr_db"] is None


def test_noise_sweep_zero_equals_clean_and_deterministic():
    seen = []

    def predict(X):
        seen.append(np.array(X))
        return [set() for _ in X]

    X = np.random.default_rng(1).normal(size=(3, 4, 2)) + 0j
    cfgs = [on_grid((1, 1))] * 3
    noise_sweep(predict, X, cfgs, GRID, "gaussian", [0.0, 0.1])
    noise_sweep(predict, X, cfgs, GRID, "gaussian", [0.1])
    np.testing.assert_array_equal(seen[0], X)
    np.testing.assert_array_equal(seen[1], seen[2])
    assert not np.array_equal(seen[1], X)


# training loop

def toy_problem(n=12, seed=0):
    rng = np.random.default_rng(seed)
    cfg = NetworkConfig((4, 3), (6, 5), n_channels=2, n_conv_layers=1)
    X = rng.normal(size=(n, 4, 3)) + 1j * rng.normal(size=(n, 4, 3))
    Y = (rng.uniform(size=(n, 6, 5)) < 0.2).astype(float)
    return cfg, X, Y


def test_train_one_epoch_toy():
    cfg, X, Y = toy_problem(2)
    res = train_network(init_params(cfg), cfg, X, Y, X, Y, TrainConfig(epochs=1, loss_mode="nll_only"))
    assert len(res.train_loss) == len(res.val_loss) == 1 and res.best_epoch == 1


def test_train_deterministic_and_input_untouched():
    cfg, X, Y = toy_problem()
    p0 = init_params(cfg, 3)
    snapshot = {k: v.copy() for k, v in p0.items()}
    tcfg = TrainConfig(epochs=4, batch_size=4, loss_mode="nll_only", seed=7)
    a = train_network(p0, cfg, X[:8], Y[:8], X[8:], Y[8:], tcfg)
    b = train_network(p0, cfg, X[:8], Y[:8], X[8:], Y[8:], tcfg)
    assert a.val_loss == b.val_loss and a.train_loss == b.train_loss
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert all(np.array_equal(p0[k], snapshot[k]) for k in p0)


def test_train_returns_best_checkpoint():
    cfg, X, Y = toy_problem(16, seed=2)
    tcfg = TrainConfig(epochs=30, batch_size=4, loss_mode="nll_only", patience=3, learning_rate=0.05)
    res = train_network(init_params(cfg), cfg, X[:8], Y[:8], X[8:], Y[8:], tcfg)
    assert res.val_loss[res.best_epoch - 1] == min(res.val_loss)
    assert evaluate_loss(res.params, cfg, X[8:], Y[8:], tcfg) == pytest.approx(min(res.val_loss), rel=1e-12)
    if res.stopped_early:
        assert len(res.val_loss) - res.best_epoch == 3


def test_train_divergence_raises():
    cfg, X, Y = toy_problem(4)
    params = init_params(cfg)
    params["dense_w"][:] = np.inf
    with pytest.raises(DivergenceError):
        train_network(params, cfg, X, Y, X, Y, TrainConfig(epochs=1, loss_mode="nll_only"))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(loss_mode="pi_only")
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    assert TrainConfig(loss_mode="nll_only").effective_weights == (1.0, 0.0)
    cfg, X, Y = toy_problem(2)
    with pytest.raises(ValueError):
        train_network(init_params(cfg), cfg, X, Y, X, Y, TrainConfig(loss_mode="nll_plus_pi"), op=None)


def test_plateau_spec_default():
    assert PlateauSpec().size == 3
