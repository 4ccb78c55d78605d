import numpy as np
import pytest

from hemslab import synth
from hemslab.data import (
    NormalizationParams,
    SplitSpec,
    fit_normalization,
    make_windows,
    normalize,
)
from hemslab.errors import ShapeMismatch
from hemslab.seq2seq import (
    LstmBaselineForecaster,
    ModelConfig,
    Seq2SeqForecaster,
    TrainConfig,
    persistence_predict,
    pooled_wmape,
)

N, M = 12, 3
CH = ("a", "b")


def tiny_norm(channels=CH):
    C = len(channels)
    return NormalizationParams(
        channel_names=tuple(channels),
        vmin=np.zeros(C),
        vmax=np.full(C, 1000.0),
    )


def tiny_config(**kw):
    defaults = dict(channels=CH, history_len=N, horizon_len=M,
                    encoder_hidden=5, decoder_hidden=6, dow_embed_dim=2)
    defaults.update(kw)
    return ModelConfig(**defaults)


def rand_window(rng, n=N, C=len(CH)):
    return rng.uniform(0, 1, size=(n, C))


# ----------------------------------------------------------- construction

def test_parameter_shapes():
    model = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=0)
    p = model.params
    assert p["enc_f_W"].value.shape == (20, 2)      # 4H x C
    assert p["dec_W"].value.shape == (24, 2)
    assert p["type_W"].value.shape == (N, 2)
    assert p["dow_embed"].value.shape == (7, 2)
    assert p["bridge_dec_h0_W"].value.shape == (12, 6)  # (2E + de) x Hd


def test_norm_channel_mismatch_rejected():
    with pytest.raises(ShapeMismatch):
        Seq2SeqForecaster(tiny_config(), tiny_norm(("x", "y")), seed=0)


def test_init_deterministic_per_seed():
    a = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=3)
    b = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=3)
    c = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=4)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].value, b.params[k].value)
    assert any(
        not np.array_equal(a.params[k].value, c.params[k].value) for k in a.params
    )


# --------------------------------------------------------------- forward

def test_reconstruction_is_reversed():
    """Step t of the decoder is scored against window[n-1-t]."""
    rng = np.random.default_rng(0)
    model = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=0)
    window = rand_window(rng)
    states = model.encode(window, 0)
    _, _, rev = model.decode_reconstruct(states, window)
    np.testing.assert_array_equal(rev, window[::-1])


def test_forecast_shape_and_clamp():
    rng = np.random.default_rng(1)
    model = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=0)
    windows = np.stack([rand_window(rng) for _ in range(3)])
    out = model.predict(windows, np.zeros(3, dtype=int))
    assert out.shape == (3, M, 2)
    assert np.all(out >= 0.0)


def test_encode_rejects_bad_shape():
    model = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=0)
    with pytest.raises(ShapeMismatch):
        model.encode(np.zeros((N + 1, 2)), 0)


def test_day_of_week_changes_output():
    rng = np.random.default_rng(2)
    model = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=0)
    w = rand_window(rng)
    a = model.generate_forecast(model.encode(w, 0)).value
    b = model.generate_forecast(model.encode(w, 5)).value
    assert not np.array_equal(a, b)


def test_forward_deterministic():
    rng = np.random.default_rng(3)
    model = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=0)
    w = rand_window(rng)[None]
    np.testing.assert_array_equal(model.predict(w, np.array([2])),
                                  model.predict(w, np.array([2])))


def test_channel_permutation_consistency_at_init():
    """Permuting input channels with a matching config permutes nothing
    structural: predictions through a permuted model match the permuted
    predictions of the original when the weights are permuted to match.
    A lighter proxy: losses on a window and its channel-permuted copy with
    permuted params are identical for the persistence baseline."""
    rng = np.random.default_rng(4)
    w = rand_window(rng)
    perm = [1, 0]
    np.testing.assert_array_equal(
        persistence_predict(w[:, perm], M), persistence_predict(w, M)[:, perm]
    )


# ---------------------------------------------------------------- losses

def test_window_loss_parts_nonnegative():
    rng = np.random.default_rng(5)
    model = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=0)
    total, parts = model.window_loss(rand_window(rng), 0,
                                     rng.uniform(0, 1, (M, 2)), TrainConfig())
    assert parts["recon"] >= 0 and parts["forecast"] >= 0 and parts["type"] >= 0
    expect = 0.5 * parts["recon"] + 0.1 * parts["type"] + 1.0 * parts["forecast"]
    assert float(total.value) == pytest.approx(expect, rel=1e-12)


def test_pooled_wmape():
    a = np.array([[1.0, 3.0]])
    p = np.array([[2.0, 3.0]])
    assert pooled_wmape(a, p) == pytest.approx(0.25)
    assert pooled_wmape(np.zeros((2, 2)), np.ones((2, 2))) == pytest.approx(4.0)


# --------------------------------------------------------------- training

def _datasets(num_days=10, n=N, m=M, seed=0):
    frame = synth.generate(num_days, seed=seed)
    frame = type(frame)(frame.channels[:], frame.timestamps, frame.values,
                        frame.imputed)
    split = SplitSpec(0.7, 0.2, 0.1)
    from hemslab.data import partition_indices

    train_idx, _, _ = partition_indices(split, frame.num_steps)
    norm = fit_normalization(frame, train_idx)
    return (*make_windows(normalize(frame, norm), n, m, split), norm)


def test_training_restores_best_epoch_weights():
    train, val, _, norm = _datasets()
    cfg = ModelConfig(channels=tuple(norm.channel_names), history_len=N,
                      horizon_len=M, encoder_hidden=6, decoder_hidden=8,
                      dow_embed_dim=2)
    model = Seq2SeqForecaster(cfg, norm, seed=0)
    tc = TrainConfig(epochs=4, batch_size=8, lr=3e-3, seed=0,
                     windows_per_epoch=80, val_windows=60)
    trace = model.train(train, val, tc)
    assert 1 <= len(trace) <= 4
    # after training the weights are those of the best validation epoch,
    # so recomputing on the same subset reproduces the trace minimum
    from hemslab.data import denormalize_values

    rng = np.random.default_rng(tc.seed)
    val_idx = np.sort(rng.choice(val.num_windows, tc.val_windows, replace=False))
    actual = denormalize_values(val.targets[val_idx], norm)
    pred = model.predict(val.inputs[val_idx], val.day_of_week[val_idx])
    best = min(e["val_wmape"] for e in trace)
    assert pooled_wmape(actual, pred) == pytest.approx(best, rel=1e-9)


def test_training_deterministic():
    train, val, _, norm = _datasets(num_days=6)
    cfg = ModelConfig(channels=tuple(norm.channel_names), history_len=N,
                      horizon_len=M, encoder_hidden=4, decoder_hidden=5,
                      dow_embed_dim=2)
    tc = TrainConfig(epochs=2, batch_size=8, lr=1e-3, seed=1,
                     windows_per_epoch=40, val_windows=30)
    m1 = Seq2SeqForecaster(cfg, norm, seed=1)
    m1.train(train, val, tc)
    m2 = Seq2SeqForecaster(cfg, norm, seed=1)
    m2.train(train, val, tc)
    for k in m1.params:
        np.testing.assert_array_equal(m1.params[k].value, m2.params[k].value)


def test_zero_epochs_leaves_params_untouched():
    train, val, _, norm = _datasets(num_days=6)
    cfg = ModelConfig(channels=tuple(norm.channel_names), history_len=N,
                      horizon_len=M, encoder_hidden=4, decoder_hidden=5,
                      dow_embed_dim=2)
    model = Seq2SeqForecaster(cfg, norm, seed=2)
    before = {k: t.value.copy() for k, t in model.params.items()}
    model.train(train, val, TrainConfig(epochs=0, seed=2))
    for k, t in model.params.items():
        np.testing.assert_array_equal(t.value, before[k])


def test_type_head_learns_channel_identity():
    """After a short training run the stream classifier beats chance."""
    train, val, _, norm = _datasets(num_days=12)
    cfg = ModelConfig(channels=tuple(norm.channel_names), history_len=N,
                      horizon_len=M, encoder_hidden=6, decoder_hidden=8,
                      dow_embed_dim=2)
    model = Seq2SeqForecaster(cfg, norm, seed=0)
    model.train(train, val, TrainConfig(
        epochs=3, batch_size=8, lr=3e-3, seed=0, lambda_type=1.0,
        windows_per_epoch=100, val_windows=40,
    ))
    sel = np.arange(0, val.num_windows, max(val.num_windows // 20, 1))
    acc = model.type_accuracy(val.inputs[sel], val.day_of_week[sel])
    assert acc > 1.0 / len(norm.channel_names)


# -------------------------------------------------------------- baselines

def test_persistence_repeats_last_row():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = persistence_predict(w, 3)
    np.testing.assert_array_equal(out, np.tile([3.0, 4.0], (3, 1)))


def test_lstm_baseline_shapes_and_determinism():
    rng = np.random.default_rng(6)
    model = LstmBaselineForecaster(tiny_config(), tiny_norm(), seed=0)
    w = np.stack([rand_window(rng) for _ in range(2)])
    out = model.predict(w, np.array([0, 3]))
    assert out.shape == (2, M, 2)
    np.testing.assert_array_equal(out, model.predict(w, np.array([0, 3])))


# ------------------------------------------------------------ round trips

def test_seq2seq_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    model = Seq2SeqForecaster(tiny_config(), tiny_norm(), seed=0)
    path = tmp_path / "m.ckpt"
    model.save(path)
    back = Seq2SeqForecaster.load(path)
    w = rand_window(rng)[None]
    np.testing.assert_array_equal(model.predict(w, np.array([1])),
                                  back.predict(w, np.array([1])))


def test_lstm_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    model = LstmBaselineForecaster(tiny_config(), tiny_norm(), seed=0)
    path = tmp_path / "m.ckpt"
    model.save(path)
    back = LstmBaselineForecaster.load(path)
    w = rand_window(rng)[None]
    np.testing.assert_array_equal(model.predict(w, np.array([1])),
                                  back.predict(w, np.array([1])))
