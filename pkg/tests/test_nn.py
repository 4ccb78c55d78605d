import numpy as np
import pytest

from hemslab.errors import NonFiniteLoss, NonScalarLoss
from hemslab.nn import (
    AdamState,
    BiLstmParams,
    LstmCellParams,
    adam_step,
    backend,
    bilstm_forward,
    checkpoint,
    clip_global_norm,
    lstm_forward,
)
from hemslab.nn import tape as tp

# Central finite differences drive every gradient check here. The relative
# error uses a small absolute floor so that coordinates whose true gradient
# is at roundoff scale (~1e-8) do not dominate the comparison.
FD_EPS = 1e-5
REL_TOL = 1e-4
REL_FLOOR = 1e-6


def rel_err(fd: float, g: float) -> float:
    return abs(fd - g) / max(abs(fd), abs(g), REL_FLOOR)


def check_grads(build_loss, params: dict[str, tp.Tensor], tol: float = REL_TOL):
    """build_loss() -> scalar Tensor referencing the given params."""
    loss = build_loss()
    tp.backward(loss)
    grads = {k: t.grad.copy() for k, t in params.items()}
    worst = 0.0
    for name, t in params.items():
        flat = t.value.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + FD_EPS
            hi = float(build_loss().value)
            flat[i] = keep - FD_EPS
            lo = float(build_loss().value)
            flat[i] = keep
            fd = (hi - lo) / (2 * FD_EPS)
            worst = max(worst, rel_err(fd, gflat[i]))
    assert worst < tol, f"worst relative gradient error {worst:.3e}"
    return worst


def seeded_params(rng, shapes: dict[str, tuple]) -> dict[str, tp.Tensor]:
    return {k: tp.param(rng.normal(size=s) * 0.5) for k, s in shapes.items()}


# ------------------------------------------------------- elementwise ops

@pytest.mark.parametrize("seed", range(5))
def test_grad_elementwise_chain(seed):
    rng = np.random.default_rng(seed)
    P = seeded_params(rng, {"a": (7,), "b": (7,)})

    def loss():
        x = tp.mul(tp.tanh(P["a"]), tp.sigmoid(P["b"]))
        y = tp.add(x, tp.scale(tp.sub(P["a"], P["b"]), 0.3))
        return tp.sum_all(y)

    check_grads(loss, P)


@pytest.mark.parametrize("seed", range(5))
def test_grad_matmul_variants(seed):
    rng = np.random.default_rng(100 + seed)
    P = seeded_params(rng, {"M": (4, 3), "v": (3,), "N": (3, 4)})

    def loss():
        mv = tp.matmul(P["M"], P["v"])           # 2D @ 1D
        mm = tp.matmul(P["M"], P["N"])           # 2D @ 2D
        vm = tp.matmul(P["v"], P["N"])           # 1D @ 2D
        return tp.add(tp.sum_all(mv), tp.add(tp.sum_all(mm), tp.sum_all(vm)))

    check_grads(loss, P)


@pytest.mark.parametrize("seed", range(4))
def test_grad_structural_ops(seed):
    rng = np.random.default_rng(200 + seed)
    P = seeded_params(rng, {"a": (6,), "b": (4,), "M": (5, 3)})

    def loss():
        c = tp.concat([P["a"], P["b"]])
        s = tp.slice1d(c, 2, 8)
        r = tp.row(P["M"], 1)
        col = tp.column(P["M"], 2)
        stacked = tp.stack_rows([tp.slice1d(c, 0, 3), tp.slice1d(c, 3, 6)])
        return tp.add(tp.sum_all(stacked), tp.add(tp.sum_all(tp.tanh(s)),
                                                  tp.add(tp.sum_all(r), tp.sum_all(col))))

    check_grads(loss, P)


@pytest.mark.parametrize("seed", range(4))
def test_grad_losses_and_embedding(seed):
    rng = np.random.default_rng(300 + seed)
    P = seeded_params(rng, {"pred": (6,), "logits": (5,), "emb": (7, 3)})
    target = rng.normal(size=6)
    label = int(rng.integers(5))
    idx = int(rng.integers(7))

    def loss():
        l1 = tp.mse_loss(P["pred"], target)
        l2 = tp.softmax_cross_entropy(P["logits"], label)
        l3 = tp.sum_all(tp.embedding_row(P["emb"], idx))
        return tp.weighted_sum([(0.5, l1), (1.0, l2), (0.25, l3)])

    check_grads(loss, P)


# ------------------------------------------------------------ LSTM ops

@pytest.mark.parametrize("seed", range(6))
def test_grad_lstm_seq_fused(seed):
    rng = np.random.default_rng(400 + seed)
    T, D, H = 5, 3, 4
    P = {
        "x": tp.param(rng.normal(size=(T, D)) * 0.5),
        "h0": tp.param(rng.normal(size=H) * 0.5),
        "c0": tp.param(rng.normal(size=H) * 0.5),
        "W": tp.param(rng.normal(size=(4 * H, D)) * 0.4),
        "U": tp.param(rng.normal(size=(4 * H, H)) * 0.4),
        "b": tp.param(rng.normal(size=4 * H) * 0.4),
    }
    target = rng.normal(size=(T, H))

    def loss():
        hs = tp.lstm_seq(P["x"], P["h0"], P["c0"], P["W"], P["U"], P["b"])
        return tp.mse_loss(hs, target)

    check_grads(loss, P)


@pytest.mark.parametrize("seed", range(4))
def test_grad_lstm_cell_carries_cell_state(seed):
    rng = np.random.default_rng(500 + seed)
    D, H = 3, 4
    P = {
        "x": tp.param(rng.normal(size=D) * 0.5),
        "h0": tp.param(rng.normal(size=H) * 0.5),
        "c0": tp.param(rng.normal(size=H) * 0.5),
        "W": tp.param(rng.normal(size=(4 * H, D)) * 0.4),
        "U": tp.param(rng.normal(size=(4 * H, H)) * 0.4),
        "b": tp.param(rng.normal(size=4 * H) * 0.4),
    }
    target = rng.normal(size=H)

    def loss():
        # two chained cells so the c-path gradient is exercised
        hc1 = tp.lstm_cell(P["x"], P["h0"], P["c0"], P["W"], P["U"], P["b"])
        h1, c1 = tp.slice1d(hc1, 0, 4), tp.slice1d(hc1, 4, 8)
        hc2 = tp.lstm_cell(P["x"], h1, c1, P["W"], P["U"], P["b"])
        return tp.mse_loss(tp.slice1d(hc2, 0, 4), target)

    check_grads(loss, P)


def test_backward_rejects_nonscalar_and_nonfinite():
    t = tp.param(np.ones(3))
    with pytest.raises(NonScalarLoss):
        tp.backward(t)
    bad = tp.param(np.array(np.inf))
    with pytest.raises(NonFiniteLoss):
        tp.backward(bad)


def test_grad_accumulates_over_shared_subexpression():
    a = tp.param(np.array([2.0]))
    y = tp.add(a, a)
    tp.backward(tp.sum_all(y))
    np.testing.assert_allclose(a.grad, [2.0])


# ----------------------------------------------------- backend equivalence

def test_backends_agree_bitwise():
    from hemslab.nn import _lstm_numpy

    rng = np.random.default_rng(0)
    T, D, H = 10, 4, 6
    args = (rng.normal(size=(T, D)), rng.normal(size=H), rng.normal(size=H),
            rng.normal(size=(4 * H, D)) * 0.3, rng.normal(size=(4 * H, H)) * 0.3,
            rng.normal(size=4 * H) * 0.3)
    hs_a, cs_a, g_a = backend.lstm_seq_forward(*args)
    hs_b, cs_b, g_b = _lstm_numpy.lstm_seq_forward(*args)
    np.testing.assert_allclose(hs_a, hs_b, atol=1e-14)
    np.testing.assert_allclose(cs_a, cs_b, atol=1e-14)

    d_hs = rng.normal(size=(T, H))
    dc = rng.normal(size=H)
    out_a = backend.lstm_seq_backward(d_hs, dc, *args[:5], hs_a, cs_a, g_a)
    out_b = _lstm_numpy.lstm_seq_backward(d_hs, dc, *args[:5], hs_b, cs_b, g_b)
    for x, y in zip(out_a, out_b):
        np.testing.assert_allclose(x, y, atol=1e-12)


# ------------------------------------------------------ layer level LSTM

def test_lstm_params_init_properties():
    p = LstmCellParams.init(np.random.default_rng(0), input_dim=5, hidden_dim=7)
    assert p.W.shape == (28, 5) and p.U.shape == (28, 7) and p.b.shape == (28,)
    np.testing.assert_allclose(p.b_f, 1.0)  # forget gate bias starts open
    bound = 1.0 / np.sqrt(5)
    assert np.abs(p.W).max() <= bound + 1e-12


def test_bilstm_reverses_second_direction():
    rng = np.random.default_rng(3)
    T, D, H = 6, 2, 3
    params = BiLstmParams.init(rng, D, H)
    x = rng.normal(size=(T, D))
    states, summary = bilstm_forward(params, x)
    # backward-direction slice at t equals a forward run over reversed input
    hs_rev, (h_last, _) = lstm_forward(params.backward, x[::-1])
    np.testing.assert_allclose(states[0, H:], hs_rev[T - 1], atol=1e-14)
    np.testing.assert_allclose(states[:, :H],
                               lstm_forward(params.forward, x)[0], atol=1e-14)
    np.testing.assert_allclose(summary[H:], h_last, atol=1e-14)
    assert summary.shape == (2 * H,)


def test_lstm_forward_matches_backend():
    rng = np.random.default_rng(4)
    T, D, H = 8, 3, 5
    p = LstmCellParams.init(rng, D, H)
    x = rng.normal(size=(T, D))
    hs, _, _ = backend.lstm_seq_forward(x, np.zeros(H), np.zeros(H), p.W, p.U, p.b)
    hs_t, (h_T, c_T) = lstm_forward(p, x)
    np.testing.assert_allclose(hs_t, hs, atol=1e-12)
    np.testing.assert_allclose(h_T, hs[-1], atol=1e-12)


# --------------------------------------------------------------- optimizer

def test_adam_converges_on_quadratic_bowl():
    params = {"w": np.array([5.0, -3.0])}
    state = AdamState(lr=0.1)
    for _ in range(600):
        grads = {"w": 2.0 * params["w"]}
        adam_step(state, params, grads)
    assert np.abs(params["w"]).max() < 1e-3


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([0.0, 4.0])}
    clipped = clip_global_norm(grads, max_norm=1.0)
    total = np.sqrt(sum(np.sum(g * g) for g in clipped.values()))
    assert total == pytest.approx(1.0, rel=1e-12)
    # direction preserved
    np.testing.assert_allclose(clipped["a"] / clipped["a"][0],
                               grads["a"] / grads["a"][0])
    small = {"a": np.array([0.1])}
    assert clip_global_norm(small, 1.0)["a"][0] == pytest.approx(0.1)


# -------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(9)
    arrays = {
        "w1": rng.normal(size=(3, 4)),
        "scalar_ish": np.array([np.pi]),
        "deep": rng.normal(size=(2, 3, 4)),
    }
    path = tmp_path / "ck.bin"
    checkpoint.save_arrays(path, arrays)
    back = checkpoint.load_arrays(path)
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()
    assert path.read_bytes()[:8] == checkpoint.MAGIC


def test_checkpoint_save_deterministic(tmp_path):
    arrays = {"b": np.arange(3.0), "a": np.ones((2, 2))}
    p1, p2 = tmp_path / "1.bin", tmp_path / "2.bin"
    checkpoint.save_arrays(p1, arrays)
    checkpoint.save_arrays(p2, dict(reversed(list(arrays.items()))))
    assert p1.read_bytes() == p2.read_bytes()
