import math

import numpy as np
import pytest

from radtag import nnkernel as nk

RNG = np.random.default_rng(1234)


def scalar_params():
    return {
        "Wx": np.array([[0.5, -0.3, 0.8, 0.1]]),
        "Wh": np.array([[0.2, 0.4, -0.6, 0.3]]),
        "b": np.array([0.1, 1.0, 0.0, -0.2]),
        "peep": np.array([[0.05], [-0.1], [0.2]]),
    }


def random_lstm(d, k, peephole=True, scale=0.5):
    p = nk.init_lstm(RNG, d, k, peephole)
    return {key: v + RNG.normal(0, scale, v.shape) for key, v in p.items()}


def test_zero_params_fixed_point():
    p = {"Wx": np.zeros((3, 16)), "Wh": np.zeros((4, 16)), "b": np.zeros(16), "peep": np.zeros((3, 4))}
    h, c = nk.lstm_cell_step(p, np.zeros(3), np.zeros(4), np.zeros(4))
    assert np.all(h == 0) and np.all(c == 0)


def test_scalar_hand_trace():
    # Frozen from a plain-math evaluation of the peephole cell equations.
    h, c = nk.lstm_cell_step(scalar_params(), np.array([1.5]), np.array([0.3]), np.array([-0.4]))
    assert h[0] == pytest.approx(0.14179536054377193, rel=1e-12)
    assert c[0] == pytest.approx(0.27759035756979394, rel=1e-12)


def test_cell_shape_mismatch():
    with pytest.raises(ValueError):
        nk.lstm_cell_step(scalar_params(), np.zeros(2), np.zeros(1), np.zeros(1))


def test_cell_gradient_finite_differences():
    d, k = 3, 4
    p = random_lstm(d, k)
    x, h0, c0 = RNG.normal(size=d), RNG.normal(size=k), RNG.normal(size=k)
    wh = RNG.normal(size=k)

    def f_h(q):
        return float(wh @ nk.lstm_cell_step(q, x, h0, c0)[0])

    H, cache = nk.lstm_layer_forward(p, x[None], h0=h0, c0=c0)
    _, grads = nk.lstm_layer_backward(cache, wh[None])
    rep = nk.grad_check(f_h, p, grads, tolerance=1e-5)
    assert rep.passed, rep.max_rel_error


def test_layer_n1_equals_cell():
    p = random_lstm(3, 4)
    x = RNG.normal(size=(1, 3))
    H, _ = nk.lstm_layer_forward(p, x)
    h, _ = nk.lstm_cell_step(p, x[0], np.zeros(4), np.zeros(4))
    assert np.allclose(H[0], h)


def test_layer_all_masked():
    p = random_lstm(3, 4)
    H, _, (h, c) = nk.lstm_layer_forward(p, RNG.normal(size=(5, 3)), np.zeros(5, bool), return_state=True)
    assert np.all(H == 0) and np.all(h == 0) and np.all(c == 0)


def test_reverse_of_palindrome():
    p = random_lstm(3, 4)
    half = RNG.normal(size=(3, 3))
    x = np.concatenate([half, half[::-1]])
    Hf, _ = nk.lstm_layer_forward(p, x)
    Hb, _ = nk.lstm_layer_forward(p, x, reverse=True)
    assert np.allclose(Hb, Hf[::-1])


def test_masked_inputs_do_not_matter():
    p = random_lstm(3, 4)
    x = RNG.normal(size=(6, 3))
    mask = np.array([1, 1, 0, 1, 0, 1], bool)
    y = x.copy()
    y[~mask] = RNG.normal(size=(2, 3)) * 100
    for rev in (False, True):
        assert np.array_equal(nk.lstm_layer_forward(p, x, mask, rev)[0], nk.lstm_layer_forward(p, y, mask, rev)[0])


@pytest.mark.parametrize("reverse", [False, True])
@pytest.mark.parametrize("peephole", [False, True])
def test_layer_gradient(reverse, peephole):
    p = random_lstm(3, 4, peephole)
    x = RNG.normal(size=(2, 5, 3))
    mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], bool)
    R = RNG.normal(size=(2, 5, 4))

    def f(q, xx=x):
        return float(np.sum(R * nk.lstm_layer_forward(q, xx, mask, reverse)[0]))

    _, cache = nk.lstm_layer_forward(p, x, mask, reverse)
    dx, grads = nk.lstm_layer_backward(cache, R)
    rep = nk.grad_check(f, p, grads)
    assert rep.passed, rep.max_rel_error
    num_dx = nk.numeric_gradient(lambda: f(p, x), x)
    assert nk.relative_error(dx, num_dx) < 1e-4


def test_softmax_uniform():
    loss, _ = nk.softmax_xent(np.zeros(5), 2)
    assert loss == pytest.approx(math.log(5), abs=1e-12)


def test_softmax_stable():
    loss, grad = nk.softmax_xent(np.array([1000.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.isfinite(grad))


def test_softmax_bad_target():
    with pytest.raises(IndexError):
        nk.softmax_xent(np.zeros(3), 3)


def test_softmax_xent_gradient():
    z = RNG.normal(size=5)
    _, g = nk.softmax_xent(z, 1)
    num = nk.numeric_gradient(lambda: nk.softmax_xent(z, 1)[0], z)
    assert nk.relative_error(g, num) < 1e-6


def test_softmax_sums_to_one():
    p = nk.softmax(RNG.normal(size=(7, 5)) * 10)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(-1), 1, atol=1e-9)


def test_nesterov_zero_momentum_is_sgd():
    opt = nk.NesterovSGD(0.1, 0.0, None)
    p = {"a": np.array([1.0, -2.0])}
    opt.step(p, {"a": np.array([0.5, 0.5])})
    assert np.allclose(p["a"], [0.95, -2.05])


def test_nesterov_two_step_trace():
    opt = nk.NesterovSGD(0.1, 0.9, None)
    p = {"t": np.array([1.0])}
    opt.step(p, {"t": 2 * p["t"]})
    assert p["t"][0] == pytest.approx(0.62)
    opt.step(p, {"t": 2 * p["t"]})
    assert p["t"][0] == pytest.approx(0.2224)


def test_clipping_scales_by_half():
    g = {"a": np.array([6.0, 8.0])}
    clipped, scale = nk.clip_by_global_norm(g, 5.0)
    assert scale == pytest.approx(0.5)
    assert np.allclose(clipped["a"], [3.0, 4.0])
    opt = nk.NesterovSGD(1.0, 0.0, 5.0)
    p = {"a": np.zeros(2)}
    opt.step(p, g)
    assert np.allclose(p["a"], [-3.0, -4.0])


def test_clipping_preserves_direction():
    g = {"a": RNG.normal(size=4), "b": RNG.normal(size=(2, 2))}
    c, _ = nk.clip_by_global_norm(g, 0.1)
    ratios = np.concatenate([(c[k] / g[k]).ravel() for k in g])
    assert np.all(ratios > 0) and np.allclose(ratios, ratios[0])


def test_nonfinite_gradient_named():
    opt = nk.NesterovSGD()
    with pytest.raises(FloatingPointError, match="bad"):
        opt.step({"bad": np.zeros(2)}, {"bad": np.array([np.nan, 0.0])})


def test_optimizer_rejects_bad_config():
    with pytest.raises(ValueError):
        nk.NesterovSGD(learning_rate=0.0)
    with pytest.raises(ValueError):
        nk.NesterovSGD(momentum=1.0)


def test_adagrad_first_step():
    opt = nk.AdaGrad(0.1)
    p = {"a": np.array([1.0, 1.0])}
    opt.step(p, {"a": np.array([3.0, -0.2])})
    assert np.allclose(p["a"], [0.9, 1.1], atol=1e-6)


def test_adagrad_constant_gradient_decay():
    opt = nk.AdaGrad(0.1, eps=0.0)
    p = {"a": np.array([0.0])}
    prev = 0.0
    for t in range(1, 6):
        opt.step(p, {"a": np.array([2.0])})
        assert prev - p["a"][0] == pytest.approx(0.1 / math.sqrt(t))
        prev = p["a"][0]


def test_adagrad_zero_grad():
    opt = nk.AdaGrad(0.1)
    p = {"a": np.array([1.0])}
    opt.step(p, {"a": np.array([0.0])})
    assert p["a"][0] == 1.0
    assert np.all(opt.accumulators["a"] >= 0)


def test_grad_check_quadratic():
    A = RNG.normal(size=(4, 4))
    A = A @ A.T
    p = {"x": RNG.normal(size=4)}
    rep = nk.grad_check(lambda q: float(q["x"] @ A @ q["x"]), p, {"x": 2 * A @ p["x"]}, 1e-8)
    assert rep.passed


def test_grad_check_negative_control():
    p = {"x": RNG.normal(size=4)}
    rep = nk.grad_check(lambda q: float(np.sum(q["x"] ** 2)), p, {"x": 2 * p["x"] + 0.1}, 1e-4)
    assert not rep.passed and rep.worst > 1e-4


def test_checkpoint_round_trip(tmp_path):
    t = {"b": RNG.normal(size=(2, 3)), "a": np.arange(4.0)}
    nk.save_checkpoint(tmp_path / "c.bin", t, {"note": "x"})
    back, meta = nk.load_checkpoint(tmp_path / "c.bin")
    assert meta == {"note": "x"}
    assert all(np.array_equal(back[k], t[k]) for k in t)
    nk.save_checkpoint(tmp_path / "d.bin", dict(reversed(list(t.items()))), {"note": "x"})
    assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(ValueError):
        nk.load_checkpoint(tmp_path / "x")
