import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from biact import tensornet as tn
from biact.errors import DimensionError, FormatError, UnsupportedVersionError, UsageError
from biact.tensornet import Tensor


def leaf(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def check_grads(build, *arrays, tol=1e-6):
    """Compare backprop of ``sum(build(*leaves) * probe)`` with central differences."""
    leaves = [leaf(a) for a in arrays]
    probe = np.random.default_rng(0).normal(size=build(*leaves).shape)

    def f():
        return float((build(*leaves).data * probe).sum())

    out = build(*leaves)
    tn.backward(tn.tsum(tn.mul(out, probe)))
    for t in leaves:
        num = numeric_grad(f, t.data)
        np.testing.assert_allclose(t.grad, num, rtol=tol, atol=tol)


def test_softmax_constant_vector():
    for n in (1, 3, 7):
        y = tn.softmax(Tensor(np.full((2, n), 3.7)), axis=-1).data
        np.testing.assert_allclose(y, 1.0 / n)


def test_kl_standard_normal_is_zero():
    assert float(tn.kl_gaussian(Tensor(np.zeros((4, 16))), Tensor(np.zeros((4, 16)))).data) == 0.0


def test_matmul_hand_computed():
    a = Tensor(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    b = Tensor(np.array([[7.0, 8.0], [9.0, 10.0], [11.0, 12.0]]))
    np.testing.assert_array_equal(tn.matmul(a, b).data, [[58.0, 64.0], [139.0, 154.0]])


def identity_attention_params(d):
    p = {}
    for nm in "qkvo":
        p["a.w" + nm] = Tensor(np.eye(d))
        p["a.b" + nm] = Tensor(np.zeros(d))
    return p


def test_attention_single_key_returns_value():
    p = identity_attention_params(4)
    q = Tensor(np.array([[[0.3, -1.0, 2.0, 0.5]]]))
    v = Tensor(np.array([[[9.0, 8.0, 7.0, 6.0]]]))
    out = tn.multihead_attention(q, q, v, p, "a.", 2)
    np.testing.assert_allclose(out.data, v.data)


@given(seed=st.integers(0, 10 ** 6))
def test_attention_key_value_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    d = 8
    p = {k: Tensor(rng.normal(size=(d, d)) if ".w" in k else rng.normal(size=d)) for k in
         [f"a.{t}{n}" for t in "wb" for n in "qkvo"]}
    q, k, v = (Tensor(rng.normal(size=(1, n, d))) for n in (3, 5, 5))
    perm = rng.permutation(5)
    a = tn.multihead_attention(q, k, v, p, "a.", 2).data
    b = tn.multihead_attention(q, Tensor(k.data[:, perm]), Tensor(v.data[:, perm]), p, "a.", 2).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_attention_two_tokens_scalar_oracle():
    p = identity_attention_params(2)
    q = np.array([0.5, -0.2])
    k = np.array([[1.0, 0.0], [0.3, 2.0]])
    v = np.array([[1.0, -1.0], [4.0, 2.0]])
    s1 = (q[0] * k[0, 0] + q[1] * k[0, 1]) / np.sqrt(2)
    s2 = (q[0] * k[1, 0] + q[1] * k[1, 1]) / np.sqrt(2)
    w1 = np.exp(s1) / (np.exp(s1) + np.exp(s2))
    expect = w1 * v[0] + (1 - w1) * v[1]
    out = tn.multihead_attention(Tensor(q[None, None]), Tensor(k[None]), Tensor(v[None]), p, "a.", 1)
    np.testing.assert_allclose(out.data[0, 0], expect, rtol=1e-12)


def test_sinusoidal_2d_properties():
    e = tn.sinusoidal_embed_2d(4, 5, 16, np.float64)
    assert e.shape == (20, 16)
    half = 8
    for part in (e[0, :half], e[0, half:]):
        np.testing.assert_array_equal(part[:half // 2], 0.0)
        np.testing.assert_array_equal(part[half // 2:], 1.0)
    d = np.linalg.norm(e[:, None, :] - e[None, :, :], axis=-1)
    assert d[~np.eye(20, dtype=bool)].min() > 1e-3


def test_square_gradient():
    x = leaf(3.0)
    tn.backward(tn.mul(x, x))
    assert float(x.grad) == 6.0


def test_adam_zero_gradient_is_noop():
    store = tn.ParamStore(np.float64)
    t = store.add("w", np.arange(6.0).reshape(2, 3))
    before = t.data.copy()
    t.grad = np.zeros_like(t.data)
    tn.adam_step(store, lr=0.1)
    np.testing.assert_array_equal(t.data, before)


def test_backward_twice_doubles_leaf_gradients():
    x = leaf([1.0, -2.0, 0.5])
    y = tn.tsum(tn.mul(tn.relu(x), x))
    tn.backward(y)
    g1 = x.grad.copy()
    tn.backward(y)
    np.testing.assert_array_equal(x.grad, 2 * g1)


def test_backward_needs_scalar():
    with pytest.raises(UsageError):
        tn.backward(leaf([1.0, 2.0]))


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho, wo = (h + 2 * pad - kh) // stride + 1, (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for bi in range(n):
        for oc in range(o):
            for i in range(ho):
                for j in range(wo):
                    out[bi, oc, i, j] = (xp[bi, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                                         * w[oc]).sum() + b[oc]
    return out


@given(stride=st.sampled_from([1, 2]), pad=st.sampled_from([0, 1]), seed=st.integers(0, 1000))
def test_conv2d_matches_loop_oracle(stride, pad, seed):
    rng = np.random.default_rng(seed)
    x, w, b = rng.normal(size=(2, 3, 6, 5)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    out = tn.conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=pad).data
    np.testing.assert_allclose(out, naive_conv(x, w, b, stride, pad), atol=1e-12)


def test_op_gradients(rng):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5))
    check_grads(tn.matmul, a, b)
    check_grads(lambda x: tn.softmax(x, axis=-1), rng.normal(size=(3, 5)))
    check_grads(lambda x, g, bb: tn.layer_norm(x, g, bb), rng.normal(size=(3, 6)), rng.normal(size=6),
                rng.normal(size=6))
    check_grads(lambda x, w, bb: tn.conv2d(x, w, bb, stride=2, padding=1), rng.normal(size=(1, 2, 5, 5)),
                rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3))
    check_grads(lambda x, y: tn.concat([x, y], axis=1), rng.normal(size=(2, 3)), rng.normal(size=(2, 2)))
    check_grads(lambda x: x[:, 1:3], rng.normal(size=(2, 4)))
    check_grads(lambda x: tn.mean(x, axis=0), rng.normal(size=(3, 2)))
    check_grads(lambda x, y: tn.mul(tn.add(x, y), tn.exp(y)), rng.normal(size=(2, 3)), rng.normal(size=3))
    check_grads(lambda x: tn.relu(x).reshape(6).transpose(0), rng.normal(size=(2, 3)) + 0.05)


def test_loss_gradients(rng):
    pred, target = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    check_grads(lambda p: tn.l1_loss(p, target), pred)
    check_grads(lambda m, lv: tn.kl_gaussian(m, lv), rng.normal(size=(2, 3)), rng.normal(size=(2, 3)))


def test_shape_errors():
    with pytest.raises(DimensionError):
        tn.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(DimensionError):
        tn.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(DimensionError):
        tn.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


def test_weights_round_trip_and_truncation(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.float32([1.5]), "s": np.float32(2.0)}
    path = tn.save_weights(tmp_path / "w.biwt", {"k": "20"}, arrays)
    cfg, back = tn.load_weights(path)
    assert cfg == {"k": "20"} and list(back) == list(arrays)
    for k in arrays:
        assert back[k].tobytes() == np.asarray(arrays[k]).tobytes()
    data = path.read_bytes()
    for cut in range(len(data)):
        with pytest.raises(FormatError):
            tn.decode_weights(data[:cut])
    bumped = bytearray(data)
    bumped[4] = 99
    with pytest.raises(UnsupportedVersionError):
        tn.decode_weights(bytes(bumped))
