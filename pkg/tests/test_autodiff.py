import numpy as np
import pytest

import multires_routing.autodiff as ad

EPS_SET = (1e-6, 1e-5, 1e-4)


def assert_grads_match_fd(build, leaves, rtol=1e-5, atol=1e-8):
    """Backprop build() and compare each leaf gradient against central
    differences, taking the best estimate over a small step-size ladder."""
    for leaf in leaves:
        leaf.grad = None
    with ad.Tape() as tape:
        loss = build()
        tape.backward(loss)
    analytic = []
    for leaf in leaves:
        assert leaf.grad is not None, "leaf never received a gradient"
        analytic.append(np.array(leaf.grad, copy=True))
    for leaf, an in zip(leaves, analytic):
        arr = leaf.data
        assert an.shape == arr.shape
        for idx in np.ndindex(arr.shape):
            best = np.inf
            orig = arr[idx]
            for eps in EPS_SET:
                arr[idx] = orig + eps
                hi = build().item()
                arr[idx] = orig - eps
                lo = build().item()
                arr[idx] = orig
                best = min(best, abs((hi - lo) / (2.0 * eps) - an[idx]))
            assert best <= rtol * abs(an[idx]) + atol, (
                f"grad mismatch at {idx}: analytic {an[idx]}, fd err {best}"
            )


# ---------------------------------------------------------------------------
# tape mechanics


def test_ops_outside_tape_do_not_record():
    x = ad.parameter(np.ones((2, 2)))
    y = ad.mul(x, x)
    assert not y.requires_grad and y._backward is None


def test_tape_records_only_grad_paths():
    x = ad.Tensor(np.ones(3))  # requires_grad=False
    with ad.Tape() as tape:
        y = ad.exp(x)
    assert not y.requires_grad and tape.nodes == []


def test_no_grad_suspends_recording():
    x = ad.parameter(np.ones(3))
    with ad.Tape() as tape:
        with ad.no_grad():
            frozen = ad.exp(x)
        live = ad.sum(ad.mul(x, x))
        tape.backward(live)
    assert not frozen.requires_grad
    assert np.allclose(x.grad, 2.0 * np.ones(3))


def test_backward_rejects_nonscalar_and_reruns():
    x = ad.parameter(np.ones(3))
    with ad.Tape() as tape:
        y = ad.mul(x, x)
        with pytest.raises(ValueError):
            tape.backward(y)
        loss = ad.sum(y)
        tape.backward(loss)
        with pytest.raises(RuntimeError):
            tape.backward(loss)


def test_reused_tensor_accumulates_gradient():
    x = ad.parameter(np.array([1.5, -2.0, 0.5]))
    with ad.Tape() as tape:
        loss = ad.sum(ad.add(ad.mul(x, x), x))
        tape.backward(loss)
    assert np.allclose(x.grad, 2.0 * x.data + 1.0, atol=1e-15)


def test_parameter_initialization():
    rng = np.random.default_rng(0)
    p = ad.parameter((3, 4), rng)
    assert p.shape == (3, 4) and p.requires_grad
    assert np.all(np.abs(p.data) <= 0.5)  # default scale 1/sqrt(4)
    q = ad.parameter((100,), rng, scale=0.01)
    assert np.all(np.abs(q.data) <= 0.01)
    r = ad.parameter(np.arange(3.0))
    assert np.array_equal(r.data, [0.0, 1.0, 2.0])


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def test_sum_of_product_gradient_is_other_factor():
    rng = np.random.default_rng(1)
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.Tensor(rng.normal(size=(3, 4)))
    with ad.Tape() as tape:
        tape.backward(ad.sum(ad.mul(a, b)))
    assert np.array_equal(a.grad, b.data)


def test_elementwise_forward_values():
    x = np.array([-1.0, 0.0, 2.0])
    assert np.array_equal(ad.relu(x).data, [0.0, 0.0, 2.0])
    assert np.array_equal(ad.exp(x).data, np.exp(x))
    assert np.array_equal(ad.tanh(x).data, np.tanh(x))
    assert np.array_equal(ad.scale(x, -2.0).data, -2.0 * x)
    assert np.array_equal(ad.sub(x, 1.0).data, x - 1.0)


def test_elementwise_gradients():
    rng = np.random.default_rng(2)
    x = ad.parameter(rng.uniform(0.3, 2.0, size=(2, 3)))
    w = ad.Tensor(rng.normal(size=(2, 3)))

    def build():
        y = ad.add(ad.exp(ad.scale(x, 0.5)), ad.log(x))
        y = ad.mul(y, ad.tanh(x))
        return ad.sum(ad.mul(y, w))

    assert_grads_match_fd(build, [x])


def test_relu_gradient_masks_negative_side():
    x = ad.parameter(np.array([-1.0, 2.0, -0.5, 3.0]))
    with ad.Tape() as tape:
        tape.backward(ad.sum(ad.relu(x)))
    assert np.array_equal(x.grad, [0.0, 1.0, 0.0, 1.0])


def test_broadcast_add_mul_gradients():
    rng = np.random.default_rng(3)
    a = ad.parameter(rng.normal(size=(3, 1)))
    b = ad.parameter(rng.normal(size=(1, 4)))
    c = ad.parameter(rng.normal(size=(4,)))
    w = ad.Tensor(rng.normal(size=(3, 4)))

    def build():
        return ad.sum(ad.mul(ad.add(ad.mul(a, b), c), w))

    assert_grads_match_fd(build, [a, b, c])
    assert a.grad.shape == (3, 1) and b.grad.shape == (1, 4) and c.grad.shape == (4,)


def test_sum_and_mean_axes():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 3, 4))
    assert np.allclose(ad.sum(x, axis=1).data, x.sum(axis=1))
    assert np.allclose(ad.mean(x, axis=(0, 2), keepdims=True).data, x.mean(axis=(0, 2), keepdims=True))
    p = ad.parameter(x)
    w = ad.Tensor(rng.normal(size=(2, 4)))

    def build():
        return ad.sum(ad.mul(ad.mean(p, axis=1), w))

    assert_grads_match_fd(build, [p])


def test_matmul_shapes_and_gradients():
    rng = np.random.default_rng(5)
    with pytest.raises(ad.ShapeError):
        ad.matmul(np.ones((2, 3)), np.ones((4, 2)))
    # batched stack against batched stack
    a = ad.parameter(rng.normal(size=(2, 3, 4)))
    b = ad.parameter(rng.normal(size=(2, 4, 2)))
    assert np.allclose(ad.matmul(a, b).data, a.data @ b.data)
    w = ad.Tensor(rng.normal(size=(2, 3, 2)))

    def build():
        return ad.sum(ad.mul(ad.matmul(a, b), w))

    assert_grads_match_fd(build, [a, b])
    # batched activations against one shared weight matrix
    x = ad.parameter(rng.normal(size=(2, 3, 4)))
    m = ad.parameter(rng.normal(size=(4, 5)))
    assert np.allclose(ad.matmul(x, m).data, x.data @ m.data)
    w2 = ad.Tensor(rng.normal(size=(2, 3, 5)))

    def build2():
        return ad.sum(ad.mul(ad.matmul(x, m), w2))

    assert_grads_match_fd(build2, [x, m])


def test_concat_reshape_swapaxes_gradients():
    rng = np.random.default_rng(6)
    a = ad.parameter(rng.normal(size=(2, 3)))
    b = ad.parameter(rng.normal(size=(2, 2)))
    w = ad.Tensor(rng.normal(size=(5, 2)))

    def build():
        cat = ad.concat([a, b], axis=-1)  # (2, 5)
        flip = ad.swapaxes(cat, 0, 1)  # (5, 2)
        return ad.sum(ad.mul(ad.reshape(flip, (5, 2)), w))

    assert_grads_match_fd(build, [a, b])


def test_gather_rows_accumulates_repeats():
    a = ad.parameter(np.arange(12.0).reshape(4, 3))
    with ad.Tape() as tape:
        picked = ad.gather_rows(a, np.array([0, 0, 2]))
        tape.backward(ad.sum(picked))
    expected = np.zeros((4, 3))
    expected[0] = 2.0
    expected[2] = 1.0
    assert np.array_equal(a.grad, expected)
    with pytest.raises(ad.ShapeError):
        ad.gather_rows(np.ones((2, 2, 2)), [0])


def test_take_per_row_2d_and_3d():
    rng = np.random.default_rng(7)
    a2 = ad.parameter(rng.normal(size=(3, 4)))
    idx = np.array([1, 0, 3])
    with ad.Tape() as tape:
        out = ad.take_per_row(a2, idx)
        assert np.array_equal(out.data, a2.data[np.arange(3), idx])
        tape.backward(ad.sum(out))
    expected = np.zeros((3, 4))
    expected[np.arange(3), idx] = 1.0
    assert np.array_equal(a2.grad, expected)

    a3 = ad.parameter(rng.normal(size=(3, 4, 2)))
    w = ad.Tensor(rng.normal(size=(3, 2)))

    def build():
        return ad.sum(ad.mul(ad.take_per_row(a3, idx), w))

    assert_grads_match_fd(build, [a3])
    with pytest.raises(ad.ShapeError):
        ad.take_per_row(a2, np.array([0, 1]))


def test_rows_view_repeat0_add_n():
    rng = np.random.default_rng(8)
    x = ad.parameter(rng.normal(size=(6, 2)))
    w = ad.Tensor(rng.normal(size=(2, 2, 2)))
    y = ad.parameter(rng.normal(size=(2, 3)))
    wy = ad.Tensor(rng.normal(size=(6, 3)))

    def build():
        view = ad.rows_view(x, 1, 2, 2)  # rows 1..4 as (2, 2, 2)
        t1 = ad.sum(ad.mul(view, w))
        rep = ad.repeat0(y, 3)  # (6, 3)
        t2 = ad.sum(ad.mul(rep, wy))
        return ad.add(t1, t2)

    assert_grads_match_fd(build, [x, y])
    # rows outside the view get exactly zero gradient
    with ad.Tape() as tape:
        tape.backward(ad.sum(ad.rows_view(x, 1, 2, 2)))
    assert np.array_equal(x.grad[0], [0.0, 0.0]) and np.array_equal(x.grad[5], [0.0, 0.0])

    a = ad.parameter(rng.normal(size=(2, 2)))
    b = ad.parameter(rng.normal(size=(2, 2)))
    c = ad.parameter(rng.normal(size=(2, 2)))
    s = ad.add_n([a, b, c])
    assert np.allclose(s.data, a.data + b.data + c.data)
    with ad.Tape() as tape:
        tape.backward(ad.sum(ad.add_n([a, b, c])))
    for leaf in (a, b, c):
        assert np.array_equal(leaf.grad, np.ones((2, 2)))


# ---------------------------------------------------------------------------
# masked softmax


def test_masked_softmax_uniform_on_equal_logits():
    p = ad.masked_softmax(np.zeros((2, 3))).data
    assert np.all(p == 1.0 / 3.0)
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)


def test_masked_softmax_two_logit_oracle():
    # closed form for logits (5, 1): p = (1, e^-4) / (1 + e^-4)
    p = ad.masked_softmax(np.array([[5.0, 1.0]])).data[0]
    z = np.exp(-4.0)
    assert abs(p[0] - 1.0 / (1.0 + z)) < 1e-15
    assert abs(p[1] - z / (1.0 + z)) < 1e-15
    assert p[0] > 0.98 and p[1] < 0.02


def test_masked_softmax_exact_zeros_and_renormalization():
    logits = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 0.0]])
    mask = np.array([[False, True, False], [True, False, False]])
    p = ad.masked_softmax(logits, mask).data
    assert p[0, 1] == 0.0 and p[1, 0] == 0.0
    assert np.allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    # surviving entries renormalize among themselves
    z = np.exp(np.array([1.0, 3.0]))
    assert np.allclose(p[0, [0, 2]], z / z.sum(), atol=1e-15)
    assert np.all(p[1, 1:] == 0.5)


def test_masked_softmax_masked_gradients_are_zero():
    rng = np.random.default_rng(9)
    logits = ad.parameter(rng.normal(size=(2, 4)))
    mask = np.array([[False, True, False, False], [False, False, True, True]])
    w = ad.Tensor(rng.normal(size=(2, 4)))
    with ad.Tape() as tape:
        tape.backward(ad.sum(ad.mul(ad.masked_softmax(logits, mask), w)))
    assert logits.grad[0, 1] == 0.0
    assert logits.grad[1, 2] == 0.0 and logits.grad[1, 3] == 0.0

    def build():
        return ad.sum(ad.mul(ad.masked_softmax(logits, mask), w))

    assert_grads_match_fd(build, [logits])


def test_masked_softmax_errors():
    with pytest.raises(ad.MaskError):
        ad.masked_softmax(np.zeros((2, 3)), np.array([[True, True, True], [False, True, False]]))
    with pytest.raises(ad.ShapeError):
        ad.masked_softmax(np.zeros((2, 3)), np.zeros((3, 2), dtype=bool))


def test_masked_softmax_other_axis():
    rng = np.random.default_rng(10)
    x = rng.normal(size=(3, 2))
    p = ad.masked_softmax(x, axis=0).data
    assert np.allclose(p.sum(axis=0), 1.0, atol=1e-12)
    assert np.allclose(p, np.exp(x) / np.exp(x).sum(axis=0, keepdims=True), atol=1e-15)


# ---------------------------------------------------------------------------
# layer norm


def test_layer_norm_constant_rows_collapse_to_bias():
    gain = ad.Tensor(np.full(4, 1.7))
    bias = ad.Tensor(np.array([0.1, -0.2, 0.3, 0.0]))
    x = np.full((3, 4), 5.0)
    out = ad.layer_norm(x, gain, bias).data
    assert np.array_equal(out, np.broadcast_to(bias.data, (3, 4)))


def test_layer_norm_known_values():
    x = np.array([[1.0, 2.0, 3.0]])
    out = ad.layer_norm(x, np.ones(3), np.zeros(3)).data[0]
    inv = 1.0 / np.sqrt(2.0 / 3.0 + 1e-5)
    assert np.allclose(out, np.array([-1.0, 0.0, 1.0]) * inv, atol=1e-14)
    assert abs(out.mean()) < 1e-14
    assert abs(out @ out / 3.0 - 1.0) < 1e-4  # unit variance up to the eps guard


def test_layer_norm_gradients():
    rng = np.random.default_rng(11)
    x = ad.parameter(rng.normal(size=(2, 2, 5)))
    gain = ad.parameter(rng.uniform(0.5, 1.5, size=5))
    bias = ad.parameter(rng.normal(size=5))
    w = ad.Tensor(rng.normal(size=(2, 2, 5)))

    def build():
        return ad.sum(ad.mul(ad.layer_norm(x, gain, bias), w))

    assert_grads_match_fd(build, [x, gain, bias])
    with pytest.raises(ad.ShapeError):
        ad.layer_norm(np.ones((2, 5)), np.ones(4), np.ones(5))


# ---------------------------------------------------------------------------
# fused layers


def test_linear_matches_matmul_add():
    rng = np.random.default_rng(12)
    x = ad.parameter(rng.normal(size=(2, 3, 4)))
    w = ad.parameter(rng.normal(size=(4, 5)))
    b = ad.parameter(rng.normal(size=5))
    out = ad.linear(x, w, b)
    assert np.allclose(out.data, x.data @ w.data + b.data, atol=1e-15)
    wo = ad.Tensor(rng.normal(size=(2, 3, 5)))

    def build():
        return ad.sum(ad.mul(ad.linear(x, w, b), wo))

    assert_grads_match_fd(build, [x, w, b])
    with pytest.raises(ad.ShapeError):
        ad.linear(np.ones((2, 3)), np.ones((4, 5)))


def test_linear_relu_matches_composition():
    rng = np.random.default_rng(13)
    x = ad.parameter(rng.normal(size=(3, 4)))
    w = ad.parameter(rng.normal(size=(4, 6)))
    b = ad.parameter(rng.normal(size=6))
    fused = ad.linear_relu(x, w, b)
    assert np.array_equal(fused.data, np.maximum(x.data @ w.data + b.data, 0.0))
    wo = ad.Tensor(rng.normal(size=(3, 6)))

    def build():
        return ad.sum(ad.mul(ad.linear_relu(x, w, b), wo))

    assert_grads_match_fd(build, [x, w, b])


def test_log_pick():
    rng = np.random.default_rng(14)
    raw = rng.uniform(0.1, 1.0, size=(3, 4))
    probs = ad.parameter(raw / raw.sum(axis=1, keepdims=True))
    idx = np.array([2, 0, 1])
    out = ad.log_pick(probs, idx)
    assert np.allclose(out.data, np.log(probs.data[np.arange(3), idx]), atol=1e-15)

    def build():
        return ad.sum(ad.log_pick(probs, idx))

    assert_grads_match_fd(build, [probs])


# ---------------------------------------------------------------------------
# attention nodes


def ref_block_attention(qkv, bias, blocks, n_heads, head_dim):
    d = n_heads * head_dim
    out = np.empty((qkv.shape[0], d))
    for start, b, n, dstart in blocks:
        blk = qkv[start : start + b * n]
        q = blk[:, :d].reshape(b, n, n_heads, head_dim)
        k = blk[:, d : 2 * d].reshape(b, n, n_heads, head_dim)
        v = blk[:, 2 * d :].reshape(b, n, n_heads, head_dim)
        bi = bias[dstart : dstart + b * n * n].reshape(b, n, n, n_heads)
        o = np.empty((b, n, n_heads, head_dim))
        for g in range(b):
            for h in range(n_heads):
                s = q[g, :, h, :] @ k[g, :, h, :].T / np.sqrt(head_dim) + bi[g, :, :, h]
                e = np.exp(s - s.max(axis=1, keepdims=True))
                p = e / e.sum(axis=1, keepdims=True)
                o[g, :, h, :] = p @ v[g, :, h, :]
        out[start : start + b * n] = o.reshape(b * n, d)
    return out


def test_block_attention_matches_reference():
    rng = np.random.default_rng(15)
    n_heads, head_dim = 2, 3
    d = n_heads * head_dim
    blocks = [(0, 2, 3, 0), (6, 1, 4, 18)]  # two graphs of 3 nodes, one of 4
    rows = 2 * 3 + 1 * 4
    qkv = ad.parameter(rng.normal(size=(rows, 3 * d)))
    bias = ad.parameter(rng.normal(size=(2 * 9 + 16, n_heads)) * 0.5)
    out = ad.block_attention(qkv, bias, blocks, n_heads, head_dim)
    assert np.allclose(out.data, ref_block_attention(qkv.data, bias.data, blocks, n_heads, head_dim), atol=1e-13)
    w = ad.Tensor(rng.normal(size=(rows, d)))

    def build():
        return ad.sum(ad.mul(ad.block_attention(qkv, bias, blocks, n_heads, head_dim), w))

    assert_grads_match_fd(build, [qkv, bias], rtol=1e-4, atol=1e-7)


def test_mix_matrix_matches_einsum():
    rng = np.random.default_rng(16)
    w = ad.parameter(rng.normal(size=(4, 3)))
    kl = ad.parameter(rng.normal(size=(2, 5, 3)))
    out = ad.mix_matrix(w, kl)
    assert np.allclose(out.data, np.einsum("df,bnf->bdn", w.data, kl.data), atol=1e-14)
    wo = ad.Tensor(rng.normal(size=(2, 4, 5)))

    def build():
        return ad.sum(ad.mul(ad.mix_matrix(w, kl), wo))

    assert_grads_match_fd(build, [w, kl])


def ref_pointer_probs(q, keys, vals, m, mask, clip, inv_scale, n_heads, head_dim):
    b, n = mask.shape
    q3 = q.reshape(b, n_heads, head_dim)
    s = np.einsum("bhd,bhnd->bhn", q3, keys) / np.sqrt(head_dim)
    s = np.where(mask[:, None, :], -np.inf, s)
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    a = e / e.sum(axis=-1, keepdims=True)
    mix = np.einsum("bhn,bhnd->bhd", a, vals).reshape(b, -1)
    u = np.einsum("bd,bdn->bn", mix, m)
    live = ~mask
    u = u - np.where(live, u, 0.0).sum(axis=-1, keepdims=True) / live.sum(axis=-1, keepdims=True)
    x = np.where(mask, -np.inf, clip * np.tanh(u * inv_scale))
    e2 = np.exp(x - x.max(axis=-1, keepdims=True))
    return e2 / e2.sum(axis=-1, keepdims=True)


def test_pointer_probs_matches_reference():
    rng = np.random.default_rng(17)
    n_heads, head_dim, n, b = 2, 3, 4, 2
    d = n_heads * head_dim
    q = ad.parameter(rng.normal(size=(b, d)))
    keys = ad.parameter(rng.normal(size=(b, n_heads, n, head_dim)))
    vals = ad.parameter(rng.normal(size=(b, n_heads, n, head_dim)))
    m = ad.parameter(rng.normal(size=(b, d, n)))
    mask = np.array([[False, True, False, False], [False, False, False, True]])
    out = ad.pointer_probs(q, keys, vals, m, mask, 10.0, 1.0 / np.sqrt(d), n_heads, head_dim)
    ref = ref_pointer_probs(q.data, keys.data, vals.data, m.data, mask, 10.0, 1.0 / np.sqrt(d), n_heads, head_dim)
    assert np.allclose(out.data, ref, atol=1e-14)
    assert np.all(out.data[mask] == 0.0)
    assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-12)

    idx = np.array([2, 0])

    def build():
        p = ad.pointer_probs(q, keys, vals, m, mask, 10.0, 1.0 / np.sqrt(d), n_heads, head_dim)
        return ad.sum(ad.log_pick(p, idx))

    assert_grads_match_fd(build, [q, keys, vals, m], rtol=1e-4, atol=1e-7)


def test_pointer_probs_common_shift_invariant():
    # a vector added to every column of the pointer map shifts every score by
    # the same amount; the centered clip must leave probabilities and
    # gradients exactly as without the shift, however large it is
    rng = np.random.default_rng(23)
    n_heads, head_dim, n, b = 2, 3, 5, 2
    d = n_heads * head_dim
    q = ad.Tensor(rng.normal(size=(b, d)))
    keys = ad.Tensor(rng.normal(size=(b, n_heads, n, head_dim)))
    vals = ad.Tensor(rng.normal(size=(b, n_heads, n, head_dim)))
    base = rng.normal(size=(b, d, n))
    shift = 1e6 * rng.normal(size=(b, d, 1))
    mask = np.zeros((b, n), dtype=bool)
    mask[0, 3] = True
    idx = np.array([1, 4])
    outs = []
    grads = []
    for mdata in (base, base + shift):
        m = ad.Tensor(mdata.copy(), requires_grad=True)
        with ad.Tape() as tape:
            p = ad.pointer_probs(q, keys, vals, m, mask, 10.0, 1.0 / np.sqrt(d), n_heads, head_dim)
            loss = ad.sum(ad.log_pick(p, idx))
        tape.backward(loss)
        outs.append(p.data)
        grads.append(m.grad)
    assert np.allclose(outs[0], outs[1], atol=1e-9)
    assert np.allclose(grads[0], grads[1], atol=1e-9)


def test_pointer_probs_errors():
    n_heads, head_dim, n, b = 2, 2, 3, 2
    d = n_heads * head_dim
    q = np.zeros((b, d))
    keys = np.zeros((b, n_heads, n, head_dim))
    vals = np.zeros((b, n_heads, n, head_dim))
    m = np.zeros((b, d, n))
    with pytest.raises(ad.MaskError):
        ad.pointer_probs(q, keys, vals, m, np.ones((b, n), dtype=bool), 10.0, 0.5, n_heads, head_dim)
    with pytest.raises(ad.ShapeError):
        ad.pointer_probs(q, keys, vals, m, np.zeros((b, n + 1), dtype=bool), 10.0, 0.5, n_heads, head_dim)


# ---------------------------------------------------------------------------
# a small end-to-end network


def test_three_layer_mlp_gradients():
    rng = np.random.default_rng(18)
    x = ad.Tensor(rng.normal(size=(4, 3)))
    w1 = ad.parameter(rng.normal(size=(3, 8)) * 0.5)
    b1 = ad.parameter(np.zeros(8))
    w2 = ad.parameter(rng.normal(size=(8, 8)) * 0.5)
    b2 = ad.parameter(np.zeros(8))
    w3 = ad.parameter(rng.normal(size=(8, 1)) * 0.5)

    def build():
        h = ad.linear_relu(x, w1, b1)
        h = ad.tanh(ad.linear(h, w2, b2))
        return ad.mean(ad.linear(h, w3))

    with ad.Tape() as tape:
        tape.backward(build())
    for leaf in (w1, b1, w2, b2, w3):
        an = np.array(leaf.grad)
        arr = leaf.data
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            best = np.inf
            for eps in EPS_SET:
                arr[idx] = orig + eps
                hi = build().item()
                arr[idx] = orig - eps
                lo = build().item()
                arr[idx] = orig
                best = min(best, abs((hi - lo) / (2 * eps) - an[idx]))
            rel = best / (abs(an[idx]) + 1e-8)
            assert rel <= 1e-4


# ---------------------------------------------------------------------------
# optimizer


def test_adam_zero_gradient_leaves_params_unchanged():
    params = {"w": ad.parameter(np.array([1.0, -2.0, 3.0]))}
    state = ad.AdamState.for_params(params)
    before = params["w"].data.copy()
    ad.adam_step(params, {"w": np.zeros(3)}, state, lr=0.1)
    assert np.array_equal(params["w"].data, before)
    ad.adam_step(params, {}, state, lr=0.1)  # missing grad treated as zero
    assert np.array_equal(params["w"].data, before)
    assert state.t == 2


def test_adam_first_step_is_signed_lr():
    params = {"w": ad.parameter(np.array([1.0]))}
    state = ad.AdamState.for_params(params)
    ad.adam_step(params, {"w": np.array([0.5])}, state, lr=0.1)
    # bias correction makes the first update lr * g/(|g| + eps)
    expected = 1.0 - 0.1 * 0.5 / (np.sqrt(0.25) + 1e-8)
    assert abs(params["w"].data[0] - expected) < 1e-15
    assert abs(params["w"].data[0] - 0.9) < 1e-8


def test_adam_two_hand_computed_steps():
    params = {"w": ad.parameter(np.array([1.0]))}
    state = ad.AdamState.for_params(params)
    ad.adam_step(params, {"w": np.array([0.5])}, state, lr=0.1)
    ad.adam_step(params, {"w": np.array([-1.0])}, state, lr=0.1)
    m2 = 0.9 * (0.1 * 0.5) + 0.1 * (-1.0)
    v2 = 0.999 * (0.001 * 0.25) + 0.001 * 1.0
    mhat = m2 / (1.0 - 0.9**2)
    vhat = v2 / (1.0 - 0.999**2)
    w1 = 1.0 - 0.1 * 0.5 / (np.sqrt(0.25) + 1e-8)
    expected = w1 - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
    assert abs(params["w"].data[0] - expected) < 1e-14
    assert state.t == 2


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(19)
    shapes = {"a": (3, 2), "b": (4,)}
    params = {k: ad.parameter(rng.normal(size=s)) for k, s in shapes.items()}
    ref = {k: params[k].data.copy() for k in params}
    state = ad.AdamState.for_params(params)
    m = {k: np.zeros(s) for k, s in shapes.items()}
    v = {k: np.zeros(s) for k, s in shapes.items()}
    lr, b1, b2, eps = 3e-3, 0.9, 0.999, 1e-8
    for t in range(1, 6):
        grads = {k: rng.normal(size=s) for k, s in shapes.items()}
        ad.adam_step(params, grads, state, lr=lr)
        for k in ref:
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
            ref[k] -= lr * (m[k] / (1 - b1**t)) / (np.sqrt(v[k] / (1 - b2**t)) + eps)
    for k in ref:
        assert np.allclose(params[k].data, ref[k], rtol=0.0, atol=1e-14)


def test_adam_rejects_shape_mismatch():
    params = {"w": ad.parameter(np.zeros(3))}
    state = ad.AdamState.for_params(params)
    with pytest.raises(ad.ShapeError):
        ad.adam_step(params, {"w": np.zeros(4)}, state, lr=0.1)


def test_grad_helpers():
    params = {"a": ad.parameter(np.zeros(2)), "b": ad.parameter(np.zeros(2))}
    with ad.Tape() as tape:
        tape.backward(ad.sum(ad.mul(params["a"], params["a"])))
    grads = ad.collect_grads(params)
    assert grads["b"] is None and np.array_equal(grads["a"], np.zeros(2))
    ad.zero_grads(params)
    assert params["a"].grad is None
