import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pedfuse import gradcheck as gc
from pedfuse import tensor as tn
from pedfuse.errors import ContractError, DimensionError, NumericError


def test_matmul_shapes_and_identity(rng):
    a, b = tn.constant(rng.normal(size=(2, 3))), tn.constant(rng.normal(size=(3, 2)))
    assert tn.matmul(a, b).shape == (2, 2)
    assert np.array_equal(tn.matmul(tn.constant(np.eye(3)), b).data, b.data)


def test_matmul_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 2\)"):
        tn.matmul(tn.constant(np.ones((2, 3))), tn.constant(np.ones((4, 2))))


def test_matmul_grad_matches_transposes(rng):
    a, b = tn.parameter(rng.normal(size=(3, 3))), tn.parameter(rng.normal(size=(3, 3)))
    tn.sum(tn.matmul(a, b)).backward()
    np.testing.assert_allclose(a.grad, np.ones((3, 3)) @ b.data.T)
    np.testing.assert_allclose(b.grad, a.data.T @ np.ones((3, 3)))
    assert tn.finite_diff_check(lambda: tn.sum(tn.matmul(a, b)), [a, b]) < 1e-6


def test_sigmoid_and_tanh_at_zero():
    x = tn.parameter([0.0])
    y = tn.sigmoid(x)
    y.backward()
    assert y.data[0] == 0.5 and x.grad[0] == 0.25
    x = tn.parameter([0.0])
    y = tn.tanh(x)
    y.backward()
    assert y.data[0] == 0.0 and x.grad[0] == 1.0


def test_elementwise_dispatch_and_shape_errors():
    a, b = tn.constant([1.0, 2.0]), tn.constant([3.0, 4.0])
    assert np.array_equal(tn.elementwise("add", a, b).data, [4.0, 6.0])
    assert np.array_equal(tn.elementwise("relu", tn.constant([-1.0, 2.0])).data, [0.0, 2.0])
    assert np.array_equal((a * 2.0).data, [2.0, 4.0])
    with pytest.raises(DimensionError):
        tn.add(tn.constant(np.ones((2, 3))), tn.constant(np.ones((3, 2))))
    with pytest.raises(ContractError):
        tn.elementwise("pow", a, b)


@pytest.mark.parametrize("seed", range(5))
def test_every_op_gradient_in_double_precision(seed):
    # single ops are well conditioned enough for plain float64 differences
    for case in gc.op_cases(np.random.default_rng(seed)):
        res = gc.run_case(case, extended=False)
        assert res.worst < 1e-6, (res.name, res.worst_param, res.worst)


def test_softmax_examples():
    np.testing.assert_allclose(tn.softmax(tn.constant([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)
    assert tn.softmax(tn.constant([123.4])).data[0] == 1.0
    with pytest.raises(DimensionError):
        tn.softmax(tn.constant(np.zeros(0)))
    big = tn.softmax(tn.constant([1000.0, 1000.0])).data
    assert np.all(np.isfinite(big)) and big[0] == 0.5


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 12), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_shift_invariant(x, c):
    p = tn.softmax(tn.constant(x)).data
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p >= 0)
    np.testing.assert_allclose(tn.softmax(tn.constant(x + c)).data, p, rtol=0, atol=1e-12)


def test_concat_examples():
    a, b = tn.parameter(np.ones((1, 256))), tn.parameter(np.zeros((1, 256)))
    out = tn.concat([a, b], axis=1)
    assert out.shape == (1, 512)
    tn.sum(out).backward()
    assert np.array_equal(a.grad, np.ones((1, 256))) and np.array_equal(b.grad, np.ones((1, 256)))
    single = tn.constant([[1.0, 2.0]])
    assert np.array_equal(tn.concat([single], axis=0).data, single.data)
    with pytest.raises(DimensionError):
        tn.concat([tn.constant(np.ones((2, 3))), tn.constant(np.ones((3, 3)))], axis=1)


def test_reductions():
    x = tn.constant(np.full((4, 5), 2.5))
    np.testing.assert_array_equal(tn.reduce("mean_pool", x, axis=1).data, np.full(4, 2.5))
    w = tn.parameter(np.ones((2, 3)))
    tn.reduce("sum", w).backward()
    assert np.array_equal(w.grad, np.ones((2, 3)))
    assert tn.mean(tn.constant(np.ones((512, 14, 14))), axis=(1, 2)).shape == (512,)
    with pytest.raises(DimensionError):
        tn.sum(x, axis=2)


def test_backward_examples():
    w = tn.parameter([1.0, 2.0])
    tn.sum(w * w).backward()
    assert np.array_equal(w.grad, [2.0, 4.0])
    with pytest.raises(ContractError):
        tn.mul(w, w).backward()


def test_backward_accumulates_and_zero_grad_is_idempotent():
    w = tn.parameter([1.0, 2.0])
    assert np.array_equal(w.grad, [0.0, 0.0])
    loss = tn.sum(w * w)
    loss.backward()
    loss.backward()
    assert np.array_equal(w.grad, [4.0, 8.0])
    results = []
    for _ in range(2):
        w.zero_grad()
        tn.sum(w * w).backward()
        results.append(w.grad.copy())
    assert np.array_equal(results[0], results[1])


def test_graph_tape_is_reverse_topological():
    a = tn.parameter([1.0])
    b = tn.tanh(a)
    c = b * a
    d = tn.sum(c + b)
    nodes = tn.GraphTape.from_output(d).nodes
    pos = {n.id: i for i, n in enumerate(nodes)}
    for node in nodes:
        if node.op is not None:
            assert all(pos[p.id] < pos[node.id] for p in node.op.parents)


def test_no_grad_records_nothing():
    w = tn.parameter([1.0])
    with tn.no_grad():
        y = tn.tanh(w)
    assert y.op is None and not y.requires_grad


@pytest.mark.filterwarnings("ignore:divide by zero")
def test_finite_diff_examples():
    x = tn.parameter([3.0])
    assert tn.finite_diff_check(lambda: tn.sum(x * x), [x]) < 1e-9
    z = tn.parameter([0.0])
    assert tn.finite_diff_check(lambda: tn.sum(tn.sigmoid(z)), [z]) < 1e-9
    with pytest.raises(ContractError):
        tn.finite_diff_check(lambda: tn.sum(x), [x], epsilon=0.0)
    with pytest.raises(NumericError):
        tn.finite_diff_check(lambda: tn.sum(tn.log(x - 3.0)), [x])


def test_finite_diff_detects_a_wrong_backward(monkeypatch):
    monkeypatch.setattr(tn.Tanh, "backward", lambda self, g: (g * 0.9,))
    x = tn.parameter([0.3, -0.2])
    assert tn.finite_diff_check(lambda: tn.sum(tn.tanh(x)), [x]) > 1e-2


def test_extended_precision_restores_parameters(rng):
    w = tn.parameter(rng.normal(size=(3, 3)))
    before = w.data.copy()
    tn.finite_diff_errors(lambda: tn.sum(tn.tanh(w)), {"w": w}, extended=True)
    assert w.data.dtype == np.float64 and np.array_equal(w.data, before)
    assert tn.float_dtype() is np.float64


def test_determinism(rng):
    x = rng.normal(size=(4, 4))
    outs = [tn.softmax(tn.matmul(tn.constant(x), tn.constant(x)), axis=-1).data for _ in range(2)]
    assert np.array_equal(outs[0], outs[1])


def test_separate_graphs_in_threads():
    errors = []

    def work(seed):
        r = np.random.default_rng(seed)
        w = tn.parameter(r.normal(size=(3, 3)))
        tn.sum(tn.tanh(tn.matmul(w, w))).backward()
        expected = tn.parameter(w.data.copy())
        tn.sum(tn.tanh(tn.matmul(expected, expected))).backward()
        if not np.array_equal(w.grad, expected.grad):
            errors.append(seed)

    threads = [threading.Thread(target=work, args=(s,)) for s in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
